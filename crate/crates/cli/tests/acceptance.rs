//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (run with `--nocapture` to stream them).
//!
//! Training-dependent criteria share fixtures (the pre-trained MNIST
//! checkpoint, the degradation sweep, the fine-tuned checkpoint), built on
//! first use. MNIST must be present under `data/mnist` (see README).

mod acceptance {
    pub mod support;
}

use std::sync::OnceLock;

use acceptance::support::*;
use fltrain_core::faultmodel::ACC_BITS;
use fltrain_core::{
    architecture_of, data_layout_recover, data_layout_reorder, dequantize, evaluate_topk,
    finetune, launch_accelerator, load_checkpoint, quantize, quantize_masters, sample_flip,
    save_checkpoint, stability_run, ArchLayer, Architecture, BitFlipModel, Checkpoint,
    FaultModel, FinetuneOutcome, FloatTensor, FlipSampler, ForwardPass, ForwardSource,
    LayerWeights, MasterWeights, OverclockModel, QFormat, QTensor, RngStream, TrainConfig,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

// ---------------------------------------------------------------------
// Criterion 1: zero-fault bit-exactness against the straight-line
// reference forward, 100 random LeNet-class inputs. Tolerance: exact.
// ---------------------------------------------------------------------
#[test]
fn criterion_01_zero_fault_bit_exactness() {
    let (net, weights) = synthetic_device_setup(2024);
    let mut device = launch_accelerator(net.clone(), FaultModel::None, false, 7).unwrap();
    let mut rng = RngStream::from_seed(555);
    for sample in 0..100u64 {
        let input = random_input(&mut rng, &net.input_shape, net.input_format);
        if sample == 0 {
            device.data_to_device(&weights, &input).unwrap();
        } else {
            device.input_to_device(&input).unwrap();
        }
        let got = device.device_forward(ForwardPass::new(0, sample)).unwrap();
        let want = reference_forward(&net, &weights, &input);
        assert_eq!(got.data, want, "device diverged from reference on input {sample}");
    }
    println!("PASS criterion 1: device_forward at rate 0 bit-exact vs reference on 100 inputs");
}

// ---------------------------------------------------------------------
// Criterion 2: fault statistics. Flip count within the 4-sigma binomial
// band over 1e6 MACs at rate 1e-3; bit histograms pass chi-squared at
// significance 0.01 against the declared distributions.
// ---------------------------------------------------------------------
#[test]
fn criterion_02_fault_statistics() {
    // flip count ~ Binomial(1e6, 1e-3): 1000 +/- 4 * 31.6
    let model = BitFlipModel::uniform(1e-3).unwrap();
    let mut rng = RngStream::from_seed(20_240_001);
    let mut flips = 0u64;
    for _ in 0..1_000_000 {
        if sample_flip(&model, &mut rng).is_some() {
            flips += 1;
        }
    }
    assert!(
        (872..=1128).contains(&flips),
        "flip count {flips} outside the 4-sigma band [872, 1128]"
    );

    // uniform SEU bit positions
    let uniform = FlipSampler::from(&BitFlipModel::new(1.0, 0, ACC_BITS - 1).unwrap());
    let chi_uniform = chi_squared_stat(&uniform, 0xAB, 1_000_000);

    // geometric msb-bias profile of the overclock model
    let oc = OverclockModel::new(210.0, 1.0, 0.0, 2.0).unwrap();
    let biased = fltrain_core::overclock_to_bitflip(&oc, 260.0);
    assert!((biased.rate() - 1.0).abs() < 1e-12, "anchor rate saturates at 1");
    let chi_biased = chi_squared_stat(&biased, 0xCD, 1_000_000);

    for (name, (stat, df)) in [("uniform", chi_uniform), ("msb-biased", chi_biased)] {
        let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99);
        assert!(
            stat < crit,
            "{name} bit histogram fails chi-squared at 0.01: stat {stat:.2} >= {crit:.2} (df {df})"
        );
        println!("  chi-squared {name}: stat {stat:.2} < {crit:.2} at df {df}");
    }
    println!("PASS criterion 2: flip count {flips} in [872,1128]; both bit histograms pass at 0.01");
}

/// Chi-squared statistic of observed bit positions against the sampler's
/// declared distribution, merging low-expectation cells (< 5) upward.
fn chi_squared_stat(sampler: &FlipSampler, seed: u64, draws: usize) -> (f64, usize) {
    let (low, high) = sampler.bit_range();
    let n_bits = (high - low + 1) as usize;
    let mut observed = vec![0u64; n_bits];
    let mut rng = RngStream::from_seed(seed);
    for _ in 0..draws {
        let bit = sampler.sample_flip(&mut rng).expect("rate 1 always flips");
        observed[(bit - low) as usize] += 1;
    }
    let expected: Vec<f64> = sampler.bit_distribution().iter().map(|p| p * draws as f64).collect();

    // merge cells until each has expected count >= 5
    let mut merged: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for i in 0..n_bits {
        acc_o += observed[i] as f64;
        acc_e += expected[i];
        if acc_e >= 5.0 {
            merged.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        }
    }
    let stat: f64 = merged.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    (stat, merged.len() - 1)
}

// ---------------------------------------------------------------------
// Criterion 3: analytic gradients match central finite differences
// (step 1e-3) within relative error 1e-4 on a 3-layer toy network with
// <= 500 parameters.
// ---------------------------------------------------------------------
#[test]
fn criterion_03_gradient_check() {
    use fltrain_core::train::{backward, float_forward, loss_and_grad};

    let arch = Architecture {
        layers: vec![
            ArchLayer::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 0 },
            ArchLayer::Relu,
            ArchLayer::FullyConnected { in_features: 2 * 4 * 4, out_features: 3 },
        ],
        input_shape: [1, 6, 6],
        num_classes: 3,
    };
    let param_count = 2 * 9 + 2 + 32 * 3 + 3;
    assert!(param_count <= 500);

    let mut weights = MasterWeights::init(&arch, 33);
    for lt in weights.layers.iter_mut().flatten() {
        for (i, b) in lt.bias.data.iter_mut().enumerate() {
            *b = 0.02 * (i as f64 + 1.0);
        }
    }
    let mut rng = RngStream::from_seed(44);
    let x = FloatTensor::new(vec![1, 6, 6], (0..36).map(|_| rng.next_f64()).collect()).unwrap();
    let label = 2usize;

    let acts = float_forward(&arch, &weights, &x).unwrap();
    let (_, dlogits) = loss_and_grad(acts.logits(), label).unwrap();
    let grads = backward(&arch, &weights, &acts, &dlogits).unwrap();
    let loss_of = |w: &MasterWeights| {
        let acts = float_forward(&arch, w, &x).unwrap();
        loss_and_grad(acts.logits(), label).unwrap().0
    };

    let step = 1e-3;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for li in 0..arch.layers.len() {
        let Some(g) = grads.layers[li].as_ref() else { continue };
        // weights then biases
        for is_bias in [false, true] {
            let len = if is_bias { g.bias.data.len() } else { g.weights.data.len() };
            for i in 0..len {
                let mut wp = weights.clone();
                let mut wm = weights.clone();
                {
                    let tp = wp.layers[li].as_mut().unwrap();
                    let tm = wm.layers[li].as_mut().unwrap();
                    if is_bias {
                        tp.bias.data[i] += step;
                        tm.bias.data[i] -= step;
                    } else {
                        tp.weights.data[i] += step;
                        tm.weights.data[i] -= step;
                    }
                }
                let fd = (loss_of(&wp) - loss_of(&wm)) / (2.0 * step);
                let an = if is_bias { g.bias.data[i] } else { g.weights.data[i] };
                let denom = fd.abs().max(an.abs()).max(1e-8);
                let rel = (fd - an).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "layer {li} bias={is_bias} index {i}: rel error {rel:.2e} (fd {fd}, analytic {an})"
                );
                checked += 1;
            }
        }
    }
    println!(
        "PASS criterion 3: {checked} gradient entries within 1e-4 of finite differences \
         (worst {worst:.2e})"
    );
}

// ---------------------------------------------------------------------
// Criterion 4: round-trip laws, all exact: quantize/dequantize grid trip
// and idempotence; layout recover . reorder = identity for the stated
// C x V grid; checkpoint save/load bit-exact.
// ---------------------------------------------------------------------
#[test]
fn criterion_04_round_trip_laws() {
    // grid round trip + idempotence across every 8-bit format
    for frac in 0..8u32 {
        let fmt = QFormat::new(8, frac).unwrap();
        for raw in fmt.raw_min()..=fmt.raw_max() {
            let x = fmt.dequantize_value(raw);
            assert_eq!(fmt.quantize_value(x), raw, "grid trip failed at {raw} {fmt}");
        }
        let all: Vec<i8> = (fmt.raw_min()..=fmt.raw_max()).map(|v| v as i8).collect();
        let q = QTensor::new(vec![all.len()], all, fmt).unwrap();
        assert_eq!(quantize(&dequantize(&q), fmt), q, "idempotence failed for {fmt}");
    }

    // layout laws on the stated grid
    let fmt = QFormat::new(8, 4).unwrap();
    let mut rng = RngStream::from_seed(99);
    for &c in &[1usize, 3, 8, 16] {
        for &v in &[1usize, 4, 8] {
            let t = random_input(&mut rng, &[2, c, 5, 4], fmt);
            let r = data_layout_reorder(&t, v).unwrap();
            assert_eq!(data_layout_recover(&r, c).unwrap(), t, "layout trip failed C={c} V={v}");
        }
    }

    // checkpoint round trip on a synthetic model
    let (net, _) = synthetic_device_setup(11);
    let arch = architecture_of(&net);
    let ckpt = Checkpoint {
        network: net,
        masters: MasterWeights::init(&arch, 11),
        metadata: vec![
            ("kind".into(), "acceptance".into()),
            ("note".into(), "ordering, matters".into()),
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.flck");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt, "checkpoint round trip not bit-exact");

    println!("PASS criterion 4: quantize/dequantize, layout, and checkpoint round trips exact");
}

// ---------------------------------------------------------------------
// Criterion 5: pretraining reaches >= 98% float top-1 on MNIST and the
// calibrated 8-bit model at rate 0 is within 1.0% of the float accuracy.
// ---------------------------------------------------------------------
#[test]
fn criterion_05_baseline_training() {
    let (_, test) = mnist();
    let ckpt = pretrained();
    let arch = architecture_of(&ckpt.network);
    let float_acc = evaluate_topk(
        &ForwardSource::Float { arch: &arch, weights: &ckpt.masters },
        test,
        1,
    )
    .unwrap();
    let clean = launch_accelerator(ckpt.network.clone(), FaultModel::None, false, 1).unwrap();
    let weights = quantize_masters(&ckpt.network, &ckpt.masters).unwrap();
    let q_acc = evaluate_topk(
        &ForwardSource::Device { template: &clean, weights: &weights, fault_epoch: 0 },
        test,
        1,
    )
    .unwrap();
    assert!(float_acc >= 0.98, "float top-1 {float_acc:.4} below 0.98");
    assert!(
        (float_acc - q_acc).abs() <= 0.010 + 1e-12,
        "quantized accuracy {q_acc:.4} not within 1% of float {float_acc:.4}"
    );
    println!(
        "PASS criterion 5: float top-1 {float_acc:.4} >= 0.98, quantized {q_acc:.4} within 1%"
    );
}

// ---------------------------------------------------------------------
// Shared experiment fixtures for criteria 6-9.
// ---------------------------------------------------------------------

struct SweepData {
    /// Clean quantized accuracy at rate 0 on the evaluation subset.
    baseline: f64,
    /// (rate, per-seed accuracies, mean, sample std) per swept rate.
    points: Vec<(f64, Vec<f64>, f64, f64)>,
}

const SWEEP_RATES: [f64; 5] = [1e-5, 1e-4, 3e-4, 1e-3, 3e-3];

/// Mean unretrained device accuracy per seed for one fault model.
fn accuracy_over_seeds(
    ckpt: &Checkpoint,
    weights: &[LayerWeights],
    fault: &FaultModel,
    split: &fltrain_core::DatasetSplit,
    seeds: &[u64],
) -> Vec<f64> {
    seeds
        .iter()
        .map(|&seed| {
            let device =
                launch_accelerator(ckpt.network.clone(), fault.clone(), false, seed).unwrap();
            evaluate_topk(
                &ForwardSource::Device { template: &device, weights, fault_epoch: 0 },
                split,
                1,
            )
            .unwrap()
        })
        .collect()
}

fn sweep_fixture() -> &'static SweepData {
    static SWEEP: OnceLock<SweepData> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let (_, test) = mnist();
        let split = test.prefix(EVAL_SUBSET);
        let ckpt = pretrained();
        let weights = quantize_masters(&ckpt.network, &ckpt.masters).unwrap();
        let clean = launch_accelerator(ckpt.network.clone(), FaultModel::None, false, 1).unwrap();
        let baseline = evaluate_topk(
            &ForwardSource::Device { template: &clean, weights: &weights, fault_epoch: 0 },
            &split,
            1,
        )
        .unwrap();
        let points = SWEEP_RATES
            .iter()
            .map(|&rate| {
                let fault = FaultModel::Seu(BitFlipModel::uniform(rate).unwrap());
                let accs = accuracy_over_seeds(ckpt, &weights, &fault, &split, &POINT_SEEDS);
                let (mean, std) = mean_and_sample_std(&accs);
                eprintln!("  sweep rate {rate}: mean {mean:.4} std {std:.4}");
                (rate, accs, mean, std)
            })
            .collect();
        SweepData { baseline, points }
    })
}

/// Fine-tuning configuration for the recovery experiments.
fn recovery_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-5,
        momentum: 0.9,
        batch_size: 32,
        max_epochs: 3,
        accuracy_threshold: 0.99,
        eval_interval: 800,
        eval_subset: EVAL_SUBSET,
        seed,
    }
}

/// Fine-tuned model at the criterion-7 anchor: the largest swept rate
/// whose unretrained loss is >= 3% absolute.
fn seu_recovery_fixture() -> &'static (f64, FinetuneOutcome) {
    static FT: OnceLock<(f64, FinetuneOutcome)> = OnceLock::new();
    FT.get_or_init(|| {
        let sweep = sweep_fixture();
        let anchor = sweep
            .points
            .iter()
            .filter(|(_, _, mean, _)| sweep.baseline - mean >= 0.03)
            .map(|&(rate, ..)| rate)
            .fold(f64::NAN, f64::max);
        assert!(anchor.is_finite(), "no swept rate lost >= 3% accuracy");
        eprintln!("  recovery anchor rate: {anchor}");
        let (train, test) = mnist();
        let ckpt = pretrained();
        let fault = FaultModel::Seu(BitFlipModel::uniform(anchor).unwrap());
        let device = launch_accelerator(ckpt.network.clone(), fault, true, 77).unwrap();
        let out = finetune(ckpt, device, train, test, &recovery_config(77)).unwrap();
        (anchor, out)
    })
}

/// The overclock model anchored per the studied device: safe at 210 MHz,
/// 1e-7 per MAC at 211, 10^-4.5 at 260.
fn overclock_model() -> OverclockModel {
    OverclockModel::anchored(210.0, 1e-7, 260.0, 10f64.powf(-4.5), 2.0).unwrap()
}

/// Fine-tuned model on the 260 MHz overclocked device.
fn overclock_recovery_fixture() -> &'static FinetuneOutcome {
    static FT: OnceLock<FinetuneOutcome> = OnceLock::new();
    FT.get_or_init(|| {
        let (train, test) = mnist();
        let ckpt = pretrained();
        let fault = FaultModel::Overclock { model: overclock_model(), freq_mhz: 260.0 };
        let device = launch_accelerator(ckpt.network.clone(), fault, true, 78).unwrap();
        let mut config = recovery_config(78);
        config.learning_rate = 1e-4;
        config.max_epochs = 2;
        finetune(ckpt, device, train, test, &config).unwrap()
    })
}

// ---------------------------------------------------------------------
// Criterion 6: degradation sweep. Unretrained accuracy nonincreasing in
// rate (each point the mean of 5 seeds, monotone within 2 pooled stds),
// and the drop at 3e-3 is >= 2% absolute versus rate 0.
// ---------------------------------------------------------------------
#[test]
fn criterion_06_degradation_sweep() {
    let sweep = sweep_fixture();
    for pair in sweep.points.windows(2) {
        let (r1, _, m1, s1) = &pair[0];
        let (r2, _, m2, s2) = &pair[1];
        let pooled = ((s1 * s1 + s2 * s2) / 2.0).sqrt();
        assert!(
            *m2 <= m1 + 2.0 * pooled,
            "accuracy increased from rate {r1} ({m1:.4}) to {r2} ({m2:.4}) beyond noise ({pooled:.4})"
        );
    }
    let last = sweep.points.last().unwrap();
    let drop = sweep.baseline - last.2;
    assert!(
        drop >= 0.02,
        "drop at rate {} is {drop:.4}, below the 2% threshold",
        last.0
    );
    let summary: Vec<String> =
        sweep.points.iter().map(|(r, _, m, _)| format!("{r}:{m:.3}")).collect();
    println!(
        "PASS criterion 6: baseline {:.4}; accuracy nonincreasing over rates [{}]; drop at 3e-3 = {:.4}",
        sweep.baseline,
        summary.join(", "),
        drop
    );
}

// ---------------------------------------------------------------------
// Criterion 7: at the anchor rate, fine-tuning recovers >= 50% of the
// degradation (mean over 5 seeds), and the fine-tuned model at rate 0
// loses < 1% versus the pre-trained baseline.
// ---------------------------------------------------------------------
#[test]
fn criterion_07_retraining_recovery() {
    let (_, test) = mnist();
    let split = test.prefix(EVAL_SUBSET);
    let sweep = sweep_fixture();
    let (anchor, outcome) = seu_recovery_fixture();
    let unretrained =
        sweep.points.iter().find(|(r, ..)| r == anchor).map(|(_, _, m, _)| *m).unwrap();

    let fault = FaultModel::Seu(BitFlipModel::uniform(*anchor).unwrap());
    let weights =
        quantize_masters(&outcome.checkpoint.network, &outcome.checkpoint.masters).unwrap();
    let accs = accuracy_over_seeds(&outcome.checkpoint, &weights, &fault, &split, &POINT_SEEDS);
    let (retrained, _) = mean_and_sample_std(&accs);

    let degradation = sweep.baseline - unretrained;
    let recovered = retrained - unretrained;
    assert!(
        recovered >= 0.5 * degradation,
        "recovered {recovered:.4} of {degradation:.4} degradation at rate {anchor} \
         (unretrained {unretrained:.4}, retrained {retrained:.4})"
    );

    // clean accuracy of the fine-tuned model: deterministic rate-0 evals
    let clean =
        launch_accelerator(outcome.checkpoint.network.clone(), FaultModel::None, false, 1)
            .unwrap();
    let ft_clean = evaluate_topk(
        &ForwardSource::Device { template: &clean, weights: &weights, fault_epoch: 0 },
        &split,
        1,
    )
    .unwrap();
    assert!(
        sweep.baseline - ft_clean < 0.01,
        "fine-tuned model lost {:.4} at rate 0 (baseline {:.4}, fine-tuned {ft_clean:.4})",
        sweep.baseline - ft_clean,
        sweep.baseline
    );
    println!(
        "PASS criterion 7: rate {anchor}: unretrained {unretrained:.4} -> retrained {retrained:.4} \
         (recovered {:.0}% of {degradation:.4}); rate-0 loss {:.4} < 1%",
        100.0 * recovered / degradation,
        sweep.baseline - ft_clean
    );
}

// ---------------------------------------------------------------------
// Criterion 8: overclocking sweep 210 -> 270 MHz with the anchored model
// is monotone nonincreasing, and retraining at 260 MHz strictly improves
// mean accuracy over the unretrained model.
// ---------------------------------------------------------------------
#[test]
fn criterion_08_overclocking_sweep() {
    let (_, test) = mnist();
    let split = test.prefix(EVAL_SUBSET);
    let ckpt = pretrained();
    let weights = quantize_masters(&ckpt.network, &ckpt.masters).unwrap();
    let model = overclock_model();

    let freqs = [210.0, 220.0, 230.0, 240.0, 250.0, 260.0, 270.0];
    let mut stats = Vec::new();
    for &f in &freqs {
        let fault = FaultModel::Overclock { model, freq_mhz: f };
        let accs = accuracy_over_seeds(ckpt, &weights, &fault, &split, &POINT_SEEDS);
        let (mean, std) = mean_and_sample_std(&accs);
        eprintln!("  overclock {f} MHz: mean {mean:.4} std {std:.4}");
        stats.push((f, mean, std));
    }
    // same noise allowance as the rate sweep
    for pair in stats.windows(2) {
        let (f1, m1, s1) = pair[0];
        let (f2, m2, s2) = pair[1];
        let pooled = ((s1 * s1 + s2 * s2) / 2.0).sqrt();
        assert!(
            m2 <= m1 + 2.0 * pooled,
            "accuracy increased from {f1} MHz ({m1:.4}) to {f2} MHz ({m2:.4}) beyond noise"
        );
    }

    let unretrained_260 = stats.iter().find(|(f, ..)| *f == 260.0).unwrap().1;
    let outcome = overclock_recovery_fixture();
    let ft_weights =
        quantize_masters(&outcome.checkpoint.network, &outcome.checkpoint.masters).unwrap();
    let fault = FaultModel::Overclock { model, freq_mhz: 260.0 };
    let accs =
        accuracy_over_seeds(&outcome.checkpoint, &ft_weights, &fault, &split, &POINT_SEEDS);
    let (retrained_260, _) = mean_and_sample_std(&accs);
    assert!(
        retrained_260 > unretrained_260,
        "retraining at 260 MHz did not improve: {retrained_260:.4} vs {unretrained_260:.4}"
    );
    println!(
        "PASS criterion 8: monotone over 210-270 MHz; at 260 MHz retrained {retrained_260:.4} > \
         unretrained {unretrained_260:.4}"
    );
}

// ---------------------------------------------------------------------
// Criterion 9: stability. 20 repeated evaluations of a fine-tuned
// checkpoint at fixed rate under distinct seeds: std < 1% absolute.
// ---------------------------------------------------------------------
#[test]
fn criterion_09_stability() {
    let (_, test) = mnist();
    let split = test.prefix(EVAL_SUBSET);
    let outcome = overclock_recovery_fixture();
    let weights =
        quantize_masters(&outcome.checkpoint.network, &outcome.checkpoint.masters).unwrap();
    let fault = FaultModel::Overclock { model: overclock_model(), freq_mhz: 260.0 };
    let template =
        launch_accelerator(outcome.checkpoint.network.clone(), fault, false, 0).unwrap();
    let seeds: Vec<u64> = (0..20).map(|i| 9000 + i).collect();
    let report = stability_run(&template, &weights, &split, 1, &seeds).unwrap();
    assert_eq!(report.accuracies.len(), 20);
    assert!(
        report.std < 0.01,
        "accuracy std {:.4} across 20 seeds exceeds 1% (mean {:.4}, min {:.4}, max {:.4})",
        report.std,
        report.mean,
        report.min,
        report.max
    );
    println!(
        "PASS criterion 9: 20 evaluations, mean {:.4}, std {:.4} < 1% (min {:.4}, max {:.4})",
        report.mean, report.std, report.min, report.max
    );
}

// ---------------------------------------------------------------------
// Criterion 10: reproducibility. Commands re-run with identical config
// and seed produce byte-identical CSV output, independent of worker
// count. Exact.
// ---------------------------------------------------------------------
#[test]
fn criterion_10_reproducibility() {
    use std::process::Command;

    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_mnist_like(320, 5);
    let test_data = synthetic_mnist_like(120, 6);
    write_idx_pair(&data, &dir.path().join("tr-img"), &dir.path().join("tr-lbl"));
    write_idx_pair(&test_data, &dir.path().join("te-img"), &dir.path().join("te-lbl"));
    let config_path = dir.path().join("exp.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
seed = 11
out_dir = "{out}"

[dataset]
kind = "mnist"
train_images = "{tr_img}"
train_labels = "{tr_lbl}"
test_images = "{te_img}"
test_labels = "{te_lbl}"

[network]
arch = "lenet"

[fault]
kind = "seu"
rate = 1e-3

[train]
learning_rate = 0.005
max_epochs = 1
eval_interval = 5
eval_subset = 80
"#,
            out = dir.path().join("out").display(),
            tr_img = dir.path().join("tr-img").display(),
            tr_lbl = dir.path().join("tr-lbl").display(),
            te_img = dir.path().join("te-img").display(),
            te_lbl = dir.path().join("te-lbl").display(),
        ),
    )
    .unwrap();

    let exe = env!("CARGO_BIN_EXE_fltrain");
    let run = |args: &[&str], out_tag: &str, workers: &str| -> Vec<(String, Vec<u8>)> {
        let out_dir = dir.path().join(out_tag);
        let status = Command::new(exe)
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out_dir)
            .arg("--workers")
            .arg(workers)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            status.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };

    // pretrain twice: checkpoint and log must match byte for byte
    let p1 = run(&["pretrain"], "p1", "1");
    let p2 = run(&["pretrain"], "p2", "2");
    assert_eq!(p1, p2, "pretrain artifacts differ across runs/worker counts");
    let ckpt = dir.path().join("p1/checkpoint.flck");
    let ckpt = ckpt.to_str().unwrap();

    // sweep twice with different worker counts
    let s1 = run(&["sweep", "--from", ckpt, "--rates", "1e-4,1e-3", "--eval-seeds", "2"], "s1", "1");
    let s2 = run(&["sweep", "--from", ckpt, "--rates", "1e-4,1e-3", "--eval-seeds", "2"], "s2", "2");
    assert_eq!(s1, s2, "sweep artifacts differ across worker counts");

    // eval twice with different worker counts
    let e1 = run(&["eval", "--from", ckpt, "--repeats", "3"], "e1", "2");
    let e2 = run(&["eval", "--from", ckpt, "--repeats", "3"], "e2", "1");
    assert_eq!(e1, e2, "eval artifacts differ across worker counts");

    // finetune twice (covers the training log path end to end)
    let f1 = run(&["finetune", "--from", ckpt], "f1", "2");
    let f2 = run(&["finetune", "--from", ckpt], "f2", "1");
    assert_eq!(f1, f2, "finetune artifacts differ across worker counts");

    println!(
        "PASS criterion 10: pretrain/sweep/eval/finetune artifacts byte-identical across reruns \
         and worker counts"
    );
}
