//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS line with the measured numbers. Everything is seeded; tolerances
//! are pinned in the assertions.

use std::time::Instant;

use ndarray::{Array, Array2, Array3, Array4};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poselift::data::{make_batch, make_windows, synth_generate, PoseWindow, SynthSpec};
use poselift::evaluation::{evaluate, mpjpe, p_mpjpe, pck, procrustes_transform, EvalOptions, Protocol};
use poselift::layers::{attention_matrix, AgcnBlock, Mode};
use poselift::network::{AblationVariant, LiftingModel, ModelConfig};
use poselift::skeleton::{AdjacencyStack, SkeletonGraph};
use poselift::training::{
    fit, grad_check, loss_local, validation_mpjpe, GradCheckConfig, TrainConfig,
};

/// 1. Gradient fidelity: every parameter tensor of the full model and of all
///    three structural ablations matches central finite differences within
///    relative error 1e-4 (ε = 1e-5, f64), in under two minutes.
#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let mut lines = Vec::new();
    for variant in [
        AblationVariant::Full,
        AblationVariant::NoAdaptive,
        AblationVariant::NoStrided,
        AblationVariant::FcHead,
    ] {
        let cfg = GradCheckConfig {
            variant,
            ..GradCheckConfig::default()
        };
        assert_eq!((cfg.joints, cfg.frames, cfg.channels, cfg.batch), (5, 9, 8, 2));
        assert_eq!(cfg.tolerance, 1e-4);
        assert_eq!(cfg.epsilon, 1e-5);
        let report = grad_check(&cfg).expect("gradient check runs");
        assert!(
            report.passed(),
            "variant {variant} failed:\n{}",
            report.render()
        );
        lines.push(format!(
            "{variant}: {} tensors, max rel err {:.2e}",
            report.entries.len(),
            report.max_rel_error()
        ));
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "gradient checks took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 1 (gradient fidelity): PASS — {} in {elapsed:.1}s",
        lines.join("; ")
    );
}

/// Self-contained per-node summation oracle: for every output joint, sum
/// over all joints the mixing weight (static + learned + softmaxed
/// similarity) times the projected input feature. Everything is explicit
/// loops, independent of the matrix-form implementation.
fn oracle_graph_conv(
    stack: &AdjacencyStack,
    conv: &poselift::layers::GraphConv,
    x: &Array4<f64>,
) -> Array4<f64> {
    let (b, c_in, t, n) = x.dim();
    let c_out = conv.c_out();
    let mut out = Array4::zeros((b, c_out, t, n));
    for k in 0..conv.subset_count() {
        // Attention, recomputed from scratch.
        let attn = conv.adaptive.as_ref().map(|p| {
            let e = p.theta[k].ncols();
            let mut attn = Array3::zeros((b, n, n));
            for bi in 0..b {
                let mut logits = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for ei in 0..e {
                            for ti in 0..t {
                                let mut th = 0.0;
                                let mut ph = 0.0;
                                for ci in 0..c_in {
                                    th += x[[bi, ci, ti, i]] * p.theta[k][[ci, ei]];
                                    ph += x[[bi, ci, ti, j]] * p.phi[k][[ci, ei]];
                                }
                                acc += th * ph;
                            }
                        }
                        logits[i][j] = acc;
                    }
                }
                for i in 0..n {
                    let sum: f64 = logits[i].iter().map(|&z| z.exp()).sum();
                    for j in 0..n {
                        attn[[bi, i, j]] = logits[i][j].exp() / sum;
                    }
                }
            }
            attn
        });
        for bi in 0..b {
            for ti in 0..t {
                for i in 0..n {
                    for j in 0..n {
                        let mut mix = stack.normalized()[k][[i, j]];
                        if let Some(p) = &conv.adaptive {
                            mix += p.adj[k][[i, j]];
                        }
                        if let Some(a) = &attn {
                            mix += a[[bi, i, j]];
                        }
                        for co in 0..c_out {
                            let mut projected = 0.0;
                            for ci in 0..c_in {
                                projected += x[[bi, ci, ti, j]] * conv.weight[k][[ci, co]];
                            }
                            out[[bi, co, ti, i]] += mix * projected;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2. Oracle equivalence: the matrix-form adaptive graph convolution equals
///    the naive per-node summation within 1e-10 on 100 random instances.
#[test]
fn criterion_2_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = rng.random_range(2..=6);
        let t = rng.random_range(1..=5);
        let c_in = rng.random_range(1..=3);
        let c_out = rng.random_range(1..=4);
        let b = rng.random_range(1..=2);
        let raw: Vec<Array2<f64>> = (0..3)
            .map(|_| Array::from_shape_fn((n, n), |_| f64::from(rng.random_range(0..2u8))))
            .collect();
        let stack = AdjacencyStack::from_raw(raw, 0.001).unwrap().normalize();
        let e = (c_out / 4).max(1);
        let conv = poselift::layers::GraphConv {
            weight: (0..3)
                .map(|_| Array::from_shape_fn((c_in, c_out), |_| rng.random_range(-0.8..0.8)))
                .collect(),
            adaptive: Some(poselift::layers::AdaptiveParams {
                adj: (0..3)
                    .map(|_| Array::from_shape_fn((n, n), |_| rng.random_range(-0.3..0.3)))
                    .collect(),
                theta: (0..3)
                    .map(|_| Array::from_shape_fn((c_in, e), |_| rng.random_range(-0.6..0.6)))
                    .collect(),
                phi: (0..3)
                    .map(|_| Array::from_shape_fn((c_in, e), |_| rng.random_range(-0.6..0.6)))
                    .collect(),
            }),
        };
        let x = Array::from_shape_fn((b, c_in, t, n), |_| rng.random_range(-1.0..1.0));
        let fast = conv.forward(&stack, &x).unwrap().0;
        let slow = oracle_graph_conv(&stack, &conv, &x);
        let diff = fast
            .iter()
            .zip(slow.iter())
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        assert!(diff < 1e-10, "trial {trial} (n={n}, t={t}): diff {diff:.3e}");
        worst = worst.max(diff);
    }
    println!("ACCEPTANCE 2 (oracle equivalence): PASS — 100 instances, worst diff {worst:.2e}");
}

/// 3. Shape schedule: T=243/S=3 builds 5 strided modules shrinking through
///    exactly [243, 81, 27, 9, 3, 1]; T=27 gives [27, 9, 3, 1]. Verified on
///    the real forward pass, not just the config arithmetic.
#[test]
fn criterion_3_shape_schedule() {
    let graph = SkeletonGraph::h36m17();
    let cfg243 = ModelConfig {
        frames: 243,
        channels: 8,
        recon_depth: 1,
        ..ModelConfig::default()
    };
    let model = LiftingModel::build(cfg243.clone(), graph.clone(), 0).unwrap();
    assert_eq!(model.strided_modules().len(), 5);
    assert_eq!(
        cfg243.temporal_schedule().unwrap(),
        vec![243, 81, 27, 9, 3, 1]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array::from_shape_fn((1, 2, 243, 17), |_| rng.random_range(-1.0..1.0));
    let out = model.forward(&x, Mode::Eval, None).unwrap();
    assert_eq!(out.cache.observed_schedule(), vec![243, 81, 27, 9, 3, 1]);
    assert_eq!(out.recon_seq.dim(), (1, 3, 243, 17));

    let cfg27 = ModelConfig {
        frames: 27,
        channels: 8,
        recon_depth: 1,
        ..ModelConfig::default()
    };
    let model27 = LiftingModel::build(cfg27.clone(), graph, 0).unwrap();
    assert_eq!(model27.strided_modules().len(), 3);
    assert_eq!(cfg27.temporal_schedule().unwrap(), vec![27, 9, 3, 1]);
    let x27 = Array::from_shape_fn((1, 2, 27, 17), |_| rng.random_range(-1.0..1.0));
    let out27 = model27.forward(&x27, Mode::Eval, None).unwrap();
    assert_eq!(out27.cache.observed_schedule(), vec![27, 9, 3, 1]);
    println!(
        "ACCEPTANCE 3 (shape schedule): PASS — observed 243 81 27 9 3 1 and 27 9 3 1"
    );
}

/// 4. Initialization law: with the embeddings and the learned adjacency at
///    their zero initialization, every attention row is uniform 1/N to 1e-12.
#[test]
fn criterion_4_initialization_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for (c_in, c_out, n) in [(2usize, 8usize, 17usize), (8, 96, 15), (3, 4, 5)] {
        let block = AgcnBlock::new("b", c_in, c_out, n, 3, 1, 9, 0.0, true, &mut rng).unwrap();
        let params = block.graph.adaptive.as_ref().expect("adaptive terms exist");
        let x = Array::from_shape_fn((2, c_in, 4, n), |_| rng.random_range(-5.0..5.0));
        for k in 0..3 {
            assert_eq!(params.adj[k].iter().map(|v| v.abs()).sum::<f64>(), 0.0);
            assert_eq!(params.theta[k].iter().map(|v| v.abs()).sum::<f64>(), 0.0);
            let attn = attention_matrix(&x, &params.theta[k], &params.phi[k]);
            for &v in attn.iter() {
                worst = worst.max((v - 1.0 / n as f64).abs());
            }
        }
    }
    assert!(worst < 1e-12, "attention deviates from uniform by {worst:.3e}");
    println!("ACCEPTANCE 4 (initialization law): PASS — max deviation from 1/N: {worst:.2e}");
}

/// 5. Head linearity: predictions at any λ are exactly the λ-interpolation
///    of the shared-only (λ=0) and unshared-only (λ=1) predictions.
#[test]
fn criterion_5_head_linearity() {
    let graph = SkeletonGraph::h36m17();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let features = Array::from_shape_fn((3, 8, 1, 17), |_| rng.random_range(-2.0..2.0));
    let build = |lambda: f64| {
        let cfg = ModelConfig {
            frames: 9,
            channels: 8,
            recon_depth: 0,
            lambda_mix: lambda,
            ..ModelConfig::default()
        };
        LiftingModel::build(cfg, graph.clone(), 77).unwrap()
    };
    let shared_only = build(0.0).head_forward(&features).unwrap();
    let unshared_only = build(1.0).head_forward(&features).unwrap();
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.1, 0.25, 0.5, 0.8, 1.0] {
        let mixed = build(lambda).head_forward(&features).unwrap();
        for ((m, s), u) in mixed.iter().zip(shared_only.iter()).zip(unshared_only.iter()) {
            worst = worst.max((m - (lambda * u + (1.0 - lambda) * s)).abs());
        }
    }
    assert!(worst < 1e-12, "interpolation breaks by {worst:.3e}");
    // Endpoint semantics: at λ=0 the unshared parameters are inert, at λ=1
    // the shared ones are.
    let mut scrambled = build(0.0);
    if let poselift::network::Head::Individual(h) = &mut scrambled.head {
        for w in &mut h.unshared_w {
            w.fill(123.0);
        }
    }
    assert_eq!(scrambled.head_forward(&features).unwrap(), shared_only);
    let mut scrambled = build(1.0);
    if let poselift::network::Head::Individual(h) = &mut scrambled.head {
        h.shared_w.fill(-321.0);
        h.shared_b.fill(7.0);
    }
    assert_eq!(scrambled.head_forward(&features).unwrap(), unshared_only);
    println!("ACCEPTANCE 5 (head linearity): PASS — max interpolation error {worst:.2e}");
}

fn rotation_from(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (a, b, c) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::PI),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let (s1, c1) = a.sin_cos();
    let (s2, c2) = b.sin_cos();
    let (s3, c3) = c.sin_cos();
    // ZYZ composition; always det +1.
    [
        [c1 * c2 * c3 - s1 * s3, -c1 * c2 * s3 - s1 * c3, c1 * s2],
        [s1 * c2 * c3 + c1 * s3, -s1 * c2 * s3 + c1 * c3, s1 * s2],
        [-s2 * c3, s2 * s3, c2],
    ]
}

/// 6. Metric correctness over 1000 randomized trials: similarity transforms
///    are exactly removable by the aligned protocol, root alignment cancels
///    translations, PCK is monotone in its threshold, and the recovered
///    rotation never reflects.
#[test]
fn criterion_6_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_residual = 0.0f64;
    let mut worst_det = 0.0f64;
    for trial in 0..1000 {
        let n = rng.random_range(4..=20);
        let gt: Array2<f64> = Array::from_shape_fn((n, 3), |_| rng.random_range(-100.0..100.0));
        // (a) similarity-transformed copies align to zero error
        let rot = rotation_from(&mut rng);
        let scale = rng.random_range(0.2..5.0);
        let shift = [
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
        ];
        let mut pred = Array2::zeros((n, 3));
        for i in 0..n {
            for r in 0..3 {
                let mut acc = shift[r];
                for c in 0..3 {
                    acc += scale * rot[r][c] * gt[[i, c]];
                }
                pred[[i, r]] = acc;
            }
        }
        let residual = p_mpjpe(pred.view(), gt.view()).unwrap();
        assert!(residual < 1e-8, "trial {trial}: residual {residual:.3e}");
        worst_residual = worst_residual.max(residual);

        // (b) mpjpe ignores global translation of either argument
        let noisy: Array2<f64> = &gt + &Array::from_shape_fn((n, 3), |_| rng.random_range(-5.0..5.0));
        let base = mpjpe(noisy.view(), gt.view(), 0).unwrap();
        let mut shifted = noisy.clone();
        let t = [
            rng.random_range(-1000.0..1000.0),
            rng.random_range(-1000.0..1000.0),
            rng.random_range(-1000.0..1000.0),
        ];
        for i in 0..n {
            for d in 0..3 {
                shifted[[i, d]] += t[d];
            }
        }
        let moved = mpjpe(shifted.view(), gt.view(), 0).unwrap();
        assert!(
            (base - moved).abs() < 1e-9,
            "trial {trial}: translation changed mpjpe by {:.3e}",
            (base - moved).abs()
        );

        // (c) pck monotone in the threshold
        let preds = vec![noisy.clone()];
        let gts = vec![gt.clone()];
        let t1 = rng.random_range(0.5..50.0);
        let t2 = t1 + rng.random_range(0.0..100.0);
        let p1v = pck(&preds, &gts, 0, t1).unwrap();
        let p2v = pck(&preds, &gts, 0, t2).unwrap();
        assert!(p2v >= p1v, "trial {trial}: pck not monotone");

        // (d) the recovered rotation is proper, even for mirrored inputs
        let mut mirrored = noisy.clone();
        for i in 0..n {
            mirrored[[i, 2]] = -mirrored[[i, 2]];
        }
        for candidate in [&noisy, &mirrored] {
            if let Ok(transform) = procrustes_transform(candidate.view(), gt.view()) {
                let det = transform.rotation_determinant();
                worst_det = worst_det.max((det - 1.0).abs());
                assert!(
                    (det - 1.0).abs() < 1e-9,
                    "trial {trial}: det(R) = {det}"
                );
            }
        }
    }
    println!(
        "ACCEPTANCE 6 (metric correctness): PASS — 1000 trials, worst aligned residual {worst_residual:.2e}, worst |det-1| {worst_det:.2e}"
    );
}

/// 7. Trainability: on a 64-window synthetic set (T=27, N=17, C=32, fixed
///    seed), two-stage training drives the train-set center loss below 1% of
///    its initial value within 2000 steps, and validation MPJPE ends at
///    least 50% below the untrained baseline. Under ten minutes on one core.
#[test]
fn criterion_7_trainability() {
    let started = Instant::now();
    let spec = SynthSpec {
        sequences: 2,
        frames: 40,
        skeleton: "h36m17".into(),
        seed: 2024,
        noise: 0.0,
    };
    let files = synth_generate(&spec).unwrap();
    let mut windows: Vec<PoseWindow> = Vec::new();
    for f in &files {
        windows.extend(make_windows(f, 27).unwrap());
    }
    assert_eq!(windows.len(), 80);
    let (train_set, val_set) = windows.split_at(64);
    let model_cfg = ModelConfig {
        joints: 17,
        frames: 27,
        channels: 32,
        recon_depth: 1,
        temporal_kernel: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = LiftingModel::build(model_cfg, SkeletonGraph::h36m17(), 7).unwrap();

    let refs: Vec<&PoseWindow> = train_set.iter().collect();
    let train_batch = make_batch(&refs);
    let initial_local = {
        let out = model.forward(&train_batch.input, Mode::Eval, None).unwrap();
        loss_local(&out.center_pose, &train_batch.target_center).unwrap()
    };
    let baseline_val = validation_mpjpe(&model, val_set).unwrap();

    let train_cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 0.01,
        epochs: 250, // 8 steps per epoch → exactly 2000 steps
        stage_boundary_epoch: Some(125),
        seed: 11,
        flip_augment: false,
        lr_decay: None,
        ..TrainConfig::default()
    };
    let steps = train_cfg.epochs * train_set.len().div_ceil(train_cfg.batch_size);
    assert!(steps <= 2000, "configured {steps} steps");
    let result = fit(model, train_set, val_set, &train_cfg).unwrap();

    let final_local = {
        let out = result
            .model
            .forward(&train_batch.input, Mode::Eval, None)
            .unwrap();
        loss_local(&out.center_pose, &train_batch.target_center).unwrap()
    };
    let final_val = validation_mpjpe(&result.model, val_set).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        final_local < 0.01 * initial_local,
        "train L_local {final_local:.3} is not below 1% of initial {initial_local:.3}"
    );
    assert!(final_val.is_finite());
    assert!(
        final_val <= 0.5 * baseline_val,
        "val mpjpe {final_val:.3} not 50% below baseline {baseline_val:.3}"
    );
    assert!(elapsed < 600.0, "training took {elapsed:.0}s");
    println!(
        "ACCEPTANCE 7 (trainability): PASS — {steps} steps, train L_local {initial_local:.1} → {final_local:.2} ({:.2}%), val mpjpe {baseline_val:.1} → {final_val:.1} ({:.1}%), {elapsed:.0}s",
        100.0 * final_local / initial_local,
        100.0 * final_val / baseline_val
    );
}

/// 8. Determinism and persistence: fixed-seed single-thread training gives a
///    bitwise-identical loss trace across runs, and a checkpoint round trip
///    preserves eval-mode outputs bitwise (on a trained model).
#[test]
fn criterion_8_determinism_and_persistence() {
    let spec = SynthSpec {
        sequences: 2,
        frames: 12,
        skeleton: "h36m17".into(),
        seed: 88,
        noise: 1.0,
    };
    let files = synth_generate(&spec).unwrap();
    let mut windows: Vec<PoseWindow> = Vec::new();
    for f in &files {
        windows.extend(make_windows(f, 9).unwrap());
    }
    let model_cfg = ModelConfig {
        joints: 17,
        frames: 9,
        channels: 8,
        recon_depth: 1,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        batch_size: 4,
        epochs: 4,
        seed: 321,
        flip_augment: false,
        ..TrainConfig::default()
    };
    let run = || {
        let model = LiftingModel::build(model_cfg.clone(), SkeletonGraph::h36m17(), 55).unwrap();
        fit(model, &windows[..16], &windows[16..], &train_cfg).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.history.entries.len(), b.history.entries.len());
    for (ea, eb) in a.history.entries.iter().zip(b.history.entries.iter()) {
        assert_eq!(ea.loss_global.to_bits(), eb.loss_global.to_bits());
        assert_eq!(ea.loss_local.to_bits(), eb.loss_local.to_bits());
        assert_eq!(ea.objective.to_bits(), eb.objective.to_bits());
        assert_eq!(
            ea.val_mpjpe.map(f64::to_bits),
            eb.val_mpjpe.map(f64::to_bits)
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trained.ckpt");
    poselift::data::save_checkpoint(&a.model, &path).unwrap();
    let reloaded = poselift::data::load_checkpoint(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array::from_shape_fn((3, 2, 9, 17), |_| rng.random_range(-500.0..500.0));
    let before = a.model.forward(&x, Mode::Eval, None).unwrap();
    let after = reloaded.forward(&x, Mode::Eval, None).unwrap();
    assert_eq!(before.center_pose, after.center_pose);
    assert_eq!(before.recon_seq, after.recon_seq);
    let bits_equal = before
        .center_pose
        .iter()
        .zip(after.center_pose.iter())
        .all(|(p, q)| p.to_bits() == q.to_bits());
    assert!(bits_equal);
    println!(
        "ACCEPTANCE 8 (determinism and persistence): PASS — {} epochs bitwise-identical, checkpoint round trip exact",
        a.history.entries.len()
    );
}

/// 9. Ablation plumbing: each structural variant builds, passes the
///    gradient check, trains an epoch and produces an evaluation report;
///    the input-2D limb swap (a data transform, no gradcheck applies)
///    trains and evaluates through the same pipeline.
#[test]
fn criterion_9_ablation_plumbing() {
    let spec = SynthSpec {
        sequences: 2,
        frames: 10,
        skeleton: "h36m17".into(),
        seed: 99,
        noise: 1.0,
    };
    let files = synth_generate(&spec).unwrap();
    let mut windows: Vec<PoseWindow> = Vec::new();
    for f in &files {
        windows.extend(make_windows(f, 9).unwrap());
    }
    let train_cfg = TrainConfig {
        batch_size: 5,
        epochs: 1,
        seed: 17,
        flip_augment: false,
        ..TrainConfig::default()
    };
    let mut summaries = Vec::new();
    for variant in [
        AblationVariant::NoAdaptive,
        AblationVariant::NoStrided,
        AblationVariant::FcHead,
    ] {
        let report = grad_check(&GradCheckConfig {
            variant,
            ..GradCheckConfig::default()
        })
        .unwrap();
        assert!(report.passed(), "{variant} gradcheck:\n{}", report.render());
        let mut cfg = ModelConfig {
            joints: 17,
            frames: 9,
            channels: 8,
            recon_depth: 0,
            ..ModelConfig::default()
        };
        cfg.apply_variant(variant);
        let model = LiftingModel::build(cfg, SkeletonGraph::h36m17(), 1).unwrap();
        let result = fit(model, &windows[..15], &windows[15..], &train_cfg).unwrap();
        assert_eq!(result.history.entries.len(), 1);
        assert!(result.history.entries[0].objective.is_finite());
        let report = evaluate(
            &result.model,
            &windows[15..],
            Protocol::P1,
            &EvalOptions::default(),
        )
        .unwrap();
        assert!(report.overall.mpjpe.is_finite());
        assert!(!report.render_text().is_empty());
        summaries.push(format!("{variant}: mpjpe {:.1}", report.overall.mpjpe));
    }
    // Swap the structure of the input 2D pose: permute left/right joints of
    // the inputs only, then train and evaluate the full model on them.
    let perm = SkeletonGraph::h36m17().flip_permutation();
    let mut swapped = windows.clone();
    for w in &mut swapped {
        let original = w.input2d.clone();
        let (t, n, _) = original.dim();
        for ti in 0..t {
            for j in 0..n {
                w.input2d[[ti, perm[j], 0]] = original[[ti, j, 0]];
                w.input2d[[ti, perm[j], 1]] = original[[ti, j, 1]];
            }
        }
    }
    let cfg = ModelConfig {
        joints: 17,
        frames: 9,
        channels: 8,
        recon_depth: 0,
        ..ModelConfig::default()
    };
    let model = LiftingModel::build(cfg, SkeletonGraph::h36m17(), 1).unwrap();
    let result = fit(model, &swapped[..15], &swapped[15..], &train_cfg).unwrap();
    let report = evaluate(
        &result.model,
        &swapped[15..],
        Protocol::P1,
        &EvalOptions::default(),
    )
    .unwrap();
    assert!(report.overall.mpjpe.is_finite());
    summaries.push(format!("swap-limbs: mpjpe {:.1}", report.overall.mpjpe));
    println!(
        "ACCEPTANCE 9 (ablation plumbing): PASS — {}",
        summaries.join("; ")
    );
}
