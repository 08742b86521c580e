//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p leaklab-core --test acceptance -- --nocapture
//! --test-threads=1` to see every line in order. All runs are seeded; the
//! suite is deterministic.

use std::time::Instant;

use leaklab_core::analytic::invert_first_layer;
use leaklab_core::attacks::{
    layer_drop_attack, objective_and_gradient, recover_label, run_attack, AttackConfig, Conditional,
};
use leaklab_core::data::{mix_seed, toy_digits};
use leaklab_core::defenses::{self, DefenseMechanism, ReleasedGradient};
use leaklab_core::eval::{
    estimate_risk, mc_ablation, paired_diff_stats, run_matrix, synthetic_ablation, Attacker,
    Dataset, DatasetSpec, ExperimentGrid, McAblationParams, NamedAttack, SynthAblationParams,
};
use leaklab_core::metrics::psnr;
use leaklab_core::models::{
    init_parameters, loss_and_param_grad, LabeledExample, NetworkSpec, NetworkState,
};
use leaklab_core::priors::PriorSpec;
use leaklab_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(n: usize, name: &str, check: impl FnOnce() -> Result<String, String>) {
    match check() {
        Ok(detail) => println!("ACCEPTANCE {n} ({name}): PASS - {detail}"),
        Err(e) => {
            println!("ACCEPTANCE {n} ({name}): FAIL - {e}");
            panic!("acceptance criterion {n} ({name}) failed: {e}");
        }
    }
}

#[test]
fn criterion_01_analytic_inversion_exactness() {
    criterion(1, "analytic inversion exactness", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let mut worst = 0.0f64;
        for trial in 0..100u64 {
            let d = rng.random_range(6..40);
            let h = rng.random_range(4..24);
            let c = rng.random_range(2..10);
            let spec = NetworkSpec::new(vec![d, h, c], trial).map_err(|e| e.to_string())?;
            let state = init_parameters::<f64>(&spec);
            // The inversion needs a nonzero first-layer gradient; an input
            // that leaves every hidden ReLU inactive carries no trace of x in
            // the gradient at all, so such draws are resampled.
            let (x, ga, gb) = loop {
                let x = Tensor::vector((0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
                    .map_err(|e| e.to_string())?;
                let y = rng.random_range(0..c);
                let ex = LabeledExample { x: x.clone(), y };
                let (_, grad) =
                    loss_and_param_grad(&spec, &state, &ex).map_err(|e| e.to_string())?;
                let segs = spec.segments();
                let (w, b) = (&segs[0], &segs[1]);
                let ga = Tensor::new(
                    vec![w.rows, w.cols],
                    grad.data()[w.offset..w.offset + w.len].to_vec(),
                )
                .map_err(|e| e.to_string())?;
                let gb = Tensor::new(
                    vec![b.len],
                    grad.data()[b.offset..b.offset + b.len].to_vec(),
                )
                .map_err(|e| e.to_string())?;
                if gb.data().iter().any(|v| v.abs() > 1e-12) {
                    break (x, ga, gb);
                }
            };
            let inv = invert_first_layer(&ga, &gb).map_err(|e| e.to_string())?;
            let err = inv
                .x
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            worst = worst.max(err);
            if err >= 1e-9 {
                return Err(format!(
                    "trial {trial}: max |x_hat - x| = {err:.3e} >= 1e-9"
                ));
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() >= 10.0 {
            return Err(format!("took {elapsed:?}, limit 10 s"));
        }
        Ok(format!(
            "100 random MLPs, worst max error {worst:.3e} in {elapsed:.2?}"
        ))
    });
}

#[test]
fn criterion_02_synthetic_ablation_ordering() {
    criterion(2, "synthetic ablation ordering", || {
        let params = SynthAblationParams {
            steps: 200,
            trials: 40,
            lr: 0.5,
            lr_decay: 0.975,
            hidden: 32,
            noise_scale: 0.1,
            seed: 0,
        };
        let variants = synthetic_ablation(&params).map_err(|e| e.to_string())?;
        let matched = variants
            .iter()
            .find(|v| v.prior_name == "gaussian" && v.conditional_name == "laplacian")
            .expect("matched variant present");
        for v in &variants {
            if v.mean_distance.len() != params.steps {
                return Err(format!(
                    "trace length {} != steps {}",
                    v.mean_distance.len(),
                    params.steps
                ));
            }
            // shared init per trial: all variants start at the same distance
            if (v.mean_distance[0] - matched.mean_distance[0]).abs() > 1e-9 {
                return Err("variants do not share the per-trial init".into());
            }
        }
        let mut detail = format!("matched final {:.3}", matched.final_mean());
        for v in &variants {
            if v.prior_name == "gaussian" && v.conditional_name == "laplacian" {
                continue;
            }
            if matched.final_mean() >= v.final_mean() {
                return Err(format!(
                    "matched {:.3} not strictly below {}-prior/{}-conditional {:.3}",
                    matched.final_mean(),
                    v.prior_name,
                    v.conditional_name,
                    v.final_mean()
                ));
            }
            let (gap, se) = paired_diff_stats(&v.final_distances, &matched.final_distances);
            if gap < se {
                return Err(format!(
                    "gap to {}-prior/{}-conditional is {gap:.3}, below 1 se {se:.3}",
                    v.prior_name, v.conditional_name
                ));
            }
            detail.push_str(&format!(
                "; vs {}{} gap {gap:.3} (se {se:.3})",
                &v.prior_name[..1],
                &v.conditional_name[..1]
            ));
        }
        Ok(detail)
    });
}

/// Sampled probe point away from every kink of every objective in play.
struct Probe {
    x: Vec<f64>,
}

fn sample_probe(
    rng: &mut ChaCha8Rng,
    spec: &NetworkSpec,
    state: &NetworkState<f64>,
    released: &[&ReleasedGradient<f64>],
    y: usize,
) -> Probe {
    'outer: for _ in 0..500 {
        let x: Vec<f64> = (0..spec.input_dim())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        // pixel-range prior kinks at 0 and 1
        if x.iter()
            .any(|v| (v - 0.0).abs() < 1e-3 || (v - 1.0).abs() < 1e-3)
        {
            continue;
        }
        // anisotropic TV kinks at equal neighbors (4x4 row-major image)
        let w = 4;
        for r in 0..4 {
            for c in 0..4 {
                if c + 1 < 4 && (x[r * w + c + 1] - x[r * w + c]).abs() < 1e-3 {
                    continue 'outer;
                }
                if r + 1 < 4 && (x[(r + 1) * w + c] - x[r * w + c]).abs() < 1e-3 {
                    continue 'outer;
                }
            }
        }
        // relu kinks: all pre-activations bounded away from zero
        let mut g = leaklab_core::Graph::new();
        let theta = g.constant(state.theta.clone());
        let xv = g.constant(Tensor::vector(x.clone()).unwrap());
        let w_seg = &state.segments[0];
        let wmat = {
            let flat = g.slice(theta, w_seg.offset, w_seg.len).unwrap();
            g.reshape(flat, vec![w_seg.rows, w_seg.cols]).unwrap()
        };
        let pre = g.matvec(wmat, xv).unwrap();
        if g.value(pre).data().iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        // absolute-value kinks of the l1/laplacian conditionals: gradient
        // residuals bounded away from zero for every released gradient
        let ex = LabeledExample {
            x: Tensor::vector(x.clone()).unwrap(),
            y,
        };
        let (_, grad) = loss_and_param_grad(spec, state, &ex).unwrap();
        for rel in released {
            if rel
                .g
                .data()
                .iter()
                .zip(grad.data())
                .any(|(o, t)| (o - t).abs() < 1e-4)
            {
                continue 'outer;
            }
        }
        return Probe { x };
    }
    panic!("could not sample a kink-free probe point");
}

#[test]
fn criterion_03_objective_gradient_correctness() {
    criterion(
        3,
        "attack objective gradients vs finite differences",
        || {
            // 4x4 images, 2-layer ReLU MLP
            let spec = NetworkSpec::new(vec![16, 10, 4], 33).map_err(|e| e.to_string())?;
            let state = init_parameters::<f64>(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(303);
            let x_true =
                Tensor::vector((0..16).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let y = 2usize;
            let ex = LabeledExample {
                x: x_true.clone(),
                y,
            };
            let (_, grad) = loss_and_param_grad(&spec, &state, &ex).map_err(|e| e.to_string())?;

            let rel_gauss = defenses::release(
                &DefenseMechanism::Gaussian { sigma: 0.12 },
                &grad,
                &state.segments,
                41,
            )
            .map_err(|e| e.to_string())?;
            let rel_lap = defenses::release(
                &DefenseMechanism::Laplacian { b: 0.15 },
                &grad,
                &state.segments,
                42,
            )
            .map_err(|e| e.to_string())?;
            let rel_prune = defenses::release(
                &DefenseMechanism::PruneGaussian {
                    prune_rate: 0.5,
                    sigma: 0.12,
                },
                &grad,
                &state.segments,
                43,
            )
            .map_err(|e| e.to_string())?;

            let conditionals: Vec<(&str, Conditional, &ReleasedGradient<f64>)> = vec![
                ("bayes-gaussian", Conditional::bayes(), &rel_gauss),
                ("bayes-laplacian", Conditional::bayes(), &rel_lap),
                ("bayes-prune-mixture", Conditional::bayes(), &rel_prune),
                ("l2", Conditional::L2, &rel_gauss),
                ("l1", Conditional::L1, &rel_lap),
                ("cosine", Conditional::Cosine, &rel_gauss),
            ];
            let priors = vec![
                ("uniform", PriorSpec::Uniform),
                (
                    "tv",
                    PriorSpec::TvAniso {
                        image_shape: (4, 4),
                    },
                ),
                ("pixel-range", PriorSpec::PixelRange),
            ];
            let all_released = [&rel_gauss, &rel_lap, &rel_prune];

            let mut worst = 0.0f64;
            for (cname, conditional, released) in &conditionals {
                for (pname, prior) in &priors {
                    let mut cfg = AttackConfig::basic(conditional.clone(), 1, 0.1, 0);
                    cfg.prior = prior.clone();
                    cfg.beta = 0.7;
                    for point in 0..50 {
                        let probe = sample_probe(&mut rng, &spec, &state, &all_released, y);
                        let xt = Tensor::vector(probe.x.clone()).unwrap();
                        let (_, analytic) =
                            objective_and_gradient(&cfg, &xt, released, &spec, &state, y)
                                .map_err(|e| e.to_string())?;
                        let step = 1e-5;
                        let mut fd = Vec::with_capacity(16);
                        for i in 0..16 {
                            let mut p = probe.x.clone();
                            p[i] += step;
                            let (hi, _) = objective_and_gradient(
                                &cfg,
                                &Tensor::vector(p.clone()).unwrap(),
                                released,
                                &spec,
                                &state,
                                y,
                            )
                            .map_err(|e| e.to_string())?;
                            p[i] = probe.x[i] - step;
                            let (lo, _) = objective_and_gradient(
                                &cfg,
                                &Tensor::vector(p).unwrap(),
                                released,
                                &spec,
                                &state,
                                y,
                            )
                            .map_err(|e| e.to_string())?;
                            fd.push((hi - lo) / (2.0 * step));
                        }
                        let diff_norm = analytic
                            .data()
                            .iter()
                            .zip(&fd)
                            .map(|(a, f)| (a - f) * (a - f))
                            .sum::<f64>()
                            .sqrt();
                        let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let a_norm = analytic.l2_norm();
                        let rel = diff_norm / fd_norm.max(a_norm).max(1e-12);
                        worst = worst.max(rel);
                        if rel > 1e-4 {
                            return Err(format!(
                                "{cname} + {pname} prior, point {point}: rel error {rel:.3e}"
                            ));
                        }
                    }
                }
            }
            Ok(format!(
                "18 objective variants x 50 points, worst rel error {worst:.3e}"
            ))
        },
    );
}

#[test]
fn criterion_04_reduction_identities() {
    criterion(4, "bayes/gradient-matching reduction identities", || {
        let spec = NetworkSpec::new(vec![10, 8, 3], 44).map_err(|e| e.to_string())?;
        let state = init_parameters::<f64>(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let x_true =
            Tensor::vector((0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let ex = LabeledExample {
            x: x_true.clone(),
            y: 1,
        };
        let (_, grad) = loss_and_param_grad(&spec, &state, &ex).map_err(|e| e.to_string())?;
        let sigma = 0.23;
        let b = 0.17;
        let rel_gauss = defenses::release(
            &DefenseMechanism::Gaussian { sigma },
            &grad,
            &state.segments,
            51,
        )
        .map_err(|e| e.to_string())?;
        let rel_lap = defenses::release(
            &DefenseMechanism::Laplacian { b },
            &grad,
            &state.segments,
            52,
        )
        .map_err(|e| e.to_string())?;

        let bayes = AttackConfig::basic(Conditional::bayes(), 1, 0.1, 0);
        let l2 = AttackConfig::basic(Conditional::L2, 1, 0.1, 0);
        let l1 = AttackConfig::basic(Conditional::L1, 1, 0.1, 0);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let probe =
                Tensor::vector((0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

            let (_, g_bayes) = objective_and_gradient(&bayes, &probe, &rel_gauss, &spec, &state, 1)
                .map_err(|e| e.to_string())?;
            let (_, g_l2) = objective_and_gradient(&l2, &probe, &rel_gauss, &spec, &state, 1)
                .map_err(|e| e.to_string())?;
            let ratio = 1.0 / (2.0 * sigma * sigma);
            for (a, l) in g_bayes.data().iter().zip(g_l2.data()) {
                let rel = (a - ratio * l).abs() / a.abs().max(1e-12);
                worst = worst.max(rel);
                if rel > 1e-10 {
                    return Err(format!("gaussian/l2 ratio violated: rel {rel:.3e}"));
                }
            }

            let (_, g_bayes_l) = objective_and_gradient(&bayes, &probe, &rel_lap, &spec, &state, 1)
                .map_err(|e| e.to_string())?;
            let (_, g_l1) = objective_and_gradient(&l1, &probe, &rel_lap, &spec, &state, 1)
                .map_err(|e| e.to_string())?;
            let ratio = 1.0 / b;
            for (a, l) in g_bayes_l.data().iter().zip(g_l1.data()) {
                let rel = (a - ratio * l).abs() / a.abs().max(1e-12);
                worst = worst.max(rel);
                if rel > 1e-10 {
                    return Err(format!("laplacian/l1 ratio violated: rel {rel:.3e}"));
                }
            }
        }
        Ok(format!(
            "gaussian=1/(2s^2)*l2 and laplacian=(1/b)*l1 hold, worst rel {worst:.3e}"
        ))
    });
}

#[test]
fn criterion_05_prune_defense_advantage() {
    criterion(
        5,
        "bayes mixture beats l2 on prune+gauss by >= 1 dB",
        || {
            let dataset = Dataset::resolve(&DatasetSpec::ToyDigits { seed: 0, size: 8 })
                .map_err(|e| e.to_string())?;
            let spec = NetworkSpec::new(vec![64, 32, 10], 5).map_err(|e| e.to_string())?;
            let state = init_parameters::<f64>(&spec);
            let template = |c: Conditional| {
                let mut t = AttackConfig::basic(c, 2000, 0.1, 0);
                t.prior = PriorSpec::TvAniso {
                    image_shape: (8, 8),
                };
                t.beta = 0.01;
                t
            };
            let attacks = vec![
                NamedAttack {
                    name: "bayes".into(),
                    template: template(Conditional::bayes()),
                },
                NamedAttack {
                    name: "l2".into(),
                    template: template(Conditional::L2),
                },
            ];
            let grid = ExperimentGrid {
                lrs: vec![0.05, 0.1],
                lr_decays: vec![1.0],
                betas: vec![1e-3, 1e-2, 1e-1],
                calibrate_betas: false,
                calibration_probes: 2,
                layer_weighting: vec![None],
            };
            let out = run_matrix(
                &grid,
                &attacks,
                &[DefenseMechanism::PruneGaussian {
                    prune_rate: 0.5,
                    sigma: 0.1,
                }],
                &spec,
                &[(0, state)],
                &dataset,
                30,
                17,
            )
            .map_err(|e| e.to_string())?;
            let cell = |name: &str| {
                out.table
                    .cells
                    .iter()
                    .find(|c| c.attack == name)
                    .and_then(|c| c.mean_psnr)
                    .ok_or_else(|| format!("missing {name} cell"))
            };
            let bayes = cell("bayes")?;
            let l2 = cell("l2")?;
            let margin = bayes - l2;
            if margin < 1.0 {
                return Err(format!(
                    "bayes {bayes:.2} dB vs l2 {l2:.2} dB: margin {margin:.2} < 1 dB"
                ));
            }
            Ok(format!(
            "grid-tuned over 30 images: bayes {bayes:.2} dB vs l2 {l2:.2} dB (margin {margin:.2})"
        ))
        },
    );
}

#[test]
fn criterion_06_mc_sample_count_trend() {
    criterion(6, "final PSNR non-decreasing in k within 1 se", || {
        let params = McAblationParams {
            ks: vec![1, 4, 16],
            trials: 20,
            steps: 300,
            lr: 0.1,
            lr_decay: 1.0,
            delta: 9.0,
            sigma: 0.1,
            hidden: 16,
            beta: 0.01,
            image_size: 28,
            seed: 0,
        };
        let result = mc_ablation(&params).map_err(|e| e.to_string())?;
        if result.delta != 9.0 {
            return Err("delta not honored".into());
        }
        let mut detail = String::new();
        for w in result.traces.windows(2) {
            let (gap, se) = paired_diff_stats(&w[1].final_per_trial, &w[0].final_per_trial);
            detail.push_str(&format!(
                "k{}->k{}: {:.2}->{:.2} dB (gap {gap:.2}, se {se:.2}); ",
                w[0].k,
                w[1].k,
                w[0].final_mean(),
                w[1].final_mean()
            ));
            if gap < -se {
                return Err(format!(
                    "final PSNR decreased from k={} to k={} by {:.3} (> 1 se {:.3})",
                    w[0].k, w[1].k, -gap, se
                ));
            }
        }
        Ok(detail)
    });
}

#[test]
fn criterion_07_layer_drop_attack() {
    criterion(
        7,
        "layer-drop beats direct attack; sweep finds layer",
        || {
            let spec = NetworkSpec::new(vec![64, 32, 10], 11).map_err(|e| e.to_string())?;
            let state = init_parameters::<f64>(&spec);
            let dataset = toy_digits::<f64>(20, 2);
            let defense = DefenseMechanism::LayerPerturb {
                defended_layer: 0,
                perturb_mask_rate: 0.8,
            };
            let trials = 20usize;
            let mut drop_psnrs = Vec::new();
            let mut direct_psnrs = Vec::new();
            let mut sweep_hits = 0usize;
            for t in 0..trials {
                let ex = dataset.example(t).map_err(|e| e.to_string())?;
                let (_, grad) =
                    loss_and_param_grad(&spec, &state, &ex).map_err(|e| e.to_string())?;
                let released =
                    defenses::release(&defense, &grad, &state.segments, mix_seed(7, t as u64))
                        .map_err(|e| e.to_string())?;
                let mut cfg =
                    AttackConfig::basic(Conditional::L2, 2500, 0.1, mix_seed(3, t as u64));
                cfg.prior = PriorSpec::TvAniso {
                    image_shape: (8, 8),
                };
                cfg.beta = 0.01;

                let drop = layer_drop_attack(&cfg, &released, &spec, &state, Some(0), Some(&ex.x))
                    .map_err(|e| e.to_string())?;
                drop_psnrs.push(psnr(&ex.x, &drop.best.x_hat, 1.0).map_err(|e| e.to_string())?);

                let direct = run_attack(&cfg, &released, &spec, &state, Some(&ex.x))
                    .map_err(|e| e.to_string())?;
                direct_psnrs.push(psnr(&ex.x, &direct.x_hat, 1.0).map_err(|e| e.to_string())?);

                let sweep = layer_drop_attack(&cfg, &released, &spec, &state, None, Some(&ex.x))
                    .map_err(|e| e.to_string())?;
                if sweep.best_layer == 0 {
                    sweep_hits += 1;
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (drop_mean, direct_mean) = (mean(&drop_psnrs), mean(&direct_psnrs));
            let margin = drop_mean - direct_mean;
            if margin < 2.0 {
                return Err(format!(
                "drop {drop_mean:.2} dB vs direct {direct_mean:.2} dB: margin {margin:.2} < 2 dB"
            ));
            }
            let needed = (0.8 * trials as f64).ceil() as usize;
            if sweep_hits < needed {
                return Err(format!(
                    "sweep recovered the defended layer {sweep_hits}/{trials} (< {needed})"
                ));
            }
            Ok(format!(
            "drop {drop_mean:.2} dB vs direct {direct_mean:.2} dB (margin {margin:.2}); sweep {sweep_hits}/{trials}"
        ))
        },
    );
}

#[test]
fn criterion_08_label_recovery() {
    criterion(8, "label recovery from bias gradients", || {
        let dataset = toy_digits::<f64>(100, 9);
        let mut clean_hits = 0usize;
        let mut noisy_hits = 0usize;
        for t in 0..100usize {
            let spec = NetworkSpec::new(vec![64, 24, 10], t as u64).map_err(|e| e.to_string())?;
            let state = init_parameters::<f64>(&spec);
            let ex = dataset.example(t).map_err(|e| e.to_string())?;
            let (_, grad) = loss_and_param_grad(&spec, &state, &ex).map_err(|e| e.to_string())?;

            let clean = defenses::release(
                &DefenseMechanism::None,
                &grad,
                &state.segments,
                mix_seed(5, t as u64),
            )
            .map_err(|e| e.to_string())?;
            if recover_label(&clean).map_err(|e| e.to_string())?.label == ex.y {
                clean_hits += 1;
            }

            let noisy = defenses::release(
                &DefenseMechanism::Gaussian { sigma: 0.01 },
                &grad,
                &state.segments,
                mix_seed(6, t as u64),
            )
            .map_err(|e| e.to_string())?;
            if recover_label(&noisy).map_err(|e| e.to_string())?.label == ex.y {
                noisy_hits += 1;
            }
        }
        if clean_hits != 100 {
            return Err(format!("clean recovery {clean_hits}/100, need 100"));
        }
        if noisy_hits < 95 {
            return Err(format!("sigma=0.01 recovery {noisy_hits}/100, need >= 95"));
        }
        Ok(format!(
            "clean {clean_hits}/100, gaussian sigma=0.01 {noisy_hits}/100"
        ))
    });
}

#[test]
fn criterion_09_risk_estimator_sanity() {
    criterion(9, "risk estimator sanity", || {
        let dataset = Dataset::resolve(&DatasetSpec::ToyDigits { seed: 1, size: 8 })
            .map_err(|e| e.to_string())?;
        let spec = NetworkSpec::new(vec![64, 16, 10], 5).map_err(|e| e.to_string())?;
        let state = init_parameters::<f64>(&spec);

        // analytic attacker, no defense: exact inversion, risk 0 at any delta > 0
        let est = estimate_risk(
            &Attacker::Analytic,
            &DefenseMechanism::None,
            &spec,
            &state,
            &dataset,
            1e-6,
            25,
            3,
        )
        .map_err(|e| e.to_string())?;
        if est.risk != 0.0 {
            return Err(format!("analytic/no-defense risk {} != 0", est.risk));
        }

        // constant attacker far from the data: risk 1
        let est = estimate_risk(
            &Attacker::Constant {
                values: vec![50.0; 64],
            },
            &DefenseMechanism::None,
            &spec,
            &state,
            &dataset,
            1.0,
            25,
            3,
        )
        .map_err(|e| e.to_string())?;
        if est.risk != 1.0 {
            return Err(format!("constant attacker risk {} != 1", est.risk));
        }

        // monotone non-increasing in delta on fixed seeds
        let attacker = Attacker::Constant {
            values: vec![0.25; 64],
        };
        let mut last = f64::INFINITY;
        let mut risks = Vec::new();
        for delta in [0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
            let est = estimate_risk(
                &attacker,
                &DefenseMechanism::Gaussian { sigma: 0.1 },
                &spec,
                &state,
                &dataset,
                delta,
                40,
                7,
            )
            .map_err(|e| e.to_string())?;
            if est.risk > last {
                return Err(format!(
                    "risk rose from {last} to {} at delta {delta}",
                    est.risk
                ));
            }
            if !(0.0..=1.0).contains(&est.risk) {
                return Err(format!("risk {} outside [0,1]", est.risk));
            }
            last = est.risk;
            risks.push(est.risk);
        }
        Ok(format!(
            "exact-inversion risk 0, constant-attacker risk 1, monotone {risks:?}"
        ))
    });
}
