//! Command implementations. Each run validates fully, computes in memory,
//! then writes its output files plus a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use leaklab_core::analytic;
use leaklab_core::attacks::{run_attack, Conditional, ReconstructionResult};
use leaklab_core::data::mix_seed;
use leaklab_core::defenses::{self, DefenseMechanism};
use leaklab_core::eval::{
    calibrate_beta, estimate_risk, mc_ablation, run_matrix, synthetic_ablation, Dataset,
    McAblationParams, ProbeCase, SynthAblationParams,
};
use leaklab_core::metrics::format_float;
use leaklab_core::models::{
    init_parameters, loss_and_param_grad, save_checkpoint, train_steps, NetworkSpec, NetworkState,
};
use leaklab_core::Tensor;

use crate::config::{
    manifest_json, AttackJob, CalibrateBetaJob, MatrixJob, NetworkConfig, RiskJob,
};

/// Error with the exit code it maps to (2 = config, 3 = runtime).
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            exit_code: 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::runtime(e.to_string())
}

/// Buffered output set: nothing touches the filesystem until the whole run
/// has succeeded.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Self {
        OutputSet {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn write_all(&self) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", self.dir.display())))?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, contents)
                .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn resolve_dataset(spec: &leaklab_core::eval::DatasetSpec) -> CliResult<Dataset> {
    Dataset::resolve(spec).map_err(|e| CliError::config(e.to_string()))
}

/// Builds the network at the requested training step, streaming dataset
/// examples in index order.
fn resolve_network(
    cfg: &NetworkConfig,
    dataset: &Dataset,
) -> CliResult<(NetworkSpec, NetworkState<f64>)> {
    let spec = NetworkSpec::new(cfg.layer_sizes.clone(), cfg.seed)
        .map_err(|e| CliError::config(e.to_string()))?;
    if spec.input_dim() != dataset.input_dim() {
        return Err(CliError::config(format!(
            "network input width {} does not match dataset dimension {}",
            spec.input_dim(),
            dataset.input_dim()
        )));
    }
    if spec.class_count() < dataset.class_count() {
        return Err(CliError::config(format!(
            "network has {} outputs, dataset has {} classes",
            spec.class_count(),
            dataset.class_count()
        )));
    }
    let state = init_parameters::<f64>(&spec);
    let state = train_to_step(&spec, &state, dataset, cfg.train_steps, cfg.train_lr)?;
    Ok((spec, state))
}

fn train_to_step(
    spec: &NetworkSpec,
    state: &NetworkState<f64>,
    dataset: &Dataset,
    steps: u64,
    lr: f64,
) -> CliResult<NetworkState<f64>> {
    if steps == 0 {
        return Ok(state.clone());
    }
    train_steps(
        spec,
        state,
        |i| {
            dataset
                .example_at(i as u64)
                .expect("dataset indexing is total")
        },
        steps as usize,
        lr,
    )
    .map_err(runtime)
}

fn json_float_or_string(v: f64) -> String {
    if v.is_finite() {
        format_float(v)
    } else {
        format!("\"{}\"", format_float(v))
    }
}

fn json_float_array(values: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&json_float_or_string(*v));
    }
    s.push(']');
    s
}

// ── attack ──────────────────────────────────────────────────────────

pub fn cmd_attack(job: &AttackJob, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(job).map_err(runtime)?;
    job.defense
        .validate()
        .and_then(|_| job.attack.validate())
        .map_err(|e| CliError::config(e.to_string()))?;

    let dataset = resolve_dataset(&job.dataset)?;
    let (spec, state) = resolve_network(&job.network, &dataset)?;
    let example = dataset
        .example_at(job.example_index)
        .map_err(|e| CliError::config(e.to_string()))?;
    let (_, grad) = loss_and_param_grad(&spec, &state, &example).map_err(runtime)?;
    let released = defenses::release(
        &job.defense,
        &grad,
        &state.segments,
        mix_seed(job.release_seed, job.example_index),
    )
    .map_err(runtime)?;

    // A defense that releases the true gradient is a Dirac conditional: no
    // density to ascend, but the first layer inverts in closed form.
    let analytic_route = job.defense == DefenseMechanism::None
        && matches!(job.attack.conditional, Conditional::Bayes { .. });

    let (result, route) = if analytic_route {
        let inv = analytic::invert_released(&released).map_err(runtime)?;
        // Exact up to float rounding reports the +inf sentinel; the raw PSNR
        // at the f64 noise floor (~300 dB) carries no signal.
        let max_err = inv
            .x
            .data()
            .iter()
            .zip(example.x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let psnr = if max_err <= 1e-9 {
            f64::INFINITY
        } else {
            analytic::psnr_of_exact(&example.x, &inv.x, dataset.max_val()).map_err(runtime)?
        };
        (
            ReconstructionResult {
                x_hat: inv.x,
                objective_trace: vec![],
                distance_trace: None,
                psnr: Some(psnr),
                steps_run: 0,
                final_objective: 0.0,
                label_used: leaklab_core::attacks::recover_label(&released)
                    .map(|r| r.label)
                    .unwrap_or(0),
            },
            "analytic",
        )
    } else {
        (
            run_attack(&job.attack, &released, &spec, &state, Some(&example.x)).map_err(runtime)?,
            "optimization",
        )
    };

    let mut outputs = OutputSet::new(out_dir);
    outputs.add("result.json", result_json(&result, route));
    if job.write_image_csv {
        outputs.add(
            "reconstruction.csv",
            reconstruction_csv(&result.x_hat, &dataset),
        );
    }
    outputs.add(
        "manifest.json",
        manifest_json("attack", &config_json, job.attack.seed),
    );
    outputs.write_all()
}

fn result_json(result: &ReconstructionResult<f64>, route: &str) -> String {
    let mut s = String::from("{");
    let _ = write!(s, "\"route\":\"{route}\"");
    let _ = write!(s, ",\"label\":{}", result.label_used);
    let _ = write!(s, ",\"steps_run\":{}", result.steps_run);
    let _ = write!(
        s,
        ",\"final_objective\":{}",
        json_float_or_string(result.final_objective)
    );
    match result.psnr {
        Some(p) => {
            let _ = write!(s, ",\"psnr\":{}", json_float_or_string(p));
        }
        None => s.push_str(",\"psnr\":null"),
    }
    let _ = write!(
        s,
        ",\"objective_trace\":{}",
        json_float_array(&result.objective_trace)
    );
    match &result.distance_trace {
        Some(t) => {
            let _ = write!(s, ",\"distance_trace\":{}", json_float_array(t));
        }
        None => s.push_str(",\"distance_trace\":null"),
    }
    let xs: Vec<f64> = result.x_hat.data().to_vec();
    let _ = write!(s, ",\"x_hat\":{}", json_float_array(&xs));
    s.push('}');
    s
}

fn reconstruction_csv(x_hat: &Tensor, dataset: &Dataset) -> String {
    let mut s = String::new();
    let cols = dataset
        .image_shape()
        .map(|(_, w)| w)
        .unwrap_or_else(|| x_hat.numel());
    for (i, v) in x_hat.data().iter().enumerate() {
        s.push_str(&format_float(*v));
        s.push(if (i + 1) % cols == 0 { '\n' } else { ',' });
    }
    s
}

// ── train ───────────────────────────────────────────────────────────

pub struct TrainArgs {
    pub dataset: leaklab_core::eval::DatasetSpec,
    pub network: NetworkConfig,
}

pub fn cmd_train(args: &TrainArgs, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let dataset = resolve_dataset(&args.dataset)?;
    let (spec, state) = resolve_network(&args.network, &dataset)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out_dir.display())))?;
    let ckpt = out_dir.join("checkpoint.ckpt");
    save_checkpoint(&ckpt, &spec, &state, args.network.train_steps).map_err(runtime)?;

    let config_json = format!(
        "{{\"dataset\":{},\"network\":{}}}",
        serde_json::to_string(&args.dataset).map_err(runtime)?,
        serde_json::to_string(&args.network).map_err(runtime)?
    );
    let manifest = manifest_json("train", &config_json, args.network.seed);
    fs::write(out_dir.join("manifest.json"), manifest).map_err(runtime)?;
    Ok(vec![ckpt, out_dir.join("manifest.json")])
}

// ── matrix ──────────────────────────────────────────────────────────

pub fn cmd_matrix(job: &MatrixJob, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(job).map_err(runtime)?;
    job.grid
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if job.train_steps.is_empty() {
        return Err(CliError::config("train_steps must be non-empty"));
    }
    for a in &job.attacks {
        a.template
            .validate()
            .map_err(|e| CliError::config(format!("attack {:?}: {e}", a.name)))?;
    }

    let dataset = resolve_dataset(&job.dataset)?;
    let base = NetworkConfig {
        train_steps: 0,
        ..job.network.clone()
    };
    let (spec, init_state) = resolve_network(&base, &dataset)?;

    let mut checkpoints = Vec::with_capacity(job.train_steps.len());
    for &step in &job.train_steps {
        let state = train_to_step(&spec, &init_state, &dataset, step, job.network.train_lr)?;
        checkpoints.push((step, state));
    }

    let output = run_matrix(
        &job.grid,
        &job.attacks,
        &job.defenses,
        &spec,
        &checkpoints,
        &dataset,
        job.n,
        job.seed,
    )
    .map_err(runtime)?;

    let mut jsonl = String::new();
    for record in &output.records {
        jsonl.push_str(&record.to_json_line());
        jsonl.push('\n');
    }

    let mut outputs = OutputSet::new(out_dir);
    outputs.add("table.csv", output.table.to_csv_string());
    outputs.add("table.json", output.table.to_json_string());
    outputs.add("runs.jsonl", jsonl);
    outputs.add(
        "manifest.json",
        manifest_json("matrix", &config_json, job.seed),
    );
    outputs.write_all()
}

/// Desk-scale preset mirroring the attack-by-defense table setup: four
/// defenses, the Bayes attack plus the three gradient-matching attacks,
/// checkpoints at train steps 0 and 500.
pub fn table2_desk_preset(n: usize, seed: u64) -> MatrixJob {
    use leaklab_core::attacks::{AttackConfig, AttackInit, LabelStrategy, OptimizerKind};
    use leaklab_core::eval::{DatasetSpec, ExperimentGrid, NamedAttack};
    use leaklab_core::priors::PriorSpec;
    use std::collections::BTreeSet;

    let template = |conditional: Conditional| AttackConfig {
        k: 1,
        delta: 0.0,
        steps: 120,
        lr: 0.1,
        lr_decay: 1.0,
        beta: 0.01,
        init: AttackInit::GaussianNoise,
        conditional,
        prior: PriorSpec::TvAniso {
            image_shape: (8, 8),
        },
        layer_mask: BTreeSet::new(),
        label: LabelStrategy::Recover,
        optimizer: OptimizerKind::Adam,
        layer_weight_gamma: None,
        seed: 0,
    };

    MatrixJob {
        schema_version: crate::config::SCHEMA_VERSION,
        dataset: DatasetSpec::ToyDigits { seed: 0, size: 8 },
        network: NetworkConfig {
            layer_sizes: vec![64, 32, 10],
            seed: 0,
            train_steps: 0,
            train_lr: 0.05,
        },
        train_steps: vec![0, 500],
        defenses: vec![
            DefenseMechanism::Gaussian { sigma: 0.1 },
            DefenseMechanism::Laplacian { b: 0.1 },
            DefenseMechanism::PruneGaussian {
                prune_rate: 0.5,
                sigma: 0.1,
            },
            DefenseMechanism::PruneLaplacian {
                prune_rate: 0.5,
                b: 0.1,
            },
        ],
        attacks: vec![
            NamedAttack {
                name: "bayes".into(),
                template: template(Conditional::bayes()),
            },
            NamedAttack {
                name: "l2".into(),
                template: template(Conditional::L2),
            },
            NamedAttack {
                name: "l1".into(),
                template: template(Conditional::L1),
            },
            NamedAttack {
                name: "cosine".into(),
                template: template(Conditional::Cosine),
            },
        ],
        grid: ExperimentGrid {
            lrs: vec![0.05, 0.1],
            lr_decays: vec![1.0],
            betas: vec![1e-3, 1e-2, 1e-1],
            calibrate_betas: false,
            calibration_probes: 2,
            layer_weighting: vec![None],
        },
        n,
        seed,
    }
}

// ── risk ────────────────────────────────────────────────────────────

pub fn cmd_risk(job: &RiskJob, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(job).map_err(runtime)?;
    job.defense
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if let leaklab_core::eval::Attacker::Optimization { config } = &job.attacker {
        config
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let dataset = resolve_dataset(&job.dataset)?;
    let (spec, state) = resolve_network(&job.network, &dataset)?;
    let est = estimate_risk(
        &job.attacker,
        &job.defense,
        &spec,
        &state,
        &dataset,
        job.delta,
        job.trials,
        job.seed,
    )
    .map_err(runtime)?;

    let risk_json = format!(
        "{{\"risk\":{},\"trials\":{},\"delta\":{},\"stderr\":{},\"attacker_failures\":{}}}",
        json_float_or_string(est.risk),
        est.trials,
        json_float_or_string(est.delta),
        json_float_or_string(est.stderr),
        est.attacker_failures
    );

    let mut outputs = OutputSet::new(out_dir);
    outputs.add("risk.json", risk_json);
    outputs.add(
        "manifest.json",
        manifest_json("risk", &config_json, job.seed),
    );
    outputs.write_all()
}

// ── calibrate-beta ──────────────────────────────────────────────────

pub fn cmd_calibrate_beta(job: &CalibrateBetaJob, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(job).map_err(runtime)?;
    job.defense
        .validate()
        .and_then(|_| job.attack.validate())
        .map_err(|e| CliError::config(e.to_string()))?;
    if job.probes == 0 {
        return Err(CliError::config("probes must be >= 1"));
    }
    let dataset = resolve_dataset(&job.dataset)?;
    let (spec, state) = resolve_network(&job.network, &dataset)?;

    let probes: Vec<ProbeCase> = (0..job.probes)
        .map(|i| -> Result<ProbeCase, CliError> {
            let ex = dataset.example_at(i as u64).map_err(runtime)?;
            let (_, grad) = loss_and_param_grad(&spec, &state, &ex).map_err(runtime)?;
            let released = defenses::release(
                &job.defense,
                &grad,
                &state.segments,
                mix_seed(job.seed, i as u64),
            )
            .map_err(runtime)?;
            Ok(ProbeCase {
                released,
                x_orig: ex.x,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut template = job.attack.clone();
    template.seed = job.seed;
    let cal =
        calibrate_beta(&template, &spec, &state, &probes, dataset.max_val()).map_err(runtime)?;

    let mut table = String::from("[");
    for (i, (beta, p)) in cal.table.iter().enumerate() {
        if i > 0 {
            table.push(',');
        }
        let _ = write!(
            table,
            "[{},{}]",
            json_float_or_string(*beta),
            json_float_or_string(*p)
        );
    }
    table.push(']');
    let beta_json = format!(
        "{{\"beta_star\":{},\"range\":[{},{}],\"table\":{}}}",
        json_float_or_string(cal.beta_star),
        json_float_or_string(cal.range.0),
        json_float_or_string(cal.range.1),
        table
    );

    let mut outputs = OutputSet::new(out_dir);
    outputs.add("beta.json", beta_json);
    outputs.add(
        "manifest.json",
        manifest_json("calibrate-beta", &config_json, job.seed),
    );
    outputs.write_all()
}

// ── ablations ───────────────────────────────────────────────────────

pub fn cmd_synth_ablation(params: &SynthAblationParams, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(params).map_err(runtime)?;
    let variants = synthetic_ablation(params).map_err(runtime)?;

    let mut outputs = OutputSet::new(out_dir);
    let mut summary = String::from("{\"variants\":[");
    for (i, v) in variants.iter().enumerate() {
        let mut csv = String::from("step,mean_distance\n");
        for (step, d) in v.mean_distance.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", step, format_float(*d));
        }
        outputs.add(
            &format!(
                "trace_{}_prior_{}_cond.csv",
                v.prior_name, v.conditional_name
            ),
            csv,
        );
        if i > 0 {
            summary.push(',');
        }
        let _ = write!(
            summary,
            "{{\"prior\":\"{}\",\"conditional\":\"{}\",\"final_mean_distance\":{},\"final_stderr\":{}}}",
            v.prior_name,
            v.conditional_name,
            json_float_or_string(v.final_mean()),
            json_float_or_string(v.final_stderr())
        );
    }
    summary.push_str("]}");
    outputs.add("summary.json", summary);
    outputs.add(
        "manifest.json",
        manifest_json("synth-ablation", &config_json, params.seed),
    );
    outputs.write_all()
}

pub fn cmd_mc_ablation(params: &McAblationParams, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let config_json = serde_json::to_string(params).map_err(runtime)?;
    let result = mc_ablation(params).map_err(runtime)?;

    let mut outputs = OutputSet::new(out_dir);
    let mut summary = String::from("{");
    let _ = write!(
        summary,
        "\"delta\":{},\"ks\":[",
        json_float_or_string(result.delta)
    );
    for (i, t) in result.traces.iter().enumerate() {
        let mut csv = String::from("step,mean_psnr\n");
        for (step, p) in t.mean_psnr.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", step, format_float(*p));
        }
        outputs.add(&format!("trace_k{}.csv", t.k), csv);
        if i > 0 {
            summary.push(',');
        }
        let _ = write!(
            summary,
            "{{\"k\":{},\"final_mean_psnr\":{}}}",
            t.k,
            json_float_or_string(t.final_mean())
        );
    }
    summary.push_str("]}");
    outputs.add("summary.json", summary);
    outputs.add(
        "manifest.json",
        manifest_json("mc-ablation", &config_json, params.seed),
    );
    outputs.write_all()
}
