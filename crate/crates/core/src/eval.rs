//! Evaluation harness: adversarial risk, beta calibration, the
//! attack-by-defense PSNR matrix, and the synthetic / Monte Carlo ablations.
//!
//! Everything here is seeded and reproducible: work items get seeds derived
//! from the master seed and their stable indices, parallel execution changes
//! nothing, and serialized outputs are byte-identical across reruns (floats
//! written with 17 significant digits).

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, Conditional, LabelStrategy, ReconstructionResult};
use crate::data::{self, mix_seed, ImageDataset, SyntheticTask, SyntheticTaskSpec};
use crate::defenses::{self, DefenseMechanism, ReleasedGradient};
use crate::error::{Error, Result};
use crate::metrics::format_float;
pub use crate::metrics::psnr;
use crate::models::{loss_and_param_grad, LabeledExample, NetworkSpec, NetworkState};
use crate::priors::PriorSpec;
use crate::tensor::Tensor;

type Tensor64 = Tensor<f64>;
type State64 = NetworkState<f64>;
type Released64 = ReleasedGradient<f64>;

// ── datasets ────────────────────────────────────────────────────────

/// Serializable dataset selector for experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default)]
        seed: u64,
    },
    ToyDigits {
        #[serde(default)]
        seed: u64,
        /// Canvas width/height; 8 is native, 28 reproduces MNIST geometry.
        #[serde(default = "default_toy_size")]
        size: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_limit")]
        limit: usize,
    },
}

fn default_dim() -> usize {
    20
}
fn default_classes() -> usize {
    10
}
fn default_limit() -> usize {
    100
}
fn default_toy_size() -> usize {
    8
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::ToyDigits { seed: 0, size: 8 }
    }
}

/// Resolved dataset with unlimited deterministic indexing (finite image sets
/// cycle).
pub enum Dataset {
    Synthetic(SyntheticTask<f64>),
    Images {
        name: String,
        data: ImageDataset<f64>,
    },
}

impl Dataset {
    pub fn resolve(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Synthetic { dim, classes, seed } => Ok(Dataset::Synthetic(
                SyntheticTask::new(&SyntheticTaskSpec {
                    dim: *dim,
                    classes: *classes,
                    seed: *seed,
                })?,
            )),
            DatasetSpec::ToyDigits { seed, size } => Ok(Dataset::Images {
                name: "toy_digits".into(),
                data: data::toy_digits_sized(256, *seed, *size),
            }),
            DatasetSpec::Idx {
                images,
                labels,
                limit,
            } => Ok(Dataset::Images {
                name: "idx".into(),
                data: data::load_idx(images, labels, *limit)?,
            }),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Dataset::Synthetic(_) => "synthetic",
            Dataset::Images { name, .. } => name,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dataset::Synthetic(t) => t.dim,
            Dataset::Images { data, .. } => data.pixel_count(),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Dataset::Synthetic(t) => t.classes,
            Dataset::Images { data, .. } => data.class_count,
        }
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            Dataset::Synthetic(_) => None,
            Dataset::Images { data, .. } => Some(data.image_shape),
        }
    }

    pub fn max_val(&self) -> f64 {
        match self {
            Dataset::Synthetic(_) => 1.0,
            Dataset::Images { data, .. } => data.max_val,
        }
    }

    pub fn example_at(&self, index: u64) -> Result<LabeledExample<f64>> {
        match self {
            Dataset::Synthetic(t) => Ok(t.draw(index)),
            Dataset::Images { data, .. } => {
                if data.is_empty() {
                    return Err(Error::InvalidConfig("empty image dataset".into()));
                }
                data.example(index as usize % data.len())
            }
        }
    }
}

// ── adversarial risk ────────────────────────────────────────────────

/// Binomial estimate of `P[ ||x - f(g)||_2 > delta ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub trials: usize,
    pub delta: f64,
    pub stderr: f64,
    /// Attacker errors; each one counted as loss 1.
    pub attacker_failures: usize,
}

/// Reconstruction function under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Attacker {
    /// Closed-form first-layer inversion; needs an unperturbed first layer.
    Analytic,
    Optimization {
        config: AttackConfig,
    },
    /// Always answers the same point (sanity baseline).
    Constant {
        values: Vec<f64>,
    },
}

impl Attacker {
    pub fn name(&self) -> &'static str {
        match self {
            Attacker::Analytic => "analytic",
            Attacker::Optimization { .. } => "optimization",
            Attacker::Constant { .. } => "constant",
        }
    }

    pub fn reconstruct(
        &self,
        released: &Released64,
        spec: &NetworkSpec,
        state: &State64,
        trial_seed: u64,
    ) -> Result<Tensor64> {
        match self {
            Attacker::Analytic => Ok(crate::analytic::invert_released(released)?.x),
            Attacker::Optimization { config } => {
                let mut cfg = config.clone();
                cfg.seed = trial_seed;
                Ok(run_attack(&cfg, released, spec, state, None)?.x_hat)
            }
            Attacker::Constant { values } => Ok(Tensor::vector(values.clone())?),
        }
    }
}

/// Samples (x, y), releases a defended gradient, runs the attacker, and
/// counts reconstructions falling outside the delta ball. Deterministic per
/// seed; trials run in parallel with per-trial derived streams.
#[allow(clippy::too_many_arguments)]
pub fn estimate_risk(
    attacker: &Attacker,
    defense: &DefenseMechanism,
    spec: &NetworkSpec,
    state: &State64,
    dataset: &Dataset,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let outcomes: Vec<(bool, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<(bool, bool)> {
            let ex = dataset.example_at(t)?;
            let (_, grad) = loss_and_param_grad(spec, state, &ex)?;
            let released =
                defenses::release(defense, &grad, &state.segments, mix_seed(seed, 2 * t))?;
            match attacker.reconstruct(&released, spec, state, mix_seed(seed, 2 * t + 1)) {
                Ok(x_hat) => {
                    let miss = match ex.x.l2_distance(&x_hat) {
                        Ok(d) => d > delta,
                        Err(_) => true,
                    };
                    Ok((miss, false))
                }
                Err(_) => Ok((true, true)),
            }
        })
        .collect::<Result<_>>()?;

    let failures = outcomes.iter().filter(|(miss, _)| *miss).count();
    let attacker_failures = outcomes.iter().filter(|(_, err)| *err).count();
    let risk = failures as f64 / trials as f64;
    Ok(RiskEstimate {
        risk,
        trials,
        delta,
        stderr: (risk * (1.0 - risk) / trials as f64).sqrt(),
        attacker_failures,
    })
}

// ── beta calibration (log-scale sweep) ──────────────────────────────

/// The 13 decade points `1e-7 ..= 1e5`.
pub fn beta_grid() -> Vec<f64> {
    (-7..=5).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaCalibration {
    pub beta_star: f64,
    /// `[0.5 * beta_star, 2 * beta_star]`
    pub range: (f64, f64),
    /// (beta, mean PSNR) over the probe set, in grid order.
    pub table: Vec<(f64, f64)>,
}

/// One probe reconstruction target.
pub struct ProbeCase {
    pub released: Released64,
    pub x_orig: Tensor64,
}

/// Sweeps beta over [`beta_grid`] with every other template parameter fixed,
/// returning the argmax-PSNR value and the grid-search range around it.
/// Ties break toward the smallest beta.
pub fn calibrate_beta(
    template: &AttackConfig,
    spec: &NetworkSpec,
    state: &State64,
    probes: &[ProbeCase],
    max_val: f64,
) -> Result<BetaCalibration> {
    if probes.is_empty() {
        return Err(Error::InvalidConfig("empty probe set".into()));
    }
    let grid = beta_grid();
    let table: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&beta| -> Result<(f64, f64)> {
            let mut acc = 0.0;
            for (i, probe) in probes.iter().enumerate() {
                let mut cfg = template.clone();
                cfg.beta = beta;
                cfg.seed = mix_seed(template.seed, i as u64);
                let result = run_attack(&cfg, &probe.released, spec, state, Some(&probe.x_orig))?;
                acc += psnr(&probe.x_orig, &result.x_hat, max_val)?;
            }
            Ok((beta, acc / probes.len() as f64))
        })
        .collect::<Result<_>>()?;

    let mut best = table[0];
    for &(beta, score) in &table[1..] {
        if score > best.1 {
            best = (beta, score);
        }
    }
    if !best.1.is_finite() && best.1.is_nan() {
        return Err(Error::InvalidConfig("all calibration runs failed".into()));
    }
    Ok(BetaCalibration {
        beta_star: best.0,
        range: (0.5 * best.0, 2.0 * best.0),
        table,
    })
}

// ── grid search and the attack x defense matrix ─────────────────────

/// Hyperparameter axes expanded per matrix cell. Beta values may come from a
/// per-attack calibration pass, which runs before grid expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub lrs: Vec<f64>,
    pub lr_decays: Vec<f64>,
    /// Explicit beta axis; ignored when `calibrate_betas` is set.
    #[serde(default)]
    pub betas: Vec<f64>,
    /// When true, each attack's beta axis is `{0.5 b*, b*, 2 b*}` from
    /// [`calibrate_beta`] on `calibration_probes` probe images.
    #[serde(default)]
    pub calibrate_betas: bool,
    #[serde(default = "default_probes")]
    pub calibration_probes: usize,
    /// Layer-weighting axis: `None` = off, `Some(gamma)` = exponential
    /// per-segment weights (applies to l2/l1/cosine attacks only).
    #[serde(default = "default_weighting")]
    pub layer_weighting: Vec<Option<f64>>,
}

fn default_probes() -> usize {
    2
}
fn default_weighting() -> Vec<Option<f64>> {
    vec![None]
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() || self.lr_decays.is_empty() || self.layer_weighting.is_empty() {
            return Err(Error::InvalidConfig("empty grid axis".into()));
        }
        if self.betas.is_empty() && !self.calibrate_betas {
            return Err(Error::InvalidConfig(
                "either list betas or enable calibrate_betas".into(),
            ));
        }
        Ok(())
    }

    /// Small deterministic default for desk-scale runs.
    pub fn desk_default() -> Self {
        ExperimentGrid {
            lrs: vec![0.03, 0.1],
            lr_decays: vec![1.0, 0.99],
            betas: vec![1e-3, 1e-1, 1.0],
            calibrate_betas: false,
            calibration_probes: 2,
            layer_weighting: vec![None],
        }
    }

    /// Full-scale search: hundreds of combinations per attack (4 lr x 4
    /// decay x 10 beta x 3 weighting for the matching attacks); far too slow
    /// for CI, provided for long offline runs.
    pub fn full_preset() -> Self {
        ExperimentGrid {
            lrs: vec![0.3, 0.1, 0.03, 0.01],
            lr_decays: vec![1.0, 0.999, 0.99, 0.97],
            betas: (0..10).map(|i| 10f64.powf(-4.0 + i as f64)).collect(),
            calibrate_betas: false,
            calibration_probes: 4,
            layer_weighting: vec![None, Some(0.8), Some(1.25)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAttack {
    pub name: String,
    pub template: AttackConfig,
}

/// One attack run inside the matrix; persisted as JSON lines.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dataset: String,
    pub defense: String,
    pub attack: String,
    pub train_step: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub beta: f64,
    pub layer_gamma: Option<f64>,
    pub example: usize,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = String::from("{");
        s.push_str(&format!("\"dataset\":{}", json_str(&self.dataset)));
        s.push_str(&format!(",\"defense\":{}", json_str(&self.defense)));
        s.push_str(&format!(",\"attack\":{}", json_str(&self.attack)));
        s.push_str(&format!(",\"train_step\":{}", self.train_step));
        s.push_str(&format!(",\"lr\":{}", json_float(self.lr)));
        s.push_str(&format!(",\"lr_decay\":{}", json_float(self.lr_decay)));
        s.push_str(&format!(",\"beta\":{}", json_float(self.beta)));
        match self.layer_gamma {
            Some(g) => s.push_str(&format!(",\"layer_gamma\":{}", json_float(g))),
            None => s.push_str(",\"layer_gamma\":null"),
        }
        s.push_str(&format!(",\"example\":{}", self.example));
        s.push_str(&format!(",\"seed\":{}", self.seed));
        match self.psnr {
            Some(p) => s.push_str(&format!(",\"psnr\":{}", json_float(p))),
            None => s.push_str(",\"psnr\":null"),
        }
        match &self.error {
            Some(e) => s.push_str(&format!(",\"error\":{}", json_str(e))),
            None => s.push_str(",\"error\":null"),
        }
        s.push('}');
        s
    }
}

fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// JSON-compatible float with 17 significant digits; infinities as strings.
fn json_float(v: f64) -> String {
    if v.is_finite() {
        format_float(v)
    } else {
        format!("\"{}\"", format_float(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub dataset: String,
    pub defense: String,
    pub attack: String,
    pub train_step: u64,
    /// Best-over-grid mean PSNR over the first `n` examples; `None` when
    /// every run of every combination failed.
    pub mean_psnr: Option<f64>,
    pub n: usize,
    /// Failed runs within the winning combination.
    pub failures: usize,
    pub best_lr: f64,
    pub best_lr_decay: f64,
    pub best_beta: f64,
    pub best_layer_gamma: Option<f64>,
    pub failure_reason: Option<String>,
}

/// Attack x defense x checkpoint results, rows in deterministic key order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub cells: Vec<TableCell>,
    pub n: usize,
}

impl ResultTable {
    pub const CSV_HEADER: &'static str = "dataset,defense,attack,train_step,mean_psnr,n,failures";

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let psnr = match c.mean_psnr {
                Some(p) => format_float(p),
                None => "nan".into(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.dataset, c.defense, c.attack, c.train_step, psnr, c.n, c.failures
            ));
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        let mut out = String::from("{\"n\":");
        out.push_str(&self.n.to_string());
        out.push_str(",\"cells\":[");
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('{');
            out.push_str(&format!("\"dataset\":{}", json_str(&c.dataset)));
            out.push_str(&format!(",\"defense\":{}", json_str(&c.defense)));
            out.push_str(&format!(",\"attack\":{}", json_str(&c.attack)));
            out.push_str(&format!(",\"train_step\":{}", c.train_step));
            match c.mean_psnr {
                Some(p) => out.push_str(&format!(",\"mean_psnr\":{}", json_float(p))),
                None => out.push_str(",\"mean_psnr\":null"),
            }
            out.push_str(&format!(",\"n\":{}", c.n));
            out.push_str(&format!(",\"failures\":{}", c.failures));
            out.push_str(&format!(",\"best_lr\":{}", json_float(c.best_lr)));
            out.push_str(&format!(
                ",\"best_lr_decay\":{}",
                json_float(c.best_lr_decay)
            ));
            out.push_str(&format!(",\"best_beta\":{}", json_float(c.best_beta)));
            match c.best_layer_gamma {
                Some(g) => out.push_str(&format!(",\"best_layer_gamma\":{}", json_float(g))),
                None => out.push_str(",\"best_layer_gamma\":null"),
            }
            match &c.failure_reason {
                Some(r) => out.push_str(&format!(",\"failure_reason\":{}", json_str(r))),
                None => out.push_str(",\"failure_reason\":null"),
            }
            out.push('}');
        }
        out.push_str("]}");
        out
    }
}

pub struct MatrixOutput {
    pub table: ResultTable,
    pub records: Vec<RunRecord>,
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct Combo {
    lr: f64,
    lr_decay: f64,
    beta: f64,
    gamma: Option<f64>,
}

/// Runs every (defense, attack, checkpoint) cell: per cell, grid-search the
/// hyperparameters and report the best combination's mean PSNR over the first
/// `n` dataset examples. Released gradients are shared across attacks and
/// combinations within a (defense, checkpoint, example) triple so attacks
/// compete on identical observations.
#[allow(clippy::too_many_arguments)]
pub fn run_matrix(
    grid: &ExperimentGrid,
    attacks: &[NamedAttack],
    defenses: &[DefenseMechanism],
    spec: &NetworkSpec,
    checkpoints: &[(u64, State64)],
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> Result<MatrixOutput> {
    grid.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::InvalidConfig("no checkpoints".into()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    for d in defenses {
        d.validate()?;
    }

    // Beta axes, calibrated per attack before grid expansion when requested.
    let mut beta_axis: Vec<Vec<f64>> = Vec::with_capacity(attacks.len());
    for (ai, attack) in attacks.iter().enumerate() {
        if grid.calibrate_betas {
            let (step, state) = &checkpoints[0];
            let defense = &defenses[0];
            let probes: Vec<ProbeCase> = (0..grid.calibration_probes.max(1))
                .map(|i| -> Result<ProbeCase> {
                    let ex = dataset.example_at(i as u64)?;
                    let (_, g) = loss_and_param_grad(spec, state, &ex)?;
                    let released = defenses::release(
                        defense,
                        &g,
                        &state.segments,
                        mix_seed(seed, mix_seed(0xCA11B, mix_seed(*step, i as u64))),
                    )?;
                    Ok(ProbeCase {
                        released,
                        x_orig: ex.x,
                    })
                })
                .collect::<Result<_>>()?;
            let mut template = attack.template.clone();
            template.seed = mix_seed(seed, ai as u64);
            let cal = calibrate_beta(&template, spec, state, &probes, dataset.max_val())?;
            beta_axis.push(vec![cal.range.0, cal.beta_star, cal.range.1]);
        } else {
            beta_axis.push(grid.betas.clone());
        }
    }

    // Shared released gradients per (defense, checkpoint, example).
    let mut released: Vec<Vec<Vec<Released64>>> = Vec::with_capacity(defenses.len());
    for (di, defense) in defenses.iter().enumerate() {
        let mut per_step = Vec::with_capacity(checkpoints.len());
        for (si, (step, state)) in checkpoints.iter().enumerate() {
            let per_example: Vec<Released64> = (0..n)
                .map(|i| -> Result<Released64> {
                    let ex = dataset.example_at(i as u64)?;
                    let (_, g) = loss_and_param_grad(spec, state, &ex)?;
                    defenses::release(
                        defense,
                        &g,
                        &state.segments,
                        mix_seed(
                            seed,
                            mix_seed(di as u64, mix_seed(si as u64 ^ step, i as u64)),
                        ),
                    )
                })
                .collect::<Result<_>>()?;
            per_step.push(per_example);
        }
        released.push(per_step);
    }

    // Flatten all runs into parallel work items.
    struct Item {
        di: usize,
        ai: usize,
        si: usize,
        example: usize,
        combo: Combo,
        seed: u64,
    }
    let mut items = Vec::new();
    for (di, _) in defenses.iter().enumerate() {
        for (ai, attack) in attacks.iter().enumerate() {
            let combos = expand_combos(grid, &beta_axis[ai], &attack.template);
            for (si, _) in checkpoints.iter().enumerate() {
                for (ci, combo) in combos.iter().enumerate() {
                    for example in 0..n {
                        let s = mix_seed(
                            seed,
                            mix_seed(
                                di as u64,
                                mix_seed(
                                    ai as u64,
                                    mix_seed(si as u64, mix_seed(ci as u64, example as u64)),
                                ),
                            ),
                        );
                        items.push(Item {
                            di,
                            ai,
                            si,
                            example,
                            combo: *combo,
                            seed: s,
                        });
                    }
                }
            }
        }
    }

    let results: Vec<(usize, RunRecord)> = items
        .par_iter()
        .enumerate()
        .map(|(idx, item)| -> Result<(usize, RunRecord)> {
            let attack = &attacks[item.ai];
            let (step, state) = &checkpoints[item.si];
            let rel = &released[item.di][item.si][item.example];
            let ex = dataset.example_at(item.example as u64)?;
            let mut cfg = attack.template.clone();
            cfg.lr = item.combo.lr;
            cfg.lr_decay = item.combo.lr_decay;
            cfg.beta = item.combo.beta;
            cfg.layer_weight_gamma = item.combo.gamma;
            cfg.seed = item.seed;
            let (psnr_val, error) = match run_attack(&cfg, rel, spec, state, Some(&ex.x)) {
                Ok(r) => (Some(psnr(&ex.x, &r.x_hat, dataset.max_val())?), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok((
                idx,
                RunRecord {
                    dataset: dataset.name().into(),
                    defense: defenses[item.di].kind_name().into(),
                    attack: attack.name.clone(),
                    train_step: *step,
                    lr: item.combo.lr,
                    lr_decay: item.combo.lr_decay,
                    beta: item.combo.beta,
                    layer_gamma: item.combo.gamma,
                    example: item.example,
                    seed: item.seed,
                    psnr: psnr_val,
                    error,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<(usize, RunRecord)> = results;
    records.sort_by_key(|(idx, _)| *idx);
    let records: Vec<RunRecord> = records.into_iter().map(|(_, r)| r).collect();

    // Aggregate: per cell, per combo, mean PSNR over examples; keep the best
    // combo (first in expansion order wins ties, axes are listed ascending).
    let mut cells = Vec::new();
    let mut cursor = 0usize;
    for (di, defense) in defenses.iter().enumerate() {
        for (ai, attack) in attacks.iter().enumerate() {
            let combos = expand_combos(grid, &beta_axis[ai], &attack.template);
            for (si, (step, _)) in checkpoints.iter().enumerate() {
                let mut best: Option<(Combo, f64, usize)> = None;
                for combo in &combos {
                    let runs = &records[cursor..cursor + n];
                    cursor += n;
                    let ok: Vec<f64> = runs.iter().filter_map(|r| r.psnr).collect();
                    let failures = n - ok.len();
                    if ok.is_empty() {
                        continue;
                    }
                    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
                    let better = match &best {
                        None => true,
                        Some((_, b, _)) => mean > *b,
                    };
                    if better {
                        best = Some((*combo, mean, failures));
                    }
                }
                let cell = match best {
                    Some((combo, mean, failures)) => TableCell {
                        dataset: dataset.name().into(),
                        defense: defense.kind_name().into(),
                        attack: attack.name.clone(),
                        train_step: *step,
                        mean_psnr: Some(mean),
                        n,
                        failures,
                        best_lr: combo.lr,
                        best_lr_decay: combo.lr_decay,
                        best_beta: combo.beta,
                        best_layer_gamma: combo.gamma,
                        failure_reason: None,
                    },
                    None => TableCell {
                        dataset: dataset.name().into(),
                        defense: defense.kind_name().into(),
                        attack: attack.name.clone(),
                        train_step: *step,
                        mean_psnr: None,
                        n,
                        failures: n,
                        best_lr: f64::NAN,
                        best_lr_decay: f64::NAN,
                        best_beta: f64::NAN,
                        best_layer_gamma: None,
                        failure_reason: Some("every grid combination failed".into()),
                    },
                };
                let _ = (di, si);
                cells.push(cell);
            }
        }
    }

    cells.sort_by(|a, b| {
        (&a.dataset, &a.defense, &a.attack, a.train_step).cmp(&(
            &b.dataset,
            &b.defense,
            &b.attack,
            b.train_step,
        ))
    });

    Ok(MatrixOutput {
        table: ResultTable { cells, n },
        records,
    })
}

fn expand_combos(grid: &ExperimentGrid, betas: &[f64], template: &AttackConfig) -> Vec<Combo> {
    // Layer weighting only applies to the gradient-matching conditionals.
    let weighting: &[Option<f64>] = match template.conditional {
        Conditional::Bayes { .. } => &[None],
        _ => &grid.layer_weighting,
    };
    let mut lrs = grid.lrs.clone();
    let mut decays = grid.lr_decays.clone();
    let mut betas = betas.to_vec();
    lrs.sort_by(f64::total_cmp);
    decays.sort_by(f64::total_cmp);
    betas.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(lrs.len() * decays.len() * betas.len() * weighting.len());
    for &lr in &lrs {
        for &lr_decay in &decays {
            for &beta in &betas {
                for &gamma in weighting {
                    out.push(Combo {
                        lr,
                        lr_decay,
                        beta,
                        gamma,
                    });
                }
            }
        }
    }
    out
}

// ── synthetic ablation (matched vs mismatched attacks) ──────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAblationParams {
    pub steps: usize,
    pub trials: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub hidden: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthAblationParams {
    fn default() -> Self {
        SynthAblationParams {
            steps: 200,
            trials: 40,
            lr: 0.5,
            lr_decay: 0.975,
            hidden: 32,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantTrace {
    pub prior_name: String,
    pub conditional_name: String,
    /// Mean over trials of `||x_step - x_orig||_2`, one entry per step.
    pub mean_distance: Vec<f64>,
    pub final_distances: Vec<f64>,
}

impl VariantTrace {
    pub fn final_mean(&self) -> f64 {
        *self.mean_distance.last().unwrap()
    }

    pub fn final_stderr(&self) -> f64 {
        let n = self.final_distances.len() as f64;
        let mean = self.final_mean();
        let var = self
            .final_distances
            .iter()
            .map(|d| (d - mean) * (d - mean))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }
}

/// The 2x2 {Gaussian, Laplacian} prior x conditional study on the synthetic
/// Gaussian task: 20-dim unit-Gaussian inputs, label `argmax(Wx)`, a 2-layer
/// MLP defended with Laplacian noise. The matched attack is the Gaussian
/// prior with the Laplacian conditional. All four variants share the per-
/// trial init and released gradient.
pub fn synthetic_ablation(params: &SynthAblationParams) -> Result<Vec<VariantTrace>> {
    if params.trials < 1 || params.steps < 1 {
        return Err(Error::InvalidConfig("trials and steps must be >= 1".into()));
    }
    let task = SyntheticTask::<f64>::new(&SyntheticTaskSpec {
        dim: 20,
        classes: 10,
        seed: mix_seed(params.seed, 0xDA7A),
    })?;
    let spec = NetworkSpec::new(vec![20, params.hidden, 10], mix_seed(params.seed, 0x4E7))?;
    let state = crate::models::init_parameters::<f64>(&spec);
    let defense = DefenseMechanism::Laplacian {
        b: params.noise_scale,
    };

    let variants: Vec<(PriorSpec, DefenseMechanism, &str, &str)> = vec![
        (
            PriorSpec::GaussianUnit,
            DefenseMechanism::Gaussian {
                sigma: params.noise_scale,
            },
            "gaussian",
            "gaussian",
        ),
        (
            PriorSpec::GaussianUnit,
            DefenseMechanism::Laplacian {
                b: params.noise_scale,
            },
            "gaussian",
            "laplacian",
        ),
        (
            PriorSpec::LaplacianUnit,
            DefenseMechanism::Gaussian {
                sigma: params.noise_scale,
            },
            "laplacian",
            "gaussian",
        ),
        (
            PriorSpec::LaplacianUnit,
            DefenseMechanism::Laplacian {
                b: params.noise_scale,
            },
            "laplacian",
            "laplacian",
        ),
    ];

    // trial-major results so every variant sees identical trials
    let per_trial: Vec<Vec<ReconstructionResult<f64>>> = (0..params.trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<ReconstructionResult<f64>>> {
            let ex = task.draw(mix_seed(params.seed, t));
            let (_, grad) = loss_and_param_grad(&spec, &state, &ex)?;
            let released = defenses::release(
                &defense,
                &grad,
                &state.segments,
                mix_seed(params.seed, mix_seed(0x5EED, t)),
            )?;
            variants
                .iter()
                .map(|(prior, assumed, _, _)| {
                    let mut cfg = AttackConfig::basic(
                        Conditional::Bayes {
                            assumed_defense: Some(assumed.clone()),
                        },
                        params.steps,
                        params.lr,
                        mix_seed(params.seed, mix_seed(0x1417, t)),
                    );
                    cfg.lr_decay = params.lr_decay;
                    cfg.prior = prior.clone();
                    cfg.beta = 1.0;
                    cfg.label = LabelStrategy::Known { y: ex.y };
                    run_attack(&cfg, &released, &spec, &state, Some(&ex.x))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(variants.len());
    for (vi, (_, _, prior_name, cond_name)) in variants.iter().enumerate() {
        let mut mean_distance = vec![0.0; params.steps];
        let mut final_distances = Vec::with_capacity(params.trials);
        for trial in &per_trial {
            let trace = trial[vi].distance_trace.as_ref().expect("x_orig supplied");
            for (m, d) in mean_distance.iter_mut().zip(trace) {
                *m += d;
            }
            final_distances.push(*trace.last().unwrap());
        }
        for m in mean_distance.iter_mut() {
            *m /= params.trials as f64;
        }
        out.push(VariantTrace {
            prior_name: prior_name.to_string(),
            conditional_name: cond_name.to_string(),
            mean_distance,
            final_distances,
        });
    }
    Ok(out)
}

// ── Monte Carlo sample-count ablation ───────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McAblationParams {
    pub ks: Vec<usize>,
    pub trials: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub delta: f64,
    pub sigma: f64,
    pub hidden: usize,
    pub beta: f64,
    /// Digit canvas size; 28 puts the delta = 9 ball at the per-pixel scale
    /// the trend is observable at.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for McAblationParams {
    fn default() -> Self {
        McAblationParams {
            ks: vec![1, 4, 16],
            trials: 20,
            steps: 200,
            lr: 0.1,
            lr_decay: 1.0,
            delta: 9.0,
            sigma: 0.1,
            hidden: 16,
            beta: 1e-2,
            image_size: 28,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KTrace {
    pub k: usize,
    /// Mean PSNR per step, derived from the distance traces.
    pub mean_psnr: Vec<f64>,
    pub final_per_trial: Vec<f64>,
}

impl KTrace {
    pub fn final_mean(&self) -> f64 {
        *self.mean_psnr.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct McAblationResult {
    pub delta: f64,
    pub traces: Vec<KTrace>,
}

/// PSNR-vs-step curves for increasing Monte Carlo sample counts on 8x8 digit
/// images under a Gaussian defense, all trials paired across `k`.
pub fn mc_ablation(params: &McAblationParams) -> Result<McAblationResult> {
    if params.ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "k values must be strictly ascending".into(),
        ));
    }
    if params.trials < 1 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let dataset = data::toy_digits_sized::<f64>(
        params.trials.max(10),
        mix_seed(params.seed, 0xD161),
        params.image_size,
    );
    let npix = dataset.pixel_count();
    let spec = NetworkSpec::new(
        vec![npix, params.hidden, dataset.class_count],
        mix_seed(params.seed, 0x4E7),
    )?;
    let state = crate::models::init_parameters::<f64>(&spec);
    let defense = DefenseMechanism::Gaussian {
        sigma: params.sigma,
    };
    let image_shape = dataset.image_shape;

    let per_trial: Vec<Vec<Vec<f64>>> = (0..params.trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec<f64>>> {
            let ex = dataset.example(t as usize % dataset.len())?;
            let (_, grad) = loss_and_param_grad(&spec, &state, &ex)?;
            let released = defenses::release(
                &defense,
                &grad,
                &state.segments,
                mix_seed(params.seed, mix_seed(0x5EED, t)),
            )?;
            params
                .ks
                .iter()
                .map(|&k| -> Result<Vec<f64>> {
                    let mut cfg = AttackConfig::basic(
                        Conditional::bayes(),
                        params.steps,
                        params.lr,
                        mix_seed(params.seed, mix_seed(0x1417, t)),
                    );
                    cfg.k = k;
                    cfg.delta = params.delta;
                    cfg.lr_decay = params.lr_decay;
                    cfg.prior = PriorSpec::TvAniso { image_shape };
                    cfg.beta = params.beta;
                    cfg.label = LabelStrategy::Known { y: ex.y };
                    let result = run_attack(&cfg, &released, &spec, &state, Some(&ex.x))?;
                    Ok(result.distance_trace.expect("x_orig supplied"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let to_psnr = |dist: f64| -> f64 {
        let mse = dist * dist / npix as f64;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        }
    };

    let mut traces = Vec::with_capacity(params.ks.len());
    for (ki, &k) in params.ks.iter().enumerate() {
        let mut mean_psnr = vec![0.0; params.steps];
        let mut final_per_trial = Vec::with_capacity(params.trials);
        for trial in &per_trial {
            for (m, &d) in mean_psnr.iter_mut().zip(&trial[ki]) {
                *m += to_psnr(d);
            }
            final_per_trial.push(to_psnr(*trial[ki].last().unwrap()));
        }
        for m in mean_psnr.iter_mut() {
            *m /= params.trials as f64;
        }
        traces.push(KTrace {
            k,
            mean_psnr,
            final_per_trial,
        });
    }
    Ok(McAblationResult {
        delta: params.delta,
        traces,
    })
}

/// Paired mean and standard error of `a - b`.
pub fn paired_diff_stats(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
