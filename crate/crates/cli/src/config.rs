//! Job configuration schemas, strict validation, and run manifests.
//!
//! Configs are JSON with `schema_version: 1` and hard unknown-key rejection,
//! including keys smuggled next to parameterless `kind` variants (which serde
//! alone cannot catch for internally tagged enums). A config that fails
//! validation never produces any output file.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use leaklab_core::attacks::AttackConfig;
use leaklab_core::defenses::DefenseMechanism;
use leaklab_core::eval::{Attacker, DatasetSpec, ExperimentGrid, NamedAttack};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// SGD steps on the dataset stream before the experiment (0 = at init).
    #[serde(default)]
    pub train_steps: u64,
    #[serde(default = "default_train_lr")]
    pub train_lr: f64,
}

pub fn default_train_lr() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackJob {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    #[serde(default)]
    pub example_index: u64,
    pub defense: DefenseMechanism,
    pub attack: AttackConfig,
    /// Also write the reconstruction as an image-shaped CSV.
    #[serde(default)]
    pub write_image_csv: bool,
    /// Seed for the defense's noise draw.
    #[serde(default)]
    pub release_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJob {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub train_steps: Vec<u64>,
    pub defenses: Vec<DefenseMechanism>,
    pub attacks: Vec<NamedAttack>,
    pub grid: ExperimentGrid,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskJob {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub defense: DefenseMechanism,
    pub attacker: Attacker,
    pub delta: f64,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBetaJob {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub defense: DefenseMechanism,
    pub attack: AttackConfig,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_probes() -> usize {
    2
}

/// Parses and validates a job config: schema version, unknown keys (including
/// around tagged enums), then the typed deserialization.
pub fn parse_job<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, String> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    match value.get("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(u64::from(SCHEMA_VERSION)) => {}
        Some(other) => {
            return Err(format!(
                "unsupported schema_version {other}, this build reads {SCHEMA_VERSION}"
            ))
        }
        None => return Err("config is missing schema_version".into()),
    }
    check_tagged_keys(&value)?;
    serde_json::from_value(value).map_err(|e| format!("config rejected: {e}"))
}

/// Allowed keys (besides `kind`) for every tagged-enum kind in the schema.
fn allowed_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        // defenses
        "none" => &[],
        "gaussian" => &["sigma"],
        "laplacian" => &["b"],
        "prune_gaussian" => &["prune_rate", "sigma"],
        "prune_laplacian" => &["prune_rate", "b"],
        "clip_gaussian" => &["clip_bound", "sigma"],
        "layer_perturb" => &["defended_layer", "perturb_mask_rate"],
        // priors
        "uniform" => &[],
        "gaussian_unit" => &[],
        "laplacian_unit" => &[],
        "tv_aniso" => &["image_shape"],
        "pixel_range" => &[],
        "tv_plus_range" => &["image_shape", "phi"],
        // conditionals
        "bayes" => &["assumed_defense"],
        "l2" => &[],
        "l1" => &[],
        "cosine" => &[],
        // attack init
        "gaussian_noise" => &[],
        "zeros" => &[],
        "provided" => &["values"],
        // label strategies
        "known" => &["y"],
        "recover" => &[],
        "recover_or_joint" => &[],
        // datasets
        "synthetic" => &["dim", "classes", "seed"],
        "toy_digits" => &["seed", "size"],
        "idx" => &["images", "labels", "limit"],
        // attackers
        "analytic" => &[],
        "optimization" => &["config"],
        "constant" => &["values"],
        _ => return None,
    })
}

/// Recursively rejects unknown keys in any object carrying a known `kind`.
fn check_tagged_keys(value: &Value) -> Result<(), String> {
    match value {
        Value::Object(map) => {
            if let Some(Value::String(kind)) = map.get("kind") {
                if let Some(allowed) = allowed_keys(kind) {
                    for key in map.keys() {
                        if key != "kind" && !allowed.contains(&key.as_str()) {
                            return Err(format!(
                                "unknown key {key:?} for kind {kind:?} (allowed: {allowed:?})"
                            ));
                        }
                    }
                }
            }
            for v in map.values() {
                check_tagged_keys(v)?;
            }
            Ok(())
        }
        Value::Array(items) => {
            for v in items {
                check_tagged_keys(v)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

// ── manifests ───────────────────────────────────────────────────────

/// FNV-1a 64-bit over the canonical config JSON.
pub fn config_hash(config_json: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in config_json.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Written alongside every command's outputs; rerunning the command with the
/// embedded config reproduces the output directory byte for byte.
pub fn manifest_json(command: &str, config_json: &str, seed: u64) -> String {
    format!(
        "{{\"schema_version\":{},\"command\":\"{}\",\"version\":\"{}\",\"seed\":{},\"config_hash\":\"{}\",\"config\":{}}}",
        SCHEMA_VERSION,
        command,
        env!("CARGO_PKG_VERSION"),
        seed,
        config_hash(config_json),
        config_json,
    )
}
