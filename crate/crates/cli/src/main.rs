//! `leaklab` — reconstruction attacks against gradient-sharing defenses,
//! from the command line. Every subcommand writes a manifest alongside its
//! outputs; rerunning with the same configuration reproduces the output
//! directory byte for byte.

mod config;
mod runner;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leaklab_core::attacks::{AttackConfig, AttackInit, Conditional, LabelStrategy, OptimizerKind};
use leaklab_core::defenses::DefenseMechanism;
use leaklab_core::eval::{DatasetSpec, McAblationParams, SynthAblationParams};
use leaklab_core::priors::PriorSpec;

use config::{parse_job, AttackJob, CalibrateBetaJob, MatrixJob, NetworkConfig, RiskJob};
use runner::{CliError, TrainArgs};

#[derive(Parser)]
#[command(name = "leaklab", version, about = "Gradient-leakage laboratory")]
struct Cli {
    /// Output directory (falls back to $LEAKLAB_OUT_DIR, then ./leaklab-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for matrix/ablation/risk runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Reconstruct one example from a released gradient.
    Attack(AttackArgs),
    /// Train an MLP checkpoint on a dataset stream.
    Train(TrainCliArgs),
    /// Attack x defense PSNR matrix with per-cell grid search.
    Matrix(MatrixArgs),
    /// Matched vs mismatched prior/conditional study on the synthetic task.
    SynthAblation(SynthAblationArgs),
    /// Monte Carlo sample-count ablation.
    McAblation(McAblationArgs),
    /// Adversarial risk estimate for an attacker/defense pair.
    Risk(RiskArgs),
    /// Log-scale beta sweep for an attack template.
    CalibrateBeta(CalibrateBetaArgs),
}

#[derive(Args)]
struct DatasetFlags {
    /// Dataset kind: toy_digits | synthetic.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    dataset_seed: Option<u64>,
}

impl DatasetFlags {
    fn apply(&self, base: DatasetSpec) -> Result<DatasetSpec, CliError> {
        let mut spec = match self.dataset.as_deref() {
            None => base,
            Some("toy_digits") => DatasetSpec::ToyDigits { seed: 0, size: 8 },
            Some("synthetic") => DatasetSpec::Synthetic {
                dim: 20,
                classes: 10,
                seed: 0,
            },
            Some(other) => {
                return Err(CliError::config(format!(
                    "unknown dataset {other:?} (idx datasets need a config file)"
                )))
            }
        };
        if let Some(s) = self.dataset_seed {
            match &mut spec {
                DatasetSpec::ToyDigits { seed, .. } => *seed = s,
                DatasetSpec::Synthetic { seed, .. } => *seed = s,
                DatasetSpec::Idx { .. } => {
                    return Err(CliError::config(
                        "--dataset-seed does not apply to idx datasets",
                    ))
                }
            }
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct NetworkFlags {
    /// Comma-separated layer widths, e.g. 64,32,10.
    #[arg(long)]
    layer_sizes: Option<String>,
    #[arg(long)]
    net_seed: Option<u64>,
    #[arg(long)]
    train_steps: Option<u64>,
    #[arg(long)]
    train_lr: Option<f64>,
}

impl NetworkFlags {
    fn apply(&self, mut cfg: NetworkConfig) -> Result<NetworkConfig, CliError> {
        if let Some(sizes) = &self.layer_sizes {
            cfg.layer_sizes = parse_usize_list(sizes)?;
        }
        if let Some(s) = self.net_seed {
            cfg.seed = s;
        }
        if let Some(s) = self.train_steps {
            cfg.train_steps = s;
        }
        if let Some(lr) = self.train_lr {
            cfg.train_lr = lr;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct AttackArgs {
    /// JSON job config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    network: NetworkFlags,

    #[arg(long)]
    example: Option<u64>,

    /// Defense kind: none | gaussian | laplacian | prune_gaussian |
    /// prune_laplacian | clip_gaussian | layer_perturb.
    #[arg(long)]
    defense: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    prune_rate: Option<f64>,
    #[arg(long)]
    clip_bound: Option<f64>,
    #[arg(long)]
    defended_layer: Option<usize>,
    #[arg(long)]
    perturb_mask_rate: Option<f64>,
    #[arg(long)]
    release_seed: Option<u64>,

    /// Conditional kind: bayes | l2 | l1 | cosine.
    #[arg(long)]
    conditional: Option<String>,
    /// Prior kind: uniform | gaussian_unit | laplacian_unit | tv_aniso |
    /// pixel_range | tv_plus_range (image shape comes from the dataset).
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    phi: Option<f64>,

    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Init kind: gaussian_noise | zeros.
    #[arg(long)]
    init: Option<String>,
    /// Fix the label instead of recovering it from the gradient.
    #[arg(long)]
    label_y: Option<usize>,
    /// Optimizer: adam | sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Comma-separated layer indices to drop from the gradient term.
    #[arg(long)]
    layer_mask: Option<String>,
    #[arg(long)]
    layer_weight_gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the reconstruction as an image-shaped CSV.
    #[arg(long)]
    write_image_csv: bool,
}

#[derive(Args)]
struct TrainCliArgs {
    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    network: NetworkFlags,
    /// SGD steps (0 echoes the initial checkpoint).
    #[arg(long, default_value_t = 0)]
    steps: u64,
    #[arg(long, default_value_t = config::default_train_lr())]
    lr: f64,
}

#[derive(Args)]
struct MatrixArgs {
    /// JSON job config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: table2-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Examples per cell.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthAblationArgs {
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 40)]
    trials: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0.975)]
    lr_decay: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct McAblationArgs {
    /// Comma-separated ascending sample counts.
    #[arg(long, default_value = "1,4,16")]
    k: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = 9.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 28)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RiskArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateBetaArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| CliError::config(format!("bad list entry {p:?}: {e}")))
        })
        .collect()
}

fn read_config(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))
}

fn default_attack_job() -> AttackJob {
    AttackJob {
        schema_version: config::SCHEMA_VERSION,
        dataset: DatasetSpec::ToyDigits { seed: 0, size: 8 },
        network: NetworkConfig {
            layer_sizes: vec![64, 32, 10],
            seed: 0,
            train_steps: 0,
            train_lr: config::default_train_lr(),
        },
        example_index: 0,
        defense: DefenseMechanism::None,
        attack: AttackConfig::basic(Conditional::bayes(), 200, 0.05, 0),
        write_image_csv: false,
        release_seed: 0,
    }
}

fn build_attack_job(args: &AttackArgs) -> Result<AttackJob, CliError> {
    let mut job = match &args.config {
        Some(path) => parse_job::<AttackJob>(&read_config(path)?).map_err(CliError::config)?,
        None => default_attack_job(),
    };

    job.dataset = args.dataset.apply(job.dataset)?;
    job.network = args.network.apply(job.network)?;
    if let Some(e) = args.example {
        job.example_index = e;
    }
    if let Some(s) = args.release_seed {
        job.release_seed = s;
    }
    if args.defense.is_some()
        || args.sigma.is_some()
        || args.b.is_some()
        || args.prune_rate.is_some()
        || args.clip_bound.is_some()
        || args.defended_layer.is_some()
        || args.perturb_mask_rate.is_some()
    {
        job.defense = defense_from_flags(args, &job.defense)?;
    }

    let a = &mut job.attack;
    if let Some(c) = &args.conditional {
        a.conditional = match c.as_str() {
            "bayes" => Conditional::bayes(),
            "l2" => Conditional::L2,
            "l1" => Conditional::L1,
            "cosine" => Conditional::Cosine,
            other => return Err(CliError::config(format!("unknown conditional {other:?}"))),
        };
    }
    if let Some(p) = &args.prior {
        let image_shape = match &job.dataset {
            DatasetSpec::ToyDigits { .. } => (8, 8),
            DatasetSpec::Idx { .. } => (28, 28),
            DatasetSpec::Synthetic { .. } => (0, 0),
        };
        a.prior = match p.as_str() {
            "uniform" => PriorSpec::Uniform,
            "gaussian_unit" => PriorSpec::GaussianUnit,
            "laplacian_unit" => PriorSpec::LaplacianUnit,
            "pixel_range" => PriorSpec::PixelRange,
            "tv_aniso" => PriorSpec::TvAniso { image_shape },
            "tv_plus_range" => PriorSpec::TvPlusRange {
                image_shape,
                phi: args.phi.unwrap_or(0.5),
            },
            other => return Err(CliError::config(format!("unknown prior {other:?}"))),
        };
    }
    if let Some(k) = args.k {
        a.k = k;
    }
    if let Some(d) = args.delta {
        a.delta = d;
    }
    if let Some(s) = args.steps {
        a.steps = s;
    }
    if let Some(lr) = args.lr {
        a.lr = lr;
    }
    if let Some(d) = args.lr_decay {
        a.lr_decay = d;
    }
    if let Some(b) = args.beta {
        a.beta = b;
    }
    if let Some(init) = &args.init {
        a.init = match init.as_str() {
            "gaussian_noise" => AttackInit::GaussianNoise,
            "zeros" => AttackInit::Zeros,
            other => return Err(CliError::config(format!("unknown init {other:?}"))),
        };
    }
    if let Some(y) = args.label_y {
        a.label = LabelStrategy::Known { y };
    }
    if let Some(opt) = &args.optimizer {
        a.optimizer = match opt.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(CliError::config(format!("unknown optimizer {other:?}"))),
        };
    }
    if let Some(mask) = &args.layer_mask {
        a.layer_mask = parse_usize_list(mask)?.into_iter().collect::<BTreeSet<_>>();
    }
    if let Some(g) = args.layer_weight_gamma {
        a.layer_weight_gamma = Some(g);
    }
    if let Some(s) = args.seed {
        a.seed = s;
    }
    if args.write_image_csv {
        job.write_image_csv = true;
    }
    Ok(job)
}

fn defense_from_flags(
    args: &AttackArgs,
    base: &DefenseMechanism,
) -> Result<DefenseMechanism, CliError> {
    let kind = args
        .defense
        .clone()
        .unwrap_or_else(|| base.kind_name().to_string());
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| CliError::config(format!("defense {kind:?} needs --{name}")))
    };
    Ok(match kind.as_str() {
        "none" => DefenseMechanism::None,
        "gaussian" => DefenseMechanism::Gaussian {
            sigma: need(args.sigma, "sigma")?,
        },
        "laplacian" => DefenseMechanism::Laplacian {
            b: need(args.b, "b")?,
        },
        "prune_gaussian" => DefenseMechanism::PruneGaussian {
            prune_rate: need(args.prune_rate, "prune-rate")?,
            sigma: need(args.sigma, "sigma")?,
        },
        "prune_laplacian" => DefenseMechanism::PruneLaplacian {
            prune_rate: need(args.prune_rate, "prune-rate")?,
            b: need(args.b, "b")?,
        },
        "clip_gaussian" => DefenseMechanism::ClipGaussian {
            clip_bound: need(args.clip_bound, "clip-bound")?,
            sigma: need(args.sigma, "sigma")?,
        },
        "layer_perturb" => DefenseMechanism::LayerPerturb {
            defended_layer: args
                .defended_layer
                .ok_or_else(|| CliError::config("layer_perturb needs --defended-layer"))?,
            perturb_mask_rate: need(args.perturb_mask_rate, "perturb-mask-rate")?,
        },
        other => return Err(CliError::config(format!("unknown defense {other:?}"))),
    })
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os("LEAKLAB_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("leaklab-out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    }
    let out = out_dir(&cli.out);

    let written = match &cli.command {
        Command::Attack(args) => {
            let job = build_attack_job(args)?;
            runner::cmd_attack(&job, &out)?
        }
        Command::Train(args) => {
            let dataset = args
                .dataset
                .apply(DatasetSpec::ToyDigits { seed: 0, size: 8 })?;
            let mut network = args.network.apply(NetworkConfig {
                layer_sizes: vec![64, 32, 10],
                seed: 0,
                train_steps: 0,
                train_lr: args.lr,
            })?;
            network.train_steps = args.network.train_steps.unwrap_or(args.steps);
            network.train_lr = args.train_lr();
            runner::cmd_train(&TrainArgs { dataset, network }, &out)?
        }
        Command::Matrix(args) => {
            let mut job = match (&args.config, &args.preset) {
                (Some(path), None) => {
                    parse_job::<MatrixJob>(&read_config(path)?).map_err(CliError::config)?
                }
                (None, Some(name)) if name == "table2-desk" => {
                    runner::table2_desk_preset(args.n.unwrap_or(10), args.seed.unwrap_or(0))
                }
                (None, Some(other)) => {
                    return Err(CliError::config(format!("unknown preset {other:?}")))
                }
                (Some(_), Some(_)) => {
                    return Err(CliError::config("--config and --preset are exclusive"))
                }
                (None, None) => return Err(CliError::config("matrix needs --config or --preset")),
            };
            if let Some(n) = args.n {
                job.n = n;
            }
            if let Some(s) = args.seed {
                job.seed = s;
            }
            runner::cmd_matrix(&job, &out)?
        }
        Command::SynthAblation(args) => {
            let params = SynthAblationParams {
                steps: args.steps,
                trials: args.trials,
                lr: args.lr,
                lr_decay: args.lr_decay,
                hidden: args.hidden,
                noise_scale: args.noise_scale,
                seed: args.seed,
            };
            runner::cmd_synth_ablation(&params, &out)?
        }
        Command::McAblation(args) => {
            let params = McAblationParams {
                ks: parse_usize_list(&args.k)?,
                trials: args.trials,
                steps: args.steps,
                lr: args.lr,
                lr_decay: args.lr_decay,
                delta: args.delta,
                sigma: args.sigma,
                hidden: args.hidden,
                beta: args.beta,
                image_size: args.image_size,
                seed: args.seed,
            };
            runner::cmd_mc_ablation(&params, &out)?
        }
        Command::Risk(args) => {
            let mut job =
                parse_job::<RiskJob>(&read_config(&args.config)?).map_err(CliError::config)?;
            if let Some(d) = args.delta {
                job.delta = d;
            }
            if let Some(t) = args.trials {
                job.trials = t;
            }
            if let Some(s) = args.seed {
                job.seed = s;
            }
            runner::cmd_risk(&job, &out)?
        }
        Command::CalibrateBeta(args) => {
            let mut job = parse_job::<CalibrateBetaJob>(&read_config(&args.config)?)
                .map_err(CliError::config)?;
            if let Some(p) = args.probes {
                job.probes = p;
            }
            if let Some(s) = args.seed {
                job.seed = s;
            }
            runner::cmd_calibrate_beta(&job, &out)?
        }
    };

    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

impl TrainCliArgs {
    fn train_lr(&self) -> f64 {
        self.network.train_lr.unwrap_or(self.lr)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code as u8)
        }
    }
}
