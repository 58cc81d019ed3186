//! Subcommands of the `mediate-lab` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use mediate_core::datagen::{load_dataset_csv_inferred, Dataset};
use mediate_core::effects::{estimate_effects, posterior_means, prior_samples, DEFAULT_MC_DRAWS};
use mediate_core::experiment::{
    bench_tsv, generate, run_ablation, run_bench, Ablation, ExperimentSpec, Scenario,
};
use mediate_core::imavae::ImavaeModel;
use mediate_core::numkit::{streams, RngStream};
use mediate_core::trainer::{sha256_hex, train};

pub const THREADS_ENV: &str = "MEDIATE_LAB_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mediate_core::error::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mediate-lab", version, about = "Causal mediation experiments with an identifiable VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset and its ground truth.
    Gen(ExperimentArgs),
    /// Fit a model to a dataset CSV.
    Train(TrainArgs),
    /// Estimate ACME, ADE and ATE from a fitted model.
    Estimate(EstimateArgs),
    /// Export sampled prior and posterior-mean latents per row.
    Latents(LatentArgs),
    /// Ablation error table over replicates.
    Ablate(ExperimentArgs),
    /// Estimator comparison over a benchmark grid.
    Bench(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// synth-a, synth-b, highdim, jobs-sim or csv.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Experiment spec JSON; unspecified fields keep the scenario preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Primary output file; sibling files share its stem.
    #[arg(long)]
    pub out: PathBuf,
    /// Input CSV for `csv`, or a jobs base CSV for `jobs-sim`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Selection strength for `jobs-sim`.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Sample size of the generated data.
    #[arg(long)]
    pub n: Option<usize>,
    /// Target share of mediated rows for `jobs-sim`.
    #[arg(long = "mediated-frac")]
    pub mediated_frac: Option<f64>,
    /// Comma-separated subset of full, no-recon, no-elbo.
    #[arg(long, value_delimiter = ',')]
    pub ablations: Option<Vec<Ablation>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Monte-Carlo draws per effect estimate.
    #[arg(long)]
    pub mc: Option<usize>,
    /// Worker threads, capped by MEDIATE_LAB_THREADS.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario whose training preset is used.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    pub mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Latents(a) => cmd_latents(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Thread budget: `--jobs`, else the machine, capped by the environment.
pub fn thread_budget(requested: Option<usize>) -> usize {
    let machine = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0);
    let n = requested.unwrap_or(machine).max(1);
    cap.map_or(n, |c| n.min(c))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Builds the spec from the scenario preset, the config file and flags.
pub fn resolve_spec(args: &ExperimentArgs, fallback: Scenario) -> CliResult<ExperimentSpec> {
    let patch: Option<Value> = match &args.config {
        Some(p) => Some(serde_json::from_str(&read_text(p)?)?),
        None => None,
    };
    let mut spec = ExperimentSpec::from_preset_patch(args.scenario, patch, fallback)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(d) = &args.data {
        spec.data = Some(d.clone());
    }
    if let Some(eta) = args.eta {
        spec.jobs.eta = eta;
        spec.jobs_grid.eta = vec![eta];
    }
    if let Some(frac) = args.mediated_frac {
        spec.jobs.mediated_fraction = frac;
        spec.jobs_grid.mediated_fraction = vec![frac];
    }
    if let Some(n) = args.n {
        spec.synth_a.n = n;
        spec.synth_b.n = n;
        spec.highdim.n = n;
        spec.jobs.n = n;
        spec.jobs_grid.n = vec![n];
    }
    if let Some(a) = &args.ablations {
        spec.ablations = a.clone();
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(mc) = args.mc {
        spec.mc_draws = mc;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// Output set that is either written completely or not at all.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a Value,
    metadata: Value,
    artifacts: Vec<ArtifactEntry>,
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

/// `out` with its extension replaced by `suffix`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

impl Artifacts {
    pub fn add(&mut self, path: PathBuf, bytes: impl Into<Vec<u8>>) {
        self.files.push((path, bytes.into()));
    }

    /// Adds the manifest next to `primary` and writes everything through
    /// temporary files renamed into place.
    pub fn commit(
        mut self,
        command: &str,
        primary: &Path,
        config: &Value,
        seed: u64,
        metadata: Value,
    ) -> CliResult<()> {
        let config_text = serde_json::to_string(config)?;
        let artifacts = self
            .files
            .iter()
            .map(|(p, b)| ArtifactEntry {
                path: p.file_name().map_or_else(
                    || p.display().to_string(),
                    |f| f.to_string_lossy().into_owned(),
                ),
                sha256: sha256_hex(b),
                bytes: b.len(),
            })
            .collect();
        let manifest = Manifest {
            command,
            config_hash: sha256_hex(config_text.as_bytes()),
            seed,
            config,
            metadata,
            artifacts,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.add(sibling(primary, "manifest.json"), text);

        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
            tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
            tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
        }
        Ok(())
    }
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!("data file {} does not exist", path.display())));
    }
    Ok(load_dataset_csv_inferred(path)?)
}

fn load_model(path: &Path) -> CliResult<ImavaeModel> {
    if !path.exists() {
        return Err(CliError::Usage(format!("model file {} does not exist", path.display())));
    }
    Ok(ImavaeModel::load(path)?)
}

fn cmd_gen(a: &ExperimentArgs) -> CliResult<()> {
    let spec = resolve_spec(a, Scenario::SynthA)?;
    let g = generate(&spec, spec.seed)?;
    let mut out = Artifacts::default();
    out.add(a.out.clone(), g.dataset.to_csv_string()?);
    if let Some(truth) = &g.truth {
        out.add(sibling(&a.out, "truth.json"), truth.to_json()?);
    }
    out.commit("gen", &a.out, &serde_json::to_value(&spec)?, spec.seed, g.metadata)
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let args = ExperimentArgs {
        scenario: a.scenario,
        config: a.config.clone(),
        seed: a.seed,
        out: a.out.clone(),
        data: None,
        eta: None,
        n: None,
        mediated_frac: None,
        ablations: None,
        replicates: None,
        mc: None,
        jobs: None,
    };
    let spec = resolve_spec(&args, Scenario::SynthA)?;
    let mut cfg = spec.train_config(spec.seed);
    let ds = load_data(&a.data)?;
    if spec.scenario == Scenario::JobsSim {
        cfg.latent_dim = ds.z_dim().max(1);
    }
    let (model, report) = train(&ds, &cfg)?;
    let mut out = Artifacts::default();
    out.add(a.out.clone(), model.to_json()?);
    out.add(sibling(&a.out, "loss.tsv"), report.to_tsv_string());
    let meta = serde_json::json!({
        "rows": ds.n(),
        "model_checksum": report.model_checksum,
        "final_total_loss": report.epochs.last().map(|e| e.total),
    });
    out.commit("train", &a.out, &serde_json::to_value(&cfg)?, cfg.seed, meta)
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    if a.mc == 0 {
        return Err(CliError::Usage("--mc must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let ds = load_data(&a.data)?;
    let report = estimate_effects(&model, &ds, a.mc, a.seed)?;
    let mut out = Artifacts::default();
    out.add(a.out.clone(), report.to_json()?);
    let cfg = serde_json::json!({ "mc_draws": a.mc, "seed": a.seed });
    out.commit("estimate", &a.out, &cfg, a.seed, Value::Null)
}

/// Per-row `t`, one prior draw given the row's auxiliary variables and the
/// posterior mean.
pub fn latents_csv(model: &ImavaeModel, ds: &Dataset, seed: u64) -> CliResult<String> {
    let mut rng = RngStream::new(seed, streams::DIAGNOSTICS);
    let prior = prior_samples(model, ds, &mut rng)?;
    let post = posterior_means(model, ds)?;
    let d = post.cols();
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("prior_z{j}")));
    header.extend((0..d).map(|j| format!("post_z{j}")));
    w.write_record(&header).map_err(mediate_core::error::Error::from)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.t()[i].to_string()];
        rec.extend(prior.row(i).iter().map(|v| v.to_string()));
        rec.extend(post.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(mediate_core::error::Error::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Usage(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_latents(a: &LatentArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let ds = load_data(&a.data)?;
    let text = latents_csv(&model, &ds, a.seed)?;
    let mut out = Artifacts::default();
    out.add(a.out.clone(), text);
    let cfg = serde_json::json!({ "seed": a.seed });
    out.commit("latents", &a.out, &cfg, a.seed, serde_json::json!({ "rows": ds.n() }))
}

fn cmd_ablate(a: &ExperimentArgs) -> CliResult<()> {
    let spec = resolve_spec(a, Scenario::SynthA)?;
    let run = run_ablation(&spec, thread_budget(a.jobs))?;
    let mut out = Artifacts::default();
    out.add(a.out.clone(), run.table.to_tsv());
    out.add(
        sibling(&a.out, "replicates.json"),
        serde_json::to_string_pretty(&run.records)? + "\n",
    );
    out.commit("ablate", &a.out, &serde_json::to_value(&spec)?, spec.seed, Value::Null)
}

fn cmd_bench(a: &ExperimentArgs) -> CliResult<()> {
    let spec = resolve_spec(a, Scenario::JobsSim)?;
    let run = run_bench(&spec, thread_budget(a.jobs))?;
    let failures: usize = run.rows.iter().map(|r| r.failures).sum();
    let mut out = Artifacts::default();
    out.add(a.out.clone(), bench_tsv(&run.rows));
    out.add(
        sibling(&a.out, "replicates.json"),
        serde_json::to_string_pretty(&run.replicates)? + "\n",
    );
    let mut meta = serde_json::json!({ "rows": run.rows.len(), "failed_replicates": failures });
    if spec.scenario == Scenario::JobsSim {
        meta["threshold"] = spec.jobs.threshold.into();
        meta["threshold_rule"] = "z >= threshold".into();
    }
    out.commit("bench", &a.out, &serde_json::to_value(&spec)?, spec.seed, meta)
}
