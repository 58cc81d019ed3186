//! Scenario generation, ablation tables and benchmark grids.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{hima_with_mediators, lsem_with_mediators};
use crate::datagen::{
    gen_highdim_surrogate, gen_jobs_base, gen_synthetic_a, gen_synthetic_b,
    load_dataset_csv_inferred, simulate_jobs, Dataset, HighDimConfig, JobsSimConfig, SynthConfigA,
    SynthConfigB,
};
use crate::effects::{
    affine_recovery_score, disentanglement_score, error_vs_truth, estimate_effects, EffectErrors,
    EffectReport, DEFAULT_MC_DRAWS,
};
use crate::error::{Error, Result};
use crate::imavae::{ArchConfig, ImavaeModel};
use crate::numkit::{pca_fit, Matrix};
use crate::trainer::{train, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SynthA,
    SynthB,
    #[serde(rename = "highdim")]
    HighDim,
    JobsSim,
    Csv,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::SynthA,
        Scenario::SynthB,
        Scenario::HighDim,
        Scenario::JobsSim,
        Scenario::Csv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SynthA => "synth-a",
            Scenario::SynthB => "synth-b",
            Scenario::HighDim => "highdim",
            Scenario::JobsSim => "jobs-sim",
            Scenario::Csv => "csv",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario `{s}`")))
    }
}

/// Objective variants compared in the ablation tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// `α = −1`, cancelling the reconstruction term.
    NoRecon,
    /// `β = 0`, dropping the ELBO.
    NoElbo,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoRecon, Ablation::NoElbo];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRecon => "no-recon",
            Ablation::NoElbo => "no-elbo",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoRecon => out.alpha = -1.0,
            Ablation::NoElbo => out.beta = 0.0,
        }
        out
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Imavae,
    Lsem,
    Hima,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Imavae => "imavae",
            Estimator::Lsem => "lsem",
            Estimator::Hima => "hima",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Estimator::Imavae, Estimator::Lsem, Estimator::Hima]
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator `{s}`")))
    }
}

/// Zero-effect benchmark grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobsGrid {
    pub eta: Vec<f64>,
    pub n: Vec<usize>,
    pub mediated_fraction: Vec<f64>,
}

impl Default for JobsGrid {
    fn default() -> Self {
        JobsGrid {
            eta: vec![1.0, 10.0],
            n: vec![500, 1000],
            mediated_fraction: vec![0.10, 0.50],
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub seed: u64,
    pub replicates: usize,
    pub ablations: Vec<Ablation>,
    pub estimators: Vec<Estimator>,
    pub mc_draws: usize,
    /// CSV input (`csv` scenario) or jobs base file (`jobs-sim`).
    pub data: Option<PathBuf>,
    pub train: TrainConfig,
    pub synth_a: SynthConfigA,
    pub synth_b: SynthConfigB,
    pub highdim: HighDimConfig,
    pub jobs: JobsSimConfig,
    pub jobs_grid: JobsGrid,
    pub jobs_base_rows: usize,
    pub jobs_base_seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec::preset(Scenario::SynthA)
    }
}

impl ExperimentSpec {
    /// Shipped settings for a scenario.
    pub fn preset(scenario: Scenario) -> Self {
        let train = match scenario {
            Scenario::JobsSim => TrainConfig {
                latent_dim: 1,
                epochs: 150,
                anneal_epochs: 30,
                batch_size: 128,
                learning_rate: 3e-3,
                arch: ArchConfig {
                    hidden_layers: 2,
                    hidden_width: 16,
                    ..Default::default()
                },
                ..Default::default()
            },
            Scenario::HighDim => TrainConfig { learning_rate: 3e-3, ..Default::default() },
            _ => TrainConfig::default(),
        };
        let estimators = match scenario {
            Scenario::JobsSim => vec![Estimator::Lsem, Estimator::Imavae],
            _ => vec![Estimator::Imavae, Estimator::Lsem, Estimator::Hima],
        };
        ExperimentSpec {
            scenario,
            seed: 0,
            replicates: 1,
            ablations: vec![Ablation::Full, Ablation::NoRecon, Ablation::NoElbo],
            estimators,
            mc_draws: DEFAULT_MC_DRAWS,
            data: None,
            train,
            synth_a: SynthConfigA::default(),
            synth_b: SynthConfigB::default(),
            highdim: HighDimConfig {
                entangled: true,
                ..Default::default()
            },
            jobs: JobsSimConfig::default(),
            jobs_grid: JobsGrid::default(),
            jobs_base_rows: 899,
            jobs_base_seed: 0,
        }
    }

    /// Layers a partial JSON object over the preset of its scenario. The
    /// scenario comes from `scenario`, then the object, then `fallback`.
    pub fn from_preset_patch(
        scenario: Option<Scenario>,
        patch: Option<serde_json::Value>,
        fallback: Scenario,
    ) -> Result<Self> {
        let from_patch = match patch.as_ref().and_then(|v| v.get("scenario")) {
            Some(serde_json::Value::String(s)) => Some(s.parse::<Scenario>()?),
            Some(other) => {
                return Err(Error::InvalidConfig(format!("scenario must be a string, got {other}")))
            }
            None => None,
        };
        let scenario = scenario.or(from_patch).unwrap_or(fallback);
        let mut value = serde_json::to_value(ExperimentSpec::preset(scenario))?;
        if let Some(p) = patch {
            merge_json(&mut value, p);
        }
        value["scenario"] = serde_json::Value::String(scenario.as_str().into());
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidConfig(format!("invalid experiment config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::InvalidConfig("mc_draws must be at least 1".into()));
        }
        if self.ablations.is_empty() {
            return Err(Error::InvalidConfig("at least one ablation is required".into()));
        }
        let mut seen = self.ablations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ablations.len() {
            return Err(Error::InvalidConfig("ablations must be distinct".into()));
        }
        if self.scenario == Scenario::Csv && self.data.is_none() {
            return Err(Error::InvalidConfig("the csv scenario needs a data path".into()));
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("data path {} does not exist", p.display())));
            }
        }
        self.train.validate()?;
        match self.scenario {
            Scenario::SynthA => self.synth_a.validate(),
            Scenario::SynthB => self.synth_b.validate(),
            Scenario::HighDim => self.highdim.validate(),
            Scenario::JobsSim => self.jobs.validate(),
            Scenario::Csv => Ok(()),
        }
    }

    /// Seed used by replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    /// Training config with the run seed applied. Jobs data has a scalar
    /// mediator, so its latent dimension follows the data.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
pub fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Generated data with its ground truth and scenario notes.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: Option<EffectReport>,
    pub metadata: serde_json::Value,
}

pub fn jobs_base(spec: &ExperimentSpec) -> Result<Dataset> {
    match &spec.data {
        Some(path) => load_dataset_csv_inferred(path),
        None => gen_jobs_base(spec.jobs_base_rows, spec.jobs_base_seed),
    }
}

/// Draws the scenario's data for `seed`.
pub fn generate(spec: &ExperimentSpec, seed: u64) -> Result<Generated> {
    let meta = serde_json::json!({ "scenario": spec.scenario.as_str(), "seed": seed });
    let with = |ds: Dataset, truth: EffectReport| Generated {
        dataset: ds,
        truth: Some(truth),
        metadata: meta.clone(),
    };
    match spec.scenario {
        Scenario::SynthA => {
            let (ds, truth) = gen_synthetic_a(&SynthConfigA {
                seed,
                ..spec.synth_a.clone()
            })?;
            Ok(with(ds, truth))
        }
        Scenario::SynthB => {
            let (ds, truth) = gen_synthetic_b(&SynthConfigB {
                seed,
                ..spec.synth_b.clone()
            })?;
            Ok(with(ds, truth))
        }
        Scenario::HighDim => {
            let (ds, truth) = gen_highdim_surrogate(&HighDimConfig {
                seed,
                ..spec.highdim.clone()
            })?;
            Ok(with(ds, truth))
        }
        Scenario::JobsSim => jobs_cell(spec, &spec.jobs, seed, &jobs_base(spec)?),
        Scenario::Csv => {
            let path = spec
                .data
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("the csv scenario needs a data path".into()))?;
            Ok(Generated {
                dataset: load_dataset_csv_inferred(path)?,
                truth: None,
                metadata: meta,
            })
        }
    }
}

fn jobs_cell(
    spec: &ExperimentSpec,
    cfg: &JobsSimConfig,
    seed: u64,
    base: &Dataset,
) -> Result<Generated> {
    let sim = simulate_jobs(base, &JobsSimConfig { seed, ..cfg.clone() })?;
    Ok(Generated {
        dataset: sim.dataset,
        truth: Some(sim.truth),
        metadata: serde_json::json!({
            "scenario": spec.scenario.as_str(),
            "seed": seed,
            "eta": cfg.eta,
            "n": cfg.n,
            "mediated_fraction": cfg.mediated_fraction,
            "achieved_fraction": sim.achieved_fraction,
            "alpha_offset": sim.alpha,
            "threshold": cfg.threshold,
            "threshold_rule": "z >= threshold",
        }),
    })
}

/// A trained model together with its effect estimates and diagnostics.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: ImavaeModel,
    pub train: TrainReport,
    pub effects: EffectReport,
    pub disentanglement: Option<f64>,
    pub affine_r2: Option<Vec<f64>>,
}

/// Trains, estimates effects and computes the latent diagnostics.
pub fn fit_and_estimate(
    ds: &Dataset,
    cfg: &TrainConfig,
    mc_draws: usize,
    seed: u64,
) -> Result<FitOutcome> {
    let (model, report) = train(ds, cfg)?;
    let effects = estimate_effects(&model, ds, mc_draws, seed)?;
    let both_arms = ds.treated_count() > 0 && ds.treated_count() < ds.n();
    let disentanglement = if both_arms {
        Some(disentanglement_score(&model, ds, seed)?)
    } else {
        None
    };
    let affine_r2 = match ds.z_true() {
        Some(z) if z.cols() > 0 => affine_recovery_score(&model, ds).ok(),
        _ => None,
    };
    Ok(FitOutcome {
        model,
        train: report,
        effects,
        disentanglement,
        affine_r2,
    })
}

/// Mediator matrix handed to the linear baselines: the true mediator when the
/// scenario observes it, otherwise the leading principal component scores of
/// the features.
pub fn baseline_mediators(spec: &ExperimentSpec, ds: &Dataset) -> Result<Matrix> {
    match (spec.scenario, ds.z_true()) {
        (Scenario::HighDim, _) | (_, None) => {
            let k = spec.train.latent_dim.min(ds.x_dim());
            pca_fit(ds.x(), k)?.project(ds.x())
        }
        (_, Some(z)) => Ok(z.clone()),
    }
}

/// Runs one estimator on a dataset.
pub fn run_estimator(
    spec: &ExperimentSpec,
    est: Estimator,
    ds: &Dataset,
    seed: u64,
) -> Result<EffectReport> {
    match est {
        Estimator::Imavae => {
            let mut cfg = spec.train_config(seed);
            if spec.scenario == Scenario::JobsSim {
                cfg.latent_dim = ds.z_dim().max(1);
            }
            let (model, _) = train(ds, &cfg)?;
            estimate_effects(&model, ds, spec.mc_draws, seed)
        }
        Estimator::Lsem => lsem_with_mediators(ds, &baseline_mediators(spec, ds)?),
        Estimator::Hima => hima_with_mediators(ds, &baseline_mediators(spec, ds)?),
    }
}

/// Runs `f` over `items` on at most `jobs` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One fitted replicate of one ablation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub ablation: Ablation,
    pub replicate: usize,
    pub seed: u64,
    pub estimate: EffectReport,
    pub errors: EffectErrors,
    pub disentanglement: Option<f64>,
    pub affine_r2: Option<Vec<f64>>,
    pub model_checksum: String,
}

/// Table rows: ACME(t=1), ADE(t=0), ATE.
pub const TABLE_ROWS: [&str; 3] = ["ACME(t=1)", "ADE(t=0)", "ATE"];

/// Absolute-error summary, one column pair per ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    pub ablations: Vec<Ablation>,
    /// `cells[row][col] = (mean, std)`.
    pub cells: Vec<Vec<(f64, f64)>>,
}

impl ErrorTable {
    pub fn from_records(ablations: &[Ablation], records: &[ReplicateRecord]) -> Self {
        let mut cells = vec![Vec::new(); TABLE_ROWS.len()];
        for &ab in ablations {
            let errs: Vec<&EffectErrors> = records
                .iter()
                .filter(|r| r.ablation == ab)
                .map(|r| &r.errors)
                .collect();
            let pick: [fn(&EffectErrors) -> f64; 3] = [|e| e.acme_t1, |e| e.ade_t0, |e| e.ate];
            for (row, f) in pick.iter().enumerate() {
                let v: Vec<f64> = errs.iter().map(|e| f(e)).collect();
                cells[row].push(mean_std(&v));
            }
        }
        ErrorTable {
            ablations: ablations.to_vec(),
            cells,
        }
    }

    pub fn get(&self, row: usize, ablation: Ablation) -> Option<(f64, f64)> {
        let col = self.ablations.iter().position(|&a| a == ablation)?;
        Some(self.cells[row][col])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric");
        for a in &self.ablations {
            out.push_str(&format!("\t{a}_mean\t{a}_std"));
        }
        out.push('\n');
        for (name, row) in TABLE_ROWS.iter().zip(&self.cells) {
            out.push_str(name);
            for (m, s) in row {
                out.push_str(&format!("\t{m}\t{s}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub records: Vec<ReplicateRecord>,
    pub table: ErrorTable,
}

/// Fits every (ablation, replicate) pair; replicates share data and seeds
/// across ablations.
pub fn run_ablation(spec: &ExperimentSpec, jobs: usize) -> Result<AblationRun> {
    spec.validate()?;
    let data: Vec<Generated> = (0..spec.replicates)
        .map(|r| generate(spec, spec.replicate_seed(r)))
        .collect::<Result<_>>()?;
    if data.iter().any(|g| g.truth.is_none()) {
        return Err(Error::InvalidConfig(
            "ablation tables need a scenario with known ground truth".into(),
        ));
    }
    let tasks: Vec<(Ablation, usize)> = spec
        .ablations
        .iter()
        .flat_map(|&a| (0..spec.replicates).map(move |r| (a, r)))
        .collect();
    let results = parallel_map(&tasks, jobs, |&(ab, r)| -> Result<ReplicateRecord> {
        let seed = spec.replicate_seed(r);
        let g = &data[r];
        let cfg = ab.apply(&spec.train_config(seed));
        let fit = fit_and_estimate(&g.dataset, &cfg, spec.mc_draws, seed)?;
        let truth = g.truth.as_ref().expect("checked above");
        Ok(ReplicateRecord {
            ablation: ab,
            replicate: r,
            seed,
            errors: error_vs_truth(&fit.effects, truth),
            estimate: fit.effects,
            disentanglement: fit.disentanglement,
            affine_r2: fit.affine_r2,
            model_checksum: fit.train.model_checksum,
        })
    });
    let records: Vec<ReplicateRecord> = results.into_iter().collect::<Result<_>>()?;
    let table = ErrorTable::from_records(&spec.ablations, &records);
    Ok(AblationRun { records, table })
}

/// One benchmark cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub label: String,
    pub jobs: Option<JobsSimConfig>,
}

pub fn bench_cells(spec: &ExperimentSpec) -> Vec<BenchCell> {
    match spec.scenario {
        Scenario::JobsSim => {
            let g = &spec.jobs_grid;
            let mut cells = Vec::new();
            for &eta in &g.eta {
                for &n in &g.n {
                    for &frac in &g.mediated_fraction {
                        cells.push(BenchCell {
                            label: format!("eta={eta},n={n},frac={frac}"),
                            jobs: Some(JobsSimConfig {
                                eta,
                                n,
                                mediated_fraction: frac,
                                ..spec.jobs.clone()
                            }),
                        });
                    }
                }
            }
            cells
        }
        _ => vec![BenchCell {
            label: "default".into(),
            jobs: None,
        }],
    }
}

/// Replicate-level result of one estimator in one cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReplicate {
    pub cell: usize,
    pub estimator: Estimator,
    pub replicate: usize,
    pub seed: u64,
    pub estimate: Option<EffectReport>,
    pub errors: Option<EffectErrors>,
    pub failure: Option<String>,
}

/// Aggregated row of the consolidated results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: Scenario,
    pub estimator: Estimator,
    pub cell: String,
    pub replicates: usize,
    pub failures: usize,
    pub truth_acme_t1: f64,
    pub truth_ade_t0: f64,
    pub truth_ate: f64,
    pub mean_acme_t1: f64,
    pub mean_ade_t0: f64,
    pub mean_ate: f64,
    pub abs_err_acme_t1: f64,
    pub abs_err_ade_t0: f64,
    pub abs_err_ate: f64,
    pub std_err_acme_t1: f64,
    pub std_err_ade_t0: f64,
    pub std_err_ate: f64,
    pub status: String,
}

pub const BENCH_HEADER: &str = "scenario\testimator\tcell\treplicates\tfailures\ttruth_acme_t1\ttruth_ade_t0\ttruth_ate\tmean_acme_t1\tmean_ade_t0\tmean_ate\tabs_err_acme_t1\tabs_err_ade_t0\tabs_err_ate\tstd_abs_err_acme_t1\tstd_abs_err_ade_t0\tstd_abs_err_ate\tstatus";

pub fn bench_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.scenario,
            r.estimator,
            r.cell,
            r.replicates,
            r.failures,
            r.truth_acme_t1,
            r.truth_ade_t0,
            r.truth_ate,
            r.mean_acme_t1,
            r.mean_ade_t0,
            r.mean_ate,
            r.abs_err_acme_t1,
            r.abs_err_ade_t0,
            r.abs_err_ate,
            r.std_err_acme_t1,
            r.std_err_ade_t0,
            r.std_err_ate,
            r.status
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct BenchRun {
    pub rows: Vec<BenchRow>,
    pub replicates: Vec<BenchReplicate>,
}

/// Evaluates every estimator on every cell and replicate. Failures are kept
/// per replicate and summarised per row instead of aborting the run.
pub fn run_bench(spec: &ExperimentSpec, jobs: usize) -> Result<BenchRun> {
    spec.validate()?;
    if spec.estimators.is_empty() {
        return Err(Error::InvalidConfig("at least one estimator is required".into()));
    }
    let cells = bench_cells(spec);
    let base = match spec.scenario {
        Scenario::JobsSim => Some(jobs_base(spec)?),
        _ => None,
    };
    let mut keys = Vec::new();
    for c in 0..cells.len() {
        for r in 0..spec.replicates {
            keys.push((c, r));
        }
    }
    let data: Vec<Result<Generated>> = parallel_map(&keys, jobs, |&(c, r)| {
        let seed = spec.replicate_seed(r);
        match (&cells[c].jobs, &base) {
            (Some(cfg), Some(base)) => jobs_cell(spec, cfg, seed, base),
            _ => generate(spec, seed),
        }
    });
    let mut tasks = Vec::new();
    for (k, &(c, r)) in keys.iter().enumerate() {
        for &e in &spec.estimators {
            tasks.push((k, c, r, e));
        }
    }
    let reps: Vec<BenchReplicate> = parallel_map(&tasks, jobs, |&(k, c, r, e)| {
        let seed = spec.replicate_seed(r);
        let outcome = data[k].as_ref().map_err(|e| e.to_string()).and_then(|g| {
            let est = run_estimator(spec, e, &g.dataset, seed).map_err(|e| e.to_string())?;
            Ok((est, g.truth.clone()))
        });
        match outcome {
            Ok((est, truth)) => BenchReplicate {
                cell: c,
                estimator: e,
                replicate: r,
                seed,
                errors: truth.as_ref().map(|t| error_vs_truth(&est, t)),
                estimate: Some(est),
                failure: None,
            },
            Err(msg) => BenchReplicate {
                cell: c,
                estimator: e,
                replicate: r,
                seed,
                estimate: None,
                errors: None,
                failure: Some(msg),
            },
        }
    });

    let truth_of = |k: usize| data[k].as_ref().ok().and_then(|g| g.truth.clone());
    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for &e in &spec.estimators {
            let mine: Vec<&BenchReplicate> =
                reps.iter().filter(|b| b.cell == c && b.estimator == e).collect();
            let ok: Vec<&BenchReplicate> = mine.iter().copied().filter(|b| b.failure.is_none()).collect();
            let failures = mine.len() - ok.len();
            let truth = keys
                .iter()
                .enumerate()
                .filter(|(_, &(kc, _))| kc == c)
                .find_map(|(k, _)| truth_of(k))
                .unwrap_or(EffectReport {
                    acme_t1: f64::NAN,
                    ade_t0: f64::NAN,
                    ate: f64::NAN,
                    ..EffectReport::zero()
                });
            let col = |f: fn(&EffectReport) -> f64| -> Vec<f64> {
                ok.iter().filter_map(|b| b.estimate.as_ref().map(f)).collect()
            };
            let ecol = |f: fn(&EffectErrors) -> f64| -> Vec<f64> {
                ok.iter().filter_map(|b| b.errors.as_ref().map(f)).collect()
            };
            let (ea, sa) = mean_std(&ecol(|x| x.acme_t1));
            let (ed, sd) = mean_std(&ecol(|x| x.ade_t0));
            let (et, st) = mean_std(&ecol(|x| x.ate));
            let status = match mine.iter().find_map(|b| b.failure.clone()) {
                None => "ok".to_string(),
                Some(msg) => format!("failed: {}", msg.replace(['\t', '\n'], " ")),
            };
            rows.push(BenchRow {
                scenario: spec.scenario,
                estimator: e,
                cell: cell.label.clone(),
                replicates: spec.replicates,
                failures,
                truth_acme_t1: truth.acme_t1,
                truth_ade_t0: truth.ade_t0,
                truth_ate: truth.ate,
                mean_acme_t1: mean_std(&col(|x| x.acme_t1)).0,
                mean_ade_t0: mean_std(&col(|x| x.ade_t0)).0,
                mean_ate: mean_std(&col(|x| x.ate)).0,
                abs_err_acme_t1: ea,
                abs_err_ade_t0: ed,
                abs_err_ate: et,
                std_err_acme_t1: sa,
                std_err_ade_t0: sd,
                std_err_ate: st,
                status,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.scenario, &a.cell, a.estimator).cmp(&(b.scenario, &b.cell, b.estimator))
    });
    Ok(BenchRun {
        rows,
        replicates: reps,
    })
}
