//! Dataset container, CSV I/O and the benchmark generators.

mod dataset;
mod highdim;
mod jobs;
mod probit;
mod synth;

pub use dataset::{load_dataset_csv, load_dataset_csv_inferred, CsvSchema, Dataset};
pub use highdim::{gen_highdim_surrogate, HighDimConfig};
pub use jobs::{gen_jobs_base, simulate_jobs, JobsSimConfig, JobsSimulation, FRACTION_TOLERANCE};
pub use probit::{probit_fit, probit_log_likelihood, with_intercept, ProbitFit, ProbitOptions};
pub use synth::{gen_synthetic_a, gen_synthetic_b, SynthConfigA, SynthConfigB};
