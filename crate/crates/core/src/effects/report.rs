use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Mediated, direct and total effects with Monte-Carlo standard errors.
///
/// `acme_t*` is the mediated effect with the treatment held at `t`; `ade_t*`
/// the direct effect with the mediator held at its `t`-arm value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectReport {
    pub acme_t0: f64,
    pub acme_t1: f64,
    pub ade_t0: f64,
    pub ade_t1: f64,
    pub ate: f64,
    pub se_acme_t0: f64,
    pub se_acme_t1: f64,
    pub se_ade_t0: f64,
    pub se_ade_t1: f64,
    pub se_ate: f64,
    pub mc_draws: usize,
}

impl EffectReport {
    /// Exact effects with no sampling error (ground truth).
    pub fn exact(acme: f64, ade: f64) -> Self {
        Self::symmetric(acme, ade, 0.0, 0.0, 0.0)
    }

    /// Effects that do not depend on the arm, as from a model without a
    /// treatment–mediator interaction.
    pub fn symmetric(acme: f64, ade: f64, se_acme: f64, se_ade: f64, se_ate: f64) -> Self {
        EffectReport {
            acme_t0: acme,
            acme_t1: acme,
            ade_t0: ade,
            ade_t1: ade,
            ate: acme + ade,
            se_acme_t0: se_acme,
            se_acme_t1: se_acme,
            se_ade_t0: se_ade,
            se_ade_t1: se_ade,
            se_ate,
            mc_draws: 0,
        }
    }

    pub fn zero() -> Self {
        Self::exact(0.0, 0.0)
    }

    /// Largest violation of `ate = acme_t1 + ade_t0 = acme_t0 + ade_t1`.
    pub fn additivity_gap(&self) -> f64 {
        let a = (self.acme_t1 + self.ade_t0 - self.ate).abs();
        let b = (self.acme_t0 + self.ade_t1 - self.ate).abs();
        a.max(b)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Elementwise absolute errors of an estimate against the truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectErrors {
    pub acme_t0: f64,
    pub acme_t1: f64,
    pub ade_t0: f64,
    pub ade_t1: f64,
    pub ate: f64,
}

pub fn error_vs_truth(report: &EffectReport, truth: &EffectReport) -> EffectErrors {
    EffectErrors {
        acme_t0: (report.acme_t0 - truth.acme_t0).abs(),
        acme_t1: (report.acme_t1 - truth.acme_t1).abs(),
        ade_t0: (report.ade_t0 - truth.ade_t0).abs(),
        ade_t1: (report.ade_t1 - truth.ade_t1).abs(),
        ate: (report.ate - truth.ate).abs(),
    }
}
