//! Encompassing-prior Monte Carlo: Dirichlet sampling, constraint
//! proportions, Bayes factors and the shrinking-tolerance chain for
//! about-equality constraints.

pub mod bf;
pub mod dirichlet;
pub mod estimate;
pub mod evaluator;
pub mod posterior;
pub mod seeds;

use serde::{Deserialize, Serialize};

pub use bf::{
    about_equality_bf, bayes_factor, compare_models, estimate_bf, jeffreys_label, replicate_bf,
    BFEstimate, BfKind, Evidence, ReplicateRun, StageEstimate,
};
pub use estimate::{
    estimate_proportion_direct, importance_estimate, sample_dirichlet, sample_posterior, sample_prior, tune_alpha,
    CenterKind, Draws, ImportanceDensity, LogSums, PriorSpec, ProportionEstimate, Route, Side,
    SidePlan, Tuning,
};
pub use posterior::{posterior_draws_under_model, PosteriorSummary};

pub const DEFAULT_CHUNK: usize = 16_384;

/// Shrinking tolerances `eps_n = eps_1 * b^(n-1)` for about-equality rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    /// Overrides the model's tolerances for every equality row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_start: Option<f64>,
    pub b: f64,
    /// Stop once a stage's natural-log factor is within this of zero.
    pub stop_tol: f64,
    /// Stages including the first, at `eps_1`.
    pub max_stages: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            epsilon_start: None,
            b: 0.5,
            stop_tol: 0.1,
            max_stages: 10,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(crate::Error::domain(format!("shrink factor b = {} must lie in (0, 1)", self.b)));
        }
        if let Some(e) = self.epsilon_start {
            if !(e > 0.0) {
                return Err(crate::Error::domain(format!("epsilon_start {e} must be positive")));
            }
        }
        if self.max_stages == 0 {
            return Err(crate::Error::domain("max_stages must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(crate::Error::domain("stop_tol must be non-negative"));
        }
        Ok(())
    }

    /// Tolerance scale of each stage relative to the first.
    pub fn scales(&self) -> Vec<f64> {
        (0..self.max_stages).map(|n| self.b.powi(n as i32)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RouteOverride {
    #[default]
    Auto,
    Direct,
    Importance,
}

/// Default alpha grid: 12 log-spaced points on [0.02, 50] plus 1 and 20.
pub fn default_alpha_grid() -> Vec<f64> {
    let (lo, hi): (f64, f64) = (0.02, 50.0);
    let mut grid: Vec<f64> = (0..12)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 11.0).exp())
        .collect();
    grid.extend([1.0, 20.0]);
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub seed: u64,
    /// Main draws per side and replicate.
    pub draws: usize,
    /// Draws per pilot run (route choice and each tuning grid point).
    pub pilot: usize,
    pub replicates: usize,
    pub alpha_grid: Vec<f64>,
    /// Pilot acceptance at or above which a side is sampled directly.
    pub direct_threshold: f64,
    /// Minimum pilot acceptance for an alpha to be ranked by ESS.
    pub min_acceptance: f64,
    pub route: RouteOverride,
    pub schedule: EpsilonSchedule,
    /// Stages whose effective sample size falls below this end the chain.
    pub min_stage_ess: f64,
    pub chunk: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 20240601,
            draws: 1_000_000,
            pilot: 100_000,
            replicates: 1,
            alpha_grid: default_alpha_grid(),
            direct_threshold: 0.05,
            min_acceptance: 0.01,
            route: RouteOverride::Auto,
            schedule: EpsilonSchedule::default(),
            min_stage_ess: 50.0,
            chunk: DEFAULT_CHUNK,
        }
    }
}

impl RunSettings {
    /// Reduced profile for quick runs: 10^4 draws, 5 replicates.
    pub fn quick() -> Self {
        Self {
            draws: 10_000,
            pilot: 5_000,
            replicates: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.draws == 0 || self.pilot == 0 || self.replicates == 0 || self.chunk == 0 {
            return Err(crate::Error::domain("draws, pilot, replicates and chunk must be positive"));
        }
        if !(self.direct_threshold >= 0.0 && self.direct_threshold <= 1.0)
            || !(self.min_acceptance >= 0.0 && self.min_acceptance <= 1.0)
        {
            return Err(crate::Error::domain("acceptance thresholds must lie in [0, 1]"));
        }
        self.schedule.validate()
    }
}
