//! Bayes factors against the encompassing model.
//!
//! `B_k1` is the proportion of the posterior satisfying model `k` over the
//! proportion of the prior doing so. With about-equality rows the tolerance
//! shrinks geometrically; one sample per side, drawn at the first tolerance,
//! is reweighted at every stage and
//! `log B = log B(eps_1) + sum_n log(B(eps_n) / B(eps_(n-1)))`.
//!
//! When no constraint row couples strata, each stratum is estimated on its
//! own and the proportions multiply, since strata are independent under both
//! the prior and the posterior.

use serde::{Deserialize, Serialize};

use super::estimate::{
    plan_side, run_side, CenterKind, LogSums, PriorSpec, ProportionEstimate, Route, Side, SidePlan,
};
use super::evaluator::CompiledModel;
use super::seeds::factor_seed;
use super::RunSettings;
use crate::error::{Error, Result};
use crate::fit::{constrained_mle, prior_center, FitOptions};
use crate::hypothesis::ModelSpec;
use crate::table::StratifiedTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfKind {
    Inequality,
    AboutEquality,
}

/// One tolerance stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub stage: usize,
    /// Tolerance relative to the first stage.
    pub scale: f64,
    pub prior: ProportionEstimate,
    pub posterior: ProportionEstimate,
    /// `log B_k1` at this stage's tolerance.
    pub log_bf: f64,
    /// This stage's factor: `log_bf` for the first stage, else the change
    /// from the previous stage.
    pub log_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub replicate: u32,
    pub log_bf: f64,
    pub stages: Vec<StageEstimate>,
    /// The chain ended on a stage with too small an effective sample size.
    pub truncated: bool,
}

/// Sampling plans for one independent piece of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPlan {
    /// 1-based stratum, or `None` when the piece is the whole model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stratum: Option<usize>,
    pub seed: u64,
    pub prior: SidePlan,
    pub posterior: SidePlan,
}

/// Bayes factor of a model against the encompassing model, natural log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BFEstimate {
    pub model: String,
    pub kind: BfKind,
    /// Mean of the replicate values.
    pub log_bf: f64,
    pub replicates: Vec<f64>,
    pub sd: f64,
    /// Estimate from all replicates' draws taken together.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_log_bf: Option<f64>,
    pub factors: Vec<FactorPlan>,
    pub runs: Vec<ReplicateRun>,
    /// Tolerances of the equality rows at the first stage.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub epsilon: Vec<f64>,
    pub settings: RunSettings,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl BFEstimate {
    pub fn mean(&self) -> f64 {
        self.log_bf
    }

    pub fn truncated(&self) -> bool {
        self.runs.iter().any(|r| r.truncated)
    }

    /// Number of tolerance stages used by each replicate.
    pub fn stage_counts(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.stages.len()).collect()
    }
}

/// Tolerance factor for the fits that centre importance densities.
const CENTRE_EPSILON_FACTOR: f64 = 1e-6;

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Proportion of a product of independent pieces.
fn product(parts: Vec<ProportionEstimate>) -> ProportionEstimate {
    if parts.len() == 1 {
        return parts.into_iter().next().expect("one part");
    }
    let log_value: f64 = parts.iter().map(|p| p.log_value).sum();
    let value = log_value.exp();
    let rel_se = parts
        .iter()
        .map(|p| p.rel_se.powi(2))
        .sum::<f64>()
        .sqrt();
    let route = if parts.iter().any(|p| p.route == Route::Importance) {
        Route::Importance
    } else {
        Route::Direct
    };
    let mut warnings: Vec<String> = Vec::new();
    for w in parts.iter().flat_map(|p| &p.warnings) {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    ProportionEstimate {
        value,
        log_value,
        n_draws: parts.iter().map(|p| p.n_draws).min().unwrap_or(0),
        accepted: parts.iter().map(|p| p.accepted).min().unwrap_or(0),
        ess: parts.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min),
        se: value * rel_se,
        rel_se,
        route,
        alpha: None,
        max_abs_log_weight: parts.iter().map(|p| p.max_abs_log_weight).fold(0.0, f64::max),
        warnings,
    }
}

/// Per-factor sums at each scale: `sums[factor][scale]`.
type FactorSums = Vec<Vec<LogSums>>;

/// Build the stage chain from per-scale sums of both sides.
fn chain(
    prior: &FactorSums,
    posterior: &FactorSums,
    factors: &[FactorPlan],
    settings: &RunSettings,
    scales: &[f64],
) -> Result<(Vec<StageEstimate>, bool, f64)> {
    let estimate = |sums: &FactorSums, n: usize, side: Side| -> ProportionEstimate {
        let parts = factors
            .iter()
            .zip(sums)
            .map(|(f, s)| {
                let plan = match side {
                    Side::Prior => &f.prior,
                    Side::Posterior => &f.posterior,
                };
                let alpha = plan.density.as_ref().map(|g| g.alpha);
                ProportionEstimate::from_sums(&s[n], plan.route, alpha)
            })
            .collect();
        product(parts)
    };
    let mut stages: Vec<StageEstimate> = Vec::new();
    let mut truncated = false;
    for (n, &scale) in scales.iter().enumerate() {
        let pe_prior = estimate(prior, n, Side::Prior);
        let pe_post = estimate(posterior, n, Side::Posterior);
        if n == 0 {
            for (pe, side) in [(&pe_prior, Side::Prior), (&pe_post, Side::Posterior)] {
                if pe.is_zero() {
                    return Err(Error::Unbounded {
                        side: side.name().to_string(),
                        detail: format!(
                            "no {} draw satisfied the constraints ({} draws, route {:?})",
                            side.name(),
                            pe.n_draws,
                            pe.route
                        ),
                    });
                }
            }
        } else if pe_prior.ess < settings.min_stage_ess || pe_post.ess < settings.min_stage_ess {
            truncated = true;
            break;
        }
        let log_bf = pe_post.log_value - pe_prior.log_value;
        let log_factor = match stages.last() {
            None => log_bf,
            Some(prev) => log_bf - prev.log_bf,
        };
        stages.push(StageEstimate {
            stage: n + 1,
            scale,
            prior: pe_prior,
            posterior: pe_post,
            log_bf,
            log_factor,
        });
        if n > 0 && log_factor.abs() < settings.schedule.stop_tol {
            break;
        }
    }
    let total = stages.iter().map(|s| s.log_factor).sum();
    Ok((stages, truncated, total))
}

fn validate_inputs(model: &ModelSpec, table: &StratifiedTable, prior: &PriorSpec, settings: &RunSettings) -> Result<()> {
    settings.validate()?;
    if table.dims() != model.dims.as_slice() || table.num_strata() != model.strata {
        return Err(Error::dim(format!(
            "model '{}' expects dims {:?} with {} strata; table has {:?} with {}",
            model.name,
            model.dims,
            model.strata,
            table.dims(),
            table.num_strata()
        )));
    }
    if table.total() == 0 {
        return Err(Error::domain("table has no observations; a Bayes factor needs data"));
    }
    prior.validate(table.cells_per_stratum(), table.num_strata())
}

fn with_epsilon_start(model: &ModelSpec, settings: &RunSettings) -> ModelSpec {
    let mut m = model.clone();
    if let Some(e) = settings.schedule.epsilon_start {
        m.constraints.epsilon = vec![e; m.constraints.n_equalities()];
    }
    m
}

/// An independent piece of the estimate with everything needed to sample it.
struct Factor {
    stratum: Option<usize>,
    compiled: CompiledModel,
    prior_target: Vec<Vec<f64>>,
    post_target: Vec<Vec<f64>>,
    plan: FactorPlan,
}

fn plan_factor(
    model: &ModelSpec,
    table: &StratifiedTable,
    prior: &PriorSpec,
    settings: &RunSettings,
    stratum: Option<usize>,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<Factor> {
    let link = model.link()?;
    let compiled = CompiledModel::new(model, &link)?;
    let prior_target = prior.target(Side::Prior, table)?;
    let post_target = prior.target(Side::Posterior, table)?;
    let (prior_centers, post_centers) = if model.constraints.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        // Centres sit at exact equality, the middle of each about-equality band.
        let mut exact = model.clone();
        exact.constraints = model.constraints.scaled_epsilon(CENTRE_EPSILON_FACTOR);
        let opts = FitOptions::default();
        let mle = constrained_mle(table, &exact, &opts)?;
        let flat = prior_center(&exact)?;
        for fit in [&mle, &flat] {
            if !fit.converged {
                warnings.push(format!(
                    "constrained fit for centring {} did not converge (KKT {:.2e}); using its last iterate",
                    model.name, fit.kkt_residual
                ));
            }
        }
        (
            vec![
                (CenterKind::PriorCenter, flat.pi_hat.clone()),
                (CenterKind::ConstrainedMle, mle.pi_hat.clone()),
            ],
            vec![(CenterKind::ConstrainedMle, mle.pi_hat)],
        )
    };
    let prior_plan = plan_side(&compiled, &prior_target, &prior_centers, settings, seed, Side::Prior)?;
    let posterior_plan = plan_side(&compiled, &post_target, &post_centers, settings, seed, Side::Posterior)?;
    for plan in [&prior_plan, &posterior_plan] {
        warnings.extend(plan.notes.iter().cloned());
    }
    if let Some(t) = &prior_plan.tuning {
        if prior_plan.route == Route::Importance && t.center == CenterKind::ConstrainedMle {
            warnings.push(format!(
                "{}: prior side centred at the constrained MLE because the flat centre produced no acceptances",
                model.name
            ));
        }
    }
    Ok(Factor {
        stratum,
        compiled,
        prior_target,
        post_target,
        plan: FactorPlan {
            stratum: stratum.map(|b| b + 1),
            seed,
            prior: prior_plan,
            posterior: posterior_plan,
        },
    })
}

fn run(model: &ModelSpec, table: &StratifiedTable, prior: &PriorSpec, settings: &RunSettings, kind: BfKind) -> Result<BFEstimate> {
    validate_inputs(model, table, prior, settings)?;
    let model = with_epsilon_start(model, settings);
    let mut warnings = Vec::new();

    let mut factors = Vec::new();
    match model.split_strata() {
        Some(parts) if parts.iter().any(|p| !p.constraints.is_empty()) => {
            for (b, part) in parts.iter().enumerate() {
                if part.constraints.is_empty() {
                    continue;
                }
                let sub_table = table.stratum(b)?;
                let sub_prior = PriorSpec {
                    concentration: vec![prior.concentration[b].clone()],
                };
                let seed = factor_seed(settings.seed, b);
                factors.push(plan_factor(part, &sub_table, &sub_prior, settings, Some(b), seed, &mut warnings)?);
            }
        }
        _ => factors.push(plan_factor(&model, table, prior, settings, None, settings.seed, &mut warnings)?),
    }
    let plans: Vec<FactorPlan> = factors.iter().map(|f| f.plan.clone()).collect();

    let scales = match kind {
        BfKind::Inequality => vec![1.0],
        BfKind::AboutEquality => settings.schedule.scales(),
    };
    let mut runs = Vec::with_capacity(settings.replicates);
    let mut pooled_prior: FactorSums = vec![vec![LogSums::new(); scales.len()]; factors.len()];
    let mut pooled_post: FactorSums = pooled_prior.clone();
    for rep in 0..settings.replicates as u32 {
        let mut sp = Vec::with_capacity(factors.len());
        let mut sq = Vec::with_capacity(factors.len());
        for (k, f) in factors.iter().enumerate() {
            let seed = f.plan.seed;
            let a = run_side(&f.plan.prior, &f.compiled, &f.prior_target, settings, seed, rep, &scales)?;
            let b = run_side(&f.plan.posterior, &f.compiled, &f.post_target, settings, seed, rep, &scales)?;
            for (acc, s) in pooled_prior[k].iter_mut().zip(&a) {
                acc.merge(s);
            }
            for (acc, s) in pooled_post[k].iter_mut().zip(&b) {
                acc.merge(s);
            }
            sp.push(a);
            sq.push(b);
        }
        let (stages, truncated, log_bf) = chain(&sp, &sq, &plans, settings, &scales)?;
        if truncated {
            warnings.push(format!(
                "replicate {rep}: stage chain stopped after stage {} because the effective sample size fell below {}",
                stages.len(),
                settings.min_stage_ess
            ));
        }
        runs.push(ReplicateRun {
            replicate: rep,
            log_bf,
            stages,
            truncated,
        });
    }
    let pooled_log_bf = chain(&pooled_prior, &pooled_post, &plans, settings, &scales)
        .ok()
        .map(|(_, _, v)| v);
    for (f, (sp, sq)) in factors.iter().zip(pooled_prior.iter().zip(&pooled_post)) {
        for (sums, side) in [(&sp[0], Side::Prior), (&sq[0], Side::Posterior)] {
            if sums.accepted > 0 && sums.ess() < settings.min_stage_ess {
                let which = match f.stratum {
                    Some(b) => format!("{} proportion of stratum {}", side.name(), b + 1),
                    None => format!("{} proportion", side.name()),
                };
                warnings.push(format!(
                    "{which} rests on an effective sample size of {:.1}; the estimate is unreliable",
                    sums.ess()
                ));
            }
        }
    }
    let replicates: Vec<f64> = runs.iter().map(|r| r.log_bf).collect();
    let (mean, sd) = mean_sd(&replicates);
    Ok(BFEstimate {
        model: model.name.clone(),
        kind,
        log_bf: mean,
        replicates,
        sd,
        pooled_log_bf,
        factors: plans,
        runs,
        epsilon: model.constraints.epsilon.clone(),
        settings: settings.clone(),
        warnings,
    })
}

/// Bayes factor of an inequality-only model, over `settings.replicates`
/// replicates.
pub fn estimate_bf(model: &ModelSpec, table: &StratifiedTable, prior: &PriorSpec, settings: &RunSettings) -> Result<BFEstimate> {
    if model.has_equalities() {
        return Err(Error::spec(format!(
            "model '{}' has about-equality rows; use the shrinking-tolerance estimator",
            model.name
        )));
    }
    run(model, table, prior, settings, BfKind::Inequality)
}

/// Bayes factor of a model with about-equality rows via shrinking tolerances.
pub fn about_equality_bf(
    model: &ModelSpec,
    table: &StratifiedTable,
    prior: &PriorSpec,
    settings: &RunSettings,
) -> Result<BFEstimate> {
    if !model.has_equalities() {
        return Err(Error::spec(format!("model '{}' has no about-equality rows", model.name)));
    }
    run(model, table, prior, settings, BfKind::AboutEquality)
}

/// Dispatch on whether the model has about-equality rows.
pub fn bayes_factor(model: &ModelSpec, table: &StratifiedTable, prior: &PriorSpec, settings: &RunSettings) -> Result<BFEstimate> {
    if model.has_equalities() {
        about_equality_bf(model, table, prior, settings)
    } else {
        estimate_bf(model, table, prior, settings)
    }
}

/// `b` independently seeded replicates sharing one sampling plan.
pub fn replicate_bf(
    model: &ModelSpec,
    table: &StratifiedTable,
    prior: &PriorSpec,
    settings: &RunSettings,
    b: usize,
) -> Result<BFEstimate> {
    let settings = RunSettings {
        replicates: b,
        ..settings.clone()
    };
    bayes_factor(model, table, prior, &settings)
}

/// `log B_kl = log B_k1 - log B_l1`.
pub fn compare_models(bf_k: &BFEstimate, bf_l: &BFEstimate) -> f64 {
    bf_k.log_bf - bf_l.log_bf
}

/// Per-replicate `log B_kl` when both estimates have the same replicates.
pub fn compare_replicates(bf_k: &BFEstimate, bf_l: &BFEstimate) -> Option<Vec<f64>> {
    (bf_k.replicates.len() == bf_l.replicates.len()).then(|| {
        bf_k.replicates
            .iter()
            .zip(&bf_l.replicates)
            .map(|(a, b)| a - b)
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Poor,
    Substantial,
    Strong,
    Decisive,
}

impl Evidence {
    pub fn name(self) -> &'static str {
        match self {
            Evidence::Poor => "poor",
            Evidence::Substantial => "substantial",
            Evidence::Strong => "strong",
            Evidence::Decisive => "decisive",
        }
    }
}

/// Jeffreys' scale on `|log B|` with thresholds 0.5, 1 and 2.
pub fn jeffreys_label(log_bf: f64) -> Evidence {
    let x = log_bf.abs();
    if x < 0.5 {
        Evidence::Poor
    } else if x < 1.0 {
        Evidence::Substantial
    } else if x < 2.0 {
        Evidence::Strong
    } else {
        Evidence::Decisive
    }
}

/// Which model the sign of `log B_kl` favours.
pub fn direction(log_bf: f64) -> &'static str {
    if log_bf >= 0.0 {
        "for"
    } else {
        "against"
    }
}
