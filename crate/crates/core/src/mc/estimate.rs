//! Proportions of draws satisfying a model, estimated directly or by
//! importance sampling, and tuning of the importance density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dirichlet::{LogRatio, ProductDirichlet};
use super::evaluator::{CompiledModel, EvalScratch};
use super::seeds::{substream, Purpose, PLANNING};
use super::{RouteOverride, RunSettings};
use crate::error::{Error, Result};
use crate::hypothesis::ModelSpec;
use crate::link::LinkMatrices;
use crate::table::StratifiedTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Prior,
    Posterior,
}

impl Side {
    pub(crate) fn code(self) -> u8 {
        match self {
            Side::Prior => 0,
            Side::Posterior => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Prior => "prior",
            Side::Posterior => "posterior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    Importance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterKind {
    PriorCenter,
    ConstrainedMle,
}

/// Dirichlet prior per stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub concentration: Vec<Vec<f64>>,
}

impl PriorSpec {
    pub fn symmetric(kappa: f64, r: usize, strata: usize) -> Self {
        Self {
            concentration: vec![vec![kappa; r]; strata],
        }
    }

    pub fn validate(&self, r: usize, strata: usize) -> Result<()> {
        if self.concentration.len() != strata || self.concentration.iter().any(|c| c.len() != r) {
            return Err(Error::dim(format!(
                "prior must have {strata} strata of {r} cells"
            )));
        }
        if let Some(bad) = self.concentration.iter().flatten().find(|&&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::domain(format!("prior concentration {bad} must be positive")));
        }
        Ok(())
    }

    /// Dirichlet parameters of the prior or the posterior given `table`.
    pub fn target(&self, side: Side, table: &StratifiedTable) -> Result<Vec<Vec<f64>>> {
        self.validate(table.cells_per_stratum(), table.num_strata())?;
        Ok(match side {
            Side::Prior => self.concentration.clone(),
            Side::Posterior => self
                .concentration
                .iter()
                .zip(table.tables())
                .map(|(a, t)| a.iter().zip(t.counts()).map(|(a, &y)| a + y as f64).collect())
                .collect(),
        })
    }
}

/// Dirichlet proposal `D(alpha * A_b * pi_hat_b)` per stratum, `A_b` being
/// the target's total concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDensity {
    pub alpha: f64,
    pub params: Vec<Vec<f64>>,
    pub center: CenterKind,
}

impl ImportanceDensity {
    pub fn new(alpha: f64, target: &[Vec<f64>], center_pi: &[Vec<f64>], center: CenterKind) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!("alpha {alpha} must be positive")));
        }
        if target.len() != center_pi.len() {
            return Err(Error::dim("centre and target have different strata"));
        }
        let params = target
            .iter()
            .zip(center_pi)
            .map(|(t, pi)| {
                let total: f64 = t.iter().sum();
                pi.iter().map(|p| (alpha * total * p).max(1e-300)).collect()
            })
            .collect();
        Ok(Self { alpha, params, center })
    }
}

/// Log-scale accumulator of importance weights of accepted draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSums {
    pub n: u64,
    pub accepted: u64,
    pub shift: f64,
    pub s1: f64,
    pub s2: f64,
    pub max_abs_log_weight: f64,
}

impl LogSums {
    pub fn new() -> Self {
        Self {
            n: 0,
            accepted: 0,
            shift: f64::NEG_INFINITY,
            s1: 0.0,
            s2: 0.0,
            max_abs_log_weight: 0.0,
        }
    }

    pub fn push(&mut self, accepted: bool, log_weight: f64) {
        self.n += 1;
        if !accepted {
            return;
        }
        self.accepted += 1;
        self.max_abs_log_weight = self.max_abs_log_weight.max(log_weight.abs());
        if log_weight > self.shift {
            let f = (self.shift - log_weight).exp();
            self.s1 *= f;
            self.s2 *= f * f;
            self.shift = log_weight;
        }
        let e = (log_weight - self.shift).exp();
        self.s1 += e;
        self.s2 += e * e;
    }

    pub fn merge(&mut self, other: &LogSums) {
        self.n += other.n;
        if other.accepted == 0 {
            return;
        }
        self.accepted += other.accepted;
        self.max_abs_log_weight = self.max_abs_log_weight.max(other.max_abs_log_weight);
        let shift = self.shift.max(other.shift);
        let a = (self.shift - shift).exp();
        let b = (other.shift - shift).exp();
        self.s1 = self.s1 * a + other.s1 * b;
        self.s2 = self.s2 * a * a + other.s2 * b * b;
        self.shift = shift;
    }

    pub fn log_value(&self) -> f64 {
        if self.accepted == 0 || self.n == 0 {
            return f64::NEG_INFINITY;
        }
        self.s1.ln() + self.shift - (self.n as f64).ln()
    }

    pub fn ess(&self) -> f64 {
        if self.accepted == 0 {
            0.0
        } else {
            self.s1 * self.s1 / self.s2
        }
    }

    /// Standard error of the estimate relative to the estimate.
    pub fn rel_se(&self) -> f64 {
        if self.accepted == 0 || self.n < 2 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        ((n * self.s2 / (self.s1 * self.s1) - 1.0).max(0.0) / (n - 1.0)).sqrt()
    }
}

impl Default for LogSums {
    fn default() -> Self {
        Self::new()
    }
}

pub const RARE_EVENT_WARNING: &str =
    "rare event: no draw satisfied the constraints; the estimate is 0 and cannot be used in a Bayes factor";

/// Estimate of the proportion of draws satisfying a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionEstimate {
    pub value: f64,
    /// Natural log of `value`; kept because importance estimates underflow.
    pub log_value: f64,
    pub n_draws: u64,
    pub accepted: u64,
    pub ess: f64,
    pub se: f64,
    pub rel_se: f64,
    pub route: Route,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub max_abs_log_weight: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl ProportionEstimate {
    pub fn from_sums(sums: &LogSums, route: Route, alpha: Option<f64>) -> Self {
        let log_value = sums.log_value();
        let value = log_value.exp();
        let rel_se = sums.rel_se();
        let mut warnings = Vec::new();
        if sums.accepted == 0 {
            warnings.push(RARE_EVENT_WARNING.to_string());
        }
        Self {
            value,
            log_value,
            n_draws: sums.n,
            accepted: sums.accepted,
            ess: sums.ess(),
            se: match route {
                Route::Direct if sums.n > 0 => (value * (1.0 - value) / sums.n as f64).sqrt(),
                _ if sums.accepted == 0 => 0.0,
                _ => value * rel_se,
            },
            rel_se,
            route,
            alpha,
            max_abs_log_weight: sums.max_abs_log_weight,
            warnings,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.accepted == 0
    }
}

/// Log probabilities of stored draws, stratum-major within each draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub strata: usize,
    pub r: usize,
    pub log_pi: Vec<f64>,
}

impl Draws {
    pub fn len(&self) -> usize {
        self.log_pi.len() / (self.strata * self.r)
    }

    pub fn is_empty(&self) -> bool {
        self.log_pi.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        let w = self.strata * self.r;
        &self.log_pi[i * w..(i + 1) * w]
    }

    /// Probabilities of draw `i`, one vector per stratum.
    pub fn pi(&self, i: usize) -> Vec<Vec<f64>> {
        self.draw(i)
            .chunks(self.r)
            .map(|c| c.iter().map(|l| l.exp()).collect())
            .collect()
    }
}

/// What a side of the Bayes factor samples from and how draws are weighted.
pub(crate) struct Sampler<'a> {
    pub compiled: &'a CompiledModel,
    pub proposal: ProductDirichlet,
    pub ratio: Option<LogRatio>,
}

/// Per-draw outcome kept for reweighting at several tolerance scales.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Record {
    pub log_weight: f64,
    pub tau: f64,
}

impl<'a> Sampler<'a> {
    pub fn direct(compiled: &'a CompiledModel, target: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            compiled,
            proposal: ProductDirichlet::new(target.to_vec())?,
            ratio: None,
        })
    }

    pub fn importance(compiled: &'a CompiledModel, target: &[Vec<f64>], g: &ImportanceDensity) -> Result<Self> {
        let proposal = ProductDirichlet::new(g.params.clone())?;
        let ratio = LogRatio::new(&ProductDirichlet::new(target.to_vec())?, &proposal)?;
        Ok(Self {
            compiled,
            proposal,
            ratio: Some(ratio),
        })
    }

    /// Draw `n` tables in fixed-size chunks, each from its own substream.
    pub fn records(&self, n: usize, seed: u64, replicate: u32, side: Side, purpose: Purpose, chunk: usize) -> Vec<Record> {
        let chunk = chunk.max(1);
        let chunks = n.div_ceil(chunk);
        let cells = self.proposal.cells();
        let parts: Vec<Vec<Record>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = substream(seed, replicate, side.code(), purpose, c as u32);
                let count = chunk.min(n - c * chunk);
                let mut buf = vec![0.0; cells];
                let mut scratch = EvalScratch::default();
                let mut out = Vec::with_capacity(count);
                for _ in 0..count {
                    self.proposal.sample_log(&mut rng, &mut buf);
                    let check = self.compiled.check(&buf, &mut scratch);
                    let tau = if check.inequalities { check.tau } else { f64::INFINITY };
                    let log_weight = match (&self.ratio, tau.is_finite()) {
                        (Some(ratio), true) => ratio.eval(&buf),
                        _ => 0.0,
                    };
                    out.push(Record { log_weight, tau });
                }
                out
            })
            .collect();
        parts.into_iter().flatten().collect()
    }
}

/// Sums at each tolerance scale, in the order of `scales`.
pub(crate) fn sums_at(records: &[Record], scales: &[f64]) -> Vec<LogSums> {
    scales
        .iter()
        .map(|&f| {
            let mut s = LogSums::new();
            for rec in records {
                s.push(rec.tau <= f, rec.log_weight);
            }
            s
        })
        .collect()
}

/// Sample from a product of Dirichlet distributions.
pub fn sample_dirichlet(params: &[Vec<f64>], n: usize, seed: u64) -> Result<Draws> {
    let dist = ProductDirichlet::new(params.to_vec())?;
    let cells = dist.cells();
    let mut rng = substream(seed, 0, 0, Purpose::Main, 0);
    let mut log_pi = vec![0.0; n * cells];
    for i in 0..n {
        dist.sample_log(&mut rng, &mut log_pi[i * cells..(i + 1) * cells]);
    }
    Ok(Draws {
        strata: params.len(),
        r: params.first().map_or(0, |p| p.len()),
        log_pi,
    })
}

pub fn sample_prior(prior: &PriorSpec, n: usize, seed: u64) -> Result<Draws> {
    if n == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    sample_dirichlet(&prior.concentration, n, seed)
}

pub fn sample_posterior(prior: &PriorSpec, table: &StratifiedTable, n: usize, seed: u64) -> Result<Draws> {
    if n == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    sample_dirichlet(&prior.target(Side::Posterior, table)?, n, seed)
}

fn check_model_draws(model: &ModelSpec, draws: &Draws) -> Result<(LinkMatrices, CompiledModel)> {
    let link = model.link()?;
    if draws.r != link.r() || draws.strata != model.strata {
        return Err(Error::dim("draws do not match the model's table shape"));
    }
    let compiled = CompiledModel::new(model, &link)?;
    Ok((link, compiled))
}

/// Fraction of stored draws satisfying the model.
pub fn estimate_proportion_direct(draws: &Draws, model: &ModelSpec) -> Result<ProportionEstimate> {
    if draws.is_empty() {
        return Err(Error::domain("no draws"));
    }
    let (_, compiled) = check_model_draws(model, draws)?;
    let mut scratch = EvalScratch::default();
    let mut sums = LogSums::new();
    for i in 0..draws.len() {
        sums.push(compiled.check(draws.draw(i), &mut scratch).satisfied(1.0), 0.0);
    }
    Ok(ProportionEstimate::from_sums(&sums, Route::Direct, None))
}

/// Importance-sampling estimate of the proportion of the `target` Dirichlet
/// satisfying the model, with `n` draws from `g`.
pub fn importance_estimate(
    model: &ModelSpec,
    target: &[Vec<f64>],
    g: &ImportanceDensity,
    n: usize,
    seed: u64,
) -> Result<ProportionEstimate> {
    if n == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    let link = model.link()?;
    let compiled = CompiledModel::new(model, &link)?;
    let sampler = Sampler::importance(&compiled, target, g)?;
    let records = sampler.records(n, seed, 0, Side::Prior, Purpose::Main, super::DEFAULT_CHUNK);
    let sums = sums_at(&records, &[1.0]);
    Ok(ProportionEstimate::from_sums(&sums[0], Route::Importance, Some(g.alpha)))
}

/// One pilot run of the tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub alpha: f64,
    pub acceptance: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub alpha: f64,
    pub center: CenterKind,
    pub rows: Vec<TuneRow>,
}

pub const MAX_ALPHA: f64 = 1e5;

/// Choose `alpha` from `grid` by pilot runs: the largest ESS among values
/// with at least `min_acceptance` of draws satisfying the model, else the
/// largest acceptance. The grid is extended upwards while the best value
/// sits at its top end and keeps improving.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tune_alpha_compiled(
    compiled: &CompiledModel,
    target: &[Vec<f64>],
    center_pi: &[Vec<f64>],
    center: CenterKind,
    settings: &RunSettings,
    seed: u64,
    side: Side,
) -> Result<Tuning> {
    if settings.alpha_grid.is_empty() || settings.alpha_grid.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::domain("alpha grid must be non-empty and positive"));
    }
    let mut grid = settings.alpha_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite alpha"));
    grid.dedup();
    let mut rows = Vec::new();
    let run = |alpha: f64, k: usize| -> Result<TuneRow> {
        let g = ImportanceDensity::new(alpha, target, center_pi, center)?;
        let sampler = Sampler::importance(compiled, target, &g)?;
        let purpose = Purpose::Tune(k as u16 + if center == CenterKind::PriorCenter { 0 } else { 4000 });
        let records = sampler.records(settings.pilot, seed, PLANNING, side, purpose, settings.chunk);
        let sums = sums_at(&records, &[1.0]);
        Ok(TuneRow {
            alpha,
            acceptance: sums[0].accepted as f64 / sums[0].n as f64,
            ess: sums[0].ess(),
        })
    };
    for (k, &alpha) in grid.iter().enumerate() {
        rows.push(run(alpha, k)?);
    }
    let score = |rows: &[TuneRow]| -> Option<usize> {
        let ok: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].acceptance >= settings.min_acceptance)
            .collect();
        let pick = |idx: &[usize], key: &dyn Fn(&TuneRow) -> f64| {
            idx.iter()
                .copied()
                .max_by(|&a, &b| key(&rows[a]).partial_cmp(&key(&rows[b])).expect("finite"))
        };
        if !ok.is_empty() {
            pick(&ok, &|r| r.ess)
        } else {
            let all: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].acceptance > 0.0).collect();
            pick(&all, &|r| r.acceptance)
        }
    };
    let mut best = score(&rows);
    let mut k = grid.len();
    loop {
        let top = rows.iter().map(|r| r.alpha).fold(0.0, f64::max);
        let at_top = match best {
            Some(i) => rows[i].alpha == top,
            None => true,
        };
        if !at_top || top * 2.5 > MAX_ALPHA {
            break;
        }
        rows.push(run(top * 2.5, k)?);
        k += 1;
        let next = score(&rows);
        if next == best && best.is_some() {
            break;
        }
        best = next;
        if best.is_none() && rows.len() >= grid.len() + 4 {
            break;
        }
    }
    match best {
        Some(i) => Ok(Tuning {
            alpha: rows[i].alpha,
            center,
            rows,
        }),
        None => Err(Error::Tuning(format!(
            "no pilot draw satisfied the constraints for any alpha on the {} side; increase the pilot size or use a better centre",
            side.name()
        ))),
    }
}

/// Public wrapper of the tuner for one model and target.
#[allow(clippy::too_many_arguments)]
pub fn tune_alpha(
    model: &ModelSpec,
    target: &[Vec<f64>],
    center_pi: &[Vec<f64>],
    center: CenterKind,
    settings: &RunSettings,
    seed: u64,
    side: Side,
) -> Result<Tuning> {
    let link = model.link()?;
    let compiled = CompiledModel::new(model, &link)?;
    tune_alpha_compiled(&compiled, target, center_pi, center, settings, seed, side)
}

/// Sampling plan for one side of a Bayes factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidePlan {
    pub side: Side,
    pub route: Route,
    pub pilot_acceptance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<ImportanceDensity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuning: Option<Tuning>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// Decide between direct and importance sampling for one side, trying the
/// centres in order until tuning succeeds.
pub(crate) fn plan_side(
    compiled: &CompiledModel,
    target: &[Vec<f64>],
    centers: &[(CenterKind, Vec<Vec<f64>>)],
    settings: &RunSettings,
    seed: u64,
    side: Side,
) -> Result<SidePlan> {
    let pilot_acceptance = if settings.route == RouteOverride::Importance {
        0.0
    } else {
        let sampler = Sampler::direct(compiled, target)?;
        let records = sampler.records(settings.pilot, seed, PLANNING, side, Purpose::Pilot, settings.chunk);
        let sums = sums_at(&records, &[1.0]);
        sums[0].accepted as f64 / sums[0].n as f64
    };
    let direct = SidePlan {
        side,
        route: Route::Direct,
        pilot_acceptance,
        density: None,
        tuning: None,
        notes: Vec::new(),
    };
    match settings.route {
        RouteOverride::Direct => return Ok(direct),
        RouteOverride::Auto if pilot_acceptance >= settings.direct_threshold => return Ok(direct),
        _ => {}
    }
    let mut notes = Vec::new();
    let mut last_err = None;
    for (kind, pi) in centers {
        match tune_alpha_compiled(compiled, target, pi, *kind, settings, seed, side) {
            Ok(tuning) => {
                let best_ess = tuning
                    .rows
                    .iter()
                    .find(|r| r.alpha == tuning.alpha)
                    .map_or(0.0, |r| r.ess);
                let direct_ess = pilot_acceptance * settings.pilot as f64;
                if settings.route == RouteOverride::Auto && best_ess < direct_ess {
                    notes.push(format!(
                        "direct sampling kept: its pilot ESS {direct_ess:.1} beats the tuned density's {best_ess:.1}"
                    ));
                    return Ok(SidePlan { notes, ..direct });
                }
                let density = ImportanceDensity::new(tuning.alpha, target, pi, *kind)?;
                return Ok(SidePlan {
                    side,
                    route: Route::Importance,
                    pilot_acceptance,
                    density: Some(density),
                    tuning: Some(tuning),
                    notes,
                });
            }
            Err(Error::Tuning(msg)) => {
                notes.push(format!("centre {kind:?} failed: {msg}"));
                last_err = Some(Error::Tuning(msg));
            }
            Err(other) => return Err(other),
        }
    }
    if pilot_acceptance > 0.0 {
        notes.push("importance tuning failed; falling back to direct sampling".into());
        return Ok(SidePlan { notes, ..direct });
    }
    Err(last_err.unwrap_or_else(|| Error::Tuning("no importance centre available".into())))
}

/// Run the main sample for one side and return sums at each scale.
pub(crate) fn run_side(
    plan: &SidePlan,
    compiled: &CompiledModel,
    target: &[Vec<f64>],
    settings: &RunSettings,
    seed: u64,
    replicate: u32,
    scales: &[f64],
) -> Result<Vec<LogSums>> {
    let sampler = match (&plan.route, &plan.density) {
        (Route::Importance, Some(g)) => Sampler::importance(compiled, target, g)?,
        _ => Sampler::direct(compiled, target)?,
    };
    let records = sampler.records(settings.draws, seed, replicate, plan.side, Purpose::Main, settings.chunk);
    Ok(sums_at(&records, scales))
}
