//! Posterior draws restricted to a model, for estimation under constraints.

use serde::{Deserialize, Serialize};

use super::estimate::{sample_posterior, PriorSpec, RARE_EVENT_WARNING};
use super::evaluator::{CompiledModel, EvalScratch};
use crate::error::{Error, Result};
use crate::hypothesis::ModelSpec;
use crate::link::Scratch;
use crate::table::StratifiedTable;

/// Mean and central 95% interval of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: String,
    pub n_draws: usize,
    pub accepted: usize,
    pub acceptance: f64,
    /// Binomial standard error of `acceptance`.
    pub se: f64,
    /// Per stratum, per cell.
    pub pi: Vec<Vec<Interval>>,
    /// Stacked over strata.
    pub eta: Vec<Interval>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

fn summarise(mut values: Vec<f64>) -> Interval {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let at = |q: f64| {
        let pos = q * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    Interval {
        mean,
        lower: at(0.025),
        upper: at(0.975),
    }
}

/// Draw `n` tables from the posterior, keep those satisfying the model and
/// summarise them.
pub fn posterior_draws_under_model(
    model: &ModelSpec,
    table: &StratifiedTable,
    prior: &PriorSpec,
    n: usize,
    seed: u64,
) -> Result<PosteriorSummary> {
    if table.dims() != model.dims.as_slice() || table.num_strata() != model.strata {
        return Err(Error::dim("model and table shapes differ"));
    }
    let draws = sample_posterior(prior, table, n, seed)?;
    let link = model.link()?;
    let compiled = CompiledModel::new(model, &link)?;
    let all_rows: Vec<usize> = (0..link.t()).collect();
    let full = link.partial(&all_rows);
    let (r, t, s) = (link.r(), link.t(), model.strata);

    let mut scratch = EvalScratch::default();
    let mut link_scratch = Scratch::default();
    let mut pi_values = vec![Vec::new(); s * r];
    let mut eta_values = vec![Vec::new(); s * t];
    let mut eta_buf = vec![0.0; t];
    let mut accepted = 0;
    for i in 0..draws.len() {
        let d = draws.draw(i);
        if !compiled.check(d, &mut scratch).satisfied(1.0) {
            continue;
        }
        accepted += 1;
        for (k, l) in d.iter().enumerate() {
            pi_values[k].push(l.exp());
        }
        for b in 0..s {
            full.eval_log(&d[b * r..(b + 1) * r], &mut link_scratch, &mut eta_buf);
            for (k, v) in eta_buf.iter().enumerate() {
                eta_values[b * t + k].push(*v);
            }
        }
    }
    let acceptance = accepted as f64 / n as f64;
    let mut warnings = Vec::new();
    if accepted == 0 {
        warnings.push(format!(
            "{RARE_EVENT_WARNING}; for about-equality models use the shrinking-tolerance Bayes factor instead"
        ));
    } else if accepted < 100 {
        warnings.push(format!("only {accepted} accepted draws; summaries are unreliable"));
    }
    let (pi, eta) = if accepted == 0 {
        (Vec::new(), Vec::new())
    } else {
        let cells: Vec<Interval> = pi_values.into_iter().map(summarise).collect();
        (
            cells.chunks(r).map(|c| c.to_vec()).collect(),
            eta_values.into_iter().map(summarise).collect(),
        )
    };
    Ok(PosteriorSummary {
        model: model.name.clone(),
        n_draws: n,
        accepted,
        acceptance,
        se: (acceptance * (1.0 - acceptance) / n as f64).sqrt(),
        pi,
        eta,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_of_uniform_grid() {
        let v: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let iv = summarise(v);
        assert!((iv.mean - 0.5).abs() < 1e-12);
        assert!((iv.lower - 0.025).abs() < 1e-12);
        assert!((iv.upper - 0.975).abs() < 1e-12);
    }
}
