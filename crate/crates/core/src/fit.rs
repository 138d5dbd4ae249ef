//! Constrained maximum likelihood under product-multinomial sampling, used to
//! centre importance densities.
//!
//! The fit runs an augmented Lagrangian (Powell-Hestenes-Rockafellar form for
//! inequalities) over `theta_b = log(pi_b / pi_b0)` per stratum. Each
//! about-equality row `|e'eta| <= eps` enters as the pair `eps -/+ e'eta >= 0`.
//! Inner problems are solved by damped Newton with a Gauss-Newton penalty
//! Hessian and Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::ModelSpec;
use crate::link::{softmax_with_reference, LinkMatrices};
use crate::table::StratifiedTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Added to every cell count before fitting.
    pub smoothing: f64,
    pub kkt_tol: f64,
    pub feasibility_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            smoothing: 0.5,
            kkt_tol: 1e-7,
            feasibility_tol: 1e-8,
            max_outer: 500,
            max_inner: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    /// `eta` stacked over strata.
    pub eta_hat: Vec<f64>,
    pub pi_hat: Vec<Vec<f64>>,
    /// Log-likelihood of the unsmoothed counts at `pi_hat`.
    pub loglik: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// `g(eta) = G eta + c >= 0`.
struct Inequalities {
    g: DMatrix<f64>,
    c: DVector<f64>,
}

impl Inequalities {
    fn from_model(model: &ModelSpec) -> Self {
        let cs = &model.constraints;
        let cols = cs.cols();
        let ne = cs.n_equalities();
        let nu = cs.n_inequalities();
        let mut g = DMatrix::zeros(2 * ne + nu, cols);
        let mut c = DVector::zeros(2 * ne + nu);
        for i in 0..ne {
            let row = cs.e.row(i);
            g.row_mut(2 * i).copy_from(&(-row));
            g.row_mut(2 * i + 1).copy_from(&row);
            c[2 * i] = cs.epsilon[i];
            c[2 * i + 1] = cs.epsilon[i];
        }
        for i in 0..nu {
            g.row_mut(2 * ne + i).copy_from(&cs.u.row(i));
        }
        Self { g, c }
    }

    fn len(&self) -> usize {
        self.c.len()
    }
}

struct Problem<'a> {
    link: &'a LinkMatrices,
    counts: Vec<Vec<f64>>,
    totals: Vec<f64>,
    scale: f64,
    ineq: Inequalities,
    r: usize,
    t: usize,
}

/// Everything evaluated at one `theta`.
struct Point {
    pis: Vec<Vec<f64>>,
    eta: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn strata(&self) -> usize {
        self.counts.len()
    }

    fn evaluate(&self, theta: &[f64]) -> Option<Point> {
        let k = self.r - 1;
        let mut pis = Vec::with_capacity(self.strata());
        let mut eta = Vec::with_capacity(self.strata() * self.t);
        let mut f = 0.0;
        for (b, y) in self.counts.iter().enumerate() {
            let pi = softmax_with_reference(&theta[b * k..(b + 1) * k]);
            if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return None;
            }
            f -= y.iter().zip(&pi).map(|(c, p)| c * p.ln()).sum::<f64>();
            eta.extend(self.link.eta_from_pi(&pi).ok()?.values);
            pis.push(pi);
        }
        let eta = DVector::from_vec(eta);
        let g = &self.ineq.g * &eta + &self.ineq.c;
        let f = f / self.scale;
        f.is_finite().then_some(Point { pis, eta, f, g })
    }

    /// Gradient and Hessian of the scaled negative log-likelihood, and the
    /// Jacobian of `g` with respect to `theta`.
    fn derivatives(&self, p: &Point) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let k = self.r - 1;
        let s = self.strata();
        let mut grad = DVector::zeros(s * k);
        let mut hess = DMatrix::zeros(s * k, s * k);
        let mut jac = DMatrix::zeros(s * self.t, s * k);
        for b in 0..s {
            let pi = &p.pis[b];
            let (y, n) = (&self.counts[b], self.totals[b]);
            for j in 0..k {
                grad[b * k + j] = -(y[j + 1] - n * pi[j + 1]) / self.scale;
                for l in 0..k {
                    let d = if j == l { pi[j + 1] } else { 0.0 };
                    hess[(b * k + j, b * k + l)] = n * (d - pi[j + 1] * pi[l + 1]) / self.scale;
                }
            }
            let jb = self.link.eta_jacobian(pi)?;
            jac.view_mut((b * self.t, b * k), (self.t, k)).copy_from(&jb);
        }
        Ok((grad, hess, &self.ineq.g * jac))
    }
}

/// PHR augmented Lagrangian value for inequalities `g >= 0`.
fn lagrangian(p: &Point, lambda: &DVector<f64>, rho: f64) -> f64 {
    let mut v = p.f;
    for (gi, li) in p.g.iter().zip(lambda.iter()) {
        let shifted = (li - rho * gi).max(0.0);
        v += (shifted * shifted - li * li) / (2.0 * rho);
    }
    v
}

fn max_violation(g: &DVector<f64>) -> f64 {
    g.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
}

/// Maximise the product-multinomial likelihood of `table` under `model`.
pub fn constrained_mle(table: &StratifiedTable, model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if table.dims() != model.dims.as_slice() {
        return Err(Error::dim(format!(
            "model '{}' is for dims {:?}, table has {:?}",
            model.name,
            model.dims,
            table.dims()
        )));
    }
    if table.num_strata() != model.strata {
        return Err(Error::dim(format!(
            "model '{}' has {} strata, table has {}",
            model.name,
            model.strata,
            table.num_strata()
        )));
    }
    if !(opts.smoothing >= 0.0) {
        return Err(Error::domain("smoothing must be non-negative"));
    }
    let raw: Vec<Vec<f64>> = table.tables().iter().map(|t| t.counts_f64()).collect();
    let counts: Vec<Vec<f64>> = raw
        .iter()
        .map(|c| c.iter().map(|v| v + opts.smoothing).collect())
        .collect();
    if let Some(b) = counts.iter().position(|c| c.iter().sum::<f64>() <= 0.0) {
        return Err(Error::domain(format!(
            "stratum {} has no observations; add smoothing or drop it",
            b + 1
        )));
    }
    let link = model.link()?;
    let mut result = fit_counts(&link, model, counts, opts)?;
    result.loglik = raw
        .iter()
        .zip(&result.pi_hat)
        .map(|(y, pi)| y.iter().zip(pi).map(|(c, p)| if *c > 0.0 { c * p.ln() } else { 0.0 }).sum::<f64>())
        .sum();
    Ok(result)
}

/// Centring point for the prior side: the constrained fit to a table with
/// one observation in every cell.
pub fn prior_center(model: &ModelSpec) -> Result<FitResult> {
    let link = model.link()?;
    let counts = vec![vec![1.0; link.r()]; model.strata];
    let opts = FitOptions {
        smoothing: 0.0,
        ..FitOptions::default()
    };
    let mut result = fit_counts(&link, model, counts, &opts)?;
    result.loglik = 0.0;
    Ok(result)
}

fn fit_counts(
    link: &LinkMatrices,
    model: &ModelSpec,
    counts: Vec<Vec<f64>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let totals: Vec<f64> = counts.iter().map(|c| c.iter().sum()).collect();
    let scale: f64 = totals.iter().sum();
    let r = link.r();
    let k = r - 1;
    let problem = Problem {
        link,
        t: link.t(),
        r,
        scale,
        ineq: Inequalities::from_model(model),
        counts,
        totals,
    };
    let mut theta: Vec<f64> = problem
        .counts
        .iter()
        .flat_map(|c| c[1..].iter().map(move |v| (v / c[0]).ln()).collect::<Vec<_>>())
        .collect();
    debug_assert_eq!(theta.len(), problem.strata() * k);

    let m = problem.ineq.len();
    let mut lambda = DVector::<f64>::zeros(m);
    let mut rho = 10.0;
    let mut point = problem
        .evaluate(&theta)
        .ok_or_else(|| Error::domain("starting point is not a valid table"))?;
    let mut prev_violation = max_violation(&point.g);
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut outer = 0;

    while outer < opts.max_outer {
        outer += 1;
        let inner_tol = (opts.kkt_tol * 0.1).max(1e-12);
        for _ in 0..opts.max_inner {
            let (grad_f, hess_f, dg) = problem.derivatives(&point)?;
            let mut grad = grad_f;
            let mut hess = hess_f;
            for i in 0..m {
                let shifted = lambda[i] - rho * point.g[i];
                if shifted > 0.0 {
                    let row = dg.row(i).transpose();
                    grad -= &row * shifted;
                    hess += &row * row.transpose() * rho;
                }
            }
            if grad.amax() <= inner_tol {
                break;
            }
            let ridge = 1e-10 * hess.diagonal().amax().max(1e-12);
            for d in 0..hess.nrows() {
                hess[(d, d)] += ridge;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => -&grad,
            };
            let slope = grad.dot(&step);
            let step = if slope < 0.0 { step } else { -grad.clone() };
            let slope = grad.dot(&step);
            let current = lagrangian(&point, &lambda, rho);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some(tp) = problem.evaluate(&trial) {
                    if lagrangian(&tp, &lambda, rho) <= current + 1e-4 * alpha * slope {
                        theta = trial;
                        point = tp;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }

        for i in 0..m {
            lambda[i] = (lambda[i] - rho * point.g[i]).max(0.0);
        }
        let violation = max_violation(&point.g);
        let (grad_f, _, dg) = problem.derivatives(&point)?;
        let stationarity = (grad_f - dg.transpose() * &lambda).amax();
        let complementarity = point
            .g
            .iter()
            .zip(lambda.iter())
            .map(|(g, l)| (g * l).abs())
            .fold(0.0, f64::max);
        kkt = stationarity.max(complementarity);
        if kkt <= opts.kkt_tol && violation <= opts.feasibility_tol {
            converged = true;
            break;
        }
        if violation > 0.25 * prev_violation && violation > opts.feasibility_tol {
            rho = (rho * 10.0).min(1e12);
        }
        prev_violation = violation;
    }

    Ok(FitResult {
        model: model.name.clone(),
        eta_hat: point.eta.iter().copied().collect(),
        pi_hat: point.pis,
        loglik: -point.f * scale,
        kkt_residual: kkt,
        max_violation: max_violation(&point.g),
        outer_iterations: outer,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hypothesis::{Constraint, ConstraintEntry, ModelDefinition};
    use crate::link::LogitType;

    #[test]
    fn unconstrained_fit_is_smoothed_proportions() {
        let table = fixtures::father_son();
        let model = ModelSpec::encompassing(&[6, 6], &[LogitType::Local; 2], 1).unwrap();
        let fit = constrained_mle(&table, &model, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let n = table.total() as f64;
        for (p, c) in fit.pi_hat[0].iter().zip(table.tables()[0].counts()) {
            assert!((p - (*c as f64 + 0.5) / (n + 18.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn prior_center_unconstrained_is_uniform() {
        let model = ModelSpec::encompassing(&[3, 4], &[LogitType::Global; 2], 2).unwrap();
        let fit = prior_center(&model).unwrap();
        assert!(fit.pi_hat.iter().flatten().all(|p| (p - 1.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn prior_center_tp2_is_feasible() {
        let model = ModelDefinition::new("M4", vec![LogitType::Local; 2])
            .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
            .build(&[6, 6], 1)
            .unwrap();
        let fit = prior_center(&model).unwrap();
        assert!(fit.converged);
        assert!(fit.max_violation <= 1e-8);
    }
}
