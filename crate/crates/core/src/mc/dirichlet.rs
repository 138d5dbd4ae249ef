//! Dirichlet draws and densities, computed on the log scale so that tiny
//! shape parameters do not underflow.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum LogGamma {
    Direct(Gamma<f64>),
    /// `log G = log G' + log(U) / a` with `G' ~ Gamma(a + 1)`, for `a < 1`.
    Boosted(Gamma<f64>, f64),
}

impl LogGamma {
    fn new(shape: f64) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::domain(format!("Dirichlet parameter {shape} must be positive")));
        }
        let make = |a: f64| Gamma::new(a, 1.0).map_err(|e| Error::domain(e.to_string()));
        Ok(if shape >= 1.0 {
            LogGamma::Direct(make(shape)?)
        } else {
            LogGamma::Boosted(make(shape + 1.0)?, 1.0 / shape)
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LogGamma::Direct(g) => g.sample(rng).ln(),
            LogGamma::Boosted(g, inv) => {
                let u: f64 = rng.gen::<f64>();
                // gen() is in [0, 1); map 0 to the smallest positive double.
                g.sample(rng).ln() + u.max(f64::MIN_POSITIVE).ln() * inv
            }
        }
    }
}

/// One Dirichlet distribution.
#[derive(Debug, Clone)]
pub struct Dirichlet {
    params: Vec<f64>,
    cells: Vec<LogGamma>,
    log_norm: f64,
}

impl Dirichlet {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if params.len() < 2 {
            return Err(Error::domain("Dirichlet needs at least two cells"));
        }
        let cells = params.iter().map(|&a| LogGamma::new(a)).collect::<Result<_>>()?;
        let log_norm = log_beta(&params);
        Ok(Self {
            params,
            cells,
            log_norm,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// `log B(a) = sum log Gamma(a_j) - log Gamma(sum a_j)`.
    pub fn log_beta(&self) -> f64 {
        self.log_norm
    }

    /// Write `log pi` of one draw into `out`.
    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.cells) {
            *o = c.sample(rng);
        }
        let lse = crate::link::log_sum_exp(out.iter().copied());
        out.iter_mut().for_each(|v| *v -= lse);
    }

    pub fn log_density(&self, log_pi: &[f64]) -> f64 {
        self.params
            .iter()
            .zip(log_pi)
            .map(|(a, l)| (a - 1.0) * l)
            .sum::<f64>()
            - self.log_norm
    }
}

pub fn log_beta(params: &[f64]) -> f64 {
    params.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(params.iter().sum())
}

/// Independent Dirichlet distributions, one per stratum.
#[derive(Debug, Clone)]
pub struct ProductDirichlet {
    pub strata: Vec<Dirichlet>,
}

impl ProductDirichlet {
    pub fn new(params: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self {
            strata: params.into_iter().map(Dirichlet::new).collect::<Result<_>>()?,
        })
    }

    pub fn cells(&self) -> usize {
        self.strata.iter().map(|d| d.params.len()).sum()
    }

    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut offset = 0;
        for d in &self.strata {
            let r = d.params.len();
            d.sample_log(rng, &mut out[offset..offset + r]);
            offset += r;
        }
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.strata.iter().map(|d| d.params.clone()).collect()
    }
}

/// `log(target density / proposal density)` as `constant + sum c_j log pi_j`.
#[derive(Debug, Clone)]
pub struct LogRatio {
    constant: f64,
    coefs: Vec<f64>,
}

impl LogRatio {
    pub fn new(target: &ProductDirichlet, proposal: &ProductDirichlet) -> Result<Self> {
        if target.strata.len() != proposal.strata.len() || target.cells() != proposal.cells() {
            return Err(Error::dim("target and proposal have different shapes"));
        }
        let mut constant = 0.0;
        let mut coefs = Vec::with_capacity(target.cells());
        for (t, g) in target.strata.iter().zip(&proposal.strata) {
            constant += g.log_beta() - t.log_beta();
            coefs.extend(t.params.iter().zip(&g.params).map(|(a, b)| a - b));
        }
        Ok(Self { constant, coefs })
    }

    pub fn eval(&self, log_pi: &[f64]) -> f64 {
        self.constant + self.coefs.iter().zip(log_pi).map(|(c, l)| c * l).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_beta_of_ones_is_minus_log_factorial() {
        // B(1,...,1) over r cells = 1/(r-1)!
        let lb = log_beta(&[1.0; 4]);
        assert!((lb + 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_like_beta() {
        // Beta(2,3) density at 0.3: 12 * 0.3 * 0.7^2
        let d = Dirichlet::new(vec![2.0, 3.0]).unwrap();
        let v = d.log_density(&[0.3f64.ln(), 0.7f64.ln()]).exp();
        assert!((v - 12.0 * 0.3 * 0.49).abs() < 1e-12);
    }

    #[test]
    fn tiny_shapes_stay_finite() {
        let d = Dirichlet::new(vec![1e-3; 36]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = vec![0.0; 36];
        for _ in 0..100 {
            d.sample_log(&mut rng, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
            let lse = crate::link::log_sum_exp(out.iter().copied());
            assert!(lse.abs() < 1e-12);
        }
    }

    #[test]
    fn log_ratio_matches_density_difference() {
        let t = ProductDirichlet::new(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let g = ProductDirichlet::new(vec![vec![0.5, 4.0, 1.5]]).unwrap();
        let ratio = LogRatio::new(&t, &g).unwrap();
        let lp = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let want = t.strata[0].log_density(&lp) - g.strata[0].log_density(&lp);
        assert!((ratio.eval(&lp) - want).abs() < 1e-12);
    }
}
