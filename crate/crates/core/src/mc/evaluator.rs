//! Constraint checks compiled for repeated evaluation on sampled tables.

use crate::error::{Error, Result};
use crate::hypothesis::ModelSpec;
use crate::link::{LinkMatrices, PartialLink, Scratch};

/// Outcome of checking one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    /// All inequality rows hold.
    pub inequalities: bool,
    /// `max_i |E_i eta| / eps_i`; the draw satisfies the model at tolerance
    /// scale `f` iff `inequalities && tau <= f`.
    pub tau: f64,
}

impl Check {
    pub fn satisfied(&self, scale: f64) -> bool {
        self.inequalities && self.tau <= scale
    }
}

#[derive(Debug, Clone)]
pub struct CompiledModel {
    r: usize,
    /// Per stratum: the partial link and the offset of its rows in `buf`.
    strata: Vec<(PartialLink, usize)>,
    width: usize,
    e_rows: Vec<(Vec<(usize, f64)>, f64)>,
    u_rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    link: Scratch,
    eta: Vec<f64>,
}

impl CompiledModel {
    pub fn new(model: &ModelSpec, link: &LinkMatrices) -> Result<Self> {
        let t = link.t();
        let cs = &model.constraints;
        if cs.cols() != model.strata * t {
            return Err(Error::dim("constraint width does not match the link"));
        }
        let used = cs.used_columns();
        let mut strata = Vec::with_capacity(model.strata);
        let mut position = vec![usize::MAX; cs.cols()];
        let mut width = 0;
        for b in 0..model.strata {
            let rows: Vec<usize> = used
                .iter()
                .filter(|&&c| c / t == b)
                .map(|&c| c % t)
                .collect();
            for (k, &row) in rows.iter().enumerate() {
                position[b * t + row] = width + k;
            }
            strata.push((link.partial(&rows), width));
            width += rows.len();
        }
        let sparse = |row: nalgebra::DMatrixView<f64>| -> Vec<(usize, f64)> {
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (position[j], v))
                .collect()
        };
        let e_rows = (0..cs.e.nrows())
            .map(|i| (sparse(cs.e.rows(i, 1)), cs.epsilon[i]))
            .collect();
        let u_rows = (0..cs.u.nrows()).map(|i| sparse(cs.u.rows(i, 1))).collect();
        Ok(Self {
            r: link.r(),
            strata,
            width,
            e_rows,
            u_rows,
        })
    }

    pub fn has_equalities(&self) -> bool {
        !self.e_rows.is_empty()
    }

    /// Check one draw given `log pi` for all strata, stratum-major.
    pub fn check(&self, log_pi: &[f64], scratch: &mut EvalScratch) -> Check {
        scratch.eta.resize(self.width, 0.0);
        for (b, (partial, offset)) in self.strata.iter().enumerate() {
            if partial.is_empty() {
                continue;
            }
            let out = &mut scratch.eta[*offset..*offset + partial.len()];
            partial.eval_log(&log_pi[b * self.r..(b + 1) * self.r], &mut scratch.link, out);
        }
        let eta = &scratch.eta;
        let dot = |row: &[(usize, f64)]| row.iter().map(|&(k, w)| w * eta[k]).sum::<f64>();
        let inequalities = self.u_rows.iter().all(|row| dot(row) >= 0.0);
        let tau = if inequalities {
            self.e_rows
                .iter()
                .map(|(row, eps)| dot(row).abs() / eps)
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        Check { inequalities, tau }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{satisfies, Constraint, ConstraintEntry, ModelDefinition};
    use crate::link::{build_link, LogitType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compiled_check_agrees_with_satisfies() {
        let def = ModelDefinition::new("m", vec![LogitType::Global, LogitType::Local])
            .with_epsilon(2.0)
            .with(ConstraintEntry::new(Constraint::PositiveAssociation { pair: [1, 2] }))
            .with(ConstraintEntry::new(Constraint::UniformAssociation { pair: [1, 2] }).between());
        let model = def.build(&[3, 3], 2).unwrap();
        let link = build_link(&[3, 3], &model.logit_types).unwrap();
        let compiled = CompiledModel::new(&model, &link).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scratch = EvalScratch::default();
        let mut agree = [0usize; 2];
        for _ in 0..2000 {
            let mut pis = Vec::new();
            let mut logs = Vec::new();
            for _ in 0..2 {
                let w: Vec<f64> = (0..9).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                let pi: Vec<f64> = w.iter().map(|v| v / s).collect();
                logs.extend(pi.iter().map(|p| p.ln()));
                pis.push(pi);
            }
            let eta = link.eta_from_pi_strata(&pis).unwrap();
            let want = satisfies(&eta, &model.constraints).unwrap();
            let got = compiled.check(&logs, &mut scratch).satisfied(1.0);
            assert_eq!(want, got);
            agree[want as usize] += 1;
        }
        assert!(agree[0] > 0 && agree[1] > 0, "{agree:?}");
    }
}
