use encompass::hypothesis::{
    compose, independence, marginal_homogeneity, positive_association, satisfies, stochastic_order,
    uniform_association, ConstraintSet,
};
use encompass::link::{build_link, LogitType};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// A random TP2 table: `log pi_ij = a_i + b_j + sum_{k<i, l<j} phi_kl` with
/// `phi >= 0`, whose local log-odds ratios are exactly `phi`.
fn random_tp2(rng: &mut ChaCha8Rng, m1: usize, m2: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let exp = Exp::new(2.0).unwrap();
    let a: Vec<f64> = (0..m1).map(|_| normal.sample(rng)).collect();
    let b: Vec<f64> = (0..m2).map(|_| normal.sample(rng)).collect();
    let phi: Vec<f64> = (0..(m1 - 1) * (m2 - 1))
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { exp.sample(rng) })
        .collect();
    let mut logp = vec![0.0; m1 * m2];
    for i in 0..m1 {
        for j in 0..m2 {
            let mut v = a[i] + b[j];
            for k in 0..i {
                for l in 0..j {
                    v += phi[k * (m2 - 1) + l];
                }
            }
            logp[i * m2 + j] = v;
        }
    }
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[test]
fn tp2_implies_pqd_and_continuation_association() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dims = [6, 6];
    let local = build_link(&dims, &[LogitType::Local; 2]).unwrap();
    let global = build_link(&dims, &[LogitType::Global; 2]).unwrap();
    let cont = build_link(&dims, &[LogitType::Continuation; 2]).unwrap();
    let tp2 = ConstraintSet::inequality(positive_association(&local, (0, 1)).unwrap()).unwrap();
    let pqd = ConstraintSet::inequality(positive_association(&global, (0, 1)).unwrap()).unwrap();
    let cr = ConstraintSet::inequality(positive_association(&cont, (0, 1)).unwrap()).unwrap();
    let mut checked = 0;
    while checked < 500 {
        let pi = random_tp2(&mut rng, 6, 6);
        let eta_l = local.eta_from_pi(&pi).unwrap();
        // Rounding can push an exactly-zero local ratio to -1e-16.
        let rounded: Vec<f64> = eta_l.iter().map(|v| if v.abs() < 1e-12 { 0.0 } else { *v }).collect();
        assert!(satisfies(&rounded, &tp2).unwrap());
        let eta_g = global.eta_from_pi(&pi).unwrap();
        let eta_c = cont.eta_from_pi(&pi).unwrap();
        let slack = |eta: &[f64], set: &ConstraintSet| {
            (&set.u * nalgebra::DVector::from_column_slice(eta))
                .iter()
                .all(|&v| v >= -1e-12)
        };
        assert!(slack(&eta_g, &pqd), "TP2 table is not PQD");
        assert!(slack(&eta_c, &cr), "TP2 table lacks continuation association");
        checked += 1;
    }
}

fn random_set(rng: &mut ChaCha8Rng, cols: usize) -> ConstraintSet {
    let ne = rng.gen_range(0..3);
    let nu = rng.gen_range(0..3);
    let e = DMatrix::from_fn(ne, cols, |_, _| rng.gen_range(-1.0..1.0));
    let u = DMatrix::from_fn(nu, cols, |_, _| rng.gen_range(-1.0..1.0));
    let eps = (0..ne).map(|_| rng.gen_range(0.05..1.0)).collect();
    ConstraintSet::new(e, u, eps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composition_is_conjunction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = 5;
        let a = random_set(&mut rng, cols);
        let b = random_set(&mut rng, cols);
        let ab = compose(&[a.clone(), b.clone()]).unwrap();
        for _ in 0..20 {
            let eta: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            prop_assert_eq!(
                satisfies(&eta, &ab).unwrap(),
                satisfies(&eta, &a).unwrap() && satisfies(&eta, &b).unwrap()
            );
        }
    }

    #[test]
    fn shrinking_epsilon_shrinks_the_satisfied_set(
        seed in any::<u64>(),
        factor in 0.01f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let link = build_link(&[3, 3], &[LogitType::Local; 2]).unwrap();
        let set = compose(&[
            ConstraintSet::equality(independence(&link, (0, 1)).unwrap(), 0.5).unwrap(),
            ConstraintSet::equality(marginal_homogeneity(&link, (0, 1)).unwrap(), 0.3).unwrap(),
            ConstraintSet::equality(uniform_association(&link, (0, 1)).unwrap(), 0.2).unwrap(),
            ConstraintSet::inequality(stochastic_order(&link, (0, 1)).unwrap()).unwrap(),
        ]).unwrap();
        let tight = set.scaled_epsilon(factor);
        for _ in 0..50 {
            let eta: Vec<f64> = (0..link.t()).map(|_| rng.gen_range(-0.6..0.6)).collect();
            if satisfies(&eta, &tight).unwrap() {
                prop_assert!(satisfies(&eta, &set).unwrap());
            }
        }
    }

    #[test]
    fn independence_implies_uniform_association(
        m1 in 2usize..6, m2 in 2usize..6, eps in 0.01f64..1.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let link = build_link(&[m1, m2], &[LogitType::Global; 2]).unwrap();
        let ind = ConstraintSet::equality(independence(&link, (0, 1)).unwrap(), eps / 2.0).unwrap();
        let ua_rows = uniform_association(&link, (0, 1)).unwrap();
        let ua = if ua_rows.nrows() == 0 {
            ConstraintSet::empty(link.t())
        } else {
            ConstraintSet::equality(ua_rows, eps).unwrap()
        };
        let eta: Vec<f64> = (0..link.t()).map(|_| rng.gen_range(-eps / 2.0..eps / 2.0)).collect();
        prop_assert!(satisfies(&eta, &ind).unwrap());
        prop_assert!(satisfies(&eta, &ua).unwrap());
    }
}
