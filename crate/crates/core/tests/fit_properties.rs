use encompass::fit::{constrained_mle, prior_center, FitOptions};
use encompass::fixtures;
use encompass::hypothesis::{satisfies, Constraint, ConstraintEntry, ModelDefinition};
use encompass::link::{build_link, LogitType};
use encompass::table::{ContingencyTable, StratifiedTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn loglik(counts: &[u64], pi: &[f64]) -> f64 {
    counts.iter().zip(pi).map(|(&c, p)| c as f64 * p.ln()).sum()
}

#[test]
fn independence_fit_matches_outer_product_of_margins() {
    let table = fixtures::father_son();
    let model = ModelDefinition::new("M2", vec![LogitType::Local; 2])
        .with_epsilon(1e-10)
        .with(ConstraintEntry::new(Constraint::Independence { pair: [1, 2] }))
        .build(&[6, 6], 1)
        .unwrap();
    let opts = FitOptions {
        smoothing: 0.0,
        ..FitOptions::default()
    };
    let fit = constrained_mle(&table, &model, &opts).unwrap();
    assert!(fit.converged, "kkt {} violation {}", fit.kkt_residual, fit.max_violation);
    let counts = table.tables()[0].counts();
    let n = table.total() as f64;
    let rows: Vec<f64> = (0..6).map(|i| (0..6).map(|j| counts[i * 6 + j] as f64).sum::<f64>() / n).collect();
    let cols: Vec<f64> = (0..6).map(|j| (0..6).map(|i| counts[i * 6 + j] as f64).sum::<f64>() / n).collect();
    for i in 0..6 {
        for j in 0..6 {
            let got = fit.pi_hat[0][i * 6 + j];
            assert!((got - rows[i] * cols[j]).abs() < 1e-7, "cell ({i},{j})");
        }
    }
}

#[test]
fn tp2_fit_dominates_independence_fit() {
    let table = fixtures::father_son();
    let opts = FitOptions::default();
    let indep = ModelDefinition::new("M2", vec![LogitType::Local; 2])
        .with_epsilon(1e-6)
        .with(ConstraintEntry::new(Constraint::Independence { pair: [1, 2] }))
        .build(&[6, 6], 1)
        .unwrap();
    let tp2 = ModelDefinition::new("M4", vec![LogitType::Local; 2])
        .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
        .build(&[6, 6], 1)
        .unwrap();
    let a = constrained_mle(&table, &indep, &opts).unwrap();
    let b = constrained_mle(&table, &tp2, &opts).unwrap();
    assert!(b.converged);
    assert!(b.loglik >= a.loglik);
    assert!(b.max_violation <= 1e-8);
}

#[test]
fn constrained_optimum_beats_random_feasible_points() {
    // Negative association, so the TP2 constraints bind.
    let counts = vec![2, 9, 14, 8, 10, 7, 15, 8, 3];
    let table = StratifiedTable::single(ContingencyTable::new(vec![3, 3], counts.clone()).unwrap());
    let model = ModelDefinition::new("tp2", vec![LogitType::Local; 2])
        .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
        .build(&[3, 3], 1)
        .unwrap();
    let opts = FitOptions {
        smoothing: 0.0,
        ..FitOptions::default()
    };
    let fit = constrained_mle(&table, &model, &opts).unwrap();
    assert!(fit.converged);
    let best = loglik(&counts, &fit.pi_hat[0]);

    let link = build_link(&[3, 3], &[LogitType::Local; 2]).unwrap();
    let gamma = Gamma::new(1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut found = 0;
    while found < 100 {
        let mut pi: Vec<f64> = (0..9).map(|_| gamma.sample(&mut rng)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        let eta = link.eta_from_pi(&pi).unwrap();
        if satisfies(&eta, &model.constraints).unwrap() {
            found += 1;
            assert!(best >= loglik(&counts, &pi));
        }
    }
}

#[test]
fn fitted_tables_satisfy_their_constraints() {
    let table = fixtures::father_son();
    let def = ModelDefinition::new("M6", vec![LogitType::Local; 2])
        .with_epsilon(0.025)
        .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
        .with(ConstraintEntry::new(Constraint::MarginalHomogeneity { pair: [1, 2] }));
    let model = def.build(&[6, 6], 1).unwrap();
    let fit = constrained_mle(&table, &model, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    let slack = model.constraints.scaled_epsilon(1.0 + 1e-6);
    let rounded: Vec<f64> = fit.eta_hat.iter().map(|v| if v.abs() < 1e-8 { 0.0 } else { *v }).collect();
    assert!(satisfies(&rounded, &slack).unwrap());
    for p in &fit.pi_hat[0] {
        assert!(*p > 0.0);
    }
    let total: f64 = fit.pi_hat[0].iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn prior_center_of_independence_is_uniform() {
    let model = ModelDefinition::new("M2", vec![LogitType::Local; 2])
        .with_epsilon(0.1)
        .with(ConstraintEntry::new(Constraint::Independence { pair: [1, 2] }))
        .build(&[6, 6], 1)
        .unwrap();
    let fit = prior_center(&model).unwrap();
    assert!(fit.pi_hat[0].iter().all(|p| (p - 1.0 / 36.0).abs() < 1e-10));
}

#[test]
fn all_zero_table_is_rejected_without_smoothing() {
    let table = StratifiedTable::single(ContingencyTable::new(vec![2, 2], vec![0; 4]).unwrap());
    let model = encompass::hypothesis::ModelSpec::encompassing(&[2, 2], &[LogitType::Local; 2], 1).unwrap();
    let opts = FitOptions {
        smoothing: 0.0,
        ..FitOptions::default()
    };
    assert!(matches!(constrained_mle(&table, &model, &opts), Err(encompass::Error::Domain(_))));
}
