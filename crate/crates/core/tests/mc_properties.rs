use encompass::fit::prior_center;
use encompass::fixtures;
use encompass::hypothesis::{Constraint, ConstraintEntry, ModelDefinition, ModelSpec};
use encompass::link::LogitType;
use encompass::mc::estimate::RARE_EVENT_WARNING;
use encompass::mc::{
    about_equality_bf, bayes_factor, compare_models, estimate_bf, estimate_proportion_direct, importance_estimate,
    posterior_draws_under_model, replicate_bf, sample_dirichlet, sample_prior, CenterKind, EpsilonSchedule,
    ImportanceDensity, PriorSpec, RunSettings,
};
use encompass::table::{ContingencyTable, StratifiedTable};

fn entry(c: Constraint) -> ConstraintEntry {
    ConstraintEntry::new(c)
}

fn local(name: &str, dims: &[usize], entries: Vec<Constraint>) -> ModelSpec {
    ModelDefinition::new(name, vec![LogitType::Local; 2])
        .with_all(entries.into_iter().map(entry))
        .build(dims, 1)
        .unwrap()
}

fn table3() -> StratifiedTable {
    StratifiedTable::single(ContingencyTable::new(vec![3, 3], vec![20, 10, 5, 10, 20, 10, 5, 10, 20]).unwrap())
}

fn quick(draws: usize, replicates: usize) -> RunSettings {
    RunSettings {
        draws,
        pilot: 5_000,
        replicates,
        ..RunSettings::default()
    }
}

#[test]
fn dirichlet_moments() {
    let a = [2.0, 3.0, 5.0];
    let n = 100_000;
    let draws = sample_dirichlet(&[a.to_vec()], n, 11).unwrap();
    let total: f64 = a.iter().sum();
    for (k, &ak) in a.iter().enumerate() {
        let values: Vec<f64> = (0..n).map(|i| draws.draw(i)[k].exp()).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m = ak / total;
        let v = m * (1.0 - m) / (total + 1.0);
        assert!((mean - m).abs() < 4.0 * (v / n as f64).sqrt(), "mean of cell {k}: {mean} vs {m}");
        assert!((var - v).abs() < 0.03 * v, "variance of cell {k}: {var} vs {v}");
    }
}

#[test]
fn two_by_two_positive_association_has_prior_proportion_one_half() {
    let model = local("pa", &[2, 2], vec![Constraint::PositiveAssociation { pair: [1, 2] }]);
    let draws = sample_prior(&PriorSpec::symmetric(1.0, 4, 1), 100_000, 5).unwrap();
    let p = estimate_proportion_direct(&draws, &model).unwrap();
    assert!((p.value - 0.5).abs() < 3.0 * p.se, "{} +- {}", p.value, p.se);
}

#[test]
fn encompassing_model_has_proportion_one() {
    let model = ModelSpec::encompassing(&[3, 3], &[LogitType::Local; 2], 1).unwrap();
    let draws = sample_prior(&PriorSpec::symmetric(1.0, 9, 1), 1_000, 5).unwrap();
    assert_eq!(estimate_proportion_direct(&draws, &model).unwrap().value, 1.0);
    let bf = estimate_bf(&model, &table3(), &PriorSpec::symmetric(1.0, 9, 1), &quick(2_000, 1)).unwrap();
    assert_eq!(bf.log_bf, 0.0);
}

fn assert_agree(a: &encompass::mc::ProportionEstimate, b: &encompass::mc::ProportionEstimate, what: &str) {
    let combined = (a.se.powi(2) + b.se.powi(2)).sqrt();
    assert!(
        (a.value - b.value).abs() < 3.0 * combined,
        "{what}: direct {} importance {} (combined se {combined})",
        a.value,
        b.value
    );
}

#[test]
fn direct_and_importance_routes_agree() {
    // 2x2 positive association on the prior.
    let pa = local("pa", &[2, 2], vec![Constraint::PositiveAssociation { pair: [1, 2] }]);
    let prior2 = PriorSpec::symmetric(1.0, 4, 1);
    let direct = estimate_proportion_direct(&sample_prior(&prior2, 100_000, 1).unwrap(), &pa).unwrap();
    let center = vec![vec![0.3, 0.2, 0.2, 0.3]];
    let g = ImportanceDensity::new(2.0, &prior2.concentration, &center, CenterKind::PriorCenter).unwrap();
    let imp = importance_estimate(&pa, &prior2.concentration, &g, 100_000, 2).unwrap();
    assert_agree(&direct, &imp, "2x2 prior");

    // 3x3 TP2 on the prior, acceptance about 1%. The proposal is wider than
    // the target so the weights stay bounded.
    let tp2 = local("tp2", &[3, 3], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let prior3 = PriorSpec::symmetric(1.0, 9, 1);
    let direct = estimate_proportion_direct(&sample_prior(&prior3, 200_000, 3).unwrap(), &tp2).unwrap();
    let center = prior_center(&tp2).unwrap().pi_hat;
    let g = ImportanceDensity::new(0.5, &prior3.concentration, &center, CenterKind::PriorCenter).unwrap();
    let imp = importance_estimate(&tp2, &prior3.concentration, &g, 200_000, 4).unwrap();
    assert!(direct.value > 0.005);
    assert_agree(&direct, &imp, "3x3 prior");

    // 3x3 TP2 on a posterior.
    let post = prior3.target(encompass::mc::Side::Posterior, &table3()).unwrap();
    let draws = sample_dirichlet(&post, 100_000, 5).unwrap();
    let direct = estimate_proportion_direct(&draws, &tp2).unwrap();
    let g = ImportanceDensity::new(0.5, &post, &center, CenterKind::PriorCenter).unwrap();
    let imp = importance_estimate(&tp2, &post, &g, 100_000, 6).unwrap();
    assert_agree(&direct, &imp, "3x3 posterior");
}

#[test]
fn nested_models_have_smaller_proportions_on_the_same_draws() {
    let draws = sample_prior(&PriorSpec::symmetric(1.0, 9, 1), 50_000, 9).unwrap();
    let chain = [
        local("m0", &[3, 3], vec![]),
        local("m1", &[3, 3], vec![Constraint::PositiveAssociation { pair: [1, 2] }]),
        local(
            "m2",
            &[3, 3],
            vec![
                Constraint::PositiveAssociation { pair: [1, 2] },
                Constraint::StochasticOrder { pair: [1, 2] },
            ],
        ),
    ];
    let values: Vec<f64> = chain
        .iter()
        .map(|m| estimate_proportion_direct(&draws, m).unwrap().value)
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    assert!(values[2] > 0.0);
}

#[test]
fn fixed_seed_gives_identical_serialised_estimates() {
    let model = local("tp2", &[3, 3], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let prior = PriorSpec::symmetric(1.0, 9, 1);
    let settings = quick(20_000, 2);
    let a = bayes_factor(&model, &table3(), &prior, &settings).unwrap();
    let b = bayes_factor(&model, &table3(), &prior, &settings).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let c = one.install(|| bayes_factor(&model, &table3(), &prior, &settings).unwrap());
    let d = four.install(|| bayes_factor(&model, &table3(), &prior, &settings).unwrap());
    assert_eq!(serde_json::to_string(&c).unwrap(), serde_json::to_string(&a).unwrap());
    assert_eq!(serde_json::to_string(&d).unwrap(), serde_json::to_string(&a).unwrap());

    let other = bayes_factor(&model, &table3(), &prior, &RunSettings { seed: 7, ..settings }).unwrap();
    assert_ne!(other.log_bf, a.log_bf);
}

fn independence(eps: f64) -> ModelSpec {
    ModelDefinition::new("indep", vec![LogitType::Local; 2])
        .with_epsilon(eps)
        .with(entry(Constraint::Independence { pair: [1, 2] }))
        .build(&[3, 3], 1)
        .unwrap()
}

#[test]
fn reported_log_bf_is_the_sum_of_stage_factors() {
    let settings = RunSettings {
        schedule: EpsilonSchedule {
            stop_tol: 0.0,
            max_stages: 4,
            ..EpsilonSchedule::default()
        },
        ..quick(20_000, 3)
    };
    let est = about_equality_bf(&independence(0.5), &table3(), &PriorSpec::symmetric(1.0, 9, 1), &settings).unwrap();
    for run in &est.runs {
        let sum: f64 = run.stages.iter().map(|s| s.log_factor).sum();
        assert_eq!(run.log_bf, sum);
        let last = run.stages.last().unwrap();
        assert!((last.log_bf - sum).abs() < 1e-9);
    }
    let mean = est.replicates.iter().sum::<f64>() / est.replicates.len() as f64;
    assert_eq!(est.log_bf, mean);
}

#[test]
fn single_stage_schedule_reproduces_the_fixed_tolerance_estimate() {
    let prior = PriorSpec::symmetric(1.0, 9, 1);
    let model = independence(0.5);
    let one = RunSettings {
        schedule: EpsilonSchedule {
            stop_tol: 0.0,
            max_stages: 1,
            ..EpsilonSchedule::default()
        },
        ..quick(20_000, 1)
    };
    let many = RunSettings {
        schedule: EpsilonSchedule {
            stop_tol: 0.0,
            max_stages: 3,
            ..EpsilonSchedule::default()
        },
        ..one.clone()
    };
    let a = about_equality_bf(&model, &table3(), &prior, &one).unwrap();
    let b = about_equality_bf(&model, &table3(), &prior, &many).unwrap();
    assert_eq!(a.runs[0].stages.len(), 1);
    assert_eq!(a.log_bf, b.runs[0].stages[0].log_bf);
}

#[test]
fn equality_satisfied_by_the_data_stops_after_one_shrink() {
    // Counts from an independence table, few enough that the posterior of
    // the log-odds ratio is flat across the band: halving the tolerance
    // halves both proportions alike.
    let rows = [0.3, 0.7];
    let cols = [0.6, 0.4];
    let counts: Vec<u64> = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| (r * c * 200.0_f64).round() as u64))
        .collect();
    let table = StratifiedTable::single(ContingencyTable::new(vec![2, 2], counts).unwrap());
    let model = ModelDefinition::new("indep", vec![LogitType::Local; 2])
        .with_epsilon(0.1)
        .with(entry(Constraint::Independence { pair: [1, 2] }))
        .build(&[2, 2], 1)
        .unwrap();
    let est = about_equality_bf(&model, &table, &PriorSpec::symmetric(1.0, 4, 1), &quick(100_000, 1)).unwrap();
    let stages = &est.runs[0].stages;
    assert!(!est.truncated());
    assert_eq!(stages.len(), 2);
    assert!(stages[1].log_factor.abs() < 0.1, "{}", stages[1].log_factor);
}

#[test]
fn replicate_spread() {
    let model = local("tp2", &[3, 3], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let prior = PriorSpec::symmetric(1.0, 9, 1);
    let single = replicate_bf(&model, &table3(), &prior, &quick(10_000, 1), 1).unwrap();
    assert_eq!(single.sd, 0.0);
    assert_eq!(single.log_bf, single.replicates[0]);
    let small = replicate_bf(&model, &table3(), &prior, &quick(5_000, 1), 10).unwrap();
    let large = replicate_bf(&model, &table3(), &prior, &quick(40_000, 1), 10).unwrap();
    assert!(large.sd < small.sd, "sd {} at 40k vs {} at 5k", large.sd, small.sd);
}

#[test]
fn model_comparison_is_antisymmetric() {
    let prior = PriorSpec::symmetric(1.0, 9, 1);
    let a = estimate_bf(&local("tp2", &[3, 3], vec![Constraint::Tp2 { pair: [1, 2] }]), &table3(), &prior, &quick(10_000, 1)).unwrap();
    let b = estimate_bf(
        &local("pa", &[3, 3], vec![Constraint::PositiveAssociation { pair: [1, 2] }]),
        &table3(),
        &prior,
        &quick(10_000, 1),
    )
    .unwrap();
    assert_eq!(compare_models(&a, &a), 0.0);
    assert_eq!(compare_models(&a, &b), -compare_models(&b, &a));
}

#[test]
fn tp2_on_six_by_six_is_a_rare_event_for_direct_sampling() {
    let model = local("tp2", &[6, 6], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let draws = sample_prior(&PriorSpec::symmetric(1.0, 36, 1), 1_000_000, 3).unwrap();
    let p = estimate_proportion_direct(&draws, &model).unwrap();
    assert_eq!(p.accepted, 0);
    assert_eq!(p.value, 0.0);
    assert!(p.warnings.iter().any(|w| w == RARE_EVENT_WARNING));
}

#[test]
fn zero_acceptance_is_reported_not_fatal() {
    let model = local("tp2", &[6, 6], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let prior = PriorSpec::symmetric(1.0, 36, 1);
    let g = ImportanceDensity::new(1.0, &prior.concentration, &prior.concentration, CenterKind::PriorCenter).unwrap();
    let p = importance_estimate(&model, &prior.concentration, &g, 2_000, 1).unwrap();
    assert_eq!((p.value, p.ess), (0.0, 0.0));
    assert!(p.warnings.iter().any(|w| w == RARE_EVENT_WARNING));

    let settings = RunSettings {
        draws: 500,
        pilot: 500,
        alpha_grid: vec![1.0],
        route: encompass::mc::RouteOverride::Direct,
        ..RunSettings::default()
    };
    let err = estimate_bf(&model, &fixtures::father_son(), &prior, &settings).unwrap_err();
    assert!(matches!(err, encompass::Error::Unbounded { .. }), "{err}");
    assert!(!err.is_input_error());
}

#[test]
fn all_zero_table_is_rejected_by_the_bayes_factor() {
    let table = StratifiedTable::single(ContingencyTable::new(vec![3, 3], vec![0; 9]).unwrap());
    let model = local("tp2", &[3, 3], vec![Constraint::Tp2 { pair: [1, 2] }]);
    let err = estimate_bf(&model, &table, &PriorSpec::symmetric(1.0, 9, 1), &quick(1_000, 1)).unwrap_err();
    assert!(err.is_input_error(), "{err}");
}

#[test]
fn posterior_acceptance_matches_the_posterior_proportion() {
    let model = local("pa", &[3, 3], vec![Constraint::PositiveAssociation { pair: [1, 2] }]);
    let prior = PriorSpec::symmetric(1.0, 9, 1);
    let summary = posterior_draws_under_model(&model, &table3(), &prior, 50_000, 21).unwrap();
    let est = estimate_bf(&model, &table3(), &prior, &quick(50_000, 1)).unwrap();
    let post = &est.runs[0].stages[0].posterior;
    let combined = (summary.se.powi(2) + post.se.powi(2)).sqrt();
    assert!((summary.acceptance - post.value).abs() < 3.0 * combined.max(1e-3));
    let all = ModelSpec::encompassing(&[3, 3], &[LogitType::Local; 2], 1).unwrap();
    let s = posterior_draws_under_model(&all, &table3(), &prior, 1_000, 2).unwrap();
    assert_eq!(s.accepted, 1_000);
    // The summary point satisfies the model: local log-odds ratios of the
    // mean table are positive when all accepted draws have them positive.
    for k in 4..8 {
        assert!(summary.eta[k].lower >= 0.0);
    }
}

#[test]
fn stratified_estimate_uses_one_factor_per_stratum() {
    let table = fixtures::alzheimer();
    let def = encompass::studies::alzheimer().remove(2);
    let model = def.build(table.dims(), 2).unwrap();
    let prior = PriorSpec::symmetric(1.0, 20, 2);
    let est = estimate_bf(&model, &table, &prior, &quick(20_000, 1)).unwrap();
    assert_eq!(est.factors.len(), 2);
    assert_eq!(est.factors[0].stratum, Some(1));
    assert_ne!(est.factors[0].seed, est.factors[1].seed);
    let stage = &est.runs[0].stages[0];
    assert!((stage.log_bf - (stage.posterior.log_value - stage.prior.log_value)).abs() < 1e-12);
}
