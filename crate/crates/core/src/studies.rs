//! Model sets for the bundled case studies.
//!
//! Every study names its models `M1`, `M2`, ... with `M1` the encompassing
//! model. Equality rows use the about-equality tolerance [`EPSILON`].

use crate::error::{Error, Result};
use crate::hypothesis::{Constraint, ConstraintEntry, LinearRow, ModelDefinition, Relation, Term};
use crate::link::LogitType;

/// Starting tolerance for about-equality constraints.
pub const EPSILON: f64 = 0.1;

fn entry(constraint: Constraint) -> ConstraintEntry {
    ConstraintEntry::new(constraint)
}

/// Father's by son's occupational status, local logits unless noted.
pub fn father_son() -> Vec<ModelDefinition> {
    let local = vec![LogitType::Local; 2];
    let tp2 = entry(Constraint::Tp2 { pair: [1, 2] });
    vec![
        ModelDefinition::new("M1", local.clone()).with_notes("encompassing"),
        ModelDefinition::new("M2", local.clone())
            .with_epsilon(EPSILON)
            .with(entry(Constraint::Independence { pair: [1, 2] }))
            .with_notes("independence"),
        ModelDefinition::new("M3", vec![LogitType::Global; 2])
            .with(entry(Constraint::Pqd { pair: [1, 2] }))
            .with_notes("positive quadrant dependence"),
        ModelDefinition::new("M4", local.clone())
            .with(tp2.clone())
            .with_notes("total positivity of order 2"),
        ModelDefinition::new("M5", local.clone())
            .with_epsilon(EPSILON)
            .with(tp2.clone())
            .with(entry(Constraint::UniformAssociation { pair: [1, 2] }))
            .with_notes("TP2 and uniform association"),
        ModelDefinition::new("M6", local.clone())
            .with_epsilon(EPSILON)
            .with(tp2.clone())
            .with(entry(Constraint::MarginalHomogeneity { pair: [1, 2] }))
            .with_notes("TP2 and marginal homogeneity"),
        ModelDefinition::new("M7", local)
            .with(tp2)
            .with(entry(Constraint::StochasticOrder { pair: [1, 2] }))
            .with_notes("TP2 and son's local logits above father's"),
    ]
}

/// Impairment by Alzheimer diagnosis, stratified by age, reverse
/// continuation logits. Variable 1 is impairment, variable 2 the diagnosis.
pub fn alzheimer() -> Vec<ModelDefinition> {
    let rc = vec![LogitType::ReverseContinuation; 2];
    let assoc = || entry(Constraint::PositiveAssociation { pair: [1, 2] });
    let m6 = |name: &str| {
        ModelDefinition::new(name, rc.clone())
            .with(assoc())
            .with(assoc().between())
    };
    let increase = |v: usize| entry(Constraint::MarginIncrease { variable: v }).between();
    vec![
        ModelDefinition::new("M1", rc.clone()).with_notes("encompassing"),
        ModelDefinition::new("M2", rc.clone())
            .with_epsilon(EPSILON)
            .with(entry(Constraint::Independence { pair: [1, 2] }))
            .with_notes("conditional independence"),
        ModelDefinition::new("M3", rc.clone())
            .with(assoc())
            .with_notes("positive association in every stratum"),
        ModelDefinition::new("M4", rc.clone())
            .with_epsilon(EPSILON)
            .with(assoc())
            .with(entry(Constraint::Independence { pair: [1, 2] }).between())
            .with_notes("M3 with equal association across strata"),
        ModelDefinition::new("M5", rc.clone())
            .with(assoc())
            .with(assoc().between().negated())
            .with_notes("M3 with stronger association under 75"),
        m6("M6").with_notes("M3 with stronger association from 75"),
        m6("M7")
            .with(increase(2))
            .with_notes("M6 with the diagnosis margin increasing with age"),
        m6("M8")
            .with(increase(1))
            .with_notes("M6 with the impairment margin increasing with age"),
        m6("M9")
            .with(increase(1))
            .with(increase(2))
            .with_notes("M6 with both margins increasing with age"),
    ]
}

fn term(margin: usize, index: usize, stratum: usize, coef: f64) -> Term {
    Term {
        margin: vec![margin],
        index,
        stratum: Some(stratum),
        coef,
    }
}

/// Additive logits `alpha_cut + beta_occasion + gamma_group` for the four
/// occasions: a constant shift over time and between the two groups.
fn constant_shift() -> Constraint {
    let mut rows = Vec::new();
    // Within a group, the gap between the two cut points is the same at
    // every occasion.
    for g in 1..=2 {
        for v in 2..=4 {
            rows.push(LinearRow {
                terms: vec![term(v, 2, g, 1.0), term(v, 1, g, -1.0), term(1, 2, g, -1.0), term(1, 1, g, 1.0)],
                relation: Relation::Equal,
            });
        }
    }
    // The group difference is the same at every occasion and cut point.
    let diff = |v: usize, a: usize| [term(v, a, 2, 1.0), term(v, a, 1, -1.0)];
    let neg = |v: usize, a: usize| [term(v, a, 2, -1.0), term(v, a, 1, 1.0)];
    for v in 2..=4 {
        rows.push(LinearRow {
            terms: diff(v, 1).into_iter().chain(neg(1, 1)).collect(),
            relation: Relation::Equal,
        });
    }
    rows.push(LinearRow {
        terms: diff(1, 2).into_iter().chain(neg(1, 1)).collect(),
        relation: Relation::Equal,
    });
    Constraint::Linear { rows }
}

const PAIRS: [[usize; 2]; 6] = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]];

/// Four occasions of an ordinal response, stratified by treatment group,
/// global logits.
pub fn skin_trial() -> Vec<ModelDefinition> {
    let global = vec![LogitType::Global; 4];
    let m2 = |name: &str| {
        ModelDefinition::new(name, global.clone())
            .with_epsilon(EPSILON)
            .with(entry(Constraint::NoHighOrder { order: 2 }))
    };
    let m3 = |name: &str| {
        let uniform = PAIRS.iter().map(|&pair| entry(Constraint::UniformAssociation { pair }));
        let equal_between = PAIRS.iter().map(|&pair| {
            entry(Constraint::Select {
                margin: pair.to_vec(),
                indices: Some(vec![1]),
                relation: Relation::Equal,
            })
            .between()
        });
        m2(name)
            .with_all(uniform)
            .with_all(equal_between)
            .with(entry(constant_shift()))
    };
    vec![
        ModelDefinition::new("M1", global.clone()).with_notes("encompassing"),
        m2("M2").with_notes("no interactions above order two"),
        m3("M3").with_notes("uniform association within and between groups, constant logit shift"),
        m3("M4")
            .with_all(PAIRS.iter().map(|&pair| entry(Constraint::Pqd { pair })))
            .with_all((1..=4).map(|v| entry(Constraint::MarginIncrease { variable: v }).between()))
            .with_notes("M3 with PQD and every margin higher in the second group"),
    ]
}

/// Names of the studies with bundled model sets, matching the fixture names.
pub const STUDIES: [&str; 3] = ["father_son", "alzheimer", "skin_trial"];

/// The model set for a bundled dataset.
pub fn models_for(dataset: &str) -> Result<Vec<ModelDefinition>> {
    match dataset {
        "father_son" => Ok(father_son()),
        "alzheimer" => Ok(alzheimer()),
        "skin_trial" => Ok(skin_trial()),
        other => Err(Error::spec(format!(
            "no bundled models for '{other}' (known: {})",
            STUDIES.join(", ")
        ))),
    }
}
