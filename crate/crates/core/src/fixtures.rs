//! Bundled datasets used by the case studies and the test suite.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::table::{ContingencyTable, StratifiedTable};

/// Father's (rows) by son's (columns) occupational status, six classes each.
pub fn father_son() -> StratifiedTable {
    #[rustfmt::skip]
    let counts = vec![
        125,  60,  26,  49,  14,   5,
         47,  65,  66, 123,  23,  21,
         31,  58, 110, 223,  64,  32,
         50, 114, 185, 715, 258, 189,
          6,  19,  40, 179, 143,  71,
          3,  14,  32, 141,  91, 106,
    ];
    StratifiedTable::new(
        vec!["father".into(), "son".into()],
        vec!["all".into()],
        vec![ContingencyTable::new(vec![6, 6], counts).expect("static fixture")],
    )
    .expect("static fixture")
}

/// Cognitive impairment (rows, V..I) by Alzheimer diagnosis (columns, IV..I),
/// stratified by age (< 75, >= 75).
pub fn alzheimer() -> StratifiedTable {
    #[rustfmt::skip]
    let young = vec![
        2,  1,  1,  0,
        1, 12, 10,  1,
        0,  8, 27,  5,
        0,  0, 20,  4,
        0,  0,  0, 85,
    ];
    #[rustfmt::skip]
    let old = vec![
        14, 24,  2,  0,
        19, 48, 25,  0,
         1, 25, 63,  4,
         0,  0, 35,  7,
         0,  0,  0, 69,
    ];
    StratifiedTable::new(
        vec!["impairment".into(), "alzheimer".into()],
        vec!["under75".into(), "75plus".into()],
        vec![
            ContingencyTable::new(vec![5, 4], young).expect("static fixture"),
            ContingencyTable::new(vec![5, 4], old).expect("static fixture"),
        ],
    )
    .expect("static fixture")
}

/// Ordinal response (poor/fair, good, excellent) at four occasions, stratified
/// by treatment and placebo groups.
pub fn skin_trial() -> StratifiedTable {
    // Each line is one (A1, A2) row; within a line A3 varies slowest, A4 fastest.
    #[rustfmt::skip]
    let treatment = vec![
        0, 1, 0,  0, 0, 0,  0, 0, 0,
        0, 2, 0,  0, 3, 2,  0, 0, 1,
        0, 0, 0,  0, 1, 0,  0, 0, 0,
        0, 0, 0,  0, 3, 0,  0, 0, 0,
        0, 0, 1,  0, 2, 4,  1, 1, 0,
        0, 0, 0,  0, 1, 3,  0, 0, 5,
        0, 0, 0,  0, 0, 0,  0, 0, 0,
        0, 0, 0,  0, 0, 0,  0, 2, 0,
        0, 0, 0,  0, 0, 0,  0, 0, 3,
    ];
    #[rustfmt::skip]
    let placebo = vec![
        0, 6, 1,  0, 2, 0,  0, 0, 0,
        0, 3, 1,  0, 6, 2,  0, 0, 0,
        0, 0, 1,  1, 0, 0,  0, 0, 0,
        0, 0, 0,  0, 0, 0,  0, 0, 0,
        0, 1, 0,  0, 1, 2,  0, 3, 3,
        0, 0, 0,  0, 1, 0,  0, 0, 1,
        0, 0, 0,  0, 0, 0,  0, 0, 0,
        0, 0, 0,  0, 0, 0,  0, 1, 0,
        0, 0, 0,  0, 0, 0,  0, 0, 0,
    ];
    StratifiedTable::new(
        vec!["day3".into(), "day7".into(), "day10".into(), "day14".into()],
        vec!["treatment".into(), "placebo".into()],
        vec![
            ContingencyTable::new(vec![3, 3, 3, 3], treatment).expect("static fixture"),
            ContingencyTable::new(vec![3, 3, 3, 3], placebo).expect("static fixture"),
        ],
    )
    .expect("static fixture")
}

pub const NAMES: [&str; 3] = ["father_son", "alzheimer", "skin_trial"];

pub fn by_name(name: &str) -> Result<StratifiedTable> {
    match name {
        "father_son" => Ok(father_son()),
        "alzheimer" => Ok(alzheimer()),
        "skin_trial" => Ok(skin_trial()),
        other => Err(Error::Validation(vec![format!(
            "unknown fixture '{other}' (available: {})",
            NAMES.join(", ")
        )])),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureInfo {
    pub name: String,
    pub shape: String,
    pub dims: Vec<usize>,
    pub strata: Vec<String>,
    pub n: u64,
}

pub fn list() -> Vec<FixtureInfo> {
    NAMES
        .iter()
        .map(|&name| {
            let t = by_name(name).expect("bundled");
            FixtureInfo {
                name: name.to_string(),
                shape: t.shape_label(),
                dims: t.dims().to_vec(),
                strata: t.strata().to_vec(),
                n: t.total(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::validate;

    #[test]
    fn father_son_shape_and_total() {
        let t = father_son();
        assert_eq!(t.dims(), &[6, 6]);
        // The printed table sums to 3498; the caption's 3488 is a typo.
        assert_eq!(t.total(), 3498);
        assert_eq!(validate(&t).zero_cells, 0);
    }

    #[test]
    fn alzheimer_shape_and_totals() {
        let t = alzheimer();
        assert_eq!(t.dims(), &[5, 4]);
        assert_eq!(t.num_strata(), 2);
        assert_eq!(t.total(), 513);
        assert_eq!(t.stratum_totals(), vec![177, 336]);
    }

    #[test]
    fn skin_trial_sparsity() {
        let t = skin_trial();
        assert_eq!(t.dims(), &[3, 3, 3, 3]);
        assert_eq!(t.total(), 72);
        assert_eq!(t.stratum_totals(), vec![36, 36]);
        let d = validate(&t);
        assert_eq!(d.cells, 162);
        assert_eq!(d.zero_cells, 128);
    }

    #[test]
    fn unknown_fixture() {
        assert!(by_name("nope").is_err());
    }
}
