//! Linear equality and inequality constraints on the marginal parameters.
//!
//! A model is `|E eta| <= epsilon` together with `U eta >= 0`, where `eta`
//! is stacked over strata. Builders produce single-stratum rows that are
//! expanded over strata with [`stratify`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{build_link, LinkMatrices, LogitType};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub e: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub epsilon: Vec<f64>,
}

impl ConstraintSet {
    /// No constraints: the encompassing model.
    pub fn empty(cols: usize) -> Self {
        Self {
            e: DMatrix::zeros(0, cols),
            u: DMatrix::zeros(0, cols),
            epsilon: Vec::new(),
        }
    }

    pub fn new(e: DMatrix<f64>, u: DMatrix<f64>, epsilon: Vec<f64>) -> Result<Self> {
        if e.ncols() != u.ncols() && e.nrows() > 0 && u.nrows() > 0 {
            return Err(Error::dim(format!(
                "E has {} columns, U has {}",
                e.ncols(),
                u.ncols()
            )));
        }
        if epsilon.len() != e.nrows() {
            return Err(Error::dim(format!(
                "{} tolerances for {} equality rows",
                epsilon.len(),
                e.nrows()
            )));
        }
        if let Some(bad) = epsilon.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::domain(format!("tolerance {bad} must be positive")));
        }
        let cols = if e.nrows() > 0 { e.ncols() } else { u.ncols() };
        let e = if e.nrows() == 0 { DMatrix::zeros(0, cols) } else { e };
        let u = if u.nrows() == 0 { DMatrix::zeros(0, cols) } else { u };
        Ok(Self { e, u, epsilon })
    }

    pub fn equality(e: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let cols = e.ncols();
        let eps = vec![epsilon; e.nrows()];
        Self::new(e, DMatrix::zeros(0, cols), eps)
    }

    pub fn inequality(u: DMatrix<f64>) -> Result<Self> {
        let cols = u.ncols();
        Self::new(DMatrix::zeros(0, cols), u, Vec::new())
    }

    pub fn cols(&self) -> usize {
        self.e.ncols()
    }

    pub fn n_equalities(&self) -> usize {
        self.e.nrows()
    }

    pub fn n_inequalities(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.e.nrows() == 0 && self.u.nrows() == 0
    }

    /// The same constraints with every tolerance multiplied by `factor`.
    pub fn scaled_epsilon(&self, factor: f64) -> Self {
        Self {
            e: self.e.clone(),
            u: self.u.clone(),
            epsilon: self.epsilon.iter().map(|v| v * factor).collect(),
        }
    }

    /// Indices of `eta` entries that enter any constraint row.
    pub fn used_columns(&self) -> Vec<usize> {
        (0..self.cols())
            .filter(|&j| {
                self.e.column(j).iter().any(|&v| v != 0.0) || self.u.column(j).iter().any(|&v| v != 0.0)
            })
            .collect()
    }
}

/// `D_h`: first differences, shape `(h-1) x h`.
pub fn first_differences(h: usize) -> Result<DMatrix<f64>> {
    if h < 2 {
        return Err(Error::domain(format!("first differences need h >= 2, got {h}")));
    }
    Ok(DMatrix::from_fn(h - 1, h, |i, j| {
        if j == i {
            -1.0
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StratifyMode {
    /// `I_s ⊗ base`: the same constraint in every stratum.
    #[default]
    Within,
    /// `D_s ⊗ base`: differences between consecutive strata.
    Between,
}

pub fn stratify(base: &DMatrix<f64>, strata: usize, mode: StratifyMode) -> Result<DMatrix<f64>> {
    if strata == 0 {
        return Err(Error::domain("need at least one stratum"));
    }
    match mode {
        StratifyMode::Within => Ok(DMatrix::<f64>::identity(strata, strata).kronecker(base)),
        StratifyMode::Between => {
            if strata < 2 {
                return Err(Error::domain("between-strata constraints need s >= 2"));
            }
            Ok(first_differences(strata)?.kronecker(base))
        }
    }
}

/// Sign with which a variable's logits move when its distribution shifts
/// towards higher categories.
pub fn increase_sign(logit_type: LogitType) -> f64 {
    match logit_type {
        LogitType::Local | LogitType::Global | LogitType::Continuation => 1.0,
        LogitType::ReverseContinuation => -1.0,
    }
}

fn selector(t: usize, rows: impl IntoIterator<Item = usize>) -> DMatrix<f64> {
    let rows: Vec<usize> = rows.into_iter().collect();
    DMatrix::from_fn(rows.len(), t, |i, j| if j == rows[i] { 1.0 } else { 0.0 })
}

fn pair_rows(link: &LinkMatrices, pair: (usize, usize)) -> Result<std::ops::Range<usize>> {
    let (a, b) = pair;
    if a == b || a >= link.q() || b >= link.q() {
        return Err(Error::dim(format!(
            "variable pair ({}, {}) invalid for {} variables",
            a + 1,
            b + 1,
            link.q()
        )));
    }
    let mut vars = [a, b];
    vars.sort_unstable();
    Ok(link.block(&vars).expect("pair block exists").rows.clone())
}

/// `U = (O I_d)`: all log-odds ratios of the pair are non-negative.
pub fn positive_association(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    Ok(selector(link.t(), pair_rows(link, pair)?))
}

/// `E = (O I_d)`: all log-odds ratios of the pair vanish.
pub fn independence(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    positive_association(link, pair)
}

/// `E = (O D_d)`: all log-odds ratios of the pair are equal.
pub fn uniform_association(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    let rows = pair_rows(link, pair)?;
    let d = rows.len();
    let mut out = DMatrix::zeros(d.saturating_sub(1), link.t());
    if d >= 2 {
        let diff = first_differences(d)?;
        out.view_mut((0, rows.start), (d - 1, d)).copy_from(&diff);
    }
    Ok(out)
}

/// `(-I I O)`: logits of the second variable minus those of the first.
fn margin_difference(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    let (a, b) = pair;
    if a >= link.q() || b >= link.q() || a == b {
        return Err(Error::dim(format!("variable pair ({}, {}) invalid", a + 1, b + 1)));
    }
    if link.dims()[a] != link.dims()[b] {
        return Err(Error::dim(format!(
            "variables {} and {} have different category counts",
            a + 1,
            b + 1
        )));
    }
    let ra = link.logit_rows(a);
    let rb = link.logit_rows(b);
    let mut out = DMatrix::zeros(ra.len(), link.t());
    for (k, (i, j)) in ra.zip(rb).enumerate() {
        out[(k, i)] = -1.0;
        out[(k, j)] = 1.0;
    }
    Ok(out)
}

/// `E = (-I I O)`: equal marginal logits.
pub fn marginal_homogeneity(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    margin_difference(link, pair)
}

/// `U = (-I I O)`: every logit of the second variable exceeds the first's.
pub fn stochastic_order(link: &LinkMatrices, pair: (usize, usize)) -> Result<DMatrix<f64>> {
    margin_difference(link, pair)
}

/// `E` selecting every interaction of more than `order` variables.
pub fn zero_higher_interactions(link: &LinkMatrices, order: usize) -> DMatrix<f64> {
    let rows: Vec<usize> = link
        .blocks()
        .iter()
        .filter(|b| b.margin.order() > order)
        .flat_map(|b| b.rows.clone())
        .collect();
    selector(link.t(), rows)
}

/// Logits of variable `i`, signed so that positive means a shift towards
/// higher categories.
pub fn margin_increase(link: &LinkMatrices, i: usize) -> Result<DMatrix<f64>> {
    if i >= link.q() {
        return Err(Error::dim(format!("variable {} out of range", i + 1)));
    }
    let sign = increase_sign(link.logit_types()[i]);
    Ok(selector(link.t(), link.logit_rows(i)) * sign)
}

/// `delta`: true iff `|E eta| <= epsilon` and `U eta >= 0`.
pub fn satisfies(eta: &[f64], constraints: &ConstraintSet) -> Result<bool> {
    if eta.len() != constraints.cols() {
        return Err(Error::dim(format!(
            "eta has {} entries, constraints expect {}",
            eta.len(),
            constraints.cols()
        )));
    }
    let dot = |row: nalgebra::DMatrixView<f64>| -> f64 {
        row.iter().zip(eta).map(|(a, b)| a * b).sum()
    };
    for (i, eps) in constraints.epsilon.iter().enumerate() {
        if dot(constraints.e.rows(i, 1)).abs() > *eps {
            return Ok(false);
        }
    }
    for i in 0..constraints.u.nrows() {
        if dot(constraints.u.rows(i, 1)) < 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Stack constraint sets; satisfaction is the conjunction of the parts.
pub fn compose(parts: &[ConstraintSet]) -> Result<ConstraintSet> {
    let Some(first) = parts.first() else {
        return Err(Error::domain("nothing to compose"));
    };
    let cols = first.cols();
    if let Some(bad) = parts.iter().find(|p| p.cols() != cols) {
        return Err(Error::dim(format!(
            "cannot compose constraints over {} and {} columns",
            cols,
            bad.cols()
        )));
    }
    let ne: usize = parts.iter().map(|p| p.e.nrows()).sum();
    let nu: usize = parts.iter().map(|p| p.u.nrows()).sum();
    let mut e = DMatrix::zeros(ne, cols);
    let mut u = DMatrix::zeros(nu, cols);
    let mut epsilon = Vec::with_capacity(ne);
    let (mut ie, mut iu) = (0, 0);
    for p in parts {
        e.rows_mut(ie, p.e.nrows()).copy_from(&p.e);
        u.rows_mut(iu, p.u.nrows()).copy_from(&p.u);
        ie += p.e.nrows();
        iu += p.u.nrows();
        epsilon.extend_from_slice(&p.epsilon);
    }
    ConstraintSet::new(e, u, epsilon)
}

/// Relation imposed by a selected or linear row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// About-equality to zero within the tolerance.
    Equal,
    Nonnegative,
    Nonpositive,
}

/// One coefficient of a hand-written row. Variables, indices and strata are
/// 1-based; without `stratum` the row is expanded by the entry's stratify mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub margin: Vec<usize>,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<usize>,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub terms: Vec<Term>,
    pub relation: Relation,
}

fn default_pair() -> [usize; 2] {
    [1, 2]
}

/// A named constraint from the registry, as written in model-spec files.
/// Variable indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Non-negative local log-odds ratios.
    Tp2 {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    /// Non-negative global log-odds ratios.
    Pqd {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    /// Non-negative log-odds ratios of whatever type the link uses.
    PositiveAssociation {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    Independence {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    UniformAssociation {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    MarginalHomogeneity {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    /// Logits of the second variable of the pair dominate those of the first.
    StochasticOrder {
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
    NoHighOrder { order: usize },
    /// Margin of a variable shifts upwards; meaningful with `between`.
    MarginIncrease { variable: usize },
    /// Selected entries of one margin's block; all of them when `indices`
    /// is omitted.
    Select {
        margin: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        indices: Option<Vec<usize>>,
        relation: Relation,
    },
    Linear { rows: Vec<LinearRow> },
    /// Raw rows over the full stacked `eta`.
    Custom {
        #[serde(default)]
        equality: Vec<Vec<f64>>,
        #[serde(default)]
        inequality: Vec<Vec<f64>>,
    },
}

pub const REGISTRY: [&str; 12] = [
    "tp2",
    "pqd",
    "positive_association",
    "independence",
    "uniform_association",
    "marginal_homogeneity",
    "stochastic_order",
    "no_high_order",
    "margin_increase",
    "select",
    "linear",
    "custom",
];

/// A registry constraint with its expansion over strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    #[serde(flatten)]
    pub constraint: Constraint,
    #[serde(default)]
    pub stratify: StratifyMode,
    /// Multiply the rows by -1 (e.g. `-D_s` for decreasing differences).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negate: bool,
    /// Tolerance for this entry's equality rows; defaults to the model's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl ConstraintEntry {
    pub fn new(constraint: Constraint) -> Self {
        Self {
            constraint,
            stratify: StratifyMode::Within,
            negate: false,
            epsilon: None,
        }
    }

    pub fn between(mut self) -> Self {
        self.stratify = StratifyMode::Between;
        self
    }

    pub fn negated(mut self) -> Self {
        self.negate = true;
        self
    }
}

/// Model definition as stored in model-spec JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDefinition {
    pub schema_version: u32,
    pub name: String,
    pub logit_types: Vec<LogitType>,
    /// Default tolerance for about-equality rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

/// A model ready for estimation: constraints built against a concrete link.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub logit_types: Vec<LogitType>,
    pub strata: usize,
    pub constraints: ConstraintSet,
    pub notes: String,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        link: &LinkMatrices,
        strata: usize,
        constraints: ConstraintSet,
    ) -> Result<Self> {
        let cols = strata * link.t();
        if constraints.cols() != cols {
            return Err(Error::dim(format!(
                "constraints have {} columns, link with {} strata needs {cols}",
                constraints.cols(),
                strata
            )));
        }
        Ok(Self {
            name: name.into(),
            dims: link.dims().to_vec(),
            logit_types: link.logit_types().to_vec(),
            strata,
            constraints,
            notes: String::new(),
        })
    }

    /// The unconstrained model.
    pub fn encompassing(dims: &[usize], logit_types: &[LogitType], strata: usize) -> Result<Self> {
        let link = build_link(dims, logit_types)?;
        Self::new("M1", &link, strata, ConstraintSet::empty(strata * link.t()))
    }

    pub fn link(&self) -> Result<LinkMatrices> {
        build_link(&self.dims, &self.logit_types)
    }

    pub fn t(&self) -> usize {
        self.constraints.cols() / self.strata
    }

    pub fn has_equalities(&self) -> bool {
        self.constraints.n_equalities() > 0
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    /// One single-stratum model per stratum when no constraint row couples
    /// strata; `None` otherwise or for unstratified models.
    pub fn split_strata(&self) -> Option<Vec<ModelSpec>> {
        if self.strata < 2 {
            return None;
        }
        let t = self.t();
        let cs = &self.constraints;
        let home = |row: nalgebra::DMatrixView<f64>| -> Option<Option<usize>> {
            let mut found = None;
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    match found {
                        None => found = Some(j / t),
                        Some(b) if b != j / t => return None,
                        _ => {}
                    }
                }
            }
            Some(found)
        };
        let mut e_home = Vec::with_capacity(cs.e.nrows());
        for i in 0..cs.e.nrows() {
            e_home.push(home(cs.e.rows(i, 1))?);
        }
        let mut u_home = Vec::with_capacity(cs.u.nrows());
        for i in 0..cs.u.nrows() {
            u_home.push(home(cs.u.rows(i, 1))?);
        }
        let pick = |m: &DMatrix<f64>, homes: &[Option<usize>], b: usize| -> (Vec<usize>, DMatrix<f64>) {
            let rows: Vec<usize> = (0..homes.len()).filter(|&i| homes[i] == Some(b)).collect();
            let sub = DMatrix::from_fn(rows.len(), t, |i, j| m[(rows[i], b * t + j)]);
            (rows, sub)
        };
        let parts = (0..self.strata)
            .map(|b| {
                let (e_rows, e) = pick(&cs.e, &e_home, b);
                let (_, u) = pick(&cs.u, &u_home, b);
                let epsilon = e_rows.iter().map(|&i| cs.epsilon[i]).collect();
                ModelSpec {
                    name: format!("{} [stratum {}]", self.name, b + 1),
                    dims: self.dims.clone(),
                    logit_types: self.logit_types.clone(),
                    strata: 1,
                    constraints: ConstraintSet::new(e, u, epsilon).expect("rows taken from a valid set"),
                    notes: String::new(),
                }
            })
            .collect();
        Some(parts)
    }
}

impl ModelDefinition {
    pub fn new(name: impl Into<String>, logit_types: Vec<LogitType>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            logit_types,
            epsilon: None,
            constraints: Vec::new(),
            notes: String::new(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn with(mut self, entry: ConstraintEntry) -> Self {
        self.constraints.push(entry);
        self
    }

    pub fn with_all(mut self, entries: impl IntoIterator<Item = ConstraintEntry>) -> Self {
        self.constraints.extend(entries);
        self
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let def: Self = serde_json::from_str(text)?;
        if def.schema_version != SCHEMA_VERSION {
            return Err(Error::spec(format!(
                "model spec schema_version {} is not supported (expected {SCHEMA_VERSION})",
                def.schema_version
            )));
        }
        Ok(def)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model definitions serialise")
    }

    /// Build the constraint matrices for a table with `dims` and `strata`.
    pub fn build(&self, dims: &[usize], strata: usize) -> Result<ModelSpec> {
        if self.logit_types.len() != dims.len() {
            return Err(Error::dim(format!(
                "model '{}' gives {} logit types for {} variables",
                self.name,
                self.logit_types.len(),
                dims.len()
            )));
        }
        let link = build_link(dims, &self.logit_types)?;
        let cols = strata * link.t();
        let mut parts = vec![ConstraintSet::empty(cols)];
        for (k, entry) in self.constraints.iter().enumerate() {
            let eps = entry.epsilon.or(self.epsilon);
            let part = build_entry(&link, strata, entry, eps).map_err(|e| {
                Error::spec(format!("model '{}', constraint {}: {e}", self.name, k + 1))
            })?;
            parts.push(part);
        }
        let constraints = compose(&parts)?;
        Ok(ModelSpec::new(self.name.clone(), &link, strata, constraints)?.with_notes(self.notes.clone()))
    }
}

fn zero_based_pair(pair: [usize; 2], q: usize) -> Result<(usize, usize)> {
    if pair.iter().any(|&v| v == 0 || v > q) {
        return Err(Error::dim(format!(
            "pair ({}, {}) must name variables in 1..={q}",
            pair[0], pair[1]
        )));
    }
    Ok((pair[0] - 1, pair[1] - 1))
}

fn require_type(link: &LinkMatrices, pair: (usize, usize), ty: LogitType, what: &str) -> Result<()> {
    let types = link.logit_types();
    if types[pair.0] != ty || types[pair.1] != ty {
        return Err(Error::spec(format!(
            "{what} needs {} logits on variables {} and {}",
            ty.name(),
            pair.0 + 1,
            pair.1 + 1
        )));
    }
    Ok(())
}

fn block_rows(link: &LinkMatrices, margin: &[usize]) -> Result<std::ops::Range<usize>> {
    let mut vars: Vec<usize> = Vec::with_capacity(margin.len());
    for &v in margin {
        if v == 0 || v > link.q() {
            return Err(Error::dim(format!("variable {v} out of range 1..={}", link.q())));
        }
        vars.push(v - 1);
    }
    vars.sort_unstable();
    vars.dedup();
    link.block(&vars)
        .map(|b| b.rows.clone())
        .ok_or_else(|| Error::dim(format!("no margin {margin:?}")))
}

fn build_entry(
    link: &LinkMatrices,
    strata: usize,
    entry: &ConstraintEntry,
    eps: Option<f64>,
) -> Result<ConstraintSet> {
    let t = link.t();
    let cols = strata * t;
    let need_eps = || eps.ok_or_else(|| Error::spec("about-equality constraint without epsilon"));
    let sign = if entry.negate { -1.0 } else { 1.0 };
    let expand = |base: DMatrix<f64>| -> Result<DMatrix<f64>> {
        Ok(stratify(&base, strata, entry.stratify)? * sign)
    };
    let eq = |base: DMatrix<f64>| -> Result<ConstraintSet> {
        ConstraintSet::equality(expand(base)?, need_eps()?)
    };
    let ineq = |base: DMatrix<f64>| -> Result<ConstraintSet> { ConstraintSet::inequality(expand(base)?) };
    let q = link.q();
    match &entry.constraint {
        Constraint::Tp2 { pair } => {
            let p = zero_based_pair(*pair, q)?;
            require_type(link, p, LogitType::Local, "tp2")?;
            ineq(positive_association(link, p)?)
        }
        Constraint::Pqd { pair } => {
            let p = zero_based_pair(*pair, q)?;
            require_type(link, p, LogitType::Global, "pqd")?;
            ineq(positive_association(link, p)?)
        }
        Constraint::PositiveAssociation { pair } => {
            ineq(positive_association(link, zero_based_pair(*pair, q)?)?)
        }
        Constraint::Independence { pair } => eq(independence(link, zero_based_pair(*pair, q)?)?),
        Constraint::UniformAssociation { pair } => {
            eq(uniform_association(link, zero_based_pair(*pair, q)?)?)
        }
        Constraint::MarginalHomogeneity { pair } => {
            eq(marginal_homogeneity(link, zero_based_pair(*pair, q)?)?)
        }
        Constraint::StochasticOrder { pair } => {
            ineq(stochastic_order(link, zero_based_pair(*pair, q)?)?)
        }
        Constraint::NoHighOrder { order } => {
            if q < order + 1 {
                return Err(Error::domain(format!(
                    "no_high_order with order {order} needs at least {} variables",
                    order + 1
                )));
            }
            eq(zero_higher_interactions(link, *order))
        }
        Constraint::MarginIncrease { variable } => {
            if *variable == 0 || *variable > q {
                return Err(Error::dim(format!("variable {variable} out of range")));
            }
            ineq(margin_increase(link, variable - 1)?)
        }
        Constraint::Select {
            margin,
            indices,
            relation,
        } => {
            let rows = block_rows(link, margin)?;
            let chosen: Vec<usize> = match indices {
                None => rows.collect(),
                Some(idx) => idx
                    .iter()
                    .map(|&i| {
                        if i == 0 || i > rows.len() {
                            Err(Error::dim(format!("index {i} outside 1..={}", rows.len())))
                        } else {
                            Ok(rows.start + i - 1)
                        }
                    })
                    .collect::<Result<_>>()?,
            };
            let base = selector(t, chosen);
            match relation {
                Relation::Equal => eq(base),
                Relation::Nonnegative => ineq(base),
                Relation::Nonpositive => ineq(-base),
            }
        }
        Constraint::Linear { rows } => {
            let mut parts = Vec::new();
            for row in rows {
                let absolute = row.terms.iter().any(|term| term.stratum.is_some());
                let width = if absolute { cols } else { t };
                let mut m = DMatrix::zeros(1, width);
                for term in &row.terms {
                    let block = block_rows(link, &term.margin)?;
                    if term.index == 0 || term.index > block.len() {
                        return Err(Error::dim(format!(
                            "index {} outside 1..={}",
                            term.index,
                            block.len()
                        )));
                    }
                    let offset = match (absolute, term.stratum) {
                        (false, _) => 0,
                        (true, Some(b)) if b >= 1 && b <= strata => (b - 1) * t,
                        (true, Some(b)) => {
                            return Err(Error::dim(format!("stratum {b} outside 1..={strata}")))
                        }
                        (true, None) => {
                            return Err(Error::spec(
                                "mixing terms with and without strata in one row",
                            ))
                        }
                    };
                    m[(0, offset + block.start + term.index - 1)] += term.coef;
                }
                let m = if absolute { m * sign } else { expand(m)? };
                parts.push(match row.relation {
                    Relation::Equal => ConstraintSet::equality(m, need_eps()?)?,
                    Relation::Nonnegative => ConstraintSet::inequality(m)?,
                    Relation::Nonpositive => ConstraintSet::inequality(-m)?,
                });
            }
            if parts.is_empty() {
                return Ok(ConstraintSet::empty(cols));
            }
            compose(&parts)
        }
        Constraint::Custom {
            equality,
            inequality,
        } => {
            let to_matrix = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
                if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
                    return Err(Error::dim(format!(
                        "custom row has {} entries, expected {cols}",
                        bad.len()
                    )));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |i, j| sign * rows[i][j]))
            };
            let e = to_matrix(equality)?;
            let u = to_matrix(inequality)?;
            let epsilon = if e.nrows() > 0 { vec![need_eps()?; e.nrows()] } else { Vec::new() };
            ConstraintSet::new(e, u, epsilon)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link2(m1: usize, m2: usize) -> LinkMatrices {
        build_link(&[m1, m2], &[LogitType::Local; 2]).unwrap()
    }

    #[test]
    fn first_difference_shapes() {
        assert_eq!(first_differences(2).unwrap(), DMatrix::from_row_slice(1, 2, &[-1., 1.]));
        assert_eq!(
            first_differences(3).unwrap(),
            DMatrix::from_row_slice(2, 3, &[-1., 1., 0., 0., -1., 1.])
        );
        for h in 2..=6 {
            let ones = DMatrix::from_element(h, 1, 1.0);
            assert!((first_differences(h).unwrap() * ones).iter().all(|&v| v == 0.0));
        }
        assert!(first_differences(1).is_err());
    }

    #[test]
    fn positive_association_selects_log_odds_ratios() {
        let u = positive_association(&link2(2, 2), (0, 1)).unwrap();
        assert_eq!(u, DMatrix::from_row_slice(1, 3, &[0., 0., 1.]));
        let u = positive_association(&link2(6, 6), (0, 1)).unwrap();
        assert_eq!((u.nrows(), u.ncols()), (25, 35));
    }

    #[test]
    fn independence_examples() {
        let link = link2(2, 2);
        let cs = ConstraintSet::equality(independence(&link, (0, 1)).unwrap(), 0.025).unwrap();
        let uniform = link.eta_from_pi(&[0.25; 4]).unwrap();
        assert!(satisfies(&uniform, &cs).unwrap());
        let skewed = link.eta_from_pi(&[0.4, 0.2, 0.1, 0.3]).unwrap();
        assert!(!satisfies(&skewed, &cs).unwrap());
    }

    #[test]
    fn uniform_association_shapes() {
        assert_eq!(uniform_association(&link2(3, 3), (0, 1)).unwrap().nrows(), 3);
        assert_eq!(uniform_association(&link2(2, 2), (0, 1)).unwrap().nrows(), 0);
        assert_eq!(uniform_association(&link2(6, 6), (0, 1)).unwrap().nrows(), 24);
    }

    #[test]
    fn marginal_homogeneity_and_order() {
        let link = link2(6, 6);
        let e = marginal_homogeneity(&link, (0, 1)).unwrap();
        assert_eq!(e.nrows(), 5);
        assert_eq!(e[(0, 0)], -1.0);
        assert_eq!(e[(0, 5)], 1.0);
        // Symmetric table.
        let pi: Vec<f64> = (0..36)
            .map(|k| {
                let (i, j) = (k / 6, k % 6);
                1.0 + (i.min(j) as f64) + 2.0 * (i.max(j) as f64)
            })
            .collect();
        let total: f64 = pi.iter().sum();
        let pi: Vec<f64> = pi.iter().map(|v| v / total).collect();
        let eta = link.eta_from_pi(&pi).unwrap();
        let cs = ConstraintSet::equality(e, 1e-12).unwrap();
        assert!(satisfies(&eta, &cs).unwrap());
        let order = ConstraintSet::inequality(stochastic_order(&link, (0, 1)).unwrap()).unwrap();
        assert!(satisfies(&eta, &order).unwrap());
        assert!(marginal_homogeneity(&link2(5, 4), (0, 1)).is_err());
    }

    #[test]
    fn stochastic_order_strict_for_shifted_mass() {
        let link = link2(3, 3);
        // A1 concentrated on category 1, A2 on category 3, lightly smoothed.
        let mut pi = vec![0.001; 9];
        pi[2] = 1.0 - 0.008;
        let eta = link.eta_from_pi(&pi).unwrap();
        let u = stochastic_order(&link, (0, 1)).unwrap();
        let values = &u * nalgebra::DVector::from_column_slice(&eta);
        assert!(values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn stratify_forms() {
        let link = build_link(&[5, 4], &[LogitType::ReverseContinuation; 2]).unwrap();
        let base = independence(&link, (0, 1)).unwrap();
        let within = stratify(&base, 2, StratifyMode::Within).unwrap();
        assert_eq!((within.nrows(), within.ncols()), (24, 38));
        assert_eq!(within[(12, 19 + 7)], 1.0);
        let between = stratify(&base, 2, StratifyMode::Between).unwrap();
        assert_eq!((between.nrows(), between.ncols()), (12, 38));
        assert_eq!(between[(0, 7)], -1.0);
        assert_eq!(between[(0, 26)], 1.0);
        assert!(stratify(&base, 1, StratifyMode::Between).is_err());
    }

    #[test]
    fn higher_interactions() {
        let link = build_link(&[3, 3, 3, 3], &[LogitType::Global; 4]).unwrap();
        let e = zero_higher_interactions(&link, 2);
        // Four 3-way blocks of 8 rows and one 4-way block of 16.
        assert_eq!(e.nrows(), 48);
        assert_eq!(zero_higher_interactions(&link2(3, 3), 2).nrows(), 0);
    }

    #[test]
    fn empty_constraints_always_hold() {
        let cs = ConstraintSet::empty(3);
        assert!(satisfies(&[1.0, -5.0, 2.0], &cs).unwrap());
        assert!(satisfies(&[1.0], &cs).is_err());
    }

    #[test]
    fn weak_inequality_boundary() {
        let cs = ConstraintSet::inequality(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        assert!(satisfies(&[0.5, 0.5], &cs).unwrap());
    }

    #[test]
    fn compose_with_empty_is_identity() {
        let link = link2(3, 3);
        let x = ConstraintSet::inequality(positive_association(&link, (0, 1)).unwrap()).unwrap();
        let c = compose(&[x.clone(), ConstraintSet::empty(link.t())]).unwrap();
        assert_eq!(c, x);
    }

    #[test]
    fn registry_builds_father_son_m6() {
        let def = ModelDefinition::new("M6", vec![LogitType::Local; 2])
            .with_epsilon(0.1)
            .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
            .with(ConstraintEntry::new(Constraint::MarginalHomogeneity { pair: [1, 2] }));
        let model = def.build(&[6, 6], 1).unwrap();
        assert_eq!(model.constraints.n_inequalities(), 25);
        assert_eq!(model.constraints.n_equalities(), 5);
        assert_eq!(model.constraints.epsilon, vec![0.1; 5]);
    }

    #[test]
    fn tp2_rejects_global_link() {
        let def = ModelDefinition::new("bad", vec![LogitType::Global; 2])
            .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }));
        assert!(matches!(def.build(&[3, 3], 1), Err(Error::Spec(_))));
    }

    #[test]
    fn equality_without_epsilon_is_rejected() {
        let def = ModelDefinition::new("M2", vec![LogitType::Local; 2])
            .with(ConstraintEntry::new(Constraint::Independence { pair: [1, 2] }));
        assert!(def.build(&[3, 3], 1).is_err());
    }

    #[test]
    fn json_round_trip_and_version() {
        let def = ModelDefinition::new("M5", vec![LogitType::ReverseContinuation; 2])
            .with(ConstraintEntry::new(Constraint::Select {
                margin: vec![1, 2],
                indices: None,
                relation: Relation::Nonnegative,
            }))
            .with(
                ConstraintEntry::new(Constraint::Select {
                    margin: vec![1, 2],
                    indices: None,
                    relation: Relation::Nonnegative,
                })
                .between()
                .negated(),
            );
        let text = def.to_json_string();
        assert!(text.contains("\"schema_version\": 1"));
        let back = ModelDefinition::from_json_str(&text).unwrap();
        assert_eq!(back, def);
        let model = back.build(&[5, 4], 2).unwrap();
        assert_eq!(model.constraints.n_inequalities(), 36);
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ModelDefinition::from_json_str(&bumped).is_err());
    }

    #[test]
    fn linear_rows_with_and_without_strata() {
        let def = ModelDefinition::new("shift", vec![LogitType::Global; 2])
            .with_epsilon(0.1)
            .with(ConstraintEntry::new(Constraint::Linear {
                rows: vec![
                    LinearRow {
                        terms: vec![
                            Term { margin: vec![1], index: 1, stratum: Some(2), coef: 1.0 },
                            Term { margin: vec![1], index: 1, stratum: Some(1), coef: -1.0 },
                        ],
                        relation: Relation::Equal,
                    },
                    LinearRow {
                        terms: vec![Term { margin: vec![2], index: 2, stratum: None, coef: 1.0 }],
                        relation: Relation::Nonnegative,
                    },
                ],
            }));
        let model = def.build(&[3, 3], 2).unwrap();
        let t = 8;
        assert_eq!(model.constraints.e.nrows(), 1);
        assert_eq!(model.constraints.e[(0, 0)], -1.0);
        assert_eq!(model.constraints.e[(0, t)], 1.0);
        assert_eq!(model.constraints.u.nrows(), 2);
        assert_eq!(model.constraints.u[(1, t + 3)], 1.0);
    }

    #[test]
    fn increase_sign_map() {
        assert_eq!(increase_sign(LogitType::Local), 1.0);
        assert_eq!(increase_sign(LogitType::Global), 1.0);
        assert_eq!(increase_sign(LogitType::Continuation), 1.0);
        assert_eq!(increase_sign(LogitType::ReverseContinuation), -1.0);
    }

    #[test]
    fn split_strata_separates_uncoupled_rows() {
        let within = ModelDefinition::new("w", vec![LogitType::Local; 2])
            .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }))
            .build(&[3, 3], 2)
            .unwrap();
        let parts = within.split_strata().unwrap();
        assert_eq!(parts.len(), 2);
        for part in &parts {
            assert_eq!(part.strata, 1);
            assert_eq!(part.constraints.n_inequalities(), 4);
            assert_eq!(part.constraints.cols(), 8);
        }
        let coupled = ModelDefinition::new("c", vec![LogitType::Local; 2])
            .with(ConstraintEntry::new(Constraint::Tp2 { pair: [1, 2] }).between())
            .build(&[3, 3], 2)
            .unwrap();
        assert!(coupled.split_strata().is_none());
        let single = ModelSpec::encompassing(&[3, 3], &[LogitType::Local; 2], 1).unwrap();
        assert!(single.split_strata().is_none());
    }
}
