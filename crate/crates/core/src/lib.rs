//! Bayesian evaluation of inequality- and about-equality-constrained
//! hypotheses on marginal parameters of contingency tables, using the
//! encompassing prior approach.

pub mod error;
pub mod fit;
pub mod fixtures;
pub mod hypothesis;
pub mod link;
pub mod manifest;
pub mod mc;
pub mod report;
pub mod studies;
pub mod table;

pub use error::{Error, Result};
pub use link::{build_link, EtaVector, LinkMatrices, LogitType};
pub use table::{ContingencyTable, StratifiedTable, VariableSpec};
