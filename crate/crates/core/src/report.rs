//! Bayes-factor runs over a loaded manifest and their text, JSON and CSV
//! renderings. Reports carry no timestamps, so a re-run with the same
//! manifest and seed reproduces them byte for byte.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::ModelDefinition;
use crate::manifest::{Comparison, Format, Loaded, LogBase};
use crate::mc::bf::{compare_replicates, direction, BFEstimate, BfKind, Evidence};
use crate::mc::{bayes_factor, jeffreys_label, Route, RunSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub shape: String,
    pub total: u64,
    pub stratum_totals: Vec<u64>,
}

/// One model's Bayes factor against the encompassing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub kind: BfKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_bf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled_log_bf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
    /// `log B` against the reference model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vs_reference: Option<f64>,
    /// Sampling route per factor and side, e.g. `direct/importance(20)`.
    pub routes: String,
    /// Smallest first-stage effective sample size over sides and replicates.
    pub min_ess: f64,
    /// Largest number of tolerance stages used by a replicate.
    pub stages: usize,
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub reference: String,
    pub log_bf: f64,
    /// Standard deviation of the per-replicate differences.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    pub evidence: Evidence,
    /// The model the sign favours.
    pub favours: String,
}

/// Results under one prior concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub concentration: f64,
    pub rows: Vec<ModelRow>,
    pub comparisons: Vec<ComparisonRow>,
    /// Models with estimates, best supported first.
    pub ranking: Vec<String>,
    /// Natural-log estimates backing every number above.
    pub estimates: Vec<BFEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub manifest: String,
    pub dataset: DatasetSummary,
    pub log_base: LogBase,
    pub settings: RunSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub models: Vec<ModelDefinition>,
    pub sections: Vec<Section>,
    /// Whether every section ranks the models the same way.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking_invariant: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl Report {
    /// True when some model's estimate failed.
    pub fn has_failures(&self) -> bool {
        self.sections.iter().flat_map(|s| &s.rows).any(|r| r.error.is_some())
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialise");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let st = &self.settings;
        let _ = writeln!(out, "{} {} {}: {}", self.tool, self.version, self.command, self.manifest);
        let _ = writeln!(
            out,
            "dataset     {} ({}, n = {}, stratum totals {:?})",
            self.dataset.name, self.dataset.shape, self.dataset.total, self.dataset.stratum_totals
        );
        let _ = writeln!(out, "log base    {}", self.log_base.name());
        let _ = writeln!(
            out,
            "settings    seed {} draws {} pilot {} replicates {} route {:?} chunk {}",
            st.seed, st.draws, st.pilot, st.replicates, st.route, st.chunk
        );
        let _ = writeln!(
            out,
            "            direct threshold {} min acceptance {} min stage ESS {}",
            st.direct_threshold, st.min_acceptance, st.min_stage_ess
        );
        let eps = st
            .schedule
            .epsilon_start
            .map_or("model".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "            epsilon start {} shrink {} stop tol {} max stages {}",
            eps, st.schedule.b, st.schedule.stop_tol, st.schedule.max_stages
        );
        let grid: Vec<String> = st.alpha_grid.iter().map(|a| format!("{a:.4}")).collect();
        let _ = writeln!(out, "            alpha grid [{}]", grid.join(", "));
        if let Some(r) = &self.reference {
            let _ = writeln!(out, "reference   {r}");
        }
        for section in &self.sections {
            let _ = writeln!(out);
            let _ = writeln!(out, "prior concentration {}", section.concentration);
            let _ = writeln!(
                out,
                "{:<8} {:<14} {:>10} {:>8} {:<12} {:>10} {:>10} {:>6}  routes",
                "model", "kind", "log BF", "sd", "evidence", "vs ref", "min ESS", "stages"
            );
            for r in &section.rows {
                let kind = match r.kind {
                    BfKind::Inequality => "inequality",
                    BfKind::AboutEquality => "about-equality",
                };
                if let Some(err) = &r.error {
                    let _ = writeln!(out, "{:<8} {:<14} failed: {err}", r.model, kind);
                    continue;
                }
                let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                let _ = writeln!(
                    out,
                    "{:<8} {:<14} {:>10} {:>8} {:<12} {:>10} {:>10.1} {:>6}{}  {}",
                    r.model,
                    kind,
                    num(r.log_bf),
                    num(r.sd),
                    r.evidence.map_or("-", |e| e.name()),
                    num(r.vs_reference),
                    r.min_ess,
                    r.stages,
                    if r.truncated { "*" } else { " " },
                    r.routes
                );
            }
            if !section.comparisons.is_empty() {
                let _ = writeln!(out, "comparisons");
                for c in &section.comparisons {
                    let sd = c.sd.map_or(String::new(), |s| format!(" (sd {s:.3})"));
                    let _ = writeln!(
                        out,
                        "  log B({}, {}) = {:.3}{sd}  {} evidence for {}",
                        c.model,
                        c.reference,
                        c.log_bf,
                        c.evidence.name(),
                        c.favours
                    );
                }
            }
            let _ = writeln!(out, "ranking     {}", section.ranking.join(" > "));
            let warnings: Vec<(&str, &String)> = section
                .estimates
                .iter()
                .flat_map(|e| e.warnings.iter().map(move |w| (e.model.as_str(), w)))
                .collect();
            if !warnings.is_empty() {
                let _ = writeln!(out, "warnings");
                for (model, w) in warnings {
                    if w.starts_with(&format!("{model}:")) {
                        let _ = writeln!(out, "  {w}");
                    } else {
                        let _ = writeln!(out, "  {model}: {w}");
                    }
                }
            }
        }
        if let Some(inv) = self.ranking_invariant {
            let _ = writeln!(out);
            let _ = writeln!(out, "ranking invariant across concentrations: {}", if inv { "yes" } else { "no" });
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "concentration", "row", "model", "reference", "log_base", "log_bf", "sd", "pooled_log_bf",
            "evidence", "min_ess", "stages", "truncated", "routes", "error",
        ];
        w.write_record(header).expect("in-memory write");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for s in &self.sections {
            for r in &s.rows {
                w.write_record([
                    s.concentration.to_string(),
                    "model".into(),
                    r.model.clone(),
                    "M1".into(),
                    self.log_base.name().into(),
                    f(r.log_bf),
                    f(r.sd),
                    f(r.pooled_log_bf),
                    r.evidence.map_or(String::new(), |e| e.name().into()),
                    r.min_ess.to_string(),
                    r.stages.to_string(),
                    r.truncated.to_string(),
                    r.routes.clone(),
                    r.error.clone().unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            for c in &s.comparisons {
                w.write_record([
                    s.concentration.to_string(),
                    "comparison".into(),
                    c.model.clone(),
                    c.reference.clone(),
                    self.log_base.name().into(),
                    c.log_bf.to_string(),
                    f(c.sd),
                    String::new(),
                    c.evidence.name().into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

fn routes(est: &BFEstimate) -> String {
    let side = |p: &crate::mc::SidePlan| match (p.route, &p.density) {
        (Route::Importance, Some(g)) => format!("importance({:.3})", g.alpha),
        _ => "direct".to_string(),
    };
    est.factors
        .iter()
        .map(|f| {
            let s = format!("{}/{}", side(&f.prior), side(&f.posterior));
            match f.stratum {
                Some(b) => format!("s{b}:{s}"),
                None => s,
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn min_ess(est: &BFEstimate) -> f64 {
    est.runs
        .iter()
        .filter_map(|r| r.stages.first())
        .map(|s| s.prior.ess.min(s.posterior.ess))
        .fold(f64::INFINITY, f64::min)
}

fn sd_of(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn comparison(k: &BFEstimate, l: &BFEstimate, base: LogBase) -> ComparisonRow {
    let diff = base.convert(k.log_bf - l.log_bf);
    let sd = compare_replicates(k, l)
        .and_then(|d| sd_of(&d))
        .map(|s| base.convert(s));
    ComparisonRow {
        model: k.model.clone(),
        reference: l.model.clone(),
        log_bf: diff,
        sd,
        evidence: jeffreys_label(diff),
        favours: if direction(diff) == "for" { k.model.clone() } else { l.model.clone() },
    }
}

/// Estimate every model at one prior concentration.
fn section(loaded: &Loaded, settings: &RunSettings, kappa: f64, base: LogBase, reference: Option<&str>) -> Result<Section> {
    let prior = loaded.prior(kappa);
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    for model in &loaded.models {
        let kind = if model.has_equalities() { BfKind::AboutEquality } else { BfKind::Inequality };
        match bayes_factor(model, &loaded.table, &prior, settings) {
            Ok(est) => {
                let log_bf = base.convert(est.log_bf);
                rows.push(ModelRow {
                    model: model.name.clone(),
                    kind,
                    log_bf: Some(log_bf),
                    sd: Some(base.convert(est.sd)),
                    pooled_log_bf: est.pooled_log_bf.map(|v| base.convert(v)),
                    evidence: Some(jeffreys_label(log_bf)),
                    vs_reference: None,
                    routes: routes(&est),
                    min_ess: min_ess(&est),
                    stages: est.stage_counts().into_iter().max().unwrap_or(0),
                    truncated: est.truncated(),
                    error: None,
                });
                estimates.push(est);
            }
            Err(e) if !e.is_input_error() => rows.push(ModelRow {
                model: model.name.clone(),
                kind,
                log_bf: None,
                sd: None,
                pooled_log_bf: None,
                evidence: None,
                vs_reference: None,
                routes: String::new(),
                min_ess: 0.0,
                stages: 0,
                truncated: false,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let find = |name: &str| estimates.iter().find(|e| e.model == name);
    let mut comparisons = Vec::new();
    if let Some(r) = reference.and_then(find) {
        for row in rows.iter_mut() {
            if let Some(k) = find(&row.model) {
                row.vs_reference = Some(base.convert(k.log_bf - r.log_bf));
            }
        }
        for k in &estimates {
            if k.model != r.model {
                comparisons.push(comparison(k, r, base));
            }
        }
    }
    for Comparison { model, reference } in &loaded.manifest.comparisons {
        if let (Some(k), Some(l)) = (find(model), find(reference)) {
            comparisons.push(comparison(k, l, base));
        }
    }
    let mut ranked: Vec<(&str, f64)> = estimates.iter().map(|e| (e.model.as_str(), e.log_bf)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Section {
        concentration: kappa,
        rows,
        comparisons,
        ranking: ranked.into_iter().map(|(m, _)| m.to_string()).collect(),
        estimates,
    })
}

/// Run every model of `loaded` at each prior concentration. An empty list
/// uses the manifest's prior.
pub fn run(loaded: &Loaded, command: &str, concentrations: &[f64]) -> Result<Report> {
    let m = &loaded.manifest;
    let settings = &m.settings;
    settings.validate()?;
    let kappas: Vec<f64> = if concentrations.is_empty() {
        vec![m.prior.concentration]
    } else {
        concentrations.to_vec()
    };
    if let Some(bad) = kappas.iter().find(|&&k| !(k > 0.0) || !k.is_finite()) {
        return Err(Error::domain(format!("concentration {bad} must be positive")));
    }
    let reference = m.reference.as_deref();
    let sections = kappas
        .iter()
        .map(|&k| section(loaded, settings, k, m.log_base, reference))
        .collect::<Result<Vec<_>>>()?;
    let ranking_invariant = (sections.len() > 1).then(|| sections.windows(2).all(|w| w[0].ranking == w[1].ranking));
    let table = &loaded.table;
    Ok(Report {
        tool: "encompass".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        manifest: m.name.clone(),
        dataset: DatasetSummary {
            name: loaded.dataset_name.clone(),
            shape: table.shape_label(),
            total: table.total(),
            stratum_totals: table.stratum_totals(),
        },
        log_base: m.log_base,
        settings: settings.clone(),
        reference: m.reference.clone(),
        models: loaded.definitions.clone(),
        sections,
        ranking_invariant,
        warnings: Vec::new(),
    })
}
