use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use encompass::fit::{constrained_mle, FitOptions, FitResult};
use encompass::hypothesis::ModelDefinition;
use encompass::manifest::{self, Format, Loaded, LogBase};
use encompass::mc::{posterior_draws_under_model, PosteriorSummary, PriorSpec};
use encompass::{fixtures, report, studies, Error, StratifiedTable};

#[derive(Parser)]
#[command(name = "encompass", version, about = "Bayes factors for constrained marginal models of contingency tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List bundled datasets and any tables found in a directory.
    Datasets {
        #[arg(long)]
        json: bool,
        /// Directory of CSV or JSON tables to list as well.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the bundled model definitions for a dataset as JSON.
    Models { dataset: String },
    /// Bayes factors of every model in a manifest against the encompassing model.
    Bf {
        manifest: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Repeat the Bayes-factor run for several prior concentrations.
    Sensitivity {
        manifest: PathBuf,
        /// Comma-separated concentrations; defaults to the manifest's list.
        #[arg(long, value_delimiter = ',')]
        concentrations: Vec<f64>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Constrained maximum-likelihood fit of one model.
    Fit {
        #[command(flatten)]
        target: Target,
        /// Added to every cell before fitting.
        #[arg(long, default_value_t = FitOptions::default().smoothing)]
        smoothing: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: OutFormat,
    },
    /// Posterior draws satisfying one model, summarised.
    Posterior {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: OutFormat,
    },
}

#[derive(Args)]
struct Target {
    /// Bundled dataset name or a CSV/JSON table file.
    #[arg(long)]
    dataset: String,
    /// Model-spec JSON file, or the name of a bundled model for the dataset.
    #[arg(long)]
    model: String,
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Main draws per side and replicate.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    pilot: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Also compare every model with this one.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, value_parser = ["e", "10"])]
    log_base: Option<String>,
    /// Write one report file per format here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats; the first is printed when `--out` is absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<OutFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Text,
    Json,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Text => Format::Text,
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_input_error() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn input_error(message: String) -> Failure {
    Failure { code: 1, message }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn load_manifest(path: &Path, run: &RunFlags) -> CliResult<Loaded> {
    let mut loaded = manifest::load(path)?;
    let m = &mut loaded.manifest;
    if let Some(v) = run.seed {
        m.settings.seed = v;
    }
    if let Some(v) = run.draws {
        m.settings.draws = v;
    }
    if let Some(v) = run.pilot {
        m.settings.pilot = v;
    }
    if let Some(v) = run.replicates {
        m.settings.replicates = v;
    }
    if let Some(base) = &run.log_base {
        m.log_base = LogBase::parse(base)?;
    }
    if let Some(r) = &run.reference {
        if loaded.model(r).is_none() {
            return Err(input_error(format!("--reference '{r}' is not a model in the manifest")));
        }
        loaded.manifest.reference = Some(r.clone());
    }
    if let Some(dir) = &run.out {
        loaded.manifest.output.dir = Some(dir.clone());
    }
    if !run.format.is_empty() {
        loaded.manifest.output.formats = run.format.iter().map(|&f| f.into()).collect();
    }
    if loaded.manifest.name.is_empty() {
        loaded.manifest.name = path
            .file_stem()
            .map_or("report".to_string(), |s| s.to_string_lossy().into_owned());
    }
    Ok(loaded)
}

fn emit(loaded: &Loaded, rep: &report::Report) -> CliResult<()> {
    let formats = if loaded.manifest.output.formats.is_empty() {
        vec![Format::Text]
    } else {
        loaded.manifest.output.formats.clone()
    };
    match &loaded.manifest.output.dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            for f in formats {
                let path = dir.join(format!("{}.{}", loaded.manifest.name, f.extension()));
                write_file(&path, &rep.render(f))?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => print!("{}", rep.render(formats[0])),
    }
    if rep.has_failures() {
        return Err(Failure {
            code: 2,
            message: "at least one Bayes factor could not be estimated; see the report".into(),
        });
    }
    Ok(())
}

fn cmd_datasets(json: bool, dir: Option<&Path>) -> CliResult<()> {
    let mut entries = fixtures::list();
    if let Some(dir) = dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let t = manifest::load_table(&p)?;
            entries.push(fixtures::FixtureInfo {
                name: p.display().to_string(),
                shape: t.shape_label(),
                dims: t.dims().to_vec(),
                strata: t.strata().to_vec(),
                n: t.total(),
            });
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&entries).expect("listing serialises"));
    } else {
        for e in entries {
            println!("{:<14} {:<20} n = {}", e.name, e.shape, e.n);
        }
    }
    Ok(())
}

fn resolve_target(target: &Target) -> CliResult<(StratifiedTable, ModelDefinition)> {
    let dataset_path = Path::new(&target.dataset);
    let table = if dataset_path.is_file() {
        manifest::load_table(dataset_path)?
    } else {
        fixtures::by_name(&target.dataset)?
    };
    let model_path = Path::new(&target.model);
    let def = if model_path.is_file() {
        manifest::load_model(model_path)?
    } else {
        studies::models_for(&target.dataset)?
            .into_iter()
            .find(|d| d.name == target.model)
            .ok_or_else(|| input_error(format!("no model file or bundled model named '{}'", target.model)))?
    };
    Ok((table, def))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("results serialise"));
}

fn fit_text(fit: &FitResult, table: &StratifiedTable) -> String {
    let mut out = format!(
        "model {}\nloglik {:.6}\nconverged {} (KKT {:.3e}, max violation {:.3e}, {} outer iterations)\n",
        fit.model, fit.loglik, fit.converged, fit.kkt_residual, fit.max_violation, fit.outer_iterations
    );
    let last = *table.dims().last().expect("at least one variable");
    for (b, pi) in fit.pi_hat.iter().enumerate() {
        out.push_str(&format!("pi_hat, stratum {}\n", table.strata()[b]));
        for row in pi.chunks(last) {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.5}")).collect();
            out.push_str(&format!("  {}\n", cells.join(" ")));
        }
    }
    out
}

fn posterior_text(s: &PosteriorSummary) -> String {
    let mut out = format!(
        "model {}\naccepted {} of {} (acceptance {:.5}, se {:.5})\n",
        s.model, s.accepted, s.n_draws, s.acceptance, s.se
    );
    if !s.eta.is_empty() {
        out.push_str("eta: mean [2.5%, 97.5%]\n");
        for (k, iv) in s.eta.iter().enumerate() {
            out.push_str(&format!("  {:>4} {:>9.4} [{:.4}, {:.4}]\n", k + 1, iv.mean, iv.lower, iv.upper));
        }
    }
    for w in &s.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Datasets { json, dir } => cmd_datasets(json, dir.as_deref()),
        Command::Models { dataset } => {
            print_json(&studies::models_for(&dataset)?);
            Ok(())
        }
        Command::Bf { manifest, run } => {
            let loaded = load_manifest(&manifest, &run)?;
            let rep = report::run(&loaded, "bf", &[])?;
            emit(&loaded, &rep)
        }
        Command::Sensitivity {
            manifest,
            concentrations,
            run,
        } => {
            let loaded = load_manifest(&manifest, &run)?;
            let kappas = if concentrations.is_empty() {
                loaded.manifest.concentrations.clone()
            } else {
                concentrations
            };
            if kappas.is_empty() {
                return Err(input_error(
                    "no concentrations: pass --concentrations or list them in the manifest".into(),
                ));
            }
            let rep = report::run(&loaded, "sensitivity", &kappas)?;
            emit(&loaded, &rep)
        }
        Command::Fit {
            target,
            smoothing,
            format,
        } => {
            let (table, def) = resolve_target(&target)?;
            let model = def.build(table.dims(), table.num_strata())?;
            let opts = FitOptions {
                smoothing,
                ..FitOptions::default()
            };
            let fit = constrained_mle(&table, &model, &opts)?;
            match format {
                OutFormat::Json => print_json(&fit),
                _ => print!("{}", fit_text(&fit, &table)),
            }
            Ok(())
        }
        Command::Posterior {
            target,
            draws,
            seed,
            concentration,
            format,
        } => {
            let (table, def) = resolve_target(&target)?;
            let model = def.build(table.dims(), table.num_strata())?;
            let prior = PriorSpec::symmetric(concentration, table.cells_per_stratum(), table.num_strata());
            let summary = posterior_draws_under_model(&model, &table, &prior, draws, seed)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            match format {
                OutFormat::Json => print_json(&summary),
                _ => print!("{}", posterior_text(&summary)),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
