//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use cgpdf::ModelId;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_regime, ExperimentConfig, Overrides, CANNED};
use crate::error::{HarnessError, Result};
use crate::{compare, output_dir, pipeline, report, truth};

#[derive(Debug, Parser)]
#[command(name = "cgpdf", version, about = "PDF recovery for conditional Gaussian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recover the joint density and score it against Monte Carlo truth.
    Run(CommonArgs),
    /// Repeat the run for several ensemble sizes against one truth.
    Sweep(CommonArgs),
    /// Simulate the Monte Carlo truth and write its density fields.
    Truth(CommonArgs),
    /// Compare kernel estimates with raw histograms of the observed variables.
    Compare(CommonArgs),
    /// Inspect the built-in models.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
    /// Check a configuration without running it.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Subcommand)]
enum ModelsAction {
    /// List model ids, dimensions and canned configs.
    List,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Config file path or canned config name.
    #[arg(long)]
    config: Option<String>,
    /// Model id (`l63`, `climate4d`, `triad3`, `turb6d`, `l96two`).
    #[arg(long)]
    model: Option<String>,
    /// Triad regime (`I`, `II`, `III`).
    #[arg(long)]
    regime: Option<String>,
    /// Ensemble size; a comma-separated list for `sweep`.
    #[arg(short = 'L', value_delimiter = ',')]
    members: Vec<usize>,
    #[arg(long)]
    mc_particles: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `auto`, or `min:max:n` per model variable, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for cached truth ensembles.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self, multi_l: bool) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.model) {
            (Some(spec), _) => ExperimentConfig::load(spec)?,
            (None, Some(model)) => {
                let id = match &self.regime {
                    Some(r) => format!("{model}:{}", parse_regime(r)?),
                    None if model == "triad3" => "triad3:I".to_string(),
                    None => model.clone(),
                };
                let id: ModelId = id.parse().map_err(|e: cgpdf::Error| HarnessError::Config(e.to_string()))?;
                ExperimentConfig::for_model(id)
            }
            (None, None) => return Err(HarnessError::Config("either --config or --model is required".into())),
        };
        if !multi_l && self.members.len() > 1 {
            return Err(HarnessError::Config("-L takes a single value here".into()));
        }
        let regime = match &self.regime {
            Some(r) => Some(parse_regime(r)?.to_string()),
            None => None,
        };
        let model = self.model.as_ref().map(|m| m.split(':').next().unwrap_or(m).to_string());
        let overrides = Overrides {
            model,
            regime,
            members: if multi_l { None } else { self.members.first().copied() },
            mc_particles: self.mc_particles,
            dt: self.dt,
            seed: self.seed,
            snapshots: self.snapshots.clone(),
            out: self.out.clone(),
            grid: self.grid.clone(),
        };
        cfg.apply(&overrides)?;
        if let Some(c) = &self.cache {
            cfg.cache_dir = Some(c.clone());
        }
        Ok(cfg)
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(HarnessError::Config("--threads must be at least 1".into()));
            }
            // A pool configured by an earlier call in the same process is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Models { action: ModelsAction::List } => {
            list_models();
            Ok(())
        }
        Command::ValidateConfig(args) => {
            let cfg = args.load(false)?;
            let p = cfg.validate()?;
            println!(
                "{}: ok (model {}, {} variables, {} snapshots, {} marginals, hash {})",
                cfg.name,
                p.model_id,
                p.names.len(),
                cfg.snapshots.len(),
                p.marginals.len(),
                cfg.hash()
            );
            Ok(())
        }
        Command::Run(args) => {
            args.init_threads()?;
            let cfg = args.load(false)?;
            let out = output_dir(&cfg);
            let report = crate::run_experiment(&cfg, &out)?;
            print_report(&report, &out);
            Ok(())
        }
        Command::Sweep(args) => {
            args.init_threads()?;
            let cfg = args.load(true)?;
            let out = output_dir(&cfg);
            let rows = crate::run_sweep(&cfg, &args.members, &out)?;
            for r in &rows {
                println!("t={:<8} L={:<6} {} {:<8} {:.5}", r.t, r.members, r.metric, r.variables, r.value);
            }
            println!("sweep tables written to {}", out.display());
            Ok(())
        }
        Command::Truth(args) => {
            args.init_threads()?;
            let cfg = args.load(false)?;
            let out = output_dir(&cfg);
            write_truth(&cfg, &out)
        }
        Command::Compare(args) => {
            args.init_threads()?;
            let cfg = args.load(false)?;
            let p = cfg.validate()?;
            let out = output_dir(&cfg);
            let snaps = truth::truth_snapshots(&p, cfg.cache_dir.as_deref())?;
            let rows = compare::compare_kde_vs_mc(&p, &snaps, cfg.members)?;
            for r in &rows {
                println!(
                    "t={} {}: KL(truth||KDE) = {:.5}, KL(truth||histogram, {} bins) = {:.5}",
                    r.t, r.variable, r.kde.value, r.bins, r.histogram.value
                );
            }
            compare::write_compare(&rows, &out.join("compare.csv"))
        }
    }
}

fn list_models() {
    for id in ModelId::ALL {
        let sys = cgpdf::models::ModelParams::defaults(id).build().expect("default parameters are valid");
        println!("{:<12} {} observed, {} hidden  {}", id.to_string(), sys.n_obs(), sys.n_hid(), id.description());
    }
    println!();
    println!("canned configs:");
    for (name, _) in CANNED {
        println!("  {name}");
    }
}

fn write_truth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let p = cfg.validate()?;
    let snaps = truth::truth_snapshots(&p, cfg.cache_dir.as_deref())?;
    let fields = pipeline::truth_fields(&p, &snaps)?;
    report::write_config(&p, out)?;
    for tf in &fields {
        let dir = out.join(report::snapshot_dir(tf.t));
        std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
        for (m, field) in p.marginals.iter().zip(&tf.fields) {
            let path = dir.join(format!("{}_truth.csv", m.names.join("-")));
            let file = std::fs::File::create(&path).map_err(HarnessError::io(&path))?;
            field
                .write_csv(std::io::BufWriter::new(file))
                .map_err(|source| HarnessError::Stage { stage: "density output", source })?;
        }
    }
    println!("truth fields written to {}", out.display());
    Ok(())
}

fn print_report(report: &report::RunReport, out: &Path) {
    for s in &report.snapshots {
        println!("t = {}  bandwidth {:?}", s.t, s.bandwidth);
        for k in &s.kl {
            let gate = match (k.gate, k.pass) {
                (Some(g), Some(true)) => format!("< {g} PASS"),
                (Some(g), _) => format!("< {g} FAIL"),
                _ => String::new(),
            };
            println!("  {} {:<8} {:.5} {gate}", k.metric, k.variables, k.value);
        }
    }
    println!("report written to {}", out.join(report::REPORT_FILE).display());
}
