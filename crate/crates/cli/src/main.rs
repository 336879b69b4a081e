mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use output::Outcome;

#[derive(Parser, Debug)]
#[command(name = "favsite", version, about = "Favorite sites of biased random walks on trees in the boundary case")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicas: Option<u64>,
    /// Output directory; defaults to `favsite-out/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "FAVSITE_JOBS")]
    jobs: Option<usize>,
    /// f1, f2 or f3.
    #[arg(long, global = true)]
    family: Option<String>,
    /// Free family parameters, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    params: Option<Vec<f64>>,
    /// Walk lengths, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    /// Excursion counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    m: Option<Vec<u64>>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, global = true)]
    samples: Option<u64>,
    /// Sub-checks to run, comma separated; all of them by default.
    #[arg(long, global = true, value_delimiter = ',')]
    checks: Option<Vec<String>>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the boundary-case equations and write the law document.
    Calibrate,
    /// Run walks on conditioned environments and record favorite sets.
    Simulate,
    /// Excursion law checks: closed form vs simulation, and the tail bound.
    Excursions,
    /// Many-to-one, persistence, drawdown and martingale checks.
    SpineCheck,
    /// Certified minimizers of U.
    Umin,
    /// Local-time convergence and per-excursion means.
    Theorem21,
    /// Frequency with which the favorite set hits the minimizers of U.
    Corollary22,
    /// Probability of favorites far from the minimizers, and barrier hits.
    Prop23,
    /// Truncated barrier sums.
    Barrier,
    /// Every table the report renderer reads.
    ReportData,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Simulate => "simulate",
            Command::Excursions => "excursions",
            Command::SpineCheck => "spine-check",
            Command::Umin => "umin",
            Command::Theorem21 => "theorem21",
            Command::Corollary22 => "corollary22",
            Command::Prop23 => "prop23",
            Command::Barrier => "barrier",
            Command::ReportData => "report-data",
        }
    }

    fn run(self, cfg: &RunConfig) -> anyhow::Result<Outcome> {
        match self {
            Command::Calibrate => commands::calibrate(cfg),
            Command::Simulate => commands::simulate(cfg),
            Command::Excursions => commands::excursions(cfg),
            Command::SpineCheck => commands::spine_check(cfg),
            Command::Umin => commands::umin(cfg),
            Command::Theorem21 => commands::theorem21(cfg),
            Command::Corollary22 => commands::corollary22(cfg),
            Command::Prop23 => commands::prop23(cfg),
            Command::Barrier => commands::barrier(cfg),
            Command::ReportData => commands::report_data(cfg),
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RESOURCE: u8 = 3;

fn build_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = &g.family {
        cfg.family = f.clone();
        cfg.params = None;
    }
    if let Some(p) = &g.params {
        cfg.params = Some(p.clone());
    }
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = g.replicas {
        cfg.replicas = r;
    }
    if let Some(n) = &g.n {
        cfg.n_grid = n.clone();
    }
    if let Some(m) = &g.m {
        cfg.m_grid = m.clone();
    }
    if let Some(x) = g.gamma {
        cfg.gamma = x;
    }
    if let Some(e) = &g.eps {
        cfg.eps_grid = e.clone();
    }
    if let Some(s) = g.samples {
        cfg.samples = s;
    }
    if let Some(c) = &g.checks {
        cfg.checks = c.clone();
    }
    if let Some(o) = &g.out {
        cfg.out_dir = Some(o.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit status for a failed run: usage problems get 2, everything that went
/// wrong while computing gets 3.
fn classify(err: &anyhow::Error) -> u8 {
    use favsite::Error as E;
    match err.downcast_ref::<favsite::Error>() {
        Some(e) if e.is_resource() => EXIT_RESOURCE,
        Some(E::Domain(_) | E::Calibration(_) | E::LawRejected(_) | E::Parse { .. }) => EXIT_USAGE,
        Some(_) => EXIT_RESOURCE,
        None => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let name = cli.command.name();
    let cfg = match build_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RESOURCE);
        }
    }
    let dir = cfg.out_dir.as_ref().map_or_else(|| PathBuf::from("favsite-out").join(name), PathBuf::from);
    match cli.command.run(&cfg) {
        Ok(outcome) => {
            if let Err(e) = output::write_all(&dir, name, &cfg, &outcome) {
                eprintln!("error: writing {}: {e:#}", dir.display());
                return ExitCode::from(EXIT_RESOURCE);
            }
            print!("{}", output::summary(name, &cfg, &outcome.checks, if outcome.passed() { "pass" } else { "fail" }));
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = classify(&e);
            if code == EXIT_RESOURCE {
                output::write_failure(&dir, name, &cfg, "resource", &format!("{e:#}"));
            }
            ExitCode::from(code)
        }
    }
}
