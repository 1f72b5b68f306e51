//! Command-line front end.
//!
//! ```text
//! aggrevated run <config> --out <dir>
//! aggrevated sweep <config> --var K --values 4,6,8 --out <dir>
//! aggrevated verify <suite>
//! ```
//!
//! `run` writes into the output directory:
//!
//! * `curve.csv`: header `episode,mu_pi,mu_star,inst_regret,cum_regret,wall_ms`,
//!   one row per episode, floats with 17 significant digits. `wall_ms` is 0
//!   unless `output.wall_clock = true`, so curves are byte-reproducible.
//! * `curve.dat`: the same columns, whitespace separated, for gnuplot.
//! * `summary.txt`: final `mu`, `R_N`, the log-log slope of the second half
//!   of the cumulative regret and the best episode.
//! * `resolved_config.txt`: every setting, defaults included; running it
//!   reproduces `curve.csv`.
//! * `policy.agvp`: best parametric policy (see [`crate::params`]).
//! * `corpus.txt` for parsing runs: training then held-out sentences, one per
//!   line as tab-separated `token:head` cells, heads 1-based and `0` for the
//!   root.
//!
//! `sweep` runs one grid point per subdirectory and aggregates them in
//! `sweep.csv` (`var,value,config_hash,final_mu,final_regret,slope`). The
//! config hash is SHA-256 over the resolved configuration without its seed.
//! The sweep variable is one of `K` (tree depth), `S`, `A`, `N` (episodes)
//! or `seed`.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration or parse
//! error, 3 numeric failure (the message names the episode). Verbosity is
//! read from `AGGREVATED_LOG` (`error` .. `trace`, default `warn`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{self, Algorithm, ExperimentConfig};
use crate::env::parsing::{make_parse_corpus, write_corpus};
use crate::error::{Error, Result};
use crate::learner::{
    build_finite, run_aggrevated, run_reinforce, run_tree_bandit_ucb, slope_fit, EnvSpec, LearnedPolicy,
    RegretCurve,
};
use crate::params;
use crate::verify::{self, Suite};

pub const LOG_ENV: &str = "AGGREVATED_LOG";
pub const CSV_HEADER: &str = "episode,mu_pi,mu_star,inst_regret,cum_regret,wall_ms";

#[derive(Debug, Parser)]
#[command(name = "aggrevated", version, about = "Interactive imitation learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one experiment per value of a sweep variable.
    Sweep {
        config: PathBuf,
        /// K, S, A, N or seed.
        #[arg(long)]
        var: String,
        /// Comma-separated grid values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an acceptance suite: gradients, eg, pdl, fisher, regret-fast,
    /// regret-full or all.
    Verify { suite: String },
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Config(_) | Error::Unsupported(_) => 2,
        e if e.is_numeric() => 3,
        Error::AtEpisode { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Outcome of one configured run, whatever the driver.
pub struct RunReport {
    pub curve: RegretCurve,
    pub best: Option<LearnedPolicy>,
    pub best_score: f64,
    pub best_episode: usize,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = match cfg.algorithm {
        Algorithm::Aggrevated => run_aggrevated(&cfg.run)?,
        Algorithm::Reinforce => run_reinforce(&cfg.run)?,
        Algorithm::Ucb => {
            let setup = build_finite(&cfg.run)?;
            let tree = setup.tree.ok_or_else(|| Error::Config("ucb needs a tree environment".into()))?;
            let ucb = run_tree_bandit_ucb(&tree, cfg.run.episodes, cfg.run.seed)?;
            let (best_episode, best_score) = ucb
                .curve
                .records
                .iter()
                .fold((0, f64::INFINITY), |b, r| if r.mu_pi < b.1 { (r.episode, r.mu_pi) } else { b });
            return Ok(RunReport {
                curve: ucb.curve,
                best: None,
                best_score,
                best_episode,
            });
        }
    };
    Ok(RunReport {
        curve: out.curve,
        best: Some(out.best),
        best_score: out.best_score,
        best_episode: out.best_episode,
    })
}

fn wall(cfg: &ExperimentConfig, ms: f64) -> f64 {
    if cfg.wall_clock {
        ms
    } else {
        0.0
    }
}

pub fn curve_csv(curve: &RegretCurve, cfg: &ExperimentConfig) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &curve.records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.episode,
            r.mu_pi,
            r.mu_star,
            r.inst_regret,
            r.cum_regret,
            wall(cfg, r.wall_ms)
        );
    }
    out
}

fn curve_dat(curve: &RegretCurve, cfg: &ExperimentConfig) -> String {
    let mut out = String::from("# episode mu_pi mu_star inst_regret cum_regret wall_ms\n");
    for r in &curve.records {
        let _ = writeln!(
            out,
            "{} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            r.episode,
            r.mu_pi,
            r.mu_star,
            r.inst_regret,
            r.cum_regret,
            wall(cfg, r.wall_ms)
        );
    }
    out
}

/// Log-log slope of the cumulative regret over the second half of the run,
/// or NaN when the regret is not positive there.
pub fn regret_slope(curve: &RegretCurve) -> f64 {
    let series = curve.cum_series();
    slope_fit(&series, series.len() / 2..series.len()).unwrap_or(f64::NAN)
}

fn summary(report: &RunReport) -> String {
    let c = &report.curve;
    let mu_star = c.records.last().map_or(f64::NAN, |r| r.mu_star);
    format!(
        "episodes = {}\nfinal_mu = {:.16e}\nmu_star = {:.16e}\nfinal_regret = {:.16e}\nslope = {:.6}\nbest_mu = {:.16e}\nbest_episode = {}\n",
        c.len(),
        c.final_mu(),
        mu_star,
        c.final_regret(),
        regret_slope(c),
        report.best_score,
        report.best_episode
    )
}

/// Runs a configuration and writes every output file into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved_config.txt"), config::render(cfg))?;
    if let EnvSpec::Parsing { sentences, held_out, max_len, vocab } = cfg.run.env {
        let corpus = make_parse_corpus(sentences + held_out, max_len, vocab, cfg.run.seed)?;
        fs::write(dir.join("corpus.txt"), write_corpus(&corpus))?;
    }
    let report = execute(cfg)?;
    fs::write(dir.join("curve.csv"), curve_csv(&report.curve, cfg))?;
    fs::write(dir.join("curve.dat"), curve_dat(&report.curve, cfg))?;
    fs::write(dir.join("summary.txt"), summary(&report))?;
    if let Some(LearnedPolicy::Parametric(p)) = &report.best {
        fs::write(dir.join("policy.agvp"), params::encode(p))?;
    }
    Ok(report)
}

pub fn cmd_run(config_path: &Path, out: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(config_path)?;
    let cfg = config::parse(&text)?;
    run_to_dir(&cfg, out)
}

fn sweep_key(var: &str) -> Result<&'static str> {
    Ok(match var {
        "K" => "env.depth",
        "S" => "env.states",
        "A" => "env.actions",
        "N" => "learner.episodes",
        "seed" => "run.seed",
        _ => return Err(Error::Config(format!("sweep variable {var:?} is not one of K, S, A, N, seed"))),
    })
}

/// SHA-256 of the resolved configuration with the seed left out.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut unseeded = cfg.clone();
    unseeded.run.seed = 0;
    hex::encode(Sha256::digest(config::render(&unseeded).as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub config_hash: String,
    pub final_mu: f64,
    pub final_regret: f64,
    pub slope: f64,
}

pub fn cmd_sweep(config_path: &Path, var: &str, values: &str, out: &Path) -> Result<Vec<SweepRow>> {
    let key = sweep_key(var)?;
    let grid: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let text = fs::read_to_string(config_path)?;
    let configs = grid
        .iter()
        .map(|v| config::parse(&config::with_override(&text, key, v)).map(|c| (v.to_string(), c)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut csv = String::from("var,value,config_hash,final_mu,final_regret,slope\n");
    for (value, cfg) in configs {
        log::info!("sweep {var}={value}");
        let report = run_to_dir(&cfg, &out.join(format!("{var}={value}")))?;
        let row = SweepRow {
            config_hash: config_hash(&cfg),
            final_mu: report.curve.final_mu(),
            final_regret: report.curve.final_regret(),
            slope: regret_slope(&report.curve),
            value,
        };
        let _ = writeln!(
            csv,
            "{var},{},{},{:.16e},{:.16e},{:.6}",
            row.value, row.config_hash, row.final_mu, row.final_regret, row.slope
        );
        rows.push(row);
    }
    fs::write(out.join("sweep.csv"), csv)?;
    Ok(rows)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn report_error(err: &Error) -> i32 {
    let code = exit_code(err);
    match (code, err) {
        (3, Error::AtEpisode { episode, source }) => eprintln!("numeric failure at episode {episode}: {source}"),
        (2, Error::Parse { line, message }) => eprintln!("config error at line {line}: {message}"),
        _ => eprintln!("error: {err}"),
    }
    code
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Command::Run { config, out } => match cmd_run(&config, &out) {
            Ok(report) => {
                println!(
                    "final mu {:.6}, R_N {:.6} over {} episodes; outputs in {}",
                    report.curve.final_mu(),
                    report.curve.final_regret(),
                    report.curve.len(),
                    out.display()
                );
                0
            }
            Err(e) => report_error(&e),
        },
        Command::Sweep { config, var, values, out } => match cmd_sweep(&config, &var, &values, &out) {
            Ok(rows) => {
                println!("{} grid points written to {}", rows.len(), out.join("sweep.csv").display());
                0
            }
            Err(e) => report_error(&e),
        },
        Command::Verify { suite } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(msg) => {
                    eprintln!("{msg}");
                    return 2;
                }
            };
            let results = verify::run_suite(suite, |r| println!("{r}"));
            let passed = results.iter().filter(|r| r.passed).count();
            println!("{passed}/{} criteria passed", results.len());
            if passed == results.len() {
                0
            } else {
                1
            }
        }
    }
}
