//! Subcommand drivers behind the `dns` binary.
//!
//! Exit codes: 0 success, 1 a diagnostic check failed, 2 configuration or
//! validation error, 3 numeric abort or I/O failure, 4 insufficient kernel
//! rank.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpp::{empirical_counts, kdpp_prob_bruteforce, total_variation, KDppSampler};
use crate::error::{Error, Result};
use crate::kernel::{cka, ActivationMatrix, KernelKind};
use crate::linalg::{SymMatrix, MAX_ENUMERATION_N};
use crate::nn::FlopLedger;
use crate::rl::metrics::{fmt_sig9, write_csv};
use crate::rl::{train, BackwardCosts, RunResult, Selection, TrainConfig};
use crate::rng::SeededRng;
use crate::variance_lab::{run_lab, VarianceLabConfig};

pub const EXIT_CHECK_FAILED: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "dns",
    version,
    about = "Diversity-driven critic selection toolkit"
)]
pub struct Cli {
    /// Output directory for metrics and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for seeds and Monte-Carlo shards.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured variant over every seed.
    Train { config: PathBuf },
    /// Compare k-DPP sampler frequencies with enumerated probabilities.
    DppCheck { config: PathBuf },
    /// Closed-form and Monte-Carlo checks of the update-indicator model.
    VarianceLab { config: PathBuf },
    /// Linear CKA between two activation CSVs (rows are examples).
    Cka {
        a: PathBuf,
        b: PathBuf,
        /// Use an RBF kernel with this bandwidth instead of the linear kernel.
        #[arg(long)]
        rbf_sigma: Option<f64>,
    },
}

/// Parses `args`, runs the subcommand, and returns the process exit code.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(stderr, "{e}");
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<u8> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Train { config } => cmd_train(config, cli.out.as_deref(), cli.threads, stdout),
        Command::DppCheck { config } => cmd_dpp_check(config, cli.out.as_deref(), stdout),
        Command::VarianceLab { config } => {
            cmd_variance_lab(config, cli.out.as_deref(), cli.threads, stdout)
        }
        Command::Cka { a, b, rbf_sigma } => cmd_cka(a, b, *rbf_sigma, stdout),
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numeric(format!("cannot encode report: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantSummary {
    pub selection: Selection,
    pub seeds: Vec<u64>,
    pub final_returns: Vec<f64>,
    pub mean_final_return: f64,
    /// Standard error of the mean final return across seeds.
    pub std_error: f64,
    /// Totals summed over seeds.
    pub flops: FlopLedger,
    pub critic_backward_flops: u64,
    pub policy_backward_flops: u64,
    pub update_rounds: u64,
    pub dns_fallbacks: u64,
    /// Backward FLOPs relative to `all`, when that variant ran.
    pub bwd_ratio_vs_all: Option<f64>,
    pub critic_bwd_ratio_vs_all: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictedRatio {
    /// Per-step backward cost of updating one critic.
    pub critic_cost: u64,
    /// Per-step backward cost of the policy update.
    pub policy_cost: u64,
    pub numerator: u64,
    pub denominator: u64,
    /// `(k·C_c + C_p) / (N·C_c + C_p)`.
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub n_critics: usize,
    pub k: usize,
    pub total_steps: usize,
    pub variants: Vec<VariantSummary>,
    pub predicted_bwd_ratio: PredictedRatio,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every `(variant, seed)` pair on a pool of `threads` workers.
/// Results come back in config order regardless of scheduling.
pub fn run_experiment(cfg: &TrainConfig, threads: usize) -> Result<Vec<RunResult>> {
    let jobs: Vec<(Selection, u64)> = cfg
        .variants()
        .into_iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(s, seed)| train(cfg, s, seed))
            .collect()
    })
}

pub fn summarize(cfg: &TrainConfig, results: &[RunResult]) -> Result<TrainSummary> {
    let costs = BackwardCosts::for_config(cfg)?;
    let (num, den) = costs.ratio_fraction(cfg.redq.k, cfg.redq.n_critics);
    let mut variants: Vec<VariantSummary> = cfg
        .variants()
        .into_iter()
        .map(|selection| {
            let runs: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.selection == selection)
                .collect();
            let returns: Vec<f64> = runs.iter().map(|r| r.final_return).collect();
            let (mean, se) = mean_and_se(&returns);
            let flops = runs
                .iter()
                .fold(FlopLedger::default(), |acc, r| acc + r.ledger.total());
            VariantSummary {
                selection,
                seeds: runs.iter().map(|r| r.seed).collect(),
                final_returns: returns,
                mean_final_return: mean,
                std_error: se,
                flops,
                critic_backward_flops: runs.iter().map(|r| r.ledger.critic.backward_flops).sum(),
                policy_backward_flops: runs.iter().map(|r| r.ledger.policy.backward_flops).sum(),
                update_rounds: runs.iter().map(|r| r.update_rounds).sum(),
                dns_fallbacks: runs.iter().map(|r| r.dns_fallbacks).sum(),
                bwd_ratio_vs_all: None,
                critic_bwd_ratio_vs_all: None,
            }
        })
        .collect();
    if let Some(all) = variants
        .iter()
        .find(|v| v.selection == Selection::All)
        .cloned()
    {
        for v in &mut variants {
            v.bwd_ratio_vs_all =
                Some(v.flops.backward_flops as f64 / all.flops.backward_flops as f64);
            v.critic_bwd_ratio_vs_all =
                Some(v.critic_backward_flops as f64 / all.critic_backward_flops as f64);
        }
    }
    Ok(TrainSummary {
        n_critics: cfg.redq.n_critics,
        k: cfg.redq.k,
        total_steps: cfg.total_steps,
        variants,
        predicted_bwd_ratio: PredictedRatio {
            critic_cost: costs.critic,
            policy_cost: costs.policy,
            numerator: num,
            denominator: den,
            value: num as f64 / den as f64,
        },
    })
}

fn cmd_train(
    path: &Path,
    out: Option<&Path>,
    threads: usize,
    stdout: &mut dyn Write,
) -> Result<u8> {
    let cfg = TrainConfig::from_json(&read_config(path)?)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&dir)?;
    let results = run_experiment(&cfg, threads)?;
    for r in &results {
        let file = fs::File::create(dir.join(format!("{}_seed{}.csv", r.selection, r.seed)))?;
        write_csv(std::io::BufWriter::new(file), cfg.redq.n_critics, &r.rows)?;
    }
    let summary = summarize(&cfg, &results)?;
    write_json(&dir.join("summary.json"), &summary)?;
    for v in &summary.variants {
        writeln!(
            stdout,
            "{:<9} mean_return={} se={} bwd_flops={}{}",
            v.selection.name(),
            fmt_sig9(v.mean_final_return),
            fmt_sig9(v.std_error),
            v.flops.backward_flops,
            v.bwd_ratio_vs_all
                .map(|x| format!(" bwd_ratio_vs_all={}", fmt_sig9(x)))
                .unwrap_or_default()
        )?;
    }
    writeln!(
        stdout,
        "predicted bwd ratio (k*C_c + C_p)/(N*C_c + C_p) = {}/{} = {}",
        summary.predicted_bwd_ratio.numerator,
        summary.predicted_bwd_ratio.denominator,
        fmt_sig9(summary.predicted_bwd_ratio.value)
    )?;
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppCheckConfig {
    pub kernel: Vec<Vec<f64>>,
    pub k: usize,
    #[serde(default = "default_dpp_draws")]
    pub draws: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tv")]
    pub tv_threshold: f64,
}

fn default_dpp_draws() -> u64 {
    200_000
}
fn default_tv() -> f64 {
    0.01
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsetRow {
    pub subset: String,
    pub exact: f64,
    pub empirical: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DppCheckReport {
    pub n: usize,
    pub k: usize,
    pub draws: u64,
    pub seed: u64,
    pub subsets: Vec<SubsetRow>,
    pub total_variation: f64,
    pub tv_threshold: f64,
    pub pass: bool,
}

pub fn dpp_check(cfg: &DppCheckConfig) -> Result<DppCheckReport> {
    let l = SymMatrix::from_rows(&cfg.kernel)?;
    if l.n() > MAX_ENUMERATION_N {
        return Err(Error::validation(format!(
            "enumeration supports N <= {MAX_ENUMERATION_N}, got {}",
            l.n()
        )));
    }
    if cfg.draws == 0 {
        return Err(Error::validation("draws must be positive"));
    }
    let sampler = KDppSampler::new(&l, cfg.k)?;
    let exact = kdpp_prob_bruteforce(&l, cfg.k)?;
    let counts = empirical_counts(&sampler, cfg.draws, &mut SeededRng::new(cfg.seed))?;
    let tv = total_variation(&counts, &exact);
    let subsets = exact
        .iter()
        .map(|(s, &p)| SubsetRow {
            subset: s.to_string(),
            exact: p,
            empirical: counts.get(s).copied().unwrap_or(0) as f64 / cfg.draws as f64,
        })
        .collect();
    Ok(DppCheckReport {
        n: l.n(),
        k: cfg.k,
        draws: cfg.draws,
        seed: cfg.seed,
        subsets,
        total_variation: tv,
        tv_threshold: cfg.tv_threshold,
        pass: tv <= cfg.tv_threshold,
    })
}

fn cmd_dpp_check(path: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<u8> {
    let text = read_config(path)?;
    let cfg: DppCheckConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let report = dpp_check(&cfg)?;
    writeln!(
        stdout,
        "{:<24} {:>12} {:>12}",
        "subset", "exact", "empirical"
    )?;
    for row in &report.subsets {
        writeln!(
            stdout,
            "{:<24} {:>12} {:>12}",
            row.subset,
            fmt_sig9(row.exact),
            fmt_sig9(row.empirical)
        )?;
    }
    writeln!(
        stdout,
        "total_variation {} (threshold {}) {}",
        fmt_sig9(report.total_variation),
        fmt_sig9(report.tv_threshold),
        if report.pass { "PASS" } else { "FAIL" }
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("dpp_check.json"), &report)?;
    }
    Ok(if report.pass { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_variance_lab(
    path: &Path,
    out: Option<&Path>,
    threads: usize,
    stdout: &mut dyn Write,
) -> Result<u8> {
    let cfg = VarianceLabConfig::from_json(&read_config(path)?)?;
    let report = run_lab(&cfg, threads)?;
    let passed = report.moment_checks.iter().filter(|c| c.pass).count();
    writeln!(
        stdout,
        "moment checks: {passed}/{} pass",
        report.moment_checks.len()
    )?;
    if let Some(c) = &report.min_cdf {
        writeln!(
            stdout,
            "min cdf: ks={} bound={} monotone={} {}",
            fmt_sig9(c.ks_statistic),
            fmt_sig9(c.ks_bound),
            c.monotone,
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    for c in &report.comparisons {
        writeln!(
            stdout,
            "{}: var_avg {} vs {} ({:?}), var_min {} vs {} ({:?}){} {}",
            c.name,
            fmt_sig9(c.coupled.var_avg),
            fmt_sig9(c.reference.var_avg),
            c.avg_ordering,
            fmt_sig9(c.coupled.var_min),
            fmt_sig9(c.reference.var_min),
            c.min_ordering,
            if c.informational {
                " [informational]"
            } else {
                ""
            },
            if c.pass { "PASS" } else { "FAIL" }
        )?;
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join("variance_lab.json"), &report)?;
        }
        None => {
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::numeric(format!("cannot encode report: {e}")))?;
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(if report.all_pass {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

/// Reads a numeric CSV; a first line that does not parse is taken as a header.
pub fn read_activation_csv(path: &Path) -> Result<ActivationMatrix> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::validation(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    ActivationMatrix::from_rows(&rows)
}

fn cmd_cka(a: &Path, b: &Path, rbf_sigma: Option<f64>, stdout: &mut dyn Write) -> Result<u8> {
    let x = read_activation_csv(a)?;
    let y = read_activation_csv(b)?;
    let kind = match rbf_sigma {
        Some(sigma) => KernelKind::Rbf { sigma },
        None => KernelKind::Linear,
    };
    writeln!(stdout, "{}", fmt_sig9(cka(&x, &y, kind)?))?;
    Ok(0)
}
