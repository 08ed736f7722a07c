//! Command-line interface.
//!
//! ```text
//! mi-lab bench --estimator nwj --rho 0.9 --d 128 --N 128 --steps 3000
//! mi-lab demo-kl --trials 10000 --N 100
//! mi-lab demo-entropy --trials 10000 --k 2 --N 50
//! mi-lab demo-dv --trials 10000 --N 100
//! mi-lab oracle gaussian-mi --d 128 --rho 0.9
//! mi-lab selftest
//! ```
//!
//! * `bench` trains one estimator across a learning-rate grid and writes
//!   one CSV per run plus a `summary.json` into `--out`.
//! * the demos print a JSON report to stdout.
//! * `oracle` prints closed-form reference values, six significant digits.
//! * `selftest` runs a fast invariant battery, one `ok`/`FAIL` line each.
//!
//! Exit codes: 0 success, 1 numeric or runtime failure (including failed
//! selftest checks), 2 usage errors (bad flags or a bad `--config` file).
//!
//! Settings resolve as flags, then the `--config` JSON file, then the
//! `MI_LAB_SEED` environment variable (seed only), then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::distributions::{mix_adversarial, truncate_tail_adversary, Categorical, GaussianPairSpec, TailOutcome};
use crate::estimators::{
    cpc_from_score_matrix, interp_from_scores, nwj_from_scores, Batch, EstimatorKind, TrainInit,
    TrainState,
};
use crate::experiments::{
    default_hidden, default_learning_rates, run_dv_saturation, run_entropy_adversary_demo,
    run_grid, run_kl_adversary_demo, BenchConfig, Hyperparams, RunRecord,
};
use crate::numerics::{finite_diff, grads_close, logsumexp, Activation, Matrix};
use crate::oracles::{
    ceilings, chernoff_interval, chernoff_radius, exact_entropy, exact_kl, optimal_dv_critic,
    pac_bayes_bound, pac_bayes_prefactor, population_dv,
};
use crate::rng::RunRng;
use crate::{Error, Result};

const DEFAULT_SEED: u64 = 2026;
const SEED_ENV: &str = "MI_LAB_SEED";

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap prints the message and exits 2 on bad usage, 0 on --help
        Err(e) => e.exit(),
    };
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("mi-lab: {e}");
            return 2;
        }
    };
    let seed = match resolve_seed(cli.seed, &file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mi-lab: {e}");
            return 2;
        }
    };
    let out = cli
        .out
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match dispatch(cli.command, seed, &out, &file) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mi-lab: {e}");
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "mi-lab", version, about = "Mutual information estimators and their limits")]
struct Cli {
    /// JSON config file supplying defaults (flags win).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; every run and trial derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV and JSON artifacts (bench only).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an estimator on correlated Gaussians over a learning-rate grid.
    Bench(BenchArgs),
    /// Mixture adversary: ln N caps the KL while samples look exactly like q.
    DemoKl(DemoKlArgs),
    /// Tail-truncation adversary: entropy capped at ln(2 k N^2), unseen by N samples.
    DemoEntropy(DemoEntropyArgs),
    /// DV at its optimal critic overshoots the true KL on most trials.
    DemoDv(DemoDvArgs),
    /// Closed-form reference values.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Fast invariant battery; exits 1 if any check fails.
    Selftest,
}

#[derive(Args)]
struct BenchArgs {
    /// dv, mine, nwj, nwj_js, cpc, interp, doe_gaussian, doe_logistic
    #[arg(long, value_parser = parse_kind)]
    estimator: Option<EstimatorKind>,
    /// Per-coordinate correlation of the Gaussian pair.
    #[arg(long)]
    rho: Option<f64>,
    /// Dimension of each of x and y.
    #[arg(long)]
    d: Option<usize>,
    /// Batch size (the N in the ln N ceiling).
    #[arg(long = "N")]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Single learning rate; omit to run the default grid.
    #[arg(long)]
    lr: Option<f64>,
    /// Critic width (default 256; 64 for the pair-grid estimators).
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden layers (0 = linear critic).
    #[arg(long)]
    depth: Option<usize>,
    /// tanh or relu
    #[arg(long, value_parser = parse_activation)]
    activation: Option<Activation>,
    /// Clamp critic outputs to [0, CLIP].
    #[arg(long, value_name = "CLIP")]
    output_clip: Option<f64>,
    /// MINE denominator decay.
    #[arg(long)]
    mine_ema_decay: Option<f64>,
    /// CPC weight for interp.
    #[arg(long)]
    interp_alpha: Option<f64>,
    /// Tie DoE scale parameters across coordinates.
    #[arg(long)]
    tied_scales: bool,
}

#[derive(Args)]
struct DemoKlArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Sample size per trial (the mixture weight is 1/N).
    #[arg(long = "N", default_value_t = 100)]
    sample_size: usize,
    /// Comma-separated probabilities of p; q is uniform on the same support.
    #[arg(long, default_value = "0.7,0.2,0.1")]
    p: String,
}

#[derive(Args)]
struct DemoEntropyArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Sample size per trial.
    #[arg(long = "N", default_value_t = 50)]
    sample_size: usize,
    /// Head budget multiplier: the head keeps the top k N^2 atoms.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Source distribution: Zipf with this exponent ...
    #[arg(long, default_value_t = 1.1)]
    exponent: f64,
    /// ... over this many atoms.
    #[arg(long, default_value_t = 1_000_000)]
    atoms: usize,
}

#[derive(Args)]
struct DemoDvArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Sample size per trial.
    #[arg(long = "N", default_value_t = 100)]
    sample_size: usize,
    /// Support size of the heavy-ratio pair (q is uniform).
    #[arg(long, default_value_t = 8_000)]
    atoms: usize,
    /// Probability of each non-peak atom under p.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact MI of the d-dimensional correlated Gaussian pair.
    GaussianMi {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        rho: f64,
    },
    /// ln N, the 2 ln N + 5 cap, and (with --k) the entropy cap ln(2 k N^2).
    Ceilings {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Chernoff half-width for a statistic bounded by f_max.
    Chernoff {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        f_max: f64,
        /// Also print the interval around this empirical mean.
        #[arg(long)]
        mean: Option<f64>,
    },
    /// PAC-Bayes inflation factor and (with all args) the full bound.
    PacBayes {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        empirical: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        f_max: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        theta_norm_sq: Option<f64>,
    },
}

fn parse_kind(s: &str) -> Result<EstimatorKind> {
    s.parse()
}

fn parse_activation(s: &str) -> Result<Activation> {
    s.parse()
}

/// Optional defaults loaded from `--config`; unknown keys are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    bench: BenchFileConfig,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BenchFileConfig {
    estimator: Option<EstimatorKind>,
    rho: Option<f64>,
    d: Option<usize>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    learning_rates: Option<Vec<f64>>,
    hidden: Option<usize>,
    depth: Option<usize>,
    activation: Option<Activation>,
    output_clip: Option<f64>,
    mine_ema_decay: Option<f64>,
    interp_alpha: Option<f64>,
    doe_tied_scales: Option<bool>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Usage(format!("config {}: {e}", p.display())))?;
                let cfg = serde_json::from_str(&text)
                    .map_err(|e| Error::Usage(format!("config {}: {e}", p.display())))?;
                Ok(cfg)
            }
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV} must be an unsigned integer, got {text:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn dispatch(command: Command, seed: u64, out: &Path, file: &FileConfig) -> Result<i32> {
    match command {
        Command::Bench(args) => run_bench(args, seed, out, &file.bench),
        Command::DemoKl(args) => {
            let p = Categorical::new(parse_probs(&args.p)?)?;
            let q = Categorical::uniform(p.len())?;
            let report = run_kl_adversary_demo(&p, &q, args.sample_size, args.trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::DemoEntropy(args) => {
            let p = Categorical::zipf(args.exponent, args.atoms)?;
            let outcome =
                run_entropy_adversary_demo(&p, args.k, args.sample_size, args.trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(0)
        }
        Command::DemoDv(args) => {
            let (p, q) = heavy_ratio_pair(args.atoms, args.epsilon)?;
            let report = run_dv_saturation(&p, &q, args.sample_size, args.trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Oracle(cmd) => run_oracle(cmd),
        Command::Selftest => run_selftest(),
    }
}

/// `p` puts mass `1 - (m-1) eps` on atom 0 and `eps` elsewhere; `q` is
/// uniform. The optimal critic then peaks on an atom that `N` draws of `q`
/// usually miss.
fn heavy_ratio_pair(atoms: usize, epsilon: f64) -> Result<(Categorical, Categorical)> {
    if atoms < 2 {
        return Err(Error::invalid("atoms", "need at least 2 atoms"));
    }
    let rest = (atoms - 1) as f64 * epsilon;
    if !(epsilon > 0.0) || rest >= 1.0 {
        return Err(Error::invalid(
            "epsilon",
            format!("need 0 < epsilon and (atoms - 1) * epsilon < 1, got {epsilon}"),
        ));
    }
    let mut probs = vec![epsilon; atoms];
    probs[0] = 1.0 - rest;
    Ok((Categorical::new(probs)?, Categorical::uniform(atoms)?))
}

fn parse_probs(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("bad probability {s:?} in --p")))
        })
        .collect()
}

// ---------------------------------------------------------------- bench

fn run_bench(args: BenchArgs, seed: u64, out: &Path, file: &BenchFileConfig) -> Result<i32> {
    let kind = args
        .estimator
        .or(file.estimator)
        .unwrap_or(EstimatorKind::Dv);
    let rho = args.rho.or(file.rho).unwrap_or(0.9);
    let d = args.d.or(file.d).unwrap_or(128);
    let batch_size = args.batch_size.or(file.batch_size).unwrap_or(128);
    let steps = args.steps.or(file.steps).unwrap_or(3000);
    let hyper = Hyperparams {
        learning_rate: 0.0, // set per grid cell
        hidden: args
            .hidden
            .or(file.hidden)
            .unwrap_or_else(|| default_hidden(kind)),
        depth: args.depth.or(file.depth).unwrap_or(2),
        activation: args
            .activation
            .or(file.activation)
            .unwrap_or(Activation::Relu),
        output_clip: args.output_clip.or(file.output_clip),
        mine_ema_decay: args.mine_ema_decay.or(file.mine_ema_decay).unwrap_or(0.9),
        interp_alpha: args.interp_alpha.or(file.interp_alpha).unwrap_or(0.5),
        doe_tied_scales: args.tied_scales || file.doe_tied_scales.unwrap_or(false),
    };
    let lrs = args
        .lr
        .map(|l| vec![l])
        .or_else(|| file.learning_rates.clone())
        .unwrap_or_else(default_learning_rates);
    let spec = GaussianPairSpec::new(d, rho)?;
    let grid = run_grid(spec, kind, batch_size, steps, seed, &hyper, &lrs)?;

    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(grid.runs.len());
    for record in &grid.runs {
        let csv = format!("run_{:016x}.csv", config_hash(&record.config)?);
        write_run_csv(&out.join(&csv), record)?;
        println!(
            "{} lr {} final {} truth {} ln_N {} flagged {} -> {}",
            kind,
            format_sig(record.config.hyper.learning_rate, 6),
            format_sig(record.final_estimate, 6),
            format_sig(record.ground_truth, 6),
            format_sig(record.ln_n, 6),
            record.flagged.iter().filter(|&&f| f).count(),
            csv,
        );
        entries.push(SummaryEntry {
            config: record.config.clone(),
            csv,
            final_estimate: record.final_estimate,
            ground_truth: record.ground_truth,
            ln_n: record.ln_n,
            flagged_steps: record.flagged.iter().filter(|&&f| f).count(),
            wall_time_seconds: record.wall_time_seconds,
        });
    }
    let summary = Summary {
        command: "bench".into(),
        master_seed: seed,
        best_index: grid.best,
        runs: entries,
    };
    let path = out.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    match grid.best_run() {
        Some(best) => println!(
            "best lr {} final {} (truth {}) -> {}",
            format_sig(best.config.hyper.learning_rate, 6),
            format_sig(best.final_estimate, 6),
            format_sig(best.ground_truth, 6),
            path.display(),
        ),
        None => println!("no finite run -> {}", path.display()),
    }
    Ok(0)
}

/// `summary.json` layout for a bench invocation.
#[derive(serde::Serialize)]
struct Summary {
    command: String,
    master_seed: u64,
    best_index: Option<usize>,
    runs: Vec<SummaryEntry>,
}

#[derive(serde::Serialize)]
struct SummaryEntry {
    config: BenchConfig,
    csv: String,
    final_estimate: f64,
    ground_truth: f64,
    ln_n: f64,
    flagged_steps: usize,
    wall_time_seconds: f64,
}

/// FNV-1a over the canonical JSON encoding of a run config; used to name
/// the run's CSV file.
pub fn config_hash(config: &BenchConfig) -> Result<u64> {
    let json = serde_json::to_string(config)?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(h)
}

/// One CSV row of a training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsvRow {
    pub step: u64,
    pub estimate: f64,
    pub flagged: bool,
}

const CSV_HEADER: &str = "step,estimate,flagged";

/// Write a training curve as `step,estimate,flagged` rows. Estimates are
/// printed with 17 significant digits so parsing them back is exact.
pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut text = String::with_capacity(32 * record.estimates.len() + 32);
    text.push_str(CSV_HEADER);
    text.push('\n');
    for (i, (est, flag)) in record.estimates.iter().zip(&record.flagged).enumerate() {
        text.push_str(&format!("{i},{est:.16e},{}\n", u8::from(*flag)));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Parse a file written by [`write_run_csv`].
pub fn read_run_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Usage(format!(
            "{}: expected header {CSV_HEADER:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let bad = || Error::Usage(format!("{} line {}: bad row {line:?}", path.display(), lineno + 2));
        let mut fields = line.split(',');
        let step = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let estimate = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let flagged = match fields.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        if fields.next().is_some() {
            return Err(bad());
        }
        rows.push(CsvRow {
            step,
            estimate,
            flagged,
        });
    }
    Ok(rows)
}

// --------------------------------------------------------------- oracle

fn run_oracle(cmd: OracleCommand) -> Result<i32> {
    match cmd {
        OracleCommand::GaussianMi { d, rho } => {
            let spec = GaussianPairSpec::new(d, rho)?;
            println!("mi {}", format_sig(spec.mi(), 6));
        }
        OracleCommand::Ceilings { n, k } => {
            let c = ceilings(n, k)?;
            println!("ln_n {}", format_sig(c.ln_n, 6));
            println!("mi_lower_bound_cap {}", format_sig(c.mi_lower_bound_cap, 6));
            if let Some(cap) = c.entropy_cap {
                println!("entropy_cap {}", format_sig(cap, 6));
            }
        }
        OracleCommand::Chernoff {
            n,
            delta,
            f_max,
            mean,
        } => {
            println!("radius {}", format_sig(chernoff_radius(n, delta, f_max)?, 6));
            if let Some(m) = mean {
                let (lo, hi) = chernoff_interval(m, n, delta, f_max)?;
                println!("lower {}", format_sig(lo, 6));
                println!("upper {}", format_sig(hi, 6));
            }
        }
        OracleCommand::PacBayes {
            lambda,
            empirical,
            n,
            delta,
            f_max,
            sigma,
            theta_norm_sq,
        } => {
            println!("prefactor {}", format_sig(pac_bayes_prefactor(lambda)?, 6));
            let full = (empirical, n, delta, f_max, sigma, theta_norm_sq);
            if let (Some(e), Some(n), Some(d), Some(f), Some(s), Some(t)) = full {
                println!("bound {}", format_sig(pac_bayes_bound(e, n, d, f, lambda, s, t)?, 6));
            } else if empirical.is_some()
                || n.is_some()
                || delta.is_some()
                || f_max.is_some()
                || sigma.is_some()
                || theta_norm_sq.is_some()
            {
                return Err(Error::Usage(
                    "pac-bayes bound needs --empirical, --n, --delta, --f-max, --sigma, and --theta-norm-sq".into(),
                ));
            }
        }
    }
    Ok(0)
}

/// Format with `digits` significant digits (plain decimal, no exponent).
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

// ------------------------------------------------------------- selftest

fn run_selftest() -> Result<i32> {
    let checks: &[(&str, fn() -> Result<()>)] = &[
        ("logsumexp_shift_identity", check_logsumexp_shift),
        ("dv_matches_exact_kl_at_optimal_critic", check_dv_optimal),
        ("nwj_constant_critic_value", check_nwj_constant),
        ("cpc_never_exceeds_ln_n", check_cpc_ceiling),
        ("interp_collapses_to_endpoints", check_interp_endpoints),
        ("doe_zero_init_reports_zero", check_doe_zero_init),
        ("mixture_caps_kl_at_ln_n", check_mixture_cap),
        ("tail_truncation_caps_entropy", check_tail_cap),
        ("gradients_match_finite_differences", check_gradients),
        ("training_is_deterministic", check_determinism),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok {name}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    if failures == 0 {
        println!("selftest passed ({} checks)", checks.len());
        Ok(0)
    } else {
        println!("selftest failed ({failures} of {} checks)", checks.len());
        Ok(1)
    }
}

fn fail(msg: String) -> Error {
    Error::Usage(msg)
}

fn check_logsumexp_shift() -> Result<()> {
    let xs = [0.3, -1.2, 2.4, 0.0, 1.1];
    let shifted: Vec<f64> = xs.iter().map(|x| x + 7.5).collect();
    let diff = (logsumexp(&shifted)? - logsumexp(&xs)? - 7.5).abs();
    if diff > 1e-12 {
        return Err(fail(format!("shift identity off by {diff}")));
    }
    Ok(())
}

fn check_dv_optimal() -> Result<()> {
    let p = Categorical::new(vec![0.6, 0.3, 0.1])?;
    let q = Categorical::uniform(3)?;
    let critic = optimal_dv_critic(&p, &q)?;
    let dv = population_dv(&p, &q, &critic)?;
    let kl = exact_kl(&p, &q)?;
    if (dv - kl).abs() > 1e-12 {
        return Err(fail(format!("population DV {dv} != exact KL {kl}")));
    }
    Ok(())
}

fn check_nwj_constant() -> Result<()> {
    // g = 2 on identical distributions evaluates to 2 - e
    let got = nwj_from_scores(&[2.0; 4], &[2.0; 4])?;
    let want = 2.0 - std::f64::consts::E;
    if (got - want).abs() > 1e-12 {
        return Err(fail(format!("constant critic gave {got}, want {want}")));
    }
    Ok(())
}

fn check_cpc_ceiling() -> Result<()> {
    let mut rng = RunRng::new(31);
    let cap = 16f64.ln();
    for _ in 0..20 {
        let scores = Matrix::from_shape_fn((16, 16), |_| rng.uniform() * 8.0 - 4.0);
        let est = cpc_from_score_matrix(&scores)?;
        if est > cap + 1e-12 {
            return Err(fail(format!("estimate {est} above ln 16 = {cap}")));
        }
    }
    Ok(())
}

fn check_interp_endpoints() -> Result<()> {
    let mut rng = RunRng::new(32);
    let scores = Matrix::from_shape_fn((8, 8), |_| rng.uniform() * 4.0 - 2.0);
    let marginal: Vec<f64> = (0..8).map(|_| rng.uniform() * 4.0 - 2.0).collect();
    let diagonal: Vec<f64> = (0..8).map(|i| scores[(i, i)]).collect();
    let at_cpc = interp_from_scores(&scores, &marginal, 1.0)?;
    if at_cpc.to_bits() != cpc_from_score_matrix(&scores)?.to_bits() {
        return Err(fail("alpha = 1 is not bitwise CPC".into()));
    }
    let at_nwj = interp_from_scores(&scores, &marginal, 0.0)?;
    if at_nwj.to_bits() != nwj_from_scores(&diagonal, &marginal)?.to_bits() {
        return Err(fail("alpha = 0 is not bitwise NWJ".into()));
    }
    Ok(())
}

fn check_doe_zero_init() -> Result<()> {
    let mut rng = RunRng::new(33);
    let spec = GaussianPairSpec::new(3, 0.5)?;
    let batch = Batch::sample(&spec, 8, &mut rng)?;
    for kind in [EstimatorKind::DoeGaussian, EstimatorKind::DoeLogistic] {
        let state = TrainState::new(&TrainInit::new(kind, 3), &mut rng)?;
        let est = state.estimate(&batch)?;
        if est != 0.0 {
            return Err(fail(format!("{kind} zero-init estimate is {est}, not 0")));
        }
    }
    Ok(())
}

fn check_mixture_cap() -> Result<()> {
    let mut rng = RunRng::new(34);
    for n in [2usize, 10, 100] {
        let draw = |rng: &mut RunRng| -> Result<Categorical> {
            let w: Vec<f64> = (0..12).map(|_| rng.uniform() + 1e-3).collect();
            Categorical::normalized(w)
        };
        let p = draw(&mut rng)?;
        let q = draw(&mut rng)?;
        let mixed = mix_adversarial(&q, &p, n)?;
        let kl = exact_kl(&p, &mixed)?;
        let cap = (n as f64).ln();
        if kl > cap + 1e-9 {
            return Err(fail(format!("KL {kl} above ln {n} = {cap}")));
        }
    }
    Ok(())
}

fn check_tail_cap() -> Result<()> {
    let p = Categorical::zipf(1.2, 3000)?;
    let adversary = match truncate_tail_adversary(&p, 1, 10)? {
        TailOutcome::Adversary(a) => a,
        TailOutcome::Vacuous { .. } => return Err(fail("unexpected vacuous outcome".into())),
    };
    let truncated = adversary.to_categorical()?;
    let entropy = exact_entropy(&truncated);
    let cap = adversary.entropy_ceiling();
    if entropy > cap + 1e-12 {
        return Err(fail(format!("entropy {entropy} above cap {cap}")));
    }
    if (cap - 200f64.ln()).abs() > 1e-12 {
        return Err(fail(format!("cap {cap} != ln 200")));
    }
    Ok(())
}

fn check_gradients() -> Result<()> {
    let mut rng = RunRng::new(35);
    let spec = GaussianPairSpec::new(2, 0.6)?;
    for kind in EstimatorKind::ALL {
        let mut init = TrainInit::new(kind, 2);
        init.hidden = 4;
        init.depth = 1;
        init.activation = Activation::Tanh;
        let mut state = TrainState::new(&init, &mut rng)?;
        if kind == EstimatorKind::Mine {
            // populate the denominator so the loss is differentiable in
            // the parameters alone
            let warmup = Batch::sample(&spec, 6, &mut rng)?;
            state.step(&warmup)?;
        }
        let batch = Batch::sample(&spec, 6, &mut rng)?;
        let (_, analytic) = state.loss_gradient(&batch)?;
        let params = state.params_flat();
        let numeric = finite_diff(
            |theta: &[f64]| {
                let mut probe = state.clone();
                probe.set_params_flat(theta)?;
                probe.loss(&batch)
            },
            &params,
            1e-5,
        )?;
        if !grads_close(&analytic, &numeric, 1e-4, 1e-7) {
            return Err(fail(format!("{kind}: analytic and numeric gradients differ")));
        }
    }
    Ok(())
}

fn check_determinism() -> Result<()> {
    let spec = GaussianPairSpec::new(2, 0.7)?;
    let run = || -> Result<(Vec<u64>, Vec<u64>)> {
        let mut rng = RunRng::new(36);
        let mut init = TrainInit::new(EstimatorKind::Dv, 2);
        init.hidden = 4;
        init.depth = 1;
        let mut state = TrainState::new(&init, &mut rng)?;
        let mut estimates = Vec::new();
        for _ in 0..5 {
            let batch = Batch::sample(&spec, 8, &mut rng)?;
            estimates.push(state.step(&batch)?.to_bits());
        }
        let params = state.params_flat().iter().map(|p| p.to_bits()).collect();
        Ok((estimates, params))
    };
    let a = run()?;
    let b = run()?;
    if a != b {
        return Err(fail("two identically seeded runs diverged".into()));
    }
    Ok(())
}
