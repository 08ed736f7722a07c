//! Benchmark runs, hyperparameter grids, and the Monte Carlo demos that
//! show why sample-mean lower bounds stall near `ln N`.
//!
//! * [`run_benchmark`]: train one estimator on correlated Gaussians,
//!   recording the per-step (pre-update) estimate curve.
//! * [`run_grid`]: the learning-rate grid; "tuned" means the run whose
//!   final estimate lands closest to the closed-form truth.
//! * [`run_dv_saturation`]: the DV bound evaluated at its own optimal
//!   critic still overshoots the true KL on most trials once the critic's
//!   large values live on atoms the `q` sample usually misses.
//! * [`run_kl_adversary_demo`]: mixing `p/N` into `q` caps `KL(p || q~)`
//!   at `ln N` while `N` samples of `q~` are, with probability
//!   `(1 - 1/N)^N`, distributed exactly like samples of `q`.
//! * [`run_entropy_adversary_demo`]: truncating `p`'s tail onto `k N^2`
//!   fresh atoms caps the entropy at `ln(2 k N^2)` while tail collisions
//!   (the only witness) appear in at most about `1/(2k)` of samples.
//!
//! All Monte Carlo trials derive their seed from `(master seed, demo tag,
//! trial index)` and are mapped through [`crate::exec::map_indexed`] in
//! fixed-size chunks, so results are identical sequential or parallel.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::distributions::{
    mix_adversarial, truncate_tail_adversary, Categorical, CategoricalSampler,
    GaussianPairSpec, TailOutcome,
};
use crate::estimators::{Batch, EstimatorKind, TrainInit, TrainState};
use crate::exec::map_indexed;
use crate::numerics::Activation;
use crate::oracles::{self, exact_entropy, exact_kl, optimal_dv_critic, type_statistics};
use crate::rng::{derive_seed, RunRng};
use crate::{Error, Result};

const DV_DEMO_TAG: u64 = 0x6476;
const KL_DEMO_TAG: u64 = 0x6b6c;
const ENTROPY_DEMO_TAG: u64 = 0x656e;
const TRIAL_CHUNK: usize = 256;

/// Training hyperparameters shared by every estimator kind.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub hidden: usize,
    pub depth: usize,
    pub activation: Activation,
    pub output_clip: Option<f64>,
    pub mine_ema_decay: f64,
    pub interp_alpha: f64,
    pub doe_tied_scales: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 5e-4,
            hidden: 256,
            depth: 2,
            activation: Activation::Relu,
            output_clip: None,
            mine_ema_decay: 0.9,
            interp_alpha: 0.5,
            doe_tied_scales: false,
        }
    }
}

/// Everything that determines a benchmark run (runs are pure functions of
/// this value).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchConfig {
    pub spec: GaussianPairSpec,
    pub kind: EstimatorKind,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        GaussianPairSpec::new(self.spec.d, self.spec.rho)?;
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size", "need at least 2 pairs"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "need at least one step"));
        }
        self.train_init().validate()
    }

    fn train_init(&self) -> TrainInit {
        TrainInit {
            kind: self.kind,
            dim: self.spec.d,
            hidden: self.hyper.hidden,
            depth: self.hyper.depth,
            activation: self.hyper.activation,
            output_clip: self.hyper.output_clip,
            learning_rate: self.hyper.learning_rate,
            mine_ema_decay: self.hyper.mine_ema_decay,
            interp_alpha: self.hyper.interp_alpha,
            doe_tied_scales: self.hyper.doe_tied_scales,
        }
    }
}

/// Output of one benchmark run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: BenchConfig,
    /// Pre-update estimate of each step's incoming batch.
    pub estimates: Vec<f64>,
    /// True where the step produced a non-finite estimate or state (the
    /// run resumed from the last finite parameters).
    pub flagged: Vec<bool>,
    /// Last finite per-step estimate (NaN if every step was flagged).
    pub final_estimate: f64,
    /// Closed-form mutual information of the sampling distribution.
    pub ground_truth: f64,
    /// `ln(batch_size)`, the contrastive ceiling for this run.
    pub ln_n: f64,
    pub wall_time_seconds: f64,
}

/// Train `config.kind` for `config.steps` steps.
///
/// Non-finite steps are flagged and the run resumes from the most recent
/// finite state, so a single overflow cannot destroy a long run.
pub fn run_benchmark(config: &BenchConfig) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = RunRng::new(config.seed);
    let mut state = TrainState::new(&config.train_init(), &mut rng)?;
    let mut snapshot = state.clone();
    let mut estimates = Vec::with_capacity(config.steps);
    let mut flagged = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch = Batch::sample(&config.spec, config.batch_size, &mut rng)?;
        let (estimate, bad) = match state.step(&batch) {
            Ok(est) => {
                let bad = !est.is_finite() || !state.is_finite();
                (est, bad)
            }
            Err(Error::NonFinite(_)) => (f64::NAN, true),
            Err(other) => return Err(other),
        };
        if bad {
            state = snapshot.clone();
        } else {
            snapshot = state.clone();
        }
        estimates.push(estimate);
        flagged.push(bad);
    }
    let final_estimate = estimates
        .iter()
        .rev()
        .find(|e| e.is_finite())
        .copied()
        .unwrap_or(f64::NAN);
    Ok(RunRecord {
        config: config.clone(),
        estimates,
        flagged,
        final_estimate,
        ground_truth: config.spec.mi(),
        ln_n: (config.batch_size as f64).ln(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// The default learning-rate grid.
pub fn default_learning_rates() -> Vec<f64> {
    vec![1e-4, 5e-4, 1e-3]
}

/// Default critic width. The pair-grid estimators score `n^2` candidates
/// per step, so they get a narrower critic to keep per-cell cost within
/// the single-core budget; estimates are capacity-insensitive there (the
/// CPC ceiling is `ln n` regardless of critic size).
pub fn default_hidden(kind: EstimatorKind) -> usize {
    if kind.uses_pair_grid() {
        64
    } else {
        256
    }
}

/// All runs of a learning-rate grid plus the index of the tuned one.
#[derive(Clone, Debug)]
pub struct GridResult {
    pub runs: Vec<RunRecord>,
    /// Run whose final estimate is closest to the ground truth; `None`
    /// when every run diverged.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_run(&self) -> Option<&RunRecord> {
        self.best.map(|i| &self.runs[i])
    }
}

/// Run `kind` once per learning rate in `lrs` (in parallel when enabled).
///
/// Cell seeds are `derive_seed(master_seed, kind index, cell index)`, so a
/// grid is reproducible run by run and independent across kinds.
pub fn run_grid(
    spec: GaussianPairSpec,
    kind: EstimatorKind,
    batch_size: usize,
    steps: usize,
    master_seed: u64,
    base: &Hyperparams,
    lrs: &[f64],
) -> Result<GridResult> {
    if lrs.is_empty() {
        return Err(Error::EmptyInput("run_grid learning rates"));
    }
    let kind_index = EstimatorKind::ALL
        .iter()
        .position(|&k| k == kind)
        .expect("kind is in ALL") as u64;
    let results = map_indexed(lrs.len(), |i| {
        let config = BenchConfig {
            spec,
            kind,
            batch_size,
            steps,
            seed: derive_seed(master_seed, kind_index, i as u64),
            hyper: Hyperparams {
                learning_rate: lrs[i],
                ..base.clone()
            },
        };
        run_benchmark(&config)
    });
    let runs: Vec<RunRecord> = results.into_iter().collect::<Result<_>>()?;
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.final_estimate.is_finite())
        .min_by(|(_, a), (_, b)| {
            let da = (a.final_estimate - a.ground_truth).abs();
            let db = (b.final_estimate - b.ground_truth).abs();
            da.partial_cmp(&db).expect("finite finals")
        })
        .map(|(i, _)| i);
    Ok(GridResult { runs, best })
}

/// Summary of a Monte Carlo demo: named analytic values (exact quantities
/// and bounds) next to named empirical statistics.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AdversaryReport {
    pub trials: usize,
    pub sample_size: usize,
    /// Frequency of trials carrying no witness against the adversary
    /// (demos without a purity event leave this empty).
    pub pure_frequency: Option<f64>,
    pub analytic: BTreeMap<String, f64>,
    pub statistics: BTreeMap<String, f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    sorted[pos.round() as usize]
}

/// Two-sample chi-squared statistic over parallel count vectors, pooling
/// bins with fewer than 10 pooled counts. Returns `(stat, dof)`; `dof` is
/// 0 when there is nothing to compare.
fn two_sample_chi_sq(a: &[u64], b: &[u64]) -> (f64, usize) {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return (0.0, 0);
    }
    let (mut pooled_a, mut pooled_b) = (Vec::new(), Vec::new());
    let (mut rest_a, mut rest_b) = (0u64, 0u64);
    for (&ai, &bi) in a.iter().zip(b) {
        if ai + bi >= 10 {
            pooled_a.push(ai);
            pooled_b.push(bi);
        } else {
            rest_a += ai;
            rest_b += bi;
        }
    }
    if rest_a + rest_b > 0 {
        pooled_a.push(rest_a);
        pooled_b.push(rest_b);
    }
    if pooled_a.len() < 2 {
        return (0.0, 0);
    }
    let (na, nb) = (na as f64, nb as f64);
    let mut stat = 0.0;
    for (&ai, &bi) in pooled_a.iter().zip(&pooled_b) {
        let pooled_rate = (ai + bi) as f64 / (na + nb);
        let (ea, eb) = (pooled_rate * na, pooled_rate * nb);
        if ea > 0.0 {
            stat += (ai as f64 - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            stat += (bi as f64 - eb).powi(2) / eb;
        }
    }
    (stat, pooled_a.len() - 1)
}

fn chi_sq_entries(map: &mut BTreeMap<String, f64>, stat: f64, dof: usize) {
    map.insert("chi_sq".into(), stat);
    map.insert("chi_sq_dof".into(), dof as f64);
    // mean + 4 standard deviations of a chi-squared with `dof` degrees
    map.insert(
        "chi_sq_threshold".into(),
        dof as f64 + 4.0 * (2.0 * dof as f64).sqrt(),
    );
}

fn chunked_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    map_indexed(chunks, |c| {
        let lo = c * TRIAL_CHUNK;
        let hi = (lo + TRIAL_CHUNK).min(trials);
        f(lo..hi)
    })
}

/// Evaluate the empirical DV bound at the *optimal* critic `ln(p/q)` over
/// repeated sample pairs. When the critic's largest values sit on atoms
/// that `q` rarely emits, most trials miss them and the empirical bound
/// exceeds the true KL: a valid-looking value that is not a lower bound.
pub fn run_dv_saturation(
    p: &Categorical,
    q: &Categorical,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<AdversaryReport> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("trials", "need n >= 1 and trials >= 1"));
    }
    let critic = optimal_dv_critic(p, q)?;
    let kl = exact_kl(p, q)?;
    let f_max = critic.iter().copied().fold(0.0f64, f64::max);
    let p_sampler = p.sampler();
    let q_sampler = q.sampler();
    let estimate_chunks = chunked_trials(trials, |range| {
        let mut out = Vec::with_capacity(range.len());
        for t in range {
            let mut rng = RunRng::new(derive_seed(seed, DV_DEMO_TAG, t as u64));
            let ps: Vec<f64> = (0..n).map(|_| critic[p_sampler.draw(&mut rng)]).collect();
            let qs: Vec<f64> = (0..n).map(|_| critic[q_sampler.draw(&mut rng)]).collect();
            out.push(dv_from_scores(&ps, &qs));
        }
        out
    });
    let mut estimates = Vec::with_capacity(trials);
    for chunk in estimate_chunks {
        estimates.extend(chunk);
    }
    let overshoot =
        estimates.iter().filter(|&&e| e > kl).count() as f64 / trials as f64;
    let mut sorted = estimates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let mut analytic = BTreeMap::new();
    analytic.insert("exact_kl".into(), kl);
    analytic.insert("ln_n".into(), (n as f64).ln());
    analytic.insert("f_max".into(), f_max);
    analytic.insert(
        "chernoff_radius_delta_05".into(),
        oracles::chernoff_radius(n, 0.05, f_max.max(f64::MIN_POSITIVE))?,
    );
    // probability that n draws of q all miss the atom where the critic
    // peaks, the regime where the second DV term collapses
    let peak = critic
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite critic"))
        .map(|(i, _)| i)
        .expect("non-empty critic");
    let phi = q.probs()[peak];
    analytic.insert("peak_atom_miss_prob".into(), (1.0 - phi).powi(n as i32));
    let mut statistics = BTreeMap::new();
    statistics.insert("overshoot_frequency".into(), overshoot);
    statistics.insert(
        "mean".into(),
        crate::numerics::mean(&estimates)?,
    );
    statistics.insert("median".into(), quantile(&sorted, 0.5));
    statistics.insert("q10".into(), quantile(&sorted, 0.1));
    statistics.insert("q90".into(), quantile(&sorted, 0.9));
    Ok(AdversaryReport {
        trials,
        sample_size: n,
        pure_frequency: None,
        analytic,
        statistics,
    })
}

fn dv_from_scores(joint: &[f64], marginal: &[f64]) -> f64 {
    crate::estimators::dv_from_scores(joint, marginal).expect("non-empty scores")
}

struct KlChunk {
    pure: u64,
    hist_mixture: Vec<u64>,
    hist_reference: Vec<u64>,
}

/// Sample the mixture `q~ = (1 - 1/n) q + (1/n) p` by drawing `n` items
/// per trial; a trial is pure when no draw took the `p` branch.
///
/// Pure trials are distributed exactly like `q^n` (verified against fresh
/// reference draws of `q` with a chi-squared statistic), pure trials occur
/// with probability exactly `(1 - 1/n)^n >= 1/4`, and yet
/// `KL(p || q~) <= ln n`.
pub fn run_kl_adversary_demo(
    p: &Categorical,
    q: &Categorical,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<AdversaryReport> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("trials", "need n >= 1 and trials >= 1"));
    }
    let mixture = mix_adversarial(q, p, n)?;
    let kl_capped = exact_kl(p, &mixture)?;
    let p_sampler = p.sampler();
    let q_sampler = q.sampler();
    let w = 1.0 / n as f64;
    let m = p.len();
    let chunks = chunked_trials(trials, |range| {
        let mut acc = KlChunk {
            pure: 0,
            hist_mixture: vec![0; m],
            hist_reference: vec![0; m],
        };
        for t in range {
            let mut rng = RunRng::new(derive_seed(seed, KL_DEMO_TAG, t as u64));
            let mut sample = Vec::with_capacity(n);
            let mut pure = true;
            for _ in 0..n {
                let from_p = rng.bernoulli(w);
                pure &= !from_p;
                let sampler: &CategoricalSampler =
                    if from_p { &p_sampler } else { &q_sampler };
                sample.push(sampler.draw(&mut rng));
            }
            let reference: Vec<usize> = (0..n).map(|_| q_sampler.draw(&mut rng)).collect();
            if pure {
                acc.pure += 1;
                for &a in &sample {
                    acc.hist_mixture[a] += 1;
                }
                for &a in &reference {
                    acc.hist_reference[a] += 1;
                }
            }
        }
        acc
    });
    let mut pure_count = 0u64;
    let mut hist_mixture = vec![0u64; m];
    let mut hist_reference = vec![0u64; m];
    for c in chunks {
        pure_count += c.pure;
        for i in 0..m {
            hist_mixture[i] += c.hist_mixture[i];
            hist_reference[i] += c.hist_reference[i];
        }
    }
    let pure_frequency = pure_count as f64 / trials as f64;
    let (stat, dof) = two_sample_chi_sq(&hist_mixture, &hist_reference);
    let mut analytic = BTreeMap::new();
    analytic.insert("kl_capped".into(), kl_capped);
    analytic.insert("ln_n".into(), (n as f64).ln());
    analytic.insert("pure_prob".into(), (1.0 - w).powi(n as i32));
    analytic.insert("pure_prob_floor".into(), 0.25);
    if let Ok(kl_original) = exact_kl(p, q) {
        analytic.insert("kl_original".into(), kl_original);
    }
    let mut statistics = BTreeMap::new();
    chi_sq_entries(&mut statistics, stat, dof);
    Ok(AdversaryReport {
        trials,
        sample_size: n,
        pure_frequency: Some(pure_frequency),
        analytic,
        statistics,
    })
}

/// Outcome of the entropy demo; the adversary only exists when the support
/// is larger than the head.
#[derive(Clone, Debug, serde::Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EntropyDemoOutcome {
    /// `p` has at most `k n^2` atoms, so `H(p) <= ln(k n^2)` already.
    Vacuous {
        support: usize,
        entropy: f64,
        ceiling: f64,
    },
    Adversarial { report: AdversaryReport },
}

struct EntropyChunk {
    pure_truncated: u64,
    pure_original: u64,
    profile_truncated: BTreeMap<usize, u64>,
    profile_original: BTreeMap<usize, u64>,
}

/// Compare samples of `p` against samples of the tail-truncated `p~`.
///
/// Per trial, draw `n` atoms from each; a draw is pure when no atom
/// outside the head (sorted index `>= k n^2`) repeats. Head draws have
/// identical law under both distributions (checked with a chi-squared on
/// multiplicity profiles), purity holds with probability at least about
/// `e^(-0.505 / k)` for both, yet `H(p~) <= ln(2 k n^2)`.
pub fn run_entropy_adversary_demo(
    p: &Categorical,
    k: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<EntropyDemoOutcome> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let sorted = p.sorted_desc();
    let adversary = match truncate_tail_adversary(&sorted, k, n)? {
        TailOutcome::Vacuous { support, ceiling } => {
            return Ok(EntropyDemoOutcome::Vacuous {
                support,
                entropy: exact_entropy(&sorted),
                ceiling,
            })
        }
        TailOutcome::Adversary(a) => a,
    };
    let truncated = adversary.to_categorical()?;
    let head = adversary.head_size();
    let sorted_sampler = sorted.sampler();
    let truncated_sampler = truncated.sampler();
    let run_one = |sampler: &CategoricalSampler,
                   rng: &mut RunRng,
                   profile: &mut BTreeMap<usize, u64>|
     -> bool {
        let sample: Vec<usize> = (0..n).map(|_| sampler.draw(rng)).collect();
        let mut tail: Vec<usize> = sample.iter().copied().filter(|&a| a >= head).collect();
        tail.sort_unstable();
        let pure = tail.windows(2).all(|w| w[0] != w[1]);
        let stats = type_statistics(sample.into_iter().filter(|&a| a < head));
        for (&multiplicity, &atoms) in stats.profile() {
            *profile.entry(multiplicity).or_insert(0) += atoms as u64;
        }
        pure
    };
    let chunks = chunked_trials(trials, |range| {
        let mut acc = EntropyChunk {
            pure_truncated: 0,
            pure_original: 0,
            profile_truncated: BTreeMap::new(),
            profile_original: BTreeMap::new(),
        };
        for t in range {
            let mut rng = RunRng::new(derive_seed(seed, ENTROPY_DEMO_TAG, t as u64));
            if run_one(&truncated_sampler, &mut rng, &mut acc.profile_truncated) {
                acc.pure_truncated += 1;
            }
            if run_one(&sorted_sampler, &mut rng, &mut acc.profile_original) {
                acc.pure_original += 1;
            }
        }
        acc
    });
    let mut pure_truncated = 0u64;
    let mut pure_original = 0u64;
    let mut profile_truncated: BTreeMap<usize, u64> = BTreeMap::new();
    let mut profile_original: BTreeMap<usize, u64> = BTreeMap::new();
    for c in chunks {
        pure_truncated += c.pure_truncated;
        pure_original += c.pure_original;
        for (m, v) in c.profile_truncated {
            *profile_truncated.entry(m).or_insert(0) += v;
        }
        for (m, v) in c.profile_original {
            *profile_original.entry(m).or_insert(0) += v;
        }
    }
    // align the two profiles on a common multiplicity axis
    let max_mult = profile_truncated
        .keys()
        .chain(profile_original.keys())
        .copied()
        .max()
        .unwrap_or(0);
    let to_vec = |m: &BTreeMap<usize, u64>| -> Vec<u64> {
        (1..=max_mult).map(|i| m.get(&i).copied().unwrap_or(0)).collect()
    };
    let (stat, dof) = two_sample_chi_sq(&to_vec(&profile_truncated), &to_vec(&profile_original));
    let mut analytic = BTreeMap::new();
    analytic.insert("entropy_original".into(), exact_entropy(&sorted));
    analytic.insert("entropy_truncated".into(), exact_entropy(&truncated));
    analytic.insert("entropy_cap".into(), adversary.entropy_ceiling());
    analytic.insert("head_size".into(), head as f64);
    analytic.insert("tail_mass".into(), adversary.tail_mass());
    analytic.insert("pure_bound_exp".into(), (-0.505 / k as f64).exp());
    analytic.insert("pure_bound_linear".into(), 1.0 - 0.505 / k as f64);
    let mut statistics = BTreeMap::new();
    statistics.insert(
        "pure_frequency_original".into(),
        pure_original as f64 / trials as f64,
    );
    chi_sq_entries(&mut statistics, stat, dof);
    Ok(EntropyDemoOutcome::Adversarial {
        report: AdversaryReport {
            trials,
            sample_size: n,
            pure_frequency: Some(pure_truncated as f64 / trials as f64),
            analytic,
            statistics,
        },
    })
}
