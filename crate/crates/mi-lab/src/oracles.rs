//! Exact reference quantities on finite supports plus closed-form bounds:
//! KL divergence, entropy, mutual information (two independent routes),
//! the optimal DV critic, population values of the variational bounds,
//! histogram MI, multiplicity profiles, outlier risk, the sample-size
//! ceilings, and Chernoff / PAC-Bayes confidence bounds.
//!
//! Estimators are validated against this module, never the other way
//! around; nothing here touches a neural network.

use std::collections::BTreeMap;

use crate::distributions::Categorical;
use crate::numerics::{logsumexp, stable_sum, Matrix};
use crate::rng::RunRng;
use crate::{Error, Result};

/// `KL(p || q)` in nats. Errors with [`Error::InfiniteDivergence`] when
/// `q` is zero on an atom `p` gives positive mass.
pub fn exact_kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let mut terms = Vec::with_capacity(p.len());
    for (atom, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { atom, p: pi });
        }
        terms.push(pi * (pi / qi).ln());
    }
    Ok(stable_sum(terms.into_iter()))
}

/// Shannon entropy `-sum p ln p` in nats (`0 ln 0 = 0`).
pub fn exact_entropy(p: &Categorical) -> f64 {
    stable_sum(
        p.probs()
            .iter()
            .filter(|&&pi| pi > 0.0)
            .map(|&pi| -pi * pi.ln()),
    )
}

fn validate_joint(joint: &Matrix) -> Result<()> {
    if joint.nrows() == 0 || joint.ncols() == 0 {
        return Err(Error::EmptyInput("exact_mi joint"));
    }
    if joint.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("joint", "entries must be finite and >= 0"));
    }
    let total = stable_sum(joint.iter().copied());
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "joint",
            format!("joint mass sums to {total}, not 1"),
        ));
    }
    Ok(())
}

fn marginals(joint: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let px: Vec<f64> = (0..joint.nrows())
        .map(|i| stable_sum(joint.row(i).iter().copied()))
        .collect();
    let py: Vec<f64> = (0..joint.ncols())
        .map(|j| stable_sum(joint.column(j).iter().copied()))
        .collect();
    (px, py)
}

/// MI as `KL(joint || product of marginals)`.
pub fn exact_mi_kl_form(joint: &Matrix) -> Result<f64> {
    validate_joint(joint)?;
    let (px, py) = marginals(joint);
    let mut terms = Vec::with_capacity(joint.len());
    for i in 0..joint.nrows() {
        for j in 0..joint.ncols() {
            let pij = joint[(i, j)];
            if pij > 0.0 {
                terms.push(pij * (pij / (px[i] * py[j])).ln());
            }
        }
    }
    Ok(stable_sum(terms.into_iter()))
}

/// MI as `H(X) - H(X | Y)`.
pub fn exact_mi_entropy_form(joint: &Matrix) -> Result<f64> {
    validate_joint(joint)?;
    let (px, py) = marginals(joint);
    let hx = stable_sum(px.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()));
    let mut cond_terms = Vec::with_capacity(joint.len());
    for j in 0..joint.ncols() {
        if py[j] == 0.0 {
            continue;
        }
        for i in 0..joint.nrows() {
            let pij = joint[(i, j)];
            if pij > 0.0 {
                // p(y) * H(X | Y = y) accumulated term by term
                cond_terms.push(-pij * (pij / py[j]).ln());
            }
        }
    }
    Ok(hx - stable_sum(cond_terms.into_iter()))
}

/// Exact mutual information of a finite joint distribution (rows = X,
/// columns = Y), computed through two independent routes that must agree
/// to 1e-12.
pub fn exact_mi(joint: &Matrix) -> Result<f64> {
    let kl_form = exact_mi_kl_form(joint)?;
    let ent_form = exact_mi_entropy_form(joint)?;
    assert!(
        (kl_form - ent_form).abs() <= 1e-12,
        "MI routes disagree: {kl_form} vs {ent_form}"
    );
    Ok(kl_form)
}

/// The critic achieving the DV supremum: `ln(p/q)` shifted so its minimum
/// is zero (the bound is invariant under constant shifts). Requires
/// strictly positive `p`.
pub fn optimal_dv_critic(p: &Categorical, q: &Categorical) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let mut f = Vec::with_capacity(p.len());
    for (atom, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            return Err(Error::invalid(
                "p",
                format!("optimal critic needs p > 0 everywhere, atom {atom} is 0"),
            ));
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { atom, p: pi });
        }
        f.push((pi / qi).ln());
    }
    let min = f.iter().copied().fold(f64::INFINITY, f64::min);
    for v in &mut f {
        *v -= min;
    }
    Ok(f)
}

/// Population DV bound `E_p[f] - ln E_q[e^f]`; equals `KL(p || q)` at the
/// optimal critic and is below it for every other `f`.
pub fn population_dv(p: &Categorical, q: &Categorical, f: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    if f.len() != p.len() {
        return Err(Error::DimensionMismatch {
            context: "population_dv critic",
            expected: p.len(),
            got: f.len(),
        });
    }
    let mean_p = stable_sum(
        p.probs()
            .iter()
            .zip(f)
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, &fi)| pi * fi),
    );
    let log_terms: Vec<f64> = q
        .probs()
        .iter()
        .zip(f)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &fi)| fi + qi.ln())
        .collect();
    Ok(mean_p - logsumexp(&log_terms)?)
}

/// Population NWJ bound `E_p[g] - E_q[e^(g-1)]`; equals `KL(p || q)` at
/// `g = 1 + ln(p/q)`.
pub fn population_nwj(p: &Categorical, q: &Categorical, g: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    if g.len() != p.len() {
        return Err(Error::DimensionMismatch {
            context: "population_nwj critic",
            expected: p.len(),
            got: g.len(),
        });
    }
    let mean_p = stable_sum(
        p.probs()
            .iter()
            .zip(g)
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, &gi)| pi * gi),
    );
    let log_terms: Vec<f64> = q
        .probs()
        .iter()
        .zip(g)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &gi)| gi - 1.0 + qi.ln())
        .collect();
    Ok(mean_p - logsumexp(&log_terms)?.exp())
}

/// Bin edges for a 1-D histogram; values fall into `edges.len() + 1` bins.
#[derive(Clone, Debug)]
pub struct BinningSpec {
    edges: Vec<f64>,
}

impl BinningSpec {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyInput("BinningSpec edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("edges", "edges must be finite"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("edges", "edges must be strictly increasing"));
        }
        Ok(BinningSpec { edges })
    }

    /// `bins - 1` equally spaced interior edges over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("bins", "need at least 2 bins"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("bins", "need finite lo < hi"));
        }
        let w = (hi - lo) / bins as f64;
        BinningSpec::from_edges((1..bins).map(|i| lo + i as f64 * w).collect())
    }

    /// Edges at the empirical quantiles of `samples`, so each bin holds
    /// roughly `1 / bins` of the data. Duplicate quantiles (heavy ties)
    /// are collapsed.
    pub fn equal_mass(samples: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("bins", "need at least 2 bins"));
        }
        if samples.len() < bins {
            return Err(Error::invalid(
                "samples",
                format!("need at least {bins} samples, got {}", samples.len()),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", "samples must be finite"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut edges = Vec::with_capacity(bins - 1);
        for i in 1..bins {
            let rank = i * sorted.len() / bins;
            let e = sorted[rank];
            if edges.last().map_or(true, |&last| e > last) {
                edges.push(e);
            }
        }
        if edges.is_empty() {
            return Err(Error::invalid(
                "samples",
                "too many ties for equal-mass binning",
            ));
        }
        BinningSpec::from_edges(edges)
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Index of the bin containing `v`; edges belong to the bin above.
    pub fn bin_of(&self, v: f64) -> usize {
        self.edges.partition_point(|&e| e <= v)
    }
}

/// Plug-in MI of the 2-D histogram of `(xs, ys)` (no bias correction).
pub fn binning_mi(
    xs: &[f64],
    ys: &[f64],
    x_bins: &BinningSpec,
    y_bins: &BinningSpec,
) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "binning_mi",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput("binning_mi"));
    }
    let mut counts = Matrix::zeros((x_bins.bin_count(), y_bins.bin_count()));
    for (&x, &y) in xs.iter().zip(ys) {
        counts[(x_bins.bin_of(x), y_bins.bin_of(y))] += 1.0;
    }
    counts /= xs.len() as f64;
    exact_mi(&counts)
}

/// Multiplicity profile of a sample: how many atoms appeared exactly `m`
/// times, for each multiplicity `m`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeStatistics {
    profile: BTreeMap<usize, usize>,
    sample_size: usize,
}

/// Build the [`TypeStatistics`] of a sample of atoms.
pub fn type_statistics<I: IntoIterator<Item = usize>>(sample: I) -> TypeStatistics {
    let mut per_atom: std::collections::HashMap<usize, usize> = Default::default();
    let mut sample_size = 0;
    for atom in sample {
        *per_atom.entry(atom).or_insert(0) += 1;
        sample_size += 1;
    }
    let mut profile = BTreeMap::new();
    for (_, count) in per_atom {
        *profile.entry(count).or_insert(0) += 1;
    }
    TypeStatistics {
        profile,
        sample_size,
    }
}

impl TypeStatistics {
    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn distinct_atoms(&self) -> usize {
        self.profile.values().sum()
    }

    /// Number of atoms that appeared exactly `multiplicity` times.
    pub fn count_of(&self, multiplicity: usize) -> usize {
        self.profile.get(&multiplicity).copied().unwrap_or(0)
    }

    pub fn has_repeats(&self) -> bool {
        self.profile.keys().any(|&m| m >= 2)
    }

    pub fn profile(&self) -> &BTreeMap<usize, usize> {
        &self.profile
    }
}

/// Probability that `n` i.i.d. draws all miss an event of probability
/// `phi`, `(1 - phi)^n`, optionally verified by Monte Carlo. For
/// `phi <= 1/n` and `n >= 2` the analytic value is at least 1/4: rare
/// outliers that dominate an expectation are likely absent from a sample.
#[derive(Clone, Copy, Debug)]
pub struct OutlierRisk {
    pub analytic: f64,
    pub empirical: Option<f64>,
}

pub fn outlier_no_hit_prob(
    n: usize,
    phi: f64,
    monte_carlo: Option<(usize, &mut RunRng)>,
) -> Result<OutlierRisk> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be positive"));
    }
    if !(0.0..=1.0).contains(&phi) || !phi.is_finite() {
        return Err(Error::invalid("phi", "need 0 <= phi <= 1"));
    }
    let analytic = (1.0 - phi).powi(n.try_into().map_err(|_| {
        Error::invalid("n", "sample count too large")
    })?);
    let empirical = match monte_carlo {
        None => None,
        Some((trials, rng)) => {
            if trials == 0 {
                return Err(Error::invalid("trials", "need at least one trial"));
            }
            let mut misses = 0usize;
            for _ in 0..trials {
                let hit = (0..n).any(|_| rng.bernoulli(phi));
                if !hit {
                    misses += 1;
                }
            }
            Some(misses as f64 / trials as f64)
        }
    };
    Ok(OutlierRisk {
        analytic,
        empirical,
    })
}

/// The sample-size ceilings: no distribution-free high-confidence lower
/// bound built from `n` samples can certify more than about these values.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Ceilings {
    /// `ln n`: cap for empirical-mean contrastive bounds.
    pub ln_n: f64,
    /// `2 ln n + 5`: cap for any high-confidence KL/MI lower bound.
    pub mi_lower_bound_cap: f64,
    /// `ln(2 k n^2)`: cap certified entropy must beat to rule out the
    /// tail-truncation adversary (present when `k` is given).
    pub entropy_cap: Option<f64>,
}

pub fn ceilings(n: usize, k: Option<usize>) -> Result<Ceilings> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be positive"));
    }
    if k == Some(0) {
        return Err(Error::invalid("k", "slack factor must be positive"));
    }
    let ln_n = (n as f64).ln();
    Ok(Ceilings {
        ln_n,
        mi_lower_bound_cap: 2.0 * ln_n + 5.0,
        entropy_cap: k.map(|k| (2.0 * k as f64 * (n as f64) * (n as f64)).ln()),
    })
}

fn validate_tail(n: usize, delta: f64, f_max: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "need 0 < delta < 1"));
    }
    if !(f_max > 0.0) || !f_max.is_finite() {
        return Err(Error::invalid("f_max", "critic bound must be positive"));
    }
    Ok(())
}

/// Half-width of the two-sided Chernoff interval for the mean of a
/// statistic bounded by `f_max`: `f_max * sqrt(ln(2 / delta) / (2 n))`.
pub fn chernoff_radius(n: usize, delta: f64, f_max: f64) -> Result<f64> {
    validate_tail(n, delta, f_max)?;
    Ok(f_max * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Two-sided confidence interval around an empirical mean.
pub fn chernoff_interval(
    empirical_mean: f64,
    n: usize,
    delta: f64,
    f_max: f64,
) -> Result<(f64, f64)> {
    let r = chernoff_radius(n, delta, f_max)?;
    Ok((empirical_mean - r, empirical_mean + r))
}

/// `2 lambda / (2 lambda - 1)`, the PAC-Bayes inflation factor; exactly
/// `10/9` at `lambda = 5`. Requires `lambda > 1/2`.
pub fn pac_bayes_prefactor(lambda: f64) -> Result<f64> {
    if !(lambda > 0.5) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "need lambda > 1/2"));
    }
    Ok(2.0 * lambda / (2.0 * lambda - 1.0))
}

/// High-probability upper bound on a population mean from its empirical
/// value, for critics with parameters `theta` under a Gaussian prior of
/// scale `sigma`:
///
/// `prefactor * (empirical + (lambda f_max / n) (||theta||^2 / (2 sigma^2) + ln(1/delta)))`.
pub fn pac_bayes_bound(
    empirical_mean: f64,
    n: usize,
    delta: f64,
    f_max: f64,
    lambda: f64,
    sigma: f64,
    theta_norm_sq: f64,
) -> Result<f64> {
    validate_tail(n, delta, f_max)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "prior scale must be positive"));
    }
    if !(theta_norm_sq >= 0.0) || !theta_norm_sq.is_finite() {
        return Err(Error::invalid("theta_norm_sq", "need a finite norm"));
    }
    let prefactor = pac_bayes_prefactor(lambda)?;
    let complexity = theta_norm_sq / (2.0 * sigma * sigma) + (1.0 / delta).ln();
    Ok(prefactor * (empirical_mean + lambda * f_max / n as f64 * complexity))
}
