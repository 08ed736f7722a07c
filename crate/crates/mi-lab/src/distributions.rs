//! Sampling distributions: correlated Gaussian pairs, finite categoricals,
//! parametric density models for the entropy-difference estimator, and the
//! two adversarial constructions used by the demos.
//!
//! The adversarial constructions are the heart of the demos:
//!
//! * [`mix_adversarial`] blends a dash of `p` into `q`, capping `KL(p || q~)`
//!   at `ln N` while `q~` stays indistinguishable from `q` on N samples.
//! * [`truncate_tail_adversary`] moves the tail mass of a sorted `p` onto
//!   `k N^2` fresh atoms, capping the entropy at `ln(2 k N^2)` while staying
//!   indistinguishable from `p` on N samples (tail collisions are rare).

use crate::numerics::{stable_sum, Matrix};
use crate::rng::RunRng;
use crate::{Error, Result};

/// A pair `(x, y)` of `d`-dimensional Gaussians with per-coordinate
/// correlation `rho`: `y = rho * x + sqrt(1 - rho^2) * noise`.
///
/// The exact mutual information is `-(d/2) ln(1 - rho^2)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianPairSpec {
    pub d: usize,
    pub rho: f64,
}

impl GaussianPairSpec {
    pub fn new(d: usize, rho: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be positive"));
        }
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(Error::invalid("rho", format!("need |rho| < 1, got {rho}")));
        }
        Ok(GaussianPairSpec { d, rho })
    }

    /// Exact mutual information in nats.
    pub fn mi(&self) -> f64 {
        -(self.d as f64 / 2.0) * (1.0 - self.rho * self.rho).ln()
    }

    /// Draw `n` correlated pairs; rows are samples.
    ///
    /// Stream layout: the `n * d` entries of `x` are drawn first, then the
    /// `n * d` noise entries, so consumers can reproduce a batch from the
    /// seed alone.
    pub fn sample(&self, n: usize, rng: &mut RunRng) -> (Matrix, Matrix) {
        let mut x = Matrix::zeros((n, self.d));
        rng.fill_normal(x.as_slice_mut().expect("row-major"));
        let mut y = Matrix::zeros((n, self.d));
        rng.fill_normal(y.as_slice_mut().expect("row-major"));
        let s = (1.0 - self.rho * self.rho).sqrt();
        y.zip_mut_with(&x, |e, &xv| *e = self.rho * xv + s * *e);
        (x, y)
    }
}

/// A finite distribution over atoms `0..len`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

const NORMALISATION_TOL: f64 = 1e-9;

impl Categorical {
    /// Strictly positive probabilities summing to 1 (within `1e-9`).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probs", "entries must be finite and > 0"));
        }
        Categorical::with_zeros(probs)
    }

    /// Like [`Categorical::new`] but atoms of probability zero are allowed.
    pub fn with_zeros(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("Categorical"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probs", "entries must be finite and >= 0"));
        }
        let total = stable_sum(probs.iter().copied());
        if (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::invalid(
                "probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(Categorical { probs })
    }

    /// Normalise arbitrary non-negative weights.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("Categorical"));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights", "entries must be finite and >= 0"));
        }
        let total = stable_sum(weights.iter().copied());
        if !(total > 0.0) {
            return Err(Error::invalid("weights", "total weight must be positive"));
        }
        Ok(Categorical {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput("Categorical"));
        }
        Ok(Categorical {
            probs: vec![1.0 / len as f64; len],
        })
    }

    /// Zipf law with exponent `s`: `p_i` proportional to `(i + 1)^-s`.
    pub fn zipf(s: f64, len: usize) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid("s", "Zipf exponent must be positive"));
        }
        Categorical::normalized((1..=len).map(|i| (i as f64).powf(-s)).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, atom: usize) -> f64 {
        self.probs[atom]
    }

    /// Atoms reordered by descending probability (ties keep index order).
    pub fn sorted_desc(&self) -> Categorical {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .expect("finite probs")
                .then(a.cmp(&b))
        });
        Categorical {
            probs: idx.into_iter().map(|i| self.probs[i]).collect(),
        }
    }

    /// Precompute the CDF for repeated draws.
    pub fn sampler(&self) -> CategoricalSampler {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut sum = 0.0;
        let mut comp = 0.0;
        for &p in &self.probs {
            let t = sum + p;
            if sum.abs() >= p.abs() {
                comp += (sum - t) + p;
            } else {
                comp += (p - t) + sum;
            }
            sum = t;
            cdf.push(sum + comp);
        }
        CategoricalSampler { cdf }
    }

    /// Draw `n` atoms along with their log-probabilities.
    pub fn sample_with_logprob(&self, n: usize, rng: &mut RunRng) -> (Vec<usize>, Vec<f64>) {
        let sampler = self.sampler();
        let mut atoms = Vec::with_capacity(n);
        let mut logps = Vec::with_capacity(n);
        for _ in 0..n {
            let a = sampler.draw(rng);
            atoms.push(a);
            logps.push(self.probs[a].ln());
        }
        (atoms, logps)
    }
}

/// CDF table for O(log m) categorical draws.
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn draw(&self, rng: &mut RunRng) -> usize {
        let u = rng.uniform();
        // smallest index with cdf > u; zero-probability atoms repeat the
        // previous cdf value, so the strict comparison skips them
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1)
    }
}

/// `q~ = (1 - 1/n) q + (1/n) p`, the mixture that no test on `n` samples
/// can tell from `q`, yet `KL(p || q~) <= ln n`.
pub fn mix_adversarial(q: &Categorical, p: &Categorical, n: usize) -> Result<Categorical> {
    if q.len() != p.len() {
        return Err(Error::SupportMismatch(q.len(), p.len()));
    }
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be positive"));
    }
    let w = 1.0 / n as f64;
    let probs = q
        .probs
        .iter()
        .zip(&p.probs)
        .map(|(&qi, &pi)| (1.0 - w) * qi + w * pi)
        .collect();
    Categorical::with_zeros(probs)
}

/// Result of [`truncate_tail_adversary`]: either a tail-truncated
/// distribution or a report that the entropy cap cannot bite.
#[derive(Clone, Debug)]
pub enum TailOutcome {
    Adversary(TailAdversary),
    /// The support already fits inside the head: `H(p) <= ln(support)
    /// <= ln(k n^2)`, so the cap holds for `p` itself.
    Vacuous { support: usize, ceiling: f64 },
}

/// `p~`: the head keeps the top `k n^2` probabilities of `p` exactly; the
/// remaining mass is spread uniformly over `k n^2` fresh atoms appended
/// after the head.
///
/// Head draws from `p~` have the same law as head draws from the sorted
/// `p`, and a sample of size `n` collides on the fresh atoms with
/// probability at most about `1/(2k)`, so the two distributions are
/// practically indistinguishable at sample size `n` even though
/// `H(p~) <= ln(2 k n^2)`.
#[derive(Clone, Debug)]
pub struct TailAdversary {
    head: Vec<f64>,
    tail_mass: f64,
    k: usize,
    n: usize,
}

/// Build the tail-truncation adversary for sample size `n` and slack `k`.
///
/// `p` is sorted internally; compare sampled atoms against the sorted
/// distribution ([`Categorical::sorted_desc`]).
pub fn truncate_tail_adversary(p: &Categorical, k: usize, n: usize) -> Result<TailOutcome> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("k", "need k >= 1 and n >= 1"));
    }
    let head_size = k
        .checked_mul(n)
        .and_then(|kn| kn.checked_mul(n))
        .ok_or_else(|| Error::invalid("k", "k * n^2 overflows"))?;
    let sorted = p.sorted_desc();
    if sorted.len() <= head_size {
        return Ok(TailOutcome::Vacuous {
            support: sorted.len(),
            ceiling: (head_size as f64).ln(),
        });
    }
    let head: Vec<f64> = sorted.probs()[..head_size].to_vec();
    let head_mass = stable_sum(head.iter().copied());
    let tail_mass = (1.0 - head_mass).max(0.0);
    Ok(TailOutcome::Adversary(TailAdversary {
        head,
        tail_mass,
        k,
        n,
    }))
}

impl TailAdversary {
    /// Number of head atoms, `k n^2`.
    pub fn head_size(&self) -> usize {
        self.head.len()
    }

    /// Total support of `p~`, `2 k n^2`.
    pub fn support_size(&self) -> usize {
        2 * self.head.len()
    }

    /// Mass moved onto the fresh atoms.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Probability of each individual fresh atom.
    pub fn fresh_atom_prob(&self) -> f64 {
        self.tail_mass / self.head.len() as f64
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// Entropy ceiling `ln(2 k n^2)` implied by the support size.
    pub fn entropy_ceiling(&self) -> f64 {
        (self.support_size() as f64).ln()
    }

    /// Materialise `p~` as a categorical: head atoms first (identical to
    /// the sorted head of `p`), then the fresh atoms.
    pub fn to_categorical(&self) -> Result<Categorical> {
        let fresh = self.fresh_atom_prob();
        let mut probs = Vec::with_capacity(self.support_size());
        probs.extend_from_slice(&self.head);
        probs.extend(std::iter::repeat(fresh).take(self.head.len()));
        Categorical::with_zeros(probs)
    }
}

/// Density model family for the entropy-difference estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFamily {
    Gaussian,
    Logistic,
}

/// A product density over `dim` coordinates with per-dimension location
/// and scale. Unconditional models have a free location `b_i`; conditional
/// models locate dimension `i` at `a_i * y_i + b_i`. Scales are
/// `exp(log_scale)`, shared across dimensions when `tied`.
///
/// Flat parameter order: `b` (dim), then `a` (dim, conditional only), then
/// `log_scale` (1 if tied else dim). Zero-initialised, so a fresh
/// conditional model ignores `y` and two fresh models agree everywhere.
#[derive(Clone, Debug)]
pub struct DensityModel {
    family: DensityFamily,
    dim: usize,
    tied: bool,
    b: Vec<f64>,
    a: Option<Vec<f64>>,
    log_scale: Vec<f64>,
}

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl DensityModel {
    pub fn unconditional(family: DensityFamily, dim: usize, tied: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        Ok(DensityModel {
            family,
            dim,
            tied,
            b: vec![0.0; dim],
            a: None,
            log_scale: vec![0.0; if tied { 1 } else { dim }],
        })
    }

    pub fn conditional(family: DensityFamily, dim: usize, tied: bool) -> Result<Self> {
        let mut m = DensityModel::unconditional(family, dim, tied)?;
        m.a = Some(vec![0.0; dim]);
        Ok(m)
    }

    pub fn family(&self) -> DensityFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_conditional(&self) -> bool {
        self.a.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.dim + if self.a.is_some() { self.dim } else { 0 } + self.log_scale.len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.b);
        if let Some(a) = &self.a {
            out.extend_from_slice(a);
        }
        out.extend_from_slice(&self.log_scale);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "DensityModel::set_params_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let (b, rest) = flat.split_at(self.dim);
        self.b.copy_from_slice(b);
        let rest = if let Some(a) = &mut self.a {
            let (av, rest) = rest.split_at(self.dim);
            a.copy_from_slice(av);
            rest
        } else {
            rest
        };
        self.log_scale.copy_from_slice(rest);
        Ok(())
    }

    fn log_scale_of(&self, dim_index: usize) -> f64 {
        if self.tied {
            self.log_scale[0]
        } else {
            self.log_scale[dim_index]
        }
    }

    fn location(&self, i: usize, y: Option<&[f64]>) -> f64 {
        match (&self.a, y) {
            (Some(a), Some(y)) => a[i] * y[i] + self.b[i],
            _ => self.b[i],
        }
    }

    /// Log density of one observation `x` (given `y` for conditionals).
    pub fn log_density(&self, x: &[f64], y: Option<&[f64]>) -> Result<f64> {
        self.check_row(x, y)?;
        let mut terms = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let ls = self.log_scale_of(i);
            let s = ls.exp();
            let z = (x[i] - self.location(i, y)) / s;
            terms.push(match self.family {
                DensityFamily::Gaussian => -HALF_LN_TWO_PI - ls - 0.5 * z * z,
                DensityFamily::Logistic => -z - ls - 2.0 * softplus(-z),
            });
        }
        Ok(stable_sum(terms.into_iter()))
    }

    fn check_row(&self, x: &[f64], y: Option<&[f64]>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "DensityModel x",
                expected: self.dim,
                got: x.len(),
            });
        }
        if self.a.is_some() {
            match y {
                Some(y) if y.len() == self.dim => {}
                Some(y) => {
                    return Err(Error::DimensionMismatch {
                        context: "DensityModel y",
                        expected: self.dim,
                        got: y.len(),
                    })
                }
                None => {
                    return Err(Error::invalid(
                        "y",
                        "conditional density model needs a conditioning value",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Mean negative log-likelihood over the rows of `xs` and its gradient
    /// with respect to the flat parameters.
    pub fn nll_grad(&self, xs: &Matrix, ys: Option<&Matrix>) -> Result<(f64, Vec<f64>)> {
        let n = xs.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("DensityModel::nll_grad"));
        }
        if xs.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "DensityModel xs",
                expected: self.dim,
                got: xs.ncols(),
            });
        }
        let ys = match (self.a.is_some(), ys) {
            (true, Some(ys)) => {
                if ys.nrows() != n || ys.ncols() != self.dim {
                    return Err(Error::DimensionMismatch {
                        context: "DensityModel ys",
                        expected: n * self.dim,
                        got: ys.nrows() * ys.ncols(),
                    });
                }
                Some(ys)
            }
            (true, None) => {
                return Err(Error::invalid(
                    "ys",
                    "conditional density model needs conditioning values",
                ))
            }
            (false, _) => None,
        };
        let inv_n = 1.0 / n as f64;
        let mut nll_terms = Vec::with_capacity(n);
        let mut db = vec![0.0; self.dim];
        let mut da = vec![0.0; if self.a.is_some() { self.dim } else { 0 }];
        let mut dls = vec![0.0; self.log_scale.len()];
        for r in 0..n {
            let mut row_nll = 0.0;
            for i in 0..self.dim {
                let ls = self.log_scale_of(i);
                let s = ls.exp();
                let yv = ys.map(|m| m[(r, i)]);
                let loc = match (&self.a, yv) {
                    (Some(a), Some(y)) => a[i] * y + self.b[i],
                    _ => self.b[i],
                };
                let z = (xs[(r, i)] - loc) / s;
                let (nll_i, dz) = match self.family {
                    DensityFamily::Gaussian => (HALF_LN_TWO_PI + ls + 0.5 * z * z, z),
                    DensityFamily::Logistic => {
                        (z + ls + 2.0 * softplus(-z), 2.0 * sigmoid(z) - 1.0)
                    }
                };
                row_nll += nll_i;
                // d nll / d loc = -dz / s; d nll / d log_scale = 1 - dz * z
                let dloc = -dz / s * inv_n;
                db[i] += dloc;
                if self.a.is_some() {
                    da[i] += dloc * yv.expect("checked above");
                }
                let k = if self.tied { 0 } else { i };
                dls[k] += (1.0 - dz * z) * inv_n;
            }
            nll_terms.push(row_nll);
        }
        let mut grad = Vec::with_capacity(self.param_count());
        grad.extend_from_slice(&db);
        grad.extend_from_slice(&da);
        grad.extend_from_slice(&dls);
        Ok((stable_sum(nll_terms.into_iter()) * inv_n, grad))
    }
}
