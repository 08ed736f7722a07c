//! Dense linear algebra, stable reductions, a small MLP critic, Adam, and
//! a finite-difference gradient checker.
//!
//! Everything is `f64`. The critic is an ordinary fully connected network
//! `input -> hidden ... -> 1` with tanh or ReLU hidden units and an
//! optional hard clamp of the scalar output to `[0, c]` (clamped scores
//! carry zero gradient). Two forward shapes are supported:
//!
//! * [`Critic::forward`]: one score per row of an `n x input_dim` matrix;
//! * [`Critic::forward_pairs`]: all `n^2` scores `f(x_i, y_j)` for the
//!   contrastive estimators, computed without materialising the `n^2`
//!   concatenated inputs (the first layer splits into an x-half and a
//!   y-half, so the grid costs two `n x d` products plus the upper layers).

use crate::{Error, Result};
use ndarray::{Array1, Axis};

use crate::rng::RunRng;

/// Row-major dense matrix of `f64`.
pub type Matrix = ndarray::Array2<f64>;

/// Neumaier-compensated sum; immune to cancellation at any input order.
pub fn stable_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arithmetic mean via [`stable_sum`].
pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("mean"));
    }
    Ok(stable_sum(xs.iter().copied()) / xs.len() as f64)
}

/// `ln(sum_i e^{x_i})`, max-shifted so it never overflows.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("logsumexp"));
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite("logsumexp input"));
    }
    let s = stable_sum(xs.iter().map(|&x| (x - m).exp()));
    Ok(m + s.ln())
}

/// Hidden-unit nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(
                "activation",
                format!("unknown activation {other:?} (expected tanh or relu)"),
            )),
        }
    }
}

/// Fully connected scalar-output network.
#[derive(Clone, Debug)]
pub struct Critic {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    output_clip: Option<f64>,
}

/// Activations saved by [`Critic::forward_cached`] for the backward pass.
pub struct Cache {
    layers: Vec<Matrix>,
    raw: Vec<f64>,
}

/// Like [`Cache`], for the pair-grid path.
pub struct PairCache {
    layers: Vec<Matrix>,
    raw: Vec<f64>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("dims", "need at least input and output"));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::invalid("dims", "output layer must have width 1"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("dims", "zero-width layer"));
    }
    Ok(())
}

impl Critic {
    /// All-zero parameters; scores are identically zero.
    pub fn zeroed(dims: &[usize], activation: Activation, output_clip: Option<f64>) -> Result<Self> {
        validate_dims(dims)?;
        let weights = dims
            .windows(2)
            .map(|w| Matrix::zeros((w[0], w[1])))
            .collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Critic {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
            output_clip,
        })
    }

    /// Glorot-uniform weights, zero biases, drawn from `rng`.
    pub fn glorot(
        dims: &[usize],
        activation: Activation,
        output_clip: Option<f64>,
        rng: &mut RunRng,
    ) -> Result<Self> {
        let mut c = Critic::zeroed(dims, activation, output_clip)?;
        for w in &mut c.weights {
            let (fan_in, fan_out) = (w.nrows() as f64, w.ncols() as f64);
            let a = (6.0 / (fan_in + fan_out)).sqrt();
            for v in w.iter_mut() {
                *v = (2.0 * rng.uniform() - 1.0) * a;
            }
        }
        Ok(c)
    }

    /// Convenience constructor: `input_dim -> hidden x depth -> 1`.
    pub fn mlp(
        input_dim: usize,
        hidden: usize,
        depth: usize,
        activation: Activation,
        output_clip: Option<f64>,
        rng: &mut RunRng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden).take(depth));
        dims.push(1);
        Critic::glorot(&dims, activation, output_clip, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_clip(&self) -> Option<f64> {
        self.output_clip
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flatten parameters layer by layer: row-major weights, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "set_params_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = flat[i];
                i += 1;
            }
            for v in b.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
        Ok(())
    }

    fn clip_score(&self, raw: f64) -> f64 {
        match self.output_clip {
            Some(c) => raw.clamp(0.0, c),
            None => raw,
        }
    }

    /// 1 inside the clip interval (gradient passes), 0 where clamped.
    fn clip_mask(&self, raw: f64) -> f64 {
        match self.output_clip {
            Some(c) => {
                if (0.0..=c).contains(&raw) {
                    1.0
                } else {
                    0.0
                }
            }
            None => 1.0,
        }
    }

    fn check_input(&self, x: &Matrix, context: &'static str) -> Result<()> {
        if x.ncols() != self.dims[0] {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dims[0],
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Scores for each row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Scores plus the activations needed by [`Critic::backward`].
    pub fn forward_cached(&self, x: &Matrix) -> Result<(Vec<f64>, Cache)> {
        self.check_input(x, "Critic::forward")?;
        let n_layers = self.weights.len();
        let mut layers = Vec::with_capacity(n_layers);
        layers.push(x.clone());
        for l in 0..n_layers - 1 {
            let mut z = layers[l].dot(&self.weights[l]);
            z += &self.biases[l];
            z.mapv_inplace(|v| self.activation.apply(v));
            layers.push(z);
        }
        let last = n_layers - 1;
        let mut z = layers[last].dot(&self.weights[last]);
        z += &self.biases[last];
        let raw: Vec<f64> = z.column(0).to_vec();
        let scores = raw.iter().map(|&r| self.clip_score(r)).collect();
        Ok((scores, Cache { layers, raw }))
    }

    /// Gradient of `sum_i dscore[i] * score_i` with respect to the flat
    /// parameter vector.
    pub fn backward(&self, cache: &Cache, dscore: &[f64]) -> Result<Vec<f64>> {
        let n = cache.raw.len();
        if dscore.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Critic::backward",
                expected: n,
                got: dscore.len(),
            });
        }
        let last = self.weights.len() - 1;
        let mut dz = Matrix::from_shape_fn((n, 1), |(i, _)| {
            dscore[i] * self.clip_mask(cache.raw[i])
        });
        let mut grads: Vec<(Matrix, Array1<f64>)> = Vec::with_capacity(self.weights.len());
        for l in (0..=last).rev() {
            let dw = cache.layers[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let da = dz.dot(&self.weights[l].t());
                dz = da;
                let a = &cache.layers[l];
                dz.zip_mut_with(a, |g, &av| {
                    *g *= self.activation.derivative_from_output(av)
                });
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok(flatten_grads(&grads))
    }

    /// Pair-grid scores `s[i, j] = f([x_i, y_j])` for all `i, j`.
    ///
    /// Requires `input_dim == x_cols + y_cols`. The first layer is computed
    /// as `act(x W_x + y W_y + b)` with the weight rows split between the
    /// two halves, identical (to rounding) to concatenating the pairs.
    pub fn forward_pairs(&self, x: &Matrix, y: &Matrix) -> Result<(Matrix, PairCache)> {
        let (n, dx) = (x.nrows(), x.ncols());
        let dy = y.ncols();
        if dx + dy != self.dims[0] {
            return Err(Error::DimensionMismatch {
                context: "Critic::forward_pairs",
                expected: self.dims[0],
                got: dx + dy,
            });
        }
        if y.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "Critic::forward_pairs",
                expected: n,
                got: y.nrows(),
            });
        }
        let wx = self.weights[0].slice(ndarray::s![..dx, ..]);
        let wy = self.weights[0].slice(ndarray::s![dx.., ..]);
        let ax = x.dot(&wx);
        let ay = y.dot(&wy);
        let h = self.dims[1];
        let mut a1 = Matrix::zeros((n * n, h));
        for i in 0..n {
            let axi = ax.row(i);
            for j in 0..n {
                let ayj = ay.row(j);
                let mut row = a1.row_mut(i * n + j);
                for k in 0..h {
                    row[k] = self.activation.apply(axi[k] + ayj[k] + self.biases[0][k]);
                }
            }
        }
        let n_layers = self.weights.len();
        let mut layers = Vec::with_capacity(n_layers - 1);
        layers.push(a1);
        for l in 1..n_layers - 1 {
            let mut z = layers[l - 1].dot(&self.weights[l]);
            z += &self.biases[l];
            z.mapv_inplace(|v| self.activation.apply(v));
            layers.push(z);
        }
        let last = n_layers - 1;
        let mut z = layers[last - 1].dot(&self.weights[last]);
        z += &self.biases[last];
        let raw: Vec<f64> = z.column(0).to_vec();
        let scores = Matrix::from_shape_fn((n, n), |(i, j)| self.clip_score(raw[i * n + j]));
        Ok((scores, PairCache { layers, raw }))
    }

    /// Gradient of `sum_ij dscore[i, j] * s[i, j]` in flat parameter order.
    ///
    /// Pair grids need at least one hidden layer (the default grid always
    /// has two); a purely linear critic has no split first layer to reuse.
    pub fn backward_pairs(
        &self,
        x: &Matrix,
        y: &Matrix,
        cache: &PairCache,
        dscore: &Matrix,
    ) -> Result<Vec<f64>> {
        let n = x.nrows();
        if dscore.nrows() != n || dscore.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "Critic::backward_pairs",
                expected: n * n,
                got: dscore.nrows() * dscore.ncols(),
            });
        }
        if self.weights.len() < 2 {
            return Err(Error::invalid(
                "dims",
                "pair-grid backward needs at least one hidden layer",
            ));
        }
        let last = self.weights.len() - 1;
        let mut dz = Matrix::from_shape_fn((n * n, 1), |(r, _)| {
            dscore[(r / n, r % n)] * self.clip_mask(cache.raw[r])
        });
        // upper layers, exactly as in the plain path (cache.layers[0] = a1)
        let mut grads_rev: Vec<(Matrix, Array1<f64>)> = Vec::with_capacity(last + 1);
        for l in (1..=last).rev() {
            let dw = cache.layers[l - 1].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            let da = dz.dot(&self.weights[l].t());
            dz = da;
            let a = &cache.layers[l - 1];
            dz.zip_mut_with(a, |g, &av| {
                *g *= self.activation.derivative_from_output(av)
            });
            grads_rev.push((dw, db));
        }
        // first layer: collapse the grid back onto the x rows and y rows
        let h = self.dims[1];
        let dx = x.ncols();
        let mut row_sum = Matrix::zeros((n, h));
        let mut col_sum = Matrix::zeros((n, h));
        for i in 0..n {
            for j in 0..n {
                let g = dz.row(i * n + j);
                let mut ri = row_sum.row_mut(i);
                ri += &g;
                let mut cj = col_sum.row_mut(j);
                cj += &g;
            }
        }
        let dwx = x.t().dot(&row_sum);
        let dwy = y.t().dot(&col_sum);
        let mut dw0 = Matrix::zeros((self.dims[0], h));
        dw0.slice_mut(ndarray::s![..dx, ..]).assign(&dwx);
        dw0.slice_mut(ndarray::s![dx.., ..]).assign(&dwy);
        let db0 = dz.sum_axis(Axis(0));
        grads_rev.push((dw0, db0));
        grads_rev.reverse();
        Ok(flatten_grads(&grads_rev))
    }
}

fn flatten_grads(grads: &[(Matrix, Array1<f64>)]) -> Vec<f64> {
    let total: usize = grads.iter().map(|(w, b)| w.len() + b.len()).sum();
    let mut out = Vec::with_capacity(total);
    for (w, b) in grads {
        out.extend(w.iter().copied());
        out.extend(b.iter().copied());
    }
    out
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step in place: `params -= lr * mhat / (sqrt(vhat) + eps)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "AdamState::update",
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Central finite differences of `loss` at `params` with step `h`.
pub fn finite_diff<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p)?;
        p[i] = orig - h;
        let down = loss(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite_diff loss"));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// True when every coordinate satisfies
/// `|a - b| <= abs_floor + rel_tol * max(|a|, |b|)`.
pub fn grads_close(a: &[f64], b: &[f64], rel_tol: f64, abs_floor: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(&x, &y)| (x - y).abs() <= abs_floor + rel_tol * x.abs().max(y.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_sum_defeats_cancellation() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(stable_sum(xs.iter().copied()), 1.0);
        let tenths = [0.1; 10];
        assert!((stable_sum(tenths.iter().copied()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_matches_naive_and_shifts() {
        let xs = [0.3f64, -1.2, 2.0, 0.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        let got = logsumexp(&xs).unwrap();
        assert!((got - naive).abs() < 1e-14);
        // exact shift identity: logsumexp(x + c) = logsumexp(x) + c
        let c = 700.0;
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let hi = logsumexp(&shifted).unwrap();
        assert!(hi.is_finite());
        assert!((hi - (got + c)).abs() < 1e-10);
        assert!(matches!(logsumexp(&[]), Err(Error::EmptyInput(_))));
        assert_eq!(logsumexp(&[3.5]).unwrap(), 3.5);
    }

    #[test]
    fn mlp_forward_matches_hand_computation() {
        // 1 -> 2 -> 1 tanh net evaluated by hand at x = 0.6
        let mut c = Critic::zeroed(&[1, 2, 1], Activation::Tanh, None).unwrap();
        c.set_params_flat(&[0.3, -0.2, 0.1, -0.4, 0.5, -0.7, 0.2]).unwrap();
        let x = Matrix::from_shape_vec((1, 1), vec![0.6]).unwrap();
        let got = c.forward(&x).unwrap()[0];
        let h1 = (0.6f64 * 0.3 + 0.1).tanh();
        let h2 = (0.6f64 * -0.2 + -0.4).tanh();
        let want = 0.5 * h1 - 0.7 * h2 + 0.2;
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let mut c = Critic::zeroed(&[1, 1, 1], Activation::Relu, None).unwrap();
        // weight 1, bias 0, output weight 1: f(x) = max(x, 0)
        c.set_params_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let x = Matrix::from_shape_vec((3, 1), vec![-2.0, 0.0, 1.5]).unwrap();
        assert_eq!(c.forward(&x).unwrap(), vec![0.0, 0.0, 1.5]);
    }

    #[test]
    fn output_clip_clamps_and_kills_gradient() {
        let mut c = Critic::zeroed(&[1, 1], Activation::Tanh, Some(2.0)).unwrap();
        // linear critic f(x) = 3x
        c.set_params_flat(&[3.0, 0.0]).unwrap();
        let x = Matrix::from_shape_vec((3, 1), vec![-1.0, 0.5, 1.0]).unwrap();
        let (scores, cache) = c.forward_cached(&x).unwrap();
        assert_eq!(scores, vec![0.0, 1.5, 2.0]);
        let g = c.backward(&cache, &[1.0, 1.0, 1.0]).unwrap();
        // only the middle row (raw 1.5, inside [0, 2]) contributes
        assert_eq!(g, vec![0.5, 1.0]);
    }

    #[test]
    fn glorot_is_seeded() {
        let mut r1 = RunRng::new(11);
        let mut r2 = RunRng::new(11);
        let mut r3 = RunRng::new(12);
        let a = Critic::mlp(4, 8, 2, Activation::Relu, None, &mut r1).unwrap();
        let b = Critic::mlp(4, 8, 2, Activation::Relu, None, &mut r2).unwrap();
        let c = Critic::mlp(4, 8, 2, Activation::Relu, None, &mut r3).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());
        // all weights inside the Glorot interval, biases zero
        let bound = (6.0f64 / (4.0 + 8.0)).sqrt();
        assert!(a.weights[0].iter().all(|w| w.abs() <= bound));
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn params_flat_round_trips() {
        let mut rng = RunRng::new(5);
        let mut c = Critic::mlp(3, 4, 2, Activation::Tanh, None, &mut rng).unwrap();
        let p = c.params_flat();
        assert_eq!(p.len(), c.param_count());
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        c.set_params_flat(&doubled).unwrap();
        assert_eq!(c.params_flat(), doubled);
        assert!(c.set_params_flat(&p[..p.len() - 1]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RunRng::new(21);
        let c = Critic::mlp(3, 5, 2, Activation::Tanh, None, &mut rng).unwrap();
        let mut xv = vec![0.0; 4 * 3];
        rng.fill_normal(&mut xv);
        let x = Matrix::from_shape_vec((4, 3), xv).unwrap();
        let dscore = [0.7, -1.1, 0.4, 0.25];
        let (_, cache) = c.forward_cached(&x).unwrap();
        let analytic = c.backward(&cache, &dscore).unwrap();
        let numeric = finite_diff(
            |p| {
                let mut cc = c.clone();
                cc.set_params_flat(p)?;
                let s = cc.forward(&x)?;
                Ok(s.iter().zip(&dscore).map(|(si, di)| si * di).sum())
            },
            &c.params_flat(),
            1e-5,
        )
        .unwrap();
        assert!(grads_close(&analytic, &numeric, 1e-4, 1e-7));
    }

    #[test]
    fn pair_grid_matches_concatenated_forward() {
        let mut rng = RunRng::new(31);
        let c = Critic::mlp(4, 6, 2, Activation::Tanh, None, &mut rng).unwrap();
        let n = 5;
        let mut xv = vec![0.0; n * 2];
        let mut yv = vec![0.0; n * 2];
        rng.fill_normal(&mut xv);
        rng.fill_normal(&mut yv);
        let x = Matrix::from_shape_vec((n, 2), xv).unwrap();
        let y = Matrix::from_shape_vec((n, 2), yv).unwrap();
        let (grid, _) = c.forward_pairs(&x, &y).unwrap();
        for i in 0..n {
            for j in 0..n {
                let row = Matrix::from_shape_vec(
                    (1, 4),
                    vec![x[(i, 0)], x[(i, 1)], y[(j, 0)], y[(j, 1)]],
                )
                .unwrap();
                let direct = c.forward(&row).unwrap()[0];
                assert!(
                    (grid[(i, j)] - direct).abs() <= 1e-12,
                    "pair ({i},{j}): {} vs {direct}",
                    grid[(i, j)]
                );
            }
        }
    }

    #[test]
    fn pair_backward_matches_finite_differences() {
        let mut rng = RunRng::new(41);
        let c = Critic::mlp(4, 5, 1, Activation::Tanh, None, &mut rng).unwrap();
        let n = 4;
        let mut xv = vec![0.0; n * 2];
        let mut yv = vec![0.0; n * 2];
        rng.fill_normal(&mut xv);
        rng.fill_normal(&mut yv);
        let x = Matrix::from_shape_vec((n, 2), xv).unwrap();
        let y = Matrix::from_shape_vec((n, 2), yv).unwrap();
        let mut dv = vec![0.0; n * n];
        rng.fill_normal(&mut dv);
        let dscore = Matrix::from_shape_vec((n, n), dv).unwrap();
        let (_, cache) = c.forward_pairs(&x, &y).unwrap();
        let analytic = c.backward_pairs(&x, &y, &cache, &dscore).unwrap();
        let numeric = finite_diff(
            |p| {
                let mut cc = c.clone();
                cc.set_params_flat(p)?;
                let (s, _) = cc.forward_pairs(&x, &y)?;
                Ok((&s * &dscore).sum())
            },
            &c.params_flat(),
            1e-5,
        )
        .unwrap();
        assert!(grads_close(&analytic, &numeric, 1e-4, 1e-7));
    }

    #[test]
    fn adam_two_step_recurrence() {
        let mut adam = AdamState::new(1, 0.1);
        let mut p = [1.0];
        adam.update(&mut p, &[2.0]).unwrap();
        // by hand: m=0.2, v=0.004, mhat=2, vhat=4, step = lr*2/(2+eps)
        let want1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - want1).abs() < 1e-15);
        adam.update(&mut p, &[-1.0]).unwrap();
        let m = 0.9 * 0.2 + 0.1 * -1.0;
        let v: f64 = 0.999 * 0.004 + 0.001 * 1.0;
        let mhat = m / (1.0 - 0.9f64.powi(2));
        let vhat = v / (1.0 - 0.999f64.powi(2));
        let want2 = want1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0] - want2).abs() < 1e-15);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = [0.0, 0.0];
        assert!(adam.update(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn finite_diff_exact_on_quadratics() {
        let params = [1.5, -2.0, 0.25];
        let grad = finite_diff(
            |p| Ok(p.iter().map(|v| v * v).sum::<f64>()),
            &params,
            1e-5,
        )
        .unwrap();
        for (g, p) in grad.iter().zip(&params) {
            assert!((g - 2.0 * p).abs() < 1e-9);
        }
    }
}
