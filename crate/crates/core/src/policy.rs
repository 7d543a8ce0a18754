//! Finite-width feedforward policies: sampling, evaluation and Lipschitz
//! certificates.
//!
//! Gaussian initialization uses the scaling under which the one-hidden-layer
//! ReLU net has exactly the arc-cosine covariance of [`crate::nngp::kernel`]:
//! input-layer weights ~ N(0, 2), deeper hidden weights ~ N(0, 2/fan_in),
//! readout weights ~ N(0, σ_w²/fan_in), every bias ~ N(0, σ_b²).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// ReLU gain applied to hidden layers.
const HIDDEN_GAIN: f64 = 2.0;

/// Factor applied to the product of power-iteration norms so the reported
/// bound stays above the true product.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;

const POWER_REL_TOL: f64 = 1e-6;
const POWER_MIN_ITERS: usize = 50;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Gaussian,
    XavierGlorot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub kind: InitKind,
    /// Weight scale. Ignored by Xavier-Glorot.
    pub sigma_w: f64,
    pub sigma_b: f64,
}

impl InitScheme {
    pub fn gaussian(sigma_w: f64, sigma_b: f64) -> Self {
        Self {
            kind: InitKind::Gaussian,
            sigma_w,
            sigma_b,
        }
    }

    pub fn xavier(sigma_b: f64) -> Self {
        Self {
            kind: InitKind::XavierGlorot,
            sigma_w: 1.0,
            sigma_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::param("sigma_w", "must be finite and nonnegative"));
        }
        if !(self.sigma_b >= 0.0 && self.sigma_b.is_finite()) {
            return Err(Error::param("sigma_b", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            activation,
        }
    }

    /// Two hidden layers of 256 ReLU units, the usual deep-RL policy MLP.
    pub fn standard_mlp(dim: usize) -> Self {
        Self::new(dim, vec![256, 256], dim, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArchitecture(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidArchitecture("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArchitecture("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Dense affine layer; `weights` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let fan_out = rows.len();
        let fan_in = rows.first().map_or(0, Vec::len);
        if fan_out == 0 || fan_in == 0 {
            return Err(Error::InvalidArchitecture("empty weight matrix".into()));
        }
        if rows.iter().any(|r| r.len() != fan_in) {
            return Err(Error::InvalidArchitecture("ragged weight matrix".into()));
        }
        check_dim(fan_out, bias.len())?;
        Ok(Self {
            fan_in,
            fan_out,
            weights: rows.concat(),
            bias,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.fan_in..(i + 1) * self.fan_in]
    }

    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.bias
                .iter()
                .enumerate()
                .map(|(i, b)| b + dot(self.row(i), x)),
        );
    }

    /// Largest singular value by power iteration on `WᵀW`.
    pub fn spectral_norm(&self, seed: u64) -> f64 {
        if self.weights.iter().all(|&w| w == 0.0) {
            return 0.0;
        }
        let mut rng = rng::stream(seed);
        let mut v: Vec<f64> = (0..self.fan_in).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut v);
        let mut u = vec![0.0; self.fan_out];
        let mut sigma = 0.0;
        for iter in 0..POWER_MAX_ITERS {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = dot(self.row(i), &v);
            }
            let next = norm(&u);
            v.iter_mut().for_each(|x| *x = 0.0);
            for (i, ui) in u.iter().enumerate() {
                for (vj, wij) in v.iter_mut().zip(self.row(i)) {
                    *vj += wij * ui;
                }
            }
            if normalize(&mut v) == 0.0 {
                return next;
            }
            let converged = (next - sigma).abs() <= POWER_REL_TOL * next;
            sigma = next;
            if iter + 1 >= POWER_MIN_ITERS && converged {
                break;
            }
        }
        sigma
    }
}

/// A sampled deterministic policy `s ↦ π_θ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetDump", try_from = "NetDump")]
pub struct PolicyNet {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl PolicyNet {
    /// All weights and biases zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Self { arch, layers, seed: 0 })
    }

    /// Builds a net from explicit layers, checking that shapes chain.
    pub fn from_layers(activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidArchitecture("need at least one hidden layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::InvalidArchitecture(format!(
                    "layer output {} does not feed input {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        let arch = Architecture::new(
            layers[0].fan_in,
            layers[..layers.len() - 1].iter().map(|l| l.fan_out).collect(),
            layers[layers.len() - 1].fan_out,
            activation,
        );
        arch.validate()?;
        Ok(Self { arch, layers, seed: 0 })
    }

    /// Redraws every parameter in place from `seed`.
    ///
    /// Parameters are drawn layer by layer, weights row-major then biases, one
    /// standard normal (or uniform for Xavier weights) per entry regardless of
    /// the scales, so the stream layout depends only on the architecture.
    pub fn resample(&mut self, init: &InitScheme, seed: u64) {
        let mut rng = rng::stream(seed);
        let n_layers = self.layers.len();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let readout = idx + 1 == n_layers;
            match init.kind {
                InitKind::Gaussian => {
                    let var = if readout {
                        init.sigma_w * init.sigma_w / layer.fan_in as f64
                    } else if idx == 0 {
                        HIDDEN_GAIN
                    } else {
                        HIDDEN_GAIN / layer.fan_in as f64
                    };
                    let scale = var.sqrt();
                    for w in &mut layer.weights {
                        let z: f64 = rng.sample(StandardNormal);
                        *w = if scale == 0.0 { 0.0 } else { scale * z };
                    }
                }
                InitKind::XavierGlorot => {
                    let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
                    for w in &mut layer.weights {
                        *w = rng.gen_range(-limit..limit);
                    }
                }
            }
            for b in &mut layer.bias {
                let z: f64 = rng.sample(StandardNormal);
                *b = if init.sigma_b == 0.0 { 0.0 } else { init.sigma_b * z };
            }
        }
        self.seed = seed;
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        let mut out = Vec::with_capacity(self.output_dim());
        self.forward_into(s, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// Allocation-free evaluation for hot loops.
    pub fn forward_into(&self, s: &[f64], scratch: &mut Scratch, out: &mut Vec<f64>) -> Result<()> {
        check_dim(self.input_dim(), s.len())?;
        let act = self.arch.activation;
        let (a, b) = (&mut scratch.a, &mut scratch.b);
        a.clear();
        a.extend_from_slice(s);
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            layer.affine_into(a, b);
            b.iter_mut().for_each(|x| *x = act.apply(*x));
            std::mem::swap(a, b);
        }
        self.layers[last].affine_into(a, out);
        Ok(())
    }

    /// Product of per-layer spectral norms, unscaled.
    pub fn spectral_norm_product(&self) -> f64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.spectral_norm(rng::split(self.seed, i as u64)))
            .product()
    }

    /// Certified global Lipschitz bound of the realized net (activations are
    /// 1-Lipschitz), including [`LIPSCHITZ_SAFETY`].
    pub fn lipschitz_upper_bound(&self) -> f64 {
        LIPSCHITZ_SAFETY * self.spectral_norm_product()
    }

    /// Largest slope `|π(x)−π(y)|/|x−y|` over `n_pairs` point pairs drawn
    /// uniformly from the ball. A lower bound on the local Lipschitz constant.
    pub fn empirical_lipschitz(&self, center: &[f64], radius: f64, n_pairs: usize, seed: u64) -> Result<f64> {
        check_dim(self.input_dim(), center.len())?;
        if !(radius > 0.0) {
            return Err(Error::param("radius", "must be positive"));
        }
        if n_pairs == 0 {
            return Err(Error::param("n_pairs", "must be at least 1"));
        }
        let mut rng = rng::stream(seed);
        let mut scratch = Scratch::default();
        let (mut fx, mut fy) = (Vec::new(), Vec::new());
        let mut best: f64 = 0.0;
        for _ in 0..n_pairs {
            let x = uniform_in_ball(&mut rng, center, radius);
            let y = uniform_in_ball(&mut rng, center, radius);
            let dx = distance(&x, &y);
            if dx == 0.0 {
                continue;
            }
            self.forward_into(&x, &mut scratch, &mut fx)?;
            self.forward_into(&y, &mut scratch, &mut fy)?;
            best = best.max(distance(&fx, &fy) / dx);
        }
        Ok(best)
    }
}

/// Reusable activation buffers for [`PolicyNet::forward_into`].
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Draws a fresh net from `(arch, init)`. Identical arguments give
/// bit-identical nets.
pub fn sample_policy(arch: &Architecture, init: &InitScheme, seed: u64) -> Result<PolicyNet> {
    init.validate()?;
    let mut net = PolicyNet::zeros(arch.clone())?;
    net.resample(init, seed);
    Ok(net)
}

fn uniform_in_ball<R: Rng>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    while normalize(&mut dir) == 0.0 {
        dir.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
    }
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + r * u).collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize; the
    // summation order is fixed, so results stay bit-reproducible.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// JSON weight dump: `{arch, seed, layers: [{w: [[..]], b: [..]}]}`.
#[derive(Serialize, Deserialize)]
struct NetDump {
    arch: Architecture,
    seed: u64,
    layers: Vec<LayerDump>,
}

#[derive(Serialize, Deserialize)]
struct LayerDump {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<PolicyNet> for NetDump {
    fn from(net: PolicyNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerDump {
                w: (0..l.fan_out).map(|i| l.row(i).to_vec()).collect(),
                b: l.bias.clone(),
            })
            .collect();
        NetDump {
            arch: net.arch,
            seed: net.seed,
            layers,
        }
    }
}

impl TryFrom<NetDump> for PolicyNet {
    type Error = Error;

    fn try_from(dump: NetDump) -> Result<Self> {
        let layers = dump
            .layers
            .into_iter()
            .map(|l| Layer::from_rows(&l.w, l.b))
            .collect::<Result<Vec<_>>>()?;
        let mut net = PolicyNet::from_layers(dump.arch.activation, layers)?;
        if net.arch != dump.arch {
            return Err(Error::InvalidArchitecture("layer shapes disagree with arch".into()));
        }
        net.seed = dump.seed;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate_net() -> PolicyNet {
        let l1 = Layer::from_rows(&[vec![1.0, 0.0]], vec![0.0]).unwrap();
        let l2 = Layer::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
        PolicyNet::from_layers(Activation::Relu, vec![l1, l2]).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let arch = Architecture::standard_mlp(2);
        let init = InitScheme::gaussian(1.0, 0.1);
        let a = sample_policy(&arch, &init, 7).unwrap();
        let b = sample_policy(&arch, &init, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_policy(&arch, &init, 8).unwrap();
        assert_ne!(a.layers[0].weights, c.layers[0].weights);
    }

    #[test]
    fn zero_sigma_b_gives_zero_biases() {
        let arch = Architecture::new(3, vec![16, 8], 2, Activation::Tanh);
        for init in [InitScheme::gaussian(1.0, 0.0), InitScheme::xavier(0.0)] {
            let net = sample_policy(&arch, &init, 3).unwrap();
            assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        }
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        let init = InitScheme::gaussian(1.0, 0.1);
        for arch in [
            Architecture::new(0, vec![4], 1, Activation::Relu),
            Architecture::new(2, vec![], 1, Activation::Relu),
            Architecture::new(2, vec![4, 0], 1, Activation::Relu),
            Architecture::new(2, vec![4], 0, Activation::Relu),
        ] {
            assert!(matches!(
                sample_policy(&arch, &init, 0),
                Err(Error::InvalidArchitecture(_))
            ));
        }
        assert!(sample_policy(&Architecture::standard_mlp(2), &InitScheme::gaussian(-1.0, 0.0), 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = PolicyNet::zeros(Architecture::new(2, vec![5], 2, Activation::Relu)).unwrap();
        assert_eq!(net.forward(&[3.0, -1.5]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.lipschitz_upper_bound(), 0.0);
        assert_eq!(net.empirical_lipschitz(&[0.0, 0.0], 1.0, 50, 1).unwrap(), 0.0);
    }

    #[test]
    fn relu_gate() {
        let net = gate_net();
        assert_eq!(net.forward(&[-3.0, 5.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[2.0, 9.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = gate_net();
        assert_eq!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn spectral_bound_of_diagonal_net() {
        let l1 = Layer::from_rows(&[vec![3.0]], vec![0.0]).unwrap();
        let l2 = Layer::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
        let net = PolicyNet::from_layers(Activation::Relu, vec![l1, l2]).unwrap();
        assert!((net.spectral_norm_product() - 3.0).abs() < 1e-12);
        assert!((net.lipschitz_upper_bound() - 3.0 * LIPSCHITZ_SAFETY).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_matches_known_singular_value() {
        // [[3, 1], [1, 3]] has singular values 4 and 2.
        let l = Layer::from_rows(&[vec![3.0, 1.0], vec![1.0, 3.0]], vec![0.0, 0.0]).unwrap();
        assert!((l.spectral_norm(11) - 4.0).abs() < 4e-6);
    }

    #[test]
    fn linear_region_slope_is_exact() {
        let l1 = Layer::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]).unwrap();
        let l2 = Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let net = PolicyNet::from_layers(Activation::Relu, vec![l1, l2]).unwrap();
        let slope = net.empirical_lipschitz(&[10.0, 10.0], 1.0, 200, 5).unwrap();
        assert!(slope > 2.0 - 1e-6 && slope <= 2.0, "slope {slope}");
    }

    #[test]
    fn bias_free_relu_is_positively_homogeneous() {
        let arch = Architecture::new(3, vec![64], 3, Activation::Relu);
        let net = sample_policy(&arch, &InitScheme::gaussian(1.0, 0.0), 21).unwrap();
        let s = [0.3, -1.2, 0.7];
        let base = net.forward(&s).unwrap();
        for alpha in [0.1, 2.5, 17.0] {
            let scaled: Vec<f64> = s.iter().map(|x| alpha * x).collect();
            let out = net.forward(&scaled).unwrap();
            for (o, b) in out.iter().zip(&base) {
                assert!((o - alpha * b).abs() <= 1e-12 * (alpha * b).abs().max(1e-300));
            }
        }
    }

    #[test]
    fn json_dump_round_trips() {
        let arch = Architecture::new(2, vec![3], 2, Activation::Relu);
        let net = sample_policy(&arch, &InitScheme::gaussian(1.0, 0.5), 9).unwrap();
        let text = serde_json::to_string(&net).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["layers"][0]["w"].as_array().unwrap().len(), 3);
        assert_eq!(value["layers"][1]["b"].as_array().unwrap().len(), 2);
        let back: PolicyNet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, net);
    }
}
