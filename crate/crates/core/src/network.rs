//! Feed-forward regression networks with exact reverse-mode gradients.
//!
//! A network maps `d` inputs through one or more hidden layers to a single
//! output. Each layer computes `a = act(W a_prev + b)` with `W` stored
//! row-major as `out × in`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{check_len, Error, Result};
use crate::numeric::{dot, Matrix, ParamVector, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative in terms of the pre-activation `z` and output `a`.
    /// ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config("activation", format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer sizes `[d, h1, ..., 1]` and one activation per non-input layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::config(
                "network.layer_dims",
                "need an input layer, at least one hidden layer and an output layer",
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config("network.layer_dims", "layer sizes must be positive"));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::config("network.layer_dims", "output dimension must be 1"));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::config(
                "network.activations",
                format!(
                    "expected {} activations, got {}",
                    layer_dims.len() - 1,
                    activations.len()
                ),
            ));
        }
        Ok(Self {
            layer_dims,
            activations,
        })
    }

    /// `d → 50 (tanh) → 10 (relu) → 1 (identity)`, the motorcycle experiment
    /// architecture.
    pub fn canonical(input_dim: usize) -> Self {
        Self::new(
            vec![input_dim, 50, 10, 1],
            vec![Activation::Tanh, Activation::Relu, Activation::Identity],
        )
        .expect("canonical spec is valid for input_dim > 0")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(fan_in, fan_out, activation, weight offset, bias offset)` per layer.
    fn layers(&self) -> impl Iterator<Item = LayerView> + '_ {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .zip(&self.activations)
            .map(move |(w, &act)| {
                let view = LayerView {
                    fan_in: w[0],
                    fan_out: w[1],
                    act,
                    w_off: offset,
                    b_off: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                view
            })
    }
}

#[derive(Clone, Copy)]
struct LayerView {
    fan_in: usize,
    fan_out: usize,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

/// Anything the projections can drive: a parameter vector plus forward and
/// gradient evaluation over a batch.
pub trait Model: Clone {
    fn params(&self) -> &ParamVector;

    fn params_mut(&mut self) -> &mut ParamVector;

    fn forward(&self, x: &Matrix) -> Result<Vector>;

    /// Gradient of `Σ_i upstream_i · ŷ_i` with respect to the parameters.
    fn grad(&self, x: &Matrix, upstream: &[f64]) -> Result<ParamVector>;

    /// Predictions plus the gradient for an upstream computed from those
    /// predictions. Implementations may share the forward pass.
    fn predict_and_grad(
        &self,
        x: &Matrix,
        upstream: &mut dyn FnMut(&Vector) -> Result<Vector>,
    ) -> Result<(Vector, ParamVector)> {
        let preds = self.forward(x)?;
        let up = upstream(&preds)?;
        let g = self.grad(x, &up)?;
        Ok((preds, g))
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_len("set_params", self.params().len(), params.len())?;
        *self.params_mut() = params;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamVector,
}

impl Network {
    /// Glorot-normal weights (`stddev = sqrt(2 / (fan_in + fan_out))`), zero
    /// biases. Layers are drawn in layout order from `rng`.
    pub fn init(spec: NetworkSpec, rng: &mut Rng) -> Self {
        let mut params = ParamVector::zeros(spec.param_count());
        for layer in spec.layers() {
            let std = (2.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut params[layer.w_off..layer.b_off] {
                *w = std * rng.standard_normal();
            }
        }
        Self { spec, params }
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        let params = ParamVector::zeros(spec.param_count());
        Self { spec, params }
    }

    pub fn from_params(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        check_len("Network::from_params", spec.param_count(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Runs the forward pass keeping every layer's pre-activations and
    /// outputs (each `batch × fan_out`, row-major).
    fn forward_cached(&self, x: &Matrix) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        check_len("forward", self.spec.input_dim(), x.cols())?;
        let batch = x.rows();
        let mut cache: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.spec.activations.len());
        for layer in self.spec.layers() {
            let input: &[f64] = match cache.last() {
                Some((_, a)) => a,
                None => x.data(),
            };
            let w = &self.params[layer.w_off..layer.b_off];
            let b = &self.params[layer.b_off..layer.b_off + layer.fan_out];
            let mut z = vec![0.0; batch * layer.fan_out];
            let mut a = vec![0.0; batch * layer.fan_out];
            for r in 0..batch {
                let inp = &input[r * layer.fan_in..(r + 1) * layer.fan_in];
                for o in 0..layer.fan_out {
                    let zo = dot(&w[o * layer.fan_in..(o + 1) * layer.fan_in], inp) + b[o];
                    z[r * layer.fan_out + o] = zo;
                    a[r * layer.fan_out + o] = layer.act.apply(zo);
                }
            }
            cache.push((z, a));
        }
        Ok(cache)
    }

    fn backward(
        &self,
        x: &Matrix,
        cache: &[(Vec<f64>, Vec<f64>)],
        upstream: &[f64],
    ) -> Result<ParamVector> {
        let batch = x.rows();
        check_len("grad", batch, upstream.len())?;
        let layers: Vec<LayerView> = self.spec.layers().collect();
        let mut grad = ParamVector::zeros(self.params.len());

        // delta = dL/dz for the current layer, batch × fan_out
        let last = layers.len() - 1;
        let (z_out, a_out) = &cache[last];
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(z_out.iter().zip(a_out))
            .map(|(u, (&z, &a))| u * layers[last].act.derivative(z, a))
            .collect();

        for l in (0..layers.len()).rev() {
            let layer = layers[l];
            let input: &[f64] = if l == 0 { x.data() } else { &cache[l - 1].1 };
            {
                let (gw, gb) = grad[layer.w_off..layer.b_off + layer.fan_out]
                    .split_at_mut(layer.b_off - layer.w_off);
                for r in 0..batch {
                    let inp = &input[r * layer.fan_in..(r + 1) * layer.fan_in];
                    for o in 0..layer.fan_out {
                        let d = delta[r * layer.fan_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (g, &xi) in row.iter_mut().zip(inp) {
                            *g = d.mul_add(xi, *g);
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let prev = layers[l - 1];
            let w = &self.params[layer.w_off..layer.b_off];
            let (z_prev, a_prev) = &cache[l - 1];
            let mut next = vec![0.0; batch * layer.fan_in];
            for r in 0..batch {
                let out = &mut next[r * layer.fan_in..(r + 1) * layer.fan_in];
                for o in 0..layer.fan_out {
                    let d = delta[r * layer.fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (n, &wi) in out.iter_mut().zip(wrow) {
                        *n = d.mul_add(wi, *n);
                    }
                }
                for (i, n) in out.iter_mut().enumerate() {
                    let idx = r * layer.fan_in + i;
                    *n *= prev.act.derivative(z_prev[idx], a_prev[idx]);
                }
            }
            delta = next;
        }
        Ok(grad)
    }
}

impl Model for Network {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn forward(&self, x: &Matrix) -> Result<Vector> {
        let cache = self.forward_cached(x)?;
        Ok(Vector::new(cache.into_iter().last().unwrap().1))
    }

    fn grad(&self, x: &Matrix, upstream: &[f64]) -> Result<ParamVector> {
        let cache = self.forward_cached(x)?;
        self.backward(x, &cache, upstream)
    }

    fn predict_and_grad(
        &self,
        x: &Matrix,
        upstream: &mut dyn FnMut(&Vector) -> Result<Vector>,
    ) -> Result<(Vector, ParamVector)> {
        let cache = self.forward_cached(x)?;
        let preds = Vector::new(cache.last().unwrap().1.clone());
        let up = upstream(&preds)?;
        let g = self.backward(x, &cache, &up)?;
        Ok((preds, g))
    }
}

/// `ŷ ≡ c` for every input: a single bias parameter. Used for analytic
/// instances where projections have closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    params: ParamVector,
}

impl ConstantModel {
    pub fn new(c: f64) -> Self {
        Self {
            params: ParamVector::new(vec![c]),
        }
    }

    pub fn value(&self) -> f64 {
        self.params[0]
    }
}

impl Model for ConstantModel {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn forward(&self, x: &Matrix) -> Result<Vector> {
        Ok(Vector::new(vec![self.params[0]; x.rows()]))
    }

    fn grad(&self, x: &Matrix, upstream: &[f64]) -> Result<ParamVector> {
        check_len("grad", x.rows(), upstream.len())?;
        Ok(ParamVector::new(vec![upstream.iter().sum()]))
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_len("set_params", 1, params.len())?;
        self.params = params;
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "countcon-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network: spec, parameters in layout order, and optionally the
/// data normalization needed to map predictions back to original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: ParamVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, normalization: Option<Normalization>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            layer_dims: net.spec.layer_dims.clone(),
            activations: net.spec.activations.clone(),
            params: net.params.clone(),
            normalization,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        let spec = NetworkSpec::new(self.layer_dims.clone(), self.activations.clone())?;
        Network::from_params(spec, self.params.clone())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint file (format `{}`)", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
