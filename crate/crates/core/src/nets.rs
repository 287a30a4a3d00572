//! Generator and measurement-function families.
//!
//! Every network here is a multi-layer perceptron over row-batched inputs:
//! a batch of `B` latents is a `B × latent_dim` tensor and produces a
//! `B × output_dim` tensor. Weights are stored `in × out` so a layer is
//! `h · W + b`. Linear measurements keep the matrix as `C × D` and compute
//! `x · Fᵀ`, which is `F x` for each row.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Matrix, Shape, Tensor};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Named trainable matrices, kept in declaration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Matrix)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a parameter.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), &mut *m))
    }

    /// `(name, shape)` in declaration order.
    pub fn manifest(&self) -> Vec<(String, Shape)> {
        self.entries.iter().map(|(n, m)| (n.clone(), m.shape())).collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Attaches every parameter to `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &Graph) -> Bound {
        Bound {
            entries: self.entries.iter().map(|(n, m)| (n.clone(), graph.leaf(m.clone()))).collect(),
        }
    }

    /// Wraps every parameter as a constant (no gradients).
    pub fn constants(&self) -> Bound {
        Bound {
            entries: self.entries.iter().map(|(n, m)| (n.clone(), Tensor::constant(m.clone()))).collect(),
        }
    }

    /// Hash of the exact bit patterns of all values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (n, m) in &self.entries {
            n.hash(&mut h);
            m.shape().hash(&mut h);
            for v in m.as_slice() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// A [`ParamSet`] whose entries are tensors for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    entries: Vec<(String, Tensor)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Shared behaviour of the architecture descriptions.
pub trait Architecture {
    /// Parameter names and shapes this architecture declares.
    fn param_shapes(&self) -> Vec<(String, Shape)>;

    /// Deterministic initial parameters for `seed`.
    fn init_params(&self, seed: u64) -> ParamSet;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        })
    }
}

impl FromStr for OutputActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "identity" => Ok(OutputActivation::Identity),
            other => Err(Error::Spec(format!("unknown output activation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub hidden_width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    pub leaky_slope: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 100,
            hidden_width: 500,
            depth: 2,
            output_dim: 784,
            output_activation: OutputActivation::Sigmoid,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::Spec("generator dimensions must be positive".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<usize> {
        mlp_dims(self.latent_dim, self.hidden_width, self.depth, self.output_dim)
    }
}

impl Architecture for GeneratorSpec {
    fn param_shapes(&self) -> Vec<(String, Shape)> {
        mlp_shapes("gen", &self.layer_dims())
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        init_mlp("gen", &self.layer_dims(), seed)
    }
}

/// Measurement families, one per row of the model table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementFamily {
    /// Frozen Gaussian matrix.
    RandomLinear,
    LearnedLinear,
    /// MLP with a linear output head.
    LearnedMlp,
    /// MLP with one sigmoid output.
    Discriminator,
    /// MLP with `K+1` softmax outputs; the last class marks generated data.
    Classifier,
}

impl MeasurementFamily {
    pub fn is_linear(self) -> bool {
        matches!(self, MeasurementFamily::RandomLinear | MeasurementFamily::LearnedLinear)
    }

    pub fn is_trainable(self) -> bool {
        self != MeasurementFamily::RandomLinear
    }
}

impl fmt::Display for MeasurementFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementFamily::RandomLinear => "random_linear",
            MeasurementFamily::LearnedLinear => "learned_linear",
            MeasurementFamily::LearnedMlp => "learned_mlp",
            MeasurementFamily::Discriminator => "discriminator",
            MeasurementFamily::Classifier => "classifier",
        })
    }
}

impl FromStr for MeasurementFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random_linear" => MeasurementFamily::RandomLinear,
            "learned_linear" => MeasurementFamily::LearnedLinear,
            "learned_mlp" => MeasurementFamily::LearnedMlp,
            "discriminator" => MeasurementFamily::Discriminator,
            "classifier" => MeasurementFamily::Classifier,
            other => return Err(Error::Spec(format!("unknown measurement family {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSpec {
    pub family: MeasurementFamily,
    /// Number of measurements `C`.
    pub measurement_dim: usize,
    /// Signal dimension `D`.
    pub signal_dim: usize,
    /// Hidden width and depth of the MLP families; ignored by linear ones.
    pub hidden_width: usize,
    pub depth: usize,
    pub leaky_slope: f64,
}

impl MeasurementSpec {
    pub fn linear(family: MeasurementFamily, measurement_dim: usize, signal_dim: usize) -> Self {
        MeasurementSpec {
            family,
            measurement_dim,
            signal_dim,
            hidden_width: 0,
            depth: 0,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn mlp(family: MeasurementFamily, measurement_dim: usize, signal_dim: usize, hidden_width: usize, depth: usize) -> Self {
        MeasurementSpec { family, measurement_dim, signal_dim, hidden_width, depth, leaky_slope: DEFAULT_LEAKY_SLOPE }
    }

    pub fn discriminator(signal_dim: usize, hidden_width: usize, depth: usize) -> Self {
        Self::mlp(MeasurementFamily::Discriminator, 1, signal_dim, hidden_width, depth)
    }

    /// Classifier over `num_classes` real classes plus one for generated data.
    pub fn classifier(num_classes: usize, signal_dim: usize, hidden_width: usize, depth: usize) -> Self {
        Self::mlp(MeasurementFamily::Classifier, num_classes + 1, signal_dim, hidden_width, depth)
    }

    /// Number of real-data classes of a classifier.
    pub fn num_classes(&self) -> Option<usize> {
        (self.family == MeasurementFamily::Classifier).then(|| self.measurement_dim - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measurement_dim == 0 || self.signal_dim == 0 {
            return Err(Error::Spec("measurement and signal dimensions must be positive".into()));
        }
        match self.family {
            MeasurementFamily::Discriminator if self.measurement_dim != 1 => Err(Error::Spec(format!(
                "discriminator measurements are 1-dimensional, got {}",
                self.measurement_dim
            ))),
            MeasurementFamily::Classifier if self.measurement_dim < 3 => Err(Error::Spec(format!(
                "classifier needs at least 2 real classes plus the generated class, got {} outputs",
                self.measurement_dim
            ))),
            f if !f.is_linear() && self.hidden_width == 0 => {
                Err(Error::Spec(format!("{f} measurement needs a positive hidden width")))
            }
            _ => Ok(()),
        }
    }

    fn layer_dims(&self) -> Vec<usize> {
        mlp_dims(self.signal_dim, self.hidden_width, self.depth, self.measurement_dim)
    }
}

impl Architecture for MeasurementSpec {
    fn param_shapes(&self) -> Vec<(String, Shape)> {
        if self.family.is_linear() {
            vec![("meas.F".to_string(), Shape::new(self.measurement_dim, self.signal_dim))]
        } else {
            mlp_shapes("meas", &self.layer_dims())
        }
    }

    fn init_params(&self, seed: u64) -> ParamSet {
        if self.family.is_linear() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let std = 1.0 / (self.measurement_dim as f64).sqrt();
            let mut p = ParamSet::new();
            p.insert("meas.F", gaussian(&mut rng, self.measurement_dim, self.signal_dim, std));
            p
        } else {
            init_mlp("meas", &self.layer_dims(), seed)
        }
    }
}

fn mlp_dims(input: usize, hidden: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, depth));
    dims.push(output);
    dims
}

fn mlp_shapes(prefix: &str, dims: &[usize]) -> Vec<(String, Shape)> {
    let mut out = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        out.push((format!("{prefix}.w{i}"), Shape::new(w[0], w[1])));
        out.push((format!("{prefix}.b{i}"), Shape::new(1, w[1])));
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * std
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn init_mlp(prefix: &str, dims: &[usize], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (i, w) in dims.windows(2).enumerate() {
        let std = 1.0 / (w[0] as f64).sqrt();
        p.insert(format!("{prefix}.w{i}"), gaussian(&mut rng, w[0], w[1], std));
        p.insert(format!("{prefix}.b{i}"), Matrix::zeros(1, w[1]));
    }
    p
}

/// Hidden layers use leaky ReLU; the output layer is left linear.
fn mlp_forward(params: &Bound, prefix: &str, layers: usize, slope: f64, input: &Tensor) -> Result<Tensor> {
    let mut h = input.clone();
    for i in 0..layers {
        let w = params.get(&format!("{prefix}.w{i}"))?;
        let b = params.get(&format!("{prefix}.b{i}"))?;
        h = h.matmul(w)?.add_row(b)?;
        if i + 1 < layers {
            h = h.leaky_relu(slope);
        }
    }
    Ok(h)
}

/// Maps a batch of latents (`B × latent_dim`) to signals (`B × output_dim`).
pub fn generate(theta: &Bound, spec: &GeneratorSpec, z: &Tensor) -> Result<Tensor> {
    z.expect_shape(Shape::new(z.shape().rows, spec.latent_dim), "generate")?;
    let out = mlp_forward(theta, "gen", spec.depth + 1, spec.leaky_slope, z)?;
    Ok(match spec.output_activation {
        OutputActivation::Sigmoid => out.sigmoid(),
        OutputActivation::Identity => out,
    })
}

/// Measurement before the output nonlinearity of the MLP families (the
/// measurement itself for the other families).
pub fn measure_logits(phi: &Bound, spec: &MeasurementSpec, x: &Tensor) -> Result<Tensor> {
    x.expect_shape(Shape::new(x.shape().rows, spec.signal_dim), "measure")?;
    if spec.family.is_linear() {
        return Ok(x.matmul_ext(phi.get("meas.F")?, false, true)?);
    }
    mlp_forward(phi, "meas", spec.depth + 1, spec.leaky_slope, x)
}

/// Measures a batch of signals (`B × D`), giving `B × C`.
pub fn measure(phi: &Bound, spec: &MeasurementSpec, x: &Tensor) -> Result<Tensor> {
    let out = measure_logits(phi, spec, x)?;
    Ok(match spec.family {
        MeasurementFamily::Discriminator => out.sigmoid(),
        MeasurementFamily::Classifier => out.softmax_rows(),
        _ => out,
    })
}
