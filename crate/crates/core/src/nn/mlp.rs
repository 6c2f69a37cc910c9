//! Fully connected networks with leaky-ReLU hidden activations.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::tape::{sigmoid_scalar, Gradients, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutputActivation::Identity),
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            other => Err(Error::Config(format!("unknown output activation '{other}'"))),
        }
    }
}

/// One affine layer. `weight` is `out × in`, `bias` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Whether a forward pass records parameters as gradient-carrying leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Track,
    Frozen,
}

/// Leaf handles for the parameters registered during one forward pass,
/// in the order of [`Parameterized::params`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn extend(&mut self, other: ParamVars) {
        self.0.extend(other.0);
    }

    /// Collect gradients for every registered parameter (zeros if unused).
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Vec<Array2<f64>> {
        self.0.iter().map(|v| grads.get_or_zeros(tape, *v)).collect()
    }
}

/// Anything exposing a flat, ordered list of trainable matrices.
pub trait Parameterized {
    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    leaky_slope: f64,
    output: OutputActivation,
}

impl Mlp {
    /// Build from layer widths `[in, h1, ..., out]` with Kaiming-uniform weights
    /// (fan-in scaled, leaky-ReLU gain) and zero biases.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        leaky_slope: f64,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let gain = 2.0 / (1.0 + leaky_slope * leaky_slope);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (3.0 * gain / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array2::zeros((1, fan_out)),
                }
            })
            .collect();
        Ok(Self {
            layers,
            leaky_slope,
            output,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, leaky_slope: f64, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.dim() != (1, l.output_dim()) {
                return Err(Error::shape("mlp bias", format!("1x{}", l.output_dim()), format!("{:?}", l.bias.dim())));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.input_dim() != l.output_dim() {
                    return Err(Error::shape(
                        "mlp layer chain",
                        l.output_dim(),
                        next.input_dim(),
                    ));
                }
            }
        }
        Ok(Self {
            layers,
            leaky_slope,
            output,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Zero the final layer so the network outputs exactly zero (pre-activation).
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::shape("mlp input", self.input_dim(), cols));
        }
        Ok(())
    }

    /// Forward pass without recording, returning pre-activation outputs.
    pub fn eval_logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                let slope = self.leaky_slope;
                z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = self.eval_logits(x)?;
        if self.output == OutputActivation::Sigmoid {
            out.mapv_inplace(sigmoid_scalar);
        }
        Ok(out)
    }

    fn register(&self, tape: &mut Tape, mode: ParamMode) -> ParamVars {
        let mut vars = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            for p in [&layer.weight, &layer.bias] {
                let v = match mode {
                    ParamMode::Track => tape.var(p.clone()),
                    ParamMode::Frozen => tape.constant(p.clone()),
                };
                vars.push(v);
            }
        }
        ParamVars(vars)
    }

    /// Recorded forward pass up to (not including) the output activation.
    pub fn forward_logits(&self, tape: &mut Tape, x: Var, mode: ParamMode) -> Result<(Var, ParamVars)> {
        self.check_input(tape.value(x).ncols())?;
        let vars = self.register(tape, mode);
        let mut h = x;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            let z = tape.matmul_t(h, vars.0[2 * i]);
            let z = tape.add_row(z, vars.0[2 * i + 1]);
            h = if i < last {
                tape.leaky_relu(z, self.leaky_slope)
            } else {
                z
            };
        }
        Ok((h, vars))
    }

    /// Recorded forward pass including the output activation.
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: ParamMode) -> Result<(Var, ParamVars)> {
        let (h, vars) = self.forward_logits(tape, x, mode)?;
        let out = match self.output {
            OutputActivation::Identity => h,
            OutputActivation::Sigmoid => tape.sigmoid(h),
        };
        Ok((out, vars))
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Array2<f64>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Flatten an `n × 1` column into a vector.
pub fn column_to_vec(a: &Array2<f64>) -> Vec<f64> {
    a.index_axis(Axis(1), 0).to_vec()
}
