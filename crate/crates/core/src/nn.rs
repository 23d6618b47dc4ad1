//! Dense layers and multilayer perceptrons on top of the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SabrError};
use crate::math::{Matrix, SeededRng, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Linear,
}

impl Activation {
    pub fn validate(self) -> Result<Self> {
        match self {
            Activation::LeakyRelu(s) if !(s > 0.0 && s < 1.0) => Err(SabrError::Config(format!(
                "leaky_relu slope must lie in (0, 1), got {s}"
            ))),
            other => Ok(other),
        }
    }

    pub fn apply(self, x: &Matrix) -> Matrix {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::LeakyRelu(s) => x.map(|v| if v > 0.0 { v } else { s * v }),
            Activation::Linear => x.clone(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Linear => x,
        }
    }

    pub fn to_tag(self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            Activation::Linear => "linear".into(),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            t => match t.strip_prefix("leaky_relu:") {
                Some(s) => s
                    .parse()
                    .map(Activation::LeakyRelu)
                    .map_err(|_| SabrError::Config(format!("bad activation tag `{t}`")))?
                    .validate(),
                None => Err(SabrError::Config(format!("bad activation tag `{t}`"))),
            },
        }
    }
}

/// Elementwise activation with slope validation.
pub fn activation(x: &Matrix, kind: Activation) -> Result<Matrix> {
    Ok(kind.validate()?.apply(x))
}

/// `x·W + b`.
pub fn affine(x: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if weight.cols() != bias.len() {
        return Err(SabrError::dim(
            "affine",
            weight.shape_str(),
            format!("bias of length {}", bias.len()),
        ));
    }
    x.matmul(weight)?.add_row(&Matrix::row_vector(bias))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        Dense {
            weight: rng.normal_matrix(fan_in, fan_out, std),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward network: `hidden` activation between layers, `output` on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Parameter handles of an [`Mlp`] placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub vars: Vec<(Var, Var)>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(SabrError::Config(format!("invalid layer sizes {dims:?}")));
        }
        hidden.validate()?;
        output.validate()?;
        let layers = dims
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        Ok(Mlp {
            layers,
            hidden,
            output,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(SabrError::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(SabrError::dim(
                    "Mlp::from_layers",
                    pair[0].weight.shape_str(),
                    pair[1].weight.shape_str(),
                ));
            }
        }
        for l in &layers {
            if l.bias.shape() != (1, l.fan_out()) {
                return Err(SabrError::dim(
                    "Mlp::from_layers",
                    l.weight.shape_str(),
                    l.bias.shape_str(),
                ));
            }
        }
        Ok(Mlp {
            layers,
            hidden: hidden.validate()?,
            output: output.validate()?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    fn activation_for(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(SabrError::dim(
                "Mlp::forward",
                x.shape_str(),
                format!("input width {}", self.input_dim()),
            ));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            h = self.activation_for(i).apply(&h);
        }
        Ok(h)
    }

    /// Places parameters on the tape as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, true)
    }

    /// Places parameters as constants (frozen network).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.var(l.weight.clone()), tape.var(l.bias.clone()))
                } else {
                    (
                        tape.constant(l.weight.clone()),
                        tape.constant(l.bias.clone()),
                    )
                }
            })
            .collect();
        BoundMlp {
            vars,
            hidden: self.hidden,
            output: self.output,
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// All weights and biases concatenated in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }

    /// Named blobs `{prefix}.{i}.weight` / `{prefix}.{i}.bias` for checkpoints.
    pub fn to_blobs(&self, prefix: &str) -> Vec<(String, Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), l.weight.clone()),
                    (format!("{prefix}.{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn from_blobs(
        prefix: &str,
        blobs: &crate::checkpoint::Checkpoint,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(weight) = blobs.blob(&format!("{prefix}.{i}.weight")) else {
                break;
            };
            let bias = blobs.require(&format!("{prefix}.{i}.bias"))?;
            layers.push(Dense {
                weight: weight.clone(),
                bias: bias.clone(),
            });
        }
        Mlp::from_layers(layers, hidden, output)
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let n = self.vars.len();
        for (i, &(w, b)) in self.vars.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            let act = if i + 1 == n { self.output } else { self.hidden };
            h = act.record(tape, h);
        }
        Ok(h)
    }

    /// Parameter handles in the same order as [`Mlp::params`].
    pub fn param_vars(&self) -> Vec<Var> {
        self.vars.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_zero_weights() {
        let x = Matrix::row_vector(&[1.0, 2.0]);
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(affine(&x, &eye, &[0.0, 0.0]).unwrap().data(), &[1.0, 2.0]);
        let zero = Matrix::zeros(2, 2);
        assert_eq!(affine(&x, &zero, &[3.0, 4.0]).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_shape_error_names_shapes() {
        let err = affine(&Matrix::zeros(1, 3), &Matrix::zeros(2, 2), &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn activation_values() {
        let x = Matrix::scalar(-2.0);
        assert_eq!(activation(&x, Activation::Relu).unwrap().get(0, 0), 0.0);
        assert_eq!(
            activation(&x, Activation::LeakyRelu(0.2))
                .unwrap()
                .get(0, 0),
            -0.4
        );
        assert_eq!(activation(&x, Activation::Linear).unwrap().get(0, 0), -2.0);
        assert!(matches!(
            activation(&x, Activation::LeakyRelu(1.5)),
            Err(SabrError::Config(_))
        ));
        assert!(activation(&x, Activation::LeakyRelu(0.0)).is_err());
    }

    #[test]
    fn relu_nonnegative_on_random_entries() {
        let mut rng = SeededRng::new(3);
        let x = rng.normal_matrix(10, 100, 5.0);
        assert!(activation(&x, Activation::Relu)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn tape_forward_equals_plain_forward() {
        let mut rng = SeededRng::new(11);
        let mlp = Mlp::new(
            &[4, 6, 3],
            Activation::LeakyRelu(0.2),
            Activation::Relu,
            &mut rng,
        )
        .unwrap();
        let x = rng.normal_matrix(5, 4, 1.0);
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = bound.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &mlp.forward(&x).unwrap());
    }

    #[test]
    fn activation_tags_round_trip() {
        for a in [
            Activation::Relu,
            Activation::Linear,
            Activation::LeakyRelu(0.2),
        ] {
            assert_eq!(Activation::from_tag(&a.to_tag()).unwrap(), a);
        }
    }
}
