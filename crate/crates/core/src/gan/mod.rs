//! Generators and critics in the latent space: a conditional WGAN-GP for
//! seen classes, an unconditional-critic WGAN with a weight-space transfer
//! constraint for unseen classes, and synthesis of labeled latent rows.

mod objective;
mod synthesize;
mod train;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, SabrError};
use crate::math::{Matrix, SeededRng};
use crate::nn::{Activation, Mlp};
use crate::optim::{OptimizerConfig, OptimizerKind};

pub use objective::{
    critic_loss_seen, critic_loss_seen_with_alpha, critic_loss_unseen,
    critic_loss_unseen_with_alpha, critic_objective, generator_objective, CriticEval,
    GeneratorEval, SemanticRegularizer,
};
pub use synthesize::{synthesize, SyntheticSet};
pub use train::{
    train_conditional_gan, train_seen_gan, train_transfer_gan, train_unseen_gan, write_trace_csv,
    ConditionalData, GanEpoch, GanRun, GanStep,
};

/// How the transfer term measures the distance between generator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferNorm {
    L2,
    SquaredL2,
}

/// What the unseen generator is conditioned on while it trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenConditioning {
    /// Each noise row is paired with an unseen class drawn uniformly.
    UniformClass,
    /// Every row gets the mean unseen attribute vector; class attributes
    /// are only used at synthesis time.
    MeanAttribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub lambda_gp: f64,
    pub beta: f64,
    pub omega: f64,
    /// Noise width; `None` uses the attribute dimension.
    pub z_dim: Option<usize>,
    pub critic_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub leaky_slope: f64,
    pub generator_output: Activation,
    pub optimizer: OptimizerConfig,
    pub transfer_norm: TransferNorm,
    pub unseen_conditioning: UnseenConditioning,
    /// Warm-start the unseen generator from the seen one.
    pub init_from_seen: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda_gp: 10.0,
            beta: 0.1,
            omega: 0.008,
            z_dim: None,
            critic_steps: 5,
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            checkpoint_every: 5,
            generator_hidden: 2048,
            critic_hidden: 4096,
            leaky_slope: 0.2,
            generator_output: Activation::Relu,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                beta1: 0.5,
                beta2: 0.9,
                eps: 1e-8,
            },
            transfer_norm: TransferNorm::L2,
            unseen_conditioning: UnseenConditioning::UniformClass,
            init_from_seen: true,
        }
    }
}

impl GanConfig {
    /// Narrow networks for synthetic, desk-scale runs.
    pub fn desk() -> Self {
        GanConfig {
            generator_hidden: 128,
            critic_hidden: 128,
            learning_rate: 1e-3,
            epochs: 30,
            // seven seen classes give the generator little to extrapolate
            // from; a stronger semantic pull keeps unseen classes apart
            beta: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SabrError::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        nonneg("lambda_gp", self.lambda_gp)?;
        nonneg("beta", self.beta)?;
        nonneg("omega", self.omega)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SabrError::Config(format!(
                "gan learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.critic_steps == 0 {
            return Err(SabrError::Config("critic_steps must be >= 1".into()));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(SabrError::Config(
                "gan batch_size and checkpoint_every must be positive".into(),
            ));
        }
        if self.generator_hidden == 0 || self.critic_hidden == 0 || self.z_dim == Some(0) {
            return Err(SabrError::Config(
                "gan layer widths must be positive".into(),
            ));
        }
        Activation::LeakyRelu(self.leaky_slope).validate()?;
        self.generator_output.validate()?;
        self.optimizer.validate()
    }

    pub fn resolved_z_dim(&self, attr_dim: usize) -> usize {
        self.z_dim.unwrap_or(attr_dim)
    }
}

/// Maps noise ⊕ class attributes to a latent-space row.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Mlp,
    pub z_dim: usize,
    pub cond_dim: usize,
}

impl Generator {
    pub fn new(
        z_dim: usize,
        cond_dim: usize,
        latent_dim: usize,
        cfg: &GanConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let net = Mlp::new(
            &[z_dim + cond_dim, cfg.generator_hidden, latent_dim],
            Activation::LeakyRelu(cfg.leaky_slope),
            cfg.generator_output,
            rng,
        )?;
        Ok(Generator {
            net,
            z_dim,
            cond_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `G(z ⊕ cond)`.
    pub fn forward(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        if z.cols() != self.z_dim || cond.cols() != self.cond_dim {
            return Err(SabrError::dim(
                "Generator::forward",
                format!("z {} cond {}", z.shape_str(), cond.shape_str()),
                format!("z width {} cond width {}", self.z_dim, self.cond_dim),
            ));
        }
        self.net.forward(&z.concat_cols(cond)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "generator")
            .set_meta("z_dim", self.z_dim)
            .set_meta("cond_dim", self.cond_dim)
            .set_meta("hidden", self.net.hidden.to_tag())
            .set_meta("output", self.net.output.to_tag());
        ck.extend(self.net.to_blobs("generator"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("generator") {
            return Err(SabrError::Data("checkpoint is not a generator".into()));
        }
        let net = Mlp::from_blobs(
            "generator",
            ck,
            Activation::from_tag(ck.require_meta("hidden")?)?,
            Activation::from_tag(ck.require_meta("output")?)?,
        )?;
        let g = Generator {
            net,
            z_dim: ck.parse_meta("z_dim")?,
            cond_dim: ck.parse_meta("cond_dim")?,
        };
        if g.net.input_dim() != g.z_dim + g.cond_dim {
            return Err(SabrError::Data(
                "generator input width disagrees with z_dim + cond_dim".into(),
            ));
        }
        Ok(g)
    }
}

/// Scalar-output critic; conditional critics score `x ⊕ c(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub conditional: bool,
}

impl Critic {
    pub fn new(
        input_dim: usize,
        cond_dim: Option<usize>,
        cfg: &GanConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let net = Mlp::new(
            &[input_dim + cond_dim.unwrap_or(0), cfg.critic_hidden, 1],
            Activation::LeakyRelu(cfg.leaky_slope),
            Activation::Linear,
            rng,
        )?;
        Ok(Critic {
            net,
            conditional: cond_dim.is_some(),
        })
    }

    pub fn from_net(net: Mlp, conditional: bool) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(SabrError::Config(format!(
                "critic must have one output, got {}",
                net.output_dim()
            )));
        }
        Ok(Critic { net, conditional })
    }

    pub fn score(&self, x: &Matrix, cond: Option<&Matrix>) -> Result<Matrix> {
        match (self.conditional, cond) {
            (true, Some(c)) => self.net.forward(&x.concat_cols(c)?),
            (false, None) => self.net.forward(x),
            (true, None) => Err(SabrError::Usage(
                "conditional critic needs a condition".into(),
            )),
            (false, Some(_)) => Err(SabrError::Usage(
                "unconditional critic takes no condition".into(),
            )),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "critic")
            .set_meta("conditional", self.conditional)
            .set_meta("hidden", self.net.hidden.to_tag());
        ck.extend(self.net.to_blobs("critic"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("critic") {
            return Err(SabrError::Data("checkpoint is not a critic".into()));
        }
        let net = Mlp::from_blobs(
            "critic",
            ck,
            Activation::from_tag(ck.require_meta("hidden")?)?,
            Activation::Linear,
        )?;
        Critic::from_net(net, ck.parse_meta("conditional")?)
    }
}

fn check_same_architecture(a: &Generator, b: &Generator) -> Result<()> {
    let shapes = |g: &Generator| g.net.params().iter().map(|m| m.shape()).collect::<Vec<_>>();
    if shapes(a) != shapes(b) {
        return Err(SabrError::dim(
            "transfer penalty",
            format!("{:?}", shapes(a)),
            format!("{:?}", shapes(b)),
        ));
    }
    Ok(())
}

/// Distance between the flattened parameter vectors of two generators.
pub fn transfer_penalty(a: &Generator, b: &Generator, norm: TransferNorm) -> Result<f64> {
    check_same_architecture(a, b)?;
    let sq: f64 = a
        .net
        .flatten()
        .iter()
        .zip(b.net.flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(match norm {
        TransferNorm::L2 => sq.sqrt(),
        TransferNorm::SquaredL2 => sq,
    })
}

/// Gradient of [`transfer_penalty`] with respect to `moving`'s parameters.
/// The L2 norm has no gradient at zero distance; zero is returned there.
pub fn transfer_penalty_grad(
    moving: &Generator,
    anchor: &Generator,
    norm: TransferNorm,
) -> Result<Vec<Matrix>> {
    check_same_architecture(moving, anchor)?;
    let diffs: Vec<Matrix> = moving
        .net
        .params()
        .iter()
        .zip(anchor.net.params())
        .map(|(m, a)| m.sub(a))
        .collect::<Result<_>>()?;
    let scale = match norm {
        TransferNorm::SquaredL2 => 2.0,
        TransferNorm::L2 => {
            let d = diffs
                .iter()
                .map(|m| m.frobenius().powi(2))
                .sum::<f64>()
                .sqrt();
            if d == 0.0 {
                0.0
            } else {
                1.0 / d
            }
        }
    };
    Ok(diffs.into_iter().map(|m| m.scale(scale)).collect())
}
