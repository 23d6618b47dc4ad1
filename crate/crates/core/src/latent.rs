//! Latent space ψ with a classifier head and a semantic regressor head,
//! trained jointly on seen classes.
//!
//! The joint objective is `L_C + γ·L_S` where `L_C` is the mean softmax
//! cross-entropy of the classifier over seen labels and `L_S` is a softmax
//! cross-entropy over *similarities* between the regressor output and every
//! seen-class attribute vector:
//!
//! ```text
//! L_S = mean_i −log( exp⟨f_r(ψ(x_i)), c(y_i)⟩ / Σ_{y∈S} exp⟨f_r(ψ(x_i)), c(y)⟩ )
//! ```

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, LabelId, LabelSpace};
use crate::error::{Result, SabrError};
use crate::math::{softmax_rows, Matrix, SeededRng, Tape, Var};
use crate::nn::{Activation, BoundMlp, Mlp};
use crate::optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    Cosine,
    /// Negative squared Euclidean distance.
    NegEuclidean,
}

impl Similarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Similarity::Dot => "dot",
            Similarity::Cosine => "cosine",
            Similarity::NegEuclidean => "neg_euclidean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Similarity::Dot),
            "cosine" => Ok(Similarity::Cosine),
            "neg_euclidean" => Ok(Similarity::NegEuclidean),
            other => Err(SabrError::Config(format!("unknown similarity `{other}`"))),
        }
    }

    /// `n×k` similarity scores between prediction rows and class rows.
    pub fn scores(self, tape: &mut Tape, pred: Var, classes: &Matrix) -> Result<Var> {
        let (n, k) = (tape.value(pred).rows(), classes.rows());
        if tape.value(pred).cols() != classes.cols() {
            return Err(SabrError::dim(
                "semantic similarity",
                tape.value(pred).shape_str(),
                classes.shape_str(),
            ));
        }
        match self {
            Similarity::Dot => {
                let ct = tape.constant(classes.transpose());
                tape.matmul(pred, ct)
            }
            Similarity::Cosine => {
                let mut unit = classes.transpose();
                for c in 0..k {
                    let norm = classes
                        .row(c)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-12);
                    for r in 0..unit.rows() {
                        let v = unit.get(r, c) / norm;
                        unit.set(r, c, v);
                    }
                }
                let norms = tape.row_norm(pred);
                let norms = tape.add_scalar(norms, 1e-12);
                let norms = tape.broadcast_cols(norms, classes.cols())?;
                let pred_unit = tape.div(pred, norms)?;
                let ct = tape.constant(unit);
                tape.matmul(pred_unit, ct)
            }
            Similarity::NegEuclidean => {
                let ct = tape.constant(classes.transpose());
                let cross = tape.matmul(pred, ct)?;
                let cross2 = tape.scale(cross, 2.0);
                let sq = tape.square(pred);
                let row_sq = tape.sum_cols(sq);
                let row_sq = tape.broadcast_cols(row_sq, k)?;
                let class_sq: Vec<f64> = (0..k)
                    .map(|c| -classes.row(c).iter().map(|v| v * v).sum::<f64>())
                    .collect();
                let class_sq = tape.constant(Matrix::row_vector(&class_sq));
                let partial = tape.sub(cross2, row_sq)?;
                debug_assert_eq!(tape.value(partial).rows(), n);
                tape.add_row(partial, class_sq)
            }
        }
    }
}

/// Mean softmax cross-entropy of `head(latent)` against head indices.
pub fn record_classifier_loss(
    tape: &mut Tape,
    head: &BoundMlp,
    latent: Var,
    targets: &[usize],
) -> Result<Var> {
    let logits = head.forward(tape, latent)?;
    tape.softmax_cross_entropy(logits, targets)
}

/// Similarity-based cross-entropy of `head(latent)` against `class_attrs` rows.
pub fn record_semantic_loss(
    tape: &mut Tape,
    head: &BoundMlp,
    latent: Var,
    class_attrs: &Matrix,
    targets: &[usize],
    similarity: Similarity,
) -> Result<Var> {
    let pred = head.forward(tape, latent)?;
    let scores = similarity.scores(tape, pred, class_attrs)?;
    tape.softmax_cross_entropy(scores, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentTrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub h1: usize,
    pub h2: usize,
    pub similarity: Similarity,
    pub optimizer: OptimizerConfig,
}

impl Default for LatentTrainConfig {
    fn default() -> Self {
        LatentTrainConfig {
            learning_rate: 0.001,
            gamma: 0.01,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            h1: 2048,
            h2: 1024,
            similarity: Similarity::Dot,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl LatentTrainConfig {
    /// Narrow network for synthetic, desk-scale runs.
    pub fn desk() -> Self {
        LatentTrainConfig {
            h1: 64,
            h2: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SabrError::Config(format!(
                "latent learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(SabrError::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 || self.h1 == 0 || self.h2 == 0 {
            return Err(SabrError::Config(
                "latent batch_size, h1 and h2 must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// ψ plus the classifier (`f_c`) and regressor (`f_r`) heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub psi: Mlp,
    pub classifier: Mlp,
    pub regressor: Mlp,
    pub gamma: f64,
    pub similarity: Similarity,
    /// Seen labels in classifier-head order.
    pub seen: Vec<LabelId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub classifier_loss: f64,
    pub semantic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct LatentTraining {
    pub model: LatentModel,
    pub trace: Vec<LatentEpoch>,
}

impl LatentModel {
    pub fn new(
        d_feat: usize,
        d_attr: usize,
        seen: Vec<LabelId>,
        cfg: &LatentTrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if seen.is_empty() {
            return Err(SabrError::Usage(
                "latent model needs at least one seen class".into(),
            ));
        }
        let mut rng = SeededRng::new(cfg.seed).substream("init");
        Ok(LatentModel {
            psi: Mlp::new(
                &[d_feat, cfg.h1, cfg.h2],
                Activation::Relu,
                Activation::Relu,
                &mut rng,
            )?,
            classifier: Mlp::new(
                &[cfg.h2, seen.len()],
                Activation::Linear,
                Activation::Linear,
                &mut rng,
            )?,
            regressor: Mlp::new(
                &[cfg.h2, d_attr],
                Activation::Linear,
                Activation::Linear,
                &mut rng,
            )?,
            gamma: cfg.gamma,
            similarity: cfg.similarity,
            seen,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.psi.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.psi.input_dim()
    }

    pub fn attr_dim(&self) -> usize {
        self.regressor.output_dim()
    }

    /// ψ(x).
    pub fn psi_forward(&self, x: &Matrix) -> Result<Matrix> {
        self.psi.forward(x)
    }

    /// Softmax class probabilities of `f_c` on latent rows.
    pub fn classifier_probs(&self, latent: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.classifier.forward(latent)?))
    }

    pub fn head_targets(&self, labels: &[LabelId]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.seen.iter().position(|s| s == l).ok_or_else(|| {
                    SabrError::Usage(format!("label {l} is not a seen class of this model"))
                })
            })
            .collect()
    }

    /// Mean cross-entropy of `f_c` on latent rows.
    pub fn loss_classifier(&self, latent: &Matrix, labels: &[LabelId]) -> Result<f64> {
        let targets = self.head_targets(labels)?;
        let mut tape = Tape::new();
        let head = self.classifier.bind_frozen(&mut tape);
        let x = tape.constant(latent.clone());
        let l = record_classifier_loss(&mut tape, &head, x, &targets)?;
        Ok(tape.scalar(l))
    }

    /// Similarity cross-entropy of `f_r` against the seen attributes of `space`.
    pub fn loss_semantic(
        &self,
        latent: &Matrix,
        labels: &[LabelId],
        space: &LabelSpace,
    ) -> Result<f64> {
        if space.attr_dim() != self.attr_dim() {
            return Err(SabrError::dim(
                "loss_semantic",
                format!("regressor width {}", self.attr_dim()),
                format!("attribute dim {}", space.attr_dim()),
            ));
        }
        let targets = self.head_targets(labels)?;
        let attrs = space.attributes_of(&self.seen);
        let mut tape = Tape::new();
        let head = self.regressor.bind_frozen(&mut tape);
        let x = tape.constant(latent.clone());
        let l = record_semantic_loss(&mut tape, &head, x, &attrs, &targets, self.similarity)?;
        Ok(tape.scalar(l))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "latent")
            .set_meta("gamma", self.gamma)
            .set_meta("similarity", self.similarity.as_str())
            .set_meta(
                "seen",
                self.seen
                    .iter()
                    .map(|l| l.0.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        ck.extend(self.psi.to_blobs("psi"));
        ck.extend(self.classifier.to_blobs("classifier"));
        ck.extend(self.regressor.to_blobs("regressor"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("latent") {
            return Err(SabrError::Data("checkpoint is not a latent model".into()));
        }
        let seen = ck
            .require_meta("seen")?
            .split(',')
            .map(|s| s.parse().map(LabelId))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| SabrError::Data("malformed `seen` metadata".into()))?;
        Ok(LatentModel {
            psi: Mlp::from_blobs("psi", ck, Activation::Relu, Activation::Relu)?,
            classifier: Mlp::from_blobs("classifier", ck, Activation::Linear, Activation::Linear)?,
            regressor: Mlp::from_blobs("regressor", ck, Activation::Linear, Activation::Linear)?,
            gamma: ck.parse_meta("gamma")?,
            similarity: Similarity::parse(ck.require_meta("similarity")?)?,
            seen,
        })
    }

    /// ψ, then `f_c`, then `f_r` parameters.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.psi.params();
        p.extend(self.classifier.params());
        p.extend(self.regressor.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.psi.params_mut();
        p.extend(self.classifier.params_mut());
        p.extend(self.regressor.params_mut());
        p
    }

    /// `L_C + γ·L_S` on raw features, evaluated forward only.
    pub fn loss_total(&self, x: &Matrix, labels: &[LabelId], space: &LabelSpace) -> Result<f64> {
        let latent = self.psi_forward(x)?;
        Ok(self.loss_classifier(&latent, labels)?
            + self.gamma * self.loss_semantic(&latent, labels, space)?)
    }

    /// Batch objective and its gradient in [`LatentModel::params`] order.
    /// `targets` are classifier-head indices, `attrs` the seen attributes in
    /// head order.
    pub fn batch_objective(
        &self,
        x: &Matrix,
        targets: &[usize],
        attrs: &Matrix,
    ) -> Result<LatentObjective> {
        let mut tape = Tape::new();
        let psi = self.psi.bind(&mut tape);
        let fc = self.classifier.bind(&mut tape);
        let fr = self.regressor.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let latent = psi.forward(&mut tape, xv)?;
        let lc = record_classifier_loss(&mut tape, &fc, latent, targets)?;
        let ls = record_semantic_loss(&mut tape, &fr, latent, attrs, targets, self.similarity)?;
        let weighted = tape.scale(ls, self.gamma);
        let loss = tape.add(lc, weighted)?;
        let grads = tape.backward(loss)?;
        let vars: Vec<Var> = [psi.param_vars(), fc.param_vars(), fr.param_vars()].concat();
        Ok(LatentObjective {
            loss: tape.scalar(loss),
            classifier_loss: tape.scalar(lc),
            semantic_loss: tape.scalar(ls),
            grads: vars
                .iter()
                .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LatentObjective {
    pub loss: f64,
    pub classifier_loss: f64,
    pub semantic_loss: f64,
    pub grads: Vec<Matrix>,
}

/// Minimizes `L_C + γ·L_S` over the seen-train rows by minibatch descent.
pub fn train_latent(ds: &Dataset, cfg: &LatentTrainConfig) -> Result<LatentTraining> {
    cfg.validate()?;
    let space = ds.label_space();
    let train = ds.seen_train();
    if train.labels.is_empty() {
        return Err(SabrError::Usage(
            "no seen-train rows to fit the latent space".into(),
        ));
    }
    let mut model = LatentModel::new(
        ds.feature_dim(),
        space.attr_dim(),
        space.seen().to_vec(),
        cfg,
    )?;
    let targets = model.head_targets(&train.labels)?;
    let attrs = space.attributes_of(&model.seen);

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut shuffle = SeededRng::new(cfg.seed).substream("shuffle");
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        shuffle.shuffle(&mut order);
        let (mut sum_total, mut sum_c, mut sum_s) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let x = train.features.select_rows(batch);
            let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();

            let obj = model.batch_objective(&x, &t, &attrs)?;
            if !obj.loss.is_finite() {
                return Err(SabrError::Numeric(format!(
                    "latent loss diverged at epoch {epoch}"
                )));
            }
            opt.step(&mut model.params_mut(), &obj.grads)?;

            let w = batch.len() as f64;
            sum_total += obj.loss * w;
            sum_c += obj.classifier_loss * w;
            sum_s += obj.semantic_loss * w;
        }
        let n = targets.len() as f64;
        trace.push(LatentEpoch {
            epoch: epoch + 1,
            loss: sum_total / n,
            classifier_loss: sum_c / n,
            semantic_loss: sum_s / n,
        });
        log::debug!("latent epoch {} loss {:.5}", epoch + 1, sum_total / n);
    }
    Ok(LatentTraining { model, trace })
}
