use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabelId;
use crate::error::{Result, SabrError};
use crate::math::{softmax_rows, Matrix, SeededRng, Tape};
use crate::optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Upper bound on real seen rows per class in the generalized setting.
    pub per_class_cap: Option<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            per_class_cap: None,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SabrError::Config(format!(
                "classifier learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.per_class_cap == Some(0) {
            return Err(SabrError::Config(
                "classifier batch_size and per_class_cap must be positive".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// Multinomial logistic regression over an ordered label universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub weight: Matrix,
    pub bias: Matrix,
    pub universe: Vec<LabelId>,
}

impl SoftmaxClassifier {
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Top-1 label per row; ties go to the earliest label in the universe.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<LabelId>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .into_par_iter()
            .map(|r| self.universe[argmax(logits.row(r))])
            .collect())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fits a softmax classifier on latent rows by minibatch descent on the mean
/// cross-entropy. Weights start at zero.
pub fn train_final_classifier(
    features: &Matrix,
    labels: &[LabelId],
    universe: &[LabelId],
    cfg: &ClassifierConfig,
) -> Result<SoftmaxClassifier> {
    cfg.validate()?;
    if labels.is_empty() || universe.is_empty() {
        return Err(SabrError::Usage(
            "final classifier needs training rows and labels".into(),
        ));
    }
    if features.rows() != labels.len() {
        return Err(SabrError::dim(
            "train_final_classifier",
            features.shape_str(),
            format!("{} labels", labels.len()),
        ));
    }
    let targets: Vec<usize> = labels
        .iter()
        .map(|l| {
            universe.iter().position(|u| u == l).ok_or_else(|| {
                SabrError::Usage(format!("training label {l} is outside the label universe"))
            })
        })
        .collect::<Result<_>>()?;
    let k = universe.len();
    let mut clf = SoftmaxClassifier {
        weight: Matrix::zeros(features.cols(), k),
        bias: Matrix::zeros(1, k),
        universe: universe.to_vec(),
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = SeededRng::new(cfg.seed).substream("shuffle");
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let w = tape.var(clf.weight.clone());
            let b = tape.var(clf.bias.clone());
            let x = tape.constant(features.select_rows(batch));
            let logits = tape.affine(x, w, b)?;
            let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let loss = tape.softmax_cross_entropy(logits, &t)?;
            let grads = tape.backward(loss)?;
            let g = [
                grads.get_or_zeros(w, clf.weight.shape()),
                grads.get_or_zeros(b, clf.bias.shape()),
            ];
            opt.step(&mut [&mut clf.weight, &mut clf.bias], &g)?;
        }
    }
    Ok(clf)
}

/// Keeps at most `cap` rows per label, first occurrences first.
pub fn cap_per_class(
    features: &Matrix,
    labels: &[LabelId],
    cap: Option<usize>,
) -> (Matrix, Vec<LabelId>) {
    let Some(cap) = cap else {
        return (features.clone(), labels.to_vec());
    };
    let mut seen = std::collections::HashMap::new();
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| {
            let c = seen.entry(labels[i]).or_insert(0usize);
            *c += 1;
            *c <= cap
        })
        .collect();
    (
        features.select_rows(&keep),
        keep.iter().map(|&i| labels[i]).collect(),
    )
}
