//! Synthesize unseen rows from a generator, fit the final classifiers and
//! score them under both protocols.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledRows};
use crate::error::{Result, SabrError};
use crate::eval::{
    cap_per_class, evaluate_gzsl, evaluate_zsl, train_final_classifier, ClassifierConfig,
    EvalReport, Setting, SoftmaxClassifier,
};
use crate::gan::{synthesize, Generator, SyntheticSet};
use crate::latent::LatentModel;
use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub classifier: ClassifierConfig,
    /// Synthesized rows per unseen class.
    pub n_per_class: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            classifier: ClassifierConfig::default(),
            n_per_class: 200,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(SabrError::Config(
                "protocol n_per_class must be positive".into(),
            ));
        }
        self.classifier.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub synthetic: SyntheticSet,
    pub zsl_classifier: Option<SoftmaxClassifier>,
    pub gzsl_classifier: SoftmaxClassifier,
    pub zsl: Option<EvalReport>,
    pub gzsl: EvalReport,
}

/// Maps labeled rows through ψ.
pub fn to_latent(model: &LatentModel, rows: &LabeledRows) -> Result<LabeledRows> {
    Ok(LabeledRows {
        features: model.psi_forward(&rows.features)?,
        labels: rows.labels.clone(),
    })
}

/// Synthesizes `U` from `generator`, then trains and scores the classifiers.
/// The conventional protocol is skipped when `with_zsl` is false.
pub fn run_protocol(
    model: &LatentModel,
    ds: &Dataset,
    generator: &Generator,
    cfg: &ProtocolConfig,
    with_zsl: bool,
) -> Result<ProtocolOutcome> {
    let space = ds.label_space();
    let synthetic = synthesize(generator, space, space.unseen(), cfg.n_per_class, cfg.seed)?;
    evaluate_synthetic(model, ds, synthetic, cfg, with_zsl)
}

/// Trains and scores the classifiers on already synthesized unseen rows.
pub fn evaluate_synthetic(
    model: &LatentModel,
    ds: &Dataset,
    synthetic: SyntheticSet,
    cfg: &ProtocolConfig,
    with_zsl: bool,
) -> Result<ProtocolOutcome> {
    let space = ds.label_space();
    let test_unseen = to_latent(model, &ds.test_unseen())?;

    let (zsl_classifier, zsl) = if with_zsl {
        let clf = train_final_classifier(
            &synthetic.features,
            &synthetic.labels,
            &Setting::Zsl.universe(space),
            &cfg.classifier,
        )?;
        let report = evaluate_zsl(&clf, &test_unseen, space)?;
        (Some(clf), Some(report))
    } else {
        (None, None)
    };

    let seen = to_latent(model, &ds.seen_train())?;
    let (seen_x, seen_y) =
        cap_per_class(&seen.features, &seen.labels, cfg.classifier.per_class_cap);
    let x = Matrix::vstack(&[&seen_x, &synthetic.features])?;
    let mut y = seen_y;
    y.extend_from_slice(&synthetic.labels);
    let gzsl_classifier =
        train_final_classifier(&x, &y, &Setting::Gzsl.universe(space), &cfg.classifier)?;
    let test_seen = to_latent(model, &ds.test_seen())?;
    let gzsl = evaluate_gzsl(&gzsl_classifier, &test_seen, &test_unseen, space)?;
    Ok(ProtocolOutcome {
        synthetic,
        zsl_classifier,
        gzsl_classifier,
        zsl,
        gzsl,
    })
}
