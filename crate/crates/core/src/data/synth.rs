use serde::{Deserialize, Serialize};

use super::{Dataset, LabelId, LabelSpace, Role};
use crate::error::{Result, SabrError};
use crate::math::{Matrix, SeededRng};

/// Parameters of the synthetic generator.
///
/// Class `k` gets a random unit attribute vector `c_k`; its instances are
/// `M·c_k + noise_sigma·N(0, I)` for one fixed Gaussian map `M`, so features
/// are a linear function of attributes plus isotropic noise. The first
/// `n_seen` classes are seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_seen: usize,
    /// Training rows per seen class and unlabeled rows per unseen class.
    pub per_class: usize,
    /// Test rows per class (both seen and unseen).
    pub test_per_class: usize,
    pub d_feat: usize,
    pub d_attr: usize,
    pub noise_sigma: f64,
    /// Std of Gaussian noise added to the *published* attribute vectors
    /// (features are still generated from the clean ones).
    pub attribute_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            n_seen: 7,
            per_class: 100,
            test_per_class: 50,
            d_feat: 32,
            d_attr: 8,
            noise_sigma: 0.1,
            attribute_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen == 0 || self.n_seen >= self.n_classes {
            return Err(SabrError::Config(format!(
                "need 0 < n_seen < n_classes, got n_seen={} n_classes={}",
                self.n_seen, self.n_classes
            )));
        }
        if self.per_class == 0 || self.d_feat == 0 || self.d_attr == 0 {
            return Err(SabrError::Config(
                "per_class, d_feat and d_attr must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite())
            || !(self.attribute_noise >= 0.0 && self.attribute_noise.is_finite())
        {
            return Err(SabrError::Config(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Clean class attributes and means behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub attributes: Matrix,
    pub means: Matrix,
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    synth_dataset_with_truth(cfg).map(|(ds, _)| ds)
}

pub fn synth_dataset_with_truth(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    let mut attr_rng = root.substream("attributes");
    let mut attrs = attr_rng.normal_matrix(cfg.n_classes, cfg.d_attr, 1.0);
    for r in 0..cfg.n_classes {
        let row = attrs.row_mut(r);
        let norm = row
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let map = root
        .substream("map")
        .normal_matrix(cfg.d_attr, cfg.d_feat, 1.0);
    let means = attrs.matmul(&map)?;

    let mut noise = root.substream("noise");
    let total_rows = cfg.n_classes * (cfg.per_class + cfg.test_per_class);
    let mut data = Vec::with_capacity(total_rows * cfg.d_feat);
    let mut labels = Vec::with_capacity(total_rows);
    let mut roles = Vec::with_capacity(total_rows);
    for k in 0..cfg.n_classes {
        let seen = k < cfg.n_seen;
        let (bulk_role, test_role) = if seen {
            (Role::SeenTrain, Role::TestSeen)
        } else {
            (Role::UnseenUnlabeled, Role::TestUnseen)
        };
        for i in 0..cfg.per_class + cfg.test_per_class {
            let role = if i < cfg.per_class {
                bulk_role
            } else {
                test_role
            };
            for &m in means.row(k) {
                data.push(m + cfg.noise_sigma * noise.normal());
            }
            labels.push((role != Role::UnseenUnlabeled).then_some(LabelId(k)));
            roles.push(role);
        }
    }
    let features = Matrix::from_vec(labels.len(), cfg.d_feat, data)?;
    let ids = (0..labels.len()).map(|i| format!("r{i}")).collect();

    let published = if cfg.attribute_noise > 0.0 {
        let jitter = root.substream("attribute_noise").normal_matrix(
            cfg.n_classes,
            cfg.d_attr,
            cfg.attribute_noise / (cfg.d_attr as f64).sqrt(),
        );
        attrs.add(&jitter)?
    } else {
        attrs.clone()
    };
    let names = (0..cfg.n_classes).map(|k| format!("class{k}")).collect();
    let space = LabelSpace::new(
        names,
        published,
        (0..cfg.n_seen).map(LabelId).collect(),
        (cfg.n_seen..cfg.n_classes).map(LabelId).collect(),
    )?;
    let ds = Dataset::new(features, ids, labels, roles, space)?;
    Ok((
        ds,
        SynthTruth {
            attributes: attrs,
            means,
        },
    ))
}
