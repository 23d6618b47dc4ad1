//! Datasets: label spaces with class attributes, per-row roles, ingestion,
//! synthetic generation, class-level folds and unlabeled subsampling.

mod io;
mod split;
mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use io::{
    load_attributes, load_dataset, load_features, load_split, write_attributes_csv, write_dataset,
    write_features_bin, write_features_csv, write_split_csv, DatasetPaths, FEATURES_MAGIC,
};
pub use split::{fold_dataset, split_cv_folds, subsample_unlabeled, CvSplit, Fold, FoldOptions};
pub use synth::{synth_dataset, synth_dataset_with_truth, SynthConfig, SynthTruth};

use crate::error::{Result, SabrError};
use crate::math::Matrix;

/// Index of a label in [`LabelSpace::names`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelId(pub usize);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Seen and unseen class sets with one attribute vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    names: Vec<String>,
    attributes: Matrix,
    seen: Vec<LabelId>,
    unseen: Vec<LabelId>,
}

impl LabelSpace {
    /// `attributes` row `i` belongs to `names[i]`. Every name must be either
    /// seen or unseen, never both.
    pub fn new(
        names: Vec<String>,
        attributes: Matrix,
        seen: Vec<LabelId>,
        unseen: Vec<LabelId>,
    ) -> Result<Self> {
        if names.len() != attributes.rows() {
            return Err(SabrError::dim(
                "LabelSpace::new",
                format!("{} names", names.len()),
                format!("{} attribute rows", attributes.rows()),
            ));
        }
        let mut uniq = BTreeSet::new();
        for n in &names {
            if !uniq.insert(n) {
                return Err(SabrError::Data(format!("duplicate label `{n}`")));
            }
        }
        let mut assigned = vec![0u8; names.len()];
        for l in seen.iter().chain(&unseen) {
            let slot = assigned
                .get_mut(l.0)
                .ok_or_else(|| SabrError::Data(format!("label id {} out of range", l.0)))?;
            *slot += 1;
            if *slot > 1 {
                return Err(SabrError::Data(format!(
                    "label `{}` is both seen and unseen (or listed twice)",
                    names[l.0]
                )));
            }
        }
        if !attributes.is_finite() {
            return Err(SabrError::Data("non-finite attribute value".into()));
        }
        Ok(LabelSpace {
            names,
            attributes,
            seen,
            unseen,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, l: LabelId) -> &str {
        &self.names[l.0]
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.names.iter().position(|n| n == name).map(LabelId)
    }

    pub fn seen(&self) -> &[LabelId] {
        &self.seen
    }

    pub fn unseen(&self) -> &[LabelId] {
        &self.unseen
    }

    /// `S ∪ U` with seen labels first.
    pub fn all(&self) -> Vec<LabelId> {
        self.seen.iter().chain(&self.unseen).copied().collect()
    }

    pub fn is_seen(&self, l: LabelId) -> bool {
        self.seen.contains(&l)
    }

    pub fn is_unseen(&self, l: LabelId) -> bool {
        self.unseen.contains(&l)
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    pub fn attribute(&self, l: LabelId) -> &[f64] {
        self.attributes.row(l.0)
    }

    /// Stacked attribute rows for `labels`, in order.
    pub fn attributes_of(&self, labels: &[LabelId]) -> Matrix {
        let idx: Vec<usize> = labels.iter().map(|l| l.0).collect();
        self.attributes.select_rows(&idx)
    }

    /// Position of `l` within `S`, i.e. the classifier-head index.
    pub fn seen_index(&self, l: LabelId) -> Option<usize> {
        self.seen.iter().position(|&s| s == l)
    }

    /// Copy with a different attribute matrix (same shape).
    pub fn with_attributes(&self, attributes: Matrix) -> Result<Self> {
        if !attributes.same_shape(&self.attributes) {
            return Err(SabrError::dim(
                "LabelSpace::with_attributes",
                self.attributes.shape_str(),
                attributes.shape_str(),
            ));
        }
        LabelSpace::new(
            self.names.clone(),
            attributes,
            self.seen.clone(),
            self.unseen.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    SeenTrain,
    UnseenUnlabeled,
    TestSeen,
    TestUnseen,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::SeenTrain => "seen_train",
            Role::UnseenUnlabeled => "unseen_unlabeled",
            Role::TestSeen => "test_seen",
            Role::TestUnseen => "test_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "seen_train" => Some(Role::SeenTrain),
            "unseen_unlabeled" => Some(Role::UnseenUnlabeled),
            "test_seen" => Some(Role::TestSeen),
            "test_unseen" => Some(Role::TestUnseen),
            _ => None,
        }
    }
}

/// Records which root-dataset rows were read *with labels* for training.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<BTreeSet<usize>>>);

impl AccessLog {
    pub fn new() -> Self {
        AccessLog::default()
    }

    fn record(&self, rows: impl IntoIterator<Item = usize>) {
        self.0.lock().expect("access log poisoned").extend(rows);
    }

    pub fn rows(&self) -> BTreeSet<usize> {
        self.0.lock().expect("access log poisoned").clone()
    }
}

/// Features, per-row labels and roles, and the label space.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    ids: Vec<String>,
    labels: Vec<Option<LabelId>>,
    roles: Vec<Role>,
    label_space: LabelSpace,
    origin: Vec<usize>,
    access_log: Option<AccessLog>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.ids == other.ids
            && self.labels == other.labels
            && self.roles == other.roles
            && self.label_space == other.label_space
            && self.origin == other.origin
    }
}

/// Labeled rows: features plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub features: Matrix,
    pub labels: Vec<LabelId>,
}

impl Dataset {
    /// Checked constructor; row `i` of `features` corresponds to `ids[i]`.
    pub fn new(
        features: Matrix,
        ids: Vec<String>,
        labels: Vec<Option<LabelId>>,
        roles: Vec<Role>,
        label_space: LabelSpace,
    ) -> Result<Self> {
        let origin = (0..features.rows()).collect();
        Dataset::with_origin(features, ids, labels, roles, label_space, origin)
    }

    pub(crate) fn with_origin(
        features: Matrix,
        ids: Vec<String>,
        labels: Vec<Option<LabelId>>,
        roles: Vec<Role>,
        label_space: LabelSpace,
        origin: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        if ids.len() != n || labels.len() != n || roles.len() != n || origin.len() != n {
            return Err(SabrError::dim(
                "Dataset::new",
                format!("{n} feature rows"),
                format!(
                    "{} ids / {} labels / {} roles / {} origins",
                    ids.len(),
                    labels.len(),
                    roles.len(),
                    origin.len()
                ),
            ));
        }
        if let Some(pos) = features.data().iter().position(|v| !v.is_finite()) {
            return Err(SabrError::Data(format!(
                "non-finite feature value in row `{}`",
                ids[pos / features.cols().max(1)]
            )));
        }
        let mut n_seen = 0;
        for i in 0..n {
            let (label, role) = (labels[i], roles[i]);
            let ok = match (role, label) {
                (Role::UnseenUnlabeled, None) => true,
                (Role::UnseenUnlabeled, Some(_)) => {
                    return Err(SabrError::Data(format!(
                        "row `{}` is unseen_unlabeled but carries a label",
                        ids[i]
                    )))
                }
                (_, None) => {
                    return Err(SabrError::Data(format!(
                        "row `{}` ({}) has no label",
                        ids[i],
                        role.as_str()
                    )))
                }
                (Role::SeenTrain | Role::TestSeen, Some(l)) => label_space.is_seen(l),
                (Role::TestUnseen, Some(l)) => label_space.is_unseen(l),
            };
            if !ok {
                return Err(SabrError::Data(format!(
                    "row `{}` has label {} which is not valid for role {}",
                    ids[i],
                    label.map_or("-".to_string(), |l| label_space
                        .names
                        .get(l.0)
                        .cloned()
                        .unwrap_or_default()),
                    role.as_str()
                )));
            }
            if role == Role::SeenTrain {
                n_seen += 1;
            }
        }
        if n_seen == 0 {
            return Err(SabrError::Data("dataset has no seen_train rows".into()));
        }
        Ok(Dataset {
            features,
            ids,
            labels,
            roles,
            label_space,
            origin,
            access_log: None,
        })
    }

    /// Attaches an access log that records labeled training reads.
    pub fn with_access_log(mut self, log: AccessLog) -> Self {
        self.access_log = Some(log);
        self
    }

    pub fn access_log(&self) -> Option<&AccessLog> {
        self.access_log.as_ref()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Option<LabelId>] {
        &self.labels
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Row index in the dataset this one was derived from.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn rows_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    fn labeled(&self, role: Role) -> LabeledRows {
        let rows = self.rows_with_role(role);
        LabeledRows {
            features: self.features.select_rows(&rows),
            labels: rows
                .iter()
                .map(|&i| self.labels[i].expect("validated"))
                .collect(),
        }
    }

    /// Labeled seen-class training rows. Logged as labeled access.
    pub fn seen_train(&self) -> LabeledRows {
        if let Some(log) = &self.access_log {
            log.record(
                self.rows_with_role(Role::SeenTrain)
                    .into_iter()
                    .map(|i| self.origin[i]),
            );
        }
        self.labeled(Role::SeenTrain)
    }

    /// Unlabeled unseen-class rows (features only).
    pub fn unlabeled(&self) -> Matrix {
        self.features
            .select_rows(&self.rows_with_role(Role::UnseenUnlabeled))
    }

    pub fn test_seen(&self) -> LabeledRows {
        self.labeled(Role::TestSeen)
    }

    pub fn test_unseen(&self) -> LabeledRows {
        self.labeled(Role::TestUnseen)
    }

    /// Rows `keep` (in the given order), origins preserved.
    pub fn subset(&self, keep: &[usize]) -> Result<Dataset> {
        let mut ds = Dataset::with_origin(
            self.features.select_rows(keep),
            keep.iter().map(|&i| self.ids[i].clone()).collect(),
            keep.iter().map(|&i| self.labels[i]).collect(),
            keep.iter().map(|&i| self.roles[i]).collect(),
            self.label_space.clone(),
            keep.iter().map(|&i| self.origin[i]).collect(),
        )?;
        ds.access_log = self.access_log.clone();
        Ok(ds)
    }

    /// Same rows, different label space (e.g. perturbed attributes).
    pub fn with_label_space(&self, label_space: LabelSpace) -> Result<Dataset> {
        let mut ds = Dataset::with_origin(
            self.features.clone(),
            self.ids.clone(),
            self.labels.clone(),
            self.roles.clone(),
            label_space,
            self.origin.clone(),
        )?;
        ds.access_log = self.access_log.clone();
        Ok(ds)
    }

    /// Instance counts per label over rows with `role`.
    pub fn class_counts(&self, role: Role) -> HashMap<LabelId, usize> {
        let mut counts = HashMap::new();
        for i in self.rows_with_role(role) {
            if let Some(l) = self.labels[i] {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        counts
    }
}
