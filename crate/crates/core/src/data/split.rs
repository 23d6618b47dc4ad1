use serde::{Deserialize, Serialize};

use super::{Dataset, LabelId, LabelSpace, Role};
use crate::error::{Result, SabrError};
use crate::math::SeededRng;

/// One class-level partition of `S`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub pseudo_seen: Vec<LabelId>,
    pub pseudo_unseen: Vec<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub folds: Vec<Fold>,
}

impl CvSplit {
    /// Seen-train rows whose label is pseudo-seen in `fold`.
    pub fn training_rows(&self, ds: &Dataset, fold: usize) -> Vec<usize> {
        let f = &self.folds[fold];
        ds.rows_with_role(Role::SeenTrain)
            .into_iter()
            .filter(|&i| ds.labels()[i].is_some_and(|l| f.pseudo_seen.contains(&l)))
            .collect()
    }
}

/// Partitions the seen classes into `n_folds` disjoint pseudo-unseen groups.
pub fn split_cv_folds(ds: &Dataset, n_folds: usize, seed: u64) -> Result<CvSplit> {
    let seen = ds.label_space().seen();
    if n_folds < 2 {
        return Err(SabrError::Config(format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    if seen.len() < n_folds {
        return Err(SabrError::Config(format!(
            "{} seen classes cannot fill {n_folds} folds",
            seen.len()
        )));
    }
    let mut order = seen.to_vec();
    SeededRng::new(seed).substream("folds").shuffle(&mut order);
    let base = seen.len() / n_folds;
    let extra = seen.len() % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let held: Vec<LabelId> = order[start..start + size].to_vec();
        start += size;
        // keep label-space order inside each set
        let pseudo_unseen: Vec<LabelId> =
            seen.iter().copied().filter(|l| held.contains(l)).collect();
        let pseudo_seen: Vec<LabelId> =
            seen.iter().copied().filter(|l| !held.contains(l)).collect();
        folds.push(Fold {
            pseudo_seen,
            pseudo_unseen,
        });
    }
    Ok(CvSplit { folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldOptions {
    /// Share of each pseudo-seen class held out as `test_seen`.
    pub validation_fraction: f64,
    /// Also expose pseudo-unseen rows as unlabeled rows.
    pub transductive: bool,
    pub seed: u64,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions {
            validation_fraction: 0.2,
            transductive: false,
            seed: 0,
        }
    }
}

/// Simulated zero-shot problem for one fold.
///
/// Pseudo-seen training rows are split into `seen_train` and `test_seen`;
/// pseudo-unseen rows become `test_unseen` (and, when transductive, also
/// label-free `unseen_unlabeled` copies). Rows of the original unseen
/// classes are dropped.
pub fn fold_dataset(ds: &Dataset, fold: &Fold, opts: &FoldOptions) -> Result<Dataset> {
    if !(0.0..1.0).contains(&opts.validation_fraction) {
        return Err(SabrError::Config(format!(
            "validation_fraction must lie in [0, 1), got {}",
            opts.validation_fraction
        )));
    }
    let parent = ds.label_space();
    let space = LabelSpace::new(
        parent.names().to_vec(),
        parent.attributes().clone(),
        fold.pseudo_seen.clone(),
        fold.pseudo_unseen.clone(),
    )?;
    let train_rows = ds.rows_with_role(Role::SeenTrain);
    let mut rng = SeededRng::new(opts.seed).substream("validation");
    let mut role_of = vec![None; ds.len()];
    for &l in &fold.pseudo_seen {
        let mut rows: Vec<usize> = train_rows
            .iter()
            .copied()
            .filter(|&i| ds.labels()[i] == Some(l))
            .collect();
        rng.shuffle(&mut rows);
        let mut n_val = (opts.validation_fraction * rows.len() as f64).round() as usize;
        if opts.validation_fraction > 0.0 && rows.len() >= 2 {
            n_val = n_val.clamp(1, rows.len() - 1);
        }
        for (k, &i) in rows.iter().enumerate() {
            role_of[i] = Some(if k < n_val {
                Role::TestSeen
            } else {
                Role::SeenTrain
            });
        }
    }
    let mut n_unseen = 0;
    for &i in &train_rows {
        if ds.labels()[i].is_some_and(|l| fold.pseudo_unseen.contains(&l)) {
            role_of[i] = Some(Role::TestUnseen);
            n_unseen += 1;
        }
    }
    if n_unseen == 0 {
        return Err(SabrError::Config(
            "fold has zero pseudo-unseen instances".into(),
        ));
    }

    let mut keep: Vec<(usize, Role)> = (0..ds.len())
        .filter_map(|i| role_of[i].map(|r| (i, r)))
        .collect();
    if opts.transductive {
        let copies: Vec<(usize, Role)> = keep
            .iter()
            .filter(|(_, r)| *r == Role::TestUnseen)
            .map(|&(i, _)| (i, Role::UnseenUnlabeled))
            .collect();
        keep.extend(copies);
    }
    let rows: Vec<usize> = keep.iter().map(|&(i, _)| i).collect();
    let ids = keep
        .iter()
        .map(|&(i, r)| {
            if r == Role::UnseenUnlabeled {
                format!("{}~u", ds.ids()[i])
            } else {
                ds.ids()[i].clone()
            }
        })
        .collect();
    let labels = keep
        .iter()
        .map(|&(i, r)| {
            if r == Role::UnseenUnlabeled {
                None
            } else {
                ds.labels()[i]
            }
        })
        .collect();
    let roles = keep.iter().map(|&(_, r)| r).collect();
    let mut out = Dataset::with_origin(
        ds.features().select_rows(&rows),
        ids,
        labels,
        roles,
        space,
        rows.iter().map(|&i| ds.origin()[i]).collect(),
    )?;
    out.access_log = ds.access_log.clone();
    Ok(out)
}

/// Keeps `⌈fraction · N_u⌉` unlabeled rows chosen uniformly; other rows untouched.
pub fn subsample_unlabeled(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SabrError::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut unlabeled = ds.rows_with_role(Role::UnseenUnlabeled);
    let n_u = unlabeled.len();
    // tolerance keeps e.g. 0.065 * 1000 at 65 rather than 66
    let target = ((fraction * n_u as f64) - 1e-9)
        .ceil()
        .clamp(0.0, n_u as f64) as usize;
    SeededRng::new(seed)
        .substream("subsample")
        .shuffle(&mut unlabeled);
    let mut chosen = vec![false; ds.len()];
    for &i in &unlabeled[..target] {
        chosen[i] = true;
    }
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.roles()[i] != Role::UnseenUnlabeled || chosen[i])
        .collect();
    ds.subset(&keep)
}
