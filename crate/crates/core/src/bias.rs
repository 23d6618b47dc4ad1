//! Class-level cross-validation harnesses: pick the seen-GAN checkpoint epoch
//! and the transfer weight `ω` that maximize mean generalized H on simulated
//! zero-shot problems carved out of the seen classes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    fold_dataset, split_cv_folds, AccessLog, CvSplit, Dataset, Fold, FoldOptions, Role,
};
use crate::error::{Result, SabrError};
use crate::gan::{train_seen_gan, train_unseen_gan, GanConfig};
use crate::latent::{train_latent, LatentTrainConfig};
use crate::math::SeededRng;
use crate::protocol::{run_protocol, ProtocolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasOptions {
    pub n_folds: usize,
    /// Share of each pseudo-seen class held out for the seen half of H.
    pub validation_fraction: f64,
    pub protocol: ProtocolConfig,
    /// Run folds concurrently; results are merged in fold order.
    pub parallel: bool,
}

impl Default for BiasOptions {
    fn default() -> Self {
        BiasOptions {
            n_folds: 3,
            validation_fraction: 0.2,
            protocol: ProtocolConfig::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub mca_s: f64,
    pub mca_u: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    /// `table[fold][candidate]`.
    pub table: Vec<Vec<FoldMetrics>>,
    pub mean_curve: Vec<f64>,
    pub selected_index: usize,
    pub selected: f64,
    pub folds: Vec<Fold>,
    /// Root-dataset rows read with labels while training each fold.
    pub accessed_rows: Vec<BTreeSet<usize>>,
}

/// Mean over folds of each candidate's H, summed in fold order.
pub fn mean_curve(h_table: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = h_table.first() else {
        return Err(SabrError::Config("metric table has no folds".into()));
    };
    if first.is_empty() || h_table.iter().any(|row| row.len() != first.len()) {
        return Err(SabrError::Config("metric table is empty or ragged".into()));
    }
    let n = h_table.len() as f64;
    Ok((0..first.len())
        .map(|c| h_table.iter().map(|row| row[c]).sum::<f64>() / n)
        .collect())
}

/// Index of the largest value; the earliest wins ties.
pub fn select_best(curve: &[f64]) -> Result<usize> {
    if curve.is_empty() {
        return Err(SabrError::Config(
            "cannot select from an empty curve".into(),
        ));
    }
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate().skip(1) {
        if v > curve[best] {
            best = i;
        }
    }
    Ok(best)
}

impl SweepResult {
    /// Builds the result from a complete per-fold table.
    pub fn from_table(grid: Vec<f64>, table: Vec<Vec<FoldMetrics>>) -> Result<Self> {
        if grid.is_empty() {
            return Err(SabrError::Config("candidate grid is empty".into()));
        }
        if table.iter().any(|row| row.len() != grid.len()) {
            return Err(SabrError::Config(
                "per-fold metric table is incomplete".into(),
            ));
        }
        let h: Vec<Vec<f64>> = table
            .iter()
            .map(|row| row.iter().map(|m| m.h).collect())
            .collect();
        let mean_curve = mean_curve(&h)?;
        let selected_index = select_best(&mean_curve)?;
        Ok(SweepResult {
            selected: grid[selected_index],
            grid,
            table,
            mean_curve,
            selected_index,
            folds: Vec::new(),
            accessed_rows: Vec::new(),
        })
    }

    /// `candidate,fold,MCA_s,MCA_u,H`, one row per (candidate, fold).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("candidate,fold,MCA_s,MCA_u,H\n");
        for (c, cand) in self.grid.iter().enumerate() {
            for (f, row) in self.table.iter().enumerate() {
                let m = row[c];
                let _ = writeln!(out, "{cand},{f},{},{},{}", m.mca_s, m.mca_u, m.h);
            }
        }
        out
    }

    /// Labeled rows of a fold's pseudo-unseen classes that fold training read.
    pub fn leaked_rows(&self, ds: &Dataset) -> Vec<(usize, usize)> {
        let mut leaks = Vec::new();
        for (k, (fold, rows)) in self.folds.iter().zip(&self.accessed_rows).enumerate() {
            for &r in rows {
                let Some(i) = ds.origin().iter().position(|&o| o == r) else {
                    continue;
                };
                if ds.labels()[i].is_some_and(|l| fold.pseudo_unseen.contains(&l)) {
                    leaks.push((k, r));
                }
            }
        }
        leaks
    }
}

fn check_fold(ds: &Dataset) -> Result<()> {
    if ds.count(Role::TestUnseen) == 0 {
        return Err(SabrError::Config(
            "fold has zero pseudo-unseen instances".into(),
        ));
    }
    Ok(())
}

struct FoldRun {
    metrics: Vec<FoldMetrics>,
    grid: Vec<f64>,
    accessed: BTreeSet<usize>,
}

fn fold_jobs<F>(split: &CvSplit, parallel: bool, job: F) -> Result<Vec<FoldRun>>
where
    F: Fn(usize, &Fold) -> Result<FoldRun> + Sync,
{
    if parallel {
        split
            .folds
            .par_iter()
            .enumerate()
            .map(|(k, f)| job(k, f))
            .collect()
    } else {
        split
            .folds
            .iter()
            .enumerate()
            .map(|(k, f)| job(k, f))
            .collect()
    }
}

fn assemble(split: CvSplit, runs: Vec<FoldRun>) -> Result<SweepResult> {
    let grid = runs.first().map(|r| r.grid.clone()).unwrap_or_default();
    if runs.iter().any(|r| r.grid != grid) {
        return Err(SabrError::Numeric(
            "folds produced different candidate grids".into(),
        ));
    }
    let accessed = runs.iter().map(|r| r.accessed.clone()).collect();
    let mut result = SweepResult::from_table(grid, runs.into_iter().map(|r| r.metrics).collect())?;
    result.folds = split.folds;
    result.accessed_rows = accessed;
    Ok(result)
}

fn fold_seed(seed: u64, k: usize, what: &str) -> u64 {
    SeededRng::new(seed).derive_seed(&format!("fold{k}/{what}"))
}

fn prepare_fold(
    ds: &Dataset,
    fold: &Fold,
    k: usize,
    opts: &BiasOptions,
    seed: u64,
    transductive: bool,
) -> Result<(Dataset, AccessLog)> {
    let log = AccessLog::new();
    let fd = fold_dataset(
        ds,
        fold,
        &FoldOptions {
            validation_fraction: opts.validation_fraction,
            transductive,
            seed: fold_seed(seed, k, "validation"),
        },
    )?
    .with_access_log(log.clone());
    check_fold(&fd)?;
    Ok((fd, log))
}

/// Per fold: fit the latent space and a seen GAN on pseudo-seen classes,
/// then score every checkpoint by the generalized H of a classifier trained
/// on pseudo-seen rows plus pseudo-unseen rows synthesized from it.
pub fn early_stop_select(
    ds: &Dataset,
    latent_cfg: &LatentTrainConfig,
    gan_cfg: &GanConfig,
    opts: &BiasOptions,
    seed: u64,
) -> Result<SweepResult> {
    let split = split_cv_folds(ds, opts.n_folds, seed)?;
    let runs = fold_jobs(&split, opts.parallel, |k, fold| {
        let (fd, log) = prepare_fold(ds, fold, k, opts, seed, false)?;
        let latent = train_latent(
            &fd,
            &LatentTrainConfig {
                seed: fold_seed(seed, k, "latent"),
                ..latent_cfg.clone()
            },
        )?;
        let run = train_seen_gan(
            &latent.model,
            &fd,
            &GanConfig {
                seed: fold_seed(seed, k, "gan"),
                ..gan_cfg.clone()
            },
        )?;
        if run.checkpoints.is_empty() {
            return Err(SabrError::Config(
                "seen GAN produced no checkpoints to select from".into(),
            ));
        }
        let protocol = ProtocolConfig {
            seed: fold_seed(seed, k, "protocol"),
            ..opts.protocol.clone()
        };
        let mut metrics = Vec::with_capacity(run.checkpoints.len());
        for (_, g) in &run.checkpoints {
            let out = run_protocol(&latent.model, &fd, g, &protocol, false)?;
            metrics.push(FoldMetrics {
                mca_s: out.gzsl.mca_s.unwrap_or(0.0),
                mca_u: out.gzsl.mca_u,
                h: out.gzsl.h.unwrap_or(0.0),
            });
        }
        Ok(FoldRun {
            metrics,
            grid: run.checkpoints.iter().map(|(e, _)| *e as f64).collect(),
            accessed: log.rows(),
        })
    })?;
    assemble(split, runs)
}

/// Per fold and per `ω`: warm-start the unseen GAN from the fold's seen
/// generator, treating pseudo-unseen rows as unlabeled, and score H.
pub fn omega_sweep(
    ds: &Dataset,
    grid: &[f64],
    latent_cfg: &LatentTrainConfig,
    seen_cfg: &GanConfig,
    unseen_cfg: &GanConfig,
    opts: &BiasOptions,
    seed: u64,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(SabrError::Config("omega grid is empty".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(SabrError::Config(format!(
            "omega {w} must be finite and >= 0"
        )));
    }
    let split = split_cv_folds(ds, opts.n_folds, seed)?;
    let runs = fold_jobs(&split, opts.parallel, |k, fold| {
        let (fd, log) = prepare_fold(ds, fold, k, opts, seed, true)?;
        let latent = train_latent(
            &fd,
            &LatentTrainConfig {
                seed: fold_seed(seed, k, "latent"),
                ..latent_cfg.clone()
            },
        )?;
        let seen = train_seen_gan(
            &latent.model,
            &fd,
            &GanConfig {
                seed: fold_seed(seed, k, "gan"),
                ..seen_cfg.clone()
            },
        )?;
        let protocol = ProtocolConfig {
            seed: fold_seed(seed, k, "protocol"),
            ..opts.protocol.clone()
        };
        let mut metrics = Vec::with_capacity(grid.len());
        for &omega in grid {
            let cfg = GanConfig {
                omega,
                seed: fold_seed(seed, k, "unseen_gan"),
                ..unseen_cfg.clone()
            };
            let unseen = train_unseen_gan(&latent.model, Some(&seen.generator), &fd, &cfg)?;
            let out = run_protocol(&latent.model, &fd, &unseen.generator, &protocol, false)?;
            metrics.push(FoldMetrics {
                mca_s: out.gzsl.mca_s.unwrap_or(0.0),
                mca_u: out.gzsl.mca_u,
                h: out.gzsl.h.unwrap_or(0.0),
            });
        }
        Ok(FoldRun {
            metrics,
            grid: grid.to_vec(),
            accessed: log.rows(),
        })
    })?;
    assemble(split, runs)
}
