use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, PipelineConfig};
use super::run::{Runner, Stage};
use crate::data::subsample_unlabeled;
use crate::error::{Result, SabrError};
use crate::math::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTrial {
    pub fraction: f64,
    pub trial: usize,
    pub seed: u64,
    /// Conventional-protocol unseen accuracy.
    pub mca_u: f64,
    /// Generalized-protocol harmonic mean.
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    pub mean_mca_u: f64,
    pub mean_h: f64,
    /// Sample standard deviation of `mca_u` over trials; 0 for one trial.
    pub std: f64,
    pub std_h: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationRow {
    pub fn csv(rows: &[AblationRow]) -> String {
        let mut out = String::from("fraction,mean_mca_u,mean_h,std,std_h\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.fraction, r.mean_mca_u, r.mean_h, r.std, r.std_h
            );
        }
        out
    }
}

impl AblationTrial {
    pub fn csv(trials: &[AblationTrial]) -> String {
        let mut out = String::from("fraction,trial,seed,mca_u,h\n");
        for t in trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.fraction, t.trial, t.seed, t.mca_u, t.h
            );
        }
        out
    }
}

/// Unlabeled-fraction study: trial `t` reruns the transductive pipeline
/// with global seed `seed + t` on `⌈fraction · N_u⌉` unlabeled rows.
///
/// Stages upstream of the unseen GAN never read unlabeled rows, so each
/// trial trains them once and shares them across fractions; the result is
/// identical to a full run per (fraction, trial). Writes `ablation.csv` and
/// `ablation_trials.csv` plus one run directory per cell under `out`.
pub fn run_ablation_unlabeled(
    cfg: &PipelineConfig,
    fractions: &[f64],
    trials: usize,
    out: &Path,
) -> Result<(Vec<AblationRow>, Vec<AblationTrial>)> {
    if cfg.mode != Mode::SabrT {
        return Err(SabrError::Config(
            "the unlabeled-fraction ablation needs mode = \"sabr_t\"".into(),
        ));
    }
    if trials == 0 {
        return Err(SabrError::Config("trials must be >= 1".into()));
    }
    if fractions.is_empty() {
        return Err(SabrError::Config("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(SabrError::Config(format!(
            "fraction {f} must lie in (0, 1]"
        )));
    }
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(SabrError::Config("fractions must be distinct".into()));
    }
    cfg.validate()?;
    let ds = cfg.dataset()?;

    let mut cells: Vec<AblationTrial> = Vec::with_capacity(sorted.len() * trials);
    for t in 0..trials {
        let mut tcfg = cfg.clone();
        tcfg.seed = cfg
            .seed
            .checked_add(t as u64)
            .filter(|s| *s <= i64::MAX as u64)
            .ok_or_else(|| SabrError::Config("seed + trial overflows".into()))?;
        tcfg.apply_seeds();
        let trial_dir = out.join(format!("trial_{t}"));
        let mut base = Runner::with_dataset(tcfg.clone(), ds.clone(), trial_dir.join("upstream"))?;
        base.run_stage(Stage::Latent)?;
        base.run_stage(Stage::SeenGan)?;
        let mut fcfg = tcfg.clone();
        if tcfg.omega_sweep.enabled {
            fcfg.unseen_gan.omega = base.sweep_omega()?.selected;
            fcfg.omega_sweep.enabled = false;
        }
        base.write_manifest(None)?;
        let sub_seed = SeededRng::new(tcfg.seed).derive_seed("subsample");
        for &fraction in &sorted {
            let sub = subsample_unlabeled(&ds, fraction, sub_seed)?;
            let mut runner = Runner::with_dataset(
                fcfg.clone(),
                sub,
                trial_dir.join(format!("fraction_{fraction}")),
            )?;
            runner.inherit_upstream(&base);
            let summary = runner.run(Stage::UnseenGan)?;
            log::info!(
                "ablation fraction={fraction} trial={t}: mca_u={:.4} h={:.4}",
                summary.zsl.mca_u,
                summary.gzsl.h.unwrap_or(0.0)
            );
            cells.push(AblationTrial {
                fraction,
                trial: t,
                seed: tcfg.seed,
                mca_u: summary.zsl.mca_u,
                h: summary.gzsl.h.unwrap_or(0.0),
            });
        }
    }
    cells.sort_by(|a, b| {
        a.fraction
            .total_cmp(&b.fraction)
            .then(a.trial.cmp(&b.trial))
    });

    let rows: Vec<AblationRow> = sorted
        .iter()
        .map(|&fraction| {
            let of: Vec<&AblationTrial> = cells.iter().filter(|c| c.fraction == fraction).collect();
            let (mean_mca_u, std) = mean_std(&of.iter().map(|c| c.mca_u).collect::<Vec<_>>());
            let (mean_h, std_h) = mean_std(&of.iter().map(|c| c.h).collect::<Vec<_>>());
            AblationRow {
                fraction,
                mean_mca_u,
                mean_h,
                std,
                std_h,
            }
        })
        .collect();
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| SabrError::io(&p, e))
    };
    write("ablation.csv", AblationRow::csv(&rows))?;
    write("ablation_trials.csv", AblationTrial::csv(&cells))?;
    Ok((rows, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_oracle() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.9]);
        assert!((m - 0.7).abs() < 1e-15);
        assert!((s - 0.2).abs() < 1e-12);
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn bad_arguments_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = PipelineConfig::from_toml_str("mode = \"sabr_t\"", None).unwrap();
        let i = PipelineConfig::synthetic_default(0);
        for (cfg, fr, n) in [
            (&i, vec![1.0], 1),
            (&t, vec![], 1),
            (&t, vec![0.0], 1),
            (&t, vec![1.5], 1),
            (&t, vec![0.5, 0.5], 1),
            (&t, vec![1.0], 0),
        ] {
            assert!(matches!(
                run_ablation_unlabeled(cfg, &fr, n, dir.path()),
                Err(SabrError::Config(_))
            ));
        }
    }
}
