use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{check_dataset, Mode, PipelineConfig, StageSeeds};
use crate::bias::{early_stop_select, omega_sweep, SweepResult};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, LabelId};
use crate::error::{Result, SabrError};
use crate::eval::EvalReport;
use crate::gan::{
    synthesize, train_seen_gan, train_unseen_gan, write_trace_csv, GanConfig, Generator,
    SyntheticSet,
};
use crate::latent::{train_latent, LatentEpoch, LatentModel};
use crate::protocol::evaluate_synthetic;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Latent,
    SeenGan,
    UnseenGan,
    Synthesize,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Latent,
        Stage::SeenGan,
        Stage::UnseenGan,
        Stage::Synthesize,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Latent => "latent",
            Stage::SeenGan => "seen-gan",
            Stage::UnseenGan => "unseen-gan",
            Stage::Synthesize => "synthesize",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
                SabrError::Config(format!(
                    "unknown stage `{s}`, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const LATENT_CKPT: &str = "latent.ckpt";
pub const SEEN_GEN_CKPT: &str = "gen_s.ckpt";
pub const UNSEEN_GEN_CKPT: &str = "gen_u.ckpt";
pub const SYNTHETIC_CKPT: &str = "synthetic.ckpt";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Index of a run directory. Holds no timestamps so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub mode: Mode,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub completed: Vec<Stage>,
    pub failed: Option<String>,
    pub selected_epoch: Option<usize>,
    pub selected_omega: Option<f64>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| SabrError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| SabrError::format(&path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub selected_epoch: Option<usize>,
    pub selected_omega: Option<f64>,
    pub zsl: EvalReport,
    pub gzsl: EvalReport,
}

/// Executes stages against one output directory. Each stage persists its
/// artifacts before the next starts, and a stage whose inputs are not in
/// memory loads them from the directory.
pub struct Runner {
    cfg: PipelineConfig,
    ds: Dataset,
    out: PathBuf,
    latent: Option<LatentModel>,
    seen: Option<Generator>,
    unseen: Option<Generator>,
    synthetic: Option<SyntheticSet>,
    selected_epoch: Option<usize>,
    selected_omega: Option<f64>,
    completed: Vec<Stage>,
}

fn io_write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SabrError::io(path, e))
}

fn write_latent_trace(path: &Path, trace: &[LatentEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SabrError::io(path, e.into()))?;
    let io_err = |e: csv::Error| SabrError::io(path, e.into());
    w.write_record(["epoch", "loss", "classifier_loss", "semantic_loss"])
        .map_err(io_err)?;
    for e in trace {
        w.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.classifier_loss.to_string(),
            e.semantic_loss.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| SabrError::io(path, e))
}

fn synthetic_to_checkpoint(set: &SyntheticSet) -> Checkpoint {
    let labels: Vec<String> = set.labels.iter().map(|l| l.0.to_string()).collect();
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", "synthetic")
        .set_meta("labels", labels.join(","));
    ck.push("features", set.features.clone());
    ck
}

fn synthetic_from_checkpoint(ck: &Checkpoint) -> Result<SyntheticSet> {
    if ck.meta("kind") != Some("synthetic") {
        return Err(SabrError::Data("checkpoint is not a synthetic set".into()));
    }
    let features = ck.require("features")?.clone();
    let raw = ck.require_meta("labels")?;
    let labels = if raw.is_empty() {
        Vec::new()
    } else {
        raw.split(',')
            .map(|s| {
                s.parse()
                    .map(LabelId)
                    .map_err(|_| SabrError::Data(format!("bad label id `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if labels.len() != features.rows() {
        return Err(SabrError::Data(format!(
            "synthetic set has {} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    Ok(SyntheticSet { features, labels })
}

fn files_under(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| SabrError::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| SabrError::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            files_under(root, &p, out)?;
        } else if p.strip_prefix(root).ok() != Some(Path::new(MANIFEST)) {
            out.push(p);
        }
    }
    Ok(())
}

impl Runner {
    /// Validates the config, builds the dataset and prepares `out`.
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let ds = cfg.dataset()?;
        Self::with_dataset(cfg, ds, out)
    }

    /// Runs against an already prepared dataset (e.g. a subsample).
    pub fn with_dataset(cfg: PipelineConfig, ds: Dataset, out: impl Into<PathBuf>) -> Result<Self> {
        check_dataset(cfg.mode, &ds)?;
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| SabrError::io(&out, e))?;
        io_write(&out.join("config.toml"), cfg.to_toml())?;
        Ok(Runner {
            cfg,
            ds,
            out,
            latent: None,
            seen: None,
            unseen: None,
            synthetic: None,
            selected_epoch: None,
            selected_omega: None,
            completed: Vec::new(),
        })
    }

    /// Takes over another runner's latent model and seen generator so the
    /// remaining stages need not retrain them.
    pub fn inherit_upstream(&mut self, other: &Runner) {
        self.latent = other.latent.clone();
        self.seen = other.seen.clone();
        self.selected_epoch = other.selected_epoch;
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.ds
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Stages the configured mode runs, in order.
    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::UnseenGan || self.cfg.mode == Mode::SabrT)
            .collect()
    }

    /// Runs every stage from `from` on and writes the manifest, also when a
    /// stage fails.
    pub fn run(&mut self, from: Stage) -> Result<RunSummary> {
        let stages: Vec<Stage> = self.stages().into_iter().filter(|s| *s >= from).collect();
        if stages.is_empty() {
            return Err(SabrError::Config(format!(
                "stage {from} does not run in mode {:?}",
                self.cfg.mode
            )));
        }
        let mut summary = None;
        for stage in stages {
            match self.run_stage(stage) {
                Ok(s) => summary = s.or(summary),
                Err(e) => {
                    self.write_manifest(Some(&e.to_string()))?;
                    return Err(e);
                }
            }
        }
        self.write_manifest(None)?;
        summary.ok_or_else(|| SabrError::Usage("run finished without an evaluation".into()))
    }

    /// Runs one stage; only `evaluate` yields a summary. Errors carry the stage name.
    pub fn run_stage(&mut self, stage: Stage) -> Result<Option<RunSummary>> {
        info!("stage {stage}");
        let result = match stage {
            Stage::Latent => self.stage_latent().map(|_| None),
            Stage::SeenGan => self.stage_seen_gan().map(|_| None),
            Stage::UnseenGan => self.stage_unseen_gan().map(|_| None),
            Stage::Synthesize => self.stage_synthesize().map(|_| None),
            Stage::Evaluate => self.stage_evaluate().map(Some),
        };
        let out = result.map_err(|e| e.in_stage(stage.as_str()))?;
        self.completed.push(stage);
        Ok(out)
    }

    fn load_ckpt(&self, name: &str, producer: Stage) -> Result<Checkpoint> {
        let path = self.out.join(name);
        if !path.is_file() {
            return Err(SabrError::Config(format!(
                "{} is missing; run stage `{producer}` into {} first",
                name,
                self.out.display()
            )));
        }
        Checkpoint::load(&path)
    }

    fn latent_model(&mut self) -> Result<LatentModel> {
        if self.latent.is_none() {
            let ck = self.load_ckpt(LATENT_CKPT, Stage::Latent)?;
            self.latent = Some(LatentModel::from_checkpoint(&ck)?);
        }
        Ok(self.latent.clone().expect("loaded above"))
    }

    fn seen_generator(&mut self) -> Result<Generator> {
        if self.seen.is_none() {
            let ck = self.load_ckpt(SEEN_GEN_CKPT, Stage::SeenGan)?;
            self.selected_epoch = ck.meta("selected_epoch").and_then(|s| s.parse().ok());
            self.seen = Some(Generator::from_checkpoint(&ck)?);
        }
        Ok(self.seen.clone().expect("loaded above"))
    }

    fn unseen_generator(&mut self) -> Result<Generator> {
        if self.unseen.is_none() {
            let ck = self.load_ckpt(UNSEEN_GEN_CKPT, Stage::UnseenGan)?;
            self.selected_omega = Some(ck.parse_meta("omega")?);
            self.unseen = Some(Generator::from_checkpoint(&ck)?);
        }
        Ok(self.unseen.clone().expect("loaded above"))
    }

    fn synthetic_set(&mut self) -> Result<SyntheticSet> {
        if self.synthetic.is_none() {
            let ck = self.load_ckpt(SYNTHETIC_CKPT, Stage::Synthesize)?;
            self.synthetic = Some(synthetic_from_checkpoint(&ck)?);
        }
        Ok(self.synthetic.clone().expect("loaded above"))
    }

    fn write_sweep(&self, name: &str, sweep: &SweepResult) -> Result<()> {
        io_write(&self.out.join(name), sweep.to_csv())
    }

    fn stage_latent(&mut self) -> Result<()> {
        let trained = train_latent(&self.ds, &self.cfg.latent)?;
        trained
            .model
            .to_checkpoint()
            .save(&self.out.join(LATENT_CKPT))?;
        write_latent_trace(&self.out.join("latent_trace.csv"), &trained.trace)?;
        self.latent = Some(trained.model);
        Ok(())
    }

    /// Early-stopping selection (when enabled) and the full seen-GAN run;
    /// `gen_s.ckpt` holds the selected snapshot, or the final one.
    pub fn select_epoch(&mut self) -> Result<SweepResult> {
        let sweep = early_stop_select(
            &self.ds,
            &self.cfg.latent,
            &self.cfg.seen_gan,
            &self.cfg.early_stop_options(),
            self.cfg.seeds().early_stop,
        )?;
        self.write_sweep("early_stop.csv", &sweep)?;
        info!("early stopping selected epoch {}", sweep.selected);
        Ok(sweep)
    }

    fn stage_seen_gan(&mut self) -> Result<()> {
        let latent = self.latent_model()?;
        let selected = if self.cfg.early_stop.enabled {
            Some(self.select_epoch()?.selected as usize)
        } else {
            None
        };
        let run = train_seen_gan(&latent, &self.ds, &self.cfg.seen_gan)?;
        let dir = self.out.join("seen_gan");
        fs::create_dir_all(&dir).map_err(|e| SabrError::io(&dir, e))?;
        for (epoch, g) in &run.checkpoints {
            g.to_checkpoint()
                .save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
        }
        write_trace_csv(&self.out.join("seen_gan_trace.csv"), &run.trace)?;
        run.critic
            .to_checkpoint()
            .save(&self.out.join("critic_s.ckpt"))?;
        let generator = match selected {
            Some(e) => run
                .checkpoints
                .iter()
                .find(|(epoch, _)| *epoch == e)
                .map(|(_, g)| g.clone())
                .ok_or_else(|| {
                    SabrError::Numeric(format!("no seen-GAN snapshot at selected epoch {e}"))
                })?,
            None => run.generator,
        };
        let mut ck = generator.to_checkpoint();
        if let Some(e) = selected {
            ck.set_meta("selected_epoch", e);
        }
        ck.save(&self.out.join(SEEN_GEN_CKPT))?;
        self.selected_epoch = selected;
        self.seen = Some(generator);
        Ok(())
    }

    /// Seen-GAN config the omega sweep uses: stopped at the selected epoch.
    fn sweep_seen_config(&self) -> GanConfig {
        let mut cfg = self.cfg.seen_gan.clone();
        if let Some(e) = self.selected_epoch {
            cfg.epochs = e;
        }
        cfg
    }

    pub fn sweep_omega(&mut self) -> Result<SweepResult> {
        if self.cfg.mode == Mode::SabrI {
            return Err(SabrError::Config(
                "the omega sweep needs mode = \"sabr_t\"".into(),
            ));
        }
        if self.seen.is_none() && self.out.join(SEEN_GEN_CKPT).is_file() {
            self.seen_generator()?;
        }
        let sweep = omega_sweep(
            &self.ds,
            &self.cfg.omega_sweep.grid,
            &self.cfg.latent,
            &self.sweep_seen_config(),
            &self.cfg.unseen_gan,
            &self.cfg.omega_sweep_options(),
            self.cfg.seeds().omega_sweep,
        )?;
        self.write_sweep("omega_sweep.csv", &sweep)?;
        info!("omega sweep selected {}", sweep.selected);
        Ok(sweep)
    }

    fn stage_unseen_gan(&mut self) -> Result<()> {
        if self.cfg.mode == Mode::SabrI {
            return Err(SabrError::Config(
                "the unseen GAN needs mode = \"sabr_t\"".into(),
            ));
        }
        let latent = self.latent_model()?;
        let seen = self.seen_generator()?;
        let omega = if self.cfg.omega_sweep.enabled {
            self.sweep_omega()?.selected
        } else {
            self.cfg.unseen_gan.omega
        };
        let cfg = GanConfig {
            omega,
            ..self.cfg.unseen_gan.clone()
        };
        let run = train_unseen_gan(&latent, Some(&seen), &self.ds, &cfg)?;
        write_trace_csv(&self.out.join("unseen_gan_trace.csv"), &run.trace)?;
        run.critic
            .to_checkpoint()
            .save(&self.out.join("critic_u.ckpt"))?;
        let mut ck = run.generator.to_checkpoint();
        ck.set_meta("omega", omega);
        ck.save(&self.out.join(UNSEEN_GEN_CKPT))?;
        self.selected_omega = Some(omega);
        self.unseen = Some(run.generator);
        Ok(())
    }

    fn stage_synthesize(&mut self) -> Result<()> {
        let generator = match self.cfg.mode {
            Mode::SabrI => self.seen_generator()?,
            Mode::SabrT => self.unseen_generator()?,
        };
        let space = self.ds.label_space();
        let set = synthesize(
            &generator,
            space,
            space.unseen(),
            self.cfg.protocol.n_per_class,
            self.cfg.protocol.seed,
        )?;
        synthetic_to_checkpoint(&set).save(&self.out.join(SYNTHETIC_CKPT))?;
        self.synthetic = Some(set);
        Ok(())
    }

    fn stage_evaluate(&mut self) -> Result<RunSummary> {
        let latent = self.latent_model()?;
        let synthetic = self.synthetic_set()?;
        // selections recorded by earlier stages, for the report
        if self.selected_epoch.is_none() && self.out.join(SEEN_GEN_CKPT).is_file() {
            self.seen_generator()?;
        }
        if self.cfg.mode == Mode::SabrT && self.selected_omega.is_none() {
            self.unseen_generator()?;
        }
        let outcome = evaluate_synthetic(&latent, &self.ds, synthetic, &self.cfg.protocol, true)?;
        let zsl = outcome.zsl.expect("conventional protocol requested");
        let gzsl = outcome.gzsl;
        zsl.write_csv(&self.out.join("zsl_report.csv"))?;
        gzsl.write_csv(&self.out.join("gzsl_report.csv"))?;
        let method = match self.cfg.mode {
            Mode::SabrI => "sabr_i",
            Mode::SabrT => "sabr_t",
        };
        let gz = gzsl.to_table(method);
        let table = format!(
            "{}{}",
            zsl.to_table(method),
            gz.lines().nth(1).unwrap_or_default()
        );
        io_write(&self.out.join("results.txt"), table + "\n")?;
        let summary = RunSummary {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            selected_epoch: self.selected_epoch,
            selected_omega: self.selected_omega,
            zsl,
            gzsl,
        };
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| SabrError::Numeric(e.to_string()))?;
        io_write(&self.out.join("report.json"), json + "\n")?;
        Ok(summary)
    }

    /// Hashes every file in the run directory into `manifest.json`.
    pub fn write_manifest(&self, failed: Option<&str>) -> Result<Manifest> {
        let mut paths = Vec::new();
        files_under(&self.out, &self.out, &mut paths)?;
        let mut files = Vec::with_capacity(paths.len());
        for p in paths {
            let bytes = fs::read(&p).map_err(|e| SabrError::io(&p, e))?;
            let rel = p
                .strip_prefix(&self.out)
                .expect("listed under out")
                .to_string_lossy()
                .replace('\\', "/");
            files.push(ManifestEntry {
                path: rel,
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        // a resumed run keeps the stages an earlier invocation finished
        let mut completed = Manifest::load(&self.out)
            .map(|m| m.completed)
            .unwrap_or_default();
        completed.retain(|s| {
            !self.completed.contains(s) && self.completed.first().is_some_and(|f| s < f)
        });
        completed.extend(&self.completed);
        let manifest = Manifest {
            config_sha256: self.cfg.hash(),
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            seeds: self.cfg.seeds(),
            completed,
            failed: failed.map(str::to_string),
            selected_epoch: self.selected_epoch,
            selected_omega: self.selected_omega,
            files,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| SabrError::Numeric(e.to_string()))?;
        io_write(&self.out.join(MANIFEST), json + "\n")?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip_in_order() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.as_str()).unwrap(), s);
        }
        assert!(Stage::Latent < Stage::Evaluate);
        assert!(matches!(
            Stage::parse("classify"),
            Err(SabrError::Config(_))
        ));
    }

    #[test]
    fn synthetic_set_checkpoint_round_trips() {
        let set = SyntheticSet {
            features: crate::math::Matrix::from_rows(&[vec![0.1, -2.5], vec![1e-300, 3.0]])
                .unwrap(),
            labels: vec![LabelId(7), LabelId(9)],
        };
        let ck = synthetic_to_checkpoint(&set);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(synthetic_from_checkpoint(&back).unwrap(), set);
    }
}
