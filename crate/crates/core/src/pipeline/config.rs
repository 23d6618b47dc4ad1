use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::bias::BiasOptions;
use crate::data::{load_dataset, synth_dataset, Dataset, Role, SynthConfig};
use crate::error::{Result, SabrError};
use crate::gan::GanConfig;
use crate::latent::LatentTrainConfig;
use crate::math::SeededRng;
use crate::protocol::ProtocolConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Latent space and seen GAN only.
    SabrI,
    /// Adds the unseen GAN trained on unlabeled rows.
    SabrT,
}

/// Width and learning-rate defaults that sections are overlaid on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Narrow networks for synthetic data on one machine.
    Desk,
    /// Full-width networks for precomputed CNN features.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        features: PathBuf,
        attributes: PathBuf,
        split: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub n_folds: usize,
    pub validation_fraction: f64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSweepConfig {
    pub enabled: bool,
    pub grid: Vec<f64>,
    pub n_folds: usize,
    pub validation_fraction: f64,
    pub parallel: bool,
}

/// Fully resolved run configuration. Every field is present after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub preset: Preset,
    pub data: DataSource,
    pub latent: LatentTrainConfig,
    pub seen_gan: GanConfig,
    pub unseen_gan: GanConfig,
    pub protocol: ProtocolConfig,
    pub early_stop: EarlyStopConfig,
    pub omega_sweep: OmegaSweepConfig,
}

/// Per-module seeds, all derived from the global one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub latent: u64,
    pub seen_gan: u64,
    pub unseen_gan: u64,
    pub protocol: u64,
    pub classifier: u64,
    pub early_stop: u64,
    pub omega_sweep: u64,
}

impl StageSeeds {
    pub fn derive(seed: u64) -> Self {
        let root = SeededRng::new(seed);
        // 63 bits so every seed fits a TOML integer
        let d = |name: &str| root.derive_seed(name) & i64::MAX as u64;
        StageSeeds {
            latent: d("latent"),
            seen_gan: d("seen_gan"),
            unseen_gan: d("unseen_gan"),
            protocol: d("protocol"),
            classifier: d("classifier"),
            early_stop: d("early_stop"),
            omega_sweep: d("omega_sweep"),
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> Table {
    Table::try_from(value).expect("config types serialize to tables")
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
fn overlay(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => overlay(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset_table(preset: Preset, source: &str) -> Table {
    let (latent, gan) = match preset {
        Preset::Desk => (LatentTrainConfig::desk(), GanConfig::desk()),
        Preset::Full => (LatentTrainConfig::default(), GanConfig::default()),
    };
    let mut t = Table::new();
    t.insert("mode".into(), Value::String("sabr_i".into()));
    t.insert("seed".into(), Value::Integer(0));
    t.insert("latent".into(), Value::Table(to_table(&latent)));
    t.insert("seen_gan".into(), Value::Table(to_table(&gan)));
    t.insert("unseen_gan".into(), Value::Table(to_table(&gan)));
    t.insert(
        "protocol".into(),
        Value::Table(to_table(&ProtocolConfig::default())),
    );
    t.insert(
        "early_stop".into(),
        Value::Table(to_table(&EarlyStopConfig {
            enabled: true,
            n_folds: 3,
            validation_fraction: 0.2,
            parallel: false,
        })),
    );
    t.insert(
        "omega_sweep".into(),
        Value::Table(to_table(&OmegaSweepConfig {
            enabled: false,
            grid: vec![0.0, 0.002, 0.008, 0.1],
            n_folds: 3,
            validation_fraction: 0.2,
            parallel: false,
        })),
    );
    if source == "synthetic" {
        let mut data = to_table(&SynthConfig::default());
        data.insert("source".into(), Value::String("synthetic".into()));
        t.insert("data".into(), Value::Table(data));
    }
    t
}

impl PipelineConfig {
    /// Resolves a config file's text against its preset.
    ///
    /// The preset defaults to `desk` for synthetic data and `full` for
    /// files. Every module seed is derived from the global one; a module
    /// section may only repeat its derived seed, which lets a resolved
    /// config be read back. A synthetic source without a `seed` uses the
    /// global seed.
    pub fn from_toml_str(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| SabrError::Config(format!("config parse error: {e}")))?;
        if let Some(s) = seed_override {
            let s = i64::try_from(s)
                .map_err(|_| SabrError::Config(format!("seed {s} must be below 2^63")))?;
            user.insert("seed".into(), Value::Integer(s));
        }
        let seed_paths: [(&str, Option<&str>); 5] = [
            ("latent", None),
            ("seen_gan", None),
            ("unseen_gan", None),
            ("protocol", None),
            ("protocol", Some("classifier")),
        ];
        let module_seeds: Vec<(String, Value)> = seed_paths
            .iter()
            .filter_map(|&(sec, sub)| {
                let mut t = user.get(sec)?;
                if let Some(sub) = sub {
                    t = t.get(sub)?;
                }
                let name = sub.map_or(sec.to_string(), |sub| format!("{sec}.{sub}"));
                Some((name, t.get("seed")?.clone()))
            })
            .collect();
        let global_seed = match user.get("seed") {
            None => 0,
            Some(Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(v) => {
                return Err(SabrError::Config(format!(
                    "seed must be a non-negative integer, got {v}"
                )))
            }
        };
        let source = match user.get("data").and_then(|d| d.get("source")) {
            None => "synthetic".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => {
                return Err(SabrError::Config(format!(
                    "data.source must be a string, got {v}"
                )))
            }
        };
        let preset = match user.get("preset") {
            None if source == "synthetic" => Preset::Desk,
            None => Preset::Full,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| SabrError::Config(format!("preset: {e}")))?,
        };
        if source == "synthetic" {
            if let Some(Value::Table(d)) = user.get_mut("data") {
                d.entry("seed")
                    .or_insert(Value::Integer(global_seed as i64));
            } else {
                let mut d = Table::new();
                d.insert("seed".into(), Value::Integer(global_seed as i64));
                user.insert("data".into(), Value::Table(d));
            }
        }
        let mut merged = preset_table(preset, &source);
        merged.insert(
            "preset".into(),
            Value::try_from(preset).expect("preset serializes"),
        );
        overlay(&mut merged, user);
        let mut cfg: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| SabrError::Config(format!("config: {e}")))?;
        cfg.apply_seeds();
        let seeds = cfg.seeds();
        for (name, v) in module_seeds {
            let derived = match name.as_str() {
                "latent" => seeds.latent,
                "seen_gan" => seeds.seen_gan,
                "unseen_gan" => seeds.unseen_gan,
                "protocol" => seeds.protocol,
                _ => seeds.classifier,
            };
            if v.as_integer() != Some(derived as i64) {
                return Err(SabrError::Config(format!(
                    "[{name}] seed = {v} conflicts with the seed derived from the global seed; set only the top-level `seed`"
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SabrError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml_str(&text, seed_override)?;
        // relative data paths are resolved against the config's directory
        if let DataSource::Files {
            features,
            attributes,
            split,
        } = &mut cfg.data
        {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [features, attributes, split] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk defaults for a synthetic source.
    pub fn synthetic_default(seed: u64) -> Self {
        Self::from_toml_str("", Some(seed)).expect("default config is valid")
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::derive(self.seed)
    }

    /// Rewrites every module seed from the global seed.
    pub fn apply_seeds(&mut self) {
        let s = self.seeds();
        self.latent.seed = s.latent;
        self.seen_gan.seed = s.seen_gan;
        self.unseen_gan.seed = s.unseen_gan;
        self.protocol.seed = s.protocol;
        self.protocol.classifier.seed = s.classifier;
    }

    /// Checks every field; file paths must exist.
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.seen_gan.validate()?;
        self.unseen_gan.validate()?;
        self.protocol.validate()?;
        for (name, n_folds, frac) in [
            (
                "early_stop",
                self.early_stop.n_folds,
                self.early_stop.validation_fraction,
            ),
            (
                "omega_sweep",
                self.omega_sweep.n_folds,
                self.omega_sweep.validation_fraction,
            ),
        ] {
            if n_folds < 2 {
                return Err(SabrError::Config(format!(
                    "{name}.n_folds must be >= 2, got {n_folds}"
                )));
            }
            if !(frac > 0.0 && frac < 1.0) {
                return Err(SabrError::Config(format!(
                    "{name}.validation_fraction must lie in (0, 1), got {frac}"
                )));
            }
        }
        if self.omega_sweep.grid.is_empty() {
            return Err(SabrError::Config("omega_sweep.grid is empty".into()));
        }
        if let Some(w) = self
            .omega_sweep
            .grid
            .iter()
            .find(|w| !(**w >= 0.0 && w.is_finite()))
        {
            return Err(SabrError::Config(format!(
                "omega_sweep.grid value {w} must be finite and >= 0"
            )));
        }
        match &self.data {
            DataSource::Synthetic(s) => {
                s.validate()?;
                if self.mode == Mode::SabrT && s.per_class == 0 {
                    return Err(SabrError::Config(
                        "sabr_t needs unlabeled unseen rows".into(),
                    ));
                }
            }
            DataSource::Files {
                features,
                attributes,
                split,
            } => {
                for p in [features, attributes, split] {
                    if !p.is_file() {
                        return Err(SabrError::Config(format!(
                            "data file {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Loads or generates the dataset and checks mode-specific requirements.
    pub fn dataset(&self) -> Result<Dataset> {
        let ds = match &self.data {
            DataSource::Synthetic(s) => synth_dataset(s)?,
            DataSource::Files {
                features,
                attributes,
                split,
            } => load_dataset(features, attributes, split)?,
        };
        check_dataset(self.mode, &ds)?;
        Ok(ds)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical resolved config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn early_stop_options(&self) -> BiasOptions {
        BiasOptions {
            n_folds: self.early_stop.n_folds,
            validation_fraction: self.early_stop.validation_fraction,
            protocol: self.protocol.clone(),
            parallel: self.early_stop.parallel,
        }
    }

    pub fn omega_sweep_options(&self) -> BiasOptions {
        BiasOptions {
            n_folds: self.omega_sweep.n_folds,
            validation_fraction: self.omega_sweep.validation_fraction,
            protocol: self.protocol.clone(),
            parallel: self.omega_sweep.parallel,
        }
    }
}

pub(crate) fn check_dataset(mode: Mode, ds: &Dataset) -> Result<()> {
    if mode == Mode::SabrT && ds.count(Role::UnseenUnlabeled) == 0 {
        return Err(SabrError::Config(
            "sabr_t needs unlabeled unseen rows, the dataset has none".into(),
        ));
    }
    if ds.count(Role::TestUnseen) == 0 || ds.count(Role::TestSeen) == 0 {
        return Err(SabrError::Data(
            "dataset needs test rows for both seen and unseen classes".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::UnseenConditioning;

    #[test]
    fn empty_config_resolves_to_desk_synthetic() {
        let cfg = PipelineConfig::from_toml_str("", None).unwrap();
        assert_eq!(cfg.mode, Mode::SabrI);
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.latent.h1, LatentTrainConfig::desk().h1);
        assert_eq!(cfg.seen_gan.critic_hidden, GanConfig::desk().critic_hidden);
        assert!(cfg.early_stop.enabled);
        assert!(!cfg.omega_sweep.enabled);
        let DataSource::Synthetic(s) = &cfg.data else {
            panic!("expected synthetic")
        };
        assert_eq!(s.n_classes, 10);
    }

    #[test]
    fn sections_override_only_named_keys() {
        let cfg = PipelineConfig::from_toml_str(
            "mode = \"sabr_t\"\nseed = 4\n[seen_gan]\nepochs = 7\n[unseen_gan]\nomega = 0.5\nunseen_conditioning = \"mean_attribute\"\n[data]\nn_classes = 6\nn_seen = 4\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::SabrT);
        assert_eq!(cfg.seen_gan.epochs, 7);
        assert_eq!(cfg.seen_gan.lambda_gp, 10.0);
        assert_eq!(cfg.unseen_gan.omega, 0.5);
        assert_eq!(
            cfg.unseen_gan.unseen_conditioning,
            UnseenConditioning::MeanAttribute
        );
        let DataSource::Synthetic(s) = &cfg.data else {
            panic!("expected synthetic")
        };
        assert_eq!((s.n_classes, s.n_seen, s.seed), (6, 4, 4));
    }

    #[test]
    fn module_seeds_follow_global_seed() {
        let a = PipelineConfig::from_toml_str("seed = 1", None).unwrap();
        let b = PipelineConfig::from_toml_str("seed = 0", Some(1)).unwrap();
        assert_eq!(a, b);
        let c = PipelineConfig::synthetic_default(2);
        assert_ne!(a.latent.seed, c.latent.seed);
        assert_ne!(a.hash(), c.hash());
        assert!(matches!(
            PipelineConfig::from_toml_str("[latent]\nseed = 3", None),
            Err(SabrError::Config(_))
        ));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg =
            PipelineConfig::from_toml_str("mode = \"sabr_t\"\n[protocol]\nn_per_class = 50", None)
                .unwrap();
        assert_eq!(
            PipelineConfig::from_toml_str(&cfg.to_toml(), None).unwrap(),
            cfg
        );
        let parsed: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn invalid_fields_are_config_errors() {
        for text in [
            "mode = \"sabr_x\"",
            "[latent]\nlearning_rate = -1.0",
            "[latent]\nunknown_key = 1",
            "[seen_gan]\nleaky_slope = 1.5",
            "[omega_sweep]\ngrid = []",
            "[omega_sweep]\ngrid = [-0.1]",
            "[early_stop]\nn_folds = 1",
            "[data]\nsource = \"files\"\nfeatures = \"/nope.csv\"\nattributes = \"/nope\"\nsplit = \"/nope\"",
            "seed = -3",
            "[protocol]\nn_per_class = 0",
        ] {
            let err = PipelineConfig::from_toml_str(text, None).unwrap_err();
            assert!(matches!(err, SabrError::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn sabr_t_without_unlabeled_rows_fails_before_training() {
        let err = PipelineConfig::from_toml_str("mode = \"sabr_t\"\n[data]\nper_class = 0", None)
            .unwrap_err();
        assert!(matches!(err, SabrError::Config(_)));
    }
}
