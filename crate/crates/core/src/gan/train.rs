use std::path::Path;

use serde::{Deserialize, Serialize};

use super::objective::{critic_objective, draw_alpha, generator_objective, SemanticRegularizer};
use super::{
    transfer_penalty, transfer_penalty_grad, Critic, GanConfig, Generator, UnseenConditioning,
};
use crate::data::Dataset;
use crate::error::{Result, SabrError};
use crate::latent::LatentModel;
use crate::math::{Matrix, SeededRng};
use crate::optim::Optimizer;

/// Labeled latent rows for the conditional trainer.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalData<'a> {
    pub latent: &'a Matrix,
    /// Row index into `class_attrs` for every latent row.
    pub targets: &'a [usize],
    pub class_attrs: &'a Matrix,
}

/// Per-generator-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub step: usize,
    /// Mean over the critic steps preceding this generator step.
    pub critic_loss: f64,
    pub wasserstein: f64,
    pub gp_norm_mean: f64,
    pub generator_loss: f64,
}

/// Per-epoch means of [`GanStep`] fields plus the transfer distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub gp_norm_mean: f64,
    pub transfer_penalty: f64,
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: Generator,
    pub critic: Critic,
    pub trace: Vec<GanEpoch>,
    pub steps: Vec<GanStep>,
    /// Generator snapshots every `checkpoint_every` epochs.
    pub checkpoints: Vec<(usize, Generator)>,
}

struct Streams {
    batches: SeededRng,
    noise: SeededRng,
    interp: SeededRng,
    classes: SeededRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let root = SeededRng::new(seed);
        Streams {
            batches: root.substream("batches"),
            noise: root.substream("noise"),
            interp: root.substream("interp"),
            classes: root.substream("classes"),
        }
    }
}

fn negate(grads: Vec<Matrix>) -> Vec<Matrix> {
    grads.into_iter().map(|g| g.map(|v| -v)).collect()
}

fn draw_rows(rng: &mut SeededRng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch.min(n)).map(|_| rng.below(n)).collect()
}

#[derive(Default)]
struct EpochAcc {
    critic: f64,
    generator: f64,
    gp_norm: f64,
    steps: usize,
}

impl EpochAcc {
    fn add(&mut self, s: &GanStep) {
        self.critic += s.critic_loss;
        self.generator += s.generator_loss;
        self.gp_norm += s.gp_norm_mean;
        self.steps += 1;
    }

    fn finish(&self, epoch: usize, transfer: f64) -> GanEpoch {
        let n = self.steps.max(1) as f64;
        GanEpoch {
            epoch,
            critic_loss: self.critic / n,
            generator_loss: self.generator / n,
            gp_norm_mean: self.gp_norm / n,
            transfer_penalty: transfer,
        }
    }
}

/// Conditional WGAN-GP on labeled latent rows, optionally regularized by
/// frozen semantic heads.
pub fn train_conditional_gan(
    data: &ConditionalData<'_>,
    regularizer: Option<&SemanticRegularizer<'_>>,
    cfg: &GanConfig,
) -> Result<GanRun> {
    cfg.validate()?;
    let n = data.latent.rows();
    if n == 0 || data.targets.len() != n {
        return Err(SabrError::Usage(format!(
            "conditional GAN needs labeled rows, got {n} rows and {} targets",
            data.targets.len()
        )));
    }
    if let Some(&t) = data.targets.iter().find(|&&t| t >= data.class_attrs.rows()) {
        return Err(SabrError::Usage(format!("target {t} has no attribute row")));
    }
    let d_attr = data.class_attrs.cols();
    let latent_dim = data.latent.cols();
    let z_dim = cfg.resolved_z_dim(d_attr);
    let root = SeededRng::new(cfg.seed);
    let mut generator = Generator::new(
        z_dim,
        d_attr,
        latent_dim,
        cfg,
        &mut root.substream("generator_init"),
    )?;
    let mut critic = Critic::new(
        latent_dim,
        Some(d_attr),
        cfg,
        &mut root.substream("critic_init"),
    )?;
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = Streams::new(cfg.seed);

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut run = GanRun {
        generator: generator.clone(),
        critic: critic.clone(),
        trace: Vec::with_capacity(cfg.epochs),
        steps: Vec::with_capacity(cfg.epochs * steps_per_epoch),
        checkpoints: Vec::new(),
    };
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAcc::default();
        for _ in 0..steps_per_epoch {
            let (mut c_loss, mut wass, mut gp_norm) = (0.0, 0.0, 0.0);
            for _ in 0..cfg.critic_steps {
                let idx = draw_rows(&mut rng.batches, n, cfg.batch_size);
                let real = data.latent.select_rows(&idx);
                let cls: Vec<usize> = idx.iter().map(|&i| data.targets[i]).collect();
                let cond = data.class_attrs.select_rows(&cls);
                let z = rng.noise.normal_matrix(idx.len(), z_dim, 1.0);
                let fake = generator.forward(&z, &cond)?;
                let alpha = draw_alpha(&mut rng.interp, idx.len());
                let eval =
                    critic_objective(&critic, &real, &fake, Some(&cond), cfg.lambda_gp, &alpha)?;
                opt_d.step(&mut critic.net.params_mut(), &negate(eval.grads))?;
                c_loss += eval.loss;
                wass += eval.wasserstein;
                gp_norm += eval.grad_norm_mean;
            }
            let idx = draw_rows(&mut rng.batches, n, cfg.batch_size);
            let cls: Vec<usize> = idx.iter().map(|&i| data.targets[i]).collect();
            let cond = data.class_attrs.select_rows(&cls);
            let z = rng.noise.normal_matrix(idx.len(), z_dim, 1.0);
            let eval = generator_objective(
                &generator,
                &critic,
                &z,
                &cond,
                Some(&cond),
                regularizer.map(|r| (r, cls.as_slice())),
            )?;
            opt_g.step(&mut generator.net.params_mut(), &eval.grads)?;

            let k = cfg.critic_steps as f64;
            let step = GanStep {
                step: run.steps.len() + 1,
                critic_loss: c_loss / k,
                wasserstein: wass / k,
                gp_norm_mean: gp_norm / k,
                generator_loss: eval.loss,
            };
            acc.add(&step);
            run.steps.push(step);
        }
        run.trace.push(acc.finish(epoch, 0.0));
        if epoch % cfg.checkpoint_every == 0 {
            run.checkpoints.push((epoch, generator.clone()));
        }
        log::debug!("gan epoch {epoch}: {:?}", run.trace.last());
    }
    run.generator = generator;
    run.critic = critic;
    Ok(run)
}

/// Seen-class generator on `ψ(x)` of the seen-train rows, regularized by the
/// latent model's frozen heads with weight `β`.
pub fn train_seen_gan(latent: &LatentModel, ds: &Dataset, cfg: &GanConfig) -> Result<GanRun> {
    let space = ds.label_space();
    if latent.seen != space.seen() || latent.feature_dim() != ds.feature_dim() {
        return Err(SabrError::Usage(
            "latent model was not trained on this dataset's seen classes".into(),
        ));
    }
    let train = ds.seen_train();
    let psi = latent.psi_forward(&train.features)?;
    let targets = latent.head_targets(&train.labels)?;
    let reg = SemanticRegularizer::from_latent(latent, space, cfg.beta);
    let data = ConditionalData {
        latent: &psi,
        targets: &targets,
        class_attrs: &reg.class_attrs,
    };
    train_conditional_gan(&data, Some(&reg), cfg)
}

/// Unseen-class generator against an unconditional critic on unlabeled
/// latent rows, tied to `seen` by `ω·‖W_seen − W‖`.
pub fn train_transfer_gan(
    unlabeled: &Matrix,
    unseen_attrs: &Matrix,
    seen: Option<&Generator>,
    cfg: &GanConfig,
) -> Result<GanRun> {
    cfg.validate()?;
    if unseen_attrs.rows() == 0 {
        return Err(SabrError::Usage(
            "no unseen attribute vectors to condition on".into(),
        ));
    }
    let n = unlabeled.rows();
    if n == 0 {
        return Err(SabrError::Usage(
            "no unlabeled rows for the unseen GAN".into(),
        ));
    }
    if cfg.omega > 0.0 && seen.is_none() {
        return Err(SabrError::Usage("omega > 0 needs a seen generator".into()));
    }
    let d_attr = unseen_attrs.cols();
    let latent_dim = unlabeled.cols();
    let root = SeededRng::new(cfg.seed);
    let mut generator = if cfg.init_from_seen {
        seen.ok_or_else(|| SabrError::Usage("init_from_seen needs a seen generator".into()))?
            .clone()
    } else {
        let z_dim = cfg.resolved_z_dim(d_attr);
        Generator::new(
            z_dim,
            d_attr,
            latent_dim,
            cfg,
            &mut root.substream("generator_init"),
        )?
    };
    if generator.cond_dim != d_attr || generator.latent_dim() != latent_dim {
        return Err(SabrError::dim(
            "unseen generator",
            format!(
                "cond {} latent {}",
                generator.cond_dim,
                generator.latent_dim()
            ),
            format!("cond {d_attr} latent {latent_dim}"),
        ));
    }
    if let Some(s) = seen {
        transfer_penalty(&generator, s, cfg.transfer_norm)?;
    }
    let z_dim = generator.z_dim;
    let mut critic = Critic::new(latent_dim, None, cfg, &mut root.substream("critic_init"))?;
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = Streams::new(cfg.seed);
    let mean_attr = unseen_attrs.column_means();

    let draw_cond = |rng: &mut SeededRng, rows: usize| match cfg.unseen_conditioning {
        UnseenConditioning::UniformClass => {
            let cls: Vec<usize> = (0..rows).map(|_| rng.below(unseen_attrs.rows())).collect();
            unseen_attrs.select_rows(&cls)
        }
        UnseenConditioning::MeanAttribute => mean_attr.broadcast_rows(rows),
    };

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut run = GanRun {
        generator: generator.clone(),
        critic: critic.clone(),
        trace: Vec::with_capacity(cfg.epochs),
        steps: Vec::with_capacity(cfg.epochs * steps_per_epoch),
        checkpoints: Vec::new(),
    };
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAcc::default();
        for _ in 0..steps_per_epoch {
            let (mut c_loss, mut wass, mut gp_norm) = (0.0, 0.0, 0.0);
            for _ in 0..cfg.critic_steps {
                let idx = draw_rows(&mut rng.batches, n, cfg.batch_size);
                let real = unlabeled.select_rows(&idx);
                let cond = draw_cond(&mut rng.classes, idx.len());
                let z = rng.noise.normal_matrix(idx.len(), z_dim, 1.0);
                let fake = generator.forward(&z, &cond)?;
                let alpha = draw_alpha(&mut rng.interp, idx.len());
                let eval = critic_objective(&critic, &real, &fake, None, cfg.lambda_gp, &alpha)?;
                opt_d.step(&mut critic.net.params_mut(), &negate(eval.grads))?;
                c_loss += eval.loss;
                wass += eval.wasserstein;
                gp_norm += eval.grad_norm_mean;
            }
            let rows = cfg.batch_size.min(n);
            let cond = draw_cond(&mut rng.classes, rows);
            let z = rng.noise.normal_matrix(rows, z_dim, 1.0);
            let mut eval = generator_objective(&generator, &critic, &z, &cond, None, None)?;
            if let (Some(anchor), true) = (seen, cfg.omega > 0.0) {
                let tg = transfer_penalty_grad(&generator, anchor, cfg.transfer_norm)?;
                for (g, t) in eval.grads.iter_mut().zip(&tg) {
                    g.add_assign(&t.scale(cfg.omega))?;
                }
                eval.loss += cfg.omega * transfer_penalty(&generator, anchor, cfg.transfer_norm)?;
            }
            opt_g.step(&mut generator.net.params_mut(), &eval.grads)?;

            let k = cfg.critic_steps as f64;
            let step = GanStep {
                step: run.steps.len() + 1,
                critic_loss: c_loss / k,
                wasserstein: wass / k,
                gp_norm_mean: gp_norm / k,
                generator_loss: eval.loss,
            };
            acc.add(&step);
            run.steps.push(step);
        }
        let distance = match seen {
            Some(s) => transfer_penalty(&generator, s, cfg.transfer_norm)?,
            None => 0.0,
        };
        run.trace.push(acc.finish(epoch, distance));
        if epoch % cfg.checkpoint_every == 0 {
            run.checkpoints.push((epoch, generator.clone()));
        }
    }
    run.generator = generator;
    run.critic = critic;
    Ok(run)
}

/// Unseen GAN on `ψ(x)` of the dataset's unlabeled rows, conditioned on `U`.
pub fn train_unseen_gan(
    latent: &LatentModel,
    seen: Option<&Generator>,
    ds: &Dataset,
    cfg: &GanConfig,
) -> Result<GanRun> {
    let space = ds.label_space();
    if space.unseen().is_empty() {
        return Err(SabrError::Usage("dataset has no unseen classes".into()));
    }
    let unlabeled = latent.psi_forward(&ds.unlabeled())?;
    let attrs = space.attributes_of(space.unseen());
    train_transfer_gan(&unlabeled, &attrs, seen, cfg)
}

/// CSV loss trace: `epoch,critic_loss,generator_loss,gp_norm_mean,transfer_penalty`.
pub fn write_trace_csv(path: &Path, trace: &[GanEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SabrError::io(path, e.into()))?;
    let io_err = |e: csv::Error| SabrError::io(path, e.into());
    w.write_record([
        "epoch",
        "critic_loss",
        "generator_loss",
        "gp_norm_mean",
        "transfer_penalty",
    ])
    .map_err(io_err)?;
    for e in trace {
        w.write_record([
            e.epoch.to_string(),
            e.critic_loss.to_string(),
            e.generator_loss.to_string(),
            e.gp_norm_mean.to_string(),
            e.transfer_penalty.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| SabrError::io(path, e))
}
