use super::{Critic, Generator};
use crate::data::LabelSpace;
use crate::error::{Result, SabrError};
use crate::latent::{record_classifier_loss, record_semantic_loss, LatentModel, Similarity};
use crate::math::{Matrix, SeededRng, Tape, Var};
use crate::nn::Mlp;
use crate::penalty::{critic_score, record_gradient_penalty};

/// Critic objective value, its parts, and its gradient w.r.t. critic params.
#[derive(Debug, Clone)]
pub struct CriticEval {
    /// `E[D(real)] − E[D(fake)] − λ·GP`, the quantity the critic maximizes.
    pub loss: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub grad_norm_mean: f64,
    pub grads: Vec<Matrix>,
}

fn check_batch(real: &Matrix, fake: &Matrix, cond: Option<&Matrix>, alpha: &[f64]) -> Result<()> {
    if real.rows() == 0 {
        return Err(SabrError::Usage(
            "critic loss needs at least one real row".into(),
        ));
    }
    if !real.same_shape(fake) {
        return Err(SabrError::dim(
            "critic loss",
            real.shape_str(),
            fake.shape_str(),
        ));
    }
    if let Some(c) = cond {
        if c.rows() != real.rows() {
            return Err(SabrError::dim(
                "critic loss condition",
                real.shape_str(),
                c.shape_str(),
            ));
        }
    }
    if alpha.len() != real.rows() {
        return Err(SabrError::dim(
            "critic loss interpolation",
            real.shape_str(),
            format!("{} alpha values", alpha.len()),
        ));
    }
    Ok(())
}

/// Full critic objective with explicit per-row interpolation weights.
pub fn critic_objective(
    critic: &Critic,
    real: &Matrix,
    fake: &Matrix,
    cond: Option<&Matrix>,
    lambda_gp: f64,
    alpha: &[f64],
) -> Result<CriticEval> {
    check_batch(real, fake, cond, alpha)?;
    if critic.conditional != cond.is_some() {
        return Err(SabrError::Usage(format!(
            "critic conditional={} but condition {}",
            critic.conditional,
            if cond.is_some() { "given" } else { "missing" }
        )));
    }
    let mut x_hat = fake.clone();
    for (r, &a) in alpha.iter().enumerate() {
        for (h, (&p, &q)) in x_hat
            .row_mut(r)
            .iter_mut()
            .zip(real.row(r).iter().zip(fake.row(r)))
        {
            *h = a * p + (1.0 - a) * q;
        }
    }

    let mut tape = Tape::new();
    let bound = critic.net.bind(&mut tape);
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let c = cond.map(|c| tape.constant(c.clone()));
    let xh = tape.var(x_hat);
    let dr = critic_score(&mut tape, &bound, r, c)?;
    let df = critic_score(&mut tape, &bound, f, c)?;
    let mr = tape.mean(dr);
    let mf = tape.mean(df);
    let wass = tape.sub(mr, mf)?;
    let rec = record_gradient_penalty(&mut tape, &bound, xh, c)?;
    let weighted = tape.scale(rec.penalty, lambda_gp);
    let loss = tape.sub(wass, weighted)?;
    let grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(SabrError::Numeric("critic loss is not finite".into()));
    }
    Ok(CriticEval {
        loss: value,
        wasserstein: tape.scalar(wass),
        penalty: tape.scalar(rec.penalty),
        grad_norm_mean: tape.value(rec.grad_norms).mean(),
        grads: param_grads(&tape, &grads, &bound.param_vars()),
    })
}

fn param_grads(tape: &Tape, grads: &crate::math::Gradients, vars: &[Var]) -> Vec<Matrix> {
    vars.iter()
        .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
        .collect()
}

pub(crate) fn draw_alpha(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform()).collect()
}

/// Conditional critic loss with `α ∼ U(0,1)` drawn per row from `rng`.
pub fn critic_loss_seen(
    critic: &Critic,
    real: &Matrix,
    fake: &Matrix,
    cond: &Matrix,
    lambda_gp: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let alpha = draw_alpha(rng, real.rows());
    critic_loss_seen_with_alpha(critic, real, fake, cond, lambda_gp, &alpha)
}

pub fn critic_loss_seen_with_alpha(
    critic: &Critic,
    real: &Matrix,
    fake: &Matrix,
    cond: &Matrix,
    lambda_gp: f64,
    alpha: &[f64],
) -> Result<f64> {
    critic_objective(critic, real, fake, Some(cond), lambda_gp, alpha).map(|e| e.loss)
}

/// Unconditional critic loss with `α ∼ U(0,1)` drawn per row from `rng`.
pub fn critic_loss_unseen(
    critic: &Critic,
    real: &Matrix,
    fake: &Matrix,
    lambda_gp: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let alpha = draw_alpha(rng, real.rows());
    critic_loss_unseen_with_alpha(critic, real, fake, lambda_gp, &alpha)
}

pub fn critic_loss_unseen_with_alpha(
    critic: &Critic,
    real: &Matrix,
    fake: &Matrix,
    lambda_gp: f64,
    alpha: &[f64],
) -> Result<f64> {
    critic_objective(critic, real, fake, None, lambda_gp, alpha).map(|e| e.loss)
}

/// Frozen classifier and regressor heads scoring synthesized rows.
#[derive(Debug, Clone)]
pub struct SemanticRegularizer<'a> {
    pub classifier: &'a Mlp,
    pub regressor: &'a Mlp,
    /// Attribute rows in classifier-head order.
    pub class_attrs: Matrix,
    pub gamma: f64,
    pub similarity: Similarity,
    pub beta: f64,
}

impl<'a> SemanticRegularizer<'a> {
    pub fn from_latent(model: &'a LatentModel, space: &LabelSpace, beta: f64) -> Self {
        SemanticRegularizer {
            classifier: &model.classifier,
            regressor: &model.regressor,
            class_attrs: space.attributes_of(&model.seen),
            gamma: model.gamma,
            similarity: model.similarity,
            beta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorEval {
    pub loss: f64,
    /// `−E[D(G(z, c))]`.
    pub adversarial: f64,
    /// `L_C + γ·L_S` on the generated rows (0 without a regularizer).
    pub semantic: f64,
    pub grads: Vec<Matrix>,
}

/// Generator objective `−E[D(G(z ⊕ c))] + β·(L_C + γ·L_S)` and its gradient
/// w.r.t. generator params. `targets` are classifier-head indices.
pub fn generator_objective(
    generator: &Generator,
    critic: &Critic,
    z: &Matrix,
    cond: &Matrix,
    critic_cond: Option<&Matrix>,
    regularizer: Option<(&SemanticRegularizer<'_>, &[usize])>,
) -> Result<GeneratorEval> {
    if z.rows() != cond.rows() {
        return Err(SabrError::dim(
            "generator objective",
            z.shape_str(),
            cond.shape_str(),
        ));
    }
    let mut tape = Tape::new();
    let g = generator.net.bind(&mut tape);
    let d = critic.net.bind_frozen(&mut tape);
    let input = tape.constant(z.concat_cols(cond)?);
    let fake = g.forward(&mut tape, input)?;
    let cc = critic_cond.map(|c| tape.constant(c.clone()));
    let scores = critic_score(&mut tape, &d, fake, cc)?;
    let mean_score = tape.mean(scores);
    let adversarial = tape.scale(mean_score, -1.0);
    let (loss, semantic) = match regularizer {
        Some((reg, targets)) => {
            if targets.len() != z.rows() {
                return Err(SabrError::dim(
                    "generator regularizer",
                    z.shape_str(),
                    format!("{} targets", targets.len()),
                ));
            }
            let fc = reg.classifier.bind_frozen(&mut tape);
            let fr = reg.regressor.bind_frozen(&mut tape);
            let lc = record_classifier_loss(&mut tape, &fc, fake, targets)?;
            let ls = record_semantic_loss(
                &mut tape,
                &fr,
                fake,
                &reg.class_attrs,
                targets,
                reg.similarity,
            )?;
            let ls = tape.scale(ls, reg.gamma);
            let sem = tape.add(lc, ls)?;
            let weighted = tape.scale(sem, reg.beta);
            (tape.add(adversarial, weighted)?, Some(sem))
        }
        None => (adversarial, None),
    };
    let grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(SabrError::Numeric("generator loss is not finite".into()));
    }
    Ok(GeneratorEval {
        loss: value,
        adversarial: tape.scalar(adversarial),
        semantic: semantic.map_or(0.0, |s| tape.scalar(s)),
        grads: param_grads(&tape, &grads, &g.param_vars()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};

    fn linear_critic(w: &[f64], bias: f64, conditional: bool) -> Critic {
        let net = Mlp::from_layers(
            vec![Dense {
                weight: Matrix::column_vector(w),
                bias: Matrix::scalar(bias),
            }],
            Activation::LeakyRelu(0.2),
            Activation::Linear,
        )
        .unwrap();
        Critic::from_net(net, conditional).unwrap()
    }

    #[test]
    fn constant_critic_gives_minus_lambda() {
        let critic = linear_critic(&[0.0, 0.0, 0.0], 1.7, true);
        let mut rng = SeededRng::new(1);
        let real = rng.normal_matrix(6, 2, 1.0);
        let fake = rng.normal_matrix(6, 2, 1.0);
        let cond = rng.normal_matrix(6, 1, 1.0);
        let l = critic_loss_seen(&critic, &real, &fake, &cond, 10.0, &mut rng).unwrap();
        assert!((l + 10.0).abs() < 1e-12);
        let unc = linear_critic(&[0.0, 0.0], -3.0, false);
        let l = critic_loss_unseen(&unc, &real, &fake, 10.0, &mut rng).unwrap();
        assert!((l + 10.0).abs() < 1e-12);
    }

    #[test]
    fn unit_linear_critic_reduces_to_mean_difference() {
        let w = [0.6, 0.8, 0.0];
        let critic = linear_critic(&w, 0.0, true);
        let mut rng = SeededRng::new(2);
        let real = rng.normal_matrix(8, 2, 1.0);
        let fake = rng.normal_matrix(8, 2, 1.0);
        let cond = rng.normal_matrix(8, 1, 1.0);
        let l = critic_loss_seen(&critic, &real, &fake, &cond, 10.0, &mut rng).unwrap();
        let diff = real.column_means().sub(&fake.column_means()).unwrap();
        let expected = 0.6 * diff.get(0, 0) + 0.8 * diff.get(0, 1);
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_and_empty_batches() {
        let critic = linear_critic(&[1.0, 0.0], 0.0, false);
        let mut rng = SeededRng::new(3);
        let err = critic_loss_unseen(
            &critic,
            &Matrix::zeros(3, 2),
            &Matrix::zeros(2, 2),
            10.0,
            &mut rng,
        );
        assert!(matches!(err, Err(SabrError::Dimension { .. })));
        let err = critic_loss_unseen(
            &critic,
            &Matrix::zeros(0, 2),
            &Matrix::zeros(0, 2),
            10.0,
            &mut rng,
        );
        assert!(matches!(err, Err(SabrError::Usage(_))));
    }

    #[test]
    fn replay_oracle_matches_recorded_alpha() {
        let mut rng = SeededRng::new(7);
        let cfg = super::super::GanConfig {
            critic_hidden: 5,
            ..Default::default()
        };
        let critic = Critic::new(3, Some(2), &cfg, &mut rng).unwrap();
        let real = rng.normal_matrix(4, 3, 1.0);
        let fake = rng.normal_matrix(4, 3, 1.0);
        let cond = rng.normal_matrix(4, 2, 1.0);

        let mut draw = SeededRng::new(99);
        let loss = critic_loss_seen(&critic, &real, &fake, &cond, 10.0, &mut draw).unwrap();
        let mut replay = SeededRng::new(99);
        let alpha: Vec<f64> = (0..4).map(|_| replay.uniform()).collect();

        // independent recomputation: numeric forward, input gradient by finite differences
        let d = |x: &Matrix| critic.score(x, Some(&cond)).unwrap();
        let wass = d(&real).mean() - d(&fake).mean();
        let mut gp = 0.0;
        for (r, &a) in alpha.iter().enumerate() {
            let xh: Vec<f64> = (0..3)
                .map(|j| a * real.get(r, j) + (1.0 - a) * fake.get(r, j))
                .collect();
            let mut norm_sq = 0.0;
            for j in 0..3 {
                let h = 1e-6;
                let mut p = Matrix::row_vector(&xh);
                let mut m = Matrix::row_vector(&xh);
                p.set(0, j, xh[j] + h);
                m.set(0, j, xh[j] - h);
                let c = Matrix::row_vector(cond.row(r));
                let g = (critic.score(&p, Some(&c)).unwrap().get(0, 0)
                    - critic.score(&m, Some(&c)).unwrap().get(0, 0))
                    / (2.0 * h);
                norm_sq += g * g;
            }
            gp += (norm_sq.sqrt() - 1.0).powi(2);
        }
        let expected = wass - 10.0 * gp / 4.0;
        assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
        assert_eq!(
            loss,
            critic_loss_seen_with_alpha(&critic, &real, &fake, &cond, 10.0, &alpha).unwrap()
        );
    }

    #[test]
    fn penalty_invariant_under_role_swap_with_mirrored_alpha() {
        let mut rng = SeededRng::new(11);
        let cfg = super::super::GanConfig {
            critic_hidden: 7,
            ..Default::default()
        };
        let critic = Critic::new(3, None, &cfg, &mut rng).unwrap();
        let real = rng.normal_matrix(5, 3, 1.0);
        let fake = rng.normal_matrix(5, 3, 2.0);
        let alpha: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
        let mirrored: Vec<f64> = alpha.iter().map(|a| 1.0 - a).collect();
        let a = critic_objective(&critic, &real, &fake, None, 10.0, &alpha).unwrap();
        let b = critic_objective(&critic, &fake, &real, None, 10.0, &mirrored).unwrap();
        assert!((a.penalty - b.penalty).abs() < 1e-12);
        assert!((a.wasserstein + b.wasserstein).abs() < 1e-12);
    }

    #[test]
    fn identical_real_and_fake_distributions_cancel() {
        let critic = linear_critic(&[0.6, 0.8], 0.0, false);
        let mut rng = SeededRng::new(5);
        let real = rng.normal_matrix(10_000, 2, 1.0);
        let fake = rng.normal_matrix(10_000, 2, 1.0);
        let l = critic_loss_unseen(&critic, &real, &fake, 10.0, &mut rng).unwrap();
        // the difference of two means of unit-variance scores has std sqrt(2/n)
        assert!(l.abs() < 4.0 * (2.0f64 / 10_000.0).sqrt());
    }
}
