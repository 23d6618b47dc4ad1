//! Central finite differences (step 1e-5) against reverse-mode gradients for
//! every training objective, each on 20 random small configurations.
//! Shared by the oracle tests and the acceptance report.

use sabr_core::data::{LabelId, LabelSpace};
use sabr_core::gan::{
    critic_objective, generator_objective, transfer_penalty, transfer_penalty_grad, Critic,
    GanConfig, Generator, SemanticRegularizer, TransferNorm,
};
use sabr_core::latent::{
    record_classifier_loss, record_semantic_loss, LatentModel, LatentTrainConfig, Similarity,
};
use sabr_core::nn::{Activation, Mlp};
use sabr_core::penalty::grad_penalty_value_and_grad;
use sabr_core::{Matrix, SeededRng, Tape};

const STEP: f64 = 1e-5;
pub const CONFIGS: u64 = 20;

/// Largest relative error over the random configurations of one objective.
#[derive(Debug, Clone, Copy)]
pub struct Worst {
    pub error: f64,
    pub seed: u64,
}

impl Worst {
    fn new() -> Self {
        Worst {
            error: 0.0,
            seed: 0,
        }
    }

    fn record(&mut self, seed: u64, error: f64) {
        // NaN must surface as a failure, not vanish in a max
        if error.is_nan() || error > self.error {
            *self = Worst { error, seed };
        }
    }
}

/// One objective's name, its worst error and the tolerance it must meet.
pub struct Check {
    pub name: &'static str,
    pub worst: Worst,
    pub tolerance: f64,
}

pub const FIRST_ORDER_TOL: f64 = 1e-6;
pub const SECOND_ORDER_TOL: f64 = 1e-4;

pub fn all() -> Vec<Check> {
    let first = |name, worst| Check {
        name,
        worst,
        tolerance: FIRST_ORDER_TOL,
    };
    let second = |name, worst| Check {
        name,
        worst,
        tolerance: SECOND_ORDER_TOL,
    };
    vec![
        first("classifier loss", classifier_loss()),
        first("semantic loss", semantic_loss()),
        first("joint latent objective", joint_latent_objective()),
        first("conditional critic, no penalty", critic(true, 0.0, 300)),
        second("conditional critic with penalty", critic(true, 10.0, 400)),
        first("unconditional critic, no penalty", critic(false, 0.0, 500)),
        second(
            "unconditional critic with penalty",
            critic(false, 10.0, 600),
        ),
        first("conditional generator", generator(true, 700)),
        first("unconditional generator", generator(false, 800)),
        first("regularized generator", regularized_generator()),
        second("penalty parameter gradient", penalty_parameter_gradient()),
        first("transfer penalty", transfer_penalty_gradient()),
    ]
}

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all parameters.
fn fd_rel_error<T: Clone>(
    model: &T,
    params_mut: for<'a> fn(&'a mut T) -> Vec<&'a mut Matrix>,
    f: impl Fn(&T) -> f64,
    analytic: &[Matrix],
) -> f64 {
    let mut probe = model.clone();
    let shapes: Vec<usize> = params_mut(&mut probe).iter().map(|m| m.len()).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient count");
    let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
    for (p, &len) in shapes.iter().enumerate() {
        assert_eq!(analytic[p].len(), len, "gradient shape of param {p}");
        for i in 0..len {
            let orig = params_mut(&mut probe)[p].data()[i];
            params_mut(&mut probe)[p].data_mut()[i] = orig + STEP;
            let up = f(&probe);
            params_mut(&mut probe)[p].data_mut()[i] = orig - STEP;
            let down = f(&probe);
            params_mut(&mut probe)[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[p].data()[i];
            diff += (a - numeric).powi(2);
            na += a * a;
            nf += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
}

fn mlp_params(m: &mut Mlp) -> Vec<&mut Matrix> {
    m.params_mut()
}

fn latent_params(m: &mut LatentModel) -> Vec<&mut Matrix> {
    m.params_mut()
}

fn critic_params(c: &mut Critic) -> Vec<&mut Matrix> {
    c.net.params_mut()
}

fn generator_params(g: &mut Generator) -> Vec<&mut Matrix> {
    g.net.params_mut()
}

/// Moves every parameter off its initial value; zero biases would put
/// pre-activations of zero inputs exactly on a kink.
fn jitter(params: Vec<&mut Matrix>, rng: &mut SeededRng) {
    for p in params {
        for v in p.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
}

fn dim(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

struct LatentCase {
    model: LatentModel,
    space: LabelSpace,
    x: Matrix,
    labels: Vec<LabelId>,
    targets: Vec<usize>,
    attrs: Matrix,
}

fn latent_case(seed: u64) -> LatentCase {
    let mut rng = SeededRng::new(seed);
    let d_feat = dim(&mut rng, 2, 6);
    let d_attr = dim(&mut rng, 2, 5);
    let n_seen = dim(&mut rng, 2, 4);
    let n = dim(&mut rng, 3, 8);
    let similarity = [
        Similarity::Dot,
        Similarity::Cosine,
        Similarity::NegEuclidean,
    ][rng.below(3)];
    let cfg = LatentTrainConfig {
        h1: dim(&mut rng, 2, 6),
        h2: dim(&mut rng, 2, 5),
        gamma: rng.uniform(),
        similarity,
        seed,
        ..Default::default()
    };
    let n_classes = n_seen + 1;
    let names = (0..n_classes).map(|k| format!("c{k}")).collect();
    let seen: Vec<LabelId> = (0..n_seen).map(LabelId).collect();
    let space = LabelSpace::new(
        names,
        rng.normal_matrix(n_classes, d_attr, 1.0),
        seen.clone(),
        vec![LabelId(n_seen)],
    )
    .unwrap();
    let mut model = LatentModel::new(d_feat, d_attr, seen.clone(), &cfg).unwrap();
    jitter(model.params_mut(), &mut rng);
    let labels: Vec<LabelId> = (0..n).map(|_| seen[rng.below(n_seen)]).collect();
    let targets = model.head_targets(&labels).unwrap();
    let attrs = space.attributes_of(&seen);
    LatentCase {
        model,
        space,
        x: rng.normal_matrix(n, d_feat, 1.0),
        labels,
        targets,
        attrs,
    }
}

pub fn classifier_loss() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let c = latent_case(seed);
        let latent = c.model.psi_forward(&c.x).unwrap();
        let mut tape = Tape::new();
        let head = c.model.classifier.bind(&mut tape);
        let lv = tape.constant(latent.clone());
        let loss = record_classifier_loss(&mut tape, &head, lv, &c.targets).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Matrix> = head
            .param_vars()
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect();
        let f = |head: &Mlp| {
            let mut m = c.model.clone();
            m.classifier = head.clone();
            m.loss_classifier(&latent, &c.labels).unwrap()
        };
        let err = fd_rel_error(&c.model.classifier, mlp_params, f, &analytic);
        worst.record(seed, err);
    }
    worst
}

pub fn semantic_loss() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let c = latent_case(100 + seed);
        let latent = c.model.psi_forward(&c.x).unwrap();
        let mut tape = Tape::new();
        let head = c.model.regressor.bind(&mut tape);
        let lv = tape.constant(latent.clone());
        let loss = record_semantic_loss(
            &mut tape,
            &head,
            lv,
            &c.attrs,
            &c.targets,
            c.model.similarity,
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Matrix> = head
            .param_vars()
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect();
        let f = |head: &Mlp| {
            let mut m = c.model.clone();
            m.regressor = head.clone();
            m.loss_semantic(&latent, &c.labels, &c.space).unwrap()
        };
        let err = fd_rel_error(&c.model.regressor, mlp_params, f, &analytic);
        worst.record(seed, err);
    }
    worst
}

pub fn joint_latent_objective() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let c = latent_case(200 + seed);
        let obj = c.model.batch_objective(&c.x, &c.targets, &c.attrs).unwrap();
        let expected = c.model.loss_total(&c.x, &c.labels, &c.space).unwrap();
        assert!((obj.loss - expected).abs() < 1e-12);
        let f = |m: &LatentModel| m.loss_total(&c.x, &c.labels, &c.space).unwrap();
        let err = fd_rel_error(&c.model, latent_params, f, &obj.grads);
        worst.record(seed, err);
    }
    worst
}

struct GanCase {
    generator: Generator,
    critic: Critic,
    z: Matrix,
    cond: Matrix,
    real: Matrix,
    alpha: Vec<f64>,
}

fn gan_case(seed: u64, conditional: bool) -> GanCase {
    let mut rng = SeededRng::new(seed);
    let latent_dim = dim(&mut rng, 2, 5);
    let d_attr = dim(&mut rng, 2, 4);
    let n = dim(&mut rng, 2, 6);
    let cfg = GanConfig {
        generator_hidden: dim(&mut rng, 2, 6),
        critic_hidden: dim(&mut rng, 2, 6),
        generator_output: [Activation::Relu, Activation::Linear][rng.below(2)],
        ..Default::default()
    };
    let mut generator = Generator::new(d_attr, d_attr, latent_dim, &cfg, &mut rng).unwrap();
    let mut critic =
        Critic::new(latent_dim, conditional.then_some(d_attr), &cfg, &mut rng).unwrap();
    jitter(generator.net.params_mut(), &mut rng);
    jitter(critic.net.params_mut(), &mut rng);
    GanCase {
        generator,
        critic,
        z: rng.normal_matrix(n, d_attr, 1.0),
        cond: rng.normal_matrix(n, d_attr, 1.0),
        real: rng.normal_matrix(n, latent_dim, 1.0),
        alpha: (0..n).map(|_| rng.uniform()).collect(),
    }
}

pub fn critic(conditional: bool, lambda: f64, offset: u64) -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let c = gan_case(offset + seed, conditional);
        let fake = c.generator.forward(&c.z, &c.cond).unwrap();
        let cond = conditional.then_some(&c.cond);
        let eval = critic_objective(&c.critic, &c.real, &fake, cond, lambda, &c.alpha).unwrap();
        let f = |d: &Critic| {
            critic_objective(d, &c.real, &fake, cond, lambda, &c.alpha)
                .unwrap()
                .loss
        };
        let err = fd_rel_error(&c.critic, critic_params, f, &eval.grads);
        worst.record(seed, err);
    }
    worst
}

pub fn generator(conditional: bool, offset: u64) -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let c = gan_case(offset + seed, conditional);
        let cc = conditional.then_some(&c.cond);
        let eval = generator_objective(&c.generator, &c.critic, &c.z, &c.cond, cc, None).unwrap();
        let f = |g: &Generator| {
            generator_objective(g, &c.critic, &c.z, &c.cond, cc, None)
                .unwrap()
                .loss
        };
        let err = fd_rel_error(&c.generator, generator_params, f, &eval.grads);
        worst.record(seed, err);
    }
    worst
}

pub fn regularized_generator() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let lc = latent_case(900 + seed);
        let mut rng = SeededRng::new(950 + seed);
        let cfg = GanConfig {
            generator_hidden: dim(&mut rng, 2, 6),
            critic_hidden: dim(&mut rng, 2, 6),
            ..Default::default()
        };
        let d_attr = lc.model.attr_dim();
        let latent_dim = lc.model.latent_dim();
        let n = lc.targets.len();
        let mut generator = Generator::new(d_attr, d_attr, latent_dim, &cfg, &mut rng).unwrap();
        let mut critic = Critic::new(latent_dim, Some(d_attr), &cfg, &mut rng).unwrap();
        jitter(generator.net.params_mut(), &mut rng);
        jitter(critic.net.params_mut(), &mut rng);
        let z = rng.normal_matrix(n, d_attr, 1.0);
        let cond = lc.attrs.select_rows(&lc.targets);
        let reg = SemanticRegularizer::from_latent(&lc.model, &lc.space, 0.1 + rng.uniform());
        let eval = generator_objective(
            &generator,
            &critic,
            &z,
            &cond,
            Some(&cond),
            Some((&reg, &lc.targets)),
        )
        .unwrap();
        assert!(eval.semantic > 0.0, "regularizer must contribute");
        let f = |g: &Generator| {
            generator_objective(
                g,
                &critic,
                &z,
                &cond,
                Some(&cond),
                Some((&reg, &lc.targets)),
            )
            .unwrap()
            .loss
        };
        let err = fd_rel_error(&generator, generator_params, f, &eval.grads);
        worst.record(seed, err);
    }
    worst
}

pub fn penalty_parameter_gradient() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let conditional = seed % 2 == 0;
        let c = gan_case(1000 + seed, conditional);
        let x_hat = c.real.clone();
        let cond = conditional.then_some(&c.cond);
        let (_, grads) = grad_penalty_value_and_grad(&c.critic.net, &x_hat, cond).unwrap();
        let f = |net: &Mlp| grad_penalty_value_and_grad(net, &x_hat, cond).unwrap().0;
        let err = fd_rel_error(&c.critic.net, mlp_params, f, &grads);
        worst.record(seed, err);
    }
    worst
}

pub fn transfer_penalty_gradient() -> Worst {
    let mut worst = Worst::new();
    for seed in 0..CONFIGS {
        let a = gan_case(1100 + seed, true).generator;
        let mut b = a.clone();
        jitter(b.net.params_mut(), &mut SeededRng::new(seed));
        for norm in [TransferNorm::L2, TransferNorm::SquaredL2] {
            let grads = transfer_penalty_grad(&b, &a, norm).unwrap();
            let f = |g: &Generator| transfer_penalty(g, &a, norm).unwrap();
            let err = fd_rel_error(&b, generator_params, f, &grads);
            worst.record(seed, err);
        }
    }
    worst
}
