//! MINE-f: the variational bound `I(X;Z) ≥ E_joint[t] − E_marginal[e^{t−1}]`
//! maximised over a statistic network `t`.
//!
//! Marginal samples come from pairing `x_p` with `z_{π(p)}` for a random
//! in-batch derangement `π`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, Gradients, Mlp};
use super::optim::{Optimizer, OptimizerKind};
use super::InfonetError;

/// Inputs to `e^{t−1}` are clamped here; the gradient is zero past the clamp.
pub const EXP_CLAMP: f64 = 30.0;
/// Global gradient-norm cap for statistic networks.
pub const STAT_GRAD_CLIP: f64 = 10.0;

/// Uniform random cyclic permutation (Sattolo); never has a fixed point.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    perm
}

/// `[x | z]` row-wise.
pub fn pair_inputs(x: ArrayView2<f64>, z: ArrayView2<f64>) -> Array2<f64> {
    let dx = x.ncols();
    let mut out = Array2::zeros((x.nrows(), dx + z.ncols()));
    out.slice_mut(s![.., ..dx]).assign(&x);
    out.slice_mut(s![.., dx..]).assign(&z);
    out
}

/// Statistic network `t(x, z)` over the concatenated input.
pub fn new_statnet(x_dim: usize, z_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Mlp, InfonetError> {
    Mlp::new(&[x_dim + z_dim, hidden, 1], &[Activation::Relu, Activation::Identity], rng)
}

/// Value of the bound on one batch with its gradients.
#[derive(Debug, Clone)]
pub struct MineEval {
    pub value: f64,
    /// `∂value/∂θ` for the statistic network.
    pub stat_grads: Gradients,
    /// `∂value/∂z`, one row per `z` sample.
    pub z_grad: Array2<f64>,
}

/// Evaluates the bound with joint pairs `(x_j, z_j)` and marginal pairs
/// `(x_p, z_{perm[p]})`.
pub fn mine_objective(
    statnet: &Mlp,
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    perm: &[usize],
) -> Result<MineEval, InfonetError> {
    let b = x.nrows();
    if z.nrows() != b || perm.len() != b || b == 0 {
        return Err(InfonetError::ShapeMismatch(format!("{} x rows, {} z rows, {} pairs", b, z.nrows(), perm.len())));
    }
    let z_marg = z.select(Axis(0), perm);
    let joint_in = pair_inputs(x, z);
    let marg_in = pair_inputs(x, z_marg.view());
    let joint = statnet.forward_batch(joint_in.view())?;
    let marg = statnet.forward_batch(marg_in.view())?;
    let bf = b as f64;
    let t_joint = joint.output.column(0);
    let t_marg = marg.output.column(0);
    let exp_terms: Array1<f64> = t_marg.mapv(|t| (t.min(EXP_CLAMP) - 1.0).exp());
    let value = t_joint.sum() / bf - exp_terms.sum() / bf;

    let g_joint = Array2::from_elem((b, 1), 1.0 / bf);
    let g_marg = Array2::from_shape_fn((b, 1), |(i, _)| {
        if t_marg[i] < EXP_CLAMP {
            -exp_terms[i] / bf
        } else {
            0.0
        }
    });
    let (mut stat_grads, dj) = statnet.backward(&joint, g_joint.view())?;
    let (gm, dm) = statnet.backward(&marg, g_marg.view())?;
    stat_grads.add_assign(&gm);

    let x_dim = x.ncols();
    let mut z_grad = dj.slice(s![.., x_dim..]).to_owned();
    for (p, &src) in perm.iter().enumerate() {
        let row = dm.slice(s![p, x_dim..]);
        let mut target = z_grad.row_mut(src);
        target += &row;
    }
    if !value.is_finite() {
        return Err(InfonetError::Diverged(format!("bound value {value}")));
    }
    Ok(MineEval { value, stat_grads, z_grad })
}

/// Bound value only, averaging the marginal term over `rounds` derangements.
pub fn mine_value(
    statnet: &Mlp,
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    rounds: usize,
    rng: &mut impl Rng,
) -> Result<f64, InfonetError> {
    let b = x.nrows();
    let joint = statnet.predict(pair_inputs(x, z).view())?;
    let joint_mean = joint.column(0).sum() / b as f64;
    let mut marg_total = 0.0;
    for _ in 0..rounds.max(1) {
        let perm = derangement(b, rng);
        let zm = z.select(Axis(0), &perm);
        let t = statnet.predict(pair_inputs(x, zm.view()).view())?;
        marg_total += t.column(0).iter().map(|v| (v.min(EXP_CLAMP) - 1.0).exp()).sum::<f64>() / b as f64;
    }
    let value = joint_mean - marg_total / rounds.max(1) as f64;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(InfonetError::Diverged(format!("bound value {value}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MineOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Derangements averaged in the final full-data evaluation.
    pub eval_rounds: usize,
}

impl Default for MineOptions {
    fn default() -> Self {
        Self {
            steps: 1500,
            learning_rate: 1e-3,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            eval_rounds: 8,
        }
    }
}

fn sample_batch(n: usize, size: usize, rng: &mut impl Rng) -> Vec<usize> {
    if size >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, size).into_vec()
    }
}

/// Trains `statnet` on paired samples by gradient ascent and returns the bound
/// evaluated on all samples, in nats.
pub fn minef_estimate(
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    statnet: &mut Mlp,
    opts: &MineOptions,
) -> Result<f64, InfonetError> {
    let n = x.nrows();
    if z.nrows() != n || n < 2 {
        return Err(InfonetError::ShapeMismatch(format!("{n} x rows and {} z rows", z.nrows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = Optimizer::new(opts.optimizer, opts.learning_rate, statnet);
    for step in 0..opts.steps {
        let idx = sample_batch(n, opts.batch_size, &mut rng);
        let xb = x.select(Axis(0), &idx);
        let zb = z.select(Axis(0), &idx);
        let perm = derangement(idx.len(), &mut rng);
        let eval = mine_objective(statnet, xb.view(), zb.view(), &perm)?;
        let mut g = eval.stat_grads;
        g.scale(-1.0);
        g.clip_norm(STAT_GRAD_CLIP);
        opt.step(statnet, &g);
        if !statnet.is_finite() {
            return Err(InfonetError::Diverged(format!("statistic network at step {step}")));
        }
    }
    mine_value(statnet, x, z, opts.eval_rounds, &mut rng)
}

/// Settings for [`estimate_mmi`].
#[derive(Debug, Clone, PartialEq)]
pub struct MmiOptions {
    pub mine: MineOptions,
    /// Std of the Gaussian noise added to the encoder output.
    pub noise_std: f64,
    pub encoder_learning_rate: f64,
}

impl Default for MmiOptions {
    fn default() -> Self {
        Self { mine: MineOptions::default(), noise_std: 0.1, encoder_learning_rate: 1e-3 }
    }
}

fn noisy_encode(encoder: &Mlp, x: ArrayView2<f64>, std: f64, rng: &mut impl Rng) -> Result<(super::mlp::ForwardCache, Array2<f64>), InfonetError> {
    let cache = encoder.forward_batch(x)?;
    let u = cache.output.mapv(|v| v + std * rng.sample::<f64, _>(StandardNormal));
    Ok((cache, u))
}

/// Maximum mutual information of the noisy-encoder family, in bits.
///
/// The encoder `u = r(x) + ε`, `ε ~ N(0, noise_std²)`, and the statistic
/// network are ascended jointly on the MINE-f bound. The reported figure is
/// the final bound on all rows divided by `ln 2`.
pub fn estimate_mmi(
    data: ArrayView2<f64>,
    encoder: &mut Mlp,
    statnet: &mut Mlp,
    opts: &MmiOptions,
) -> Result<f64, InfonetError> {
    let n = data.nrows();
    if n < 2 {
        return Err(InfonetError::ShapeMismatch("need at least two rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.mine.seed);
    let mut stat_opt = Optimizer::new(opts.mine.optimizer, opts.mine.learning_rate, statnet);
    let mut enc_opt = Optimizer::new(opts.mine.optimizer, opts.encoder_learning_rate, encoder);
    for step in 0..opts.mine.steps {
        let idx = sample_batch(n, opts.mine.batch_size, &mut rng);
        let xb = data.select(Axis(0), &idx);
        let (cache, u) = noisy_encode(encoder, xb.view(), opts.noise_std, &mut rng)?;
        let perm = derangement(idx.len(), &mut rng);
        let eval = mine_objective(statnet, xb.view(), u.view(), &perm)?;
        let mut sg = eval.stat_grads;
        sg.scale(-1.0);
        sg.clip_norm(STAT_GRAD_CLIP);
        stat_opt.step(statnet, &sg);
        let (mut eg, _) = encoder.backward(&cache, (-eval.z_grad).view())?;
        eg.clip_norm(STAT_GRAD_CLIP);
        enc_opt.step(encoder, &eg);
        if !statnet.is_finite() || !encoder.is_finite() {
            return Err(InfonetError::Diverged(format!("parameters at step {step}")));
        }
    }
    let (_, u) = noisy_encode(encoder, data, opts.noise_std, &mut rng)?;
    let nats = mine_value(statnet, data, u.view(), opts.mine.eval_rounds, &mut rng)?;
    Ok(nats / std::f64::consts::LN_2)
}
