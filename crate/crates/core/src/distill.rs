//! Distillation of the value field into a small network: two tanh hidden
//! layers over the features (sin theta, cos theta, theta_dot), non-negative
//! output, trained by stochastic gradient descent on a weighted mix of local
//! LQR supervision, value samples (or a hinge against raw trajectory values),
//! an HJB-defect penalty, and a gradient-smoothness term.
//!
//! Input gradients everywhere use central finite differences on the
//! featurized input, mapped back to (theta, theta_dot); training
//! backpropagates through those finite-difference evaluations, with the inner
//! control minimization handled in closed form (its sensitivity vanishes by
//! the envelope argument at the minimizer).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    eval_cost, eval_dynamics, optimal_control, CostParams, Costate, PendulumParams, State,
};
use crate::error::Error;
use crate::lqr::RiccatiSolution;
use crate::valuefield::ValueField;

/// finite-difference step on the featurized input
const FD_STEP: f64 = 1e-4;

/// Multilayer perceptron with featurized input and clamped output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: usize,
    pub w1: Array2<f64>, // hidden x 3
    pub b1: Array1<f64>,
    pub w2: Array2<f64>, // hidden x hidden
    pub b2: Array1<f64>,
    pub w3: Array1<f64>, // hidden
    pub b3: f64,
}

fn featurize(x: &State) -> [f64; 3] {
    [x.theta.sin(), x.theta.cos(), x.theta_dot]
}

impl Mlp {
    /// Xavier-uniform initialization; the output bias starts slightly
    /// positive so the clamp is inactive at the start.
    pub fn new(hidden: usize, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        let w1 = init(hidden, 3);
        let w2 = init(hidden, hidden);
        let w3 = init(1, hidden).row(0).to_owned();
        Mlp {
            hidden,
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(hidden),
            w3,
            b3: 0.1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * 3 + self.hidden + self.hidden * self.hidden + self.hidden + self.hidden + 1
    }

    /// Forward pass on a feature batch, keeping activations for backprop.
    fn forward_features(&self, phi: ArrayView2<f64>) -> ForwardCache {
        let z1 = phi.dot(&self.w1.t()) + &self.b1;
        let h1 = z1.mapv(f64::tanh);
        let z2 = h1.dot(&self.w2.t()) + &self.b2;
        let h2 = z2.mapv(f64::tanh);
        let z3 = h2.dot(&self.w3) + self.b3;
        let y = z3.mapv(|v| v.max(0.0));
        ForwardCache { phi: phi.to_owned(), h1, h2, z3, y }
    }

    /// Accumulate parameter gradients for output cotangents `dy`.
    fn backward_features(&self, cache: &ForwardCache, dy: ArrayView1<f64>, grad: &mut Grad) {
        // through the output clamp; on the clamped side the gradient passes
        // only when it raises the output, so a dead output can recover
        let dz3: Array1<f64> = ndarray::Zip::from(&cache.z3)
            .and(&dy)
            .map_collect(|&z, &d| if z > 0.0 || d < 0.0 { d } else { 0.0 });
        grad.w3 += &cache.h2.t().dot(&dz3);
        grad.b3 += dz3.sum();
        let dh2 = outer_rowscale(&dz3, &self.w3); // B x hidden
        let dz2 = &dh2 * &cache.h2.mapv(|h| 1.0 - h * h);
        grad.w2 += &dz2.t().dot(&cache.h1);
        grad.b2 += &dz2.sum_axis(Axis(0));
        let dh1 = dz2.dot(&self.w2);
        let dz1 = &dh1 * &cache.h1.mapv(|h| 1.0 - h * h);
        grad.w1 += &dz1.t().dot(&cache.phi);
        grad.b1 += &dz1.sum_axis(Axis(0));
    }

    /// Batched evaluation at states.
    pub fn eval_batch(&self, xs: &[State]) -> Array1<f64> {
        let phi = feature_matrix(xs);
        self.forward_features(phi.view()).y
    }

    /// Network value at one state.
    pub fn eval(&self, x: &State) -> f64 {
        self.eval_batch(std::slice::from_ref(x))[0]
    }

    /// Input gradient in (theta, theta_dot) coordinates by central finite
    /// differences on the featurized input.
    pub fn input_gradient(&self, x: &State) -> (f64, f64) {
        let g = self.input_gradient_batch(std::slice::from_ref(x));
        (g[(0, 0)], g[(0, 1)])
    }

    /// Batched input gradients: rows of (dJ/dtheta, dJ/dtheta_dot).
    pub fn input_gradient_batch(&self, xs: &[State]) -> Array2<f64> {
        let phi = perturbed_features(xs);
        let y = self.forward_features(phi.view()).y;
        collect_gradients(&y, xs.len())
    }
}

struct ForwardCache {
    phi: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    z3: Array1<f64>,
    y: Array1<f64>,
}

/// dy (B) scaled rows of w (hidden) -> B x hidden
fn outer_rowscale(dy: &Array1<f64>, w: &Array1<f64>) -> Array2<f64> {
    let b = dy.len();
    let h = w.len();
    let mut out = Array2::zeros((b, h));
    for i in 0..b {
        let d = dy[i];
        if d != 0.0 {
            out.row_mut(i).assign(&(w * d));
        }
    }
    out
}

fn feature_matrix(xs: &[State]) -> Array2<f64> {
    let mut phi = Array2::zeros((xs.len(), 3));
    for (i, x) in xs.iter().enumerate() {
        let f = featurize(x);
        phi[(i, 0)] = f[0];
        phi[(i, 1)] = f[1];
        phi[(i, 2)] = f[2];
    }
    phi
}

/// Four perturbed feature rows per state, in the fixed order
/// (+theta, -theta, +theta_dot, -theta_dot); the theta direction enters
/// through the chain rule of the featurization.
fn perturbed_features(xs: &[State]) -> Array2<f64> {
    let mut phi = Array2::zeros((xs.len() * 4, 3));
    for (i, x) in xs.iter().enumerate() {
        let s = x.theta.sin();
        let c = x.theta.cos();
        let rows = [
            [s + FD_STEP * c, c - FD_STEP * s, x.theta_dot],
            [s - FD_STEP * c, c + FD_STEP * s, x.theta_dot],
            [s, c, x.theta_dot + FD_STEP],
            [s, c, x.theta_dot - FD_STEP],
        ];
        for (k, r) in rows.iter().enumerate() {
            for j in 0..3 {
                phi[(i * 4 + k, j)] = r[j];
            }
        }
    }
    phi
}

fn collect_gradients(y: &Array1<f64>, n: usize) -> Array2<f64> {
    let mut g = Array2::zeros((n, 2));
    for i in 0..n {
        g[(i, 0)] = (y[i * 4] - y[i * 4 + 1]) / (2.0 * FD_STEP);
        g[(i, 1)] = (y[i * 4 + 2] - y[i * 4 + 3]) / (2.0 * FD_STEP);
    }
    g
}

/// Parameter gradient buffer.
#[derive(Clone)]
pub struct Grad {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array1<f64>,
    b3: f64,
}

impl Grad {
    fn zeros(h: usize) -> Grad {
        Grad {
            w1: Array2::zeros((h, 3)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w3: Array1::zeros(h),
            b3: 0.0,
        }
    }

    fn scale(&mut self, s: f64) {
        self.w1 *= s;
        self.b1 *= s;
        self.w2 *= s;
        self.b2 *= s;
        self.w3 *= s;
        self.b3 *= s;
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.w3.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
            && self.b3.is_finite()
    }
}

/// Training mode: supervised uses value samples; weak replaces them with the
/// hinge against raw trajectory values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    Supervised,
    Weak,
}

/// Optimizer choice for the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

/// Loss weights, pool sizes, and optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda_lqr: f64,
    pub lambda_j: f64,
    pub lambda_hjb: f64,
    pub lambda_smooth: f64,
    pub lambda_pmp: f64,
    pub n_lqr: usize,
    pub n_j: usize,
    pub n_hjb: usize,
    pub n_pmp: usize,
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// half-width of the meshgrid window for the HJB/smoothness pools
    pub grid_window: f64,
    pub batch_grid: usize,
    pub batch_pmp: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Supervised,
            lambda_lqr: 1.0,
            lambda_j: 1.0,
            lambda_hjb: 0.3,
            lambda_smooth: 0.002,
            lambda_pmp: 0.3,
            n_lqr: 100,
            n_j: 1000,
            n_hjb: 10_000,
            n_pmp: 100_000,
            hidden: 200,
            lr: 1e-3,
            momentum: 0.9,
            iters: 50_000,
            seed: 7,
            optimizer: Optimizer::SgdMomentum,
            grid_window: 7.0,
            batch_grid: 96,
            batch_pmp: 256,
            eval_every: 500,
        }
    }
}

/// Fixed sample pools drawn once per run.
#[derive(Debug, Clone)]
pub struct DistillData {
    /// states inside the terminal ellipse, supervised by the LQR quadratic
    pub lqr_samples: Vec<State>,
    /// (state, value) pairs from the computed field (supervised mode)
    pub value_samples: Vec<(State, f64)>,
    /// meshgrid states for the HJB and smoothness penalties
    pub grid_samples: Vec<State>,
    /// (state, value) pairs from raw trajectories (weak mode)
    pub pmp_samples: Vec<(State, f64)>,
}

impl DistillData {
    /// Draw the pools: uniform states inside the ellipse, random field
    /// vertices, the square meshgrid, and uniform raw trajectory nodes.
    pub fn gather(
        field: Option<&ValueField>,
        raw: Option<&[crate::pmp::Trajectory]>,
        sol: &RiccatiSolution,
        epsilon: f64,
        cfg: &TrainConfig,
    ) -> DistillData {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_dada);
        let mut lqr_samples = Vec::with_capacity(cfg.n_lqr);
        let s = sol.p_inv_sqrt();
        for _ in 0..cfg.n_lqr {
            let r = (rng.gen::<f64>()).sqrt() * epsilon.sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            let v = s * nalgebra::Vector2::new(a.cos(), a.sin()) * r;
            lqr_samples.push(State::new(v[0], v[1]));
        }
        let mut value_samples = Vec::new();
        if let Some(f) = field {
            for _ in 0..cfg.n_j {
                let v = &f.verts[rng.gen_range(0..f.verts.len())];
                value_samples.push((v.state, v.value));
            }
        }
        let side = (cfg.n_hjb as f64).sqrt().round() as usize;
        let mut grid_samples = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                grid_samples.push(State::new(
                    -cfg.grid_window + 2.0 * cfg.grid_window * ix as f64 / (side - 1) as f64,
                    -cfg.grid_window + 2.0 * cfg.grid_window * iy as f64 / (side - 1) as f64,
                ));
            }
        }
        let mut pmp_samples = Vec::new();
        if let Some(trajs) = raw {
            let total: usize = trajs.iter().map(|t| t.nodes.len()).sum();
            if total > 0 {
                for _ in 0..cfg.n_pmp {
                    let mut k = rng.gen_range(0..total);
                    for t in trajs {
                        if k < t.nodes.len() {
                            let n = &t.nodes[k];
                            pmp_samples.push((n.state, n.value));
                            break;
                        }
                        k -= t.nodes.len();
                    }
                }
            }
        }
        DistillData { lqr_samples, value_samples, grid_samples, pmp_samples }
    }
}

/// Loss values; `total` is the lambda-weighted sum for the active mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lqr: f64,
    pub j: f64,
    pub hjb: f64,
    pub smooth: f64,
    pub pmp: f64,
    pub total: f64,
}

/// Mean leaky-hinge of a candidate value function above trajectory values.
pub fn pmp_hinge_loss(value_fn: impl Fn(&State) -> f64, samples: &[(State, f64)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (x, v) in samples {
        let m = value_fn(x) - v;
        sum += if m >= 0.0 { m } else { 0.01 * m };
    }
    sum / samples.len() as f64
}

/// HJB defect at a state for a candidate value gradient.
fn hjb_defect(
    params: &PendulumParams,
    cp: &CostParams,
    x: &State,
    g: (f64, f64),
) -> (f64, State) {
    let p = Costate::new(g.0, g.1);
    let u = optimal_control(params, cp, &p);
    let f = eval_dynamics(params, x, u);
    (eval_cost(cp, x, u) + g.0 * f.theta + g.1 * f.theta_dot, f)
}

/// Evaluate every loss term for an arbitrary candidate value function; the
/// input gradient is taken by the same central differences the network uses.
pub fn eval_losses(
    value_fn: &(impl Fn(&State) -> f64 + Sync),
    params: &PendulumParams,
    cp: &CostParams,
    sol: &RiccatiSolution,
    data: &DistillData,
    cfg: &TrainConfig,
) -> LossBreakdown {
    let grad_of = |x: &State| -> (f64, f64) {
        let h = FD_STEP;
        let gt = (value_fn(&State::new(x.theta + h, x.theta_dot))
            - value_fn(&State::new(x.theta - h, x.theta_dot)))
            / (2.0 * h);
        let gd = (value_fn(&State::new(x.theta, x.theta_dot + h))
            - value_fn(&State::new(x.theta, x.theta_dot - h)))
            / (2.0 * h);
        (gt, gd)
    };

    let lqr = mean(data.lqr_samples.iter().map(|x| {
        let d = value_fn(x) - sol.lqr_value(x);
        d * d
    }));
    let j = mean(data.value_samples.iter().map(|(x, v)| {
        let d = value_fn(x) - v;
        d * d
    }));
    let (hjb, smooth) = {
        let mut hs = 0.0;
        let mut ss = 0.0;
        for x in &data.grid_samples {
            let g = grad_of(x);
            let (r, _) = hjb_defect(params, cp, x, g);
            let rp = r.max(0.0);
            hs += rp * rp;
            ss += g.0 * g.0 + g.1 * g.1;
        }
        let n = data.grid_samples.len().max(1) as f64;
        (hs / n, ss / n)
    };
    let pmp = pmp_hinge_loss(value_fn, &data.pmp_samples);
    let total = match cfg.mode {
        TrainMode::Supervised => {
            cfg.lambda_lqr * lqr
                + cfg.lambda_j * j
                + cfg.lambda_hjb * hjb
                + cfg.lambda_smooth * smooth
        }
        TrainMode::Weak => {
            cfg.lambda_lqr * lqr
                + cfg.lambda_pmp * pmp
                + cfg.lambda_hjb * hjb
                + cfg.lambda_smooth * smooth
        }
    };
    LossBreakdown { lqr, j, hjb, smooth, pmp, total }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// One history checkpoint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: LossBreakdown,
}

/// Minibatch gradient of the active loss at the current parameters.
fn minibatch_gradient(
    net: &Mlp,
    params: &PendulumParams,
    cp: &CostParams,
    sol: &RiccatiSolution,
    data: &DistillData,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Grad {
    let mut grad = Grad::zeros(net.hidden);

    // LQR supervision (full pool, it is tiny)
    if cfg.lambda_lqr > 0.0 && !data.lqr_samples.is_empty() {
        let xs = &data.lqr_samples;
        let phi = feature_matrix(xs);
        let cache = net.forward_features(phi.view());
        let n = xs.len() as f64;
        let dy = Array1::from_shape_fn(xs.len(), |i| {
            2.0 * (cache.y[i] - sol.lqr_value(&xs[i])) / n * cfg.lambda_lqr
        });
        net.backward_features(&cache, dy.view(), &mut grad);
    }

    // value supervision or hinge
    match cfg.mode {
        TrainMode::Supervised => {
            if cfg.lambda_j > 0.0 && !data.value_samples.is_empty() {
                let pool = &data.value_samples;
                let xs: Vec<State> = pool.iter().map(|(x, _)| *x).collect();
                let phi = feature_matrix(&xs);
                let cache = net.forward_features(phi.view());
                let n = pool.len() as f64;
                let dy = Array1::from_shape_fn(pool.len(), |i| {
                    2.0 * (cache.y[i] - pool[i].1) / n * cfg.lambda_j
                });
                net.backward_features(&cache, dy.view(), &mut grad);
            }
        }
        TrainMode::Weak => {
            if cfg.lambda_pmp > 0.0 && !data.pmp_samples.is_empty() {
                let b = cfg.batch_pmp.min(data.pmp_samples.len());
                let idx: Vec<usize> =
                    (0..b).map(|_| rng.gen_range(0..data.pmp_samples.len())).collect();
                let xs: Vec<State> = idx.iter().map(|&i| data.pmp_samples[i].0).collect();
                let phi = feature_matrix(&xs);
                let cache = net.forward_features(phi.view());
                let n = b as f64;
                let dy = Array1::from_shape_fn(b, |i| {
                    let m = cache.y[i] - data.pmp_samples[idx[i]].1;
                    let slope = if m >= 0.0 { 1.0 } else { 0.01 };
                    slope / n * cfg.lambda_pmp
                });
                net.backward_features(&cache, dy.view(), &mut grad);
            }
        }
    }

    // HJB defect and smoothness share the meshgrid batch and its gradient
    // evaluations
    if (cfg.lambda_hjb > 0.0 || cfg.lambda_smooth > 0.0) && !data.grid_samples.is_empty() {
        let b = cfg.batch_grid.min(data.grid_samples.len());
        let xs: Vec<State> =
            (0..b).map(|_| data.grid_samples[rng.gen_range(0..data.grid_samples.len())]).collect();
        let phi = perturbed_features(&xs);
        let cache = net.forward_features(phi.view());
        let g = collect_gradients(&cache.y, b);
        let n = b as f64;
        let mut dy = Array1::zeros(b * 4);
        for i in 0..b {
            let gi = (g[(i, 0)], g[(i, 1)]);
            let (r, f) = hjb_defect(params, cp, &xs[i], gi);
            // d loss / d gradient, by the envelope argument for the inner min
            let mut dgt = 0.0;
            let mut dgd = 0.0;
            if cfg.lambda_hjb > 0.0 && r > 0.0 {
                let c = 2.0 * r / n * cfg.lambda_hjb;
                dgt += c * f.theta;
                dgd += c * f.theta_dot;
            }
            if cfg.lambda_smooth > 0.0 {
                let c = 2.0 / n * cfg.lambda_smooth;
                dgt += c * gi.0;
                dgd += c * gi.1;
            }
            let inv = 1.0 / (2.0 * FD_STEP);
            dy[i * 4] = dgt * inv;
            dy[i * 4 + 1] = -dgt * inv;
            dy[i * 4 + 2] = dgd * inv;
            dy[i * 4 + 3] = -dgd * inv;
        }
        net.backward_features(&cache, dy.view(), &mut grad);
    }

    grad
}

/// Train the network; returns the trained parameters and the loss history
/// (checkpoint rows on fixed evaluation subsets).
pub fn train(
    net: Mlp,
    params: &PendulumParams,
    cp: &CostParams,
    sol: &RiccatiSolution,
    data: &DistillData,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<HistoryRow>), Error> {
    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();

    // fixed subsets for the periodic full-loss checkpoints
    let eval_data = DistillData {
        lqr_samples: data.lqr_samples.clone(),
        value_samples: data.value_samples.clone(),
        grid_samples: data.grid_samples.iter().step_by(5).copied().collect(),
        pmp_samples: data.pmp_samples.iter().step_by(12).copied().collect(),
    };
    let checkpoint = |net: &Mlp, iter: usize, history: &mut Vec<HistoryRow>| {
        let f = |x: &State| net.eval(x);
        let loss = eval_losses(&f, params, cp, sol, &eval_data, cfg);
        history.push(HistoryRow { iter, loss });
    };
    checkpoint(&net, 0, &mut history);

    let mut vel = Grad::zeros(net.hidden);
    let mut adam_m = Grad::zeros(net.hidden);
    let mut adam_v = AdamSq::zeros(net.hidden);

    for it in 1..=cfg.iters {
        let grad = minibatch_gradient(&net, params, cp, sol, data, cfg, &mut rng);
        if !grad.is_finite() {
            return Err(Error::TrainingFailure {
                reason: format!("non-finite gradient at iteration {it}"),
                history_len: history.len(),
            });
        }
        match cfg.optimizer {
            Optimizer::SgdMomentum => {
                vel.scale(cfg.momentum);
                vel.w1 -= &(&grad.w1 * cfg.lr);
                vel.b1 -= &(&grad.b1 * cfg.lr);
                vel.w2 -= &(&grad.w2 * cfg.lr);
                vel.b2 -= &(&grad.b2 * cfg.lr);
                vel.w3 -= &(&grad.w3 * cfg.lr);
                vel.b3 -= grad.b3 * cfg.lr;
                net.w1 += &vel.w1;
                net.b1 += &vel.b1;
                net.w2 += &vel.w2;
                net.b2 += &vel.b2;
                net.w3 += &vel.w3;
                net.b3 += vel.b3;
            }
            Optimizer::Adam => {
                adam_step(&mut net, &grad, &mut adam_m, &mut adam_v, cfg.lr, it);
            }
        }
        if !net.w3.iter().all(|v| v.is_finite()) || !net.b3.is_finite() {
            return Err(Error::TrainingFailure {
                reason: format!("parameters diverged at iteration {it}"),
                history_len: history.len(),
            });
        }
        if it % cfg.eval_every == 0 || it == cfg.iters {
            checkpoint(&net, it, &mut history);
            if let Some(last) = history.last() {
                if !last.loss.total.is_finite() {
                    return Err(Error::TrainingFailure {
                        reason: format!("loss diverged at iteration {it}"),
                        history_len: history.len(),
                    });
                }
            }
        }
    }
    Ok((net, history))
}

struct AdamSq {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array1<f64>,
    b3: f64,
}

impl AdamSq {
    fn zeros(h: usize) -> AdamSq {
        AdamSq {
            w1: Array2::zeros((h, 3)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w3: Array1::zeros(h),
            b3: 0.0,
        }
    }
}

fn adam_step(net: &mut Mlp, grad: &Grad, m: &mut Grad, v: &mut AdamSq, lr: f64, it: usize) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let bc1 = 1.0 - B1.powi(it as i32);
    let bc2 = 1.0 - B2.powi(it as i32);
    macro_rules! upd {
        ($nf:expr, $gf:expr, $mf:expr, $vf:expr) => {
            ndarray::Zip::from($nf).and($gf).and($mf).and($vf).for_each(|n, &g, m, v| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *n -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
            });
        };
    }
    upd!(&mut net.w1, &grad.w1, &mut m.w1, &mut v.w1);
    upd!(&mut net.b1, &grad.b1, &mut m.b1, &mut v.b1);
    upd!(&mut net.w2, &grad.w2, &mut m.w2, &mut v.w2);
    upd!(&mut net.b2, &grad.b2, &mut m.b2, &mut v.b2);
    upd!(&mut net.w3, &grad.w3, &mut m.w3, &mut v.w3);
    m.b3 = B1 * m.b3 + (1.0 - B1) * grad.b3;
    v.b3 = B2 * v.b3 + (1.0 - B2) * grad.b3 * grad.b3;
    net.b3 -= lr * (m.b3 / bc1) / ((v.b3 / bc2).sqrt() + EPS);
}

/// Feedback torque induced by the network value.
pub fn distilled_controller(net: &Mlp, params: &PendulumParams, cp: &CostParams, x: &State) -> f64 {
    let (gt, gd) = net.input_gradient(x);
    optimal_control(params, cp, &Costate::new(gt, gd))
}

/// Outcome of the lockstep grid evaluation of the distilled controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEval {
    pub total: usize,
    pub reached: usize,
    pub horizon: f64,
}

/// Roll the induced controller out from every grid start in lockstep (one
/// batched gradient evaluation per step), reporting how many reach the
/// terminal ellipse within the horizon.
pub fn evaluate_controller_grid(
    net: &Mlp,
    params: &PendulumParams,
    cp: &CostParams,
    sol: &RiccatiSolution,
    epsilon: f64,
    starts: &[State],
    horizon: f64,
    dt: f64,
) -> GridEval {
    let mut active: Vec<State> = Vec::new();
    let mut reached = 0usize;
    for x in starts {
        if sol.lqr_value(x) <= epsilon {
            reached += 1;
        } else {
            active.push(*x);
        }
    }
    let steps = (horizon / dt).ceil() as usize;
    for _ in 0..steps {
        if active.is_empty() {
            break;
        }
        let g = net.input_gradient_batch(&active);
        let mut next = Vec::with_capacity(active.len());
        for (i, x) in active.iter().enumerate() {
            let u = optimal_control(params, cp, &Costate::new(g[(i, 0)], g[(i, 1)]));
            // RK4 with the control held over the step
            let f1 = eval_dynamics(params, x, u);
            let x2 = State::new(
                x.theta + 0.5 * dt * f1.theta,
                x.theta_dot + 0.5 * dt * f1.theta_dot,
            );
            let f2 = eval_dynamics(params, &x2, u);
            let x3 = State::new(
                x.theta + 0.5 * dt * f2.theta,
                x.theta_dot + 0.5 * dt * f2.theta_dot,
            );
            let f3 = eval_dynamics(params, &x3, u);
            let x4 = State::new(x.theta + dt * f3.theta, x.theta_dot + dt * f3.theta_dot);
            let f4 = eval_dynamics(params, &x4, u);
            let nx = State::new(
                x.theta + dt / 6.0 * (f1.theta + 2.0 * f2.theta + 2.0 * f3.theta + f4.theta),
                x.theta_dot
                    + dt / 6.0
                        * (f1.theta_dot
                            + 2.0 * f2.theta_dot
                            + 2.0 * f3.theta_dot
                            + f4.theta_dot),
            );
            if sol.lqr_value(&nx) <= epsilon {
                reached += 1;
            } else if nx.theta.is_finite() && nx.theta_dot.is_finite() && nx.theta.abs() < 50.0 {
                next.push(nx);
            }
            // non-finite or runaway states are dropped and counted as failures
        }
        active = next;
    }
    GridEval { total: starts.len(), reached, horizon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{benchmark_cost, benchmark_params};
    use crate::lqr::solve_for;
    use std::f64::consts::PI;

    fn tiny_net(seed: u64) -> Mlp {
        Mlp::new(16, seed)
    }

    #[test]
    fn featurization_makes_output_periodic() {
        let net = tiny_net(3);
        let a = net.eval(&State::new(0.7, -1.1));
        let b = net.eval(&State::new(0.7 + 2.0 * PI, -1.1));
        assert!((a - b).abs() < 1e-12);
        // controller inherits the periodicity
        let params = benchmark_params();
        let cp = benchmark_cost(Some(2.0));
        let ua = distilled_controller(&net, &params, &cp, &State::new(0.7, -1.1));
        let ub = distilled_controller(&net, &params, &cp, &State::new(0.7 + 2.0 * PI, -1.1));
        assert!((ua - ub).abs() < 1e-9);
    }

    #[test]
    fn output_clamp_keeps_values_nonnegative() {
        let mut net = tiny_net(4);
        net.b3 = -5.0; // force the clamp active somewhere
        for i in 0..50 {
            let x = State::new(i as f64 * 0.3 - 7.0, (i % 7) as f64 - 3.0);
            assert!(net.eval(&x) >= 0.0);
        }
    }

    #[test]
    fn zero_weights_give_constant_output() {
        let mut net = tiny_net(5);
        net.w1.fill(0.0);
        net.w2.fill(0.0);
        net.w3.fill(0.0);
        net.b3 = 0.37;
        assert_eq!(net.eval(&State::new(1.0, 2.0)), 0.37);
        assert_eq!(net.eval(&State::new(-3.0, 0.1)), 0.37);
        // constant net induces zero torque
        let params = benchmark_params();
        let cp = benchmark_cost(None);
        assert_eq!(distilled_controller(&net, &params, &cp, &State::new(2.0, 1.0)), 0.0);
    }

    /// Flatten/assign helpers for the finite-difference parameter check.
    fn param_mut(net: &mut Mlp, k: usize) -> &mut f64 {
        let h = net.hidden;
        let n1 = h * 3;
        let n2 = n1 + h;
        let n3 = n2 + h * h;
        let n4 = n3 + h;
        let n5 = n4 + h;
        if k < n1 {
            let (r, c) = (k / 3, k % 3);
            &mut net.w1[(r, c)]
        } else if k < n2 {
            &mut net.b1[k - n1]
        } else if k < n3 {
            let kk = k - n2;
            let (r, c) = (kk / h, kk % h);
            &mut net.w2[(r, c)]
        } else if k < n4 {
            &mut net.b2[k - n3]
        } else if k < n5 {
            &mut net.w3[k - n4]
        } else {
            &mut net.b3
        }
    }

    fn grad_at(grad: &Grad, k: usize, h: usize) -> f64 {
        let n1 = h * 3;
        let n2 = n1 + h;
        let n3 = n2 + h * h;
        let n4 = n3 + h;
        let n5 = n4 + h;
        if k < n1 {
            grad.w1[(k / 3, k % 3)]
        } else if k < n2 {
            grad.b1[k - n1]
        } else if k < n3 {
            let kk = k - n2;
            grad.w2[(kk / h, kk % h)]
        } else if k < n4 {
            grad.b2[k - n3]
        } else if k < n5 {
            grad.w3[k - n4]
        } else {
            grad.b3
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // full-batch gradient of the complete supervised loss against central
        // finite differences on a sample of coordinates
        let params = benchmark_params();
        let cp = benchmark_cost(Some(2.0));
        let sol = solve_for(&params, &cp).unwrap();
        let mut net = tiny_net(11);
        // keep the output clamp and the hinge away from their kinks so the
        // finite-difference probe stays on one smooth branch
        net.w3 *= 0.1;
        net.b3 = 2.0;
        let net = net;
        let cfg = TrainConfig {
            n_lqr: 8,
            n_j: 0,
            n_hjb: 16,
            n_pmp: 32,
            hidden: 16,
            batch_grid: 16,
            batch_pmp: 32,
            mode: TrainMode::Weak,
            grid_window: 4.0,
            ..TrainConfig::default()
        };
        // synthetic pools
        let mut data = DistillData {
            lqr_samples: (0..8)
                .map(|i| State::new(1e-3 * i as f64, -5e-4 * i as f64))
                .collect(),
            value_samples: vec![],
            grid_samples: (0..16)
                .map(|i| State::new(-3.0 + 0.4 * i as f64, 2.0 - 0.25 * i as f64))
                .collect(),
            pmp_samples: (0..32)
                .map(|i| (State::new(-2.0 + 0.12 * i as f64, 1.0 - 0.07 * i as f64), 3.0 + i as f64))
                .collect(),
        };
        // hinge kinks break finite differences; keep margins away from zero
        data.pmp_samples = data
            .pmp_samples
            .into_iter()
            .map(|(x, v)| (x, v + 0.5))
            .collect();

        // deterministic batch: use the full pools by matching batch sizes
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let grad = minibatch_gradient(&net, &params, &cp, &sol, &data, &cfg, &mut rng);

        // loss function evaluated with the same batches: batch == pool makes
        // the sampling irrelevant up to multiplicity; rebuild via eval_losses
        // on pools mirrors the expectation only when sampling is uniform, so
        // instead compare against finite differences of the deterministic
        // full-pool loss with the same rng-consumed batch indices
        let loss_of = |net: &Mlp| -> f64 {
            let f = |x: &State| net.eval(x);
            // replicate the same index draws
            let mut rng2 = ChaCha8Rng::seed_from_u64(99);
            let mut l = 0.0;
            // lqr full pool
            l += cfg.lambda_lqr
                * mean(data.lqr_samples.iter().map(|x| {
                    let d = f(x) - sol.lqr_value(x);
                    d * d
                }));
            // weak hinge with the same sampled indices
            let b = cfg.batch_pmp.min(data.pmp_samples.len());
            let idx: Vec<usize> =
                (0..b).map(|_| rng2.gen_range(0..data.pmp_samples.len())).collect();
            let mut hs = 0.0;
            for &i in &idx {
                let (x, v) = data.pmp_samples[i];
                let m = f(&x) - v;
                hs += if m >= 0.0 { m } else { 0.01 * m };
            }
            l += cfg.lambda_pmp * hs / b as f64;
            // grid batch with the same draws
            let bg = cfg.batch_grid.min(data.grid_samples.len());
            let xs: Vec<State> = (0..bg)
                .map(|_| data.grid_samples[rng2.gen_range(0..data.grid_samples.len())])
                .collect();
            let mut hh = 0.0;
            let mut ss = 0.0;
            for x in &xs {
                let h = FD_STEP;
                let s = x.theta.sin();
                let c = x.theta.cos();
                let yp = f64::max(net_eval_features(net, [s + h * c, c - h * s, x.theta_dot]), 0.0);
                let ym = f64::max(net_eval_features(net, [s - h * c, c + h * s, x.theta_dot]), 0.0);
                let ypd =
                    f64::max(net_eval_features(net, [s, c, x.theta_dot + h]), 0.0);
                let ymd =
                    f64::max(net_eval_features(net, [s, c, x.theta_dot - h]), 0.0);
                let g = ((yp - ym) / (2.0 * h), (ypd - ymd) / (2.0 * h));
                let (r, _) = hjb_defect(&params, &cp, x, g);
                let rp = r.max(0.0);
                hh += rp * rp;
                ss += g.0 * g.0 + g.1 * g.1;
            }
            l += cfg.lambda_hjb * hh / bg as f64 + cfg.lambda_smooth * ss / bg as f64;
            l
        };

        let coords = [0usize, 7, 50, 130, 333, 410, 545, 560, 575, 592];
        // fourth-order stencil with a wide probe: the loss contains internal
        // finite differences whose 1/(2h) factors amplify rounding noise, so
        // narrow probes drown in cancellation
        let eps = 2e-4;
        for &k in &coords {
            let at = |d: f64| {
                let mut n = net.clone();
                *param_mut(&mut n, k) += d;
                loss_of(&n)
            };
            let fd = (at(-2.0 * eps) - 8.0 * at(-eps) + 8.0 * at(eps) - at(2.0 * eps))
                / (12.0 * eps);
            let an = grad_at(&grad, k, net.hidden);
            let tol = 1e-4 * an.abs().max(1e-4);
            assert!((fd - an).abs() <= tol, "coordinate {k}: analytic {an} vs fd {fd}");
        }
    }

    fn net_eval_features(net: &Mlp, f: [f64; 3]) -> f64 {
        let phi = Array2::from_shape_vec((1, 3), f.to_vec()).unwrap();
        net.forward_features(phi.view()).y[0]
    }

    #[test]
    fn hinge_examples() {
        // constant candidate below every value: pure leak side
        let samples: Vec<(State, f64)> =
            (0..10).map(|i| (State::new(i as f64, 0.0), 5.0 + i as f64)).collect();
        let below = pmp_hinge_loss(|_| 1.0, &samples);
        let mean_margin =
            samples.iter().map(|(_, v)| 1.0 - v).sum::<f64>() / samples.len() as f64;
        assert!((below - 0.01 * mean_margin).abs() < 1e-12);
        // uniformly m above: loss = m
        let m = 2.5;
        let above = pmp_hinge_loss(|x| samples[x.theta as usize].1 + m, &samples);
        assert!((above - m).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_leave_net_unchanged() {
        let params = benchmark_params();
        let cp = benchmark_cost(Some(2.0));
        let sol = solve_for(&params, &cp).unwrap();
        let net = tiny_net(21);
        let before = net.clone();
        let cfg = TrainConfig { iters: 0, hidden: 16, ..TrainConfig::default() };
        let data = DistillData {
            lqr_samples: vec![State::new(1e-3, 0.0)],
            value_samples: vec![(State::new(1.0, 1.0), 5.0)],
            grid_samples: vec![State::new(0.5, 0.5)],
            pmp_samples: vec![(State::new(1.0, 1.0), 5.0)],
        };
        let (after, history) = train(net, &params, &cp, &sol, &data, &cfg).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(before.w2, after.w2);
        assert_eq!(before.b3, after.b3);
    }

    #[test]
    fn divergent_learning_rate_reports_failure() {
        let params = benchmark_params();
        let cp = benchmark_cost(Some(2.0));
        let sol = solve_for(&params, &cp).unwrap();
        let net = tiny_net(22);
        let cfg = TrainConfig {
            iters: 50,
            hidden: 16,
            lr: 1e308,
            optimizer: Optimizer::SgdMomentum,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let data = DistillData {
            lqr_samples: vec![State::new(1e-3, 0.0), State::new(-2e-3, 1e-3)],
            value_samples: vec![(State::new(1.0, 1.0), 5.0), (State::new(2.0, -1.0), 9.0)],
            grid_samples: vec![State::new(0.5, 0.5), State::new(-1.0, 2.0)],
            pmp_samples: vec![(State::new(1.0, 1.0), 5.0)],
        };
        let r = train(net, &params, &cp, &sol, &data, &cfg);
        assert!(matches!(r, Err(Error::TrainingFailure { .. })), "expected divergence");
    }

    #[test]
    fn short_training_reduces_simple_regression_loss() {
        // fit the LQR quadratic near the origin: a sanity check that the
        // optimizer plumbing descends
        let params = benchmark_params();
        let cp = benchmark_cost(Some(2.0));
        let sol = solve_for(&params, &cp).unwrap();
        let net = Mlp::new(32, 5);
        let mut value_samples = Vec::new();
        for i in 0..200 {
            let x = State::new(-0.5 + (i % 20) as f64 * 0.05, -0.5 + (i / 20) as f64 * 0.1);
            value_samples.push((x, sol.lqr_value(&x).min(30.0)));
        }
        let data = DistillData {
            lqr_samples: vec![State::new(1e-3, 0.0)],
            value_samples,
            grid_samples: vec![],
            pmp_samples: vec![],
        };
        let cfg = TrainConfig {
            iters: 4000,
            hidden: 32,
            lambda_hjb: 0.0,
            lambda_smooth: 0.0,
            optimizer: Optimizer::Adam,
            lr: 1e-2,
            eval_every: 4000,
            ..TrainConfig::default()
        };
        let (_, history) = train(net, &params, &cp, &sol, &data, &cfg).unwrap();
        let first = history.first().unwrap().loss.total;
        let last = history.last().unwrap().loss.total;
        assert!(last < 0.2 * first, "no descent: {first} -> {last}");
    }
}
