//! Pendulum model, running cost, Hamiltonian, and the closed-form optimal
//! control map.
//!
//! Everything here is a pure function of its inputs; all downstream modules
//! (Riccati, backward integration, certification, distillation) call into
//! this one. Angles are stored unwrapped: trajectories span several
//! revolutions and wrapping would destroy the intersection geometry, so
//! periodicity is handled at query time by the field module.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Physical constants of the pendulum: point mass `m`, viscous damping `b`,
/// pole length `l`, gravity `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub b: f64,
    pub l: f64,
    pub g: f64,
}

impl PendulumParams {
    pub fn new(m: f64, b: f64, l: f64, g: f64) -> Result<Self, ParamError> {
        let p = Self { m, b, l, g };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, v, strict) in [
            ("m", self.m, true),
            ("b", self.b, false),
            ("l", self.l, true),
            ("g", self.g, true),
        ] {
            if !v.is_finite() || v < 0.0 || (strict && v == 0.0) {
                return Err(ParamError::Invalid {
                    key: name,
                    value: v,
                    reason: if strict { "must be > 0" } else { "must be >= 0" },
                });
            }
        }
        Ok(())
    }

    /// Rotational inertia `m l^2`.
    #[inline]
    pub fn inertia(&self) -> f64 {
        self.m * self.l * self.l
    }

    /// Peak gravity torque `m g l`.
    #[inline]
    pub fn gravity_torque(&self) -> f64 {
        self.m * self.g * self.l
    }
}

/// Cost weights and control-set description. `u_max: None` means the control
/// set is all of R; `lambda` is the discount rate (0 = undiscounted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub q1: f64,
    pub q2: f64,
    pub r: f64,
    pub u_max: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
}

impl CostParams {
    pub fn new(q1: f64, q2: f64, r: f64, u_max: Option<f64>, lambda: f64) -> Self {
        Self { q1, q2, r, u_max, lambda }
    }

    /// Validate weights and, when a torque bound is present, that it cannot
    /// statically hold the pendulum horizontal (`u_max < m g l`); otherwise
    /// the swing-up problem degenerates.
    pub fn validate(&self, params: &PendulumParams) -> Result<(), ParamError> {
        for (name, v) in [("q1", self.q1), ("q2", self.q2), ("r", self.r)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ParamError::Invalid { key: name, value: v, reason: "must be > 0" });
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(ParamError::Invalid {
                key: "lambda",
                value: self.lambda,
                reason: "must be >= 0",
            });
        }
        if let Some(u) = self.u_max {
            if !u.is_finite() || u <= 0.0 || u >= params.gravity_torque() {
                return Err(ParamError::Invalid {
                    key: "u_max",
                    value: u,
                    reason: "must satisfy 0 < u_max < m*g*l",
                });
            }
        }
        Ok(())
    }

    /// Saturate a raw torque to the control set.
    #[inline]
    pub fn clip(&self, u: f64) -> f64 {
        match self.u_max {
            Some(b) => u.clamp(-b, b),
            None => u,
        }
    }
}

/// Pendulum state; `theta = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub theta: f64,
    pub theta_dot: f64,
}

impl State {
    #[inline]
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    #[inline]
    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.theta, self.theta_dot)
    }

    #[inline]
    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    /// Euclidean distance in the (theta, theta_dot) plane.
    #[inline]
    pub fn distance(&self, other: &State) -> f64 {
        ((self.theta - other.theta).powi(2) + (self.theta_dot - other.theta_dot).powi(2)).sqrt()
    }

    /// Shift the angle by `k` full revolutions.
    #[inline]
    pub fn shifted(&self, k: i32) -> State {
        State::new(self.theta + 2.0 * std::f64::consts::PI * f64::from(k), self.theta_dot)
    }
}

/// Adjoint (costate) vector paired with `State`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costate {
    pub p1: f64,
    pub p2: f64,
}

impl Costate {
    #[inline]
    pub fn new(p1: f64, p2: f64) -> Self {
        Self { p1, p2 }
    }

    #[inline]
    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.p1, self.p2)
    }

    #[inline]
    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Right-hand side of the pendulum dynamics:
/// `(theta_dot, -(b*theta_dot - m*g*l*sin(theta) - u) / (m*l^2))`.
#[inline]
pub fn eval_dynamics(params: &PendulumParams, x: &State, u: f64) -> State {
    let accel =
        -(params.b * x.theta_dot - params.gravity_torque() * x.theta.sin() - u) / params.inertia();
    State::new(x.theta_dot, accel)
}

/// Running cost rate `q1 sin^2(theta) + q1 (cos(theta)-1)^2 + q2 theta_dot^2 + r u^2`.
///
/// Nonnegative everywhere; zero exactly at the upright copies with u = 0.
#[inline]
pub fn eval_cost(cp: &CostParams, x: &State, u: f64) -> f64 {
    let s = x.theta.sin();
    let c = x.theta.cos();
    cp.q1 * s * s + cp.q1 * (c - 1.0) * (c - 1.0) + cp.q2 * x.theta_dot * x.theta_dot + cp.r * u * u
}

/// Minimizer of the Hamiltonian over the control set:
/// `u* = -p2 / (2 r m l^2)`, clipped when the set is bounded.
#[inline]
pub fn optimal_control(params: &PendulumParams, cp: &CostParams, p: &Costate) -> f64 {
    cp.clip(-p.p2 / (2.0 * cp.r * params.inertia()))
}

/// Hamiltonian `H(x, u, p) = c(x, u) + p^T f(x, u)`.
#[inline]
pub fn hamiltonian(
    params: &PendulumParams,
    cp: &CostParams,
    x: &State,
    u: f64,
    p: &Costate,
) -> f64 {
    let f = eval_dynamics(params, x, u);
    eval_cost(cp, x, u) + p.p1 * f.theta + p.p2 * f.theta_dot
}

/// Analytic gradient of the Hamiltonian with respect to (theta, theta_dot).
#[inline]
pub fn hamiltonian_grad_x(
    params: &PendulumParams,
    cp: &CostParams,
    x: &State,
    _u: f64,
    p: &Costate,
) -> Vector2<f64> {
    let s = x.theta.sin();
    let c = x.theta.cos();
    // d/dtheta [q1 sin^2 + q1 (cos-1)^2] = 2 q1 sin cos - 2 q1 (cos-1) sin
    let dc_dtheta = 2.0 * cp.q1 * s * c - 2.0 * cp.q1 * (c - 1.0) * s;
    let df2_dtheta = params.gravity_torque() * c / params.inertia();
    let gt = dc_dtheta + p.p2 * df2_dtheta;
    let gd = 2.0 * cp.q2 * x.theta_dot + p.p1 - p.p2 * params.b / params.inertia();
    Vector2::new(gt, gd)
}

/// Jacobians of the dynamics at the upright equilibrium:
/// `A = df/dx(0, 0)`, `B = df/du(0, 0)`.
pub fn linearize(params: &PendulumParams) -> (Matrix2<f64>, Vector2<f64>) {
    let a = Matrix2::new(0.0, 1.0, params.g / params.l, -params.b / params.inertia());
    let b = Vector2::new(0.0, 1.0 / params.inertia());
    (a, b)
}

/// Quadratic state-cost matrix of the cost expanded at upright: `diag(q1, q2)`.
pub fn quadratic_state_cost(cp: &CostParams) -> Matrix2<f64> {
    Matrix2::new(cp.q1, 0.0, 0.0, cp.q2)
}

/// Benchmark constants m=1, b=0.1, l=1, g=9.8.
pub fn benchmark_params() -> PendulumParams {
    PendulumParams { m: 1.0, b: 0.1, l: 1.0, g: 9.8 }
}

/// Benchmark weights q1=q2=r=1, optionally saturated, undiscounted.
pub fn benchmark_cost(u_max: Option<f64>) -> CostParams {
    CostParams { q1: 1.0, q2: 1.0, r: 1.0, u_max, lambda: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params() -> PendulumParams {
        benchmark_params()
    }

    fn cost() -> CostParams {
        benchmark_cost(None)
    }

    /// Central finite difference of the Hamiltonian in x.
    fn fd_grad_x(
        params: &PendulumParams,
        cp: &CostParams,
        x: &State,
        u: f64,
        p: &Costate,
        h: f64,
    ) -> Vector2<f64> {
        let gt = (hamiltonian(params, cp, &State::new(x.theta + h, x.theta_dot), u, p)
            - hamiltonian(params, cp, &State::new(x.theta - h, x.theta_dot), u, p))
            / (2.0 * h);
        let gd = (hamiltonian(params, cp, &State::new(x.theta, x.theta_dot + h), u, p)
            - hamiltonian(params, cp, &State::new(x.theta, x.theta_dot - h), u, p))
            / (2.0 * h);
        Vector2::new(gt, gd)
    }

    #[test]
    fn dynamics_equilibria() {
        let f = eval_dynamics(&params(), &State::new(0.0, 0.0), 0.0);
        assert_eq!((f.theta, f.theta_dot), (0.0, 0.0));
        let f = eval_dynamics(&params(), &State::new(PI, 0.0), 0.0);
        assert_eq!(f.theta, 0.0);
        assert!(f.theta_dot.abs() < 1e-14);
    }

    #[test]
    fn dynamics_benchmark_point() {
        // (pi/2, 1), u = 2: accel = -(0.1*1 - 9.8 - 2) = 11.7
        let f = eval_dynamics(&params(), &State::new(PI / 2.0, 1.0), 2.0);
        assert_relative_eq!(f.theta, 1.0);
        assert_relative_eq!(f.theta_dot, 11.7, max_relative = 1e-12);
    }

    #[test]
    fn cost_goal_and_downright() {
        assert_eq!(eval_cost(&cost(), &State::new(0.0, 0.0), 0.0), 0.0);
        // F(0) = 4 q1 at the downright position
        assert_relative_eq!(eval_cost(&cost(), &State::new(PI, 0.0), 0.0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(
            eval_cost(&cost(), &State::new(PI / 2.0, 2.0), 1.0),
            7.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn optimal_control_examples() {
        let p = params();
        assert_eq!(optimal_control(&p, &cost(), &Costate::new(5.0, 0.0)), 0.0);
        assert_relative_eq!(optimal_control(&p, &cost(), &Costate::new(0.0, 2.0)), -1.0);
        let sat = benchmark_cost(Some(2.0));
        assert_relative_eq!(optimal_control(&p, &sat, &Costate::new(0.0, 10.0)), -2.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let (p, c) = (params(), cost());
        assert_eq!(hamiltonian(&p, &c, &State::new(0.0, 0.0), 0.0, &Costate::new(0.0, 0.0)), 0.0);
        // f = 0 at downright, so H = c = 4 q1
        assert_relative_eq!(
            hamiltonian(&p, &c, &State::new(PI, 0.0), 0.0, &Costate::new(1.0, 1.0)),
            4.0,
            epsilon = 1e-12
        );
        let x = State::new(1.3, -0.7);
        assert_relative_eq!(
            hamiltonian(&p, &c, &x, 0.4, &Costate::new(0.0, 0.0)),
            eval_cost(&c, &x, 0.4)
        );
    }

    #[test]
    fn grad_x_vanishes_at_goal_and_downright() {
        let (p, c) = (params(), cost());
        let g = hamiltonian_grad_x(&p, &c, &State::new(0.0, 0.0), 0.0, &Costate::new(0.0, 0.0));
        assert_eq!((g[0], g[1]), (0.0, 0.0));
        let g = hamiltonian_grad_x(&p, &c, &State::new(PI, 0.0), 0.0, &Costate::new(0.0, 0.0));
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let (p, c) = (params(), cost());
        // fixed pseudo-random sweep; step 1e-5, rel err <= 1e-6
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 8.0 - 4.0
        };
        for _ in 0..200 {
            let x = State::new(next(), next());
            let u = next();
            let pc = Costate::new(next(), next());
            let g = hamiltonian_grad_x(&p, &c, &x, u, &pc);
            let fd = fd_grad_x(&p, &c, &x, u, &pc, 1e-5);
            for i in 0..2 {
                let tol = 1e-6 * g[i].abs().max(1.0);
                assert!(
                    (g[i] - fd[i]).abs() <= tol,
                    "grad mismatch at {x:?}: analytic {} vs fd {}",
                    g[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn linearize_benchmark() {
        let (a, b) = linearize(&params());
        assert_relative_eq!(a[(0, 0)], 0.0);
        assert_relative_eq!(a[(0, 1)], 1.0);
        assert_relative_eq!(a[(1, 0)], 9.8, epsilon = 1e-12);
        assert_relative_eq!(a[(1, 1)], -0.1, epsilon = 1e-12);
        assert_relative_eq!(b[0], 0.0);
        assert_relative_eq!(b[1], 1.0);
        // no damping removes the velocity term
        let (a0, _) = linearize(&PendulumParams::new(1.0, 0.0, 1.0, 9.8).unwrap());
        assert_eq!(a0[(1, 1)], 0.0);
    }

    #[test]
    fn optimal_control_is_argmin_of_hamiltonian() {
        // grid search at resolution 1e-4 never beats the closed form by more than 1e-6
        let p = params();
        for cp in [cost(), benchmark_cost(Some(2.0))] {
            let mut s = 0xdeadbeefcafef00du64;
            let mut next = move || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
            };
            for _ in 0..100 {
                let x = State::new(next(), next());
                let pc = Costate::new(next(), next());
                let u_star = optimal_control(&p, &cp, &pc);
                let h_star = hamiltonian(&p, &cp, &x, u_star, &pc);
                let (lo, hi) = match cp.u_max {
                    Some(b) => (-b, b),
                    None => (u_star - 2.0, u_star + 2.0),
                };
                let n = ((hi - lo) / 1e-4).round() as usize;
                for i in 0..=n {
                    let u = lo + (hi - lo) * i as f64 / n as f64;
                    assert!(
                        hamiltonian(&p, &cp, &x, u, &pc) >= h_star - 1e-6,
                        "grid beat closed form at u={u}"
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PendulumParams::new(0.0, 0.1, 1.0, 9.8).is_err());
        assert!(PendulumParams::new(1.0, -0.1, 1.0, 9.8).is_err());
        assert!(PendulumParams::new(1.0, 0.0, 1.0, 9.8).is_ok());
        let p = benchmark_params();
        // u_max >= m g l rejected
        assert!(benchmark_cost(Some(9.8)).validate(&p).is_err());
        assert!(benchmark_cost(Some(12.0)).validate(&p).is_err());
        assert!(benchmark_cost(Some(2.0)).validate(&p).is_ok());
    }

    proptest! {
        #[test]
        fn cost_nonnegative(theta in -20.0f64..20.0, td in -10.0f64..10.0, u in -5.0f64..5.0) {
            prop_assert!(eval_cost(&cost(), &State::new(theta, td), u) >= 0.0);
        }

        #[test]
        fn dynamics_odd_symmetry(theta in -10.0f64..10.0, td in -8.0f64..8.0, u in -4.0f64..4.0) {
            let p = params();
            let f = eval_dynamics(&p, &State::new(theta, td), u);
            let fm = eval_dynamics(&p, &State::new(-theta, -td), -u);
            prop_assert!((f.theta + fm.theta).abs() < 1e-12);
            prop_assert!((f.theta_dot + fm.theta_dot).abs() < 1e-9);
        }

        #[test]
        fn cost_even_symmetry(theta in -10.0f64..10.0, td in -8.0f64..8.0, u in -4.0f64..4.0) {
            let c = cost();
            let a = eval_cost(&c, &State::new(theta, td), u);
            let b = eval_cost(&c, &State::new(-theta, -td), -u);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn period_invariance(theta in -6.0f64..6.0, td in -8.0f64..8.0, u in -4.0f64..4.0) {
            let (p, c) = (params(), cost());
            let x = State::new(theta, td);
            let xs = x.shifted(1);
            let (f, fs) = (eval_dynamics(&p, &x, u), eval_dynamics(&p, &xs, u));
            prop_assert!((f.theta_dot - fs.theta_dot).abs() < 1e-9);
            prop_assert!((eval_cost(&c, &x, u) - eval_cost(&c, &xs, u)).abs() < 1e-9);
        }
    }
}
