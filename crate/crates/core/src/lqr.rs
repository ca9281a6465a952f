//! Continuous algebraic Riccati equation for the upright linearization, the
//! terminal ellipse where backward integration starts, and the local LQR
//! value function.
//!
//! The CARE is solved from the stable invariant subspace of the 4x4
//! Hamiltonian matrix (complex eigendecomposition plus inverse iteration),
//! then polished by Newton-Kleinman steps until the residual is at rounding
//! level. Robustness over speed: the problem is 2x2 and solved once per run.

use nalgebra::{Complex, Matrix2, Matrix3, Matrix4, RowVector2, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{eval_dynamics, CostParams, Costate, PendulumParams, State};
use crate::error::Error;

const RESIDUAL_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 60;

/// Stabilizing solution of the CARE together with the feedback gain
/// `K = (1/r) B^T P` and the symmetric inverse square root used by the
/// ellipse parametrization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub p: Matrix2<f64>,
    pub k: RowVector2<f64>,
    pub residual: f64,
    p_inv_sqrt: Matrix2<f64>,
}

impl RiccatiSolution {
    /// Nearest upright copy `(2 k pi, 0)` in the P-metric. The quadratic form
    /// is convex in the shift index, so rounding its continuous minimizer is
    /// exact.
    pub fn nearest_upright(&self, x: &State) -> State {
        let w_star = -self.p[(0, 1)] * x.theta_dot / self.p[(0, 0)];
        let k = ((x.theta - w_star) / (2.0 * PI)).round();
        State::new(2.0 * PI * k, 0.0)
    }

    /// Local LQR value `J_inf(x) = (x - x_ur)^T P (x - x_ur)` against the
    /// nearest upright copy.
    pub fn lqr_value(&self, x: &State) -> f64 {
        let c = self.nearest_upright(x);
        let d = Vector2::new(x.theta - c.theta, x.theta_dot - c.theta_dot);
        (d.transpose() * self.p * d)[0]
    }

    /// Costate boundary condition `p = 2 P (x - x_ur)`, which is also the
    /// gradient of `lqr_value`.
    pub fn terminal_costate(&self, x: &State) -> Costate {
        let c = self.nearest_upright(x);
        let d = Vector2::new(x.theta - c.theta, x.theta_dot - c.theta_dot);
        Costate::from_vector(2.0 * self.p * d)
    }

    /// Unclipped LQR feedback `u = -K (x - x_ur)`.
    pub fn feedback(&self, x: &State) -> f64 {
        let c = self.nearest_upright(x);
        let d = Vector2::new(x.theta - c.theta, x.theta_dot - c.theta_dot);
        -(self.k * d)[0]
    }

    pub fn p_inv_sqrt(&self) -> &Matrix2<f64> {
        &self.p_inv_sqrt
    }
}

/// Sublevel boundary `{ x : J_inf(x) = epsilon }` around the base upright.
#[derive(Debug, Clone, Copy)]
pub struct EllipseBoundary {
    pub epsilon: f64,
    pub sol: RiccatiSolution,
}

impl EllipseBoundary {
    pub fn new(epsilon: f64, sol: RiccatiSolution) -> Result<Self, Error> {
        if !(epsilon > 0.0) {
            return Err(Error::Input(format!("ellipse level must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, sol })
    }
}

/// Point on the terminal ellipse: `x = sqrt(eps) * P^(-1/2) (cos phi, sin phi)`.
///
/// The parameter is reduced to a canonical half circle plus a sign so that
/// `phi` and `phi + pi` map to exact floating-point negations of each other;
/// the backward-integration symmetry checks rely on that bit-level mirror.
pub fn ellipse_point(bnd: &EllipseBoundary, phi: f64) -> State {
    let two_pi = 2.0 * PI;
    let mut ph = phi.rem_euclid(two_pi);
    let mut sign = 1.0;
    if ph >= PI {
        ph -= PI;
        sign = -1.0;
    }
    let dir = Vector2::new(ph.cos(), ph.sin());
    let x = bnd.sol.p_inv_sqrt * dir * bnd.epsilon.sqrt() * sign;
    State::new(x[0], x[1])
}

/// Solve `A^T P + P A - (1/r) P B B^T P + Q = 0` for the stabilizing P.
pub fn solve_care(
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    q: &Matrix2<f64>,
    r: f64,
) -> Result<RiccatiSolution, Error> {
    if !(r > 0.0) {
        return Err(Error::RiccatiFailure(format!("control weight must be positive, got {r}")));
    }
    let mut p = stable_subspace_solution(a, b, q, r)
        .or_else(|_| newton_kleinman_from_placement(a, b, q, r))?;

    // Newton-Kleinman polish: each step solves a Lyapunov equation for the
    // closed loop of the current gain.
    let mut res = care_residual(&p, a, b, q, r);
    for _ in 0..NEWTON_MAX_ITERS {
        if res <= RESIDUAL_TOL * 1e-2 {
            break;
        }
        let k = (b.transpose() * p) / r;
        let acl = a - b * k;
        let rhs = -(q + k.transpose() * k * r);
        let next = solve_lyapunov(&acl, &rhs)?;
        let next_res = care_residual(&next, a, b, q, r);
        if !next_res.is_finite() || next_res >= res && res <= RESIDUAL_TOL {
            break;
        }
        p = next;
        res = next_res;
    }

    let p = (p + p.transpose()) * 0.5;
    let res = care_residual(&p, a, b, q, r);
    if res > RESIDUAL_TOL {
        return Err(Error::RiccatiFailure(format!(
            "residual {res:.3e} above tolerance {RESIDUAL_TOL:.0e} after refinement"
        )));
    }
    let eig = p.symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::RiccatiFailure("solution is not positive definite".into()));
    }
    let k = (b.transpose() * p) / r;
    if !is_hurwitz(&(a - b * k)) {
        return Err(Error::RiccatiFailure("closed loop is not Hurwitz".into()));
    }
    // symmetric inverse square root from the spectral decomposition
    let mut inv_sqrt = Matrix2::zeros();
    for i in 0..2 {
        let v = eig.eigenvectors.column(i);
        inv_sqrt += v * v.transpose() / eig.eigenvalues[i].sqrt();
    }
    Ok(RiccatiSolution { p, k, residual: res, p_inv_sqrt: inv_sqrt })
}

/// Max-abs residual of the CARE at P.
pub fn care_residual(
    p: &Matrix2<f64>,
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    q: &Matrix2<f64>,
    r: f64,
) -> f64 {
    let m = a.transpose() * p + p * a - p * b * b.transpose() * p / r + q;
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Both eigenvalues in the open left half plane (2x2: trace < 0, det > 0).
pub fn is_hurwitz(m: &Matrix2<f64>) -> bool {
    m.trace() < 0.0 && m.determinant() > 0.0
}

/// Solve the 2x2 Lyapunov equation `A^T X + X A = C` for symmetric X.
fn solve_lyapunov(a: &Matrix2<f64>, c: &Matrix2<f64>) -> Result<Matrix2<f64>, Error> {
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    // unknowns (x11, x12, x22)
    let m = Matrix3::new(
        2.0 * a11,
        2.0 * a21,
        0.0,
        a12,
        a11 + a22,
        a21,
        0.0,
        2.0 * a12,
        2.0 * a22,
    );
    let rhs = Vector3::new(c[(0, 0)], c[(0, 1)], c[(1, 1)]);
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::RiccatiFailure("singular Lyapunov operator".into()))?;
    Ok(Matrix2::new(x[0], x[1], x[1], x[2]))
}

/// P from the stable invariant subspace of the Hamiltonian matrix
/// `[[A, -B B^T / r], [-Q, -A^T]]`.
fn stable_subspace_solution(
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    q: &Matrix2<f64>,
    r: f64,
) -> Result<Matrix2<f64>, Error> {
    let g = b * b.transpose() / r;
    #[rustfmt::skip]
    let h = Matrix4::new(
        a[(0, 0)], a[(0, 1)], -g[(0, 0)], -g[(0, 1)],
        a[(1, 0)], a[(1, 1)], -g[(1, 0)], -g[(1, 1)],
        -q[(0, 0)], -q[(0, 1)], -a[(0, 0)], -a[(1, 0)],
        -q[(1, 0)], -q[(1, 1)], -a[(0, 1)], -a[(1, 1)],
    );
    let eigs = h.complex_eigenvalues();
    let mut stable: Vec<Complex<f64>> = eigs.iter().copied().filter(|e| e.re < 0.0).collect();
    if stable.len() != 2 {
        return Err(Error::RiccatiFailure(format!(
            "expected 2 stable Hamiltonian eigenvalues, found {}",
            stable.len()
        )));
    }
    stable.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());

    let hc = h.map(|v| Complex::new(v, 0.0));
    let mut basis: Vec<Vector4<Complex<f64>>> = Vec::with_capacity(2);
    for &lam in &stable {
        let v = inverse_iteration(&hc, lam, &basis)?;
        basis.push(v);
    }
    // P = Y X^{-1} from the stacked eigenvectors [X; Y]
    let x = nalgebra::Matrix2::new(basis[0][0], basis[1][0], basis[0][1], basis[1][1]);
    let y = nalgebra::Matrix2::new(basis[0][2], basis[1][2], basis[0][3], basis[1][3]);
    let x_inv = x
        .try_inverse()
        .ok_or_else(|| Error::RiccatiFailure("stable subspace is vertical".into()))?;
    let p_c = y * x_inv;
    let p = p_c.map(|v| v.re);
    Ok((p + p.transpose()) * 0.5)
}

/// Eigenvector by shifted inverse iteration, deflated against earlier basis
/// vectors so a conjugate or repeated eigenvalue still yields an independent
/// direction.
fn inverse_iteration(
    hc: &Matrix4<Complex<f64>>,
    lam: Complex<f64>,
    deflate: &[Vector4<Complex<f64>>],
) -> Result<Vector4<Complex<f64>>, Error> {
    let shift = lam + Complex::new(1e-9 * (1.0 + lam.norm()), 1e-11);
    let m = hc - Matrix4::identity().map(|v: f64| Complex::new(v, 0.0)) * shift;
    let lu = m.lu();
    let mut v = Vector4::from_element(Complex::new(1.0, 0.3));
    v[1] = Complex::new(-0.7, 0.1);
    for _ in 0..32 {
        for d in deflate {
            let proj = d.dotc(&v);
            v -= d * proj;
        }
        let w = lu
            .solve(&v)
            .ok_or_else(|| Error::RiccatiFailure("inverse iteration hit a singular shift".into()))?;
        let n = w.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::RiccatiFailure("inverse iteration diverged".into()));
        }
        v = w / Complex::new(n, 0.0);
    }
    // converged when v is an eigenvector: residual check
    let res = (hc * v - v * lam).norm();
    if res > 1e-6 {
        return Err(Error::RiccatiFailure(format!("eigenvector residual {res:.2e} too large")));
    }
    Ok(v)
}

/// Fallback: full Newton-Kleinman from an Ackermann pole placement; used when
/// the Hamiltonian spectrum is degenerate.
fn newton_kleinman_from_placement(
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    q: &Matrix2<f64>,
    r: f64,
) -> Result<Matrix2<f64>, Error> {
    let ctrb = Matrix2::from_columns(&[*b, a * b]);
    let ctrb_inv = ctrb
        .try_inverse()
        .ok_or_else(|| Error::RiccatiFailure("pair (A, B) is not controllable".into()))?;
    // place poles at -1, -2: q_des(A) = A^2 + 3A + 2I
    let q_des = a * a + a * 3.0 + Matrix2::identity() * 2.0;
    let k0 = RowVector2::new(0.0, 1.0) * ctrb_inv * q_des;
    let mut k = k0;
    let mut p = Matrix2::identity();
    for _ in 0..NEWTON_MAX_ITERS {
        let acl = a - b * k;
        if !is_hurwitz(&acl) {
            return Err(Error::RiccatiFailure("Newton iterate lost stability".into()));
        }
        let rhs = -(q + k.transpose() * k * r);
        p = solve_lyapunov(&acl, &rhs)?;
        let k_next = (b.transpose() * p) / r;
        let step = (k_next - k).norm();
        k = k_next;
        if step < 1e-13 {
            break;
        }
    }
    Ok(p)
}

/// Outcome of the region-of-attraction simulation check on the ellipse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaReport {
    pub ok: bool,
    pub boundary_points: usize,
    pub converged: usize,
    /// Largest unclipped |u| seen along any rollout.
    pub max_raw_control: f64,
    /// How far the raw control exceeded the bound, 0 when unconstrained.
    pub control_overshoot: f64,
}

/// Simulate the clipped LQR loop from points on the ellipse boundary and
/// check that every rollout settles to `J_inf <= eps/100` within 10 s without
/// the raw feedback exceeding the torque bound.
pub fn verify_roa(
    params: &PendulumParams,
    cp: &CostParams,
    sol: &RiccatiSolution,
    bnd: &EllipseBoundary,
) -> RoaReport {
    let n = 64;
    let horizon = 10.0;
    let dt = 1e-3;
    let target = bnd.epsilon / 100.0;
    let mut converged = 0usize;
    let mut max_raw: f64 = 0.0;

    for i in 0..n {
        let phi = 2.0 * PI * i as f64 / n as f64;
        let mut x = ellipse_point(bnd, phi);
        let mut ok = false;
        let steps = (horizon / dt) as usize;
        for _ in 0..steps {
            let raw = sol.feedback(&x);
            max_raw = max_raw.max(raw.abs());
            let u = cp.clip(raw);
            x = rk4_step(params, &x, u, dt);
            if !x.theta.is_finite() || !x.theta_dot.is_finite() {
                break;
            }
            if sol.lqr_value(&x) <= target {
                ok = true;
                break;
            }
        }
        if ok {
            converged += 1;
        }
    }

    let overshoot = match cp.u_max {
        Some(b) => (max_raw - b).max(0.0),
        None => 0.0,
    };
    RoaReport {
        ok: converged == n && overshoot <= 1e-9,
        boundary_points: n,
        converged,
        max_raw_control: max_raw,
        control_overshoot: overshoot,
    }
}

fn rk4_step(params: &PendulumParams, x: &State, u: f64, dt: f64) -> State {
    let f = |s: &State| eval_dynamics(params, s, u);
    let k1 = f(x);
    let x2 = State::new(x.theta + 0.5 * dt * k1.theta, x.theta_dot + 0.5 * dt * k1.theta_dot);
    let k2 = f(&x2);
    let x3 = State::new(x.theta + 0.5 * dt * k2.theta, x.theta_dot + 0.5 * dt * k2.theta_dot);
    let k3 = f(&x3);
    let x4 = State::new(x.theta + dt * k3.theta, x.theta_dot + dt * k3.theta_dot);
    let k4 = f(&x4);
    State::new(
        x.theta + dt / 6.0 * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta),
        x.theta_dot
            + dt / 6.0 * (k1.theta_dot + 2.0 * k2.theta_dot + 2.0 * k3.theta_dot + k4.theta_dot),
    )
}

/// Solve the benchmark problem's CARE from physical parameters.
pub fn solve_for(params: &PendulumParams, cp: &CostParams) -> Result<RiccatiSolution, Error> {
    let (a, b) = crate::dynamics::linearize(params);
    let q = crate::dynamics::quadratic_state_cost(cp);
    solve_care(&a, &b, &q, cp.r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{benchmark_cost, benchmark_params, linearize, quadratic_state_cost};
    use approx::assert_relative_eq;

    /// Independent Newton-Kleinman oracle, written directly from the
    /// definition with its own pole-placement start.
    fn care_oracle(a: &Matrix2<f64>, b: &Vector2<f64>, q: &Matrix2<f64>, r: f64) -> Matrix2<f64> {
        // stabilize by brute placement at -3, -4
        let ctrb = Matrix2::from_columns(&[*b, a * b]);
        let q_des = a * a + a * 7.0 + Matrix2::identity() * 12.0;
        let k0 = RowVector2::new(0.0, 1.0) * ctrb.try_inverse().unwrap() * q_des;
        let mut k = k0;
        let mut p = Matrix2::zeros();
        for _ in 0..200 {
            let acl = a - b * k;
            assert!(is_hurwitz(&acl), "oracle iterate must stay stabilizing");
            let rhs = -(q + k.transpose() * k * r);
            // direct Kronecker solve of the Lyapunov equation
            let (a11, a12, a21, a22) = (acl[(0, 0)], acl[(0, 1)], acl[(1, 0)], acl[(1, 1)]);
            let m = Matrix3::new(
                2.0 * a11,
                2.0 * a21,
                0.0,
                a12,
                a11 + a22,
                a21,
                0.0,
                2.0 * a12,
                2.0 * a22,
            );
            let rhsv = Vector3::new(rhs[(0, 0)], rhs[(0, 1)], rhs[(1, 1)]);
            let x = m.lu().solve(&rhsv).unwrap();
            p = Matrix2::new(x[0], x[1], x[1], x[2]);
            let k_next = (b.transpose() * p) / r;
            if (k_next - k).norm() < 1e-14 {
                break;
            }
            k = k_next;
        }
        p
    }

    fn benchmark_system() -> (Matrix2<f64>, Vector2<f64>, Matrix2<f64>, f64) {
        let params = benchmark_params();
        let cp = benchmark_cost(None);
        let (a, b) = linearize(&params);
        (a, b, quadratic_state_cost(&cp), cp.r)
    }

    #[test]
    fn benchmark_care_residual_and_stability() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        assert!(sol.residual <= 1e-10, "residual {}", sol.residual);
        assert!(is_hurwitz(&(a - b * sol.k)));
        // cross-check subspace route against the independent Newton oracle
        let oracle = care_oracle(&a, &b, &q, r);
        assert!((sol.p - oracle).norm() < 1e-8, "routes disagree: {:?}", sol.p - oracle);
    }

    #[test]
    fn double_integrator_closed_form() {
        let a = Matrix2::new(0.0, 1.0, 0.0, 0.0);
        let b = Vector2::new(0.0, 1.0);
        let q = Matrix2::identity();
        let sol = solve_care(&a, &b, &q, 1.0).unwrap();
        let s3 = 3.0f64.sqrt();
        assert!((sol.p - Matrix2::new(s3, 1.0, 1.0, s3)).norm() < 1e-10);
    }

    #[test]
    fn care_homogeneity() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        let c = 3.7;
        let scaled = solve_care(&a, &b, &(q * c), r * c).unwrap();
        assert!((scaled.p - sol.p * c).norm() < 1e-8 * c);
    }

    #[test]
    fn lqr_value_examples() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        assert_eq!(sol.lqr_value(&State::new(0.0, 0.0)), 0.0);
        assert!(sol.lqr_value(&State::new(2.0 * PI, 0.0)) < 1e-25);
        let d = 1e-3;
        assert_relative_eq!(
            sol.lqr_value(&State::new(d, 0.0)),
            sol.p[(0, 0)] * d * d,
            max_relative = 1e-12
        );
    }

    #[test]
    fn terminal_costate_is_value_gradient() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        assert_eq!(sol.terminal_costate(&State::new(0.0, 0.0)).to_vector(), Vector2::zeros());
        // linear in the offset
        let d = Vector2::new(3e-3, -2e-3);
        let p = sol.terminal_costate(&State::new(d[0], d[1]));
        assert!((p.to_vector() - 2.0 * sol.p * d).norm() < 1e-15);
        // matches finite differences of the value
        let h = 1e-6;
        let x = State::new(0.011, -0.004);
        let g = sol.terminal_costate(&x);
        let fd1 = (sol.lqr_value(&State::new(x.theta + h, x.theta_dot))
            - sol.lqr_value(&State::new(x.theta - h, x.theta_dot)))
            / (2.0 * h);
        let fd2 = (sol.lqr_value(&State::new(x.theta, x.theta_dot + h))
            - sol.lqr_value(&State::new(x.theta, x.theta_dot - h)))
            / (2.0 * h);
        assert!((g.p1 - fd1).abs() <= 1e-6 * g.p1.abs().max(1e-3));
        assert!((g.p2 - fd2).abs() <= 1e-6 * g.p2.abs().max(1e-3));
    }

    #[test]
    fn ellipse_point_on_level_set() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        let bnd = EllipseBoundary::new(2e-4, sol).unwrap();
        for i in 0..257 {
            let phi = 2.0 * PI * i as f64 / 257.0;
            let x = ellipse_point(&bnd, phi);
            assert!(
                (sol.lqr_value(&x) - bnd.epsilon).abs() <= 1e-12,
                "off level at phi={phi}: {}",
                sol.lqr_value(&x)
            );
        }
        // periodic parameter
        let x0 = ellipse_point(&bnd, 0.3);
        let x1 = ellipse_point(&bnd, 0.3 + 2.0 * PI);
        assert!(x0.distance(&x1) < 1e-15);
        // antipodal parameters mirror through the origin
        let xm = ellipse_point(&bnd, 0.3 + PI);
        assert!((x0.theta + xm.theta).abs() < 1e-15);
        assert!((x0.theta_dot + xm.theta_dot).abs() < 1e-15);
    }

    #[test]
    fn ellipse_semi_axes_match_spectrum() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        let eps = 2e-4;
        let bnd = EllipseBoundary::new(eps, sol).unwrap();
        // extremal radii over the boundary equal sqrt(eps / eigenvalue)
        let eig = sol.p.symmetric_eigen();
        let mut expect: Vec<f64> = eig.eigenvalues.iter().map(|l| (eps / l).sqrt()).collect();
        expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut rmin = f64::INFINITY;
        let mut rmax = 0.0f64;
        for i in 0..4096 {
            let x = ellipse_point(&bnd, 2.0 * PI * i as f64 / 4096.0);
            let rad = (x.theta * x.theta + x.theta_dot * x.theta_dot).sqrt();
            rmin = rmin.min(rad);
            rmax = rmax.max(rad);
        }
        assert_relative_eq!(rmin, expect[0], max_relative = 1e-5);
        assert_relative_eq!(rmax, expect[1], max_relative = 1e-5);
    }

    #[test]
    fn ellipse_parametrization_covers_boundary() {
        let (a, b, q, r) = benchmark_system();
        let sol = solve_care(&a, &b, &q, r).unwrap();
        let bnd = EllipseBoundary::new(2e-4, sol).unwrap();
        // any boundary point is approached as the sampling densifies
        let target = ellipse_point(&bnd, 1.234567);
        for (n, tol) in [(64usize, 5e-3), (1024, 5e-5)] {
            let best = (0..n)
                .map(|i| ellipse_point(&bnd, 2.0 * PI * i as f64 / n as f64).distance(&target))
                .fold(f64::INFINITY, f64::min);
            assert!(best < tol, "n={n}: min dist {best}");
        }
    }

    #[test]
    fn roa_check_benchmark() {
        let params = benchmark_params();
        let (a, b) = linearize(&params);
        let cp = benchmark_cost(Some(2.0));
        let sol = solve_care(&a, &b, &quadratic_state_cost(&cp), cp.r).unwrap();
        let bnd = EllipseBoundary::new(2e-4, sol).unwrap();
        let rep = verify_roa(&params, &cp, &sol, &bnd);
        assert!(rep.ok, "{rep:?}");
        // a huge ellipse with a tight torque bound is not an ROA
        let huge = EllipseBoundary::new(1e3, sol).unwrap();
        let rep = verify_roa(&params, &cp, &sol, &huge);
        assert!(!rep.ok);
        assert!(rep.control_overshoot > 0.0);
        // unconstrained case tolerates a moderate ellipse
        let free = benchmark_cost(None);
        let sol_f = solve_care(&a, &b, &quadratic_state_cost(&free), free.r).unwrap();
        let bnd_f = EllipseBoundary::new(0.5, sol_f).unwrap();
        assert!(verify_roa(&params, &free, &sol_f, &bnd_f).ok);
    }
}
