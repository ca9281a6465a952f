//! Embedded Dormand-Prince 5(4) step with dense output.
//!
//! Only the single-step primitive lives here; drivers (backward PMP, locus
//! tracing) own their stop conditions and event handling. The dense output is
//! the standard order-4 continuous extension, used for cutting trajectories
//! exactly at value caps, domain walls, and saturation switches.

/// Autonomous ODE right-hand side.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, y: &[f64; N]) -> [f64; N];
}

impl<const N: usize, F: Fn(&[f64; N]) -> [f64; N]> OdeSystem<N> for F {
    fn rhs(&self, y: &[f64; N]) -> [f64; N] {
        self(y)
    }
}

// Butcher tableau of the Dormand-Prince 5(4) pair.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat, for the embedded order-4 error estimate
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output weights (continuous order-4 extension)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted or attempted step with everything needed for interpolation.
#[derive(Debug, Clone)]
pub struct StepResult<const N: usize> {
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub h: f64,
    pub err: f64,
    pub accepted: bool,
    pub h_next: f64,
    k: [[f64; N]; 7],
}

impl<const N: usize> StepResult<N> {
    /// Derivative at the step end (FSAL stage), reusable as k1 of the next step.
    pub fn end_derivative(&self) -> [f64; N] {
        self.k[6]
    }

    /// Dense-output evaluation at fraction `theta` in [0, 1] across the step.
    pub fn dense(&self, theta: f64) -> [f64; N] {
        let h = self.h;
        let mut out = [0.0; N];
        for i in 0..N {
            let ydiff = self.y1[i] - self.y0[i];
            let r1 = self.y0[i];
            let r2 = ydiff;
            let r3 = h * self.k[0][i] - ydiff;
            let r4 = ydiff - h * self.k[6][i] - r3;
            let r5 = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
            out[i] = r1 + theta * (r2 + (1.0 - theta) * (r3 + theta * (r4 + (1.0 - theta) * r5)));
        }
        out
    }
}

/// Step-size and tolerance policy.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Dopri5 {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self { atol, rtol, h_min: 1e-13, h_max: f64::INFINITY }
    }

    /// Attempt a single step of size `h` from `y0`. `k1` may carry the FSAL
    /// derivative from the previous accepted step.
    pub fn step<const N: usize, S: OdeSystem<N>>(
        &self,
        sys: &S,
        y0: &[f64; N],
        h: f64,
        k1: Option<[f64; N]>,
    ) -> StepResult<N> {
        let mut k = [[0.0; N]; 7];
        k[0] = k1.unwrap_or_else(|| sys.rhs(y0));
        let mut yt = [0.0; N];

        for i in 0..N {
            yt[i] = y0[i] + h * A21 * k[0][i];
        }
        k[1] = sys.rhs(&yt);
        for i in 0..N {
            yt[i] = y0[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        k[2] = sys.rhs(&yt);
        for i in 0..N {
            yt[i] = y0[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        k[3] = sys.rhs(&yt);
        for i in 0..N {
            yt[i] = y0[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        k[4] = sys.rhs(&yt);
        for i in 0..N {
            yt[i] = y0[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        k[5] = sys.rhs(&yt);

        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] = y0[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        k[6] = sys.rhs(&y1);

        let mut err_sq = 0.0;
        for i in 0..N {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
            let scale = self.atol + self.rtol * y0[i].abs().max(y1[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / N as f64).sqrt();

        let accepted = err <= 1.0 && y1.iter().all(|v| v.is_finite());
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        let h_next = (h * factor).clamp(self.h_min, self.h_max);

        StepResult { y0: *y0, y1, h, err, accepted, h_next, k }
    }

    /// Starting step size from the classic two-evaluation heuristic.
    pub fn initial_step<const N: usize, S: OdeSystem<N>>(&self, sys: &S, y0: &[f64; N]) -> f64 {
        let f0 = sys.rhs(y0);
        let mut d0: f64 = 0.0;
        let mut d1: f64 = 0.0;
        for i in 0..N {
            let scale = self.atol + self.rtol * y0[i].abs();
            d0 += (y0[i] / scale).powi(2);
            d1 += (f0[i] / scale).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };

        // explicit Euler probe to bound the second derivative
        let mut y1 = *y0;
        for i in 0..N {
            y1[i] += h0 * f0[i];
        }
        let f1 = sys.rhs(&y1);
        let mut d2: f64 = 0.0;
        for i in 0..N {
            let scale = self.atol + self.rtol * y0[i].abs();
            d2 += ((f1[i] - f0[i]) / scale).powi(2);
        }
        let d2 = (d2 / N as f64).sqrt() / h0;
        let max_d = d1.max(d2);
        let h1 = if max_d <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / max_d).powf(0.2) };
        (100.0 * h0).min(h1).min(self.h_max).max(self.h_min)
    }
}

/// Locate a sign change of `g` across an accepted step by bisection on the
/// dense output; returns the fraction where `g` first matches the sign of the
/// step end. `tol_s` is the absolute localization tolerance in integration
/// time.
pub fn bisect_event<const N: usize>(
    step: &StepResult<N>,
    g: impl Fn(&[f64; N]) -> f64,
    tol_s: f64,
) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let g0 = g(&step.y0);
    for _ in 0..128 {
        if (hi - lo) * step.h.abs() <= tol_s {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(&step.dense(mid));
        if (gm > 0.0) == (g0 > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sho;
    impl OdeSystem<2> for Sho {
        fn rhs(&self, y: &[f64; 2]) -> [f64; 2] {
            [y[1], -y[0]]
        }
    }

    fn integrate_to(sys: &impl OdeSystem<2>, y0: [f64; 2], t_end: f64, tol: f64) -> [f64; 2] {
        let solver = Dopri5::new(tol, tol);
        let mut y = y0;
        let mut t = 0.0;
        let mut h = solver.initial_step(sys, &y);
        let mut k1: Option<[f64; 2]> = None;
        while t < t_end {
            h = h.min(t_end - t);
            let step = solver.step(sys, &y, h, k1);
            if step.accepted {
                t += step.h;
                y = step.y1;
                k1 = Some(step.end_derivative());
            } else {
                k1 = Some(step.k[0]);
            }
            h = step.h_next;
        }
        y
    }

    #[test]
    fn sho_one_period() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let y = integrate_to(&Sho, [1.0, 0.0], two_pi, 1e-9);
        assert!((y[0] - 1.0).abs() < 1e-7, "y0 = {}", y[0]);
        assert!(y[1].abs() < 1e-7, "y1 = {}", y[1]);
    }

    #[test]
    fn fifth_order_convergence() {
        // single-step error should drop by ~2^6 per halving
        let solver = Dopri5::new(1e30, 1e30); // always accept
        let exact = |t: f64| [t.cos(), -t.sin()];
        let mut errs = vec![];
        for &h in &[0.4, 0.2, 0.1] {
            let step = solver.step(&Sho, &[1.0, 0.0], h, None);
            let e = exact(h);
            errs.push(((step.y1[0] - e[0]).powi(2) + (step.y1[1] - e[1]).powi(2)).sqrt());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 40.0 && r2 > 40.0, "convergence ratios {r1:.1}, {r2:.1}");
    }

    #[test]
    fn dense_output_accuracy() {
        let solver = Dopri5::new(1e-9, 1e-9);
        let h = 0.05;
        let step = solver.step(&Sho, &[1.0, 0.0], h, None);
        assert!(step.accepted);
        for i in 0..=10 {
            let th = i as f64 / 10.0;
            let y = step.dense(th);
            let t = th * h;
            assert!((y[0] - t.cos()).abs() < 1e-10);
            assert!((y[1] + t.sin()).abs() < 1e-10);
        }
        // endpoints are exact
        assert_eq!(step.dense(0.0), step.y0);
        let e = step.dense(1.0);
        assert!((e[0] - step.y1[0]).abs() < 1e-15 && (e[1] - step.y1[1]).abs() < 1e-15);
    }

    #[test]
    fn event_bisection() {
        // start mid-oscillation; y0 crosses cos(0.3) at t = 0.3 inside the step
        let solver = Dopri5::new(1e-7, 1e-7);
        let t0 = 0.25f64;
        let h = 0.08;
        let step = solver.step(&Sho, &[t0.cos(), -t0.sin()], h, None);
        assert!(step.accepted, "err = {}", step.err);
        let target: f64 = 0.3;
        let theta = bisect_event(&step, |y| y[0] - target.cos(), 1e-13);
        let t_star = t0 + theta * h;
        assert!((t_star - 0.3).abs() < 1e-6, "t* = {t_star}");
    }

    #[test]
    fn step_rejection_shrinks() {
        let solver = Dopri5::new(1e-12, 1e-12);
        let step = solver.step(&Sho, &[1.0, 0.0], 10.0, None);
        assert!(!step.accepted);
        assert!(step.h_next < 10.0);
    }
}
