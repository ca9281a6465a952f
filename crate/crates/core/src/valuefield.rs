//! Queryable value function, costate field, and feedback controller built
//! from clipped trajectory samples.
//!
//! The base-sheet sample cloud is Delaunay-triangulated once; queries reduce
//! the angle to the base window, evaluate the candidate sheet shifts by
//! barycentric-linear interpolation, and take the minimum. Inside the
//! terminal ellipse the local LQR expressions are returned analytically, so
//! the field matches the Riccati value exactly there. A rasterized band mask
//! around the nonsmooth curves flags queries whose costate would otherwise
//! blend across a value cut.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};
use std::f64::consts::PI;

use crate::dynamics::{
    eval_cost, eval_dynamics, optimal_control, CostParams, Costate, PendulumParams, State,
};
use crate::error::Error;
use crate::lqr::RiccatiSolution;
use crate::pmp::Trajectory;

const TWO_PI: f64 = 2.0 * PI;

/// One interpolation vertex.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueSample {
    pub state: State,
    pub value: f64,
    pub costate: Costate,
}

/// Build-time knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldConfig {
    /// half-width of the ambiguity band around nonsmooth curves
    pub band: f64,
    /// triangles with a longer edge are treated as uncovered territory
    pub coverage_max_edge: f64,
    /// sample budget before triangulation (value-stratified thinning)
    pub max_samples: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { band: 0.02, coverage_max_edge: 0.35, max_samples: 5_000_000 }
    }
}

struct SpadePoint {
    pos: Point2<f64>,
    sample: u32,
}

impl HasPosition for SpadePoint {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// Uniform bucket index over triangles (CSR layout).
struct TriGrid {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl TriGrid {
    fn build(verts: &[ValueSample], tris: &[[u32; 3]], cell: f64) -> Self {
        let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
        let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in verts {
            min_x = min_x.min(v.state.theta);
            max_x = max_x.max(v.state.theta);
            min_y = min_y.min(v.state.theta_dot);
            max_y = max_y.max(v.state.theta_dot);
        }
        if !min_x.is_finite() {
            (min_x, min_y, max_x, max_y) = (0.0, 0.0, 1.0, 1.0);
        }
        let nx = (((max_x - min_x) / cell).ceil() as usize + 2).max(1);
        let ny = (((max_y - min_y) / cell).ceil() as usize + 2).max(1);
        let x0 = min_x - cell * 0.5;
        let y0 = min_y - cell * 0.5;
        let idx = |x: f64, y: f64| -> (usize, usize) {
            let ix = (((x - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let iy = (((y - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            (ix, iy)
        };

        let mut counts = vec![0u32; nx * ny + 1];
        let mut spans = Vec::with_capacity(tris.len());
        for t in tris {
            let (ax, ay) = (verts[t[0] as usize].state.theta, verts[t[0] as usize].state.theta_dot);
            let (bx, by) = (verts[t[1] as usize].state.theta, verts[t[1] as usize].state.theta_dot);
            let (cx, cy) = (verts[t[2] as usize].state.theta, verts[t[2] as usize].state.theta_dot);
            let (ix0, iy0) = idx(ax.min(bx).min(cx), ay.min(by).min(cy));
            let (ix1, iy1) = idx(ax.max(bx).max(cx), ay.max(by).max(cy));
            spans.push((ix0, iy0, ix1, iy1));
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    counts[iy * nx + ix + 1] += 1;
                }
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut items = vec![0u32; *offsets.last().unwrap() as usize];
        for (ti, (ix0, iy0, ix1, iy1)) in spans.into_iter().enumerate() {
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    let c = iy * nx + ix;
                    items[cursor[c] as usize] = ti as u32;
                    cursor[c] += 1;
                }
            }
        }
        Self { cell, x0, y0, nx, ny, offsets, items }
    }

    fn candidates(&self, x: f64, y: f64) -> &[u32] {
        let ix = (((x - self.x0) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = (((y - self.y0) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        let c = iy * self.nx + ix;
        &self.items[self.offsets[c] as usize..self.offsets[c + 1] as usize]
    }
}

/// Rasterized "within band of a curve" mask over the base window.
struct BandMask {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    bits: Vec<bool>,
    any: bool,
}

impl BandMask {
    fn build(polylines: &[Vec<State>], band: f64, lo: (f64, f64), hi: (f64, f64)) -> Self {
        let cell = 0.01f64;
        let nx = (((hi.0 - lo.0) / cell).ceil() as usize + 2).max(1);
        let ny = (((hi.1 - lo.1) / cell).ceil() as usize + 2).max(1);
        let mut bits = vec![false; nx * ny];
        let reach = band + cell;
        let mut any = false;
        for pl in polylines {
            for w in pl.windows(2) {
                any = true;
                let (a, b) = (w[0], w[1]);
                let min_x = a.theta.min(b.theta) - reach;
                let max_x = a.theta.max(b.theta) + reach;
                let min_y = a.theta_dot.min(b.theta_dot) - reach;
                let max_y = a.theta_dot.max(b.theta_dot) + reach;
                let ix0 = (((min_x - lo.0) / cell).floor().max(0.0) as usize).min(nx - 1);
                let ix1 = (((max_x - lo.0) / cell).ceil().max(0.0) as usize).min(nx - 1);
                let iy0 = (((min_y - lo.1) / cell).floor().max(0.0) as usize).min(ny - 1);
                let iy1 = (((max_y - lo.1) / cell).ceil().max(0.0) as usize).min(ny - 1);
                for iy in iy0..=iy1 {
                    for ix in ix0..=ix1 {
                        if bits[iy * nx + ix] {
                            continue;
                        }
                        let px = lo.0 + (ix as f64 + 0.5) * cell;
                        let py = lo.1 + (iy as f64 + 0.5) * cell;
                        if crate::geometry::point_seg_dist(&State::new(px, py), &a, &b) <= reach {
                            bits[iy * nx + ix] = true;
                        }
                    }
                }
            }
        }
        Self { cell, x0: lo.0, y0: lo.1, nx, ny, bits, any }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        if !self.any {
            return false;
        }
        if x < self.x0 || y < self.y0 {
            return false;
        }
        let ix = ((x - self.x0) / self.cell) as usize;
        let iy = ((y - self.y0) / self.cell) as usize;
        if ix >= self.nx || iy >= self.ny {
            return false;
        }
        self.bits[iy * self.nx + ix]
    }
}

/// Per-sheet interpolation result.
#[derive(Debug, Clone, Copy)]
pub struct SheetValue {
    /// shift index of the sheet (multiples of 2pi added to the base window)
    pub shift: i32,
    pub value: f64,
    pub costate: Costate,
    /// evaluation point in the base cloud frame
    pub arg: State,
    pub near_curve: bool,
}

/// Costate query outcome: clear, or flagged because the point sits in the
/// ambiguity band of a nonsmooth curve with both sheet candidates attached.
#[derive(Debug, Clone, Copy)]
pub enum CostateQuery {
    Clear(Costate),
    Ambiguous { primary: SheetValue, secondary: SheetValue },
}

/// Interpolated value function over the clipped trajectory samples.
pub struct ValueField {
    pub verts: Vec<ValueSample>,
    pub tris: Vec<[u32; 3]>,
    grid: TriGrid,
    mask: BandMask,
    pub riccati: RiccatiSolution,
    pub epsilon: f64,
    pub params: PendulumParams,
    pub cost: CostParams,
    pub config: FieldConfig,
}

impl ValueField {
    /// Triangulate the nodes of clipped trajectories. `curve_polylines` are
    /// the nonsmooth polylines (with their shifted copies) used for the
    /// ambiguity band.
    pub fn build(
        trajectories: &[Trajectory],
        riccati: &RiccatiSolution,
        epsilon: f64,
        params: &PendulumParams,
        cp: &CostParams,
        curve_polylines: &[Vec<State>],
        config: &FieldConfig,
    ) -> Result<ValueField, Error> {
        let mut samples: Vec<ValueSample> = Vec::new();
        for t in trajectories {
            let mut prev: Option<State> = None;
            for n in &t.nodes {
                if let Some(p) = prev {
                    if p.distance(&n.state) < 1e-12 {
                        continue;
                    }
                }
                samples.push(ValueSample { state: n.state, value: n.value, costate: n.costate });
                prev = Some(n.state);
            }
        }
        if samples.len() > config.max_samples {
            samples = stratified_thin(samples, config.max_samples);
        }
        if samples.len() < 3 {
            return Err(Error::BuildFailure(format!(
                "need at least 3 samples, have {}",
                samples.len()
            )));
        }
        Self::from_samples(samples, riccati, epsilon, params, cp, curve_polylines, config)
    }

    /// Triangulate an explicit sample cloud.
    pub fn from_samples(
        samples: Vec<ValueSample>,
        riccati: &RiccatiSolution,
        epsilon: f64,
        params: &PendulumParams,
        cp: &CostParams,
        curve_polylines: &[Vec<State>],
        config: &FieldConfig,
    ) -> Result<ValueField, Error> {
        let pts: Vec<SpadePoint> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| SpadePoint {
                pos: Point2::new(s.state.theta, s.state.theta_dot),
                sample: i as u32,
            })
            .collect();
        let dt: DelaunayTriangulation<SpadePoint> = DelaunayTriangulation::bulk_load(pts)
            .map_err(|e| Error::BuildFailure(format!("triangulation failed: {e:?}")))?;
        if dt.num_inner_faces() == 0 {
            return Err(Error::BuildFailure("samples are collinear".into()));
        }

        // vertices in triangulation order so faces can refer to them directly
        let mut verts: Vec<ValueSample> = Vec::with_capacity(dt.num_vertices());
        for v in dt.vertices() {
            verts.push(samples[v.data().sample as usize]);
        }
        let max_edge2 = config.coverage_max_edge * config.coverage_max_edge;
        let mut tris: Vec<[u32; 3]> = Vec::with_capacity(dt.num_inner_faces());
        for f in dt.inner_faces() {
            let vs = f.vertices();
            let idx = [vs[0].index() as u32, vs[1].index() as u32, vs[2].index() as u32];
            let a = verts[idx[0] as usize].state;
            let b = verts[idx[1] as usize].state;
            let c = verts[idx[2] as usize].state;
            let e2 = sq_dist(&a, &b).max(sq_dist(&b, &c)).max(sq_dist(&c, &a));
            if e2 <= max_edge2 {
                tris.push(idx);
            }
        }
        if tris.is_empty() {
            return Err(Error::BuildFailure("no triangle satisfies the coverage bound".into()));
        }
        Self::from_tables(verts, tris, riccati, epsilon, params, cp, curve_polylines, config)
    }

    /// Assemble from prebuilt vertex/triangle tables (the export format).
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        verts: Vec<ValueSample>,
        tris: Vec<[u32; 3]>,
        riccati: &RiccatiSolution,
        epsilon: f64,
        params: &PendulumParams,
        cp: &CostParams,
        curve_polylines: &[Vec<State>],
        config: &FieldConfig,
    ) -> Result<ValueField, Error> {
        if verts.len() < 3 || tris.is_empty() {
            return Err(Error::BuildFailure("empty vertex or triangle table".into()));
        }
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for v in &verts {
            lo.0 = lo.0.min(v.state.theta);
            lo.1 = lo.1.min(v.state.theta_dot);
            hi.0 = hi.0.max(v.state.theta);
            hi.1 = hi.1.max(v.state.theta_dot);
        }
        let grid = TriGrid::build(&verts, &tris, 0.05);
        let mask = BandMask::build(curve_polylines, config.band, lo, hi);
        Ok(ValueField {
            verts,
            tris,
            grid,
            mask,
            riccati: *riccati,
            epsilon,
            params: *params,
            cost: *cp,
            config: *config,
        })
    }

    /// True when the point (base-frame coordinates) lies in the ambiguity
    /// band of a nonsmooth curve.
    pub fn in_curve_band(&self, arg: &State) -> bool {
        self.mask.contains(arg.theta, arg.theta_dot)
    }

    fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        for &ti in self.grid.candidates(x, y) {
            let t = &self.tris[ti as usize];
            let a = &self.verts[t[0] as usize].state;
            let b = &self.verts[t[1] as usize].state;
            let c = &self.verts[t[2] as usize].state;
            if let Some(bary) = barycentric(x, y, a, b, c) {
                return Some((ti as usize, bary));
            }
        }
        None
    }

    /// Interpolate one sheet at a base-frame argument.
    fn eval_sheet(&self, shift: i32, arg: State) -> Option<SheetValue> {
        let (ti, bary) = self.locate(arg.theta, arg.theta_dot)?;
        let t = &self.tris[ti];
        let mut value = 0.0;
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        for i in 0..3 {
            let v = &self.verts[t[i] as usize];
            value += bary[i] * v.value;
            p1 += bary[i] * v.costate.p1;
            p2 += bary[i] * v.costate.p2;
        }
        Some(SheetValue {
            shift,
            value,
            costate: Costate::new(p1, p2),
            arg,
            near_curve: self.in_curve_band(&arg),
        })
    }

    /// All covered sheet evaluations at a state, cheapest first.
    pub fn sheet_values(&self, x: &State) -> Vec<SheetValue> {
        let k = (x.theta / TWO_PI).round();
        let theta_base = x.theta - TWO_PI * k;
        let mut out: Vec<SheetValue> = [-1i32, 0, 1]
            .into_iter()
            .filter_map(|j| {
                self.eval_sheet(j, State::new(theta_base - TWO_PI * f64::from(j), x.theta_dot))
            })
            .collect();
        out.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
        out
    }

    /// Global value: minimum over candidate sheets, analytic inside the
    /// terminal ellipse.
    pub fn query_value(&self, x: &State) -> Result<f64, Error> {
        let local = self.riccati.lqr_value(x);
        if local <= self.epsilon {
            return Ok(local);
        }
        let sheets = self.sheet_values(x);
        sheets.first().map(|s| s.value).ok_or(Error::OutOfCoverage {
            theta: x.theta,
            theta_dot: x.theta_dot,
        })
    }

    /// Costate (value gradient) on the winning sheet; flagged ambiguous
    /// inside the curve band when a second sheet is available.
    pub fn query_costate(&self, x: &State) -> Result<CostateQuery, Error> {
        let local = self.riccati.lqr_value(x);
        if local <= self.epsilon {
            return Ok(CostateQuery::Clear(self.riccati.terminal_costate(x)));
        }
        let sheets = self.sheet_values(x);
        let first = *sheets.first().ok_or(Error::OutOfCoverage {
            theta: x.theta,
            theta_dot: x.theta_dot,
        })?;
        if first.near_curve {
            if let Some(second) = sheets.get(1) {
                return Ok(CostateQuery::Ambiguous { primary: first, secondary: *second });
            }
        }
        Ok(CostateQuery::Clear(first.costate))
    }

    /// Feedback torque from the interpolated costate. In the ambiguity band
    /// the lower-value sheet wins; exact ties resolve toward the sheet whose
    /// control is negative.
    pub fn synthesize_control(&self, x: &State) -> Result<f64, Error> {
        let costate = match self.query_costate(x)? {
            CostateQuery::Clear(p) => p,
            CostateQuery::Ambiguous { primary, secondary } => {
                if (primary.value - secondary.value).abs() <= 1e-12 {
                    // tie: prefer the negative-control sheet, i.e. larger p2
                    if secondary.costate.p2 > primary.costate.p2 {
                        secondary.costate
                    } else {
                        primary.costate
                    }
                } else {
                    primary.costate
                }
            }
        };
        Ok(optimal_control(&self.params, &self.cost, &costate))
    }

    /// Closed-loop rollout under the synthesized controller, fixed-step RK4.
    pub fn rollout(&self, x0: &State, horizon: f64, dt: f64) -> RolloutResult {
        self.rollout_impl(x0, horizon, dt, false)
    }

    /// As `rollout` but recording every step.
    pub fn rollout_trace(&self, x0: &State, horizon: f64, dt: f64) -> RolloutResult {
        self.rollout_impl(x0, horizon, dt, true)
    }

    fn control_or_err(&self, x: &State) -> Result<f64, Error> {
        // analytic fast path inside the ellipse
        if self.riccati.lqr_value(x) <= self.epsilon {
            return Ok(self.cost.clip(self.riccati.feedback(x)));
        }
        self.synthesize_control(x)
    }

    fn rollout_impl(&self, x0: &State, horizon: f64, dt: f64, trace: bool) -> RolloutResult {
        let mut res = RolloutResult {
            x0: *x0,
            cost: 0.0,
            time_to_ellipse: None,
            settled: false,
            coverage_lost: false,
            steps: Vec::new(),
        };
        let mut x = *x0;
        let mut t = 0.0f64;
        let settle_level = self.epsilon / 100.0;
        let steps = (horizon / dt).ceil() as usize;
        for _ in 0..steps {
            if trace {
                let u_now = self.control_or_err(&x).unwrap_or(f64::NAN);
                res.steps.push(RolloutStep { t, state: x, control: u_now, running_cost: res.cost });
            }
            let local = self.riccati.lqr_value(&x);
            if res.time_to_ellipse.is_none() && local <= self.epsilon {
                res.time_to_ellipse = Some(t);
            }
            if local <= settle_level {
                res.settled = true;
                break;
            }
            // RK4 on (state, cost) with state-feedback control
            let deriv = |s: &State| -> Option<(State, f64)> {
                let u = self.control_or_err(s).ok()?;
                Some((eval_dynamics(&self.params, s, u), eval_cost(&self.cost, s, u)))
            };
            let Some((k1, c1)) = deriv(&x) else {
                res.coverage_lost = true;
                break;
            };
            let x2 = advance(&x, &k1, dt * 0.5);
            let Some((k2, c2)) = deriv(&x2) else {
                res.coverage_lost = true;
                break;
            };
            let x3 = advance(&x, &k2, dt * 0.5);
            let Some((k3, c3)) = deriv(&x3) else {
                res.coverage_lost = true;
                break;
            };
            let x4 = advance(&x, &k3, dt);
            let Some((k4, c4)) = deriv(&x4) else {
                res.coverage_lost = true;
                break;
            };
            x = State::new(
                x.theta + dt / 6.0 * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta),
                x.theta_dot
                    + dt / 6.0
                        * (k1.theta_dot
                            + 2.0 * k2.theta_dot
                            + 2.0 * k3.theta_dot
                            + k4.theta_dot),
            );
            res.cost += dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
            t += dt;
            if !x.theta.is_finite() || !x.theta_dot.is_finite() {
                res.coverage_lost = true;
                break;
            }
        }
        if trace {
            let u_now = self.control_or_err(&x).unwrap_or(f64::NAN);
            res.steps.push(RolloutStep { t, state: x, control: u_now, running_cost: res.cost });
        }
        res
    }

    /// Evaluate the value on a regular lattice (plotting export); cells
    /// without coverage yield None.
    pub fn grid_eval(&self, lo: (f64, f64), hi: (f64, f64), n: usize) -> Vec<(State, Option<f64>)> {
        let pts: Vec<State> = (0..n)
            .flat_map(|iy| {
                let y = lo.1 + (hi.1 - lo.1) * iy as f64 / (n - 1).max(1) as f64;
                (0..n).map(move |ix| {
                    let x = lo.0 + (hi.0 - lo.0) * ix as f64 / (n - 1).max(1) as f64;
                    State::new(x, y)
                })
            })
            .collect();
        pts.into_par_iter().map(|p| (p, self.query_value(&p).ok())).collect()
    }
}

fn advance(x: &State, f: &State, dt: f64) -> State {
    State::new(x.theta + dt * f.theta, x.theta_dot + dt * f.theta_dot)
}

fn sq_dist(a: &State, b: &State) -> f64 {
    (a.theta - b.theta).powi(2) + (a.theta_dot - b.theta_dot).powi(2)
}

fn barycentric(x: f64, y: f64, a: &State, b: &State, c: &State) -> Option<[f64; 3]> {
    let v0x = b.theta - a.theta;
    let v0y = b.theta_dot - a.theta_dot;
    let v1x = c.theta - a.theta;
    let v1y = c.theta_dot - a.theta_dot;
    let den = v0x * v1y - v1x * v0y;
    if den.abs() < 1e-300 {
        return None;
    }
    let px = x - a.theta;
    let py = y - a.theta_dot;
    let l1 = (px * v1y - py * v1x) / den;
    let l2 = (v0x * py - v0y * px) / den;
    let l0 = 1.0 - l1 - l2;
    let tol = -1e-9;
    if l0 >= tol && l1 >= tol && l2 >= tol {
        Some([l0, l1, l2])
    } else {
        None
    }
}

/// Value-stratified thinning to a sample budget.
fn stratified_thin(samples: Vec<ValueSample>, budget: usize) -> Vec<ValueSample> {
    let bins = 100usize;
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &samples {
        vmin = vmin.min(s.value);
        vmax = vmax.max(s.value);
    }
    if !(vmax > vmin) {
        return samples.into_iter().take(budget).collect();
    }
    let bin_of = |v: f64| (((v - vmin) / (vmax - vmin) * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for s in &samples {
        counts[bin_of(s.value)] += 1;
    }
    let per_bin = budget / bins;
    let stride: Vec<usize> = counts.iter().map(|&c| c.div_ceil(per_bin.max(1)).max(1)).collect();
    let mut seen = vec![0usize; bins];
    samples
        .into_iter()
        .filter(|s| {
            let b = bin_of(s.value);
            let keep = seen[b] % stride[b] == 0;
            seen[b] += 1;
            keep
        })
        .collect()
}

/// Outcome of one closed-loop rollout.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub x0: State,
    /// running cost accumulated until settling (or the horizon)
    pub cost: f64,
    /// first time the state entered the terminal ellipse
    pub time_to_ellipse: Option<f64>,
    /// reached the inner settle level eps/100
    pub settled: bool,
    pub coverage_lost: bool,
    pub steps: Vec<RolloutStep>,
}

impl RolloutResult {
    pub fn reached_ellipse(&self) -> bool {
        self.time_to_ellipse.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutStep {
    pub t: f64,
    pub state: State,
    pub control: f64,
    pub running_cost: f64,
}
