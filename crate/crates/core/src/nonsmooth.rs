//! Extraction of the nonsmooth spiral curve by intersecting equal-value
//! fronts with their 2pi-shifted copies, the bang-bang discontinuity locus of
//! the saturated problem, and clipping of raw trajectories to their own value
//! sheet.
//!
//! A front at level v holds one interpolated state per trajectory that
//! reaches v, ordered by seed. Intersecting the front polyline with a copy
//! translated by +2pi in theta yields the states where the base sheet and its
//! right neighbor agree in value; threading those intersections across levels
//! by nearest-point continuity assembles the spiral branches. The first
//! contact level is refined by bisection so the curve starts at the tangency
//! point of the two sheets instead of the first discrete level, which is what
//! places the curve through the downright position.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{eval_dynamics, CostParams, Costate, PendulumParams, State};
use crate::error::Error;
use crate::geometry::{point_seg_dist, seg_intersect, SegGrid};
use crate::ode::{bisect_event, Dopri5};
use crate::pmp::{PmpNode, Trajectory};

const TWO_PI: f64 = 2.0 * PI;

/// States of all trajectories at one value level, ordered by seed.
#[derive(Debug, Clone)]
pub struct ValueFront {
    pub value: f64,
    /// (trajectory index, interpolated state)
    pub points: Vec<(usize, State)>,
    /// every trajectory contributed, so the front is topologically a loop
    pub closed: bool,
}

impl ValueFront {
    /// Segments of the front polyline: consecutive points plus the wrap
    /// segment when closed.
    fn segments(&self) -> Vec<(State, State)> {
        let n = self.points.len();
        if n < 2 {
            return Vec::new();
        }
        let mut out: Vec<(State, State)> =
            self.points.windows(2).map(|w| (w[0].1, w[1].1)).collect();
        if self.closed {
            out.push((self.points[n - 1].1, self.points[0].1));
        }
        out
    }
}

/// States at exactly `level` along every trajectory that reaches it.
pub fn sublevel_front(
    trajectories: &[Trajectory],
    level: f64,
    params: &PendulumParams,
    cp: &CostParams,
) -> ValueFront {
    let mut points = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        if let Some(s) = t.state_at_value(level, params, cp) {
            points.push((i, s));
        }
    }
    let closed = points.len() == trajectories.len();
    ValueFront { value: level, points, closed }
}

/// All candidate intersection states between the front polyline and its copy
/// shifted by +2pi in theta. Segment pairs involved in a self-intersection of
/// the front are excluded rather than interpreted.
fn shift_candidates(front: &ValueFront) -> Vec<State> {
    let segs = front.segments();
    if segs.len() < 2 {
        return Vec::new();
    }
    let excluded = self_intersecting_segments(&segs);

    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (a, b) in &segs {
        min_x = min_x.min(a.theta).min(b.theta);
        max_x = max_x.max(a.theta).max(b.theta);
        min_y = min_y.min(a.theta_dot).min(b.theta_dot);
        max_y = max_y.max(a.theta_dot).max(b.theta_dot);
    }
    // quick reject: a front narrower than 2pi cannot touch its shifted copy
    if max_x - min_x < TWO_PI {
        return Vec::new();
    }

    let cell = ((max_x - min_x).max(max_y - min_y) / 256.0).max(1e-3);
    let mut grid = SegGrid::new(cell, (min_x + TWO_PI, min_y), (max_x + TWO_PI, max_y));
    for (j, (a, b)) in segs.iter().enumerate() {
        if excluded.contains(&j) {
            continue;
        }
        grid.insert(a.shifted(1), b.shifted(1), j as u32);
    }

    let mut found: Vec<State> = Vec::new();
    for (i, (a, b)) in segs.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let lo = (a.theta.min(b.theta), a.theta_dot.min(b.theta_dot));
        let hi = (a.theta.max(b.theta), a.theta_dot.max(b.theta_dot));
        grid.for_each_in_box(lo, hi, |_, (c, d, _)| {
            if let Some((p, _, _)) = seg_intersect(a, b, c, d) {
                // dedupe near-identical hits (adjacent pairs, repeat buckets)
                if found.iter().all(|q| q.distance(&p) > 1e-9) {
                    found.push(p);
                }
            }
        });
    }
    found
}

/// Segment indices of the front that intersect another non-adjacent front
/// segment.
fn self_intersecting_segments(segs: &[(State, State)]) -> std::collections::BTreeSet<usize> {
    let mut excluded = std::collections::BTreeSet::new();
    let n = segs.len();
    if n < 4 {
        return excluded;
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (a, b) in segs {
        min_x = min_x.min(a.theta).min(b.theta);
        max_x = max_x.max(a.theta).max(b.theta);
        min_y = min_y.min(a.theta_dot).min(b.theta_dot);
        max_y = max_y.max(a.theta_dot).max(b.theta_dot);
    }
    let cell = ((max_x - min_x).max(max_y - min_y) / 256.0).max(1e-3);
    let mut grid = SegGrid::new(cell, (min_x, min_y), (max_x, max_y));
    for (i, (a, b)) in segs.iter().enumerate() {
        grid.insert(*a, *b, i as u32);
    }
    for (i, (a, b)) in segs.iter().enumerate() {
        let lo = (a.theta.min(b.theta), a.theta_dot.min(b.theta_dot));
        let hi = (a.theta.max(b.theta), a.theta_dot.max(b.theta_dot));
        grid.for_each_in_box(lo, hi, |si, (c, d, _)| {
            if si <= i || si == i + 1 || (i == 0 && si == n - 1) {
                return;
            }
            if seg_intersect(a, b, c, d).is_some() {
                excluded.insert(i);
                excluded.insert(si);
            }
        });
    }
    excluded
}

/// Intersections of a front with its +2pi copy. With `prev` given, returns
/// the candidate nearest to each previous intersection (branch threading);
/// otherwise all candidates.
pub fn shift_intersect(front: &ValueFront, prev: Option<&[State]>) -> Vec<State> {
    let candidates = shift_candidates(front);
    match prev {
        None => candidates,
        Some(ps) => ps
            .iter()
            .filter_map(|p| {
                candidates
                    .iter()
                    .min_by(|a, b| {
                        p.distance(a).partial_cmp(&p.distance(b)).unwrap()
                    })
                    .copied()
            })
            .collect(),
    }
}

/// One branch of the nonsmooth curve. Shift copies produced for clipping
/// carry the pair offset that generated them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonsmoothCurve {
    pub branch_id: u32,
    /// which 2pi-shift pair the branch separates: 0 for (base, base+2pi)
    pub pair_shift: i32,
    /// (state, value) records with non-decreasing values
    pub points: Vec<(State, f64)>,
}

impl NonsmoothCurve {
    pub fn states(&self) -> Vec<State> {
        self.points.iter().map(|(s, _)| *s).collect()
    }

    pub fn min_distance_to(&self, x: &State) -> f64 {
        if self.points.len() == 1 {
            return self.points[0].0.distance(x);
        }
        self.points
            .windows(2)
            .map(|w| point_seg_dist(x, &w[0].0, &w[1].0))
            .fold(f64::INFINITY, f64::min)
    }

    fn translated(&self, shift: i32, branch_id: u32) -> NonsmoothCurve {
        NonsmoothCurve {
            branch_id,
            pair_shift: shift,
            points: self.points.iter().map(|(s, v)| (s.shifted(shift), *v)).collect(),
        }
    }
}

/// Settings for the curve extraction sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveConfig {
    /// value increment between fronts
    pub delta: f64,
    /// number of levels to sweep
    pub levels: usize,
    /// largest admissible move of a branch tip per level before it stalls
    pub jump_guard: f64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { delta: 0.05, levels: 4000, jump_guard: 0.5 }
    }
}

/// Sweep value levels k*delta, intersect each front with its shifted copy,
/// and thread the intersections into per-branch spiral polylines. The first
/// contact value is refined by bisection and seeds every branch.
pub fn compute_nonsmooth_curve(
    trajectories: &[Trajectory],
    delta: f64,
    m_levels: usize,
    params: &PendulumParams,
    cp: &CostParams,
) -> Result<Vec<NonsmoothCurve>, Error> {
    compute_nonsmooth_curve_cfg(
        trajectories,
        &CurveConfig { delta, levels: m_levels, jump_guard: 0.5 },
        params,
        cp,
    )
}

pub fn compute_nonsmooth_curve_cfg(
    trajectories: &[Trajectory],
    cfg: &CurveConfig,
    params: &PendulumParams,
    cp: &CostParams,
) -> Result<Vec<NonsmoothCurve>, Error> {
    use rayon::prelude::*;

    if !(cfg.delta > 0.0) || cfg.levels == 0 {
        return Err(Error::Input("curve sweep needs delta > 0 and at least one level".into()));
    }
    let front_at = |v: f64| sublevel_front(trajectories, v, params, cp);

    // fronts at distinct levels are independent
    let candidates_by_level: Vec<Vec<State>> = (1..=cfg.levels)
        .into_par_iter()
        .map(|k| shift_candidates(&front_at(k as f64 * cfg.delta)))
        .collect();

    let Some(k0_idx) = candidates_by_level.iter().position(|c| !c.is_empty()) else {
        return Ok(Vec::new());
    };
    let k0 = k0_idx + 1;

    // bisect the tangency value between the last empty and first nonempty level
    let mut lo = (k0 as f64 - 1.0) * cfg.delta;
    let mut hi = k0 as f64 * cfg.delta;
    for _ in 0..40 {
        if hi - lo <= 1e-9 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if shift_candidates(&front_at(mid)).is_empty() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root_value = hi;
    let root_state = closest_approach(&front_at(lo.max(cfg.delta * 0.5)))
        .or_else(|| shift_candidates(&front_at(hi)).into_iter().map(|s| (s, 0.0)).next())
        .map(|(s, _)| s);

    // seed branches with every intersection at the first nonempty level
    let mut branches: Vec<NonsmoothCurve> = Vec::new();
    let mut stalls: Vec<usize> = Vec::new();
    for r in &candidates_by_level[k0_idx] {
        let mut points = Vec::new();
        if let Some(rs) = root_state {
            points.push((rs, root_value));
        }
        points.push((*r, k0 as f64 * cfg.delta));
        branches.push(NonsmoothCurve { branch_id: branches.len() as u32, pair_shift: 0, points });
        stalls.push(0);
    }

    // march the remaining levels with nearest-point threading. The per-level
    // move allowance adapts to the branch's recent spacing so a finished
    // branch does not teleport onto a different spiral wind; candidates far
    // from every branch spawn new branches (later windings of the spiral
    // cross the theta_dot axis on structure of their own).
    const STALL_LIMIT: usize = 40;
    const SPAWN_DISTANCE: f64 = 0.15;
    const MAX_BRANCHES: usize = 64;
    for (idx, candidates) in candidates_by_level.iter().enumerate().skip(k0_idx + 1) {
        if candidates.is_empty() {
            for s in stalls.iter_mut() {
                *s += 1;
            }
            continue;
        }
        let v = (idx + 1) as f64 * cfg.delta;
        for (bi, br) in branches.iter_mut().enumerate() {
            if stalls[bi] >= STALL_LIMIT {
                continue;
            }
            let tip = br.points.last().unwrap().0;
            let guard = adaptive_guard(&br.points, cfg.jump_guard);
            let best = candidates
                .iter()
                .min_by(|a, b| tip.distance(a).partial_cmp(&tip.distance(b)).unwrap());
            match best {
                Some(p) if tip.distance(p) <= guard => {
                    br.points.push((*p, v));
                    stalls[bi] = 0;
                }
                _ => stalls[bi] += 1,
            }
        }
        // spawn branches on unclaimed distant candidates
        for c in candidates {
            if branches.len() >= MAX_BRANCHES {
                break;
            }
            let free = branches
                .iter()
                .all(|br| br.points.last().unwrap().0.distance(c) > SPAWN_DISTANCE);
            if free {
                branches.push(NonsmoothCurve {
                    branch_id: branches.len() as u32,
                    pair_shift: 0,
                    points: vec![(*c, v)],
                });
                stalls.push(0);
            }
        }
    }

    // birth and terminal refinement: each branch generically begins and ends
    // where its winding becomes tangent to the level front (a local extremum
    // of the value along the curve, e.g. the downright point); bisect the
    // partial level on both sides to extend the polyline to those points
    for br in &mut branches {
        if let Some(ext) = extremum_refine(&front_at, br.points.last().unwrap(), cfg, true) {
            br.points.push(ext);
        }
        if br.points[0].1 > root_value + cfg.delta * 0.5 {
            if let Some(ext) = extremum_refine(&front_at, &br.points[0], cfg, false) {
                br.points.insert(0, ext);
            }
        }
    }

    branches.retain(|b| b.points.len() >= 2);
    Ok(branches)
}

/// Per-level move allowance: a multiple of the branch's recent spacing, with
/// the configured guard as birth allowance and hard cap.
fn adaptive_guard(points: &[(State, f64)], cap: f64) -> f64 {
    let n = points.len();
    if n < 4 {
        return cap;
    }
    let lo = n.saturating_sub(9);
    let mut acc = 0.0;
    let mut cnt = 0usize;
    for w in points[lo..].windows(2) {
        acc += w[0].0.distance(&w[1].0);
        cnt += 1;
    }
    let mean = acc / cnt as f64;
    (12.0 * mean).clamp(0.05, cap)
}

/// Bisect the last (or first) partial level of a branch toward the tangency
/// value where its winding closes, returning the limit point.
fn extremum_refine(
    front_at: &dyn Fn(f64) -> ValueFront,
    tip: &(State, f64),
    cfg: &CurveConfig,
    upward: bool,
) -> Option<(State, f64)> {
    let (tip_state, tip_v) = *tip;
    let guard = cfg.jump_guard;
    let (mut lo, mut hi) = if upward {
        (tip_v, tip_v + cfg.delta)
    } else {
        ((tip_v - cfg.delta).max(cfg.delta * 0.25), tip_v)
    };
    let mut best: Option<(State, f64)> = None;
    for _ in 0..25 {
        if hi - lo <= 1e-9 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let cands = shift_candidates(&front_at(mid));
        let near = cands
            .iter()
            .filter(|p| tip_state.distance(p) <= guard)
            .min_by(|a, b| tip_state.distance(a).partial_cmp(&tip_state.distance(b)).unwrap());
        match near {
            Some(p) => {
                best = Some((*p, mid));
                if upward {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            None => {
                if upward {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
    }
    best.filter(|(p, v)| {
        let far_enough = tip_state.distance(p) > 1e-9;
        let ordered = if upward { *v > tip_v } else { *v < tip_v };
        far_enough && ordered
    })
}

/// Closest-approach midpoint between a front and its +2pi copy; used to place
/// the curve root at the sheet tangency.
fn closest_approach(front: &ValueFront) -> Option<(State, f64)> {
    let segs = front.segments();
    if segs.is_empty() {
        return None;
    }
    let mut best: Option<(State, f64)> = None;
    // endpoint-to-segment distances against the shifted copy; quadratic in
    // the segment count but this runs once per sweep
    for (a, b) in &segs {
        for (c0, d0) in &segs {
            let c = c0.shifted(1);
            let d = d0.shifted(1);
            // only nearby pairs can be the closest approach
            if a.theta.max(b.theta) + 1.0 < c.theta.min(d.theta)
                || c.theta.max(d.theta) + 1.0 < a.theta.min(b.theta)
            {
                continue;
            }
            for p in [a, b] {
                let dist = point_seg_dist(p, &c, &d);
                if best.as_ref().map_or(true, |(_, bd)| dist < *bd) {
                    let t = proj_t(p, &c, &d);
                    let q = State::new(
                        c.theta + t * (d.theta - c.theta),
                        c.theta_dot + t * (d.theta_dot - c.theta_dot),
                    );
                    best = Some((
                        State::new(0.5 * (p.theta + q.theta), 0.5 * (p.theta_dot + q.theta_dot)),
                        dist,
                    ));
                }
            }
        }
    }
    best
}

fn proj_t(p: &State, a: &State, b: &State) -> f64 {
    let dx = b.theta - a.theta;
    let dy = b.theta_dot - a.theta_dot;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return 0.0;
    }
    (((p.theta - a.theta) * dx + (p.theta_dot - a.theta_dot) * dy) / len2).clamp(0.0, 1.0)
}

/// The computed branches plus their theta-translates, enough to cover the
/// base window and both neighbor sheets for clipping and masking.
pub fn curves_with_copies(curves: &[NonsmoothCurve]) -> Vec<NonsmoothCurve> {
    let mut out = Vec::with_capacity(curves.len() * 3);
    let mut id = 0u32;
    for shift in [-1i32, 0, 1] {
        for c in curves {
            out.push(c.translated(shift, id));
            id += 1;
        }
    }
    out
}

/// Bang-bang discontinuity locus for the saturated problem: the constant
/// u = +u_max trajectory through the E-point where torque balances gravity,
/// and its mirror for u = -u_max.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BangBangLocus {
    /// u = +u_max branch through (-asin(u_max/(m g l)), 0)
    pub upper: Vec<State>,
    /// u = -u_max branch through (+asin(u_max/(m g l)), 0)
    pub lower: Vec<State>,
}

impl BangBangLocus {
    pub fn e_point_upper(params: &PendulumParams, u_max: f64) -> State {
        State::new(-(u_max / params.gravity_torque()).asin(), 0.0)
    }

    pub fn e_point_lower(params: &PendulumParams, u_max: f64) -> State {
        State::new((u_max / params.gravity_torque()).asin(), 0.0)
    }
}

/// Trace the constant-torque trajectories through both E-points until they
/// leave the domain box.
pub fn bang_bang_locus(
    params: &PendulumParams,
    cp: &CostParams,
    domain: f64,
) -> Result<BangBangLocus, Error> {
    let Some(u_max) = cp.u_max else {
        return Err(Error::NotApplicable);
    };
    let upper = trace_constant_control(params, u_max, domain)?;
    let lower = trace_constant_control(params, -u_max, domain)?;
    Ok(BangBangLocus { upper, lower })
}

/// Polyline of the constant-control flow through the (nudged) equilibrium,
/// backward branch reversed and joined to the forward branch.
fn trace_constant_control(
    params: &PendulumParams,
    u: f64,
    domain: f64,
) -> Result<Vec<State>, Error> {
    // equilibrium of the constant-u flow: torque balances gravity
    let theta_e = (-u / params.gravity_torque()).asin();
    // nudge off the saddle toward the swing side so the separatrix pair
    // through the E-point is traced; the sign follows the problem's mirror
    // symmetry
    let nudge = if u > 0.0 { -1e-8 } else { 1e-8 };
    let seed = State::new(theta_e + nudge, 0.0);

    let forward = trace_direction(params, u, &seed, domain, 1.0)?;
    let backward = trace_direction(params, u, &seed, domain, -1.0)?;
    let mut pts: Vec<State> = backward.into_iter().rev().collect();
    pts.push(seed);
    pts.extend(forward);
    Ok(pts)
}

fn trace_direction(
    params: &PendulumParams,
    u: f64,
    seed: &State,
    domain: f64,
    dir: f64,
) -> Result<Vec<State>, Error> {
    let sys = move |y: &[f64; 2]| {
        let f = eval_dynamics(params, &State::new(y[0], y[1]), u);
        [dir * f.theta, dir * f.theta_dot]
    };
    // the constant-u flow has a stable focus where torque balances gravity on
    // the hanging side; the forward branch spirals into it instead of leaving
    // the box, so the trace also stops once it has wound within a radius
    // finer than the downstream mask band
    let theta_sink = -PI * u.signum() + (u / params.gravity_torque()).asin();
    let sink_radius = 5e-3;
    let t_max = 240.0;

    let solver = Dopri5 { atol: 1e-11, rtol: 1e-11, h_min: 1e-13, h_max: 0.5 };
    let mut y = [seed.theta, seed.theta_dot];
    let mut pts = Vec::new();
    let mut h = 1e-4f64;
    let mut t = 0.0f64;
    loop {
        if t >= t_max {
            return Ok(pts);
        }
        // keep the polyline dense in the state plane
        let f = sys(&y);
        let speed = f[0].hypot(f[1]).max(1e-9);
        h = h.min(0.02 / speed).max(solver.h_min);
        let step = solver.step(&sys, &y, h, Some(f));
        if !step.accepted {
            if step.h_next <= solver.h_min * 1.001 {
                return Err(Error::IntegrationFailure {
                    s: t,
                    reason: "locus step underflow".into(),
                    nodes: pts.len(),
                });
            }
            h = step.h_next;
            continue;
        }
        let exited = step.y1[0].abs() > domain || step.y1[1].abs() > domain;
        if exited {
            let th = bisect_event(
                &step,
                move |yy: &[f64; 2]| yy[0].abs().max(yy[1].abs()) - domain,
                1e-10,
            );
            let yc = step.dense(th);
            pts.push(State::new(yc[0], yc[1]));
            return Ok(pts);
        }
        t += step.h;
        y = step.y1;
        pts.push(State::new(y[0], y[1]));
        h = step.h_next;
        // wound into the sink (checked against the nearest periodic copy)
        let dth = (y[0] - theta_sink).rem_euclid(TWO_PI);
        let dth = dth.min(TWO_PI - dth);
        if dth.hypot(y[1]) < sink_radius {
            return Ok(pts);
        }
    }
}

/// Truncate each trajectory at its first crossing (in backward order) of any
/// clip polyline. The cut node interpolates time, costate, and value along
/// the trajectory segment.
pub fn clip_trajectories(
    trajectories: &[Trajectory],
    clip_polylines: &[Vec<State>],
    params: &PendulumParams,
    cp: &CostParams,
) -> Vec<Trajectory> {
    let mut grid = build_clip_grid(clip_polylines);
    trajectories.iter().map(|t| clip_one(t, &mut grid, params, cp)).collect()
}

/// Bucket grid over all clip polylines.
pub fn build_clip_grid(clip_polylines: &[Vec<State>]) -> SegGrid {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pl in clip_polylines {
        for p in pl {
            min_x = min_x.min(p.theta);
            max_x = max_x.max(p.theta);
            min_y = min_y.min(p.theta_dot);
            max_y = max_y.max(p.theta_dot);
        }
    }
    if !min_x.is_finite() {
        return SegGrid::new(1.0, (0.0, 0.0), (1.0, 1.0));
    }
    let mut grid = SegGrid::new(0.1, (min_x, min_y), (max_x, max_y));
    for (i, pl) in clip_polylines.iter().enumerate() {
        grid.insert_polyline(pl, i as u32);
    }
    grid
}

fn clip_one(
    traj: &Trajectory,
    grid: &mut SegGrid,
    params: &PendulumParams,
    cp: &CostParams,
) -> Trajectory {
    if grid.is_empty() || traj.nodes.len() < 2 {
        return traj.clone();
    }
    for i in 0..traj.nodes.len() - 1 {
        let a = &traj.nodes[i];
        let b = &traj.nodes[i + 1];
        if let Some((p, t, _)) = grid.first_hit(&a.state, &b.state) {
            let mut nodes: Vec<PmpNode> = traj.nodes[..=i].to_vec();
            let costate = Costate::new(
                a.costate.p1 + t * (b.costate.p1 - a.costate.p1),
                a.costate.p2 + t * (b.costate.p2 - a.costate.p2),
            );
            nodes.push(PmpNode {
                t: a.t + t * (b.t - a.t),
                state: p,
                costate,
                value: a.value + t * (b.value - a.value),
                control: crate::dynamics::optimal_control(params, cp, &costate),
            });
            return Trajectory {
                seed_phi: traj.seed_phi,
                nodes,
                termination: traj.termination,
            };
        }
    }
    traj.clone()
}
