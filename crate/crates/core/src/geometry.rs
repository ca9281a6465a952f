//! Plane geometry helpers for the front-intersection and clipping stages:
//! tolerance-based segment intersection, point/segment distance, a uniform
//! bucket grid over segments, and a winding-number containment test.
//!
//! No exact arithmetic here; desk-scale tolerances are enough for fronts
//! whose vertices come from interpolated trajectory samples.

use crate::dynamics::State;

/// Intersection of segments a1-a2 and b1-b2, with the parameters along each.
/// Near-parallel pairs (|denominator| below 1e-14 of the scale) report none.
pub fn seg_intersect(a1: &State, a2: &State, b1: &State, b2: &State) -> Option<(State, f64, f64)> {
    let dax = a2.theta - a1.theta;
    let day = a2.theta_dot - a1.theta_dot;
    let dbx = b2.theta - b1.theta;
    let dby = b2.theta_dot - b1.theta_dot;
    let den = dax * dby - day * dbx;
    let scale = (dax.abs() + day.abs()) * (dbx.abs() + dby.abs());
    if den.abs() <= 1e-14 * scale.max(1e-300) {
        return None;
    }
    let ex = b1.theta - a1.theta;
    let ey = b1.theta_dot - a1.theta_dot;
    let t = (ex * dby - ey * dbx) / den;
    let u = (ex * day - ey * dax) / den;
    let tol = 1e-12;
    if !(-tol..=1.0 + tol).contains(&t) || !(-tol..=1.0 + tol).contains(&u) {
        return None;
    }
    let p = State::new(a1.theta + t * dax, a1.theta_dot + t * day);
    Some((p, t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
}

/// Distance from a point to a segment.
pub fn point_seg_dist(p: &State, a: &State, b: &State) -> f64 {
    let dx = b.theta - a.theta;
    let dy = b.theta_dot - a.theta_dot;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.theta - a.theta) * dx + (p.theta_dot - a.theta_dot) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&State::new(a.theta + t * dx, a.theta_dot + t * dy))
}

/// Uniform bucket grid over line segments with an integer payload.
pub struct SegGrid {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
    segs: Vec<(State, State, u32)>,
}

impl SegGrid {
    pub fn new(cell: f64, min: (f64, f64), max: (f64, f64)) -> Self {
        let nx = (((max.0 - min.0) / cell).ceil() as usize + 2).max(1);
        let ny = (((max.1 - min.1) / cell).ceil() as usize + 2).max(1);
        Self {
            cell,
            x0: min.0 - cell,
            y0: min.1 - cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
            segs: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segs.len()
    }

    fn clamp_ix(&self, x: f64) -> usize {
        (((x - self.x0) / self.cell).floor().max(0.0) as usize).min(self.nx - 1)
    }

    fn clamp_iy(&self, y: f64) -> usize {
        (((y - self.y0) / self.cell).floor().max(0.0) as usize).min(self.ny - 1)
    }

    pub fn insert(&mut self, a: State, b: State, id: u32) {
        let idx = self.segs.len() as u32;
        self.segs.push((a, b, id));
        let (ix0, ix1) = minmax(self.clamp_ix(a.theta), self.clamp_ix(b.theta));
        let (iy0, iy1) = minmax(self.clamp_iy(a.theta_dot), self.clamp_iy(b.theta_dot));
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                self.buckets[iy * self.nx + ix].push(idx);
            }
        }
    }

    pub fn insert_polyline(&mut self, pts: &[State], id: u32) {
        for w in pts.windows(2) {
            self.insert(w[0], w[1], id);
        }
    }

    /// Visit candidate segments whose buckets overlap the query box. A
    /// segment spanning several buckets is visited once per bucket; callers
    /// that care deduplicate on the returned index.
    pub fn for_each_in_box(
        &self,
        min: (f64, f64),
        max: (f64, f64),
        mut f: impl FnMut(usize, &(State, State, u32)),
    ) {
        let (ix0, ix1) = (self.clamp_ix(min.0), self.clamp_ix(max.0));
        let (iy0, iy1) = (self.clamp_iy(min.1), self.clamp_iy(max.1));
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                for &si in &self.buckets[iy * self.nx + ix] {
                    f(si as usize, &self.segs[si as usize]);
                }
            }
        }
    }

    /// Minimum distance from `p` to any stored segment, if one lies within
    /// `radius`.
    pub fn distance_within(&self, p: &State, radius: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        self.for_each_in_box(
            (p.theta - radius, p.theta_dot - radius),
            (p.theta + radius, p.theta_dot + radius),
            |_, (a, b, _)| {
                let d = point_seg_dist(p, a, b);
                if d < best {
                    best = d;
                }
            },
        );
        (best <= radius).then_some(best)
    }

    /// First intersection of the directed segment a-b with the stored
    /// segments, by parameter along a-b. Returns (point, t, payload id).
    pub fn first_hit(&self, a: &State, b: &State) -> Option<(State, f64, u32)> {
        let min = (a.theta.min(b.theta), a.theta_dot.min(b.theta_dot));
        let max = (a.theta.max(b.theta), a.theta_dot.max(b.theta_dot));
        let mut best: Option<(State, f64, u32)> = None;
        self.for_each_in_box(min, max, |_, (c, d, id)| {
            if let Some((p, t, _)) = seg_intersect(a, b, c, d) {
                if best.as_ref().map_or(true, |(_, bt, _)| t < *bt) {
                    best = Some((p, t, *id));
                }
            }
        });
        best
    }
}

fn minmax(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Winding-number containment test against a closed polygon.
pub fn point_in_polygon(p: &State, poly: &[State]) -> bool {
    let mut winding = 0i32;
    let n = poly.len();
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        if a.theta_dot <= p.theta_dot {
            if b.theta_dot > p.theta_dot && cross(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b.theta_dot <= p.theta_dot && cross(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn cross(a: &State, b: &State, p: &State) -> f64 {
    (b.theta - a.theta) * (p.theta_dot - a.theta_dot)
        - (p.theta - a.theta) * (b.theta_dot - a.theta_dot)
}
