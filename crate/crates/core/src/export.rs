//! Plain-text interchange files: CSV tables with 17-significant-digit
//! decimals (bit-exact f64 round trips), JSON reports, and the run manifest
//! with content hashes of every produced file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::certify::{CertificateReport, ResidualGrid};
use crate::config::RunConfig;
use crate::distill::{HistoryRow, Mlp};
use crate::dynamics::{Costate, State};
use crate::error::Error;
use crate::nonsmooth::{BangBangLocus, NonsmoothCurve};
use crate::pmp::{PmpNode, Termination, Trajectory};
use crate::valuefield::{RolloutResult, ValueSample};

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str) -> Result<f64, Error> {
    s.trim().parse::<f64>().map_err(|e| Error::Input(format!("bad float {s:?}: {e}")))
}

fn open_writer(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open_reader(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("missing input {}: {e}", path.display())))
}

// ---- trajectory dump ------------------------------------------------------

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "traj_id,seed_phi,t,theta,theta_dot,p1,p2,u,J,termination")?;
    for (id, t) in trajectories.iter().enumerate() {
        for n in &t.nodes {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                id,
                fmt_f64(t.seed_phi),
                fmt_f64(n.t),
                fmt_f64(n.state.theta),
                fmt_f64(n.state.theta_dot),
                fmt_f64(n.costate.p1),
                fmt_f64(n.costate.p2),
                fmt_f64(n.control),
                fmt_f64(n.value),
                t.termination.as_str()
            )?;
        }
    }
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, Error> {
    let r = open_reader(path)?;
    let mut out: Vec<Trajectory> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Input(format!("trajectory dump line {ln}: expected 10 fields")));
        }
        let id: usize =
            f[0].parse().map_err(|_| Error::Input(format!("bad traj id at line {ln}")))?;
        let termination = Termination::parse(f[9].trim())
            .ok_or_else(|| Error::Input(format!("bad termination {:?} at line {ln}", f[9])))?;
        let node = PmpNode {
            t: parse_f64(f[2])?,
            state: State::new(parse_f64(f[3])?, parse_f64(f[4])?),
            costate: Costate::new(parse_f64(f[5])?, parse_f64(f[6])?),
            control: parse_f64(f[7])?,
            value: parse_f64(f[8])?,
        };
        if id == out.len() {
            out.push(Trajectory { seed_phi: parse_f64(f[1])?, nodes: vec![node], termination });
        } else if id + 1 == out.len() {
            out[id].nodes.push(node);
            out[id].termination = termination;
        } else {
            return Err(Error::Input(format!("non-contiguous trajectory ids at line {ln}")));
        }
    }
    Ok(out)
}

// ---- curves and locus -----------------------------------------------------

pub fn write_curves(path: &Path, curves: &[NonsmoothCurve]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "branch_id,theta,theta_dot,J")?;
    for c in curves {
        for (s, v) in &c.points {
            writeln!(
                w,
                "{},{},{},{}",
                c.branch_id,
                fmt_f64(s.theta),
                fmt_f64(s.theta_dot),
                fmt_f64(*v)
            )?;
        }
    }
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<NonsmoothCurve>, Error> {
    let r = open_reader(path)?;
    let mut out: Vec<NonsmoothCurve> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Input(format!("curve file line {ln}: expected 4 fields")));
        }
        let id: u32 = f[0].parse().map_err(|_| Error::Input(format!("bad branch id line {ln}")))?;
        let pt = (State::new(parse_f64(f[1])?, parse_f64(f[2])?), parse_f64(f[3])?);
        match out.iter_mut().find(|c| c.branch_id == id) {
            Some(c) => c.points.push(pt),
            None => out.push(NonsmoothCurve { branch_id: id, pair_shift: 0, points: vec![pt] }),
        }
    }
    Ok(out)
}

pub fn write_bangbang(path: &Path, locus: &BangBangLocus) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "side,theta,theta_dot")?;
    for p in &locus.upper {
        writeln!(w, "upper,{},{}", fmt_f64(p.theta), fmt_f64(p.theta_dot))?;
    }
    for p in &locus.lower {
        writeln!(w, "lower,{},{}", fmt_f64(p.theta), fmt_f64(p.theta_dot))?;
    }
    Ok(())
}

pub fn read_bangbang(path: &Path) -> Result<BangBangLocus, Error> {
    let r = open_reader(path)?;
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Input(format!("locus file line {ln}: expected 3 fields")));
        }
        let p = State::new(parse_f64(f[1])?, parse_f64(f[2])?);
        match f[0] {
            "upper" => upper.push(p),
            "lower" => lower.push(p),
            other => return Err(Error::Input(format!("bad locus side {other:?} line {ln}"))),
        }
    }
    Ok(BangBangLocus { upper, lower })
}

// ---- field tables ---------------------------------------------------------

pub fn write_field_vertices(path: &Path, verts: &[ValueSample]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "theta,theta_dot,J,p1,p2")?;
    for v in verts {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(v.state.theta),
            fmt_f64(v.state.theta_dot),
            fmt_f64(v.value),
            fmt_f64(v.costate.p1),
            fmt_f64(v.costate.p2)
        )?;
    }
    Ok(())
}

pub fn read_field_vertices(path: &Path) -> Result<Vec<ValueSample>, Error> {
    let r = open_reader(path)?;
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Input(format!("vertex table line {ln}: expected 5 fields")));
        }
        out.push(ValueSample {
            state: State::new(parse_f64(f[0])?, parse_f64(f[1])?),
            value: parse_f64(f[2])?,
            costate: Costate::new(parse_f64(f[3])?, parse_f64(f[4])?),
        });
    }
    Ok(out)
}

pub fn write_field_triangles(path: &Path, tris: &[[u32; 3]]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "v0,v1,v2")?;
    for t in tris {
        writeln!(w, "{},{},{}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_field_triangles(path: &Path) -> Result<Vec<[u32; 3]>, Error> {
    let r = open_reader(path)?;
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Input(format!("triangle table line {ln}: expected 3 fields")));
        }
        let parse = |s: &str| -> Result<u32, Error> {
            s.trim().parse().map_err(|_| Error::Input(format!("bad index line {ln}")))
        };
        out.push([parse(f[0])?, parse(f[1])?, parse(f[2])?]);
    }
    Ok(out)
}

// ---- lattice exports ------------------------------------------------------

pub fn write_grid_eval(path: &Path, rows: &[(State, Option<f64>)]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "theta,theta_dot,J")?;
    for (s, v) in rows {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(s.theta),
            fmt_f64(s.theta_dot),
            v.map_or_else(|| "nan".into(), fmt_f64)
        )?;
    }
    Ok(())
}

pub fn write_residuals(path: &Path, grid: &ResidualGrid) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "theta,theta_dot,log10_abs_residual,masked")?;
    for i in 0..grid.residuals.len() {
        let s = grid.state_at(i);
        let r = grid.residuals[i];
        let log = if r.is_finite() && r != 0.0 { fmt_f64(r.abs().log10()) } else { "nan".into() };
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f64(s.theta),
            fmt_f64(s.theta_dot),
            log,
            u8::from(grid.masked[i])
        )?;
    }
    Ok(())
}

pub fn write_certificate(path: &Path, report: &CertificateReport) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Input(format!("certificate serialization: {e}")))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

// ---- rollouts and comparisons ---------------------------------------------

pub fn write_rollout_trace(path: &Path, r: &RolloutResult) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "t,theta,theta_dot,u,running_cost")?;
    for s in &r.steps {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.state.theta),
            fmt_f64(s.state.theta_dot),
            fmt_f64(s.control),
            fmt_f64(s.running_cost)
        )?;
    }
    Ok(())
}

pub fn write_rollout_summary(path: &Path, rows: &[RolloutResult]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "theta0,theta_dot0,cost,time_to_ellipse,settled,flagged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.x0.theta),
            fmt_f64(r.x0.theta_dot),
            fmt_f64(r.cost),
            r.time_to_ellipse.map_or_else(|| "nan".into(), fmt_f64),
            u8::from(r.settled),
            u8::from(r.coverage_lost)
        )?;
    }
    Ok(())
}

pub fn write_comparison(
    path: &Path,
    rows: &[crate::baselines::CostComparison],
) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "theta0,theta_dot0,J_opt,J_base,ratio,flag")?;
    for r in rows {
        let flag = if r.baseline_truncated {
            "baseline-truncated"
        } else if r.optimal_flagged {
            "optimal-flagged"
        } else {
            "ok"
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.x0.theta),
            fmt_f64(r.x0.theta_dot),
            fmt_f64(r.cost_optimal),
            fmt_f64(r.cost_baseline),
            fmt_f64(r.ratio),
            flag
        )?;
    }
    Ok(())
}

// ---- network checkpoint ----------------------------------------------------

pub fn write_checkpoint(path: &Path, net: &Mlp) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "mlp 3 {} {} 1", net.hidden, net.hidden)?;
    let mut dump = |name: &str, vals: &mut dyn Iterator<Item = f64>| -> Result<(), Error> {
        write!(w, "{name}")?;
        for v in vals {
            write!(w, " {}", fmt_f64(v))?;
        }
        writeln!(w)?;
        Ok(())
    };
    dump("w1", &mut net.w1.iter().copied())?;
    dump("b1", &mut net.b1.iter().copied())?;
    dump("w2", &mut net.w2.iter().copied())?;
    dump("b2", &mut net.b2.iter().copied())?;
    dump("w3", &mut net.w3.iter().copied())?;
    dump("b3", &mut std::iter::once(net.b3))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Mlp, Error> {
    let r = open_reader(path)?;
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("empty checkpoint".into()))?
        .map_err(Error::Io)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "mlp" || parts[1] != "3" || parts[4] != "1" {
        return Err(Error::Input(format!("bad checkpoint header {header:?}")));
    }
    let hidden: usize =
        parts[2].parse().map_err(|_| Error::Input("bad hidden width".into()))?;
    let mut net = Mlp::new(hidden, 0);
    for line in lines {
        let line = line.map_err(Error::Io)?;
        let mut it = line.split_whitespace();
        let Some(name) = it.next() else { continue };
        let vals: Vec<f64> = it.map(parse_f64).collect::<Result<_, _>>()?;
        match name {
            "w1" => net.w1 = arr2(&vals, hidden, 3)?,
            "b1" => net.b1 = arr1(&vals, hidden)?,
            "w2" => net.w2 = arr2(&vals, hidden, hidden)?,
            "b2" => net.b2 = arr1(&vals, hidden)?,
            "w3" => net.w3 = arr1(&vals, hidden)?,
            "b3" => net.b3 = *vals.first().ok_or_else(|| Error::Input("empty b3".into()))?,
            other => return Err(Error::Input(format!("unknown checkpoint row {other:?}"))),
        }
    }
    Ok(net)
}

fn arr2(vals: &[f64], r: usize, c: usize) -> Result<ndarray::Array2<f64>, Error> {
    ndarray::Array2::from_shape_vec((r, c), vals.to_vec())
        .map_err(|e| Error::Input(format!("checkpoint shape: {e}")))
}

fn arr1(vals: &[f64], n: usize) -> Result<ndarray::Array1<f64>, Error> {
    if vals.len() != n {
        return Err(Error::Input(format!("checkpoint row length {} != {n}", vals.len())));
    }
    Ok(ndarray::Array1::from_vec(vals.to_vec()))
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<(), Error> {
    let mut w = open_writer(path)?;
    writeln!(w, "iter,l_total,l_lqr,l_J,l_hjb,l_smooth,l_pmp")?;
    for h in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            h.iter,
            fmt_f64(h.loss.total),
            fmt_f64(h.loss.lqr),
            fmt_f64(h.loss.j),
            fmt_f64(h.loss.hjb),
            fmt_f64(h.loss.smooth),
            fmt_f64(h.loss.pmp)
        )?;
    }
    Ok(())
}

// ---- run manifest -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility record: resolved configuration, seed, stage timings, and
/// the hash inventory of every file the command wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub timings_s: Vec<(String, f64)>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> RunManifest {
        RunManifest {
            tool: "swingup".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            timings_s: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_timing(&mut self, stage: &str, seconds: f64) {
        self.timings_s.push((stage.into(), seconds));
    }

    /// Hash a produced file into the inventory; `base` makes the stored path
    /// relative.
    pub fn record_output(&mut self, base: &Path, path: &Path) -> Result<(), Error> {
        let bytes = std::fs::read(path)?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.outputs.push(OutputRecord {
            path: rel.to_string_lossy().into_owned(),
            sha256: format!("{:x}", h.finalize()),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut w = open_writer(path)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("manifest serialization: {e}")))?;
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RunManifest, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("missing manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("manifest parse: {e}")))
    }

    /// Output hashes keyed by relative path, for determinism comparisons.
    pub fn hash_map(&self) -> std::collections::BTreeMap<String, String> {
        self.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect()
    }
}

/// Standard file names inside a run directory.
pub mod names {
    pub const TRAJECTORIES: &str = "trajectories.csv";
    pub const CURVES: &str = "curves.csv";
    pub const BANGBANG: &str = "bangbang.csv";
    pub const FIELD_VERTICES: &str = "field_vertices.csv";
    pub const FIELD_TRIANGLES: &str = "field_triangles.csv";
    pub const GRID_EVAL: &str = "grid_eval.csv";
    pub const RESIDUALS: &str = "residuals.csv";
    pub const CERTIFICATE: &str = "certificate.json";
    pub const MANIFEST_SOLVE: &str = "manifest_solve.json";
    pub const MANIFEST_CERTIFY: &str = "manifest_certify.json";
    pub const MANIFEST_ROLLOUT: &str = "manifest_rollout.json";
    pub const MANIFEST_COMPARE: &str = "manifest_compare.json";
    pub const MANIFEST_DISTILL: &str = "manifest_distill.json";
    pub const ROLLOUT_TRACE: &str = "rollout.csv";
    pub const ROLLOUT_SUMMARY: &str = "rollout_summary.csv";
    pub const COMPARISON: &str = "comparison.csv";
    pub const CHECKPOINT: &str = "checkpoint.txt";
    pub const HISTORY: &str = "history.csv";
    pub const DISTILL_SUMMARY: &str = "distill_summary.json";
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmp::Termination;

    #[test]
    fn f64_text_roundtrip_is_exact() {
        for &x in &[std::f64::consts::PI, 1.0 / 3.0, 2e-4, -1.23456789e-13, 9.8] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn trajectory_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Trajectory {
            seed_phi: 1.234,
            nodes: vec![
                PmpNode {
                    t: 0.0,
                    state: State::new(0.01, -0.02),
                    costate: Costate::new(0.3, 0.4),
                    value: 2e-4,
                    control: -0.2,
                },
                PmpNode {
                    t: 0.5,
                    state: State::new(0.3, -0.7),
                    costate: Costate::new(1.3, 2.4),
                    value: 0.9,
                    control: -1.2,
                },
            ],
            termination: Termination::ValueCap,
        };
        write_trajectories(&path, &[t.clone(), t.clone()]).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].nodes.len(), 2);
        assert_eq!(back[0].termination, Termination::ValueCap);
        assert_eq!(back[1].nodes[1].state.theta, 0.3);
        assert_eq!(back[1].nodes[1].costate.p2, 2.4);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        let net = Mlp::new(8, 42);
        write_checkpoint(&path, &net).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(net.w1, back.w1);
        assert_eq!(net.w2, back.w2);
        assert_eq!(net.w3, back.w3);
        assert_eq!(net.b3, back.b3);
    }

    #[test]
    fn manifest_roundtrip_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.csv");
        std::fs::write(&f, "hello").unwrap();
        let cfg = RunConfig::default();
        let mut m = RunManifest::new("solve", &cfg);
        m.record_timing("stage", 1.5);
        m.record_output(dir.path(), &f).unwrap();
        let mp = dir.path().join("m.json");
        m.write(&mp).unwrap();
        let back = RunManifest::read(&mp).unwrap();
        assert_eq!(back.outputs.len(), 1);
        assert_eq!(back.outputs[0].path, "x.csv");
        assert_eq!(
            back.outputs[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(m.hash_map(), back.hash_map());
    }
}
