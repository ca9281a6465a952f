//! End-to-end stages behind the command-line surface: solve (Riccati,
//! backward sampling, curve extraction, clipping, field build), certify,
//! rollout, compare, and distill, each writing its interchange files and a
//! manifest with content hashes.

use std::path::Path;
use std::time::Instant;

use crate::baselines::{compare_costs, CostComparison, EnergyShapingGains};
use crate::certify::{
    check_nonsmoothness, check_theorem2_conditions, estimate_tx_rollout, hjb_residual,
    CertificateReport, ResidualGrid, TxEstimate,
};
use crate::config::RunConfig;
use crate::distill::{
    evaluate_controller_grid, train, DistillData, GridEval, HistoryRow, Mlp, TrainConfig,
    TrainMode,
};
use crate::dynamics::State;
use crate::error::Error;
use crate::export::{self, names, RunManifest};
use crate::lqr::{solve_for, verify_roa, EllipseBoundary, RiccatiSolution, RoaReport};
use crate::nonsmooth::{
    bang_bang_locus, clip_trajectories, compute_nonsmooth_curve_cfg, curves_with_copies,
    BangBangLocus, NonsmoothCurve,
};
use crate::pmp::{adaptive_sample, Trajectory};
use crate::valuefield::{RolloutResult, ValueField};

/// Everything the solve stage produces, kept in memory for the downstream
/// commands and tests.
pub struct SolveOutput {
    pub riccati: RiccatiSolution,
    pub boundary: EllipseBoundary,
    pub roa: RoaReport,
    pub raw: Vec<Trajectory>,
    pub curves: Vec<NonsmoothCurve>,
    pub locus: Option<BangBangLocus>,
    pub clipped: Vec<Trajectory>,
    pub field: ValueField,
}

/// Polylines used for clipping: curve branches with their theta-translates,
/// plus the bang-bang locus copies when requested.
fn clip_polylines(
    curves: &[NonsmoothCurve],
    locus: Option<&BangBangLocus>,
    include_locus: bool,
) -> Vec<Vec<State>> {
    let mut out: Vec<Vec<State>> =
        curves_with_copies(curves).iter().map(|c| c.states()).collect();
    if include_locus {
        if let Some(l) = locus {
            for shift in [-1i32, 0, 1] {
                out.push(l.upper.iter().map(|p| p.shifted(shift)).collect());
                out.push(l.lower.iter().map(|p| p.shifted(shift)).collect());
            }
        }
    }
    out
}

/// Polylines that define the ambiguity/mask band: always every curve and the
/// locus, regardless of the clipping choice.
fn mask_polylines(curves: &[NonsmoothCurve], locus: Option<&BangBangLocus>) -> Vec<Vec<State>> {
    clip_polylines(curves, locus, true)
}

/// Run the full solve pipeline in memory.
pub fn solve(cfg: &RunConfig) -> Result<SolveOutput, Error> {
    solve_with_timings(cfg, &mut |_, _| {})
}

pub fn solve_with_timings(
    cfg: &RunConfig,
    record: &mut dyn FnMut(&str, f64),
) -> Result<SolveOutput, Error> {
    cfg.validate()?;
    let params = cfg.pendulum();
    let cost = cfg.cost();

    let t0 = Instant::now();
    let riccati = solve_for(&params, &cost).map_err(|e| e.in_stage("lqr"))?;
    let boundary = EllipseBoundary::new(cfg.eps, riccati).map_err(|e| e.in_stage("lqr"))?;
    let roa = verify_roa(&params, &cost, &riccati, &boundary);
    record("lqr", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let raw = adaptive_sample(&params, &cost, &boundary, cfg.ntraj, cfg.vc, &cfg.caps())
        .map_err(|e| e.in_stage("pmp"))?;
    record("pmp", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let curves = compute_nonsmooth_curve_cfg(&raw, &cfg.curve_config(), &params, &cost)
        .map_err(|e| e.in_stage("nonsmooth"))?;
    let locus = match cost.u_max {
        Some(_) => {
            Some(bang_bang_locus(&params, &cost, cfg.domain).map_err(|e| e.in_stage("nonsmooth"))?)
        }
        None => None,
    };
    let clip = clip_polylines(&curves, locus.as_ref(), cfg.clip_with_locus);
    let clipped = clip_trajectories(&raw, &clip, &params, &cost);
    record("nonsmooth", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let mask = mask_polylines(&curves, locus.as_ref());
    let field = ValueField::build(
        &clipped,
        &riccati,
        cfg.eps,
        &params,
        &cost,
        &mask,
        &cfg.field_config(),
    )
    .map_err(|e| e.in_stage("valuefield"))?;
    record("valuefield", t0.elapsed().as_secs_f64());

    Ok(SolveOutput { riccati, boundary, roa, raw, curves, locus, clipped, field })
}

/// Solve and write the interchange files plus the solve manifest.
pub fn solve_to_dir(cfg: &RunConfig, out: &Path) -> Result<(SolveOutput, RunManifest), Error> {
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new("solve", cfg);
    let mut timings: Vec<(String, f64)> = Vec::new();
    let solved = solve_with_timings(cfg, &mut |name, secs| {
        timings.push((name.to_string(), secs));
    })?;
    for (name, secs) in timings {
        manifest.record_timing(&name, secs);
    }

    let t0 = Instant::now();
    export::write_trajectories(&out.join(names::TRAJECTORIES), &solved.raw)?;
    export::write_curves(&out.join(names::CURVES), &solved.curves)?;
    if let Some(l) = &solved.locus {
        export::write_bangbang(&out.join(names::BANGBANG), l)?;
    }
    export::write_field_vertices(&out.join(names::FIELD_VERTICES), &solved.field.verts)?;
    export::write_field_triangles(&out.join(names::FIELD_TRIANGLES), &solved.field.tris)?;
    let lattice = solved.field.grid_eval(
        (-cfg.grid_window, -cfg.grid_window),
        (cfg.grid_window, cfg.grid_window),
        101,
    );
    export::write_grid_eval(&out.join(names::GRID_EVAL), &lattice)?;
    manifest.record_timing("export", t0.elapsed().as_secs_f64());

    for name in [
        names::TRAJECTORIES,
        names::CURVES,
        names::FIELD_VERTICES,
        names::FIELD_TRIANGLES,
        names::GRID_EVAL,
    ] {
        manifest.record_output(out, &out.join(name))?;
    }
    if solved.locus.is_some() {
        manifest.record_output(out, &out.join(names::BANGBANG))?;
    }
    manifest.write(&out.join(names::MANIFEST_SOLVE))?;
    Ok((solved, manifest))
}

/// Reload a field (and its curves) from a solve directory.
pub fn load_field(dir: &Path) -> Result<(ValueField, Vec<NonsmoothCurve>, RunConfig), Error> {
    let manifest = RunManifest::read(&dir.join(names::MANIFEST_SOLVE)).map_err(|_| {
        Error::Input(format!(
            "{} does not look like a solve directory (expected {}, {}, {}, {})",
            dir.display(),
            names::MANIFEST_SOLVE,
            names::FIELD_VERTICES,
            names::FIELD_TRIANGLES,
            names::CURVES,
        ))
    })?;
    let cfg = manifest.config;
    let verts = export::read_field_vertices(&dir.join(names::FIELD_VERTICES))?;
    let tris = export::read_field_triangles(&dir.join(names::FIELD_TRIANGLES))?;
    let curves = export::read_curves(&dir.join(names::CURVES))?;
    let locus = if dir.join(names::BANGBANG).exists() {
        Some(export::read_bangbang(&dir.join(names::BANGBANG))?)
    } else {
        None
    };
    let params = cfg.pendulum();
    let cost = cfg.cost();
    let riccati = solve_for(&params, &cost)?;
    let mask = mask_polylines(&curves, locus.as_ref());
    let field = ValueField::from_tables(
        verts,
        tris,
        &riccati,
        cfg.eps,
        &params,
        &cost,
        &mask,
        &cfg.field_config(),
    )?;
    Ok((field, curves, cfg))
}

/// Probe grid over the window, `n` per axis.
pub fn probe_grid(n: usize, half_width: f64) -> Vec<State> {
    (0..n)
        .flat_map(|iy| {
            (0..n).map(move |ix| {
                State::new(
                    -half_width + 2.0 * half_width * ix as f64 / (n - 1) as f64,
                    -half_width + 2.0 * half_width * iy as f64 / (n - 1) as f64,
                )
            })
        })
        .collect()
}

/// Certification products of a run.
pub struct CertifyOutput {
    pub residuals: ResidualGrid,
    pub report: CertificateReport,
    pub tx: TxEstimate,
}

/// Run the certification stage against an in-memory field.
pub fn certify(
    field: &ValueField,
    curves: &[NonsmoothCurve],
    cfg: &RunConfig,
    footnote_tx: Option<f64>,
) -> CertifyOutput {
    let w = cfg.grid_window;
    let residuals = hjb_residual(field, (-w, -w), (w, w), cfg.grid_n);
    let stats = residuals.off_mask_stats();
    let probes = probe_grid(10, 8.0);
    let tx = estimate_tx_rollout(field, &probes, cfg.horizon, cfg.dt);
    let theorem2 = check_theorem2_conditions(
        field,
        &curves_with_copies(curves),
        &residuals,
        cfg.delta,
        &probes,
        cfg.horizon,
        cfg.dt,
    );
    let nonsmooth = check_nonsmoothness(field, 0.05).ok();
    let report =
        CertificateReport::assemble(&stats, cfg.eps, &tx, footnote_tx, theorem2, nonsmooth);
    CertifyOutput { residuals, report, tx }
}

/// Certify a solve directory and write residuals, certificate, and manifest.
pub fn certify_dir(dir: &Path, grid_n: Option<usize>) -> Result<CertifyOutput, Error> {
    let (field, curves, mut cfg) = load_field(dir)?;
    if let Some(n) = grid_n {
        cfg.grid_n = n;
    }
    let mut manifest = RunManifest::new("certify", &cfg);
    let t0 = Instant::now();
    let out = certify(&field, &curves, &cfg, None);
    manifest.record_timing("certify", t0.elapsed().as_secs_f64());
    export::write_residuals(&dir.join(names::RESIDUALS), &out.residuals)?;
    export::write_certificate(&dir.join(names::CERTIFICATE), &out.report)?;
    manifest.record_output(dir, &dir.join(names::RESIDUALS))?;
    manifest.record_output(dir, &dir.join(names::CERTIFICATE))?;
    manifest.write(&dir.join(names::MANIFEST_CERTIFY))?;
    Ok(out)
}

/// Roll out the field controller from one start, writing the per-step trace.
pub fn rollout_single(dir: &Path, x0: State, horizon: f64, dt: f64) -> Result<RolloutResult, Error> {
    let (field, _, cfg) = load_field(dir)?;
    if field.query_value(&x0).is_err() {
        return Err(Error::OutOfCoverage { theta: x0.theta, theta_dot: x0.theta_dot });
    }
    let r = field.rollout_trace(&x0, horizon, dt);
    let mut manifest = RunManifest::new("rollout", &cfg);
    export::write_rollout_trace(&dir.join(names::ROLLOUT_TRACE), &r)?;
    manifest.record_output(dir, &dir.join(names::ROLLOUT_TRACE))?;
    manifest.write(&dir.join(names::MANIFEST_ROLLOUT))?;
    Ok(r)
}

/// Roll out the field controller from an n-by-n grid, writing the summary.
pub fn rollout_grid(
    dir: &Path,
    n: usize,
    horizon: f64,
    dt: f64,
) -> Result<Vec<RolloutResult>, Error> {
    use rayon::prelude::*;
    let (field, _, cfg) = load_field(dir)?;
    let grid = probe_grid(n, 8.0);
    let rows: Vec<RolloutResult> =
        grid.par_iter().map(|x0| field.rollout(x0, horizon, dt)).collect();
    let mut manifest = RunManifest::new("rollout", &cfg);
    export::write_rollout_summary(&dir.join(names::ROLLOUT_SUMMARY), &rows)?;
    manifest.record_output(dir, &dir.join(names::ROLLOUT_SUMMARY))?;
    manifest.write(&dir.join(names::MANIFEST_ROLLOUT))?;
    Ok(rows)
}

/// Compare the field controller against the energy-shaping baseline on an
/// n-by-n grid.
pub fn compare_dir(dir: &Path, n: usize, horizon: f64) -> Result<Vec<CostComparison>, Error> {
    let (field, _, cfg) = load_field(dir)?;
    let gains = EnergyShapingGains::default();
    let probes = probe_grid(n, 8.0);
    let rows = compare_costs(&field, &gains, &probes, horizon, cfg.dt);
    let mut manifest = RunManifest::new("compare", &cfg);
    export::write_comparison(&dir.join(names::COMPARISON), &rows)?;
    manifest.record_output(dir, &dir.join(names::COMPARISON))?;
    manifest.write(&dir.join(names::MANIFEST_COMPARE))?;
    Ok(rows)
}

/// Distillation products.
pub struct DistillOutput {
    pub net: Mlp,
    pub history: Vec<HistoryRow>,
    pub grid: GridEval,
}

/// Train a network from a solve directory (supervised: field samples; weak:
/// raw trajectory dump), then evaluate the induced controller on the 30x30
/// grid and write checkpoint, history, and summary.
pub fn distill_dir(
    dir: &Path,
    mode: TrainMode,
    samples: usize,
    train_cfg_base: Option<TrainConfig>,
) -> Result<DistillOutput, Error> {
    let manifest_path = dir.join(names::MANIFEST_SOLVE);
    let solve_manifest = RunManifest::read(&manifest_path)?;
    let cfg = solve_manifest.config.clone();
    let params = cfg.pendulum();
    let cost = cfg.cost();
    let riccati = solve_for(&params, &cost)?;

    let mut tc = train_cfg_base.unwrap_or_default();
    tc.mode = mode;
    match mode {
        TrainMode::Supervised => tc.n_j = samples,
        TrainMode::Weak => tc.n_pmp = samples,
    }
    tc.seed = cfg.seed;

    let data = match mode {
        TrainMode::Supervised => {
            let (field, _, _) = load_field(dir)?;
            DistillData::gather(Some(&field), None, &riccati, cfg.eps, &tc)
        }
        TrainMode::Weak => {
            let raw = export::read_trajectories(&dir.join(names::TRAJECTORIES))?;
            DistillData::gather(None, Some(&raw), &riccati, cfg.eps, &tc)
        }
    };

    let net0 = Mlp::new(tc.hidden, tc.seed ^ 0x11ee);
    let (net, history) = train(net0, &params, &cost, &riccati, &data, &tc)?;

    let grid = evaluate_controller_grid(
        &net,
        &params,
        &cost,
        &riccati,
        cfg.eps,
        &probe_grid(30, 8.0),
        cfg.horizon,
        cfg.dt,
    );

    let mut manifest = RunManifest::new("distill", &cfg);
    export::write_checkpoint(&dir.join(names::CHECKPOINT), &net)?;
    export::write_history(&dir.join(names::HISTORY), &history)?;
    let summary = serde_json::json!({
        "mode": match mode { TrainMode::Supervised => "supervised", TrainMode::Weak => "weak" },
        "samples": samples,
        "iterations": tc.iters,
        "grid_total": grid.total,
        "grid_reached": grid.reached,
        "horizon_s": grid.horizon,
    });
    std::fs::write(
        dir.join(names::DISTILL_SUMMARY),
        serde_json::to_string_pretty(&summary).unwrap() + "\n",
    )?;
    for name in [names::CHECKPOINT, names::HISTORY, names::DISTILL_SUMMARY] {
        manifest.record_output(dir, &dir.join(name))?;
    }
    manifest.write(&dir.join(names::MANIFEST_DISTILL))?;
    Ok(DistillOutput { net, history, grid })
}
