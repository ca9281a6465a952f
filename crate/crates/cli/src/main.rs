//! Command-line surface for the swing-up solver: solve, certify, rollout,
//! compare, distill. Every command writes a manifest with content hashes of
//! its outputs so runs can be reproduced and diffed.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use swingup::config::RunConfig;
use swingup::distill::{TrainConfig, TrainMode};
use swingup::dynamics::State;
use swingup::error::Error;
use swingup::pipeline;

const EXIT_INPUT: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_CERTIFICATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "swingup",
    version,
    about = "Optimal value function and controller for pendulum swing-up"
)]
struct Cli {
    /// Worker thread count (overrides SWINGUP_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SolveArgs {
    /// TOML config file; flags below win over file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// number of backward trajectories
    #[arg(long)]
    ntraj: Option<usize>,
    /// torque bound, or "none" for unconstrained
    #[arg(long)]
    umax: Option<String>,
    /// terminal ellipse level
    #[arg(long)]
    eps: Option<f64>,
    /// level-set comparison value for the seeding metric
    #[arg(long)]
    vc: Option<f64>,
    /// discount rate (0 = undiscounted)
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline and write the interchange files
    Solve(SolveArgs),
    /// Compute HJB residuals and the suboptimality certificate for a solve directory
    Certify {
        #[arg(long)]
        field: PathBuf,
        /// residual lattice resolution per axis
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Roll out the synthesized controller
    Rollout {
        #[arg(long)]
        field: PathBuf,
        /// single start "theta,theta_dot"
        #[arg(long)]
        x0: Option<String>,
        /// grid of starts, e.g. 30x30
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Compare the controller against the energy-shaping baseline
    Compare {
        #[arg(long)]
        field: PathBuf,
        /// baseline name (only "energy" is available)
        #[arg(long, default_value = "energy")]
        baseline: String,
        /// probe grid, e.g. 10x10
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Train a network on the solve outputs and evaluate its controller
    Distill {
        /// solve directory holding the trajectory dump and field tables
        #[arg(long)]
        field: PathBuf,
        /// supervised | weak
        #[arg(long)]
        mode: String,
        /// value samples (supervised) or raw samples (weak)
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Input(_) | Error::Param(_) | Error::OutOfCoverage { .. } => EXIT_INPUT,
                _ => EXIT_STAGE,
            };
            ExitCode::from(code)
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n =
        flag.or_else(|| std::env::var("SWINGUP_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, Error> {
    match cmd {
        Cmd::Solve(args) => {
            let cfg = solve_config(&args)?;
            let (solved, _) = pipeline::solve_to_dir(&cfg, &args.out)?;
            println!(
                "solve: {} trajectories, {} curve branches, {} field vertices, {} triangles",
                solved.raw.len(),
                solved.curves.len(),
                solved.field.verts.len(),
                solved.field.tris.len()
            );
            println!(
                "lqr region check: {} ({} of {} boundary rollouts converged, max |u| = {:.4})",
                if solved.roa.ok { "ok" } else { "FAILED" },
                solved.roa.converged,
                solved.roa.boundary_points,
                solved.roa.max_raw_control
            );
            println!("outputs in {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Certify { field, grid } => {
            let out = pipeline::certify_dir(&field, grid)?;
            let r = &out.report;
            println!(
                "residuals: avg {:.4e}, max {:.4e} over {} off-mask cells",
                r.eps_residual_avg, r.eps_residual_max, r.off_mask_cells
            );
            println!("T_x = {:.3} s (rollout), bound = {:.4e}", r.t_x, r.bound);
            println!(
                "conditions: continuity {} (worst gap {:.3}), hjb {} (avg {:.3e}), \
                 attainability {} (worst {:.3}%), transversal {}",
                pass(r.theorem2.continuity_ok),
                r.theorem2.continuity_worst_gap,
                pass(r.theorem2.hjb_ok),
                r.theorem2.hjb_avg,
                pass(r.theorem2.attainability_ok),
                r.theorem2.attainability_worst * 100.0,
                pass(r.theorem2.transversal_ok)
            );
            if r.passed {
                println!("certificate: PASS");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("certificate: FAIL");
                Ok(ExitCode::from(EXIT_CERTIFICATION))
            }
        }
        Cmd::Rollout { field, x0, grid, dt, horizon } => {
            let dt = dt.unwrap_or(1e-3);
            let horizon = horizon.unwrap_or(20.0);
            match (x0, grid) {
                (Some(x0), None) => {
                    let x = parse_state(&x0)?;
                    let r = pipeline::rollout_single(&field, x, horizon, dt)?;
                    println!(
                        "rollout from ({}, {}): cost {:.6}, time to ellipse {}, settled: {}",
                        x.theta,
                        x.theta_dot,
                        r.cost,
                        r.time_to_ellipse
                            .map_or_else(|| "never".into(), |t| format!("{t:.3} s")),
                        r.settled
                    );
                    Ok(ExitCode::SUCCESS)
                }
                (None, Some(g)) => {
                    let n = parse_grid(&g)?;
                    let rows = pipeline::rollout_grid(&field, n, horizon, dt)?;
                    let reached = rows.iter().filter(|r| r.time_to_ellipse.is_some()).count();
                    println!("{}/{} rollouts reach the terminal ellipse", reached, rows.len());
                    Ok(ExitCode::SUCCESS)
                }
                _ => Err(Error::Input("pass exactly one of --x0 or --grid".into())),
            }
        }
        Cmd::Compare { field, baseline, grid, horizon } => {
            if baseline != "energy" {
                return Err(Error::Input(format!("unknown baseline {baseline:?}")));
            }
            let n = grid.map(|g| parse_grid(&g)).transpose()?.unwrap_or(10);
            let rows = pipeline::compare_dir(&field, n, horizon.unwrap_or(60.0))?;
            let dominated =
                rows.iter().filter(|r| r.cost_optimal <= r.cost_baseline + 1e-6).count();
            println!(
                "optimal controller at or below baseline cost on {}/{} probes",
                dominated,
                rows.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Distill { field, mode, samples, iters } => {
            let mode = match mode.as_str() {
                "supervised" => TrainMode::Supervised,
                "weak" => TrainMode::Weak,
                other => return Err(Error::Input(format!("unknown mode {other:?}"))),
            };
            let mut tc = TrainConfig::default();
            if let Some(it) = iters {
                tc.iters = it;
            }
            let samples = samples.unwrap_or(match mode {
                TrainMode::Supervised => 1000,
                TrainMode::Weak => 100_000,
            });
            let out = pipeline::distill_dir(&field, mode, samples, Some(tc))?;
            let first = out.history.first().map(|h| h.loss.total).unwrap_or(f64::NAN);
            let last = out.history.last().map(|h| h.loss.total).unwrap_or(f64::NAN);
            println!("training loss {first:.4e} -> {last:.4e}");
            println!(
                "distilled controller: {}/{} grid starts reach the ellipse within {} s",
                out.grid.reached, out.grid.total, out.grid.horizon
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

fn solve_config(args: &SolveArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.ntraj {
        cfg.ntraj = n;
    }
    if let Some(u) = &args.umax {
        cfg.u_max = match u.as_str() {
            "none" => None,
            v => Some(
                v.parse::<f64>().map_err(|_| Error::Input(format!("bad --umax value {v:?}")))?,
            ),
        };
    }
    if let Some(e) = args.eps {
        cfg.eps = e;
    }
    if let Some(v) = args.vc {
        cfg.vc = v;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_state(s: &str) -> Result<State, Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Input(format!("bad state {s:?}, expected \"theta,theta_dot\"")));
    }
    let theta =
        parts[0].trim().parse().map_err(|_| Error::Input(format!("bad theta {:?}", parts[0])))?;
    let theta_dot = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Input(format!("bad theta_dot {:?}", parts[1])))?;
    Ok(State::new(theta, theta_dot))
}

fn parse_grid(s: &str) -> Result<usize, Error> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let ns: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Input(format!("bad grid {s:?}, expected NxN")))?;
    match ns.as_slice() {
        [n] | [n, _] if *n >= 2 => Ok(*n),
        _ => Err(Error::Input(format!("bad grid {s:?}, expected NxN with N >= 2"))),
    }
}
