//! Run configuration: physical constants, cost weights, and every solver
//! knob, readable from a TOML key-value file. Command-line flags override
//! file values; file values override the defaults below.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CostParams, PendulumParams};
use crate::error::Error;
use crate::nonsmooth::CurveConfig;
use crate::pmp::IntegrationCaps;
use crate::valuefield::FieldConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // pendulum
    pub m: f64,
    pub b: f64,
    pub l: f64,
    pub g: f64,
    // cost
    pub q1: f64,
    pub q2: f64,
    pub r: f64,
    /// omitted = unconstrained control
    pub u_max: Option<f64>,
    /// discount rate; 0 = undiscounted
    pub lambda: f64,
    // terminal ellipse and seeding
    pub eps: f64,
    pub ntraj: usize,
    pub vc: f64,
    // backward integration caps
    pub vmax: f64,
    pub smax: f64,
    pub domain: f64,
    pub tol: f64,
    pub max_arc: f64,
    // nonsmooth sweep
    pub delta: f64,
    pub levels: usize,
    pub jump_guard: f64,
    /// also clip trajectories at the bang-bang locus (saturated case)
    pub clip_with_locus: bool,
    // field
    pub band: f64,
    pub coverage_max_edge: f64,
    pub max_samples: usize,
    // rollouts
    pub dt: f64,
    pub horizon: f64,
    // certification lattice
    pub grid_n: usize,
    pub grid_window: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 1.0,
            b: 0.1,
            l: 1.0,
            g: 9.8,
            q1: 1.0,
            q2: 1.0,
            r: 1.0,
            u_max: None,
            lambda: 0.0,
            eps: 2e-4,
            ntraj: 2000,
            vc: 2.0,
            vmax: 200.0,
            smax: 30.0,
            domain: 9.0,
            tol: 1e-9,
            max_arc: 0.05,
            delta: 0.05,
            levels: 4000,
            jump_guard: 0.5,
            clip_with_locus: true,
            band: 0.02,
            coverage_max_edge: 0.35,
            max_samples: 5_000_000,
            dt: 1e-3,
            horizon: 20.0,
            grid_n: 281,
            grid_window: 7.0,
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, Error> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Input(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let params = self.pendulum();
        params.validate()?;
        self.cost().validate(&params)?;
        if !(self.eps > 0.0) {
            return Err(Error::Input(format!("eps must be positive, got {}", self.eps)));
        }
        if self.vc <= self.eps {
            return Err(Error::Input(format!(
                "vc = {} must exceed eps = {}",
                self.vc, self.eps
            )));
        }
        if self.ntraj < 2 {
            return Err(Error::Input(format!("ntraj must be at least 2, got {}", self.ntraj)));
        }
        if self.grid_n < 2 {
            return Err(Error::Input(format!("grid_n must be at least 2, got {}", self.grid_n)));
        }
        Ok(())
    }

    pub fn pendulum(&self) -> PendulumParams {
        PendulumParams { m: self.m, b: self.b, l: self.l, g: self.g }
    }

    pub fn cost(&self) -> CostParams {
        CostParams { q1: self.q1, q2: self.q2, r: self.r, u_max: self.u_max, lambda: self.lambda }
    }

    pub fn caps(&self) -> IntegrationCaps {
        IntegrationCaps {
            v_max: self.vmax,
            s_max: self.smax,
            domain: self.domain,
            tol: self.tol,
            max_arc: self.max_arc,
        }
    }

    pub fn curve_config(&self) -> CurveConfig {
        CurveConfig { delta: self.delta, levels: self.levels, jump_guard: self.jump_guard }
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            band: self.band,
            coverage_max_edge: self.coverage_max_edge,
            max_samples: self.max_samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_benchmark() {
        let c = RunConfig::default();
        assert_eq!(c.m, 1.0);
        assert_eq!(c.b, 0.1);
        assert_eq!(c.g, 9.8);
        assert_eq!(c.u_max, None);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let c = RunConfig::from_toml("m = 2.0\nu_max = 3.5\nntraj = 64\n").unwrap();
        assert_eq!(c.m, 2.0);
        assert_eq!(c.u_max, Some(3.5));
        assert_eq!(c.ntraj, 64);
        assert_eq!(c.q1, 1.0);
        // omitted u_max means unconstrained
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.u_max, None);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(RunConfig::from_toml("m = -1.0").is_err());
        assert!(RunConfig::from_toml("u_max = 100.0").is_err()); // >= m g l
        assert!(RunConfig::from_toml("vc = 0.00001").is_err()); // below eps
        assert!(RunConfig::from_toml("nonsense_key = 1").is_err());
    }
}
