//! Run and sweep configuration, resolved into core types.

use std::path::Path;

use serde::{Deserialize, Serialize};
use unravel_core::entanglement::SubsystemSpec;
use unravel_core::trajectories::{aligned_step, default_jump_dt, TrajectoryConfig, DEFAULT_QSD_DT};
use unravel_core::{IsingParams, Unraveling};

use crate::CliError;

pub const DEFAULT_N_TRAJ: usize = 100;
pub const DEFAULT_T_MAX: f64 = 120.0;
pub const DEFAULT_RECORD_INTERVAL: f64 = 0.5;
pub const T_STAR_JUMPS: f64 = 60.0;
pub const T_STAR_NO_CLICK: f64 = 160.0;

/// One ensemble. Every field has a default so config files can be partial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub unraveling: Unraveling,
    pub coupling: f64,
    pub field: f64,
    pub sites: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub n_traj: usize,
    pub t_max: f64,
    /// Integration step; derived from the unraveling when absent.
    pub dt: Option<f64>,
    /// Time between recorded samples.
    pub record_interval: f64,
    /// Start of the asymptotic window; 60, or 160 without clicks, when absent.
    pub t_star: Option<f64>,
    /// Block length `ℓ`; `L/4` when absent.
    pub subsystem: Option<usize>,
    pub seed: u64,
    pub record_correlations: bool,
    /// Write a trajectory checkpoint every this many records (0 disables).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            unraveling: Unraveling::Qsd,
            coupling: 1.0,
            field: 1.0,
            sites: 32,
            gamma: 1.0,
            alpha: 1.0,
            n_traj: DEFAULT_N_TRAJ,
            t_max: DEFAULT_T_MAX,
            dt: None,
            record_interval: DEFAULT_RECORD_INTERVAL,
            t_star: None,
            subsystem: None,
            seed: 0,
            record_correlations: false,
            checkpoint_every: 0,
        }
    }
}

/// A [`RunConfig`] with every default filled in and checked.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub params: IsingParams,
    pub trajectory: TrajectoryConfig,
    pub spec: SubsystemSpec,
    pub t_star: f64,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn resolve(&self) -> Result<ResolvedRun, CliError> {
        let params = IsingParams::new(self.coupling, self.field, self.sites).map_err(|e| config_error(e.to_string()))?;
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(config_error(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.unraveling != Unraveling::Qsd && !(self.alpha > 0.0) {
            return Err(config_error(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.n_traj < 2 {
            return Err(config_error(format!("n_traj must be at least 2, got {}", self.n_traj)));
        }
        if !(self.record_interval > 0.0) {
            return Err(config_error("record_interval must be positive"));
        }
        let (dt, record_every) = match self.dt {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(config_error(format!("dt must be positive, got {dt}")));
                }
                let every = (self.record_interval / dt).round().max(1.0) as usize;
                if (every as f64 * dt - self.record_interval).abs() > 1e-9 {
                    return Err(config_error(format!(
                        "record_interval {} is not a multiple of dt {dt}",
                        self.record_interval
                    )));
                }
                (dt, every)
            }
            None => {
                let dt_max = match self.unraveling {
                    Unraveling::QuantumJump => default_jump_dt(self.sites, self.gamma, self.alpha),
                    _ => DEFAULT_QSD_DT,
                };
                aligned_step(dt_max, self.record_interval)
            }
        };
        if self.unraveling == Unraveling::QuantumJump {
            let ceiling = self.gamma * dt * self.sites as f64 * (1.0 + self.alpha * (self.alpha + 2.0));
            if ceiling > 1.0 {
                return Err(config_error(format!(
                    "quantum-jump dt overflow: γ·dt·L·(1+α(α+2)) = {ceiling:.3} exceeds 1; reduce dt"
                )));
            }
        }
        let steps_per_t = self.t_max / dt;
        if !(self.t_max > 0.0) || (steps_per_t - steps_per_t.round()).abs() > 1e-6 {
            return Err(config_error(format!("t_max {} must be a positive multiple of dt {dt}", self.t_max)));
        }
        let t_star = self.t_star.unwrap_or(match self.unraveling {
            Unraveling::NonHermitian => T_STAR_NO_CLICK,
            _ => T_STAR_JUMPS,
        });
        if !(t_star >= 0.0 && t_star < self.t_max) {
            return Err(config_error(format!("t_star {t_star} must lie in [0, t_max = {})", self.t_max)));
        }
        let ell = self.subsystem.unwrap_or(SubsystemSpec::quarter(self.sites).length);
        let spec = SubsystemSpec::new(0, ell, self.sites).map_err(|e| config_error(e.to_string()))?;
        let trajectory = TrajectoryConfig {
            unraveling: self.unraveling,
            gamma: self.gamma,
            alpha: self.alpha,
            dt,
            t_max: self.t_max,
            seed: self.seed,
            record_every,
            record_occupations: false,
            record_correlations: self.record_correlations,
            check_every: 100,
        };
        trajectory.validate().map_err(|e| config_error(e.to_string()))?;
        let mut config = self.clone();
        config.dt = Some(dt);
        config.t_star = Some(t_star);
        config.subsystem = Some(ell);
        Ok(ResolvedRun { config, params, trajectory, spec, t_star })
    }
}

/// A `(γ, h_f, L)` grid sharing the ensemble settings of `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub gammas: Vec<f64>,
    pub fields: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl SweepConfig {
    /// Cells in `γ`-major, then `h_f`, then `L` order.
    pub fn cells(&self) -> Result<Vec<ResolvedRun>, CliError> {
        if self.gammas.is_empty() || self.fields.is_empty() || self.sizes.is_empty() {
            return Err(config_error("sweep grid needs at least one gamma, field and size"));
        }
        let mut cells = Vec::new();
        for &gamma in &self.gammas {
            for &field in &self.fields {
                for &sites in &self.sizes {
                    let mut run = self.run.clone();
                    run.gamma = gamma;
                    run.field = field;
                    run.sites = sites;
                    // dt and ℓ are per size unless pinned in the file.
                    cells.push(run.resolve()?);
                }
            }
        }
        Ok(cells)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
}
