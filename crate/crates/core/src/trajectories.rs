//! Stochastic and deterministic steppers for a single trajectory.
//!
//! Three evolutions share the same Gaussian frame machinery:
//!
//! * quantum-state diffusion: unitary step, then `exp(Σ_j T_j n_j)` with
//!   `T_j = δW_j + (2⟨n_j⟩ − 1)γδt`, then QR;
//! * quantum jumps with `m_j = √γ(1 + α n_j)`: either one jump
//!   `exp(ln(1+α) n_j)` or a no-click step under `ℍ_eff`;
//! * the no-click limit alone.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entanglement::{entanglement_entropy, renyi_entropy, square_correlation_profile, state_spectrum, SubsystemSpec};
use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::ising::{build_bdg, build_effective_bdg, initial_state, BdgMatrix, EffectiveBdgMatrix, IsingParams};
use crate::linalg::{expm, hermitian_expm, I};

/// Integration step used for quantum-state diffusion unless overridden.
pub const DEFAULT_QSD_DT: f64 = 0.05;
/// Tolerance on the canonical relations checked along a trajectory.
pub const TRAJECTORY_CANONICAL_TOLERANCE: f64 = 1e-9;

/// Pairing defect above which a trajectory's frame is projected back onto
/// the Gaussian manifold; see [`GaussianState::repair_pairing`].
const PAIRING_REPAIR_THRESHOLD: f64 = 1e-12;
/// Time between pairing checks. Rounding errors grow by roughly e per unit
/// time in the strongest monitored runs.
const PAIRING_CHECK_INTERVAL: f64 = 0.25;

fn repair_every(dt: f64) -> usize {
    ((PAIRING_CHECK_INTERVAL / dt).round() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unraveling {
    #[serde(rename = "qsd")]
    Qsd,
    #[serde(rename = "qj")]
    QuantumJump,
    #[serde(rename = "nh")]
    NonHermitian,
}

impl Unraveling {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Qsd => "qsd",
            Self::QuantumJump => "qj",
            Self::NonHermitian => "nh",
        }
    }
}

impl std::str::FromStr for Unraveling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qsd" => Ok(Self::Qsd),
            "qj" => Ok(Self::QuantumJump),
            "nh" => Ok(Self::NonHermitian),
            other => Err(Error::InvalidParams(format!("unknown unraveling `{other}` (qsd, qj, nh)"))),
        }
    }
}

/// `δt = 1/(8Lγα)`, the jump discretization; `DEFAULT_QSD_DT` when `γα = 0`.
///
/// For `α` far from one that step would let the jump probabilities of a
/// filled chain exceed one, so it is capped at `1/(γL(1+α)²)`.
pub fn default_jump_dt(sites: usize, gamma: f64, alpha: f64) -> f64 {
    let rate = 8.0 * sites as f64 * gamma * alpha;
    if !(rate > 0.0) {
        return DEFAULT_QSD_DT;
    }
    let cap = 1.0 / (gamma * sites as f64 * (1.0 + alpha).powi(2));
    (1.0 / rate).min(cap)
}

/// Largest step `≤ dt_max` that divides `record_interval`, with the number of
/// steps per record.
pub fn aligned_step(dt_max: f64, record_interval: f64) -> (f64, usize) {
    let every = ((record_interval / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (record_interval / every as f64, every)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub unraveling: Unraveling,
    pub gamma: f64,
    /// Jump strength `α` (ignored for quantum-state diffusion).
    pub alpha: f64,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    /// Observables are recorded every this many steps (step 0 included).
    pub record_every: usize,
    pub record_occupations: bool,
    /// Record the site-averaged square correlation `C(t, r)`, `r = 0..=L/2`.
    pub record_correlations: bool,
    /// Canonical relations are asserted every this many steps.
    pub check_every: usize,
}

impl TrajectoryConfig {
    fn base(unraveling: Unraveling, gamma: f64, alpha: f64, dt: f64, t_max: f64, seed: u64) -> Self {
        Self {
            unraveling,
            gamma,
            alpha,
            dt,
            t_max,
            seed,
            record_every: 1,
            record_occupations: true,
            record_correlations: false,
            check_every: if cfg!(debug_assertions) { 1 } else { 100 },
        }
    }

    pub fn qsd(gamma: f64, t_max: f64, seed: u64) -> Self {
        Self::base(Unraveling::Qsd, gamma, 1.0, DEFAULT_QSD_DT, t_max, seed)
    }

    pub fn quantum_jump(gamma: f64, alpha: f64, sites: usize, t_max: f64, seed: u64) -> Self {
        Self::base(Unraveling::QuantumJump, gamma, alpha, default_jump_dt(sites, gamma, alpha), t_max, seed)
    }

    pub fn non_hermitian(gamma: f64, alpha: f64, t_max: f64, seed: u64) -> Self {
        Self::base(Unraveling::NonHermitian, gamma, alpha, DEFAULT_QSD_DT, t_max, seed)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.unraveling != Unraveling::Qsd && !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be non-negative, got {}", self.t_max));
        }
        if self.record_every == 0 || self.check_every == 0 {
            return bad("record_every and check_every must be positive".into());
        }
        Ok(())
    }

    /// Number of steps covering `[0, t_max]`.
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Reproducible per-trajectory randomness: a ChaCha stream keyed by the master
/// seed and selected by the trajectory index.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: u64,
    index: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { rng, seed, index }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Independent `N(0, variance)` draws, one per slot.
    pub fn wiener_increments(&mut self, variance: f64, out: &mut [f64]) {
        let sigma = variance.sqrt();
        for x in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *x = sigma * z;
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Position in the underlying keystream, for checkpoints.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn seek(&mut self, position: u128) {
        self.rng.set_word_pos(position);
    }
}

/// `exp(−2iℍδt)`.
pub fn unitary_propagator(h: &BdgMatrix, dt: f64) -> Result<Array2<C64>> {
    hermitian_expm(&h.full_complex(), -2.0 * I * dt)
}

/// `exp(−2iℍ_eff δt)`.
pub fn no_click_propagator(heff: &EffectiveBdgMatrix, dt: f64) -> Result<Array2<C64>> {
    expm(&heff.matrix().mapv(|z| -2.0 * I * dt * z))
}

fn propagate(state: &GaussianState, propagator: &Array2<C64>) -> GaussianState {
    let mut next = state.clone();
    next.left_multiply(propagator);
    next
}

pub fn hamiltonian_step(state: &GaussianState, h: &BdgMatrix, dt: f64) -> Result<GaussianState> {
    Ok(propagate(state, &unitary_propagator(h, dt)?))
}

fn dissipate_qsd(mut state: GaussianState, cfg: &TrajectoryConfig, noise: &mut NoiseStream) -> Result<GaussianState> {
    let l = state.sites();
    let mut dw = vec![0.0; l];
    noise.wiener_increments(cfg.gamma * cfg.dt, &mut dw);
    if cfg.gamma == 0.0 {
        return Ok(state);
    }
    let n = state.occupations()?;
    let theta: Vec<f64> = dw
        .iter()
        .zip(&n)
        .map(|(w, n)| w + (2.0 * n - 1.0) * cfg.gamma * cfg.dt)
        .collect();
    state.apply_number_exponential(&theta);
    state.restore_canonical()
}

pub fn qsd_step(state: &GaussianState, h: &BdgMatrix, cfg: &TrajectoryConfig, noise: &mut NoiseStream) -> Result<GaussianState> {
    let evolved = hamiltonian_step(state, h, cfg.dt)?;
    dissipate_qsd(evolved, cfg, noise)
}

/// `π_j = γ[1 + α(α+2)⟨n_j⟩]δt`.
pub fn jump_probabilities(state: &GaussianState, cfg: &TrajectoryConfig) -> Result<Vec<f64>> {
    let weight = cfg.alpha * (cfg.alpha + 2.0);
    let pi: Vec<f64> = state
        .occupations()?
        .iter()
        .map(|n| cfg.gamma * (1.0 + weight * n) * cfg.dt)
        .collect();
    let total: f64 = pi.iter().sum();
    if total > 1.0 {
        return Err(Error::JumpProbabilityOverflow { total });
    }
    Ok(pi)
}

/// `(1 + α n_site)|ψ⟩`, normalized.
pub fn apply_jump(state: &GaussianState, site: usize, alpha: f64) -> Result<GaussianState> {
    let l = state.sites();
    if site >= l {
        return Err(Error::InvalidParams(format!("site {site} out of range for {l} sites")));
    }
    let mut theta = vec![0.0; l];
    theta[site] = alpha.ln_1p();
    let mut next = state.clone();
    next.apply_number_exponential(&theta);
    next.restore_canonical()
}

/// First site `j` with `Σ_{i<j} π_i < r ≤ Σ_{i≤j} π_i`, if any.
pub fn select_jump(pi: &[f64], r: f64) -> Option<usize> {
    let mut cumulative = 0.0;
    for (j, p) in pi.iter().enumerate() {
        let next = cumulative + p;
        if r > cumulative && r <= next {
            return Some(j);
        }
        cumulative = next;
    }
    None
}

fn jump_or_drift(
    state: &GaussianState,
    no_click: &Array2<C64>,
    cfg: &TrajectoryConfig,
    noise: &mut NoiseStream,
) -> Result<(GaussianState, Option<usize>)> {
    let r = noise.uniform();
    let pi = jump_probabilities(state, cfg)?;
    match select_jump(&pi, r) {
        Some(site) => Ok((apply_jump(state, site, cfg.alpha)?, Some(site))),
        None => Ok((propagate(state, no_click).restore_canonical()?, None)),
    }
}

/// One quantum-jump step; also reports which site jumped.
pub fn qj_step(
    state: &GaussianState,
    heff: &EffectiveBdgMatrix,
    cfg: &TrajectoryConfig,
    noise: &mut NoiseStream,
) -> Result<(GaussianState, Option<usize>)> {
    jump_or_drift(state, &no_click_propagator(heff, cfg.dt)?, cfg, noise)
}

pub fn nh_step(state: &GaussianState, heff: &EffectiveBdgMatrix, dt: f64) -> Result<GaussianState> {
    propagate(state, &no_click_propagator(heff, dt)?).restore_canonical()
}

/// A stepper with its propagator cached for the whole run.
#[derive(Clone, Debug)]
pub struct Stepper {
    cfg: TrajectoryConfig,
    propagator: Array2<C64>,
}

impl Stepper {
    pub fn new(cfg: &TrajectoryConfig, params: &IsingParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let propagator = match cfg.unraveling {
            Unraveling::Qsd => unitary_propagator(&build_bdg(params)?, cfg.dt)?,
            Unraveling::QuantumJump | Unraveling::NonHermitian => {
                no_click_propagator(&build_effective_bdg(params, cfg.gamma, cfg.alpha)?, cfg.dt)?
            }
        };
        Ok(Self { cfg: cfg.clone(), propagator })
    }

    pub fn config(&self) -> &TrajectoryConfig {
        &self.cfg
    }

    pub fn propagator(&self) -> &Array2<C64> {
        &self.propagator
    }

    /// Advances one step; returns the jump site for a click.
    pub fn step(&self, state: &GaussianState, noise: &mut NoiseStream) -> Result<(GaussianState, Option<usize>)> {
        let mut next = state.clone();
        let mut deferred = 0;
        let jump = self.step_lazy(&mut next, &mut deferred, noise)?;
        if deferred > 0 {
            next = next.restore_canonical()?;
        }
        Ok((next, jump))
    }

    /// Largest possible total jump probability, `γδtL(1 + α(α+2))`.
    fn jump_ceiling(&self, sites: usize) -> f64 {
        let cfg = &self.cfg;
        cfg.gamma * cfg.dt * sites as f64 * (1.0 + cfg.alpha * (cfg.alpha + 2.0))
    }

    /// One step that may leave the frame unnormalized.
    ///
    /// `deferred` counts steps since the last orthonormalization. The no-click
    /// and jump updates only rescale the frame's column space, so the QR can
    /// wait until occupations are needed: a uniform draw above the jump
    /// ceiling cannot select a site whatever the occupations are.
    fn step_lazy(&self, state: &mut GaussianState, deferred: &mut usize, noise: &mut NoiseStream) -> Result<Option<usize>> {
        match self.cfg.unraveling {
            Unraveling::Qsd => {
                *state = dissipate_qsd(propagate(state, &self.propagator), &self.cfg, noise)?;
                Ok(None)
            }
            Unraveling::NonHermitian => {
                state.left_multiply(&self.propagator);
                *deferred += 1;
                if *deferred >= MAX_DEFERRED_STEPS {
                    *state = state.restore_canonical()?;
                    *deferred = 0;
                }
                Ok(None)
            }
            Unraveling::QuantumJump => {
                let r = noise.uniform();
                if r > self.jump_ceiling(state.sites()) && *deferred < MAX_DEFERRED_STEPS {
                    state.left_multiply(&self.propagator);
                    *deferred += 1;
                    return Ok(None);
                }
                if *deferred > 0 {
                    *state = state.restore_canonical()?;
                }
                let pi = jump_probabilities(state, &self.cfg)?;
                let site = select_jump(&pi, r);
                match site {
                    Some(j) => {
                        let mut theta = vec![0.0; state.sites()];
                        theta[j] = self.cfg.alpha.ln_1p();
                        state.apply_number_exponential(&theta);
                    }
                    None => state.left_multiply(&self.propagator),
                }
                *deferred = 1;
                Ok(site)
            }
        }
    }
}

/// Steps an unnormalized frame may accumulate before a forced QR.
const MAX_DEFERRED_STEPS: usize = 16;

/// Observables recorded along one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyTimeSeries {
    pub seed: u64,
    pub index: u64,
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub renyi2: Vec<f64>,
    /// `⟨n_j⟩` per record (empty when not recorded).
    pub occupations: Vec<Vec<f64>>,
    /// Site-averaged `C(t, r)` for `r = 0..=L/2` per record (empty when not recorded).
    pub correlations: Vec<Vec<f64>>,
    pub jumps: u64,
}

impl EntropyTimeSeries {
    fn new(seed: u64, index: u64) -> Self {
        Self {
            seed,
            index,
            times: Vec::new(),
            entropy: Vec::new(),
            renyi2: Vec::new(),
            occupations: Vec::new(),
            correlations: Vec::new(),
            jumps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Resumable state of one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryRun {
    stepper: Stepper,
    spec: SubsystemSpec,
    step: usize,
    state: GaussianState,
    /// Steps since the frame was last orthonormalized.
    deferred: usize,
    noise: NoiseStream,
    series: EntropyTimeSeries,
}

/// Everything needed to resume a trajectory bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub noise_position: u128,
    pub state: GaussianState,
    pub series: EntropyTimeSeries,
}

impl TrajectoryRun {
    pub fn new(cfg: &TrajectoryConfig, params: &IsingParams, spec: SubsystemSpec, index: u64) -> Result<Self> {
        let stepper = Stepper::new(cfg, params)?;
        let state = initial_state(params);
        Self::check_spec(&spec, params)?;
        let mut run = Self {
            stepper,
            spec,
            step: 0,
            state,
            deferred: 0,
            noise: NoiseStream::new(cfg.seed, index),
            series: EntropyTimeSeries::new(cfg.seed, index),
        };
        run.record()?;
        Ok(run)
    }

    fn check_spec(spec: &SubsystemSpec, params: &IsingParams) -> Result<()> {
        SubsystemSpec::new(spec.offset, spec.length, params.sites).map(|_| ())
    }

    pub fn resume(cfg: &TrajectoryConfig, params: &IsingParams, spec: SubsystemSpec, checkpoint: Checkpoint) -> Result<Self> {
        let stepper = Stepper::new(cfg, params)?;
        Self::check_spec(&spec, params)?;
        if checkpoint.state.sites() != params.sites {
            return Err(Error::Snapshot("checkpoint size does not match the chain".into()));
        }
        let mut noise = NoiseStream::new(cfg.seed, checkpoint.series.index);
        noise.seek(checkpoint.noise_position);
        Ok(Self {
            stepper,
            spec,
            step: checkpoint.step,
            state: checkpoint.state,
            deferred: 0,
            noise,
            series: checkpoint.series,
        })
    }

    /// Snapshot for [`TrajectoryRun::resume`]. The frame is orthonormalized
    /// first; taken at a record step this does not perturb the run.
    pub fn checkpoint(&mut self) -> Result<Checkpoint> {
        self.normalize()?;
        Ok(Checkpoint {
            step: self.step,
            noise_position: self.noise.position(),
            state: self.state.clone(),
            series: self.series.clone(),
        })
    }

    /// Current state; orthonormalized only at record and check steps.
    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.stepper.cfg.steps()
    }

    fn record(&mut self) -> Result<()> {
        let cfg = &self.stepper.cfg;
        let spectrum = state_spectrum(&self.state, &self.spec)?;
        self.series.times.push(self.step as f64 * cfg.dt);
        self.series.entropy.push(entanglement_entropy(&spectrum));
        self.series.renyi2.push(renyi_entropy(&spectrum, 2.0)?);
        if cfg.record_occupations {
            self.series.occupations.push(self.state.occupations()?);
        }
        if cfg.record_correlations {
            self.series.correlations.push(square_correlation_profile(&self.state)?);
        }
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        if self.deferred > 0 {
            self.state = self.state.restore_canonical()?;
            self.deferred = 0;
        }
        Ok(())
    }

    fn advance_one(&mut self) -> Result<()> {
        let jump = self.stepper.step_lazy(&mut self.state, &mut self.deferred, &mut self.noise)?;
        self.step += 1;
        if jump.is_some() {
            self.series.jumps += 1;
        }
        let cfg = &self.stepper.cfg;
        if self.step % repair_every(cfg.dt) == 0 {
            self.normalize()?;
            if self.state.pairing_defect() > PAIRING_REPAIR_THRESHOLD {
                self.state = self.state.repair_pairing()?;
            }
        }
        let cfg = &self.stepper.cfg;
        let check = self.step % cfg.check_every == 0;
        let record = self.step % cfg.record_every == 0;
        if record || self.step == cfg.steps() {
            self.normalize()?;
        }
        if check {
            // Checked on a copy so the cadence never changes the trajectory.
            let deviation = if self.deferred > 0 {
                self.state.restore_canonical()?.canonical_deviation()
            } else {
                self.state.canonical_deviation()
            };
            if !(deviation <= TRAJECTORY_CANONICAL_TOLERANCE) {
                return Err(Error::Corruption(format!("canonical deviation {deviation:.3e} after step")));
            }
        }
        if record {
            self.record()?;
        }
        Ok(())
    }

    /// Advances at most `max_steps` steps; returns how many were taken.
    pub fn advance(&mut self, max_steps: usize) -> Result<usize> {
        let total = self.stepper.cfg.steps();
        let mut taken = 0;
        while taken < max_steps && self.step < total {
            let step = self.step;
            self.advance_one().map_err(|e| Error::Trajectory {
                index: self.series.index,
                step,
                source: Box::new(e),
            })?;
            taken += 1;
        }
        Ok(taken)
    }

    pub fn finish(mut self) -> Result<EntropyTimeSeries> {
        self.advance(usize::MAX)?;
        Ok(self.series)
    }
}

/// Runs trajectory `index` from the vacuum through the quench to `params`.
pub fn run_trajectory(cfg: &TrajectoryConfig, params: &IsingParams, spec: &SubsystemSpec, index: u64) -> Result<EntropyTimeSeries> {
    TrajectoryRun::new(cfg, params, *spec, index)?.finish()
}

/// Trajectories `0..n_traj` in parallel, returned in index order.
pub fn run_ensemble(cfg: &TrajectoryConfig, params: &IsingParams, spec: &SubsystemSpec, n_traj: usize) -> Result<Vec<EntropyTimeSeries>> {
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| run_trajectory(cfg, params, spec, i))
        .collect()
}
