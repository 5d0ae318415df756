//! Full Fock-space reference implementations for small chains.
//!
//! Basis states are bit strings with bit `j` the occupation of site `j`.
//! Fermion operators carry the Jordan–Wigner sign `(-1)^{Σ_{l<j} n_l}`.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{EigValsh, Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::entanglement::SubsystemSpec;
use crate::error::{Error, Result};
use crate::ising::IsingParams;
use crate::linalg::{expm, hermitian_expm, I};
use crate::trajectories::{select_jump, NoiseStream, TrajectoryConfig};

/// Largest chain accepted for static diagonalization.
pub const MAX_STATIC_SITES: usize = 12;
/// Largest chain accepted for dense dynamics.
pub const MAX_DYNAMIC_SITES: usize = 8;
/// Trace drift that aborts a master-equation integration.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-8;
const NORM_FLOOR: f64 = 1e-12;

fn check_sites(sites: usize, max: usize) -> Result<()> {
    if sites == 0 || sites > max {
        return Err(Error::OracleTooLarge { sites, max });
    }
    Ok(())
}

/// Elementary fermion operator on one site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fermion {
    Create(usize),
    Annihilate(usize),
}

/// Applies `ops` right to left to basis state `b`; `None` when annihilated.
pub fn apply_string(b: usize, ops: &[Fermion]) -> Option<(f64, usize)> {
    let mut state = b;
    let mut sign = 1.0;
    for op in ops.iter().rev() {
        let (site, create) = match *op {
            Fermion::Create(j) => (j, true),
            Fermion::Annihilate(j) => (j, false),
        };
        let occupied = state >> site & 1 == 1;
        if occupied == create {
            return None;
        }
        if (state & ((1 << site) - 1)).count_ones() % 2 == 1 {
            sign = -sign;
        }
        state ^= 1 << site;
    }
    Some((sign, state))
}

/// `Σ coeff · ops` as a dense matrix on `2^sites` states.
pub fn operator_from_terms(sites: usize, terms: &[(C64, Vec<Fermion>)]) -> Array2<C64> {
    let dim = 1 << sites;
    let mut m = Array2::<C64>::zeros((dim, dim));
    for b in 0..dim {
        for (coeff, ops) in terms {
            if let Some((sign, out)) = apply_string(b, ops) {
                m[[out, b]] += coeff * sign;
            }
        }
    }
    m
}

/// Number operator `n_j` (diagonal).
pub fn number_operator(sites: usize, j: usize) -> Array2<C64> {
    let dim = 1 << sites;
    Array2::from_shape_fn((dim, dim), |(a, b)| {
        if a == b && a >> j & 1 == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
    })
}

/// Many-body Hamiltonian of the fermionized ring with antiperiodic closing bond:
/// `−J Σ_{j<L} (c†_j c_{j+1} + c†_j c†_{j+1} + h.c.) + J (c†_L c_1 + c†_L c†_1 + h.c.)
/// + h Σ_j (2 n_j − 1)`, over the whole Fock space.
pub fn build_dense_hamiltonian(params: &IsingParams) -> Result<Array2<C64>> {
    params.validate()?;
    let l = params.sites;
    check_sites(l, MAX_STATIC_SITES)?;
    use Fermion::{Annihilate as A, Create as C};
    let re = |x: f64| C64::new(x, 0.0);
    let mut terms = Vec::new();
    for j in 0..l {
        let (k, bond) = if j + 1 < l { (j + 1, -params.coupling) } else { (0, params.coupling) };
        if k == j {
            continue;
        }
        terms.push((re(bond), vec![C(j), A(k)]));
        terms.push((re(bond), vec![C(k), A(j)]));
        terms.push((re(bond), vec![C(j), C(k)]));
        terms.push((re(bond), vec![A(k), A(j)]));
        terms.push((re(2.0 * params.field), vec![C(j), A(j)]));
    }
    let mut h = operator_from_terms(l, &terms);
    h.diag_mut().mapv_inplace(|z| z - params.field * l as f64);
    Ok(h)
}

/// Indices of even-parity basis states.
pub fn even_sector(sites: usize) -> Vec<usize> {
    (0..1usize << sites).filter(|b| b.count_ones() % 2 == 0).collect()
}

/// Restriction of an operator to the given basis states.
pub fn project(op: &Array2<C64>, basis: &[usize]) -> Array2<C64> {
    Array2::from_shape_fn((basis.len(), basis.len()), |(i, j)| op[[basis[i], basis[j]]])
}

/// Ascending eigenvalues of a Hermitian operator.
pub fn dense_spectrum(op: &Array2<C64>) -> Result<Vec<f64>> {
    Ok(op.eigvalsh(UPLO::Lower)?.to_vec())
}

/// Normalized state vector over the occupation basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKet {
    sites: usize,
    amplitudes: Array1<C64>,
}

impl DenseKet {
    pub fn new(sites: usize, amplitudes: Array1<C64>) -> Result<Self> {
        check_sites(sites, MAX_STATIC_SITES)?;
        if amplitudes.len() != 1 << sites {
            return Err(Error::InvalidParams(format!("ket has {} amplitudes for {sites} sites", amplitudes.len())));
        }
        let mut ket = Self { sites, amplitudes };
        ket.normalize()?;
        Ok(ket)
    }

    pub fn basis_state(sites: usize, bits: usize) -> Result<Self> {
        let mut a = Array1::zeros(1 << sites);
        if bits >= a.len() {
            return Err(Error::InvalidParams(format!("basis state {bits} out of range")));
        }
        a[bits] = C64::new(1.0, 0.0);
        Self::new(sites, a)
    }

    pub fn vacuum(sites: usize) -> Result<Self> {
        Self::basis_state(sites, 0)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if !(norm > NORM_FLOOR) || !norm.is_finite() {
            return Err(Error::NormCollapse { norm });
        }
        self.amplitudes.mapv_inplace(|z| z / norm);
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &DenseKet) -> C64 {
        self.amplitudes.iter().zip(other.amplitudes.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// `M|ψ⟩`, renormalized.
    pub fn apply(&self, m: &Array2<C64>) -> Result<Self> {
        let mut out = Self { sites: self.sites, amplitudes: m.dot(&self.amplitudes) };
        out.normalize()?;
        Ok(out)
    }

    /// `exp(Σ_j θ_j n_j)|ψ⟩`, renormalized.
    pub fn apply_number_exponential(&self, theta: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        for (b, z) in out.amplitudes.iter_mut().enumerate() {
            let exponent: f64 = theta.iter().enumerate().filter(|(j, _)| b >> j & 1 == 1).map(|(_, t)| t).sum();
            *z *= exponent.exp();
        }
        out.normalize()?;
        Ok(out)
    }

    pub fn occupations(&self) -> Vec<f64> {
        (0..self.sites)
            .map(|j| {
                self.amplitudes
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| b >> j & 1 == 1)
                    .map(|(_, z)| z.norm_sqr())
                    .sum()
            })
            .collect()
    }

    /// `⟨ops⟩` for a product of fermion operators.
    pub fn expectation(&self, ops: &[Fermion]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (b, z) in self.amplitudes.iter().enumerate() {
            if let Some((sign, out)) = apply_string(b, ops) {
                acc += self.amplitudes[out].conj() * z * sign;
            }
        }
        acc
    }

    /// `G_{jk} = ⟨c_j c†_k⟩` and `F_{jk} = ⟨c_j c_k⟩` by explicit operator action.
    pub fn correlations(&self) -> (Array2<C64>, Array2<C64>) {
        use Fermion::{Annihilate as A, Create as C};
        let l = self.sites;
        let g = Array2::from_shape_fn((l, l), |(j, k)| self.expectation(&[A(j), C(k)]));
        let f = Array2::from_shape_fn((l, l), |(j, k)| self.expectation(&[A(j), A(k)]));
        (g, f)
    }
}

/// `𝒩 exp(½ Σ Z_{jk} c†_j c†_k)|0⟩`, built as `Π_{j<k}(1 + Z_{jk} c†_j c†_k)|0⟩`.
pub fn gaussian_ket(z: &Array2<C64>) -> Result<DenseKet> {
    let l = z.nrows();
    check_sites(l, MAX_DYNAMIC_SITES)?;
    let mut amps = Array1::<C64>::zeros(1 << l);
    amps[0] = C64::new(1.0, 0.0);
    for j in 0..l {
        for k in j + 1..l {
            let zjk = z[[j, k]];
            if zjk == C64::new(0.0, 0.0) {
                continue;
            }
            let mut next = amps.clone();
            for (b, a) in amps.iter().enumerate() {
                if let Some((sign, out)) = apply_string(b, &[Fermion::Create(j), Fermion::Create(k)]) {
                    next[out] += zjk * sign * a;
                }
            }
            amps = next;
        }
    }
    DenseKet::new(l, amps)
}

/// Reduced density matrix of a block, by a plain partial trace over bits.
///
/// For parity eigenstates this coincides with the fermionic reduced state.
pub fn reduced_density_matrix(ket: &DenseKet, spec: &SubsystemSpec) -> Result<Array2<C64>> {
    let l = ket.sites();
    SubsystemSpec::new(spec.offset, spec.length, l)?;
    let inside: Vec<usize> = (spec.offset..spec.offset + spec.length).collect();
    let outside: Vec<usize> = (0..l).filter(|j| !inside.contains(j)).collect();
    let mut m = Array2::<C64>::zeros((1 << inside.len(), 1 << outside.len()));
    for (b, z) in ket.amplitudes().iter().enumerate() {
        let gather = |sites: &[usize]| sites.iter().enumerate().fold(0, |acc, (i, &j)| acc | (b >> j & 1) << i);
        m[[gather(&inside), gather(&outside)]] = *z;
    }
    Ok(m.dot(&m.t().mapv(|z| z.conj())))
}

fn block_probabilities(ket: &DenseKet, spec: &SubsystemSpec) -> Result<Vec<f64>> {
    let rho = reduced_density_matrix(ket, spec)?;
    Ok(rho.eigvalsh(UPLO::Lower)?.iter().map(|p| p.max(0.0)).collect())
}

/// Von Neumann entropy of a block.
pub fn dense_entropy(ket: &DenseKet, spec: &SubsystemSpec) -> Result<f64> {
    Ok(block_probabilities(ket, spec)?
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// Rényi entropy `ln(Tr ρ^β)/(1−β)` of a block.
pub fn dense_renyi(ket: &DenseKet, spec: &SubsystemSpec, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || beta == 1.0 {
        return Err(Error::InvalidParams(format!("Rényi index must be positive and not 1, got {beta}")));
    }
    let trace: f64 = block_probabilities(ket, spec)?.iter().filter(|p| **p > 0.0).map(|p| p.powf(beta)).sum();
    Ok(trace.ln() / (1.0 - beta))
}

/// Lowest eigenvector of a Hermitian operator on the whole Fock space.
pub fn dense_ground_state(h: &Array2<C64>, sites: usize) -> Result<(f64, DenseKet)> {
    let (vals, vecs) = fortran_copy(h).eigh(UPLO::Lower)?;
    Ok((vals[0], DenseKet::new(sites, vecs.column(0).to_owned())?))
}

fn fortran_copy(a: &Array2<C64>) -> Array2<C64> {
    use ndarray::ShapeBuilder;
    let mut f = Array2::<C64>::zeros(a.dim().f());
    f.assign(a);
    f
}

/// `e^{−iHt}|ψ⟩`.
pub fn evolve_unitary(ket: &DenseKet, h: &Array2<C64>, t: f64) -> Result<DenseKet> {
    ket.apply(&hermitian_expm(h, -I * t)?)
}

/// Observables recorded along a dense trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseSeries {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub occupations: Vec<Vec<f64>>,
    pub jumps: Vec<(usize, usize)>,
}

impl DenseSeries {
    fn record(&mut self, step: usize, dt: f64, ket: &DenseKet, spec: &SubsystemSpec) -> Result<()> {
        self.times.push(step as f64 * dt);
        self.entropy.push(dense_entropy(ket, spec)?);
        self.occupations.push(ket.occupations());
        Ok(())
    }
}

/// Which stochastic update a dense trajectory uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DenseScheme {
    Diffusion,
    Jumps,
    NoClick,
}

/// `H − (i/2) Σ_j m†_j m_j` with `m_j = √γ(1 + α n_j)`.
pub fn dense_effective_hamiltonian(params: &IsingParams, gamma: f64, alpha: f64) -> Result<Array2<C64>> {
    let mut h = build_dense_hamiltonian(params)?;
    let dim = h.nrows();
    for j in 0..params.sites {
        let m = (Array2::<C64>::eye(dim) + number_operator(params.sites, j) * alpha) * gamma.sqrt();
        let mm = m.t().mapv(|z| z.conj()).dot(&m);
        h = h - mm * (0.5 * I);
    }
    Ok(h)
}

fn run_dense(
    scheme: DenseScheme,
    ket: &DenseKet,
    params: &IsingParams,
    cfg: &TrajectoryConfig,
    spec: &SubsystemSpec,
    noise: &mut NoiseStream,
) -> Result<DenseSeries> {
    cfg.validate()?;
    let l = params.sites;
    check_sites(l, MAX_DYNAMIC_SITES)?;
    if ket.sites() != l {
        return Err(Error::InvalidParams("ket size does not match the chain".into()));
    }
    let propagator = match scheme {
        DenseScheme::Diffusion => hermitian_expm(&build_dense_hamiltonian(params)?, -I * cfg.dt)?,
        DenseScheme::Jumps | DenseScheme::NoClick => {
            expm(&dense_effective_hamiltonian(params, cfg.gamma, cfg.alpha)?.mapv(|z| -I * cfg.dt * z))?
        }
    };
    let mut ket = ket.clone();
    let mut series = DenseSeries::default();
    series.record(0, cfg.dt, &ket, spec)?;
    let mut dw = vec![0.0; l];
    for step in 1..=cfg.steps() {
        ket = match scheme {
            DenseScheme::Diffusion => {
                let evolved = ket.apply(&propagator)?;
                noise.wiener_increments(cfg.gamma * cfg.dt, &mut dw);
                let n = evolved.occupations();
                let theta: Vec<f64> = (0..l).map(|j| dw[j] + (2.0 * n[j] - 1.0) * cfg.gamma * cfg.dt).collect();
                evolved.apply_number_exponential(&theta)?
            }
            DenseScheme::Jumps => {
                let r = noise.uniform();
                let weight = cfg.alpha * (cfg.alpha + 2.0);
                let pi: Vec<f64> = ket.occupations().iter().map(|n| cfg.gamma * (1.0 + weight * n) * cfg.dt).collect();
                let total: f64 = pi.iter().sum();
                if total > 1.0 {
                    return Err(Error::JumpProbabilityOverflow { total });
                }
                match select_jump(&pi, r) {
                    Some(j) => {
                        series.jumps.push((step, j));
                        let jump = Array2::<C64>::eye(1 << l) + number_operator(l, j) * cfg.alpha;
                        ket.apply(&jump)?
                    }
                    None => ket.apply(&propagator)?,
                }
            }
            DenseScheme::NoClick => ket.apply(&propagator)?,
        };
        if step % cfg.record_every == 0 {
            series.record(step, cfg.dt, &ket, spec)?;
        }
    }
    Ok(series)
}

/// Exponential-integrator diffusion on the full ket, consuming noise exactly as
/// the Gaussian stepper does.
pub fn dense_qsd_trajectory(
    ket: &DenseKet,
    params: &IsingParams,
    cfg: &TrajectoryConfig,
    spec: &SubsystemSpec,
    noise: &mut NoiseStream,
) -> Result<DenseSeries> {
    run_dense(DenseScheme::Diffusion, ket, params, cfg, spec, noise)
}

/// Jump trajectory on the full ket with one uniform draw per step.
pub fn dense_qj_trajectory(
    ket: &DenseKet,
    params: &IsingParams,
    cfg: &TrajectoryConfig,
    spec: &SubsystemSpec,
    noise: &mut NoiseStream,
) -> Result<DenseSeries> {
    run_dense(DenseScheme::Jumps, ket, params, cfg, spec, noise)
}

/// Renormalized propagation under the effective non-Hermitian Hamiltonian.
pub fn dense_nh_trajectory(ket: &DenseKet, params: &IsingParams, cfg: &TrajectoryConfig, spec: &SubsystemSpec) -> Result<DenseSeries> {
    let mut unused = NoiseStream::new(cfg.seed, 0);
    run_dense(DenseScheme::NoClick, ket, params, cfg, spec, &mut unused)
}

/// Density matrix on the full Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDensityMatrix {
    rho: Array2<C64>,
}

impl DenseDensityMatrix {
    pub fn pure(ket: &DenseKet) -> Self {
        let a = ket.amplitudes().view().insert_axis(Axis(1));
        let b = ket.amplitudes().mapv(|z| z.conj()).insert_axis(Axis(0));
        Self { rho: a.dot(&b) }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.rho
    }

    pub fn trace(&self) -> C64 {
        self.rho.diag().sum()
    }

    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Tr(ρ O)`.
    pub fn expectation(&self, op: &Array2<C64>) -> C64 {
        self.rho.dot(op).diag().sum()
    }

    pub fn occupations(&self, sites: usize) -> Vec<f64> {
        let d = self.rho.diag();
        (0..sites)
            .map(|j| d.iter().enumerate().filter(|(b, _)| b >> j & 1 == 1).map(|(_, z)| z.re).sum())
            .collect()
    }
}

fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    a.dot(b) - b.dot(a)
}

/// `dρ/dt = −i[H, ρ] − (γ/2) Σ_j [m_j, [m_j, ρ]]` for Hermitian `m_j`.
pub fn lindblad_rhs(rho: &Array2<C64>, h: &Array2<C64>, m_ops: &[Array2<C64>], gamma: f64) -> Array2<C64> {
    let mut out = commutator(h, rho).mapv(|z| -I * z);
    for m in m_ops {
        out = out - commutator(m, &commutator(m, rho)) * (0.5 * gamma);
    }
    out
}

/// Fixed-step RK4 integration of the master equation up to `t` with steps of at
/// most `max_step`.
pub fn integrate_lindblad(
    rho0: &DenseDensityMatrix,
    h: &Array2<C64>,
    m_ops: &[Array2<C64>],
    gamma: f64,
    t: f64,
    max_step: f64,
) -> Result<DenseDensityMatrix> {
    if !(max_step > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParams("integration step and horizon must be positive".into()));
    }
    let steps = (t / max_step).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut rho = rho0.rho.clone();
    let initial_trace = rho0.trace().re;
    for _ in 0..steps {
        let k1 = lindblad_rhs(&rho, h, m_ops, gamma);
        let k2 = lindblad_rhs(&(&rho + &(&k1 * (0.5 * dt))), h, m_ops, gamma);
        let k3 = lindblad_rhs(&(&rho + &(&k2 * (0.5 * dt))), h, m_ops, gamma);
        let k4 = lindblad_rhs(&(&rho + &(&k3 * dt)), h, m_ops, gamma);
        rho = rho + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let drift = (rho.diag().sum() - initial_trace).norm();
        if !(drift <= TRACE_DRIFT_LIMIT) {
            return Err(Error::TraceDrift { drift });
        }
    }
    Ok(DenseDensityMatrix { rho })
}

/// Dephasing monitor operators `n_j`, optionally shifted to `1 + n_j`.
pub fn monitor_operators(sites: usize, shifted: bool) -> Vec<Array2<C64>> {
    let dim = 1 << sites;
    (0..sites)
        .map(|j| {
            let n = number_operator(sites, j);
            if shifted { n + Array2::<C64>::eye(dim) } else { n }
        })
        .collect()
}
