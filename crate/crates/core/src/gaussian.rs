//! Pure fermionic Gaussian states in the Bogoliubov `(U, V)` representation.
//!
//! The Bogoliubov annihilators are `γ_k = Σ_j (U*_jk c_j + V*_jk c†_j)` and
//! the state is their common vacuum. Columns index modes, rows index sites.
//! Internally the pair is kept as the stacked `2L × L` frame `[U; V]`.

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2, Axis};
use ndarray_linalg::{Cholesky, Determinant, Diag, Inverse, SolveTriangular, QR, UPLO};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dagger, hermitian_eigh, hermitian_expm, max_abs, I};

/// Canonical-relation deviation above which a state is treated as unnormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;
/// Slack on occupations before they are clipped into `[0, 1]`.
pub const OCCUPATION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    frame: Array2<C64>,
}

/// Two-point functions `G_jj' = ⟨c_j c†_j'⟩` and `F_jj' = ⟨c_j c_j'⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrices {
    pub g: Array2<C64>,
    pub f: Array2<C64>,
}

impl CorrelationMatrices {
    pub fn sites(&self) -> usize {
        self.g.nrows()
    }

    /// The full `2L × 2L` matrix `𝔾 = ⟨Ψ Ψ†⟩`.
    pub fn nambu(&self) -> Array2<C64> {
        let l = self.sites();
        let mut out = Array2::zeros((2 * l, 2 * l));
        out.slice_mut(s![..l, ..l]).assign(&self.g);
        out.slice_mut(s![..l, l..]).assign(&self.f);
        out.slice_mut(s![l.., ..l]).assign(&dagger(&self.f));
        let lower = Array2::<C64>::eye(l) - self.g.t();
        out.slice_mut(s![l.., l..]).assign(&lower);
        out
    }
}

impl GaussianState {
    pub fn new(u: Array2<C64>, v: Array2<C64>) -> Result<Self> {
        let l = u.nrows();
        if u.dim() != (l, l) || v.dim() != (l, l) || l == 0 {
            return Err(Error::InvalidParams(format!(
                "U and V must both be square of equal size, got {:?} and {:?}",
                u.dim(),
                v.dim()
            )));
        }
        let mut frame = Array2::zeros((2 * l, l));
        frame.slice_mut(s![..l, ..]).assign(&u);
        frame.slice_mut(s![l.., ..]).assign(&v);
        Ok(Self { frame })
    }

    /// Wraps a stacked `2L × L` frame without normalizing it.
    pub fn from_frame(frame: Array2<C64>) -> Result<Self> {
        let (rows, cols) = frame.dim();
        if rows != 2 * cols || cols == 0 {
            return Err(Error::InvalidParams(format!("frame must be 2L x L, got {rows} x {cols}")));
        }
        Ok(Self { frame })
    }

    pub fn vacuum(sites: usize) -> Self {
        let mut frame = Array2::zeros((2 * sites, sites));
        frame.slice_mut(s![..sites, ..]).assign(&Array2::eye(sites));
        Self { frame }
    }

    pub fn fully_occupied(sites: usize) -> Self {
        let mut frame = Array2::zeros((2 * sites, sites));
        frame.slice_mut(s![sites.., ..]).assign(&Array2::eye(sites));
        Self { frame }
    }

    /// Random canonical state `exp(-iK)|0⟩` for a random BdG generator `K`.
    pub fn random<R: Rng + ?Sized>(sites: usize, rng: &mut R) -> Self {
        let l = sites;
        let mut gauss = || C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let mut a = Array2::<C64>::zeros((l, l));
        let mut b = Array2::<C64>::zeros((l, l));
        for i in 0..l {
            for j in 0..l {
                a[[i, j]] = gauss();
                b[[i, j]] = gauss();
            }
        }
        let a = (&a + &dagger(&a)) * 0.5;
        let b = (&b - &b.t()) * 0.5;
        let mut k = Array2::<C64>::zeros((2 * l, 2 * l));
        k.slice_mut(s![..l, ..l]).assign(&a);
        k.slice_mut(s![..l, l..]).assign(&b);
        k.slice_mut(s![l.., ..l]).assign(&b.mapv(|z| -z.conj()));
        k.slice_mut(s![l.., l..]).assign(&a.mapv(|z| -z.conj()));
        let unitary = hermitian_expm(&k, -I).expect("Hermitian eigensolve of a finite matrix");
        Self { frame: unitary.slice(s![.., ..l]).to_owned() }
    }

    pub fn sites(&self) -> usize {
        self.frame.ncols()
    }

    pub fn u(&self) -> ArrayView2<'_, C64> {
        self.frame.slice(s![..self.sites(), ..])
    }

    pub fn v(&self) -> ArrayView2<'_, C64> {
        self.frame.slice(s![self.sites().., ..])
    }

    pub fn frame(&self) -> &Array2<C64> {
        &self.frame
    }

    pub fn into_frame(self) -> Array2<C64> {
        self.frame
    }

    /// Largest violation of `U†U + V†V = I` and `UᵀV + VᵀU = 0`.
    pub fn canonical_deviation(&self) -> f64 {
        let l = self.sites();
        let gram = dagger(&self.frame).dot(&self.frame) - Array2::<C64>::eye(l);
        let u = self.u();
        let v = self.v();
        let cross = u.t().dot(&v);
        let anti = &cross + &cross.t();
        max_abs(&gram).max(max_abs(&anti))
    }

    pub fn correlations(&self) -> Result<CorrelationMatrices> {
        let deviation = self.canonical_deviation();
        if !(deviation <= NORMALIZATION_TOLERANCE) {
            return Err(Error::NotNormalized { deviation });
        }
        let u = self.u();
        let v = self.v();
        let ud = u.t().mapv(|z| z.conj());
        let vd = v.t().mapv(|z| z.conj());
        Ok(CorrelationMatrices { g: u.dot(&ud), f: u.dot(&vd) })
    }

    /// `⟨n_j⟩ = 1 − G_jj = Σ_k |V_jk|²`, range-checked then clipped to `[0, 1]`.
    pub fn occupations(&self) -> Result<Vec<f64>> {
        self.v()
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(j, row)| {
                let n: f64 = row.iter().map(|z| z.norm_sqr()).sum();
                if !(n <= 1.0 + OCCUPATION_TOLERANCE) {
                    return Err(Error::Corruption(format!("occupation of site {j} is {n}")));
                }
                Ok(n.clamp(0.0, 1.0))
            })
            .collect()
    }

    /// `Z = −(U†)⁻¹ V†`, the pair amplitude of `exp(½ Σ Z c†c†)|0⟩`.
    pub fn pairing_matrix(&self) -> Result<Array2<C64>> {
        let u_dag = dagger(&self.u().to_owned());
        let det = u_dag.det()?.norm();
        let scale = max_abs(&self.frame).max(f64::MIN_POSITIVE).powi(self.sites() as i32);
        if !(det > 1e-12 * scale) {
            return Err(Error::SingularPairing { det });
        }
        let v_dag = dagger(&self.v().to_owned());
        let z = -u_dag.inv()?.dot(&v_dag);
        let asym = max_abs(&(&z + &z.t()));
        if asym > 1e-8 * max_abs(&z).max(1.0) {
            return Err(Error::Corruption(format!("pairing matrix not antisymmetric ({asym:.3e})")));
        }
        Ok(z)
    }

    /// QR-normalizes the frame, keeping `Q` with a real positive `R` diagonal.
    pub fn restore_canonical(&self) -> Result<Self> {
        Ok(Self { frame: orthonormalize(&self.frame)? })
    }

    /// Largest entry of `UᵀV + VᵀU`, which vanishes for a Bogoliubov frame.
    pub fn pairing_defect(&self) -> f64 {
        let cross = self.u().t().dot(&self.v());
        max_abs(&(&cross + &cross.t()))
    }

    /// Projects an orthonormal frame back onto the Gaussian manifold.
    ///
    /// A valid Nambu projector `P = WW†` obeys `τ_x P* τ_x = 1 − P`. Rounding
    /// breaks this slowly under strong non-unitary steps; `P` is symmetrized
    /// under the map and its `L` leading eigenvectors become the new frame.
    /// The frame's gauge changes, the state does not.
    pub fn repair_pairing(&self) -> Result<Self> {
        let l = self.sites();
        let p = self.frame.dot(&dagger(&self.frame));
        let mut mirrored = Array2::<C64>::eye(2 * l);
        for i in 0..2 * l {
            for j in 0..2 * l {
                mirrored[[i, j]] -= p[[(i + l) % (2 * l), (j + l) % (2 * l)]].conj();
            }
        }
        let symmetric = (&p + &mirrored).mapv(|z| 0.5 * z);
        let (vals, vecs) = hermitian_eigh(&symmetric)?;
        if !(vals[l - 1] < 0.5 && vals[l] > 0.5) {
            return Err(Error::Corruption(format!(
                "Nambu projector has no spectral gap at 1/2 ({:.3e}, {:.3e})",
                vals[l - 1],
                vals[l]
            )));
        }
        Ok(Self { frame: vecs.slice(s![.., l..]).to_owned() })
    }

    /// In-place action of `exp(Σ_j θ_j n_j)` without renormalization.
    ///
    /// Conjugation gives `c_j → e^{−θ_j} c_j`, `c†_j → e^{θ_j} c†_j`, so row `j`
    /// of `U` picks up `e^{−θ_j}` and row `j` of `V` picks up `e^{θ_j}`.
    pub fn apply_number_exponential(&mut self, theta: &[f64]) {
        let l = self.sites();
        assert_eq!(theta.len(), l, "one exponent per site");
        for (j, &t) in theta.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let down = (-t).exp();
            let up = t.exp();
            self.frame.row_mut(j).mapv_inplace(|z| z * down);
            self.frame.row_mut(j + l).mapv_inplace(|z| z * up);
        }
    }

    /// Replaces the frame by `M · [U; V]`.
    pub fn left_multiply(&mut self, m: &Array2<C64>) {
        self.frame = m.dot(&self.frame);
    }
}

/// Largest `R_kk` spread for which the Gram-matrix route is trusted; its
/// orthogonality error grows like `ε · cond²`.
const CHOLESKY_SPREAD_LIMIT: f64 = 1e2;

/// QR of a `2L × L` frame with `R_kk > 0`; errors on rank deficiency.
///
/// Frames are normally one step away from orthonormal, so the Cholesky
/// factorization of the Gram matrix is used first; badly conditioned frames go
/// through Householder QR. Both give the same `Q`.
pub fn orthonormalize(frame: &Array2<C64>) -> Result<Array2<C64>> {
    if frame.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::CollapsedFrame);
    }
    if let Some(q) = cholesky_qr(frame) {
        return Ok(q);
    }
    householder_qr(frame)
}

fn cholesky_qr(frame: &Array2<C64>) -> Option<Array2<C64>> {
    let q = cholesky_pass(frame, dagger(frame).dot(frame), true)?;
    // A second pass on the nearly orthonormal result removes the residual
    // `ε · cond²` loss of orthogonality.
    let gram = dagger(&q).dot(&q);
    let deviation = gram
        .indexed_iter()
        .fold(0.0_f64, |m, ((i, j), z)| m.max((z - if i == j { 1.0 } else { 0.0 }).norm()));
    if deviation <= REORTHOGONALIZE_TOL {
        return Some(q);
    }
    cholesky_pass(&q, gram, false)
}

/// Orthogonality error above which a second Cholesky pass is made.
const REORTHOGONALIZE_TOL: f64 = 1e-12;

fn cholesky_pass(frame: &Array2<C64>, gram: Array2<C64>, check_spread: bool) -> Option<Array2<C64>> {
    let r = gram.cholesky(UPLO::Upper).ok()?;
    let diag: Vec<f64> = r.diag().iter().map(|z| z.re).collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    let smallest = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smallest > 0.0) || (check_spread && largest > CHOLESKY_SPREAD_LIMIT * smallest) {
        return None;
    }
    // Q R = W  <=>  R† Q† = W†
    let qh = dagger(&r)
        .solve_triangular(UPLO::Lower, Diag::NonUnit, &dagger(frame))
        .ok()?;
    Some(dagger(&qh))
}

fn householder_qr(frame: &Array2<C64>) -> Result<Array2<C64>> {
    let (mut q, r) = frame.qr()?;
    let n = frame.ncols();
    let diag: Vec<C64> = (0..n).map(|k| r[[k, k]]).collect();
    let largest = diag.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let smallest = diag.iter().fold(f64::INFINITY, |m, z| m.min(z.norm()));
    if !(largest > 0.0) || smallest <= 1e-13 * largest {
        return Err(Error::CollapsedFrame);
    }
    for (k, d) in diag.iter().enumerate() {
        let phase = d / d.norm();
        q.column_mut(k).mapv_inplace(|z| z * phase);
    }
    Ok(q)
}

pub fn correlations(state: &GaussianState) -> Result<CorrelationMatrices> {
    state.correlations()
}

pub fn occupations(state: &GaussianState) -> Result<Vec<f64>> {
    state.occupations()
}

pub fn pairing_matrix(state: &GaussianState) -> Result<Array2<C64>> {
    state.pairing_matrix()
}

pub fn restore_canonical(state: &GaussianState) -> Result<GaussianState> {
    state.restore_canonical()
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"GFST";
const SNAPSHOT_VERSION: u32 = 1;

impl GaussianState {
    /// Binary snapshot: 16-byte header (`GFST`, version u32, L u32, 4 reserved
    /// bytes), then `U` and `V` as row-major little-endian complex doubles.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let l = self.sites();
        let mut header = [0u8; 16];
        header[..4].copy_from_slice(SNAPSHOT_MAGIC);
        header[4..8].copy_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        header[8..12].copy_from_slice(&(l as u32).to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(2 * l * l * 16);
        for z in self.frame.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let l = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if l == 0 {
            return Err(Error::Snapshot("zero sites".into()));
        }
        let mut buf = vec![0u8; 2 * l * l * 16];
        r.read_exact(&mut buf)?;
        let values: Vec<C64> = buf
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let frame = Array2::from_shape_vec((2 * l, l), values)
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(Self { frame })
    }
}
