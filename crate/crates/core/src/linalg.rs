//! Small dense helpers on top of LAPACK.

use ndarray::{Array1, Array2, Axis, ShapeBuilder};
use ndarray_linalg::{Eig, Eigh, Inverse, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn to_complex(a: &Array2<f64>) -> Array2<C64> {
    a.mapv(|x| C64::new(x, 0.0))
}

pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// `X · diag(d) · X†`.
fn reassemble(vecs: &Array2<C64>, d: &Array1<C64>) -> Array2<C64> {
    let scaled = vecs * &d.view().insert_axis(Axis(0));
    scaled.dot(&dagger(vecs))
}

/// Ascending eigenvalues and eigenvectors (columns) of a Hermitian matrix.
pub(crate) fn hermitian_eigh(h: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    // The LAPACK wrapper returns conjugated eigenvectors for row-major input.
    let mut fortran = Array2::<C64>::zeros(h.dim().f());
    fortran.assign(h);
    Ok(fortran.eigh(UPLO::Lower)?)
}

/// `exp(factor · H)` for a Hermitian `H`, through its eigendecomposition.
pub fn hermitian_expm(h: &Array2<C64>, factor: C64) -> Result<Array2<C64>> {
    let (vals, vecs) = hermitian_eigh(h)?;
    let d = vals.mapv(|e| (factor * e).exp());
    Ok(reassemble(&vecs, &d))
}

/// Condition number above which the eigenvector route is abandoned.
const EIG_CONDITION_LIMIT: f64 = 1e6;

/// Dense matrix exponential of a general complex matrix.
///
/// Diagonalizes first; falls back to Padé scaling-and-squaring when the
/// eigenvector matrix is ill conditioned.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if let Ok((vals, vecs)) = a.eig() {
        if let Ok(inv) = vecs.inv() {
            let cond = opnorm_one(&vecs) * opnorm_one(&inv);
            if cond.is_finite() && cond < EIG_CONDITION_LIMIT {
                let d = vals.mapv(|z| z.exp());
                let scaled = &vecs * &d.view().insert_axis(Axis(0));
                let out = scaled.dot(&inv);
                if out.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Ok(out);
                }
            }
        }
    }
    let out = expm_pade(a)?;
    if out.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Conditioning { condition: opnorm_one(a) * n as f64 })
    }
}

pub fn opnorm_one(a: &Array2<C64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Degree-13 Padé approximant with scaling and squaring (Higham 2005).
pub fn expm_pade(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let norm = opnorm_one(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a.mapv(|z| z / 2f64.powi(s));
    let id = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let inner_u = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let u_poly = a6.dot(&inner_u) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = a.dot(&u_poly);
    let inner_v = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = a6.dot(&inner_v) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let denom = (&v - &u).inv()?;
    let mut r = denom.dot(&(&v + &u));
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pade_matches_eig_route_on_normal_matrix() {
        let mut h = Array2::<C64>::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                h[[i, j]] = C64::new((i + j) as f64 * 0.3, (i as f64 - j as f64) * 0.2);
            }
        }
        let h = &h + &dagger(&h);
        let exact = hermitian_expm(&h, -I * 0.7).unwrap();
        let pade = expm_pade(&h.mapv(|z| -I * 0.7 * z)).unwrap();
        let general = expm(&h.mapv(|z| -I * 0.7 * z)).unwrap();
        assert!(max_abs(&(&exact - &pade)) < 1e-12);
        assert!(max_abs(&(&exact - &general)) < 1e-12);
    }

    #[test]
    fn defective_matrix_falls_back() {
        // Jordan block: exp([[a,1],[0,a]]) = e^a [[1,1],[0,1]]
        let a = ndarray::arr2(&[[C64::new(0.5, 0.0), C64::new(1.0, 0.0)], [C64::new(0.0, 0.0), C64::new(0.5, 0.0)]]);
        let e = expm(&a).unwrap();
        let ea = 0.5f64.exp();
        assert!((e[[0, 1]].re - ea).abs() < 1e-12);
        assert!((e[[0, 0]].re - ea).abs() < 1e-12);
        assert!(e[[1, 0]].norm() < 1e-14);
    }
}
