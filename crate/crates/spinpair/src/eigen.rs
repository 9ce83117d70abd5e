//! Hermitian eigensolver (cyclic Jacobi) and unitary propagators.
//!
//! Jacobi is quadratically convergent and unconditionally stable on the
//! tiny Hermitian matrices used here, which is worth more than the
//! throughput of a tridiagonalising solver.

use num_complex::Complex64 as C64;

use crate::matrix::ComplexMatrix;
use crate::{Result, SpinError};

const MAX_SWEEPS: usize = 60;

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of a unitary matrix, so `A V = V diag(lambda)`.
pub fn eigh(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if !m.is_hermitian() {
        return Err(SpinError::InvalidArgument(format!(
            "eigh requires a Hermitian matrix (defect {:.3e})",
            m.hermiticity_error()
        )));
    }
    let n = m.dim();
    let mut a = m.clone();
    // Symmetrize exactly so rounding in the input cannot bias the sweeps.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
    }
    let mut v = ComplexMatrix::identity(n);

    let scale = a.max_abs().max(1e-300);
    let tol = 1e-15 * scale;

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q, tol);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let evs: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| evs[i].partial_cmp(&evs[j]).unwrap());

    let mut values = Vec::with_capacity(n);
    let mut vectors = ComplexMatrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        values.push(evs[src]);
        for row in 0..n {
            vectors[(row, col)] = v[(row, src)];
        }
    }
    Ok((values, vectors))
}

/// One complex Jacobi rotation zeroing `a[(p, q)]`.
fn jacobi_rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize, tol: f64) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag <= tol {
        return;
    }
    let phase = apq / mag;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;

    // tan(2 theta) = 2|apq| / (app - aqq), solved in its stable form.
    let tau = (app - aqq) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    // Rotation block: R = [c, -s e^{i phi}; s e^{-i phi}, c] on (p, q).
    let sp = phase * s;
    let spc = sp.conj();
    let n = a.dim();

    // A <- A R
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c + akq * spc;
        a[(k, q)] = akq * c - akp * sp;
    }
    // A <- R^dagger A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c + aqk * sp;
        a[(q, k)] = aqk * c - apk * spc;
    }
    // Clean up what the rotation made exactly zero/real in exact arithmetic.
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    // V <- V R keeps A_orig = V A V^dagger.
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c + vkq * spc;
        v[(k, q)] = vkq * c - vkp * sp;
    }
}

/// Free-evolution propagator `U = exp(-2 pi i H t)` with `H` in MHz and `t`
/// in microseconds, computed through the eigendecomposition of `H`.
pub fn propagator(h: &ComplexMatrix, t_us: f64) -> Result<ComplexMatrix> {
    if !t_us.is_finite() {
        return Err(SpinError::InvalidArgument(
            "propagation time must be finite".into(),
        ));
    }
    let (values, vectors) = eigh(h)?;
    Ok(propagator_from_eigen(&values, &vectors, t_us))
}

/// Propagator from a precomputed eigensystem; used by the sequence simulator
/// to avoid re-diagonalising per delay.
pub fn propagator_from_eigen(values: &[f64], vectors: &ComplexMatrix, t_us: f64) -> ComplexMatrix {
    let n = vectors.dim();
    let mut phased = ComplexMatrix::zeros(n);
    for (j, &lambda) in values.iter().enumerate() {
        let phase = C64::from_polar(1.0, -2.0 * std::f64::consts::PI * lambda * t_us);
        for i in 0..n {
            phased[(i, j)] = vectors[(i, j)] * phase;
        }
    }
    phased.mul(&vectors.dagger())
}
