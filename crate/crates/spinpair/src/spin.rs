//! Angular-momentum operators and spin species.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::matrix::ComplexMatrix;
use crate::{Result, SpinError};

/// One spin in the system: a label, a spin quantum number and a signed
/// gyromagnetic ratio in MHz/G.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpinSpecies {
    pub label: String,
    /// Spin quantum number; 1/2, 1 or 3/2.
    pub s: f64,
    /// Gyromagnetic ratio, MHz/G (signed).
    #[serde(rename = "gamma_mhz_per_g")]
    pub gamma: f64,
}

impl SpinSpecies {
    pub fn new(label: &str, s: f64, gamma: f64) -> Self {
        Self {
            label: label.to_string(),
            s,
            gamma,
        }
    }

    pub fn multiplicity(&self) -> usize {
        (2.0 * self.s + 1.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_spin_quantum_number(self.s)?;
        if !self.gamma.is_finite() {
            return Err(SpinError::InvalidArgument(format!(
                "spin '{}': gamma must be finite",
                self.label
            )));
        }
        Ok(())
    }

    /// Projection quantum numbers in basis order (descending m).
    pub fn m_values(&self) -> Vec<f64> {
        let mult = self.multiplicity();
        (0..mult).map(|k| self.s - k as f64).collect()
    }
}

pub fn check_spin_quantum_number(s: f64) -> Result<()> {
    let doubled = 2.0 * s;
    if s <= 0.0 || !doubled.is_finite() || (doubled - doubled.round()).abs() > 1e-12 {
        return Err(SpinError::InvalidArgument(format!(
            "spin quantum number must be a positive half-integer, got {s}"
        )));
    }
    Ok(())
}

/// The three Cartesian spin matrices for one spin.
pub struct SpinOperators {
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
}

/// Standard (2s+1)-dimensional angular-momentum matrices in the
/// descending-m basis |s>, |s-1>, ..., |-s>.
pub fn spin_operators(s: f64) -> Result<SpinOperators> {
    check_spin_quantum_number(s)?;
    let mult = (2.0 * s + 1.0).round() as usize;
    let mut sx = ComplexMatrix::zeros(mult);
    let mut sy = ComplexMatrix::zeros(mult);
    let mut sz = ComplexMatrix::zeros(mult);

    for k in 0..mult {
        let m = s - k as f64;
        sz[(k, k)] = C64::new(m, 0.0);
        // S+ |s, m> = sqrt(s(s+1) - m(m+1)) |s, m+1>; row k-1 is m+1.
        if k > 0 {
            let m_lower = m; // raising from this row
            let amp = (s * (s + 1.0) - m_lower * (m_lower + 1.0)).sqrt();
            sx[(k - 1, k)] += C64::new(amp / 2.0, 0.0);
            sx[(k, k - 1)] += C64::new(amp / 2.0, 0.0);
            sy[(k - 1, k)] += C64::new(0.0, -amp / 2.0);
            sy[(k, k - 1)] += C64::new(0.0, amp / 2.0);
        }
    }
    Ok(SpinOperators { sx, sy, sz })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commutator_defect(ops: &SpinOperators) -> f64 {
        // [Sx, Sy] - i Sz
        let comm = ops
            .sx
            .mul(&ops.sy)
            .add_scaled(C64::new(-1.0, 0.0), &ops.sy.mul(&ops.sx));
        let defect = comm.add_scaled(C64::new(0.0, -1.0), &ops.sz);
        defect.max_abs()
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let ops = spin_operators(0.5).unwrap();
        assert_eq!(ops.sz[(0, 0)], C64::new(0.5, 0.0));
        assert_eq!(ops.sz[(1, 1)], C64::new(-0.5, 0.0));
        assert_eq!(ops.sx[(0, 1)], C64::new(0.5, 0.0));
        assert_eq!(ops.sy[(0, 1)], C64::new(0.0, -0.5));
    }

    #[test]
    fn spin_one_matrices() {
        let ops = spin_operators(1.0).unwrap();
        assert_eq!(ops.sz[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(ops.sz[(1, 1)], C64::new(0.0, 0.0));
        assert_eq!(ops.sz[(2, 2)], C64::new(-1.0, 0.0));
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((ops.sx[(0, 1)].re - inv_sqrt2).abs() < 1e-15);
        assert!((ops.sx[(1, 2)].re - inv_sqrt2).abs() < 1e-15);
    }

    #[test]
    fn algebra_holds_for_all_supported_spins() {
        for s in [0.5, 1.0, 1.5] {
            let ops = spin_operators(s).unwrap();
            assert!(commutator_defect(&ops) < 1e-12, "s = {s}");
            // Casimir: Sx^2 + Sy^2 + Sz^2 = s(s+1) I
            let total = ops
                .sx
                .mul(&ops.sx)
                .add_scaled(C64::new(1.0, 0.0), &ops.sy.mul(&ops.sy))
                .add_scaled(C64::new(1.0, 0.0), &ops.sz.mul(&ops.sz));
            let expect = s * (s + 1.0);
            let defect = total.add_scaled(
                C64::new(-expect, 0.0),
                &ComplexMatrix::identity(total.dim()),
            );
            assert!(defect.max_abs() < 1e-12, "s = {s}");
            assert!(ops.sx.is_hermitian() && ops.sy.is_hermitian() && ops.sz.is_hermitian());
        }
    }

    #[test]
    fn rejects_invalid_spin() {
        assert!(spin_operators(0.7).is_err());
        assert!(spin_operators(-0.5).is_err());
    }
}
