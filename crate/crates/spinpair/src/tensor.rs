//! Symmetric interaction tensors and the point-dipole coupling.

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::{Result, SpinError};

/// Relative symmetry tolerance for interaction tensors.
const SYMMETRY_TOL: f64 = 1e-12;

/// A real symmetric 3x3 coupling tensor in MHz, as it appears in bilinear
/// spin terms `S_i . M . S_j`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct InteractionTensor {
    pub m: [[f64; 3]; 3],
}

impl InteractionTensor {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let t = Self { m };
        t.validate()?;
        Ok(t)
    }

    pub fn zero() -> Self {
        Self { m: [[0.0; 3]; 3] }
    }

    pub fn diagonal(xx: f64, yy: f64, zz: f64) -> Self {
        let mut m = [[0.0; 3]; 3];
        m[0][0] = xx;
        m[1][1] = yy;
        m[2][2] = zz;
        Self { m }
    }

    /// Axial tensor diag(0, 0, d): the usual single-parameter zero-field
    /// term `d Sz^2` with eigenvalues {0, d, d} for a spin 1.
    pub fn axial(d: f64) -> Self {
        Self::diagonal(0.0, 0.0, d)
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self
            .m
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1e-300);
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (self.m[i][j] - self.m[j][i]).abs() > SYMMETRY_TOL * scale {
                    return Err(SpinError::InvalidArgument(format!(
                        "interaction tensor not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn scaled(&self, f: f64) -> Self {
        let mut m = self.m;
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v *= f;
            }
        }
        Self { m }
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Point-dipole coupling tensor plus its scalar coupling strength.
#[derive(Debug, Clone, Copy)]
pub struct DipolarCoupling {
    pub tensor: InteractionTensor,
    /// Coupling strength d = d0 (gamma1 gamma2 / gamma_e^2) / r^3, MHz.
    /// Equals the secular doublet splitting of an on-axis pair.
    pub coupling_mhz: f64,
}

/// Magnetic point-dipole tensor for two spins separated by `r_vec` (nm).
///
/// The tensor is `(d/2) (I - 3 r_hat r_hat^T)` with `d` the scalar coupling
/// strength above; the normalisation is fixed so that the zz component of an
/// on-axis pair is `-d` and the ESR doublet it produces is split by exactly
/// `d`. It is traceless and rotation-covariant.
pub fn dipolar_tensor(
    r_vec: [f64; 3],
    gamma1: f64,
    gamma2: f64,
    constants: &PhysicalConstants,
) -> Result<DipolarCoupling> {
    let r2 = r_vec[0] * r_vec[0] + r_vec[1] * r_vec[1] + r_vec[2] * r_vec[2];
    if r2 <= 0.0 || !r2.is_finite() {
        return Err(SpinError::InvalidArgument(
            "dipolar tensor requires a nonzero separation vector".into(),
        ));
    }
    let r = r2.sqrt();
    let rhat = [r_vec[0] / r, r_vec[1] / r, r_vec[2] / r];
    let d0 = constants.d0_ee * (gamma1 * gamma2) / (constants.gamma_e * constants.gamma_e);
    let d = d0 / (r * r * r);

    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[i][j] = 0.5 * d * (delta - 3.0 * rhat[i] * rhat[j]);
        }
    }
    Ok(DipolarCoupling {
        tensor: InteractionTensor { m },
        coupling_mhz: d,
    })
}
