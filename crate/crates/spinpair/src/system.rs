//! Declarative spin-system description and Hamiltonian assembly.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::matrix::ComplexMatrix;
use crate::spin::{spin_operators, SpinSpecies};
use crate::tensor::{dipolar_tensor, InteractionTensor};
use crate::{Result, SpinError};

/// Dense-solver budget on the Hilbert-space dimension.
pub const MAX_DIM: usize = 36;

/// Zero-field term for one spin: either the single-parameter axial form
/// `d Sz^2` or a full symmetric 3x3 tensor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ZeroFieldSpec {
    Axial {
        axial_d_mhz: f64,
    },
    Full {
        matrix_mhz: [[f64; 3]; 3],
    },
}

impl ZeroFieldSpec {
    pub fn tensor(&self) -> Result<InteractionTensor> {
        match *self {
            ZeroFieldSpec::Axial { axial_d_mhz } => Ok(InteractionTensor::axial(axial_d_mhz)),
            ZeroFieldSpec::Full { matrix_mhz } => InteractionTensor::new(matrix_mhz),
        }
    }
}

/// Explicit bilinear coupling between spins `i` and `j`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub tensor_mhz: [[f64; 3]; 3],
}

/// Full description of the spin system: species, tensors, geometry, field.
///
/// The Hamiltonian built from it is
/// `sum_i gamma_i B.S_i + sum_i S_i.D_i.S_i + sum_(i,j) S_i.T_ij.S_j`
/// in MHz, with every operator embedded into the product space by Kronecker
/// products. When positions are given, point-dipole tensors are derived for
/// every pair that has no explicit coupling entry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpinSystemConfig {
    pub spins: Vec<SpinSpecies>,
    /// Optional zero-field tensor per spin; empty list means none anywhere.
    #[serde(default, rename = "zero_field_mhz")]
    pub zero_field: Vec<Option<ZeroFieldSpec>>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    /// Optional position per spin, nm.
    #[serde(default, rename = "positions_nm")]
    pub positions: Option<Vec<[f64; 3]>>,
    /// Static magnetic field, Gauss. The z axis is the NV symmetry axis.
    #[serde(rename = "b_gauss")]
    pub b_field: [f64; 3],
    #[serde(default)]
    pub constants: PhysicalConstants,
}

impl SpinSystemConfig {
    /// NV (spin 1, axial zero-field `d_fs`) coupled to a substitutional N
    /// (spin 1/2), field along the NV axis. `n_position_nm` places the N
    /// relative to the NV at the origin; `None` leaves the pair uncoupled.
    pub fn nv_n_pair(d_fs_mhz: f64, b_gauss: f64, n_position_nm: Option<[f64; 3]>) -> Self {
        let constants = PhysicalConstants::default();
        let gamma = constants.gamma_e;
        Self {
            spins: vec![
                SpinSpecies::new("NV", 1.0, gamma),
                SpinSpecies::new("N", 0.5, gamma),
            ],
            zero_field: vec![
                Some(ZeroFieldSpec::Axial {
                    axial_d_mhz: d_fs_mhz,
                }),
                None,
            ],
            couplings: Vec::new(),
            positions: n_position_nm.map(|p| vec![[0.0, 0.0, 0.0], p]),
            b_field: [0.0, 0.0, b_gauss],
            constants,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spins.is_empty() {
            return Err(SpinError::InvalidArgument("no spins configured".into()));
        }
        for sp in &self.spins {
            sp.validate()?;
        }
        self.constants.validate()?;
        let dim = self.dim();
        if dim > MAX_DIM {
            return Err(SpinError::Capacity { dim, max: MAX_DIM });
        }
        if !self.zero_field.is_empty() && self.zero_field.len() != self.spins.len() {
            return Err(SpinError::InvalidArgument(format!(
                "zero_field_mhz must list one entry per spin ({} != {})",
                self.zero_field.len(),
                self.spins.len()
            )));
        }
        for zf in self.zero_field.iter().flatten() {
            zf.tensor()?;
        }
        for c in &self.couplings {
            if c.i == c.j || c.i >= self.spins.len() || c.j >= self.spins.len() {
                return Err(SpinError::InvalidArgument(format!(
                    "coupling indices ({}, {}) must be distinct and in range",
                    c.i, c.j
                )));
            }
            InteractionTensor::new(c.tensor_mhz)?;
        }
        if let Some(pos) = &self.positions {
            if pos.len() != self.spins.len() {
                return Err(SpinError::InvalidArgument(format!(
                    "positions_nm must list one entry per spin ({} != {})",
                    pos.len(),
                    self.spins.len()
                )));
            }
        }
        if self.b_field.iter().any(|v| !v.is_finite()) {
            return Err(SpinError::InvalidArgument(
                "b_gauss components must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.spins.iter().map(|s| s.multiplicity()).product()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.spins.iter().map(|s| s.multiplicity()).collect()
    }

    /// Explicit couplings plus position-derived dipolar tensors for pairs
    /// without an explicit entry.
    pub fn effective_couplings(&self) -> Result<Vec<(usize, usize, InteractionTensor)>> {
        let mut out: Vec<(usize, usize, InteractionTensor)> = self
            .couplings
            .iter()
            .map(|c| Ok((c.i, c.j, InteractionTensor::new(c.tensor_mhz)?)))
            .collect::<Result<_>>()?;
        if let Some(pos) = &self.positions {
            for i in 0..self.spins.len() {
                for j in (i + 1)..self.spins.len() {
                    let explicit = out
                        .iter()
                        .any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i));
                    if explicit {
                        continue;
                    }
                    let r = [
                        pos[i][0] - pos[j][0],
                        pos[i][1] - pos[j][1],
                        pos[i][2] - pos[j][2],
                    ];
                    let dip = dipolar_tensor(
                        r,
                        self.spins[i].gamma,
                        self.spins[j].gamma,
                        &self.constants,
                    )?;
                    out.push((i, j, dip.tensor));
                }
            }
        }
        Ok(out)
    }

    /// Operator for spin `idx` embedded into the product space.
    pub fn embed(&self, op: &ComplexMatrix, idx: usize) -> ComplexMatrix {
        let mults = self.multiplicities();
        let before: usize = mults[..idx].iter().product();
        let after: usize = mults[idx + 1..].iter().product();
        ComplexMatrix::identity(before)
            .kron(op)
            .kron(&ComplexMatrix::identity(after))
    }

    /// Cartesian spin operators of spin `idx`, embedded.
    pub fn embedded_operators(&self, idx: usize) -> Result<[ComplexMatrix; 3]> {
        let ops = spin_operators(self.spins[idx].s)?;
        Ok([
            self.embed(&ops.sx, idx),
            self.embed(&ops.sy, idx),
            self.embed(&ops.sz, idx),
        ])
    }

    /// Assembles the full Hamiltonian in MHz.
    pub fn build_hamiltonian(&self) -> Result<ComplexMatrix> {
        self.validate()?;
        let dim = self.dim();
        let mut h = ComplexMatrix::zeros(dim);
        let one = C64::new(1.0, 0.0);

        let mut embedded: Vec<[ComplexMatrix; 3]> = Vec::with_capacity(self.spins.len());
        for idx in 0..self.spins.len() {
            embedded.push(self.embedded_operators(idx)?);
        }

        // Zeeman terms gamma_i B . S_i
        for (idx, sp) in self.spins.iter().enumerate() {
            for axis in 0..3 {
                let w = sp.gamma * self.b_field[axis];
                if w != 0.0 {
                    h = h.add_scaled(C64::new(w, 0.0), &embedded[idx][axis]);
                }
            }
        }

        // Zero-field terms S_i . D_i . S_i, built in the single-spin space.
        for (idx, zf) in self.zero_field.iter().enumerate() {
            let Some(spec) = zf else { continue };
            let tensor = spec.tensor()?;
            if tensor.is_zero() {
                continue;
            }
            let ops = spin_operators(self.spins[idx].s)?;
            let cart = [&ops.sx, &ops.sy, &ops.sz];
            let mut local = ComplexMatrix::zeros(self.spins[idx].multiplicity());
            for a in 0..3 {
                for b in 0..3 {
                    let w = tensor.m[a][b];
                    if w != 0.0 {
                        local = local.add_scaled(C64::new(w, 0.0), &cart[a].mul(cart[b]));
                    }
                }
            }
            h = h.add_scaled(one, &self.embed(&local, idx));
        }

        // Bilinear couplings S_i . T . S_j
        for (i, j, tensor) in self.effective_couplings()? {
            for a in 0..3 {
                for b in 0..3 {
                    let w = tensor.m[a][b];
                    if w != 0.0 {
                        h = h.add_scaled(C64::new(w, 0.0), &embedded[i][a].mul(&embedded[j][b]));
                    }
                }
            }
        }

        debug_assert!(h.is_hermitian());
        Ok(h)
    }

    /// Product-basis labels in Kronecker order (first spin slowest).
    pub fn product_basis(&self) -> Vec<BasisLabel> {
        let m_lists: Vec<Vec<f64>> = self.spins.iter().map(|s| s.m_values()).collect();
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim);
        for index in 0..dim {
            let mut rem = index;
            let mut m = vec![0.0; self.spins.len()];
            for (k, list) in m_lists.iter().enumerate().rev() {
                m[k] = list[rem % list.len()];
                rem /= list.len();
            }
            out.push(BasisLabel { m });
        }
        out
    }

    /// Index of the product-basis state with the given projections.
    pub fn basis_index(&self, m: &[f64]) -> Result<usize> {
        if m.len() != self.spins.len() {
            return Err(SpinError::InvalidArgument(format!(
                "expected {} projection quantum numbers, got {}",
                self.spins.len(),
                m.len()
            )));
        }
        let mut index = 0usize;
        for (k, sp) in self.spins.iter().enumerate() {
            let values = sp.m_values();
            let pos = values
                .iter()
                .position(|&v| (v - m[k]).abs() < 1e-9)
                .ok_or_else(|| {
                    SpinError::InvalidArgument(format!(
                        "m = {} is not a projection of spin '{}'",
                        m[k], sp.label
                    ))
                })?;
            index = index * values.len() + pos;
        }
        Ok(index)
    }
}

/// Product-basis state tag: one projection quantum number per spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisLabel {
    pub m: Vec<f64>,
}

impl BasisLabel {
    pub fn matches(&self, m: &[f64]) -> bool {
        self.m.len() == m.len()
            && self
                .m
                .iter()
                .zip(m.iter())
                .all(|(a, b)| (a - b).abs() < 1e-9)
    }
}

impl std::fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|")?;
        for (k, m) in self.m.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            let doubled = (2.0 * m).round() as i64;
            if doubled % 2 == 0 {
                write!(f, "{:+}", doubled / 2)?;
            } else {
                write!(f, "{:+}/2", doubled)?;
            }
        }
        write!(f, ">")
    }
}
