//! Synthesis of optically detected ESR spectra.
//!
//! Only the optically active spin couples to the readout, so line
//! intensities are magnetic-dipole matrix elements of that spin's Sx taken
//! between eigenstates, weighted by population differences. Populations
//! enter linearly and default to optical pumping of the drive spin into
//! m = 0 with all other spins thermally flat.

use serde::Serialize;

use crate::eigen::eigh;
use crate::system::{BasisLabel, SpinSystemConfig};
use crate::{Result, SpinError};

/// Lines weaker than this fraction of the strongest line are dropped.
pub const LINE_KEEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumLine {
    /// Transition frequency, MHz.
    pub frequency: f64,
    /// Dimensionless intensity, >= 0.
    pub intensity: f64,
    pub from_state: BasisLabel,
    pub to_state: BasisLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub lines: Vec<SpectrumLine>,
    /// Frequency samples, MHz.
    pub grid: Vec<f64>,
    /// Sampled lineshape, sum of per-line Lorentzians.
    pub amplitude: Vec<f64>,
    /// FWHM of the Lorentzian lineshape, MHz.
    pub linewidth: f64,
    /// Per-basis-state occupation used for the intensities.
    pub population_weights: Vec<f64>,
}

/// Optional explicit frequency grid for the sampled lineshape.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
    pub n: usize,
}

/// Populations over the product basis: optical pumping concentrates the
/// drive spin in m = 0, the other spins stay flat.
pub fn pumped_populations(config: &SpinSystemConfig, drive_spin: usize) -> Vec<f64> {
    let basis = config.product_basis();
    let weights: Vec<f64> = basis
        .iter()
        .map(|label| {
            if label.m[drive_spin].abs() < 1e-9 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

pub fn esr_spectrum(
    config: &SpinSystemConfig,
    linewidth: f64,
    populations: Option<&[f64]>,
    drive_spin: usize,
    grid: Option<GridSpec>,
) -> Result<Spectrum> {
    if !(linewidth > 0.0) {
        return Err(SpinError::InvalidArgument(format!(
            "linewidth must be positive, got {linewidth}"
        )));
    }
    config.validate()?;
    if drive_spin >= config.spins.len() {
        return Err(SpinError::InvalidArgument(format!(
            "drive_spin {drive_spin} out of range"
        )));
    }
    let dim = config.dim();
    let basis_pop: Vec<f64> = match populations {
        Some(p) => {
            if p.len() != dim {
                return Err(SpinError::InvalidArgument(format!(
                    "populations must have one entry per basis state ({} != {dim})",
                    p.len()
                )));
            }
            p.to_vec()
        }
        None => pumped_populations(config, drive_spin),
    };

    let h = config.build_hamiltonian()?;
    let (vals, vecs) = eigh(&h)?;
    let sx = config.embedded_operators(drive_spin)?[0].clone();
    let basis = config.product_basis();

    // eigenstate populations and dominant labels
    let mut eig_pop = vec![0.0; dim];
    let mut eig_label = Vec::with_capacity(dim);
    for col in 0..dim {
        let mut best = (0.0, 0usize);
        for row in 0..dim {
            let w = vecs[(row, col)].norm_sqr();
            eig_pop[col] += w * basis_pop[row];
            if w > best.0 {
                best = (w, row);
            }
        }
        eig_label.push(basis[best.1].clone());
    }

    // Sx in the eigenbasis
    let sx_eig = vecs.dagger().mul(&sx).mul(&vecs);

    let mut lines: Vec<SpectrumLine> = Vec::new();
    for i in 0..dim {
        for f in 0..dim {
            let freq = vals[f] - vals[i];
            if freq <= 0.0 {
                continue;
            }
            let weight = eig_pop[i] - eig_pop[f];
            if weight <= 0.0 {
                continue;
            }
            let strength = sx_eig[(f, i)].norm_sqr();
            let intensity = strength * weight;
            if intensity > 0.0 {
                lines.push(SpectrumLine {
                    frequency: freq,
                    intensity,
                    from_state: eig_label[i].clone(),
                    to_state: eig_label[f].clone(),
                });
            }
        }
    }
    let max_intensity = lines.iter().map(|l| l.intensity).fold(0.0f64, f64::max);
    lines.retain(|l| l.intensity > LINE_KEEP_FRACTION * max_intensity);
    lines.sort_by(|a, b| a.frequency.partial_cmp(&b.frequency).unwrap());

    let (f_min, f_max, n) = match grid {
        Some(g) => (g.f_min_mhz, g.f_max_mhz, g.n.max(2)),
        None => {
            let lo = lines.first().map(|l| l.frequency).unwrap_or(0.0);
            let hi = lines.last().map(|l| l.frequency).unwrap_or(1.0);
            (lo - 5.0 * linewidth, hi + 5.0 * linewidth, 2001)
        }
    };
    let step = (f_max - f_min) / (n - 1) as f64;
    let half = linewidth / 2.0;
    let norm = 1.0 / std::f64::consts::PI;
    let mut grid_points = Vec::with_capacity(n);
    let mut amplitude = Vec::with_capacity(n);
    for k in 0..n {
        let f = f_min + k as f64 * step;
        let mut acc = 0.0;
        for line in &lines {
            let df = f - line.frequency;
            acc += line.intensity * norm * half / (df * df + half * half);
        }
        grid_points.push(f);
        amplitude.push(acc);
    }

    Ok(Spectrum {
        lines,
        grid: grid_points,
        amplitude,
        linewidth,
        population_weights: basis_pop,
    })
}

impl Spectrum {
    /// Strongest line whose initial state carries the given tag.
    pub fn line_from(&self, from_m: &[f64]) -> Option<&SpectrumLine> {
        self.lines
            .iter()
            .filter(|l| l.from_state.matches(from_m))
            .max_by(|a, b| a.intensity.partial_cmp(&b.intensity).unwrap())
    }

    /// The two strongest lines inside `[f_lo, f_hi]`, ascending in frequency.
    pub fn strongest_pair(&self, f_lo: f64, f_hi: f64) -> Option<(&SpectrumLine, &SpectrumLine)> {
        let mut in_window: Vec<&SpectrumLine> = self
            .lines
            .iter()
            .filter(|l| l.frequency >= f_lo && l.frequency <= f_hi)
            .collect();
        if in_window.len() < 2 {
            return None;
        }
        in_window.sort_by(|a, b| b.intensity.partial_cmp(&a.intensity).unwrap());
        let (a, b) = (in_window[0], in_window[1]);
        if a.frequency <= b.frequency {
            Some((a, b))
        } else {
            Some((b, a))
        }
    }

    /// Splitting of the low-frequency (m = 0 -> -1) doublet, MHz.
    ///
    /// Looks at lines below the zero-field frequency `d_fs` and returns the
    /// distance between the two strongest ones.
    pub fn aa_doublet_splitting(&self, d_fs_mhz: f64) -> Option<f64> {
        self.strongest_pair(0.0, d_fs_mhz)
            .map(|(a, b)| b.frequency - a.frequency)
    }
}

/// Doublet polarization P = (I_A* - I_A) / (I_A* + I_A).
pub fn polarization_from_intensities(i_a: f64, i_astar: f64) -> Result<f64> {
    if i_a < 0.0 || i_astar < 0.0 {
        return Err(SpinError::InvalidArgument(
            "intensities must be non-negative".into(),
        ));
    }
    let total = i_a + i_astar;
    if total == 0.0 {
        return Err(SpinError::UndefinedPolarization);
    }
    Ok((i_astar - i_a) / total)
}
