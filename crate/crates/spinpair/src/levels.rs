//! Magnetic-field sweeps of the eigenlevels and anticrossing location.

use serde::Serialize;

use crate::eigen::eigh;
use crate::numutil;
use crate::system::{BasisLabel, SpinSystemConfig};
use crate::{Result, SpinError};

/// Eigenlevels along a field sweep, with a diabatic product-basis tag per
/// level obtained from the dominant eigenvector component.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSweep {
    /// Field points, Gauss.
    pub b_values: Vec<f64>,
    /// Ascending eigenvalues per field point, MHz.
    pub levels: Vec<Vec<f64>>,
    /// Dominant product-basis tag per level, same layout as `levels`.
    pub labels: Vec<Vec<BasisLabel>>,
    /// Squared overlap with the dominant tag, same layout.
    pub overlaps: Vec<Vec<f64>>,
}

impl LevelSweep {
    /// Energy of the diabatic branch tagged `m` across the sweep.
    pub fn branch(&self, m: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.b_values.len());
        for (k, labels) in self.labels.iter().enumerate() {
            let idx = labels.iter().position(|l| l.matches(m)).ok_or_else(|| {
                SpinError::InvalidArgument(format!(
                    "branch {:?} not found at B = {} G",
                    m, self.b_values[k]
                ))
            })?;
            out.push(self.levels[k][idx]);
        }
        Ok(out)
    }
}

fn config_at(config: &SpinSystemConfig, b: f64) -> SpinSystemConfig {
    // Sweeps move along the configured field direction.
    let mut cfg = config.clone();
    let norm = (config.b_field.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let axis = if norm > 0.0 {
        [
            config.b_field[0] / norm,
            config.b_field[1] / norm,
            config.b_field[2] / norm,
        ]
    } else {
        [0.0, 0.0, 1.0]
    };
    cfg.b_field = [axis[0] * b, axis[1] * b, axis[2] * b];
    cfg
}

/// Eigenlevels and diabatic labels at one field value.
///
/// Labels follow maximal product-basis overlap; ties (overlap difference
/// below 1e-6) are broken by continuity against `previous` when given.
pub fn levels_at(
    config: &SpinSystemConfig,
    b: f64,
    previous: Option<(&[f64], &[BasisLabel])>,
) -> Result<(Vec<f64>, Vec<BasisLabel>, Vec<f64>)> {
    let cfg = config_at(config, b);
    let h = cfg.build_hamiltonian()?;
    let (vals, vecs) = eigh(&h)?;
    let basis = cfg.product_basis();
    let dim = vals.len();

    let mut labels = Vec::with_capacity(dim);
    let mut overlaps = Vec::with_capacity(dim);
    for col in 0..dim {
        let weights: Vec<f64> = (0..dim).map(|row| vecs[(row, col)].norm_sqr()).collect();
        let mut best = 0usize;
        for row in 1..dim {
            if weights[row] > weights[best] + 1e-6 {
                best = row;
            } else if (weights[row] - weights[best]).abs() <= 1e-6 {
                // tie: prefer the tag this eigenvalue carried at the
                // previous field point
                if let Some((prev_vals, prev_labels)) = previous {
                    let nearest = prev_vals
                        .iter()
                        .enumerate()
                        .min_by(|(_, a), (_, b)| {
                            (*a - vals[col])
                                .abs()
                                .partial_cmp(&(*b - vals[col]).abs())
                                .unwrap()
                        })
                        .map(|(i, _)| i);
                    if let Some(pi) = nearest {
                        if prev_labels[pi] == basis[row] {
                            best = row;
                        }
                    }
                }
            }
        }
        labels.push(basis[best].clone());
        overlaps.push(weights[best]);
    }
    Ok((vals, labels, overlaps))
}

/// One eigensolve per field point over `[b_min, b_max]`.
pub fn sweep_levels(
    config: &SpinSystemConfig,
    b_min: f64,
    b_max: f64,
    n: usize,
) -> Result<LevelSweep> {
    if n < 2 || !(b_min < b_max) {
        return Err(SpinError::InvalidArgument(format!(
            "sweep needs n >= 2 and b_min < b_max, got n = {n}, [{b_min}, {b_max}]"
        )));
    }
    config.validate()?;
    let step = (b_max - b_min) / (n - 1) as f64;
    let mut sweep = LevelSweep {
        b_values: Vec::with_capacity(n),
        levels: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        overlaps: Vec::with_capacity(n),
    };
    for k in 0..n {
        let b = b_min + k as f64 * step;
        let prev = sweep
            .levels
            .last()
            .map(|v| (v.as_slice(), sweep.labels.last().unwrap().as_slice()));
        let (vals, labels, overlaps) = levels_at(config, b, prev)?;
        sweep.b_values.push(b);
        sweep.levels.push(vals);
        sweep.labels.push(labels);
        sweep.overlaps.push(overlaps);
    }
    Ok(sweep)
}

/// Gap in MHz between the two diabatic branches at field `b`.
///
/// The two requested product states are assigned to two distinct
/// eigenstates by maximal joint overlap, which stays well-defined inside an
/// anticrossing where both eigenvectors are strongly mixed.
pub fn branch_gap(config: &SpinSystemConfig, branch_a: &[f64], branch_b: &[f64], b: f64) -> f64 {
    let cfg = config_at(config, b);
    let (Ok(ia), Ok(ib)) = (cfg.basis_index(branch_a), cfg.basis_index(branch_b)) else {
        return f64::INFINITY;
    };
    let Ok(h) = cfg.build_hamiltonian() else {
        return f64::INFINITY;
    };
    let Ok((vals, vecs)) = eigh(&h) else {
        return f64::INFINITY;
    };
    let dim = vals.len();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for i in 0..dim {
        let wa = vecs[(ia, i)].norm_sqr();
        for j in 0..dim {
            if i == j {
                continue;
            }
            let score = wa * vecs[(ib, j)].norm_sqr();
            if score > best.0 {
                best = (score, i, j);
            }
        }
    }
    (vals[best.1] - vals[best.2]).abs()
}

/// Result of the anticrossing search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Anticrossing {
    pub b_lac_gauss: f64,
    pub min_gap_mhz: f64,
}

/// Locates the field minimising the gap between two diabatic branches by a
/// coarse scan plus golden-section refinement to `tol_gauss`.
pub fn find_lac(
    config: &SpinSystemConfig,
    branch_a: &[f64],
    branch_b: &[f64],
    b_lo: f64,
    b_hi: f64,
    tol_gauss: f64,
) -> Result<Anticrossing> {
    config.validate()?;
    // fail fast if a branch tag does not exist at the bracket edges
    for b in [b_lo, b_hi] {
        let (_, labels, _) = levels_at(config, b, None)?;
        for branch in [branch_a, branch_b] {
            if !labels.iter().any(|l| l.matches(branch)) {
                return Err(SpinError::InvalidArgument(format!(
                    "branch {branch:?} not present at B = {b} G"
                )));
            }
        }
    }
    let gap = |b: f64| branch_gap(config, branch_a, branch_b, b);
    let (b_golden, gap_golden) = numutil::bracketed_min(gap, b_lo, b_hi, 257, tol_gauss)?;

    // Squared-gap polish: gap^2 is locally quadratic both for an exact
    // crossing (|linear|^2) and an avoided one (hyperbola), so one parabolic
    // vertex step recovers the true minimum far below the bracket width.
    let h = tol_gauss.max(1e-6);
    let g2 = |b: f64| {
        let g = gap(b);
        g * g
    };
    let (ym, y0, yp) = (g2(b_golden - h), g2(b_golden), g2(b_golden + h));
    let denom = ym - 2.0 * y0 + yp;
    let mut b_lac = b_golden;
    let mut min_gap = gap_golden;
    if denom > 0.0 {
        let vertex = b_golden + 0.5 * h * (ym - yp) / denom;
        if (vertex - b_golden).abs() <= h {
            let g = gap(vertex);
            if g < min_gap {
                b_lac = vertex;
                min_gap = g;
            }
        }
    }
    Ok(Anticrossing {
        b_lac_gauss: b_lac,
        min_gap_mhz: min_gap,
    })
}

/// Default golden-section tolerance on the anticrossing field, Gauss.
pub const LAC_TOL_GAUSS: f64 = 0.01;

#[cfg(test)]
mod tests {
    use super::*;

    /// NV-N pair at 1.5 nm with the separation at the magic angle: the
    /// branch crossing keeps its uncoupled location while the transverse
    /// tensor components open a visible gap.
    pub(crate) fn magic_angle_pair(d_fs: f64) -> SpinSystemConfig {
        let theta = (1.0f64 / 3.0f64.sqrt()).acos();
        SpinSystemConfig::nv_n_pair(
            d_fs,
            500.0,
            Some([1.5 * theta.sin(), 0.0, 1.5 * theta.cos()]),
        )
    }

    #[test]
    fn uncoupled_crossing_at_d_over_two_gamma() {
        let cfg = SpinSystemConfig::nv_n_pair(2870.0, 500.0, None);
        let lac = find_lac(
            &cfg,
            &[0.0, 0.5],
            &[-1.0, -0.5],
            400.0,
            620.0,
            LAC_TOL_GAUSS,
        )
        .unwrap();
        let expect = 2870.0 / (2.0 * cfg.constants.gamma_e);
        assert!(
            (lac.b_lac_gauss - expect).abs() < 0.05,
            "b_lac {}",
            lac.b_lac_gauss
        );
        assert!(lac.min_gap_mhz < 1e-6, "gap {}", lac.min_gap_mhz);
    }

    #[test]
    fn coupled_pair_shows_anticrossing_gap() {
        let cfg = magic_angle_pair(2881.0);
        let lac = find_lac(
            &cfg,
            &[0.0, 0.5],
            &[-1.0, -0.5],
            400.0,
            620.0,
            LAC_TOL_GAUSS,
        )
        .unwrap();
        assert!((lac.b_lac_gauss - 514.0).abs() < 0.5, "{}", lac.b_lac_gauss);
        assert!(lac.min_gap_mhz > 1.0, "gap {}", lac.min_gap_mhz);
    }

    #[test]
    fn golden_section_matches_brute_force_scan() {
        let cfg = magic_angle_pair(2881.0);
        let branch_a = [0.0, 0.5];
        let branch_b = [-1.0, -0.5];
        // brute-force oracle on a fine grid
        let (lo, hi) = (505.0, 525.0);
        let n = 100_000usize;
        let pitch = (hi - lo) / (n - 1) as f64;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..n {
            let b = lo + k as f64 * pitch;
            let g = branch_gap(&cfg, &branch_a, &branch_b, b);
            if g < best.0 {
                best = (g, b);
            }
        }
        let lac = find_lac(&cfg, &branch_a, &branch_b, lo, hi, pitch / 2.0).unwrap();
        assert!(
            (lac.b_lac_gauss - best.1).abs() <= pitch,
            "golden {} vs scan {}",
            lac.b_lac_gauss,
            best.1
        );
    }

    #[test]
    fn degeneracy_pattern_at_zero_field() {
        let cfg = SpinSystemConfig::nv_n_pair(2870.0, 0.0, None);
        let sweep = sweep_levels(&cfg, 0.0, 10.0, 2).unwrap();
        let at_zero = &sweep.levels[0];
        assert!(at_zero[0].abs() < 1e-9 && at_zero[1].abs() < 1e-9);
        for v in &at_zero[2..] {
            assert!((v - 2870.0).abs() < 1e-9);
        }
    }

    #[test]
    fn label_continuity_on_fine_sweep() {
        let cfg = magic_angle_pair(2881.0);
        let sweep = sweep_levels(&cfg, 490.0, 540.0, 101).unwrap();
        let step = sweep.b_values[1] - sweep.b_values[0];
        assert!(step <= 0.5 + 1e-12);
        for branch in [
            [0.0, 0.5],
            [0.0, -0.5],
            [-1.0, -0.5],
            [-1.0, 0.5],
            [1.0, 0.5],
            [1.0, -0.5],
        ] {
            let e = sweep.branch(&branch).unwrap();
            for k in 1..e.len() - 1 {
                // steepest one-sided slope in a small neighbourhood; at an
                // anticrossing the central difference vanishes right where
                // the diabatic branch sweeps across the gap
                let lo = k.saturating_sub(2);
                let hi = (k + 2).min(e.len() - 1);
                let local_slope = (lo..hi)
                    .map(|i| ((e[i + 1] - e[i]) / step).abs())
                    .fold(0.0f64, f64::max);
                let jump = (e[k + 1] - e[k]).abs();
                assert!(
                    jump <= local_slope * step * 2.0 + 1e-6,
                    "branch {branch:?} jumps {jump} at B = {}",
                    sweep.b_values[k]
                );
            }
        }
    }

    #[test]
    fn bracketing_error_when_minimum_not_interior() {
        let cfg = SpinSystemConfig::nv_n_pair(2870.0, 100.0, None);
        // gap between these branches decreases monotonically towards the
        // crossing at 512 G, so a bracket ending below it has no interior
        // minimum
        let err = find_lac(&cfg, &[0.0, 0.5], &[-1.0, -0.5], 100.0, 300.0, 0.01);
        assert!(matches!(err, Err(SpinError::Bracketing(_))));
    }

    #[test]
    fn gap_scales_linearly_with_coupling_strength() {
        let base = magic_angle_pair(2881.0);
        let tensor = base.effective_couplings().unwrap()[0].2;
        let gap_for = |scale: f64| {
            let mut cfg = base.clone();
            cfg.positions = None;
            cfg.couplings = vec![crate::system::Coupling {
                i: 0,
                j: 1,
                tensor_mhz: tensor.scaled(scale).m,
            }];
            find_lac(&cfg, &[0.0, 0.5], &[-1.0, -0.5], 450.0, 570.0, 0.005)
                .unwrap()
                .min_gap_mhz
        };
        let g1 = gap_for(0.5);
        let g2 = gap_for(1.0);
        let g4 = gap_for(2.0);
        assert!((g2 / g1 - 2.0).abs() < 0.01, "{}", g2 / g1);
        assert!((g4 / g2 - 2.0).abs() < 0.01, "{}", g4 / g2);
    }
}
