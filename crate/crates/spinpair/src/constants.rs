use serde::{Deserialize, Serialize};

use crate::{Result, SpinError};

/// Magnetic constants in the working unit system (MHz, Gauss, nm).
///
/// `d0_ee` is the electron-electron point-dipole constant: two electron
/// spins separated by r nm couple with strength `d0_ee / r^3` MHz. The
/// electron-nuclear constant scales with the ratio of gyromagnetic ratios.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    /// Electron gyromagnetic ratio, MHz/G.
    #[serde(rename = "gamma_e_mhz_per_g")]
    pub gamma_e: f64,
    /// 13C nuclear gyromagnetic ratio, MHz/G.
    #[serde(rename = "gamma_c13_mhz_per_g")]
    pub gamma_c13: f64,
    /// Electron-electron dipolar constant, MHz nm^3.
    #[serde(rename = "d0_ee_mhz_nm3")]
    pub d0_ee: f64,
    /// Electron-13C dipolar constant, MHz nm^3. `None` derives it as
    /// `d0_ee * gamma_c13 / gamma_e`.
    #[serde(rename = "d0_en_mhz_nm3")]
    pub d0_en: Option<f64>,
}

pub const GAMMA_E_MHZ_PER_G: f64 = 2.8025;
pub const GAMMA_C13_MHZ_PER_G: f64 = 1.0705e-3;
pub const D0_EE_MHZ_NM3: f64 = 52.04;

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            gamma_e: GAMMA_E_MHZ_PER_G,
            gamma_c13: GAMMA_C13_MHZ_PER_G,
            d0_ee: D0_EE_MHZ_NM3,
            d0_en: None,
        }
    }
}

impl PhysicalConstants {
    /// Electron-nuclear dipolar constant, MHz nm^3.
    pub fn d0_en(&self) -> f64 {
        self.d0_en
            .unwrap_or(self.d0_ee * self.gamma_c13 / self.gamma_e)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_e", self.gamma_e),
            ("gamma_c13", self.gamma_c13),
            ("d0_ee", self.d0_ee),
            ("d0_en", self.d0_en()),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SpinError::InvalidArgument(format!(
                    "constant {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}
