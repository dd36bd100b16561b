//! Numerical thresholds shared by every module.
//!
//! All values can be overridden by name (see [`Tolerances::set`]), which is
//! how the command line exposes them as `--tol.<name>=<value>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Structural checks on input matrices (self-adjointness, chirality),
    /// relative to the largest coefficient norm.
    pub sa: f64,
    /// Derived identities (adjoint symmetry, recurrence residuals).
    pub num: f64,
    /// Condition-number cutoff above which `A_R` is treated as singular.
    pub sing: f64,
    /// Half-width of the unit-circle band for Bloch modes.
    pub rho: f64,
    /// Relative eigenvalue clustering radius.
    pub cluster: f64,
    /// Relative singular-value threshold for kernel dimensions.
    pub kernel: f64,
    /// Relative coefficient threshold for polynomial degree deflation.
    pub coeff: f64,
    /// Maximum residual of the evaluation-interpolation fit.
    pub fit: f64,
    /// Minimum singular value accepted by homotopy certificates.
    pub cert: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sa: 1e-10,
            num: 1e-9,
            sing: 1e8,
            rho: 1e-6,
            cluster: 1e-7,
            kernel: 1e-7,
            coeff: 1e-10,
            fit: 1e-9,
            cert: 1e-9,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 9] = [
        "sa", "num", "sing", "rho", "cluster", "kernel", "coeff", "fit", "cert",
    ];

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {name} must be positive and finite, got {value}"
            )));
        }
        let slot = match name {
            "sa" => &mut self.sa,
            "num" => &mut self.num,
            "sing" => &mut self.sing,
            "rho" => &mut self.rho,
            "cluster" => &mut self.cluster,
            "kernel" => &mut self.kernel,
            "coeff" => &mut self.coeff,
            "fit" => &mut self.fit,
            "cert" => &mut self.cert,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown tolerance '{other}' (known: {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }
}

/// Default number of Brillouin-zone samples.
pub const DEFAULT_NUM_K: usize = 512;
/// Cap for adaptive doubling of Brillouin-zone samples.
pub const MAX_NUM_K: usize = 1 << 14;
/// Cap for the adaptive phase-unwrapping refinement.
pub const MAX_WINDING_SAMPLES: usize = 1 << 20;
/// Cap per axis for homotopy certificate grids.
pub const MAX_CERT_GRID: usize = 1 << 12;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_by_name() {
        let mut t = Tolerances::default();
        t.set("kernel", 1e-8).unwrap();
        assert_eq!(t.kernel, 1e-8);
        assert!(t.set("bogus", 1.0).is_err());
        assert!(t.set("num", -1.0).is_err());
    }
}
