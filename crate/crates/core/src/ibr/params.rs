use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IbrError;

/// Base angular frequency for a 60 Hz system.
pub const OMEGA_BASE_60HZ: f64 = 2.0 * PI * 60.0;

pub const CATALOG_FORMAT: &str = "ibrkit-catalog-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InverterKind {
    Gfli,
    Gfmi,
}

impl fmt::Display for InverterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gfli => "GFLI",
            Self::Gfmi => "GFMI",
        })
    }
}

/// Terminal operating point in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: f64,
    pub p: f64,
    pub q: f64,
}

impl OperatingPoint {
    pub const V_RANGE: (f64, f64) = (0.9, 1.1);
    pub const RATING_TOL: f64 = 1e-9;

    /// Checks the variable ranges; rated-power feasibility is separate.
    pub fn new(v: f64, p: f64, q: f64) -> Result<Self, IbrError> {
        let op = Self { v, p, q };
        let tol = 1e-9;
        let in_range = v >= Self::V_RANGE.0 - tol
            && v <= Self::V_RANGE.1 + tol
            && p.abs() <= 1.0 + tol
            && q.abs() <= 1.0 + tol;
        if !in_range {
            return Err(IbrError::OutOfRange(op));
        }
        Ok(op)
    }

    pub fn apparent_power(&self) -> f64 {
        self.p.hypot(self.q)
    }

    /// Apparent power within the 1 pu rating. Boundary points such as
    /// (0.6, 0.8) are kept despite rounding in their decimal values.
    pub fn is_feasible(&self) -> bool {
        self.apparent_power() <= 1.0 + Self::RATING_TOL
    }
}

impl fmt::Display for OperatingPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(V={}, P={}, Q={})", self.v, self.p, self.q)
    }
}

fn default_omega_b() -> f64 {
    OMEGA_BASE_60HZ
}

fn default_true() -> bool {
    true
}

/// Physical and control parameters of one inverter, per-unit unless noted.
///
/// Integrator gains act on seconds. PLL gains map pu voltage to rad/s.
/// Fields that do not apply to a kind are left at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterParams {
    pub name: String,
    pub kind: InverterKind,
    /// rad/s
    #[serde(default = "default_omega_b")]
    pub omega_b: f64,
    pub lf: f64,
    pub rf: f64,
    /// GFMI only.
    #[serde(default)]
    pub cf: f64,
    /// Grid-side coupling branch. Required for GFMI; optional for GFLI,
    /// where the PLL and current loop measure the voltage inside it.
    #[serde(default)]
    pub lg: f64,
    #[serde(default)]
    pub rg: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    #[serde(default)]
    pub kp_v: f64,
    #[serde(default)]
    pub ki_v: f64,
    #[serde(default)]
    pub kp_pll: f64,
    #[serde(default)]
    pub ki_pll: f64,
    #[serde(default)]
    pub mp: f64,
    #[serde(default)]
    pub nq: f64,
    /// rad/s
    #[serde(default)]
    pub omega_c: f64,
    /// Voltage feedforward gain in the current loop, 0 or 1.
    #[serde(default)]
    pub kf: f64,
    /// Cross-coupling decoupling terms in the inner loops.
    #[serde(default = "default_true")]
    pub decoupling: bool,
    /// Not part of the default training set.
    #[serde(default)]
    pub holdout: bool,
}

impl InverterParams {
    pub fn validate(&self) -> Result<(), IbrError> {
        let bad = |field: &str, value: f64, why: &str| {
            Err(IbrError::InvalidParams {
                name: self.name.clone(),
                reason: format!("{field} = {value} {why}"),
            })
        };
        let mut positive = vec![("omega_b", self.omega_b), ("lf", self.lf)];
        let mut non_negative = vec![
            ("rf", self.rf),
            ("lg", self.lg),
            ("rg", self.rg),
            ("kp_i", self.kp_i),
            ("ki_i", self.ki_i),
            ("kf", self.kf),
        ];
        match self.kind {
            InverterKind::Gfli => {
                non_negative.extend([("kp_pll", self.kp_pll), ("ki_pll", self.ki_pll)]);
            }
            InverterKind::Gfmi => {
                positive.extend([("cf", self.cf), ("lg", self.lg), ("omega_c", self.omega_c)]);
                non_negative.extend([
                    ("kp_v", self.kp_v),
                    ("ki_v", self.ki_v),
                    ("mp", self.mp),
                    ("nq", self.nq),
                ]);
            }
        }
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return bad(field, value, "must be finite and > 0");
            }
        }
        for (field, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return bad(field, value, "must be finite and >= 0");
            }
        }
        Ok(())
    }

    /// Copy with every control action removed: no PI, PLL, feedforward or
    /// decoupling. What remains is the passive filter.
    pub fn controls_disabled(&self) -> Self {
        Self {
            kp_i: 0.0,
            ki_i: 0.0,
            kp_v: 0.0,
            ki_v: 0.0,
            kp_pll: 0.0,
            ki_pll: 0.0,
            kf: 0.0,
            decoupling: false,
            ..self.clone()
        }
    }
}

/// Named set of inverters, loaded from and saved to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub format: String,
    pub ibrs: Vec<InverterParams>,
}

impl Catalog {
    pub fn new(ibrs: Vec<InverterParams>) -> Self {
        Self {
            format: CATALOG_FORMAT.to_string(),
            ibrs,
        }
    }

    /// Six training inverters plus the held-out GFLI4.
    ///
    /// These are engineering defaults for typical GFLI/GFMI designs:
    /// GFLI1/GFLI2 differ by a x2 current-loop gain, GFLI3 has a PLL ten
    /// times slower, GFMI1..3 differ only by power-filter cutoff
    /// (5, 10, 20 Hz), and GFLI4 is GFLI1 with `kp_pll = 7.9`, `ki_pll = 78.9`.
    pub fn canonical() -> Self {
        let gfli1 = InverterParams {
            name: "GFLI1".into(),
            kind: InverterKind::Gfli,
            omega_b: OMEGA_BASE_60HZ,
            lf: 0.05,
            rf: 0.005,
            cf: 0.0,
            lg: 0.2,
            rg: 0.01,
            kp_i: 0.3,
            ki_i: 10.0,
            kp_v: 0.0,
            ki_v: 0.0,
            kp_pll: 15.0,
            ki_pll: 200.0,
            mp: 0.0,
            nq: 0.0,
            omega_c: 0.0,
            kf: 0.0,
            decoupling: true,
            holdout: false,
        };
        let gfli2 = InverterParams {
            name: "GFLI2".into(),
            kp_i: 2.0 * gfli1.kp_i,
            ki_i: 2.0 * gfli1.ki_i,
            ..gfli1.clone()
        };
        let gfli3 = InverterParams {
            name: "GFLI3".into(),
            kp_pll: gfli1.kp_pll / 10.0,
            ki_pll: gfli1.ki_pll / 100.0,
            ..gfli1.clone()
        };
        let gfli4 = InverterParams {
            name: "GFLI4".into(),
            kp_pll: 7.9,
            ki_pll: 78.9,
            holdout: true,
            ..gfli1.clone()
        };
        let gfmi1 = InverterParams {
            name: "GFMI1".into(),
            kind: InverterKind::Gfmi,
            omega_b: OMEGA_BASE_60HZ,
            lf: 0.08,
            rf: 0.003,
            cf: 0.074,
            lg: 0.2,
            rg: 0.03,
            kp_i: 2.0,
            ki_i: 50.0,
            kp_v: 1.0,
            ki_v: 20.0,
            kp_pll: 0.0,
            ki_pll: 0.0,
            mp: 0.01,
            nq: 0.01,
            omega_c: 2.0 * PI * 5.0,
            kf: 1.0,
            decoupling: true,
            holdout: false,
        };
        let gfmi2 = InverterParams {
            name: "GFMI2".into(),
            omega_c: 2.0 * PI * 10.0,
            ..gfmi1.clone()
        };
        let gfmi3 = InverterParams {
            name: "GFMI3".into(),
            omega_c: 2.0 * PI * 20.0,
            ..gfmi1.clone()
        };
        Self::new(vec![gfli1, gfli2, gfli3, gfmi1, gfmi2, gfmi3, gfli4])
    }

    pub fn get(&self, name: &str) -> Option<&InverterParams> {
        self.ibrs.iter().find(|p| p.name == name)
    }

    /// Inverters not marked as held out.
    pub fn training_set(&self) -> Vec<InverterParams> {
        self.ibrs.iter().filter(|p| !p.holdout).cloned().collect()
    }

    pub fn validate(&self) -> Result<(), IbrError> {
        if self.format != CATALOG_FORMAT {
            return Err(IbrError::Catalog(format!(
                "format tag `{}`, expected `{CATALOG_FORMAT}`",
                self.format
            )));
        }
        for (i, p) in self.ibrs.iter().enumerate() {
            p.validate()?;
            if self.ibrs[..i].iter().any(|o| o.name == p.name) {
                return Err(IbrError::Catalog(format!(
                    "duplicate inverter name `{}`",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IbrError> {
        let catalog: Self =
            serde_json::from_str(text).map_err(|e| IbrError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn load(path: &Path) -> Result<Self, IbrError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IbrError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| IbrError::Catalog(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), IbrError> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| IbrError::Catalog(format!("{}: {e}", path.display())))
    }
}
