//! Linearized grid-following (GFLI) and grid-forming (GFMI) inverter models.
//!
//! Every model is per-unit on the inverter rating with `omega_b` as the base
//! angular frequency; derivative terms carry `1/omega_b`, so the Laplace
//! variable is the physical `s = j 2 pi f`. The system dq frame is aligned
//! with the terminal voltage (`Vq0 = 0`) and rotates at the nominal 1 pu
//! frequency.
//!
//! Powers use the generator convention (positive `P` is exported). The
//! returned admittance uses the load convention for the small-signal
//! current: `Y` maps the terminal-voltage perturbation to the current
//! flowing from the grid into the inverter terminal, so a passive filter
//! has a positive conductance.

mod filter;
mod frame;
mod gfli;
mod gfmi;
mod params;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ssmodel::{self, CompositeSystem, Interconnection, SsError, StateSpaceBlock};

pub use frame::Vec2;
pub use gfli::build_gfli;
pub use gfmi::build_gfmi;
pub use params::{
    Catalog, InverterKind, InverterParams, OperatingPoint, CATALOG_FORMAT, OMEGA_BASE_60HZ,
};

/// Nominal grid frequency in per-unit.
pub const OMEGA0_PU: f64 = 1.0;

/// Maximum residual accepted for an equilibrium and its power identities.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IbrError {
    #[error("operating point {0} is outside V in [0.9, 1.1], |P|, |Q| <= 1")]
    OutOfRange(OperatingPoint),
    #[error("operating point {0} exceeds the 1 pu apparent-power rating")]
    Infeasible(OperatingPoint),
    #[error("invalid parameters for `{name}`: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("`{name}` is a {found} but a {expected} model was requested")]
    WrongKind {
        name: String,
        expected: InverterKind,
        found: InverterKind,
    },
    #[error("no equilibrium for `{name}` at {op}: residual {residual:.3e}")]
    Equilibrium {
        name: String,
        op: OperatingPoint,
        residual: f64,
    },
    #[error("frequency must be finite and positive, got {0} Hz")]
    InvalidFrequency(f64),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Model(#[from] SsError),
}

/// Linearization point. Vectors are in the system (terminal-aligned) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub vd0: f64,
    pub vq0: f64,
    pub id0: f64,
    pub iq0: f64,
    /// Angle of the control frame relative to the system frame (rad).
    pub theta0: f64,
    pub internal: Equilibrium,
}

impl SteadyState {
    pub fn terminal_voltage(&self) -> Vec2 {
        [self.vd0, self.vq0]
    }

    pub fn terminal_current(&self) -> Vec2 {
        [self.id0, self.iq0]
    }
}

/// Internal block equilibria, by inverter kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Equilibrium {
    Gfli {
        /// Voltage seen by the PLL and current loop, inside the coupling branch.
        v_meas: Vec2,
        /// Modulated converter voltage.
        vm: Vec2,
        /// Current-loop integrator outputs (control frame).
        current_integrator: Vec2,
        pll_integrator: f64,
    },
    Gfmi {
        i_l: Vec2,
        v_c: Vec2,
        vm: Vec2,
        /// Voltage magnitude set by the reactive droop.
        e0: f64,
        voltage_integrator: Vec2,
        current_integrator: Vec2,
        p_filt: f64,
        q_filt: f64,
    },
}

/// Equilibrium of the nonlinear model at `op`.
///
/// With `Vq0 = 0` the terminal current follows from the power definitions
/// `P = Vd Id + Vq Iq`, `Q = Vq Id - Vd Iq`; every internal quantity then
/// follows from the block equations with zero derivatives. The result is
/// substituted back into the nonlinear equations and rejected if the
/// residual exceeds [`EQUILIBRIUM_TOL`].
pub fn steady_state(params: &InverterParams, op: &OperatingPoint) -> Result<SteadyState, IbrError> {
    params.validate()?;
    if !op.is_feasible() {
        return Err(IbrError::Infeasible(*op));
    }
    if !(op.v > 0.0) {
        return Err(IbrError::OutOfRange(*op));
    }
    let id0 = op.p / op.v;
    let iq0 = -op.q / op.v;
    let ss = match params.kind {
        InverterKind::Gfli => gfli::equilibrium(params, op.v, [id0, iq0]),
        InverterKind::Gfmi => gfmi::equilibrium(params, op.v, [id0, iq0]),
    };
    let residual = equilibrium_residual(params, op, &ss);
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(IbrError::Equilibrium {
            name: params.name.clone(),
            op: *op,
            residual,
        });
    }
    Ok(ss)
}

/// Largest absolute residual of the nonlinear block equations and power
/// identities at `ss`.
pub fn equilibrium_residual(params: &InverterParams, op: &OperatingPoint, ss: &SteadyState) -> f64 {
    let (v, i) = (ss.terminal_voltage(), ss.terminal_current());
    let p = v[0] * i[0] + v[1] * i[1];
    let q = v[1] * i[0] - v[0] * i[1];
    let power = (p - op.p).abs().max((q - op.q).abs());
    let block = match params.kind {
        InverterKind::Gfli => gfli::residual(params, ss),
        InverterKind::Gfmi => gfmi::residual(params, op, ss),
    };
    power
        .max(block)
        .max((ss.vd0 - op.v).abs())
        .max(ss.vq0.abs())
}

/// Subsystem blocks and routing for the kind of `params`.
pub fn build(
    params: &InverterParams,
    ss: &SteadyState,
) -> Result<(Vec<StateSpaceBlock>, Interconnection), IbrError> {
    match params.kind {
        InverterKind::Gfli => build_gfli(params, ss),
        InverterKind::Gfmi => build_gfmi(params, ss),
    }
}

/// 2x2 dq admittance at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceMatrix {
    pub ydd: Complex64,
    pub ydq: Complex64,
    pub yqd: Complex64,
    pub yqq: Complex64,
    /// Hz
    pub f: f64,
}

impl AdmittanceMatrix {
    pub fn entries(&self) -> [Complex64; 4] {
        [self.ydd, self.ydq, self.yqd, self.yqq]
    }

    pub fn is_finite(&self) -> bool {
        self.entries()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `[g_dd, b_dd, g_dq, b_dq, g_qd, b_qd, g_qq, b_qq]`
    pub fn conductance_susceptance(&self) -> [f64; 8] {
        let e = self.entries();
        [
            e[0].re, e[0].im, e[1].re, e[1].im, e[2].re, e[2].im, e[3].re, e[3].im,
        ]
    }
}

/// Composite model of one inverter at one operating point.
#[derive(Debug, Clone)]
pub struct AdmittanceModel {
    pub steady_state: SteadyState,
    pub system: CompositeSystem,
}

impl AdmittanceModel {
    pub fn new(params: &InverterParams, op: &OperatingPoint) -> Result<Self, IbrError> {
        let steady_state = steady_state(params, op)?;
        Self::from_steady_state(params, steady_state)
    }

    pub fn from_steady_state(
        params: &InverterParams,
        steady_state: SteadyState,
    ) -> Result<Self, IbrError> {
        let (blocks, ic) = build(params, &steady_state)?;
        let stacked = ssmodel::stack_blocks(&blocks)?;
        let system = ssmodel::compose(&stacked, &ic)?;
        Ok(Self {
            steady_state,
            system,
        })
    }

    /// Admittance at `f` Hz (negative `f` evaluates `s = -j 2 pi |f|`).
    pub fn at(&self, f: f64) -> Result<AdmittanceMatrix, IbrError> {
        if !f.is_finite() {
            return Err(IbrError::InvalidFrequency(f));
        }
        let g = self
            .system
            .frequency_response_nudged(2.0 * std::f64::consts::PI * f)?;
        Ok(AdmittanceMatrix {
            ydd: g[(0, 0)],
            ydq: g[(0, 1)],
            yqd: g[(1, 0)],
            yqq: g[(1, 1)],
            f,
        })
    }
}

/// Admittance of `params` at `op` and `f` Hz (`f > 0`).
pub fn admittance(
    params: &InverterParams,
    op: &OperatingPoint,
    f: f64,
) -> Result<AdmittanceMatrix, IbrError> {
    if !(f.is_finite() && f > 0.0) {
        return Err(IbrError::InvalidFrequency(f));
    }
    AdmittanceModel::new(params, op)?.at(f)
}

#[cfg(test)]
mod tests;
