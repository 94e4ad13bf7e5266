//! Grid-following inverter: L filter behind an optional coupling branch,
//! SRF current PI with decoupling and voltage feedforward, and an SRF-PLL.
//!
//! Blocks (states):
//! * `filter` (i_d, i_q): `(Lt/wb) di/dt = vm - v - Rt i + w0 Lt J i` with
//!   `Lt = Lf + Lg`, `Rt = Rf + Rg`. It also outputs the measured voltage
//!   `v_meas` between `Lf` and `Lg`, which is the terminal voltage when the
//!   coupling branch is absent.
//! * `cc` (two integrators): `vm_c = -(kp + ki/s) i_c - w0 Lf J i_c + Kf v_meas_c`
//!   (perturbations; the current reference is constant).
//! * `pll` (integrator, angle): `dw = (kp + ki/s) v_meas_q`, `theta = dw/s`.
//!
//! Frame rotations between the system and control frames are linearized
//! around `theta0` and live in the routing matrix.

use crate::ssmodel::{self, Interconnection, Matrix, Router, StateSpaceBlock};

use super::frame::{self, rotation, rotation_deriv, route_rotated, transpose, Vec2};
use super::{Equilibrium, IbrError, InverterKind, InverterParams, SteadyState, OMEGA0_PU};

pub(super) fn equilibrium(p: &InverterParams, v: f64, i: Vec2) -> SteadyState {
    let v_s = [v, 0.0];
    let xg = OMEGA0_PU * p.lg;
    let xf = OMEGA0_PU * p.lf;
    let v_meas = frame::add(
        frame::add(v_s, frame::scale(p.rg, i)),
        frame::scale(-xg, frame::j(i)),
    );
    let vm = frame::add(
        frame::add(v_meas, frame::scale(p.rf, i)),
        frame::scale(-xf, frame::j(i)),
    );
    let theta0 = v_meas[1].atan2(v_meas[0]);
    let i_c = frame::to_control(theta0, i);
    let v_meas_c = frame::to_control(theta0, v_meas);
    let vm_c = frame::to_control(theta0, vm);
    let current_integrator = frame::sub(
        frame::sub(vm_c, decoupling(p, i_c)),
        frame::scale(p.kf, v_meas_c),
    );
    SteadyState {
        vd0: v,
        vq0: 0.0,
        id0: i[0],
        iq0: i[1],
        theta0,
        internal: Equilibrium::Gfli {
            v_meas,
            vm,
            current_integrator,
            pll_integrator: 0.0,
        },
    }
}

/// `-w0 Lf J i_c` when decoupling is enabled.
fn decoupling(p: &InverterParams, i_c: Vec2) -> Vec2 {
    if p.decoupling {
        frame::scale(-OMEGA0_PU * p.lf, frame::j(i_c))
    } else {
        [0.0, 0.0]
    }
}

pub(super) fn residual(p: &InverterParams, ss: &SteadyState) -> f64 {
    let Equilibrium::Gfli {
        v_meas,
        vm,
        current_integrator,
        pll_integrator,
    } = &ss.internal
    else {
        return f64::INFINITY;
    };
    let (v, i) = (ss.terminal_voltage(), ss.terminal_current());
    let xg = OMEGA0_PU * p.lg;
    let xf = OMEGA0_PU * p.lf;
    // coupling branch and filter with zero derivative
    let branch = frame::add(
        frame::sub(frame::sub(*v_meas, v), frame::scale(p.rg, i)),
        frame::scale(xg, frame::j(i)),
    );
    // control law with zero tracking error
    let i_c = frame::to_control(ss.theta0, i);
    let v_meas_c = frame::to_control(ss.theta0, *v_meas);
    let vm_c = frame::add(
        frame::add(*current_integrator, decoupling(p, i_c)),
        frame::scale(p.kf, v_meas_c),
    );
    let vm_s = frame::to_system(ss.theta0, vm_c);
    let filter = frame::add(
        frame::sub(frame::sub(vm_s, *v_meas), frame::scale(p.rf, i)),
        frame::scale(xf, frame::j(i)),
    );
    let stored = frame::sub(vm_s, *vm);
    let pll_error = v_meas_c[1];
    let pll_freq = p.kp_pll * v_meas_c[1] + p.ki_pll * pll_integrator;
    [
        branch[0], branch[1], filter[0], filter[1], stored[0], stored[1], pll_error, pll_freq,
    ]
    .iter()
    .fold(0.0, |acc, r| acc.max(r.abs()))
}

pub(super) const FILTER_IN: [&str; 4] = ["filter.vm_d", "filter.vm_q", "filter.v_d", "filter.v_q"];
pub(super) const FILTER_OUT: [&str; 4] = [
    "filter.i_d",
    "filter.i_q",
    "filter.vmeas_d",
    "filter.vmeas_q",
];
pub(super) const CC_IN: [&str; 4] = ["cc.i_d", "cc.i_q", "cc.v_d", "cc.v_q"];
pub(super) const CC_OUT: [&str; 2] = ["cc.vm_d", "cc.vm_q"];
pub(super) const PLL_THETA: &str = "pll.theta";

fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}

/// Subsystems `{filter, cc, pll}` and their routing. External input is the
/// terminal voltage perturbation, external output the current into the
/// inverter.
pub fn build_gfli(
    p: &InverterParams,
    ss: &SteadyState,
) -> Result<(Vec<StateSpaceBlock>, Interconnection), IbrError> {
    if p.kind != InverterKind::Gfli {
        return Err(IbrError::WrongKind {
            name: p.name.clone(),
            expected: InverterKind::Gfli,
            found: p.kind,
        });
    }
    let Equilibrium::Gfli { v_meas, vm, .. } = &ss.internal else {
        return Err(IbrError::WrongKind {
            name: p.name.clone(),
            expected: InverterKind::Gfli,
            found: InverterKind::Gfmi,
        });
    };
    p.validate()?;

    let plant = l_filter(p)?;
    let xf = OMEGA0_PU * p.lf;

    let dec = if p.decoupling { xf } else { 0.0 };
    // -kp I - dec J  with J = [[0, 1], [-1, 0]]
    let cc = StateSpaceBlock::new(
        Matrix::zeros(2, 2),
        m(2, 4, &[-1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]),
        m(2, 2, &[p.ki_i, 0.0, 0.0, p.ki_i]),
        m(2, 4, &[-p.kp_i, -dec, p.kf, 0.0, dec, -p.kp_i, 0.0, p.kf]),
    )?
    .with_labels(CC_IN, CC_OUT)?;

    let pll = StateSpaceBlock::new(
        m(2, 2, &[0.0, 0.0, p.ki_pll, 0.0]),
        m(2, 1, &[1.0, p.kp_pll]),
        m(1, 2, &[0.0, 1.0]),
        m(1, 1, &[0.0]),
    )?
    .with_labels(["pll.vq"], [PLL_THETA])?;

    let blocks = vec![plant, cc, pll];
    let stacked = ssmodel::stack_blocks(&blocks)?;
    let mut r = Router::new(&stacked, 2, 2)?;

    r.feed_external("filter.v_d", 0, 1.0)?;
    r.feed_external("filter.v_q", 1, 1.0)?;
    r.expose(0, "filter.i_d", -1.0)?;
    r.expose(1, "filter.i_q", -1.0)?;

    let th = ss.theta0;
    let (rot, drot) = (rotation(th), rotation_deriv(th));
    let i_s = ss.terminal_current();
    let meas = ["filter.vmeas_d", "filter.vmeas_q"];
    route_rotated(
        &mut r,
        [Some("cc.i_d"), Some("cc.i_q")],
        ["filter.i_d", "filter.i_q"],
        PLL_THETA,
        rot,
        drot,
        i_s,
    )?;
    route_rotated(
        &mut r,
        [Some("cc.v_d"), Some("cc.v_q")],
        meas,
        PLL_THETA,
        rot,
        drot,
        *v_meas,
    )?;
    route_rotated(
        &mut r,
        [None, Some("pll.vq")],
        meas,
        PLL_THETA,
        rot,
        drot,
        *v_meas,
    )?;
    let vm_c = frame::to_control(th, *vm);
    route_rotated(
        &mut r,
        [Some("filter.vm_d"), Some("filter.vm_q")],
        CC_OUT,
        PLL_THETA,
        transpose(rot),
        transpose(drot),
        vm_c,
    )?;

    Ok((blocks, r.finish()))
}

/// L filter with the measured voltage between `Lf` and `Lg`.
fn l_filter(p: &InverterParams) -> Result<StateSpaceBlock, IbrError> {
    let lt = p.lf + p.lg;
    let rt = p.rf + p.rg;
    let xt = OMEGA0_PU * lt;
    let xg = OMEGA0_PU * p.lg;
    let k = p.omega_b / lt;
    let share = p.lg / lt;

    // v_meas = v + share (vm - v - Rt i + Xt J i) + Rg i - Xg J i
    let cm = [
        [-share * rt + p.rg, share * xt - xg],
        [-(share * xt - xg), -share * rt + p.rg],
    ];
    #[rustfmt::skip]
    let block = StateSpaceBlock::new(
        m(2, 2, &[-k * rt, k * xt, -k * xt, -k * rt]),
        m(2, 4, &[k, 0.0, -k, 0.0, 0.0, k, 0.0, -k]),
        m(4, 2, &[1.0, 0.0, 0.0, 1.0, cm[0][0], cm[0][1], cm[1][0], cm[1][1]]),
        m(4, 4, &[
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            share, 0.0, 1.0 - share, 0.0,
            0.0, share, 0.0, 1.0 - share,
        ]),
    )?;
    Ok(block.with_labels(FILTER_IN, FILTER_OUT)?)
}
