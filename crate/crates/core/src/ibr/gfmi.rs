//! Droop-controlled grid-forming inverter.
//!
//! Blocks (states):
//! * `lcl` (iL, vC, ig in dq): the shared LCL filter.
//! * `pq` (p_f, q_f): terminal power `p = vd id + vq iq`, `q = vq id - vd iq`
//!   through `wc/(s + wc)`.
//! * `droop` (theta): `dw = -mp p_f`, `dE = -nq q_f`, `theta = wb dw / s`.
//! * `vc` (two integrators): voltage PI on vC with decoupling and grid-current
//!   feedforward, producing the inductor-current reference.
//! * `cc` (two integrators): current PI on iL with decoupling and capacitor
//!   voltage feedforward.

use crate::ssmodel::{self, Interconnection, Matrix, Router, StateSpaceBlock};

use super::filter::{self, LCL_IG, LCL_IL, LCL_VC};
use super::frame::{self, rotation, rotation_deriv, route_rotated, transpose, Vec2};
use super::{
    Equilibrium, IbrError, InverterKind, InverterParams, OperatingPoint, SteadyState, OMEGA0_PU,
};

pub(super) const DROOP_THETA: &str = "droop.theta";

/// Gain of the grid-current feedforward into the inductor-current reference.
pub const GRID_CURRENT_FEEDFORWARD: f64 = 1.0;

pub(super) fn equilibrium(p: &InverterParams, v: f64, i: Vec2) -> SteadyState {
    let (v_c, i_l, vm) = filter::equilibrium(p, [v, 0.0], i);
    let theta0 = v_c[1].atan2(v_c[0]);
    let e0 = v_c[0].hypot(v_c[1]);

    let v_c_c = frame::to_control(theta0, v_c);
    let i_l_c = frame::to_control(theta0, i_l);
    let vm_c = frame::to_control(theta0, vm);
    let i_g_c = frame::to_control(theta0, i);
    let voltage_integrator = frame::sub(
        frame::sub(i_l_c, cap_decoupling(p, v_c_c)),
        frame::scale(GRID_CURRENT_FEEDFORWARD, i_g_c),
    );
    let current_integrator = frame::sub(
        frame::sub(vm_c, ind_decoupling(p, i_l_c)),
        frame::scale(p.kf, v_c_c),
    );
    let p_filt = v * i[0];
    let q_filt = -v * i[1];
    SteadyState {
        vd0: v,
        vq0: 0.0,
        id0: i[0],
        iq0: i[1],
        theta0,
        internal: Equilibrium::Gfmi {
            i_l,
            v_c,
            vm,
            e0,
            voltage_integrator,
            current_integrator,
            p_filt,
            q_filt,
        },
    }
}

fn cap_decoupling(p: &InverterParams, v_c_c: Vec2) -> Vec2 {
    if p.decoupling {
        frame::scale(-OMEGA0_PU * p.cf, frame::j(v_c_c))
    } else {
        [0.0, 0.0]
    }
}

fn ind_decoupling(p: &InverterParams, i_l_c: Vec2) -> Vec2 {
    if p.decoupling {
        frame::scale(-OMEGA0_PU * p.lf, frame::j(i_l_c))
    } else {
        [0.0, 0.0]
    }
}

pub(super) fn residual(p: &InverterParams, op: &OperatingPoint, ss: &SteadyState) -> f64 {
    let Equilibrium::Gfmi {
        i_l,
        v_c,
        vm,
        e0,
        voltage_integrator,
        current_integrator,
        p_filt,
        q_filt,
    } = &ss.internal
    else {
        return f64::INFINITY;
    };
    let (v, ig) = (ss.terminal_voltage(), ss.terminal_current());
    let th = ss.theta0;

    let power = v[0] * ig[0] + v[1] * ig[1];
    let reactive = v[1] * ig[0] - v[0] * ig[1];
    // droop set points are the dispatch (P, Q) at nominal frequency and E0
    let freq_dev = -p.mp * (p_filt - op.p);
    let e_ref = e0 - p.nq * (q_filt - op.q);

    let v_c_c = frame::to_control(th, *v_c);
    let i_l_c = frame::to_control(th, *i_l);
    let v_err = [e_ref - v_c_c[0], -v_c_c[1]];
    let i_g_c = frame::to_control(th, ig);
    let i_ref = frame::add(
        frame::add(
            frame::add(*voltage_integrator, frame::scale(p.kp_v, v_err)),
            cap_decoupling(p, v_c_c),
        ),
        frame::scale(GRID_CURRENT_FEEDFORWARD, i_g_c),
    );
    let i_err = frame::sub(i_ref, i_l_c);
    let vm_c = frame::add(
        frame::add(
            frame::add(*current_integrator, frame::scale(p.kp_i, i_err)),
            ind_decoupling(p, i_l_c),
        ),
        frame::scale(p.kf, v_c_c),
    );
    let vm_s = frame::to_system(th, vm_c);

    let stored = frame::sub(vm_s, *vm);

    filter::residual(p, v, ig, *i_l, *v_c, vm_s)
        .into_iter()
        .chain([
            power - p_filt,
            reactive - q_filt,
            freq_dev,
            v_err[0],
            v_err[1],
            i_err[0],
            i_err[1],
            stored[0],
            stored[1],
        ])
        .fold(0.0, |acc, r| acc.max(r.abs()))
}

fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}

/// Subsystems `{lcl, pq, droop, vc, cc}` and their routing, with the same
/// external ports as the GFLI model.
pub fn build_gfmi(
    p: &InverterParams,
    ss: &SteadyState,
) -> Result<(Vec<StateSpaceBlock>, Interconnection), IbrError> {
    if p.kind != InverterKind::Gfmi {
        return Err(IbrError::WrongKind {
            name: p.name.clone(),
            expected: InverterKind::Gfmi,
            found: p.kind,
        });
    }
    let Equilibrium::Gfmi { i_l, v_c, vm, .. } = &ss.internal else {
        return Err(IbrError::WrongKind {
            name: p.name.clone(),
            expected: InverterKind::Gfmi,
            found: InverterKind::Gfli,
        });
    };
    p.validate()?;
    let wb = p.omega_b;
    let (xf, bc, _) = filter::reactances(p);
    let lcl = filter::lcl_block(p)?;

    let (vd, vq) = (ss.vd0, ss.vq0);
    let (igd, igq) = (ss.id0, ss.iq0);
    let wc = p.omega_c;
    #[rustfmt::skip]
    let pq = StateSpaceBlock::new(
        m(2, 2, &[-wc, 0.0, 0.0, -wc]),
        m(2, 4, &[
            wc * igd, wc * igq, wc * vd, wc * vq,
            -wc * igq, wc * igd, wc * vq, -wc * vd,
        ]),
        Matrix::identity(2, 2),
        Matrix::zeros(2, 4),
    )?
    .with_labels(["pq.v_d", "pq.v_q", "pq.ig_d", "pq.ig_q"], ["pq.p", "pq.q"])?;

    let droop = StateSpaceBlock::new(
        m(1, 1, &[0.0]),
        m(1, 2, &[-wb * p.mp, 0.0]),
        m(2, 1, &[1.0, 0.0]),
        m(2, 2, &[0.0, 0.0, 0.0, -p.nq]),
    )?
    .with_labels(["droop.p", "droop.q"], [DROOP_THETA, "droop.e"])?;

    let dec_c = if p.decoupling { bc } else { 0.0 };
    let ff = GRID_CURRENT_FEEDFORWARD;
    #[rustfmt::skip]
    let vc = StateSpaceBlock::new(
        Matrix::zeros(2, 2),
        m(2, 5, &[
            -1.0, 0.0, 1.0, 0.0, 0.0,
            0.0, -1.0, 0.0, 0.0, 0.0,
        ]),
        m(2, 2, &[p.ki_v, 0.0, 0.0, p.ki_v]),
        m(2, 5, &[
            -p.kp_v, -dec_c, p.kp_v, ff, 0.0,
            dec_c, -p.kp_v, 0.0, 0.0, ff,
        ]),
    )?
    .with_labels(["vc.vc_d", "vc.vc_q", "vc.e", "vc.ig_d", "vc.ig_q"], ["vc.iref_d", "vc.iref_q"])?;

    let dec_f = if p.decoupling { xf } else { 0.0 };
    #[rustfmt::skip]
    let cc = StateSpaceBlock::new(
        Matrix::zeros(2, 2),
        m(2, 6, &[
            1.0, 0.0, -1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, -1.0, 0.0, 0.0,
        ]),
        m(2, 2, &[p.ki_i, 0.0, 0.0, p.ki_i]),
        m(2, 6, &[
            p.kp_i, 0.0, -p.kp_i, -dec_f, p.kf, 0.0,
            0.0, p.kp_i, dec_f, -p.kp_i, 0.0, p.kf,
        ]),
    )?
    .with_labels(
        ["cc.iref_d", "cc.iref_q", "cc.il_d", "cc.il_q", "cc.vc_d", "cc.vc_q"],
        ["cc.vm_d", "cc.vm_q"],
    )?;

    let blocks = vec![lcl, pq, droop, vc, cc];
    let stacked = ssmodel::stack_blocks(&blocks)?;
    let mut r = Router::new(&stacked, 2, 2)?;

    for (k, axis) in ["d", "q"].iter().enumerate() {
        r.feed_external(&format!("lcl.v_{axis}"), k, 1.0)?;
        r.feed_external(&format!("pq.v_{axis}"), k, 1.0)?;
        r.feed(&format!("pq.ig_{axis}"), &format!("lcl.ig_{axis}"), 1.0)?;
        r.feed(&format!("cc.iref_{axis}"), &format!("vc.iref_{axis}"), 1.0)?;
        r.expose(k, &format!("lcl.ig_{axis}"), -1.0)?;
    }
    r.feed("droop.p", "pq.p", 1.0)?;
    r.feed("droop.q", "pq.q", 1.0)?;
    r.feed("vc.e", "droop.e", 1.0)?;

    let th = ss.theta0;
    let (rot, drot) = (rotation(th), rotation_deriv(th));
    route_rotated(
        &mut r,
        [Some("vc.vc_d"), Some("vc.vc_q")],
        LCL_VC,
        DROOP_THETA,
        rot,
        drot,
        *v_c,
    )?;
    route_rotated(
        &mut r,
        [Some("cc.vc_d"), Some("cc.vc_q")],
        LCL_VC,
        DROOP_THETA,
        rot,
        drot,
        *v_c,
    )?;
    route_rotated(
        &mut r,
        [Some("cc.il_d"), Some("cc.il_q")],
        LCL_IL,
        DROOP_THETA,
        rot,
        drot,
        *i_l,
    )?;
    let i_g = ss.terminal_current();
    route_rotated(
        &mut r,
        [Some("vc.ig_d"), Some("vc.ig_q")],
        LCL_IG,
        DROOP_THETA,
        rot,
        drot,
        i_g,
    )?;
    let vm_c = frame::to_control(th, *vm);
    route_rotated(
        &mut r,
        [Some("lcl.vm_d"), Some("lcl.vm_q")],
        ["cc.vm_d", "cc.vm_q"],
        DROOP_THETA,
        transpose(rot),
        transpose(drot),
        vm_c,
    )?;

    Ok((blocks, r.finish()))
}
