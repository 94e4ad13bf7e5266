//! LCL output filter of the grid-forming inverter: converter-side inductor
//! `Lf`, shunt capacitor `Cf` and grid-side branch `Lg`, with the terminal
//! at the outer node of the branch.
//!
//! States `(iL, vC, ig)` in dq; inputs `(vm, v)`; every state is an output.

use crate::ssmodel::{Matrix, StateSpaceBlock};

use super::frame::{self, Vec2};
use super::{IbrError, InverterParams, OMEGA0_PU};

const LCL_IN: [&str; 4] = ["lcl.vm_d", "lcl.vm_q", "lcl.v_d", "lcl.v_q"];
pub(super) const LCL_IL: [&str; 2] = ["lcl.il_d", "lcl.il_q"];
pub(super) const LCL_VC: [&str; 2] = ["lcl.vc_d", "lcl.vc_q"];
pub(super) const LCL_IG: [&str; 2] = ["lcl.ig_d", "lcl.ig_q"];

/// `(Xf, Bc, Xg)` at the nominal frequency.
pub(super) fn reactances(p: &InverterParams) -> (f64, f64, f64) {
    (OMEGA0_PU * p.lf, OMEGA0_PU * p.cf, OMEGA0_PU * p.lg)
}

/// Steady state `(vC, iL, vm)` for terminal voltage `v` and current `ig`.
pub(super) fn equilibrium(p: &InverterParams, v: Vec2, ig: Vec2) -> (Vec2, Vec2, Vec2) {
    let (xf, bc, xg) = reactances(p);
    let v_c = frame::add(
        frame::add(v, frame::scale(p.rg, ig)),
        frame::scale(-xg, frame::j(ig)),
    );
    let i_l = frame::sub(ig, frame::scale(bc, frame::j(v_c)));
    let vm = frame::add(
        frame::add(v_c, frame::scale(p.rf, i_l)),
        frame::scale(-xf, frame::j(i_l)),
    );
    (v_c, i_l, vm)
}

/// Right-hand sides of the three filter equations (zero at equilibrium).
pub(super) fn residual(
    p: &InverterParams,
    v: Vec2,
    ig: Vec2,
    i_l: Vec2,
    v_c: Vec2,
    vm: Vec2,
) -> [f64; 6] {
    let (xf, bc, xg) = reactances(p);
    let d_il = frame::add(
        frame::sub(frame::sub(vm, v_c), frame::scale(p.rf, i_l)),
        frame::scale(xf, frame::j(i_l)),
    );
    let d_vc = frame::add(frame::sub(i_l, ig), frame::scale(bc, frame::j(v_c)));
    let d_ig = frame::add(
        frame::sub(frame::sub(v_c, v), frame::scale(p.rg, ig)),
        frame::scale(xg, frame::j(ig)),
    );
    [d_il[0], d_il[1], d_vc[0], d_vc[1], d_ig[0], d_ig[1]]
}

fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}

pub(super) fn lcl_block(p: &InverterParams) -> Result<StateSpaceBlock, IbrError> {
    let wb = p.omega_b;
    let (xf, bc, xg) = reactances(p);
    let (kl, kc, kg) = (wb / p.lf, wb / p.cf, wb / p.lg);
    let (rf, rg) = (p.rf, p.rg);

    #[rustfmt::skip]
    let block = StateSpaceBlock::new(
        m(6, 6, &[
            -kl * rf, kl * xf, -kl, 0.0, 0.0, 0.0,
            -kl * xf, -kl * rf, 0.0, -kl, 0.0, 0.0,
            kc, 0.0, 0.0, kc * bc, -kc, 0.0,
            0.0, kc, -kc * bc, 0.0, 0.0, -kc,
            0.0, 0.0, kg, 0.0, -kg * rg, kg * xg,
            0.0, 0.0, 0.0, kg, -kg * xg, -kg * rg,
        ]),
        m(6, 4, &[
            kl, 0.0, 0.0, 0.0,
            0.0, kl, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, -kg, 0.0,
            0.0, 0.0, 0.0, -kg,
        ]),
        Matrix::identity(6, 6),
        Matrix::zeros(6, 4),
    )?;
    let outputs = [
        LCL_IL[0], LCL_IL[1], LCL_VC[0], LCL_VC[1], LCL_IG[0], LCL_IG[1],
    ];
    Ok(block.with_labels(LCL_IN, outputs)?)
}
