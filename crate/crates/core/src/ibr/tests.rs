use num_complex::Complex64;

use super::*;
use crate::ssmodel::stack_blocks;

fn op(v: f64, p: f64, q: f64) -> OperatingPoint {
    OperatingPoint::new(v, p, q).unwrap()
}

fn catalog(name: &str) -> InverterParams {
    Catalog::canonical().get(name).unwrap().clone()
}

/// Closed-form admittance of a series R-L branch in the rotating frame,
/// current flowing into the inverter.
fn rl_closed_form(l: f64, r: f64, omega_b: f64, f: f64) -> [Complex64; 4] {
    let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
    let a = s * (l / omega_b) + r;
    let x = Complex64::new(OMEGA0_PU * l, 0.0);
    let den = a * a + x * x;
    [a / den, x / den, -x / den, a / den]
}

#[test]
fn terminal_currents_follow_power_definitions() {
    let p = catalog("GFLI1");
    let ss = steady_state(&p, &op(1.0, 1.0, 0.0)).unwrap();
    assert_eq!((ss.id0, ss.iq0), (1.0, 0.0));
    let ss = steady_state(&p, &op(0.9, 0.0, 0.9)).unwrap();
    assert_eq!(ss.id0, 0.0);
    assert!((ss.iq0 + 1.0).abs() < 1e-15);
    assert_eq!((ss.vd0, ss.vq0), (0.9, 0.0));
}

#[test]
fn infeasible_point_is_rejected() {
    let p = catalog("GFMI1");
    let err = steady_state(&p, &op(1.0, 1.0, 0.2)).unwrap_err();
    assert!(matches!(err, IbrError::Infeasible(_)));
}

#[test]
fn gfmi_equilibrium_satisfies_block_equations() {
    let p = catalog("GFMI1");
    let o = op(1.0, 0.5, 0.0);
    let ss = steady_state(&p, &o).unwrap();
    assert!(equilibrium_residual(&p, &o, &ss) <= 1e-10);
    // a perturbed equilibrium must show up in the residual
    let mut broken = ss.clone();
    if let Equilibrium::Gfmi { v_c, .. } = &mut broken.internal {
        v_c[1] += 1e-6;
    }
    assert!(equilibrium_residual(&p, &o, &broken) > 1e-7);
}

#[test]
fn equilibria_hold_over_operating_range() {
    let cat = Catalog::canonical();
    for params in &cat.ibrs {
        for v in [0.9, 1.0, 1.1] {
            for (pp, qq) in [
                (1.0, 0.0),
                (-1.0, 0.0),
                (0.0, 1.0),
                (0.0, -1.0),
                (0.6, -0.8),
                (-0.4, 0.4),
            ] {
                let o = op(v, pp, qq);
                let ss = steady_state(params, &o).unwrap();
                let s = ss.vd0 * ss.id0 + ss.vq0 * ss.iq0;
                let r = ss.vq0 * ss.id0 - ss.vd0 * ss.iq0;
                assert!((s - pp).abs() <= 1e-10 && (r - qq).abs() <= 1e-10);
                assert!(
                    equilibrium_residual(params, &o, &ss) <= 1e-10,
                    "{} at {o}",
                    params.name
                );
            }
        }
    }
}

#[test]
fn block_structure_counts() {
    let o = op(1.0, 0.3, 0.1);
    for (name, states) in [("GFLI1", 6), ("GFMI1", 13)] {
        let p = catalog(name);
        let ss = steady_state(&p, &o).unwrap();
        let (blocks, ic) = build(&p, &ss).unwrap();
        let stacked = stack_blocks(&blocks).unwrap();
        assert_eq!(stacked.n_states(), states, "{name}");
        assert_eq!(ic.n_ext_inputs(), 2);
        assert_eq!(ic.n_ext_outputs(), 2);
        let model = AdmittanceModel::new(&p, &o).unwrap();
        assert_eq!((model.system.n_ext_in(), model.system.n_ext_out()), (2, 2));
    }
    let gfli = catalog("GFLI1");
    let ss = steady_state(&gfli, &o).unwrap();
    assert!(matches!(
        build_gfmi(&gfli, &ss),
        Err(IbrError::WrongKind { .. })
    ));
}

#[test]
fn controls_disabled_gfli_is_an_rl_branch() {
    let base = catalog("GFLI1");
    let no_branch = InverterParams {
        lg: 0.0,
        rg: 0.0,
        ..base.clone()
    };
    for params in [base, no_branch] {
        let p = params.controls_disabled();
        for o in [op(1.0, 0.0, 0.0), op(0.9, 0.8, -0.6), op(1.1, -0.5, 0.5)] {
            let model = AdmittanceModel::new(&p, &o).unwrap();
            for f in [1.0, 7.3, 60.0, 200.0] {
                let y = model.at(f).unwrap().entries();
                let want = rl_closed_form(p.lf + p.lg, p.rf + p.rg, p.omega_b, f);
                for (got, want) in y.iter().zip(want) {
                    assert!(
                        (got - want).norm() <= 1e-10 * want.norm().max(1.0),
                        "{got} vs {want} at {f} Hz"
                    );
                }
            }
        }
    }
}

#[test]
fn admittance_is_conjugate_symmetric() {
    for name in ["GFLI1", "GFLI3", "GFMI2"] {
        let model = AdmittanceModel::new(&catalog(name), &op(1.0, 0.7, -0.3)).unwrap();
        for f in [1.0, 13.0, 150.0] {
            let pos = model.at(f).unwrap().entries();
            let neg = model.at(-f).unwrap().entries();
            for (a, b) in pos.iter().zip(neg) {
                assert!((a.conj() - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }
}

#[test]
fn pll_gains_shape_low_frequency_ydd() {
    let o = op(1.0, 1.0, 0.0);
    let y1 = AdmittanceModel::new(&catalog("GFLI1"), &o).unwrap();
    let y4 = AdmittanceModel::new(&catalog("GFLI4"), &o).unwrap();
    let rel = |f: f64| {
        let a = y1.at(f).unwrap().ydd.norm();
        let b = y4.at(f).unwrap().ydd.norm();
        (a - b).abs() / a
    };
    let (lo, hi) = (rel(2.0), rel(150.0));
    assert!(lo > 0.02 && lo > 10.0 * hi, "2 Hz: {lo}, 150 Hz: {hi}");
}

#[test]
fn admittance_rejects_bad_frequency() {
    let p = catalog("GFLI1");
    assert!(matches!(
        admittance(&p, &op(1.0, 0.0, 0.0), 0.0),
        Err(IbrError::InvalidFrequency(_))
    ));
    assert!(admittance(&p, &op(1.0, 0.0, 0.0), f64::NAN).is_err());
    assert!(admittance(&p, &op(1.0, 0.0, 0.0), 60.0)
        .unwrap()
        .is_finite());
}

#[test]
fn zero_operating_point_has_no_angle_coupling() {
    // artificial linearization point: no voltage, no current
    for name in ["GFLI1", "GFMI1"] {
        let p = catalog(name);
        let mut ss = steady_state(&p, &op(1.0, 0.0, 0.0)).unwrap();
        ss.vd0 = 0.0;
        ss.theta0 = 0.0;
        match &mut ss.internal {
            Equilibrium::Gfli { v_meas, vm, .. } => {
                *v_meas = [0.0; 2];
                *vm = [0.0; 2];
            }
            Equilibrium::Gfmi { i_l, v_c, vm, .. } => {
                *i_l = [0.0; 2];
                *v_c = [0.0; 2];
                *vm = [0.0; 2];
            }
        }
        let (blocks, ic) = build(&p, &ss).unwrap();
        let stacked = stack_blocks(&blocks).unwrap();
        let theta = stacked
            .outputs
            .iter()
            .position(|l| l.ends_with(".theta"))
            .unwrap();
        assert!(ic.l1.column(theta).iter().all(|g| *g == 0.0), "{name}");
    }
}

#[test]
fn droop_disabled_removes_power_path() {
    let base = InverterParams {
        mp: 0.0,
        nq: 0.0,
        ..catalog("GFMI1")
    };
    let faster = InverterParams {
        omega_c: 10.0 * base.omega_c,
        ..base.clone()
    };
    let o = op(1.0, 0.8, 0.3);
    let ss = steady_state(&base, &o).unwrap();
    let (blocks, _) = build(&base, &ss).unwrap();
    let droop = blocks
        .iter()
        .find(|b| b.inputs.iter().any(|l| l == "droop.p"))
        .unwrap();
    assert!(droop.b.iter().chain(droop.d.iter()).all(|g| *g == 0.0));
    let (ya, yb) = (
        AdmittanceModel::new(&base, &o).unwrap(),
        AdmittanceModel::new(&faster, &o).unwrap(),
    );
    for f in [1.0, 10.0, 100.0] {
        let (a, b) = (ya.at(f).unwrap(), yb.at(f).unwrap());
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert!((x - y).norm() <= 1e-9 * x.norm().max(1e-3));
        }
    }
}

#[test]
fn gfli_depends_on_operating_point_through_currents() {
    let p = catalog("GFLI2");
    let (v, id, iq) = (0.9, 0.5, -0.2);
    let a = AdmittanceModel::new(&p, &op(v, v * id, -v * iq)).unwrap();
    let b = AdmittanceModel::new(&p, &op(v, 0.45, 0.18)).unwrap();
    for f in [1.0, 30.0, 200.0] {
        let (ya, yb) = (a.at(f).unwrap(), b.at(f).unwrap());
        for (x, y) in ya.entries().iter().zip(yb.entries()) {
            assert!((x - y).norm() <= 1e-12 * x.norm());
        }
    }
}

#[test]
fn canonical_devices_are_stable_over_the_testing_grid() {
    use crate::dataset::{operating_points, GridSpec};
    use crate::ssmodel::compose;
    for p in &Catalog::canonical().ibrs {
        for o in operating_points(&GridSpec::testing()) {
            let ss = steady_state(p, &o).unwrap();
            let (blocks, ic) = build(p, &ss).unwrap();
            let sys = compose(&stack_blocks(&blocks).unwrap(), &ic).unwrap();
            let worst = sys
                .a
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst < 0.0, "{} at {o}: Re(lambda) = {worst}", p.name);
        }
    }
}
