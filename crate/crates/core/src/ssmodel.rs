//! State-space blocks, block-diagonal stacking, interconnection and
//! frequency response.
//!
//! A composite model is built with the component-connection method: every
//! subsystem is a `(A, B, C, D)` quadruple, the blocks are stacked on the
//! block diagonal, and four routing matrices describe how the stacked inputs
//! are fed from the stacked outputs and from the external inputs:
//!
//! ```text
//! u     = L1 * y + L2 * u_ext
//! y_ext = L3 * y + L4 * u_ext
//! ```
//!
//! [`compose`] eliminates `u` and `y` and returns one [`CompositeSystem`]
//! whose transfer matrix is evaluated by [`CompositeSystem::frequency_response`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex64>;

/// Condition number above which the resolvent is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative frequency nudge applied once when the resolvent is singular.
pub const RESONANCE_NUDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsError {
    #[error("cannot stack an empty block list")]
    EmptyStack,
    #[error("block {index} is inconsistent: {reason}")]
    InconsistentBlock { index: usize, reason: String },
    #[error("interconnection does not match the stacked system: {0}")]
    InterconnectionShape(String),
    #[error("unknown port `{0}`")]
    UnknownPort(String),
    #[error("duplicate port label `{0}`")]
    DuplicatePort(String),
    #[error("algebraic loop: I - D*L1 is singular (smallest singular value {sigma_min:.3e})")]
    AlgebraicLoop { sigma_min: f64 },
    #[error(
        "resolvent (jwI - A) is singular at omega = {omega} rad/s (condition {condition:.3e})"
    )]
    SingularResolvent { omega: f64, condition: f64 },
    #[error("frequency must be finite, got {0}")]
    NonFiniteFrequency(f64),
}

/// One linear subsystem `dx/dt = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceBlock {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl StateSpaceBlock {
    /// Builds a block with generic port labels `u0.., y0..`.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self, SsError> {
        let inputs = (0..d.ncols()).map(|i| format!("u{i}")).collect();
        let outputs = (0..d.nrows()).map(|i| format!("y{i}")).collect();
        let block = Self {
            a,
            b,
            c,
            d,
            inputs,
            outputs,
        };
        block.validate(0)?;
        Ok(block)
    }

    /// Static gain block with no states.
    pub fn gain(d: Matrix) -> Self {
        let (p, m) = d.shape();
        Self::new(
            Matrix::zeros(0, 0),
            Matrix::zeros(0, m),
            Matrix::zeros(p, 0),
            d,
        )
        .expect("a static gain is always consistent")
    }

    pub fn with_labels<I, O>(mut self, inputs: I, outputs: O) -> Result<Self, SsError>
    where
        I: IntoIterator,
        I::Item: Into<String>,
        O: IntoIterator,
        O::Item: Into<String>,
    {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self.outputs = outputs.into_iter().map(Into::into).collect();
        self.validate(0)?;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.d.nrows()
    }

    /// Checks dimension consistency; `index` is reported in the error.
    pub fn validate(&self, index: usize) -> Result<(), SsError> {
        let n = self.a.nrows();
        let (p, m) = self.d.shape();
        let fail = |reason: String| Err(SsError::InconsistentBlock { index, reason });
        if self.a.ncols() != n {
            return fail(format!("A is {}x{}, not square", n, self.a.ncols()));
        }
        if self.b.shape() != (n, m) {
            return fail(format!("B is {:?}, expected {:?}", self.b.shape(), (n, m)));
        }
        if self.c.shape() != (p, n) {
            return fail(format!("C is {:?}, expected {:?}", self.c.shape(), (p, n)));
        }
        if self.inputs.len() != m || self.outputs.len() != p {
            return fail(format!(
                "{} input / {} output labels for a {}x{} feedthrough",
                self.inputs.len(),
                self.outputs.len(),
                p,
                m
            ));
        }
        Ok(())
    }

    /// Transfer matrix of this block alone at `s = j*omega`.
    pub fn frequency_response(&self, omega: f64) -> Result<CMatrix, SsError> {
        resolvent_response(&self.a, &self.b, &self.c, &self.d, omega)
    }
}

/// Stacks blocks on the block diagonal, preserving port order.
pub fn stack_blocks(blocks: &[StateSpaceBlock]) -> Result<StateSpaceBlock, SsError> {
    if blocks.is_empty() {
        return Err(SsError::EmptyStack);
    }
    for (i, blk) in blocks.iter().enumerate() {
        blk.validate(i)?;
    }
    let n: usize = blocks.iter().map(StateSpaceBlock::n_states).sum();
    let m: usize = blocks.iter().map(StateSpaceBlock::n_inputs).sum();
    let p: usize = blocks.iter().map(StateSpaceBlock::n_outputs).sum();

    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, m);
    let mut c = Matrix::zeros(p, n);
    let mut d = Matrix::zeros(p, m);
    let mut inputs = Vec::with_capacity(m);
    let mut outputs = Vec::with_capacity(p);

    let (mut xo, mut uo, mut yo) = (0, 0, 0);
    for blk in blocks {
        let (bn, bm, bp) = (blk.n_states(), blk.n_inputs(), blk.n_outputs());
        a.view_mut((xo, xo), (bn, bn)).copy_from(&blk.a);
        b.view_mut((xo, uo), (bn, bm)).copy_from(&blk.b);
        c.view_mut((yo, xo), (bp, bn)).copy_from(&blk.c);
        d.view_mut((yo, uo), (bp, bm)).copy_from(&blk.d);
        inputs.extend(blk.inputs.iter().cloned());
        outputs.extend(blk.outputs.iter().cloned());
        xo += bn;
        uo += bm;
        yo += bp;
    }
    Ok(StateSpaceBlock {
        a,
        b,
        c,
        d,
        inputs,
        outputs,
    })
}

/// Routing matrices of the component-connection method.
#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    /// stacked inputs x stacked outputs
    pub l1: Matrix,
    /// stacked inputs x external inputs
    pub l2: Matrix,
    /// external outputs x stacked outputs
    pub l3: Matrix,
    /// external outputs x external inputs
    pub l4: Matrix,
}

impl Interconnection {
    pub fn zeros(total_inputs: usize, total_outputs: usize, ext_in: usize, ext_out: usize) -> Self {
        Self {
            l1: Matrix::zeros(total_inputs, total_outputs),
            l2: Matrix::zeros(total_inputs, ext_in),
            l3: Matrix::zeros(ext_out, total_outputs),
            l4: Matrix::zeros(ext_out, ext_in),
        }
    }

    pub fn n_ext_inputs(&self) -> usize {
        self.l2.ncols()
    }

    pub fn n_ext_outputs(&self) -> usize {
        self.l3.nrows()
    }

    fn check_against(&self, stacked: &StateSpaceBlock) -> Result<(), SsError> {
        let (m, p) = (stacked.n_inputs(), stacked.n_outputs());
        let (ext_in, ext_out) = (self.l2.ncols(), self.l3.nrows());
        let expect = [
            ("L1", self.l1.shape(), (m, p)),
            ("L2", self.l2.shape(), (m, ext_in)),
            ("L3", self.l3.shape(), (ext_out, p)),
            ("L4", self.l4.shape(), (ext_out, ext_in)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(SsError::InterconnectionShape(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds an [`Interconnection`] by port label instead of by index.
#[derive(Debug, Clone)]
pub struct Router {
    inputs: Vec<String>,
    outputs: Vec<String>,
    ic: Interconnection,
}

impl Router {
    pub fn new(stacked: &StateSpaceBlock, ext_in: usize, ext_out: usize) -> Result<Self, SsError> {
        for labels in [&stacked.inputs, &stacked.outputs] {
            for (i, l) in labels.iter().enumerate() {
                if labels[..i].contains(l) {
                    return Err(SsError::DuplicatePort(l.clone()));
                }
            }
        }
        Ok(Self {
            inputs: stacked.inputs.clone(),
            outputs: stacked.outputs.clone(),
            ic: Interconnection::zeros(stacked.n_inputs(), stacked.n_outputs(), ext_in, ext_out),
        })
    }

    fn input(&self, label: &str) -> Result<usize, SsError> {
        self.inputs
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SsError::UnknownPort(label.to_string()))
    }

    fn output(&self, label: &str) -> Result<usize, SsError> {
        self.outputs
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SsError::UnknownPort(label.to_string()))
    }

    /// Adds `gain * y[output]` to `u[input]`.
    pub fn feed(&mut self, input: &str, output: &str, gain: f64) -> Result<&mut Self, SsError> {
        let (i, o) = (self.input(input)?, self.output(output)?);
        self.ic.l1[(i, o)] += gain;
        Ok(self)
    }

    /// Adds `gain * u_ext[ext]` to `u[input]`.
    pub fn feed_external(
        &mut self,
        input: &str,
        ext: usize,
        gain: f64,
    ) -> Result<&mut Self, SsError> {
        let i = self.input(input)?;
        self.ic.l2[(i, ext)] += gain;
        Ok(self)
    }

    /// Adds `gain * y[output]` to `y_ext[ext]`.
    pub fn expose(&mut self, ext: usize, output: &str, gain: f64) -> Result<&mut Self, SsError> {
        let o = self.output(output)?;
        self.ic.l3[(ext, o)] += gain;
        Ok(self)
    }

    pub fn finish(self) -> Interconnection {
        self.ic
    }
}

/// A composed system with external inputs and outputs only.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl CompositeSystem {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_ext_in(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_ext_out(&self) -> usize {
        self.d.nrows()
    }

    /// `G(jw) = C (jwI - A)^-1 B + D`, via an LU solve of the resolvent.
    pub fn frequency_response(&self, omega: f64) -> Result<CMatrix, SsError> {
        resolvent_response(&self.a, &self.b, &self.c, &self.d, omega)
    }

    /// Like [`Self::frequency_response`] but retries once at
    /// `omega * (1 + RESONANCE_NUDGE)` when the resolvent is singular.
    pub fn frequency_response_nudged(&self, omega: f64) -> Result<CMatrix, SsError> {
        match self.frequency_response(omega) {
            Err(SsError::SingularResolvent { .. }) => {
                self.frequency_response(omega * (1.0 + RESONANCE_NUDGE))
            }
            other => other,
        }
    }

    /// Solves `(jwI - A) X = B` and returns `X`.
    pub fn resolvent_solve(&self, omega: f64) -> Result<CMatrix, SsError> {
        resolvent_solve(&self.a, &self.b, omega)
    }
}

/// Eliminates the internal signals of `stacked` under the routing `ic`.
///
/// With `F = (I - D L1)^-1`:
/// `A + B L1 F C`, `B (L1 F D + I) L2`, `L3 F C`, `L3 F D L2 + L4`.
pub fn compose(
    stacked: &StateSpaceBlock,
    ic: &Interconnection,
) -> Result<CompositeSystem, SsError> {
    stacked.validate(0)?;
    ic.check_against(stacked)?;
    let p = stacked.n_outputs();
    let m = stacked.n_inputs();

    let loop_matrix = Matrix::identity(p, p) - &stacked.d * &ic.l1;
    let (fc, fd) = if p == 0 {
        (stacked.c.clone(), stacked.d.clone())
    } else {
        let lu = loop_matrix.clone().lu();
        let pivots = lu.u().diagonal().map(f64::abs);
        let (lo, hi) = (pivots.min(), pivots.max());
        let singular = !(lo > 0.0) || lo / hi < 1.0 / MAX_CONDITION;
        let solved = if singular {
            None
        } else {
            lu.solve(&stacked.c).zip(lu.solve(&stacked.d))
        };
        match solved {
            Some(pair) => pair,
            None => {
                let sigma_min = loop_matrix.singular_values().min();
                return Err(SsError::AlgebraicLoop { sigma_min });
            }
        }
    };

    let a = &stacked.a + &stacked.b * &ic.l1 * &fc;
    let b = &stacked.b * (&ic.l1 * &fd + Matrix::identity(m, m)) * &ic.l2;
    let c = &ic.l3 * &fc;
    let d = &ic.l3 * &fd * &ic.l2 + &ic.l4;
    Ok(CompositeSystem { a, b, c, d })
}

fn complexify(m: &Matrix) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn resolvent_solve(a: &Matrix, b: &Matrix, omega: f64) -> Result<CMatrix, SsError> {
    if !omega.is_finite() {
        return Err(SsError::NonFiniteFrequency(omega));
    }
    let n = a.nrows();
    let bc = complexify(b);
    if n == 0 {
        return Ok(bc);
    }
    let mut resolvent = -complexify(a);
    for i in 0..n {
        resolvent[(i, i)] += Complex64::new(0.0, omega);
    }
    let norm1 = one_norm(&resolvent);
    let lu = resolvent.lu();
    // one solve for both the response and the condition estimate
    let mut rhs = CMatrix::zeros(n, bc.ncols() + n);
    rhs.view_mut((0, 0), (n, bc.ncols())).copy_from(&bc);
    rhs.view_mut((0, bc.ncols()), (n, n)).fill_with_identity();
    let singular = |condition: f64| SsError::SingularResolvent { omega, condition };
    let sol = lu.solve(&rhs).ok_or_else(|| singular(f64::INFINITY))?;
    let condition = norm1 * one_norm(&sol.columns(bc.ncols(), n).into_owned());
    if !(condition <= MAX_CONDITION) {
        return Err(singular(condition));
    }
    Ok(sol.columns(0, bc.ncols()).into_owned())
}

fn resolvent_response(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    omega: f64,
) -> Result<CMatrix, SsError> {
    let x = resolvent_solve(a, b, omega)?;
    if a.nrows() == 0 {
        return Ok(complexify(d));
    }
    Ok(complexify(c) * x + complexify(d))
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpaceBlock {
        StateSpaceBlock::new(m(1, 1, &[a]), m(1, 1, &[b]), m(1, 1, &[c]), m(1, 1, &[d])).unwrap()
    }

    #[test]
    fn stack_two_scalar_blocks_is_diagonal() {
        let s = stack_blocks(&[scalar(-1.0, 1.0, 1.0, 0.0), scalar(-3.0, 2.0, 1.0, 0.0)]).unwrap();
        assert_eq!(s.a, m(2, 2, &[-1.0, 0.0, 0.0, -3.0]));
        assert_eq!(s.b, m(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert_eq!(s.inputs, vec!["u0", "u0"]);
    }

    #[test]
    fn stack_single_block_is_identity() {
        let blk = scalar(-2.0, 1.0, 3.0, 0.5);
        assert_eq!(stack_blocks(&[blk.clone()]).unwrap(), blk);
    }

    #[test]
    fn stack_dynamic_and_static() {
        let dynamic = StateSpaceBlock::new(
            m(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[0.0]),
        )
        .unwrap();
        let gain = StateSpaceBlock::gain(m(2, 3, &[1.0; 6]));
        let s = stack_blocks(&[dynamic, gain]).unwrap();
        assert_eq!(s.a.shape(), (2, 2));
        assert_eq!(s.d.shape(), (3, 4));
        assert_eq!(s.b.shape(), (2, 4));
        assert_eq!(s.c.shape(), (3, 2));
    }

    #[test]
    fn inconsistent_block_reports_index() {
        let good = scalar(-1.0, 1.0, 1.0, 0.0);
        let mut bad = good.clone();
        bad.b = Matrix::zeros(2, 1);
        let err = stack_blocks(&[good, bad]).unwrap_err();
        assert!(
            matches!(err, SsError::InconsistentBlock { index: 1, .. }),
            "{err}"
        );
        assert_eq!(stack_blocks(&[]).unwrap_err(), SsError::EmptyStack);
    }

    #[test]
    fn passthrough_routing_keeps_matrices() {
        let blk = StateSpaceBlock::new(
            m(2, 2, &[-1.0, 0.25, 0.5, -2.0]),
            m(2, 1, &[1.0, 0.5]),
            m(1, 2, &[2.0, -1.0]),
            m(1, 1, &[0.0]),
        )
        .unwrap();
        let ic = Interconnection {
            l1: Matrix::zeros(1, 1),
            l2: Matrix::identity(1, 1),
            l3: Matrix::identity(1, 1),
            l4: Matrix::zeros(1, 1),
        };
        let sys = compose(&blk, &ic).unwrap();
        assert_eq!(sys.a, blk.a);
        assert_eq!(sys.b, blk.b);
        assert_eq!(sys.c, blk.c);
        assert_eq!(sys.d, blk.d);
    }

    #[test]
    fn integrators_in_series() {
        let stacked = stack_blocks(&[
            scalar(0.0, 1.0, 1.0, 0.0)
                .with_labels(["a_in"], ["a_out"])
                .unwrap(),
            scalar(0.0, 1.0, 1.0, 0.0)
                .with_labels(["b_in"], ["b_out"])
                .unwrap(),
        ])
        .unwrap();
        let mut r = Router::new(&stacked, 1, 1).unwrap();
        r.feed_external("a_in", 0, 1.0).unwrap();
        r.feed("b_in", "a_out", 1.0).unwrap();
        r.expose(0, "b_out", 1.0).unwrap();
        let sys = compose(&stacked, &r.finish()).unwrap();
        for omega in [0.3, 1.0, 2.0, 17.0] {
            let g = sys.frequency_response(omega).unwrap()[(0, 0)];
            assert_relative_eq!(g.re, -1.0 / (omega * omega), max_relative = 1e-12);
            assert!(g.im.abs() < 1e-12 / (omega * omega));
        }
    }

    #[test]
    fn static_gain_with_negative_feedback() {
        let stacked = StateSpaceBlock::gain(m(1, 1, &[2.0]));
        let ic = Interconnection {
            l1: m(1, 1, &[-1.0]),
            l2: m(1, 1, &[1.0]),
            l3: m(1, 1, &[1.0]),
            l4: m(1, 1, &[0.0]),
        };
        let sys = compose(&stacked, &ic).unwrap();
        assert_relative_eq!(sys.d[(0, 0)], 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(sys.n_states(), 0);
    }

    #[test]
    fn algebraic_loop_is_rejected() {
        let stacked = StateSpaceBlock::gain(m(1, 1, &[1.0]));
        let ic = Interconnection {
            l1: m(1, 1, &[1.0]),
            l2: m(1, 1, &[1.0]),
            l3: m(1, 1, &[1.0]),
            l4: m(1, 1, &[0.0]),
        };
        let err = compose(&stacked, &ic).unwrap_err();
        assert!(matches!(err, SsError::AlgebraicLoop { sigma_min } if sigma_min < 1e-12));
    }

    #[test]
    fn mismatched_routing_is_rejected() {
        let stacked = scalar(-1.0, 1.0, 1.0, 0.0);
        let ic = Interconnection::zeros(2, 1, 1, 1);
        assert!(matches!(
            compose(&stacked, &ic),
            Err(SsError::InterconnectionShape(_))
        ));
    }

    #[test]
    fn router_rejects_unknown_ports() {
        let stacked = scalar(-1.0, 1.0, 1.0, 0.0)
            .with_labels(["in"], ["out"])
            .unwrap();
        let mut r = Router::new(&stacked, 1, 1).unwrap();
        assert_eq!(
            r.feed("nope", "out", 1.0).unwrap_err(),
            SsError::UnknownPort("nope".into())
        );
    }

    #[test]
    fn integrator_response() {
        let g = scalar(0.0, 1.0, 1.0, 0.0).frequency_response(2.0).unwrap()[(0, 0)];
        assert_eq!(g, Complex64::new(0.0, -0.5));
    }

    #[test]
    fn pure_gain_response() {
        let blk = StateSpaceBlock::gain(m(1, 1, &[5.0]));
        for omega in [0.0, 1.0, 1e6] {
            assert_eq!(
                blk.frequency_response(omega).unwrap()[(0, 0)],
                Complex64::new(5.0, 0.0)
            );
        }
    }

    #[test]
    fn first_order_lag_response() {
        let g = scalar(-1.0, 1.0, 1.0, 0.0).frequency_response(1.0).unwrap()[(0, 0)];
        assert_relative_eq!(g.re, 0.5, max_relative = 1e-15);
        assert_relative_eq!(g.im, -0.5, max_relative = 1e-15);
    }

    #[test]
    fn undamped_mode_is_singular_and_nudge_is_bounded() {
        // oscillator with modes at +-j
        let sys = CompositeSystem {
            a: m(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            b: m(2, 1, &[0.0, 1.0]),
            c: m(1, 2, &[1.0, 0.0]),
            d: m(1, 1, &[0.0]),
        };
        let err = sys.frequency_response(1.0).unwrap_err();
        assert!(matches!(err, SsError::SingularResolvent { omega, .. } if omega == 1.0));
        assert!(sys.frequency_response(f64::NAN).is_err());
        let nudged = sys.frequency_response_nudged(1.0).unwrap()[(0, 0)];
        let w = 1.0 + RESONANCE_NUDGE;
        assert_relative_eq!(nudged.re, 1.0 / (1.0 - w * w), max_relative = 1e-6);
    }
}
