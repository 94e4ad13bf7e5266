//! dq-frame helpers on plain 2-vectors.
//!
//! `rotation(theta)` maps system-frame quantities into a control frame that
//! leads the system frame by `theta`; its transpose maps back.

use crate::ssmodel::{Router, SsError};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[c, s], [-s, c]]
}

/// d/dtheta of [`rotation`].
pub fn rotation_deriv(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[-s, c], [-c, -s]]
}

pub fn transpose(m: Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mul(m: Mat2, x: Vec2) -> Vec2 {
    [
        m[0][0] * x[0] + m[0][1] * x[1],
        m[1][0] * x[0] + m[1][1] * x[1],
    ]
}

/// `J x` with `J = [[0, 1], [-1, 0]]`: the rotating-frame cross-coupling.
pub fn j(x: Vec2) -> Vec2 {
    [x[1], -x[0]]
}

pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn scale(k: f64, a: Vec2) -> Vec2 {
    [k * a[0], k * a[1]]
}

pub fn to_control(theta: f64, x: Vec2) -> Vec2 {
    mul(rotation(theta), x)
}

pub fn to_system(theta: f64, x: Vec2) -> Vec2 {
    mul(transpose(rotation(theta)), x)
}

/// Routes a 2-vector through a linearized frame rotation:
/// `dst = R * src + (dR/dtheta * x0) * theta`, for the rows of `dst` that
/// are `Some`.
pub fn route_rotated(
    router: &mut Router,
    dst: [Option<&str>; 2],
    src: [&str; 2],
    theta_port: &str,
    rot: Mat2,
    rot_deriv: Mat2,
    x0: Vec2,
) -> Result<(), SsError> {
    let coupling = mul(rot_deriv, x0);
    for (row, port) in dst.iter().enumerate() {
        let Some(port) = port else { continue };
        for (col, from) in src.iter().enumerate() {
            router.feed(port, from, rot[row][col])?;
        }
        router.feed(port, theta_port, coupling[row])?;
    }
    Ok(())
}
