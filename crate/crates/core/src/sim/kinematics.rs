use super::WorldConfig;
use crate::error::{Error, Result};

/// Gripper position and heading (`q₁ + q₂`) with the arm base at the origin.
pub fn forward_kinematics(q: [f64; 2], world: &WorldConfig) -> ([f64; 2], f64) {
    let [l1, l2] = world.link_lengths_m;
    let q12 = q[0] + q[1];
    let pos = [l1 * q[0].cos() + l2 * q12.cos(), l1 * q[0].sin() + l2 * q12.sin()];
    (pos, q12)
}

/// `∂position/∂q`, rows are x and y.
pub fn jacobian(q: [f64; 2], world: &WorldConfig) -> [[f64; 2]; 2] {
    let [l1, l2] = world.link_lengths_m;
    let (s1, c1) = q[0].sin_cos();
    let (s12, c12) = (q[0] + q[1]).sin_cos();
    [[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]]
}

/// Closed-form two-link IK. `elbow_sign` picks the sign of `q₂`.
pub fn inverse_kinematics(target: [f64; 2], elbow_sign: f64, world: &WorldConfig) -> Result<[f64; 2]> {
    let [l1, l2] = world.link_lengths_m;
    let [x, y] = target;
    let r2 = x * x + y * y;
    let r = r2.sqrt();
    const SLACK: f64 = 1e-12;
    if !r.is_finite() || r > l1 + l2 + SLACK || r < (l1 - l2).abs() - SLACK {
        return Err(Error::OutOfWorkspace { x, y });
    }
    let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = elbow_sign.signum() * c2.acos();
    let q1 = y.atan2(x) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok([q1, q2])
}
