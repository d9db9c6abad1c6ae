//! Standard gate matrices. Rotations follow `R_a(θ) = exp(−iθσ_a/2)`.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::linalg::{c, cmat, CMatrix, I, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

pub fn id2() -> CMatrix {
    CMatrix::identity(2, 2)
}

pub fn x() -> CMatrix {
    cmat(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn y() -> CMatrix {
    cmat(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn z() -> CMatrix {
    cmat(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn h() -> CMatrix {
    let s = c(FRAC_1_SQRT_2, 0.0);
    cmat(2, 2, &[s, s, s, -s])
}

/// `S = diag(1, i)`.
pub fn s() -> CMatrix {
    cmat(2, 2, &[ONE, ZERO, ZERO, I])
}

pub fn sdg() -> CMatrix {
    cmat(2, 2, &[ONE, ZERO, ZERO, -I])
}

pub fn cz() -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ONE, ONE, ONE, -ONE]))
}

/// CNOT with the control on the low (first) qubit in little-endian order.
pub fn cnot_low_control() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    // index = c + 2 t
    for ctrl in 0..2 {
        for t in 0..2 {
            let out_t = t ^ ctrl;
            m[(ctrl + 2 * out_t, ctrl + 2 * t)] = ONE;
        }
    }
    m
}

pub fn swap() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 2)] = ONE;
    m[(2, 1)] = ONE;
    m[(3, 3)] = ONE;
    m
}

/// iSWAP: `|01⟩ → i|10⟩`, `|10⟩ → i|01⟩`.
pub fn iswap() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = ONE;
    m[(1, 2)] = I;
    m[(2, 1)] = I;
    m[(3, 3)] = ONE;
    m
}

pub fn rx(theta: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    cmat(2, 2, &[c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)])
}

pub fn ry(theta: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    cmat(2, 2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

pub fn rz(theta: f64) -> CMatrix {
    cmat(
        2,
        2,
        &[
            c(0.0, -theta / 2.0).exp(),
            ZERO,
            ZERO,
            c(0.0, theta / 2.0).exp(),
        ],
    )
}

pub fn rotation(axis: Axis, theta: f64) -> CMatrix {
    match axis {
        Axis::X => rx(theta),
        Axis::Y => ry(theta),
        Axis::Z => rz(theta),
    }
}

/// π rotation about the equatorial axis at azimuth `phi`:
/// `−i(cos φ X + sin φ Y)`.
pub fn equatorial_pi(phi: f64) -> CMatrix {
    (x() * c(phi.cos(), 0.0) + y() * c(phi.sin(), 0.0)) * (-I)
}

/// Resonant-frame pulse `exp(−iθ(cos φ X + sin φ Y)/2)`.
pub fn equatorial_rotation(theta: f64, phi: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    let axis = x() * c(phi.cos(), 0.0) + y() * c(phi.sin(), 0.0);
    id2() * c(co, 0.0) - axis * c(0.0, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{phase_insensitive_distance, unitarity_error};

    #[test]
    fn named_gates_are_unitary() {
        for g in [x(), y(), z(), h(), s(), sdg(), cz(), swap(), iswap(), cnot_low_control()] {
            assert!(unitarity_error(&g) < 1e-15);
        }
    }

    #[test]
    fn hadamard_from_rotations() {
        // Rz(π) first, then Ry(π/2).
        let hh = ry(std::f64::consts::FRAC_PI_2) * rz(std::f64::consts::PI);
        assert!(phase_insensitive_distance(&hh, &h()) < 1e-15);
    }

    #[test]
    fn s_squared_is_z() {
        assert!(phase_insensitive_distance(&(s() * s()), &z()) < 1e-15);
        assert!(phase_insensitive_distance(&(s() * z()), &sdg()) < 1e-15);
    }
}
