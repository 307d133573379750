//! Gate constructors for qudit sites and small fixed registers.
//!
//! Subspace pulses follow the hardware convention: a resonant pi pulse on the
//! (k, k+1) transition carries a uniform factor -i on every level, so chained
//! pulses compose into cyclic shifts with a definite global phase.

use crate::error::{Error, Result};
use crate::op::{tensor, Operator, SystemShape};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

fn check_level(l: usize, d: usize) -> Result<()> {
    if l >= d {
        return Err(Error::InvalidInput(format!("level {l} outside dimension {d}")));
    }
    Ok(())
}

fn check_transition(k: usize, d: usize) -> Result<()> {
    if k + 1 >= d {
        return Err(Error::InvalidInput(format!(
            "transition ({k},{}) outside dimension {d}",
            k + 1
        )));
    }
    Ok(())
}

/// Projector `|l><l|` on a `d`-level site.
pub fn projector(l: usize, d: usize) -> Result<Operator> {
    check_level(l, d)?;
    let mut m = Array2::<C64>::zeros((d, d));
    m[(l, l)] = C64::new(1.0, 0.0);
    Operator::new(SystemShape::site(d)?, m)
}

/// Phase gradation `Q(phi) = sum_l e^{i l phi} |l><l|`.
pub fn phase_gradation(phi: f64, d: usize) -> Result<Operator> {
    let mut m = Array2::<C64>::zeros((d, d));
    for l in 0..d {
        m[(l, l)] = C64::from_polar(1.0, l as f64 * phi);
    }
    Operator::new(SystemShape::site(d)?, m)
}

/// Single-level phase `P_l(phi) = e^{i phi |l><l|}`.
pub fn level_phase(l: usize, phi: f64, d: usize) -> Result<Operator> {
    check_level(l, d)?;
    let mut m = Array2::<C64>::eye(d);
    m[(l, l)] = C64::from_polar(1.0, phi);
    Operator::new(SystemShape::site(d)?, m)
}

/// Subspace Z rotation: `e^{-i phi/2}` on level `k`, `e^{+i phi/2}` on `k+1`.
pub fn subspace_rz(k: usize, phi: f64, d: usize) -> Result<Operator> {
    check_transition(k, d)?;
    let mut m = Array2::<C64>::eye(d);
    m[(k, k)] = C64::from_polar(1.0, -phi / 2.0);
    m[(k + 1, k + 1)] = C64::from_polar(1.0, phi / 2.0);
    Operator::new(SystemShape::site(d)?, m)
}

/// Transition generator `X_k = |k><k+1| + |k+1><k|` (zero elsewhere).
pub fn x_k(k: usize, d: usize) -> Result<Operator> {
    check_transition(k, d)?;
    let mut m = Array2::<C64>::zeros((d, d));
    m[(k, k + 1)] = C64::new(1.0, 0.0);
    m[(k + 1, k)] = C64::new(1.0, 0.0);
    Operator::new(SystemShape::site(d)?, m)
}

/// Subspace X rotation `exp(-i theta X_k / 2)`, identity on other levels.
pub fn subspace_rx(k: usize, theta: f64, d: usize) -> Result<Operator> {
    check_transition(k, d)?;
    let mut m = Array2::<C64>::eye(d);
    let (s, c) = (theta / 2.0).sin_cos();
    m[(k, k)] = C64::new(c, 0.0);
    m[(k + 1, k + 1)] = C64::new(c, 0.0);
    m[(k, k + 1)] = C64::new(0.0, -s);
    m[(k + 1, k)] = C64::new(0.0, -s);
    Operator::new(SystemShape::site(d)?, m)
}

/// Resonant pi pulse on the (k, k+1) transition: the level swap times a
/// uniform -i.
pub fn pi_pulse(k: usize, d: usize) -> Result<Operator> {
    pi_pulse_phased(k, 0.0, d)
}

/// Pi pulse with drive phase `phi`:
/// `-i (e^{i phi}|k><k+1| + e^{-i phi}|k+1><k| + sum_other |m><m|)`.
pub fn pi_pulse_phased(k: usize, phi: f64, d: usize) -> Result<Operator> {
    check_transition(k, d)?;
    let mi = C64::new(0.0, -1.0);
    let mut m = Array2::<C64>::zeros((d, d));
    for l in 0..d {
        if l != k && l != k + 1 {
            m[(l, l)] = mi;
        }
    }
    m[(k, k + 1)] = mi * C64::from_polar(1.0, phi);
    m[(k + 1, k)] = mi * C64::from_polar(1.0, -phi);
    Operator::new(SystemShape::site(d)?, m)
}

/// Half pulse `exp(-i pi X_k / 4)` (square root of the subspace flip).
pub fn half_pulse(k: usize, d: usize) -> Result<Operator> {
    subspace_rx(k, FRAC_PI_2, d)
}

/// Direction of a cyclic level shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftDir {
    /// `|l> -> |l+1 mod d>`, built from pi pulses bottom-up.
    Raise,
    /// `|l> -> |l-1 mod d>`, the reversed chain.
    Lower,
}

/// Cyclic shift as the physical pi-pulse chain, `(-i)^{d-1}` times the pure
/// cyclic permutation.
pub fn cyclic_shift(dir: ShiftDir, d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::InvalidInput("cyclic shift needs dimension >= 2".into()));
    }
    let mut u = Operator::identity(SystemShape::site(d)?);
    match dir {
        // Product X_0 X_1 ... X_{d-2} with X_{d-2} acting first.
        ShiftDir::Raise => {
            for k in 0..d - 1 {
                u = u.compose(&pi_pulse(k, d)?)?;
            }
        }
        // Product X_{d-2} ... X_1 X_0 with X_0 acting first.
        ShiftDir::Lower => {
            for k in (0..d - 1).rev() {
                u = u.compose(&pi_pulse(k, d)?)?;
            }
        }
    }
    Ok(u)
}

/// Pure cyclic permutation `sum_l |l+1><l|` (Raise) or its inverse (Lower).
pub fn shift_permutation(dir: ShiftDir, d: usize) -> Result<Operator> {
    let mut m = Array2::<C64>::zeros((d, d));
    for l in 0..d {
        match dir {
            ShiftDir::Raise => m[((l + 1) % d, l)] = C64::new(1.0, 0.0),
            ShiftDir::Lower => m[(l, (l + 1) % d)] = C64::new(1.0, 0.0),
        }
    }
    Operator::new(SystemShape::site(d)?, m)
}

pub fn pauli_x() -> Operator {
    x_k(0, 2).unwrap()
}

pub fn pauli_y() -> Operator {
    let mut m = Array2::<C64>::zeros((2, 2));
    m[(0, 1)] = C64::new(0.0, -1.0);
    m[(1, 0)] = C64::new(0.0, 1.0);
    Operator::new(SystemShape::site(2).unwrap(), m).unwrap()
}

pub fn pauli_z() -> Operator {
    let mut m = Array2::<C64>::eye(2);
    m[(1, 1)] = C64::new(-1.0, 0.0);
    Operator::new(SystemShape::site(2).unwrap(), m).unwrap()
}

pub fn hadamard() -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = Array2::<C64>::zeros((2, 2));
    m[(0, 0)] = C64::new(s, 0.0);
    m[(0, 1)] = C64::new(s, 0.0);
    m[(1, 0)] = C64::new(s, 0.0);
    m[(1, 1)] = C64::new(-s, 0.0);
    Operator::new(SystemShape::site(2).unwrap(), m).unwrap()
}

/// `T = diag(1, e^{i pi/4})`; negative `turns` gives the adjoint.
pub fn t_gate(turns: i32) -> Operator {
    let mut m = Array2::<C64>::eye(2);
    m[(1, 1)] = C64::from_polar(1.0, turns as f64 * PI / 4.0);
    Operator::new(SystemShape::site(2).unwrap(), m).unwrap()
}

/// Cross-axis rotation `exp(-i theta/2 X_0 (x) Z)` on a qutrit-qubit pair
/// (qutrit first); level 2 of the qutrit is untouched.
pub fn rot_xz(theta: f64) -> Result<Operator> {
    let gen = tensor(&[&x_k(0, 3)?, &pauli_z()])?;
    crate::op::expm(&gen, theta / 2.0)
}

/// CX with a qubit control (first site) and the 01 subspace of a qutrit as
/// target; qutrit level 2 is untouched.
pub fn cx_qubit_to_qutrit01() -> Result<Operator> {
    let d = 6;
    let mut m = Array2::<C64>::zeros((d, d));
    for l in 0..3 {
        m[(l, l)] = C64::new(1.0, 0.0);
    }
    m[(3, 4)] = C64::new(1.0, 0.0);
    m[(4, 3)] = C64::new(1.0, 0.0);
    m[(5, 5)] = C64::new(1.0, 0.0);
    Operator::new(SystemShape::new(vec![2, 3])?, m)
}

/// Qubit-qubit CX, control first.
pub fn cx_qubits() -> Operator {
    let mut m = Array2::<C64>::zeros((4, 4));
    m[(0, 0)] = C64::new(1.0, 0.0);
    m[(1, 1)] = C64::new(1.0, 0.0);
    m[(2, 3)] = C64::new(1.0, 0.0);
    m[(3, 2)] = C64::new(1.0, 0.0);
    Operator::new(SystemShape::new(vec![2, 2]).unwrap(), m).unwrap()
}

/// Diagonal `CCZ` on three qubits.
pub fn ccz_qubits() -> Operator {
    let mut m = Array2::<C64>::eye(8);
    m[(7, 7)] = C64::new(-1.0, 0.0);
    Operator::new(SystemShape::new(vec![2, 2, 2]).unwrap(), m).unwrap()
}

/// Toffoli with target on the last site.
pub fn toffoli_qubits() -> Operator {
    let mut m = Array2::<C64>::eye(8);
    m[(6, 6)] = C64::new(0.0, 0.0);
    m[(7, 7)] = C64::new(0.0, 0.0);
    m[(6, 7)] = C64::new(1.0, 0.0);
    m[(7, 6)] = C64::new(1.0, 0.0);
    Operator::new(SystemShape::new(vec![2, 2, 2]).unwrap(), m).unwrap()
}
