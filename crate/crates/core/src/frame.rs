//! Drive-frame bookkeeping: virtual Z compilation and detuning phases.
//!
//! Each transition (k, k+1) of a qudit is driven in its own rotating frame.
//! Diagonal gates never need a physical pulse; they are absorbed into the
//! frame by advancing the drive phase of every transition, and each later
//! pulse is emitted with the accumulated phase. The commutation used is
//! exact: `X_k . D = D . X_k(gap_k(D))` for any diagonal unitary `D`, where
//! `gap_k(D) = arg(d_{k+1}) - arg(d_k)`.

use crate::error::{Error, Result};
use crate::gates::{pi_pulse_phased, ShiftDir};
use crate::op::Operator;
use serde::{Deserialize, Serialize};

/// Accumulated drive-phase offsets, one per transition of a single qudit.
#[derive(Clone, Debug)]
pub struct FrameTracker {
    d: usize,
    gaps: Vec<f64>,
}

impl FrameTracker {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput("frame tracking needs dimension >= 2".into()));
        }
        Ok(FrameTracker { d, gaps: vec![0.0; d - 1] })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Phase gaps, entry `k` belonging to the (k, k+1) transition.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Drive phase a pulse on transition `k` must carry to commute with every
    /// diagonal absorbed so far.
    pub fn drive_phase(&self, k: usize) -> Result<f64> {
        self.gaps
            .get(k)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("transition {k} outside dimension {}", self.d)))
    }

    /// Absorbs a diagonal unitary into the frame.
    pub fn apply_diagonal(&mut self, gate: &Operator) -> Result<()> {
        let m = gate.matrix();
        if m.nrows() != self.d {
            return Err(Error::InvalidInput(format!(
                "diagonal gate is {}x{} but the frame has dimension {}",
                m.nrows(),
                m.ncols(),
                self.d
            )));
        }
        let mut args = Vec::with_capacity(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && m[(i, j)].norm() > 1e-10 {
                    return Err(Error::MatrixCheck(format!(
                        "gate is not diagonal: |entry ({i},{j})| = {:.3e}",
                        m[(i, j)].norm()
                    )));
                }
            }
            let z = m[(i, i)];
            if (z.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::MatrixCheck(format!(
                    "diagonal entry {i} has modulus {:.12}",
                    z.norm()
                )));
            }
            args.push(z.arg());
        }
        for k in 0..self.d - 1 {
            self.gaps[k] += args[k + 1] - args[k];
        }
        Ok(())
    }

    /// The pulse on transition `k` that stands in for a plain pi pulse after
    /// every absorbed diagonal, via `X_k . D = D . X_k(gap_k)`.
    pub fn phased_pulse(&self, k: usize) -> Result<Operator> {
        pi_pulse_phased(k, self.drive_phase(k)?, self.d)
    }
}

/// Frequency offset of the 1-2 drive frame relative to true resonance,
/// with phases referenced to time `t0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningModel {
    /// Angular frequency error in radians per tick.
    pub delta: f64,
    /// Reference time: the first 1-2 space pulse of the circuit.
    pub t0: f64,
}

impl DetuningModel {
    pub fn new(delta: f64) -> Self {
        DetuningModel { delta, t0: 0.0 }
    }

    pub fn zero() -> Self {
        DetuningModel { delta: 0.0, t0: 0.0 }
    }

    /// Accumulated drive phase `delta * (t - t0)` at time `t`.
    pub fn phase_at(&self, t: f64) -> f64 {
        self.delta * (t - self.t0)
    }
}

/// Drive phase actually carried by a qutrit pulse on transition `k` at time
/// `t`: only the 1-2 frame is detuned, the 0-1 frame is the reference.
pub fn qutrit_pulse_phase(k: usize, base_phase: f64, t: f64, model: &DetuningModel) -> f64 {
    if k == 1 {
        base_phase + model.phase_at(t)
    } else {
        base_phase
    }
}

/// Detuned qutrit pi pulse at time `t`.
pub fn detuned_pi_pulse(k: usize, base_phase: f64, t: f64, model: &DetuningModel) -> Result<Operator> {
    pi_pulse_phased(k, qutrit_pulse_phase(k, base_phase, t, model), 3)
}

/// The realized 1-2 pi pulse at time `t`, `P_2(-dt) X_1 P_2(dt)`.
pub fn detuned_x1(model: &DetuningModel, t: f64) -> Result<Operator> {
    detuned_pi_pulse(1, 0.0, t, model)
}

/// Detuned cyclic shift at time `t`: the pi-pulse chain with the 1-2 pulse
/// carrying the frame phase.
pub fn detuned_cyclic_shift(dir: ShiftDir, t: f64, model: &DetuningModel) -> Result<Operator> {
    let x01 = detuned_pi_pulse(0, 0.0, t, model)?;
    let x12 = detuned_pi_pulse(1, 0.0, t, model)?;
    match dir {
        ShiftDir::Raise => x01.compose(&x12),
        ShiftDir::Lower => x12.compose(&x01),
    }
}
