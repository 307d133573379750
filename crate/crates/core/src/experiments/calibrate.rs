//! Calibration routines run against the simulated device: recovering the
//! two phase corrections from the planted longitudinal couplings, Ramsey
//! probes of diagonal phases, process fidelity through the measurement
//! pipeline, and the decoherence scale search used to pin a target fidelity.

use std::f64::consts::PI;

use ndarray::{array, Array2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Gate, TimedCircuit};
use crate::error::{Error, Result};
use crate::experiments::build;
use crate::linalg;
use crate::noise::{NoiseModel, NoisyChannel};
use crate::tomography::{
    mitigate_readout, process_fidelity, qpt_reconstruct, ramsey_phase_fit, sample_expectations,
    Basis, ConfusionMatrix, MeasurableChannel, MeasurementPlan, PrepState, RamseyFit,
    RamseyPoint, Setting,
};

/// Wraps a phase difference into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Ramsey wrapper around a base circuit: spectator sites listed in
/// `spectator_ones` are flipped to their `1` state, the probe site gets a
/// half pulse before the circuit and a virtual phase plus a second half
/// pulse after it.
pub fn with_ramsey_probe(
    base: &TimedCircuit,
    probe_site: usize,
    spectator_ones: &[usize],
    analysis_phase: f64,
) -> Result<TimedCircuit> {
    let shape = base.shape().clone();
    if probe_site >= shape.num_sites() {
        return Err(Error::InvalidInput(format!("probe site {probe_site} is out of range")));
    }
    let mut c = TimedCircuit::new(shape.clone());
    for &s in spectator_ones {
        if s == probe_site {
            return Err(Error::InvalidInput("a spectator cannot be the probe site".into()));
        }
        if shape.site_dim(s) == 2 {
            c.push(Gate::PauliX, &[s], 0.0)?;
        } else {
            c.push(Gate::PiPulse { k: 0 }, &[s], 0.0)?;
        }
    }
    c.push(Gate::HalfPulse { k: 0 }, &[probe_site], 0.0)?;
    let identity_map: Vec<usize> = (0..shape.num_sites()).collect();
    c.append_mapped(base, &identity_map, 0.0)?;
    let end = base.duration();
    c.push(Gate::SubspaceRz { k: 0, phase: analysis_phase }, &[probe_site], end)?;
    c.push(Gate::HalfPulse { k: 0 }, &[probe_site], end)?;
    c.set_duration(end)?;
    Ok(c)
}

/// Probability that the probe site reads out excited.
fn excited_marginal(probs: &[f64], num_sites: usize, site: usize) -> f64 {
    let bit = num_sites - 1 - site;
    probs
        .iter()
        .enumerate()
        .filter(|(o, _)| (o >> bit) & 1 == 1)
        .map(|(_, p)| p)
        .sum()
}

/// Runs a Ramsey fringe against a base circuit and fits the static phase
/// picked up between the probe site's `0` and `1` branches. The fitted
/// offset estimates the diagonal phase of the `1` branch relative to the
/// `0` branch for the prepared spectator configuration.
#[allow(clippy::too_many_arguments)]
pub fn ramsey_offset(
    base: &TimedCircuit,
    noise: &NoiseModel,
    delta: f64,
    probe_site: usize,
    spectator_ones: &[usize],
    n_points: usize,
    shots: u64,
    seed: u64,
) -> Result<RamseyFit> {
    if n_points < 8 {
        return Err(Error::InvalidInput("a fringe needs at least 8 phase points".into()));
    }
    let n = base.shape().num_sites();
    let setting = Setting { preps: vec![PrepState::ZPlus; n], bases: vec![Basis::Z; n] };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let phase = 2.0 * PI * i as f64 / (n_points - 1) as f64;
        let c = with_ramsey_probe(base, probe_site, spectator_ones, phase)?;
        let ch = NoisyChannel::with_delta(&c, noise, delta)?;
        let probs = ch.outcome_probabilities(&setting)?;
        let p = excited_marginal(&probs, n, probe_site);
        let (value, sigma) = if shots == 0 {
            (p, 0.0)
        } else {
            let mut hits = 0u64;
            for _ in 0..shots {
                if rng.gen::<f64>() < p {
                    hits += 1;
                }
            }
            let v = hits as f64 / shots as f64;
            let s = (v * (1.0 - v) / shots as f64).sqrt().max(0.5 / shots as f64);
            (v, s)
        };
        points.push(RamseyPoint { phase, value, sigma });
    }
    ramsey_phase_fit(&points)
}

/// Diagonal phase gaps of the built gate relative to its coupling-free
/// unitary, read on the ternary site with both qubits at `0`: returns
/// (level 1 minus level 0, level 2 minus level 1).
fn correction_gaps(
    min_spacing: f64,
    noise: &NoiseModel,
    reference: &crate::op::Operator,
    rz_mid: f64,
    rz_end: f64,
) -> Result<(f64, f64)> {
    let c = build::build_ccz_corrected(min_spacing, rz_mid, rz_end)?;
    let u = NoisyChannel::with_delta(&c, noise, 0.0)?.unitary()?;
    let e = u.compose(&reference.dagger())?;
    let m = e.matrix();
    let eps: Vec<f64> = (0..3).map(|l| m[(4 * l, 4 * l)].arg()).collect();
    Ok((wrap_angle(eps[1] - eps[0]), wrap_angle(eps[2] - eps[1])))
}

/// Recovers the two phase corrections that cancel the diagonal phase error
/// the longitudinal couplings imprint on the ternary site. The mid-sequence
/// correction is cycled through the remaining shifts and lands on the upper
/// gap while the final one fixes the computational gap, so the pair spans
/// both; the values are solved from the measured linear response and
/// polished with a few Newton steps.
pub fn calibrate_rz_corrections(min_spacing: f64, noise: &NoiseModel) -> Result<(f64, f64)> {
    noise.validate(3)?;
    let reference = build::build_ccz(min_spacing)?.unitary(0.0)?;
    let gaps = |mid: f64, end: f64| correction_gaps(min_spacing, noise, &reference, mid, end);

    let g0 = gaps(0.0, 0.0)?;
    let probe = 0.5;
    let gm = gaps(probe, 0.0)?;
    let ge = gaps(0.0, probe)?;
    let response = array![
        [(gm.0 - g0.0) / probe, (ge.0 - g0.0) / probe],
        [(gm.1 - g0.1) / probe, (ge.1 - g0.1) / probe],
    ];
    let first = linalg::solve_real(&response, &array![-g0.0, -g0.1])?;
    let (mut mid, mut end) = (first[0], first[1]);
    for _ in 0..4 {
        let g = gaps(mid, end)?;
        if g.0.hypot(g.1) < 1e-12 {
            break;
        }
        let step = linalg::solve_real(&response, &array![-g.0, -g.1])?;
        mid += step[0];
        end += step[1];
    }
    Ok((mid, end))
}

/// Process fidelity of a measurable channel against an ideal qubit-register
/// unitary, going through the full measurement pipeline: informationally
/// complete plan, optional readout confusion and mitigation, reconstruction,
/// physicality projection.
pub fn measured_process_fidelity<Ch: MeasurableChannel + ?Sized>(
    channel: &Ch,
    ideal: &Array2<C64>,
    shots: u64,
    seed: u64,
    confusion: Option<&ConfusionMatrix>,
    mitigate: bool,
) -> Result<f64> {
    let plan = MeasurementPlan::full_qpt(channel.n_qubits(), shots, seed)?;
    let mut table = sample_expectations(channel, &plan, confusion)?;
    if mitigate {
        if let Some(cm) = confusion {
            table = mitigate_readout(&table, cm)?;
        }
    }
    let reconstructed = qpt_reconstruct(&table)?;
    process_fidelity(&reconstructed, ideal)
}

/// Finds the common factor on the four decoherence strengths that brings
/// the exact-mode process fidelity of `circuit` down to `target`. The walk
/// and couplings are left untouched.
pub fn calibrate_decoherence_scale(
    circuit: &TimedCircuit,
    noise: &NoiseModel,
    ideal: &Array2<C64>,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput("target fidelity must sit strictly inside (0, 1)".into()));
    }
    let budget = noise.idle_depolarizing
        + noise.idle_dephasing
        + noise.gate_depolarizing
        + noise.gate_dephasing;
    if budget <= 0.0 {
        return Err(Error::NoSolution(
            "all decoherence strengths are zero, no scale can reach the target".into(),
        ));
    }
    let fidelity_at = |scale: f64| -> Result<f64> {
        let scaled = noise.scaled_decoherence(scale);
        let ch = NoisyChannel::new(circuit, &scaled, 0.0)?;
        measured_process_fidelity(&ch, ideal, 0, 0, None, false)
    };
    let baseline = fidelity_at(0.0)?;
    if baseline < target {
        return Err(Error::NoSolution(format!(
            "coherent errors alone leave fidelity {baseline:.4}, below the target {target}"
        )));
    }
    let mut hi = 1.0;
    let mut f_hi = fidelity_at(hi)?;
    let mut doublings = 0;
    while f_hi > target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 30 {
            return Err(Error::NoConvergence(
                "decoherence scale search failed to bracket the target".into(),
            ));
        }
        f_hi = fidelity_at(hi)?;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f = fidelity_at(mid)?;
        if (f - target).abs() < 2e-4 {
            return Ok(mid);
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
