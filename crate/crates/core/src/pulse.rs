//! Rotating-frame pulse simulation for a driven qudit and for the two-tone
//! cross-resonance interaction, with a numerical probe of the effective
//! Hamiltonian structure.
//!
//! The single-qudit drive Hamiltonian couples neighboring levels with frame
//! factors `exp(-i (omega_l - omega_d) t)`, so a resonant drive addresses one
//! transition while the others rotate away. The two-tone model adds the
//! static qudit-qudit coupling; evolving it over a window and taking the
//! principal log of the propagator exposes the `(diagonal) (x) X_k` shape of
//! the cross-resonance effective Hamiltonian.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates;
use crate::linalg;
use crate::C64;

/// Single-tone drive on one qudit, in the frame rotating with each level.
///
/// `envelope[i]` is the real amplitude at tick `i`; values between ticks are
/// linearly interpolated and times outside the sampled range read as zero.
/// `transition_amplitudes[l]` and `level_frequencies[l]` describe the
/// `l`-`l+1` transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub envelope: Vec<f64>,
    pub omega_d: f64,
    pub phi_d: f64,
    pub transition_amplitudes: Vec<f64>,
    pub level_frequencies: Vec<f64>,
}

impl DriveSpec {
    pub fn new(
        envelope: Vec<f64>,
        omega_d: f64,
        phi_d: f64,
        transition_amplitudes: Vec<f64>,
        level_frequencies: Vec<f64>,
    ) -> Result<Self> {
        if envelope.is_empty() {
            return Err(Error::InvalidInput("drive envelope has no samples".into()));
        }
        if envelope.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("drive envelope has non-finite samples".into()));
        }
        if transition_amplitudes.is_empty() {
            return Err(Error::InvalidInput("drive needs at least one transition".into()));
        }
        if transition_amplitudes.len() != level_frequencies.len() {
            return Err(Error::InvalidInput(format!(
                "{} transition amplitudes but {} transition frequencies",
                transition_amplitudes.len(),
                level_frequencies.len()
            )));
        }
        if transition_amplitudes.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::InvalidInput(
                "transition amplitudes must be finite and positive".into(),
            ));
        }
        if level_frequencies.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("transition frequencies must be finite".into()));
        }
        if !omega_d.is_finite() || !phi_d.is_finite() {
            return Err(Error::InvalidInput("drive frequency and phase must be finite".into()));
        }
        Ok(DriveSpec { envelope, omega_d, phi_d, transition_amplitudes, level_frequencies })
    }

    /// Flat envelope of the given amplitude covering `0..=ticks`.
    pub fn constant(
        amplitude: f64,
        ticks: usize,
        omega_d: f64,
        phi_d: f64,
        transition_amplitudes: Vec<f64>,
        level_frequencies: Vec<f64>,
    ) -> Result<Self> {
        DriveSpec::new(
            vec![amplitude; ticks + 1],
            omega_d,
            phi_d,
            transition_amplitudes,
            level_frequencies,
        )
    }

    /// Number of qudit levels addressed by this drive.
    pub fn dim(&self) -> usize {
        self.transition_amplitudes.len() + 1
    }

    /// Envelope value at an arbitrary time, linearly interpolated.
    pub fn amplitude_at(&self, t: f64) -> f64 {
        let last = (self.envelope.len() - 1) as f64;
        if !(0.0..=last).contains(&t) {
            return 0.0;
        }
        let i = (t.floor() as usize).min(self.envelope.len() - 2);
        let frac = t - i as f64;
        self.envelope[i] * (1.0 - frac) + self.envelope[i + 1] * frac
    }
}

/// Drive coupling operator `K(omega_d, phi_d)` at time `t`: each transition
/// `l` carries `alpha_l exp(-i (omega_l - omega_d) t) exp(i phi_d)` on
/// `|l><l+1|` plus the conjugate.
pub fn drive_operator(spec: &DriveSpec, t: f64) -> Array2<C64> {
    let d = spec.dim();
    let mut k = Array2::<C64>::zeros((d, d));
    for l in 0..d - 1 {
        let phase = -(spec.level_frequencies[l] - spec.omega_d) * t + spec.phi_d;
        let z = C64::from_polar(spec.transition_amplitudes[l], phase);
        k[(l, l + 1)] = z;
        k[(l + 1, l)] = z.conj();
    }
    k
}

/// Rotating-frame drive Hamiltonian `A_d(t)/2 * K(omega_d, phi_d)`.
pub fn rwa_hamiltonian(spec: &DriveSpec, t: f64) -> Array2<C64> {
    let mut h = drive_operator(spec, t);
    let scale = C64::new(spec.amplitude_at(t) / 2.0, 0.0);
    h.mapv_inplace(|z| z * scale);
    h
}

/// Midpoint exponential-product propagator for a time-dependent Hamiltonian.
///
/// Multiplies `exp(-i h(t + dt/2) dt)` factors over `[0, duration)` in time
/// order. `dt` must divide `duration`; keeping the per-step `||h|| dt` below
/// 0.05 rad holds the result unitary to better than 1e-8.
pub fn evolve<F>(mut h_of_t: F, duration: f64, dt: f64) -> Result<Array2<C64>>
where
    F: FnMut(f64) -> Array2<C64>,
{
    if !duration.is_finite() || duration <= 0.0 || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput("evolve needs positive duration and dt".into()));
    }
    let steps = (duration / dt).round();
    if steps < 1.0 || (steps * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dt {dt} does not divide duration {duration}"
        )));
    }
    let steps = steps as usize;
    let mut u: Option<Array2<C64>> = None;
    for j in 0..steps {
        let h = h_of_t((j as f64 + 0.5) * dt);
        if h.nrows() != h.ncols() {
            return Err(Error::InvalidInput("hamiltonian samples must be square".into()));
        }
        let herr = linalg::hermiticity_error(&h);
        if herr > 1e-8 * (1.0 + linalg::max_abs(&h)) {
            return Err(Error::MatrixCheck(format!(
                "hamiltonian sample at step {j} deviates from Hermitian by {herr:.3e}"
            )));
        }
        let step = linalg::expm_i_hermitian(&h, dt)?;
        u = Some(match u {
            None => step,
            Some(prev) => {
                if prev.nrows() != step.nrows() {
                    return Err(Error::InvalidInput(
                        "hamiltonian samples change dimension mid-evolution".into(),
                    ));
                }
                step.dot(&prev)
            }
        });
    }
    Ok(u.expect("at least one step"))
}

/// Gaussian envelope with a derivative-proportional imaginary part.
///
/// Samples ticks `0..=duration`. The Gaussian is lifted so the endpoint
/// samples are exactly zero and rescaled so the center sample stays at
/// `amplitude`; the imaginary part is `beta` times the time derivative of
/// the real part.
pub fn gaussian_drag_envelope(
    amplitude: f64,
    sigma: f64,
    duration: usize,
    beta: f64,
) -> Result<Vec<C64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidInput("envelope width must be positive".into()));
    }
    if duration < 2 {
        return Err(Error::InvalidInput("envelope needs at least two ticks".into()));
    }
    if !amplitude.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidInput("envelope amplitude and beta must be finite".into()));
    }
    let mid = duration as f64 / 2.0;
    let gauss = |t: f64| (-((t - mid) * (t - mid)) / (2.0 * sigma * sigma)).exp();
    let base = gauss(0.0);
    if 1.0 - base < 1e-6 {
        return Err(Error::InvalidInput(
            "envelope width is too large for the duration; the lift degenerates".into(),
        ));
    }
    let scale = amplitude / (1.0 - base);
    let mut out = Vec::with_capacity(duration + 1);
    for i in 0..=duration {
        let t = i as f64;
        let g = gauss(t);
        let re = scale * (g - base);
        let im = beta * scale * (-(t - mid) / (sigma * sigma)) * g;
        out.push(C64::new(re, im));
    }
    Ok(out)
}

/// Two-tone cross-resonance model: a static excitation-exchange coupling of
/// strength `coupling` between the qudits plus a drive of amplitude `drive`
/// on the control at the target's `target_transition` frequency.
///
/// Amplitude and frequency lists describe each qudit's `l`-`l+1` transitions,
/// control on the left of the tensor product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoToneSpec {
    pub coupling: f64,
    pub drive: f64,
    pub control_amplitudes: Vec<f64>,
    pub control_frequencies: Vec<f64>,
    pub target_amplitudes: Vec<f64>,
    pub target_frequencies: Vec<f64>,
    pub target_transition: usize,
}

impl TwoToneSpec {
    pub fn new(
        coupling: f64,
        drive: f64,
        control_amplitudes: Vec<f64>,
        control_frequencies: Vec<f64>,
        target_amplitudes: Vec<f64>,
        target_frequencies: Vec<f64>,
        target_transition: usize,
    ) -> Result<Self> {
        if !coupling.is_finite() || !drive.is_finite() {
            return Err(Error::InvalidInput("coupling and drive must be finite".into()));
        }
        for (amps, freqs, name) in [
            (&control_amplitudes, &control_frequencies, "control"),
            (&target_amplitudes, &target_frequencies, "target"),
        ] {
            if amps.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "{name} qudit needs at least one transition"
                )));
            }
            if amps.len() != freqs.len() {
                return Err(Error::InvalidInput(format!(
                    "{name} qudit has {} amplitudes but {} frequencies",
                    amps.len(),
                    freqs.len()
                )));
            }
            if amps.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} transition amplitudes must be finite and positive"
                )));
            }
            if freqs.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} transition frequencies must be finite"
                )));
            }
        }
        if target_transition >= target_amplitudes.len() {
            return Err(Error::InvalidInput(format!(
                "target transition {target_transition} out of range for {} transitions",
                target_amplitudes.len()
            )));
        }
        Ok(TwoToneSpec {
            coupling,
            drive,
            control_amplitudes,
            control_frequencies,
            target_amplitudes,
            target_frequencies,
            target_transition,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.control_amplitudes.len() + 1
    }

    pub fn target_dim(&self) -> usize {
        self.target_amplitudes.len() + 1
    }

    /// Copy with rescaled exchange coupling and drive amplitude.
    pub fn with_strengths(&self, coupling: f64, drive: f64) -> TwoToneSpec {
        let mut s = self.clone();
        s.coupling = coupling;
        s.drive = drive;
        s
    }
}

/// Interaction-frame two-tone Hamiltonian at time `t`: the exchange term
/// swaps one excitation between the qudits, and the drive term raises the
/// control while rotating at the target transition frequency.
pub fn two_tone_hamiltonian(spec: &TwoToneSpec, t: f64) -> Array2<C64> {
    let dc = spec.control_dim();
    let dtg = spec.target_dim();
    let dim = dc * dtg;
    let idx = |l: usize, m: usize| l * dtg + m;
    let mut h = Array2::<C64>::zeros((dim, dim));
    for l in 0..dc - 1 {
        for m in 0..dtg - 1 {
            let amp = spec.coupling * spec.control_amplitudes[l] * spec.target_amplitudes[m];
            let phase = -(spec.control_frequencies[l] - spec.target_frequencies[m]) * t;
            let z = C64::from_polar(amp, phase);
            h[(idx(l, m + 1), idx(l + 1, m))] += z;
            h[(idx(l + 1, m), idx(l, m + 1))] += z.conj();
        }
    }
    let wt = spec.target_frequencies[spec.target_transition];
    for l in 0..dc - 1 {
        let amp = spec.drive / 2.0 * spec.control_amplitudes[l];
        let phase = -(spec.control_frequencies[l] - wt) * t;
        let z = C64::from_polar(amp, phase);
        for m in 0..dtg {
            h[(idx(l, m), idx(l + 1, m))] += z;
            h[(idx(l + 1, m), idx(l, m))] += z.conj();
        }
    }
    h
}

/// Fitted target-space content of one control level of the effective
/// Hamiltonian, in the convention `1/2 (nu I + omega X_k + diag)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcrLevelFit {
    pub nu: f64,
    pub omega: f64,
    /// Traceless diagonal remainder, one entry per target level.
    pub delta: Vec<f64>,
    /// Frobenius norm of the content outside identity, `X_k`, and diagonal.
    pub residual_norm: f64,
}

/// Structure report for a two-tone effective Hamiltonian window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcrReport {
    pub window: f64,
    pub dt: f64,
    /// Frobenius norm of the content coupling different control levels.
    pub control_offdiag_norm: f64,
    pub levels: Vec<HcrLevelFit>,
    /// Largest propagator eigenphase magnitude; the principal log is only
    /// trustworthy while this stays clear of pi.
    pub max_eigenphase: f64,
}

const BRANCH_MARGIN: f64 = 0.2;

/// Evolves the two-tone model over `window`, extracts the effective
/// Hamiltonian `(i / window) log U`, and reports how closely it matches a
/// control-diagonal sum of identity and `X_k` target terms.
pub fn validate_effective_hcr(spec: &TwoToneSpec, window: f64) -> Result<HcrReport> {
    if !window.is_finite() || window <= 0.0 {
        return Err(Error::InvalidInput("validation window must be positive".into()));
    }
    let dt = pick_step(spec, window);
    let u = evolve(|t| two_tone_hamiltonian(spec, t), window, dt)?;
    let lg = linalg::log_unitary(&u)?;
    let max_eigenphase =
        lg.eigenphases.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    if max_eigenphase > std::f64::consts::PI - BRANCH_MARGIN {
        return Err(Error::IllPosed(format!(
            "propagator eigenphase {max_eigenphase:.3} is too close to the log branch cut; \
             shrink the window"
        )));
    }
    let mut h_eff = lg.generator;
    let scale = C64::new(1.0 / window, 0.0);
    h_eff.mapv_inplace(|z| z * scale);

    let dc = spec.control_dim();
    let dtg = spec.target_dim();
    let x_k = gates::x_k(spec.target_transition, dtg)?;
    let x_k = x_k.matrix();

    let mut offdiag_sq = 0.0f64;
    for i in 0..dc * dtg {
        for j in 0..dc * dtg {
            if i / dtg != j / dtg {
                offdiag_sq += h_eff[(i, j)].norm_sqr();
            }
        }
    }

    let mut levels = Vec::with_capacity(dc);
    for l in 0..dc {
        let block = h_eff.slice(ndarray::s![l * dtg..(l + 1) * dtg, l * dtg..(l + 1) * dtg]);
        let mut trace = C64::new(0.0, 0.0);
        let mut x_overlap = C64::new(0.0, 0.0);
        for i in 0..dtg {
            trace += block[(i, i)];
            for j in 0..dtg {
                x_overlap += x_k[(i, j)] * block[(j, i)];
            }
        }
        let nu = 2.0 * trace.re / dtg as f64;
        let omega = x_overlap.re;
        let mut delta = vec![0.0f64; dtg];
        let mut residual_sq = 0.0f64;
        for i in 0..dtg {
            for j in 0..dtg {
                let r = 2.0 * block[(i, j)]
                    - C64::new(if i == j { nu } else { 0.0 }, 0.0)
                    - x_k[(i, j)] * C64::new(omega, 0.0);
                if i == j {
                    delta[i] = r.re;
                    residual_sq += r.im * r.im;
                } else {
                    residual_sq += r.norm_sqr();
                }
            }
        }
        levels.push(HcrLevelFit { nu, omega, delta, residual_norm: residual_sq.sqrt() });
    }

    Ok(HcrReport {
        window,
        dt,
        control_offdiag_norm: offdiag_sq.sqrt(),
        levels,
        max_eigenphase,
    })
}

/// Step size resolving both the Hamiltonian magnitude and the fastest frame
/// rotation, snapped so it divides the window exactly.
fn pick_step(spec: &TwoToneSpec, window: f64) -> f64 {
    let hnorm = linalg::frobenius(&two_tone_hamiltonian(spec, 0.0));
    let wt = spec.target_frequencies[spec.target_transition];
    let mut fastest = 0.0f64;
    for (l, wc) in spec.control_frequencies.iter().enumerate() {
        fastest = fastest.max((wc - wt).abs());
        let _ = l;
        for wm in &spec.target_frequencies {
            fastest = fastest.max((wc - wm).abs());
        }
    }
    let mut dt = window / 16.0;
    if hnorm > 0.0 {
        dt = dt.min(0.05 / hnorm);
    }
    if fastest > 0.0 {
        dt = dt.min(std::f64::consts::TAU / fastest / 20.0);
    }
    let steps = (window / dt).ceil().max(1.0);
    window / steps
}
