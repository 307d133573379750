//! Phase estimation fits: cosine fits for phase-sweep fringes and the
//! weighted least-squares assembly of relative phases on the state
//! hypercube.

use std::collections::VecDeque;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// One sample of a phase-sweep fringe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyPoint {
    pub phase: f64,
    pub value: f64,
    /// Standard error of `value`; all points exact (0) or all positive.
    pub sigma: f64,
}

/// Fitted fringe `amplitude * cos(phase + offset) + baseline`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyFit {
    /// Phase offset in (-pi, pi].
    pub offset: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub offset_sigma: f64,
    /// Set when the fitted amplitude is not resolved above its own noise.
    pub low_confidence: bool,
}

/// Fits `A cos(phase + offset) + c` by weighted least squares. The cosine is
/// reparameterized as `a cos(phase) + b sin(phase) + c`, which turns the
/// problem into a linear one with the same global optimum, so no starting
/// guess or iteration is involved.
pub fn ramsey_phase_fit(points: &[RamseyPoint]) -> Result<RamseyFit> {
    if points.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "need at least 8 fringe points, got {}",
            points.len()
        )));
    }
    for p in points {
        if !p.phase.is_finite() || !p.value.is_finite() || !p.sigma.is_finite() || p.sigma < 0.0 {
            return Err(Error::InvalidInput("fringe points must be finite with sigma >= 0".into()));
        }
    }
    let lo = points.iter().map(|p| p.phase).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.phase).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 2.0 * PI - 1e-9 {
        return Err(Error::InvalidInput(format!(
            "fringe sweep spans {:.3} rad, need a full period",
            hi - lo
        )));
    }
    let exact = points.iter().all(|p| p.sigma == 0.0);
    if !exact && points.iter().any(|p| p.sigma == 0.0) {
        return Err(Error::InvalidInput(
            "fringe uncertainties must be all zero or all positive".into(),
        ));
    }

    let mut normal = Array2::<f64>::zeros((3, 3));
    let mut rhs = Array1::<f64>::zeros(3);
    for p in points {
        let w = if exact { 1.0 } else { 1.0 / (p.sigma * p.sigma) };
        let row = [p.phase.cos(), p.phase.sin(), 1.0];
        for i in 0..3 {
            for j in 0..3 {
                normal[(i, j)] += w * row[i] * row[j];
            }
            rhs[i] += w * row[i] * p.value;
        }
    }
    let coeff = linalg::solve_real(&normal, &rhs)?;
    let (a, b, c) = (coeff[0], coeff[1], coeff[2]);
    let amplitude = a.hypot(b);
    let mut offset = (-b).atan2(a);
    if offset <= -PI {
        offset += 2.0 * PI;
    }

    if amplitude < 1e-15 {
        return Ok(RamseyFit {
            offset: 0.0,
            amplitude,
            baseline: c,
            offset_sigma: PI,
            low_confidence: true,
        });
    }

    let (offset_sigma, amplitude_sigma) = if exact {
        (0.0, 0.0)
    } else {
        let col_a = linalg::solve_real(&normal, &Array1::from(vec![1.0, 0.0, 0.0]))?;
        let col_b = linalg::solve_real(&normal, &Array1::from(vec![0.0, 1.0, 0.0]))?;
        let (caa, cab, cbb) = (col_a[0], col_a[1], col_b[1]);
        let (da, db) = (b / (amplitude * amplitude), -a / (amplitude * amplitude));
        let var_offset = da * da * caa + 2.0 * da * db * cab + db * db * cbb;
        let (ea, eb) = (a / amplitude, b / amplitude);
        let var_amp = ea * ea * caa + 2.0 * ea * eb * cab + eb * eb * cbb;
        (var_offset.max(0.0).sqrt(), var_amp.max(0.0).sqrt())
    };
    let low_confidence = amplitude < (3.0 * amplitude_sigma).max(1e-12);
    Ok(RamseyFit { offset, amplitude, baseline: c, offset_sigma, low_confidence })
}

/// A measured phase difference between two computational labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    /// Labels (j, k); the measured offset estimates `phi[j] - phi[k]`.
    pub labels: (usize, usize),
    pub kappa: f64,
    pub sigma: f64,
}

/// Relative phases of the 8 computational labels, referenced to label 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiFit {
    /// Eight phases with `phi[0] = 0`.
    pub phi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
}

const N_LABELS: usize = 8;

/// Solves the weighted least squares `sum_i (kappa_i - (phi_j - phi_k))^2 /
/// sigma_i^2` over the seven free phases, with `phi[0]` pinned to 0. Each
/// measured offset is rewrapped by a multiple of 2 pi against a first-pass
/// solution, then the system is solved once more; this assumes per-pair
/// noise well below a half turn.
pub fn phi_least_squares(pairs: &[PhasePair]) -> Result<PhiFit> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no phase pairs given".into()));
    }
    for p in pairs {
        let (j, k) = p.labels;
        if j >= N_LABELS || k >= N_LABELS || j == k {
            return Err(Error::InvalidInput(format!("invalid label pair ({j}, {k})")));
        }
        if !p.kappa.is_finite() || !p.sigma.is_finite() || p.sigma <= 0.0 {
            return Err(Error::InvalidInput("phase pairs must be finite with sigma > 0".into()));
        }
    }
    let mut adjacency = vec![Vec::new(); N_LABELS];
    for p in pairs {
        adjacency[p.labels.0].push(p.labels.1);
        adjacency[p.labels.1].push(p.labels.0);
    }
    let mut reached = [false; N_LABELS];
    reached[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        for &next in &adjacency[node] {
            if !reached[next] {
                reached[next] = true;
                queue.push_back(next);
            }
        }
    }
    if let Some(missing) = reached.iter().position(|r| !r) {
        return Err(Error::IllPosed(format!(
            "phase pair graph does not connect label {missing} to label 0"
        )));
    }

    let solve = |kappas: &[f64]| -> Result<(Vec<f64>, Array2<f64>)> {
        let mut normal = Array2::<f64>::zeros((N_LABELS - 1, N_LABELS - 1));
        let mut rhs = Array1::<f64>::zeros(N_LABELS - 1);
        for (pair, kappa) in pairs.iter().zip(kappas.iter()) {
            let w = 1.0 / (pair.sigma * pair.sigma);
            let mut row = [0.0f64; N_LABELS - 1];
            if pair.labels.0 > 0 {
                row[pair.labels.0 - 1] += 1.0;
            }
            if pair.labels.1 > 0 {
                row[pair.labels.1 - 1] -= 1.0;
            }
            for i in 0..N_LABELS - 1 {
                for j in 0..N_LABELS - 1 {
                    normal[(i, j)] += w * row[i] * row[j];
                }
                rhs[i] += w * row[i] * kappa;
            }
        }
        let x = linalg::solve_real(&normal, &rhs)?;
        let mut phi = vec![0.0; N_LABELS];
        phi[1..].copy_from_slice(x.as_slice().unwrap());
        Ok((phi, normal))
    };

    let kappas: Vec<f64> = pairs.iter().map(|p| p.kappa).collect();
    let (first, _) = solve(&kappas)?;
    let rewrapped: Vec<f64> = pairs
        .iter()
        .zip(kappas.iter())
        .map(|(p, k)| {
            let diff = first[p.labels.0] - first[p.labels.1];
            k + 2.0 * PI * ((diff - k) / (2.0 * PI)).round()
        })
        .collect();
    let (phi, normal) = solve(&rewrapped)?;

    let mut chi2 = 0.0;
    for (pair, kappa) in pairs.iter().zip(rewrapped.iter()) {
        let resid = kappa - (phi[pair.labels.0] - phi[pair.labels.1]);
        chi2 += resid * resid / (pair.sigma * pair.sigma);
    }
    let dof = pairs.len().saturating_sub(N_LABELS - 1);

    let mut sigma = vec![0.0f64; N_LABELS];
    for i in 0..N_LABELS - 1 {
        let mut unit = Array1::<f64>::zeros(N_LABELS - 1);
        unit[i] = 1.0;
        let col = linalg::solve_real(&normal, &unit)?;
        sigma[i + 1] = col[i].max(0.0).sqrt();
    }
    Ok(PhiFit { phi, sigma, chi2, dof })
}
