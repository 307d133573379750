//! Cross resonance unitaries, cyclic composition, and the two generalized
//! CX constructions for a qutrit control and qubit target.
//!
//! A CR pulse drives the control at a target transition frequency and
//! effects a control-diagonal unitary whose blocks are single-qubit
//! rotations. Composing CR pulses with cyclic level shifts turns the
//! per-level rotation angles into cycled sums, which is what makes the
//! controlled-X conditions reachable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::circuit::{Gate, ResidualPrediction, TimedCircuit};
use crate::error::{Error, Result};
use crate::gates::{self, ShiftDir};
use crate::linalg;
use crate::op::{self, Operator, SystemShape};
use crate::C64;

/// Parameters of a single CR pulse on a (control qudit, target qubit) pair.
///
/// Level `l` of the control sees the target rotation
/// `exp(-i [phi_l I + s psi_l X + s lambda_l Y + chi_l Z] / 2)` where `s` is
/// the drive polarity. An ideal pulse has `lambda = chi = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrParams {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub chi: Vec<f64>,
    pub polarity: i8,
    pub d: usize,
    /// Target subspace index; the two target levels the pulse addresses.
    pub k: usize,
}

impl CrParams {
    pub fn new(
        d: usize,
        phi: Vec<f64>,
        psi: Vec<f64>,
        lambda: Vec<f64>,
        chi: Vec<f64>,
        polarity: i8,
        k: usize,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput("control dimension must be >= 2".into()));
        }
        if polarity != 1 && polarity != -1 {
            return Err(Error::InvalidInput("polarity must be +1 or -1".into()));
        }
        for (name, list) in
            [("phi", &phi), ("psi", &psi), ("lambda", &lambda), ("chi", &chi)]
        {
            if list.len() != d {
                return Err(Error::InvalidInput(format!(
                    "{name} needs {d} entries, got {}",
                    list.len()
                )));
            }
            if list.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} entries must be finite")));
            }
        }
        Ok(CrParams { phi, psi, lambda, chi, polarity, d, k })
    }

    /// Ideal pulse: no Y or Z content.
    pub fn ideal(d: usize, phi: Vec<f64>, psi: Vec<f64>, polarity: i8) -> Result<Self> {
        let zeros = vec![0.0; d];
        CrParams::new(d, phi, psi, zeros.clone(), zeros, polarity, 0)
    }

    pub fn is_ideal(&self) -> bool {
        self.lambda.iter().chain(&self.chi).all(|x| x.abs() < 1e-12)
    }

    /// Same pulse with the opposite drive polarity.
    pub fn flipped(&self) -> Self {
        let mut p = self.clone();
        p.polarity = -p.polarity;
        p
    }

    /// Rotates the drive phase by `eta`, turning each level's (psi, lambda)
    /// pair in the X-Y plane.
    pub fn with_drive_phase(&self, eta: f64) -> Self {
        let (s, c) = eta.sin_cos();
        let mut p = self.clone();
        for l in 0..self.d {
            let (x, y) = (self.psi[l], self.lambda[l]);
            p.psi[l] = c * x + s * y;
            p.lambda[l] = -s * x + c * y;
        }
        p
    }

    /// Adds a level-independent Z rate from an off-resonant Stark tone.
    pub fn with_stark(&self, z: f64) -> Self {
        let mut p = self.clone();
        for l in 0..self.d {
            p.chi[l] += z;
        }
        p
    }

    /// Adds a polarity-matched rotary drive on the target, shifting every
    /// level's X angle by `rho`.
    pub fn with_rotary(&self, rho: f64) -> Self {
        let mut p = self.clone();
        for l in 0..self.d {
            p.psi[l] += rho;
        }
        p
    }

    /// The target-qubit block seen by control level `l`.
    pub fn block(&self, l: usize) -> Array2<C64> {
        let s = self.polarity as f64;
        linalg::su2_exp(
            self.phi[l],
            [s * self.psi[l], s * self.lambda[l], self.chi[l]],
        )
    }
}

/// Dense CR unitary on (control, qubit target).
pub fn cr_unitary(params: &CrParams) -> Result<Operator> {
    let d = params.d;
    let mut m = Array2::<C64>::zeros((2 * d, 2 * d));
    for l in 0..d {
        let b = params.block(l);
        for r in 0..2 {
            for c in 0..2 {
                m[(2 * l + r, 2 * l + c)] = b[(r, c)];
            }
        }
    }
    Operator::new(SystemShape::new(vec![d, 2])?, m)
}

/// Cyclic cross resonance: `d` repetitions of a CR pulse followed by a
/// cyclic shift, with per-pulse drive polarities `signs`.
///
/// Returns the dense unitary together with the per-level X angles
/// `Psi_l = sum_j s_j psi_{l+j}` and the global phase sum `Phi`.
pub fn cycr(params: &CrParams, signs: &[i8]) -> Result<(Operator, Vec<f64>, f64)> {
    if !params.is_ideal() {
        return Err(Error::InvalidInput(
            "cyclic CR composition expects an ideal pulse; calibrate first".into(),
        ));
    }
    let d = params.d;
    if signs.len() != d || signs.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidInput(format!("signs must be {d} entries of +-1")));
    }
    let shape = SystemShape::new(vec![d, 2])?;
    let shift = op::embed(&gates::shift_permutation(ShiftDir::Raise, d)?, 0, &shape)?;
    let mut u = Operator::identity(shape);
    for &s in signs {
        let mut p = params.clone();
        p.polarity = s;
        let seg = shift.compose(&cr_unitary(&p)?)?;
        u = seg.compose(&u)?;
    }
    let psi: Vec<f64> = (0..d)
        .map(|l| {
            (0..d)
                .map(|j| signs[j] as f64 * params.psi[(l + j) % d])
                .sum()
        })
        .collect();
    let phi: f64 = params.phi.iter().sum();
    Ok((u, psi, phi))
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * std::f64::consts::PI);
    if y > std::f64::consts::PI {
        y -= 2.0 * std::f64::consts::PI;
    }
    y
}

/// Checks the qutrit controlled-X angle condition
/// `Psi_0 = Psi_2 = Psi_1 +- pi` (angles modulo 2 pi).
pub fn check_cx_condition(psi: &[f64], tol: f64) -> Result<bool> {
    if psi.len() != 3 {
        return Err(Error::InvalidInput("condition is defined for three levels".into()));
    }
    let equal = wrap_angle(psi[0] - psi[2]).abs() < tol;
    let gap = (wrap_angle(psi[0] - psi[1]).abs() - std::f64::consts::PI).abs() < tol;
    Ok(equal && gap)
}

/// Linear-in-duration model of CR pulse angles at a reference amplitude.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrRateModel {
    /// Stark phase rates per level, radians per tick.
    pub phi_rates: Vec<f64>,
    /// X angle rates per level, radians per tick.
    pub psi_rates: Vec<f64>,
    /// Duration-independent Y offsets.
    pub lambda: Vec<f64>,
    /// Duration-independent Z offsets.
    pub chi: Vec<f64>,
}

impl CrRateModel {
    pub fn new(
        phi_rates: Vec<f64>,
        psi_rates: Vec<f64>,
        lambda: Vec<f64>,
        chi: Vec<f64>,
    ) -> Result<Self> {
        let d = psi_rates.len();
        for (name, list) in [
            ("phi_rates", &phi_rates),
            ("psi_rates", &psi_rates),
            ("lambda", &lambda),
            ("chi", &chi),
        ] {
            if list.len() != d {
                return Err(Error::InvalidInput(format!(
                    "{name} needs {d} entries, got {}",
                    list.len()
                )));
            }
            if list.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} entries must be finite")));
            }
        }
        if psi_rates.iter().all(|a| a.abs() < 1e-15) {
            return Err(Error::InvalidInput("at least one X rate must be nonzero".into()));
        }
        Ok(CrRateModel { phi_rates, psi_rates, lambda, chi })
    }

    /// Ideal pulse parameters after driving for `duration` ticks with the
    /// amplitude scaled by `amp_scale` relative to the reference.
    pub fn params_at(&self, duration: f64, amp_scale: f64, polarity: i8) -> Result<CrParams> {
        let d = self.psi_rates.len();
        CrParams::new(
            d,
            self.phi_rates.iter().map(|r| r * duration).collect(),
            self.psi_rates.iter().map(|r| r * duration * amp_scale).collect(),
            self.lambda.clone(),
            self.chi.clone(),
            polarity,
            0,
        )
    }
}

/// Forward generalized CX: CR drive on the qutrit, echoed CR pairs cycled
/// three times, plus the two local correction gates.
#[derive(Clone, Debug)]
pub struct ForwardGenCx {
    pub circuit: TimedCircuit,
    /// Offset X angle cancelled on the target.
    pub theta: f64,
    /// Which control transition carries the echo pulses.
    pub echo_transition: usize,
    /// CR pulse duration in ticks after grid rounding.
    pub cr_duration: f64,
    /// Amplitude rescale applied to restore the exact angle gap.
    pub amp_scale: f64,
    /// Interval between the cyclic shifts.
    pub shift_interval: f64,
}

/// Builds the forward generalized CX from a CR rate model, picking the echo
/// transition that satisfies the angle condition with the shorter pulse.
///
/// The emitted circuit acts on a (qutrit, qubit) register and equals
/// `(P0 + P2) (x) I + P1 (x) X` up to a global phase at zero detuning; under
/// detuning it carries the predicted overall level-2 phase.
pub fn forward_gencx(rates: &CrRateModel, min_spacing: f64) -> Result<ForwardGenCx> {
    if rates.psi_rates.len() != 3 {
        return Err(Error::InvalidInput("forward construction needs a qutrit control".into()));
    }
    if !min_spacing.is_finite() || min_spacing <= 0.0 {
        return Err(Error::InvalidInput("minimum spacing must be positive".into()));
    }
    let a = &rates.psi_rates;
    // Echo on transition k leaves level k+2 alone; the angle gap between
    // the paired levels and the lone level grows at twice these rates.
    let gap_rate = [a[0] + a[1] - 2.0 * a[2], a[1] + a[2] - 2.0 * a[0]];
    let mut choice: Option<(usize, f64)> = None;
    for (k, g) in gap_rate.iter().enumerate() {
        if g.abs() < 1e-12 {
            continue;
        }
        let t_star = (std::f64::consts::FRAC_PI_2) / g.abs();
        if choice.map_or(true, |(_, best)| t_star < best) {
            choice = Some((k, t_star));
        }
    }
    let (k, t_star) = choice.ok_or_else(|| {
        Error::NoSolution(
            "CR rates give no angle separation on either echo transition".into(),
        )
    })?;
    let t_grid = t_star.max(min_spacing).ceil();
    let amp_scale = t_star / t_grid;
    let signs: [i8; 3] = if k == 0 { [1, -1, 1] } else { [1, 1, -1] };
    // Signed angle gap after the echo pair doubling, +-pi by construction.
    let gap = 2.0 * gap_rate[k] * t_star;
    let lone = if k == 0 { 2 } else { 0 };
    let theta = 2.0 * a[lone] * t_star;

    let mut circuit = TimedCircuit::new(SystemShape::new(vec![3, 2])?);
    let mut t = 0.0;
    for &s in &signs {
        let params = rates.params_at(t_grid, amp_scale, s)?;
        let ideal = CrParams { lambda: vec![0.0; 3], chi: vec![0.0; 3], ..params };
        circuit.push(Gate::CrPulse { params: ideal.clone() }, &[0, 1], t)?;
        circuit.push(Gate::PiPulse { k }, &[0], t + t_grid)?;
        circuit.push(Gate::CrPulse { params: ideal }, &[0, 1], t + t_grid)?;
        circuit.push(Gate::PiPulse { k }, &[0], t + 2.0 * t_grid)?;
        circuit.push(Gate::CyclicShift { raise: true }, &[0], t + 2.0 * t_grid)?;
        t += 2.0 * t_grid;
    }
    circuit.push(Gate::LevelPhase { level: 1, phase: gap / 2.0 }, &[0], t)?;
    circuit.push(Gate::SubspaceRx { k: 0, angle: -theta }, &[1], t)?;
    circuit.set_predicted_residual(Some(ResidualPrediction {
        site: 0,
        level: 2,
        coeff: -6.0 * t_grid,
    }));
    Ok(ForwardGenCx {
        circuit,
        theta,
        echo_transition: k,
        cr_duration: t_grid,
        amp_scale,
        shift_interval: 2.0 * t_grid,
    })
}

/// Backward generalized CZ core: CR drive on the target side, realized with
/// two cross-axis rotations and a geometric phase, cycled so the three
/// shifts sit `tau` apart.
///
/// Acts on a (qutrit, qubit) register and equals `I - 2 |1><1| (x) |1><1|`
/// up to a global phase at zero detuning.
pub fn backward_gencz(tau: f64) -> Result<TimedCircuit> {
    if !tau.is_finite() || tau < 4.0 {
        return Err(Error::InvalidInput(
            "shift interval must leave room for the interior gates".into(),
        ));
    }
    let mut c = TimedCircuit::new(SystemShape::new(vec![3, 2])?);
    c.push(Gate::CyclicShift { raise: true }, &[0], 0.0)?;
    c.push(Gate::RotXz { theta: std::f64::consts::FRAC_PI_2 }, &[0, 1], tau / 4.0)?;
    c.push(Gate::RotXz { theta: std::f64::consts::FRAC_PI_2 }, &[0, 1], tau / 2.0)?;
    c.push(Gate::SubspaceRx { k: 0, angle: -std::f64::consts::PI }, &[0], 3.0 * tau / 4.0)?;
    c.push(Gate::SubspaceRz { k: 0, phase: std::f64::consts::PI }, &[1], 3.0 * tau / 4.0)?;
    c.push(Gate::CyclicShift { raise: true }, &[0], tau)?;
    c.push(Gate::CyclicShift { raise: true }, &[0], 2.0 * tau)?;
    c.set_predicted_residual(Some(ResidualPrediction {
        site: 0,
        level: 2,
        coeff: -3.0 * tau,
    }));
    Ok(c)
}

/// Backward generalized CX: the CZ core between Hadamards on the target.
pub fn backward_gencx(tau: f64) -> Result<TimedCircuit> {
    let mut c = TimedCircuit::new(SystemShape::new(vec![3, 2])?);
    c.push(Gate::Hadamard, &[1], 0.0)?;
    let core = backward_gencz(tau)?;
    c.append_mapped(&core, &[0, 1], 0.0)?;
    c.push(Gate::Hadamard, &[1], 2.0 * tau)?;
    c.set_predicted_residual(core.predicted_residual().cloned());
    Ok(c)
}

/// Corrections recovered by the CR calibration procedure.
#[derive(Clone, Debug)]
pub struct CrCalibration {
    /// Drive phase rotation zeroing Y at the designated level.
    pub drive_phase: f64,
    /// Stark tone Z rate zeroing Z at the designated level.
    pub stark_shift: f64,
    /// Rotary amplitude minimizing the echoed-pair Y/Z content.
    pub rotary: f64,
    /// Objective value before the rotary scan (after the closed forms).
    pub residual_before: f64,
    /// Objective value at the chosen rotary amplitude.
    pub residual_after: f64,
    /// Parameters with all three corrections folded in.
    pub params: CrParams,
}

/// Summed squared Y and Z log-coefficients of the echoed CR pair blocks on
/// the two levels swapped by the echo pulse.
fn echoed_pair_objective(params: &CrParams, echo_transition: usize) -> Result<f64> {
    let (la, lb) = (echo_transition, echo_transition + 1);
    let mut total = 0.0;
    for s in [1i8, -1] {
        let mut p = params.clone();
        p.polarity = s;
        let (ua, ub) = (p.block(la), p.block(lb));
        for prod in [ub.dot(&ua), ua.dot(&ub)] {
            let log = linalg::su2_log(&prod)?;
            total += log.xyz[1] * log.xyz[1] + log.xyz[2] * log.xyz[2];
        }
    }
    Ok(total)
}

/// Calibrates a physical CR pulse for the echoed-pair sequences: zeroes Y
/// and Z at the designated spectator level in closed form, then finds the
/// rotary amplitude suppressing the Y/Z content of the echoed pair blocks.
///
/// `designated` is the control level untouched by the echo pulses: 2 when
/// echoing on the 0-1 transition, 0 when echoing on 1-2.
pub fn calibrate_cr(physical: &CrParams, designated: usize) -> Result<CrCalibration> {
    if physical.d != 3 {
        return Err(Error::InvalidInput("calibration is defined for qutrit controls".into()));
    }
    if designated != 0 && designated != 2 {
        return Err(Error::InvalidInput(
            "designated spectator level must be 0 or 2".into(),
        ));
    }
    let echo_transition = if designated == 2 { 0 } else { 1 };
    let eta = physical.lambda[designated].atan2(physical.psi[designated]);
    let rotated = physical.with_drive_phase(eta);
    let stark = -rotated.chi[designated];
    let leveled = rotated.with_stark(stark);

    let objective =
        |rho: f64| -> Result<f64> { echoed_pair_objective(&leveled.with_rotary(rho), echo_transition) };
    let before = objective(0.0)?;

    // Coarse scan to bracket the minimum, then golden-section refinement.
    let bound = std::f64::consts::PI;
    let n = 81;
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    let grid: Vec<f64> = (0..n).map(|i| -bound + 2.0 * bound * i as f64 / (n - 1) as f64).collect();
    for (i, &rho) in grid.iter().enumerate() {
        let v = objective(rho)?;
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut lo = grid[best_i.saturating_sub(1)];
    let mut hi = grid[(best_i + 1).min(n - 1)];
    let inv_phi = 0.618_033_988_749_894_9;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2)?;
        }
    }
    let mut rotary = 0.5 * (lo + hi);
    let mut after = objective(rotary)?;
    if before <= after {
        rotary = 0.0;
        after = before;
    }
    Ok(CrCalibration {
        drive_phase: eta,
        stark_shift: stark,
        rotary,
        residual_before: before,
        residual_after: after,
        params: leveled.with_rotary(rotary),
    })
}

/// Axis-angle parameters of a single-qubit unitary recovered from its 3x3
/// Pauli expectation matrix.
#[derive(Clone, Debug)]
pub struct So3Fit {
    pub psi: f64,
    pub lambda: f64,
    pub chi: f64,
    /// Frobenius distance from the expectations to the fitted rotation.
    pub residual: f64,
    /// False when the residual indicates decoherence or leakage.
    pub unitary: bool,
}

/// Threshold on the rotation-fit residual separating unitary blocks from
/// decohered ones.
pub const SO3_RESIDUAL_TOL: f64 = 1e-3;

/// Least-squares axis-angle fit of `exp(-i [psi X + lambda Y + chi Z] / 2)`
/// to measured X/Y/Z expectation values (rows: measurement axis, columns:
/// preparation axis).
pub fn unitary_so3_fit(expectations: &Array2<f64>) -> Result<So3Fit> {
    if expectations.nrows() != 3 || expectations.ncols() != 3 {
        return Err(Error::InvalidInput("expectation matrix must be 3x3".into()));
    }
    let (r, residual, _) = linalg::nearest_rotation_3x3(expectations)?;
    let xyz = linalg::rotation_log(&r)?;
    Ok(So3Fit {
        psi: xyz[0],
        lambda: xyz[1],
        chi: xyz[2],
        residual,
        unitary: residual <= SO3_RESIDUAL_TOL,
    })
}

/// Pauli expectation matrix of a 2x2 unitary, the forward map inverted by
/// [`unitary_so3_fit`].
pub fn su2_expectations(u: &Array2<C64>) -> Result<Array2<f64>> {
    if u.nrows() != 2 || u.ncols() != 2 {
        return Err(Error::InvalidInput("expectation map needs a 2x2 matrix".into()));
    }
    let paulis = [gates::pauli_x(), gates::pauli_y(), gates::pauli_z()];
    let ud = linalg::dagger(u);
    let mut e = Array2::<f64>::zeros((3, 3));
    for (b, prep) in paulis.iter().enumerate() {
        let evolved = u.dot(prep.matrix()).dot(&ud);
        for (a, meas) in paulis.iter().enumerate() {
            let tr = meas.matrix().dot(&evolved).diag().sum();
            e[(a, b)] = 0.5 * tr.re;
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates;
    use crate::op::distance_up_to_global_phase;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, d: usize, ideal: bool) -> CrParams {
        let mut draw = |scale: f64| -> Vec<f64> {
            (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let phi = draw(2.0);
        let psi = draw(2.0);
        let (lambda, chi) = if ideal {
            (vec![0.0; d], vec![0.0; d])
        } else {
            (draw(0.3), draw(0.3))
        };
        CrParams::new(d, phi, psi, lambda, chi, 1, 0).unwrap()
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let p = CrParams::ideal(3, vec![0.0; 3], vec![0.0; 3], 1).unwrap();
        let u = cr_unitary(&p).unwrap();
        let id = Operator::identity(SystemShape::new(vec![3, 2]).unwrap());
        assert!(linalg::max_abs_diff(u.matrix(), id.matrix()) < 1e-14);
    }

    #[test]
    fn polarity_flip_is_z_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_params(&mut rng, 3, false);
            let plus = cr_unitary(&p).unwrap();
            let minus = cr_unitary(&p.flipped()).unwrap();
            let z = op::embed(&gates::pauli_z(), 1, plus.shape()).unwrap();
            let conj = z.compose(&plus).unwrap().compose(&z).unwrap();
            assert!(linalg::max_abs_diff(minus.matrix(), conj.matrix()) < 1e-12);
        }
    }

    #[test]
    fn cr_unitary_is_control_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_params(&mut rng, 4, false);
        let u = cr_unitary(&p).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                if r / 2 != c / 2 {
                    assert_eq!(u.matrix()[(r, c)], C64::new(0.0, 0.0));
                }
            }
        }
        assert!(u.unitarity_error() < 1e-12);
    }

    #[test]
    fn cycr_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..100 {
            let p = random_params(&mut rng, 3, true);
            let signs: Vec<i8> = (0..3).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let (dense, psi, phi) = cycr(&p, &signs).unwrap();
            let mut m = Array2::<C64>::zeros((6, 6));
            let g = C64::from_polar(1.0, -phi / 2.0);
            for l in 0..3 {
                let b = linalg::su2_exp(0.0, [psi[l], 0.0, 0.0]);
                for r in 0..2 {
                    for c in 0..2 {
                        m[(2 * l + r, 2 * l + c)] = g * b[(r, c)];
                    }
                }
            }
            let diff = linalg::max_abs_diff(dense.matrix(), &m);
            assert!(diff < 1e-10, "trial {trial}: closed form off by {diff:.2e}");
        }
    }

    #[test]
    fn equal_polarities_generate_no_entanglement() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_params(&mut rng, 3, true);
        let (_, psi, _) = cycr(&p, &[1, 1, 1]).unwrap();
        assert_abs_diff_eq!(psi[0], psi[1], epsilon = 1e-12);
        assert_abs_diff_eq!(psi[1], psi[2], epsilon = 1e-12);
    }

    #[test]
    fn zero_x_angles_give_global_phase_only() {
        let p = CrParams::ideal(3, vec![0.4, -0.2, 0.9], vec![0.0; 3], 1).unwrap();
        let (dense, _, phi) = cycr(&p, &[1, -1, 1]).unwrap();
        let want = Array2::<C64>::eye(6).mapv(|z| z * C64::from_polar(1.0, -phi / 2.0));
        assert!(linalg::max_abs_diff(dense.matrix(), &want) < 1e-12);
    }

    #[test]
    fn cycr_rejects_physical_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_params(&mut rng, 3, false);
        assert!(cycr(&p, &[1, -1, 1]).is_err());
    }

    #[test]
    fn cx_condition_examples() {
        let pi = std::f64::consts::PI;
        assert!(check_cx_condition(&[0.7, 0.7 - pi, 0.7], 1e-9).unwrap());
        assert!(!check_cx_condition(&[0.0, 0.0, 0.0], 1e-9).unwrap());
        assert!(!check_cx_condition(&[0.7, 0.7 - pi + 0.2, 0.7], 0.1).unwrap());
        assert!(check_cx_condition(&[0.7, 0.7 + pi, 0.7], 1e-9).unwrap());
    }

    fn generalized_cx_target() -> Operator {
        let mut m = Array2::<C64>::zeros((6, 6));
        m[(0, 0)] = C64::new(1.0, 0.0);
        m[(1, 1)] = C64::new(1.0, 0.0);
        m[(2, 3)] = C64::new(1.0, 0.0);
        m[(3, 2)] = C64::new(1.0, 0.0);
        m[(4, 4)] = C64::new(1.0, 0.0);
        m[(5, 5)] = C64::new(1.0, 0.0);
        Operator::new(SystemShape::new(vec![3, 2]).unwrap(), m).unwrap()
    }

    #[test]
    fn forward_gencx_reaches_the_target_gate() {
        let rates = CrRateModel::new(
            vec![0.01, -0.02, 0.015],
            vec![0.030, 0.020, 0.004],
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        let built = forward_gencx(&rates, 4.0).unwrap();
        assert_eq!(built.echo_transition, 0);
        let u = built.circuit.ideal_unitary().unwrap();
        let d = distance_up_to_global_phase(&u, &generalized_cx_target()).unwrap();
        assert!(d < 1e-9, "distance {d:.2e}");
        assert!(built.amp_scale <= 1.0 && built.amp_scale > 0.0);
    }

    #[test]
    fn forward_gencx_picks_the_other_transition_when_faster() {
        let rates = CrRateModel::new(
            vec![0.0; 3],
            vec![0.004, 0.019, 0.033],
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        let built = forward_gencx(&rates, 4.0).unwrap();
        assert_eq!(built.echo_transition, 1);
        let u = built.circuit.ideal_unitary().unwrap();
        let d = distance_up_to_global_phase(&u, &generalized_cx_target()).unwrap();
        assert!(d < 1e-9, "distance {d:.2e}");
    }

    #[test]
    fn equal_rates_are_unsolvable() {
        let rates = CrRateModel::new(
            vec![0.0; 3],
            vec![0.02, 0.02, 0.02],
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        match forward_gencx(&rates, 4.0) {
            Err(Error::NoSolution(_)) => {}
            other => panic!("expected no-solution error, got {other:?}"),
        }
    }

    #[test]
    fn forward_gencx_detuning_is_a_predicted_level_phase() {
        for psi_rates in [vec![0.030, 0.020, 0.004], vec![0.004, 0.019, 0.033]] {
            let rates =
                CrRateModel::new(vec![0.0; 3], psi_rates, vec![0.0; 3], vec![0.0; 3]).unwrap();
            let built = forward_gencx(&rates, 4.0).unwrap();
            let coeffs = built.circuit.detuning_response(0).unwrap();
            let predicted = built.circuit.predicted_residual().unwrap();
            assert_eq!(predicted.level, 2);
            assert_abs_diff_eq!(coeffs[1], 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(coeffs[2], predicted.coeff, epsilon = 1e-5);

            let delta = 0.25;
            let stripped = built
                .circuit
                .residual_operator(delta)
                .unwrap()
                .dagger()
                .compose(&built.circuit.unitary(delta).unwrap())
                .unwrap();
            let d = distance_up_to_global_phase(&stripped, &built.circuit.ideal_unitary().unwrap())
                .unwrap();
            assert!(d < 1e-9, "distance {d:.2e}");
        }
    }

    #[test]
    fn backward_core_is_the_lower_controlled_z() {
        let core = backward_gencz(8.0).unwrap();
        let u = core.ideal_unitary().unwrap();
        let mut want = Array2::<C64>::eye(6);
        want[(3, 3)] = C64::new(-1.0, 0.0);
        let want = Operator::new(SystemShape::new(vec![3, 2]).unwrap(), want).unwrap();
        let d = distance_up_to_global_phase(&u, &want).unwrap();
        assert!(d < 1e-12, "distance {d:.2e}");
    }

    #[test]
    fn backward_gencx_matches_target_and_prediction() {
        let built = backward_gencx(8.0).unwrap();
        let u = built.ideal_unitary().unwrap();
        let d = distance_up_to_global_phase(&u, &generalized_cx_target()).unwrap();
        assert!(d < 1e-12, "distance {d:.2e}");

        let coeffs = built.detuning_response(0).unwrap();
        assert_abs_diff_eq!(coeffs[2], -24.0, epsilon = 1e-6);
        let delta = 0.3;
        let stripped = built
            .residual_operator(delta)
            .unwrap()
            .dagger()
            .compose(&built.unitary(delta).unwrap())
            .unwrap();
        let dd = distance_up_to_global_phase(&stripped, &built.ideal_unitary().unwrap()).unwrap();
        assert!(dd < 1e-9, "distance {dd:.2e}");
    }

    #[test]
    fn calibrate_ideal_input_returns_zero_corrections() {
        let p = CrParams::ideal(3, vec![0.1, 0.2, 0.3], vec![0.5, 0.3, 0.2], 1).unwrap();
        let cal = calibrate_cr(&p, 2).unwrap();
        assert_abs_diff_eq!(cal.drive_phase, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cal.stark_shift, 0.0, epsilon = 1e-12);
        assert!(cal.residual_after < 1e-20);
    }

    #[test]
    fn calibrate_recovers_rotated_and_shifted_plant() {
        for designated in [2usize, 0] {
            let ideal = CrParams::ideal(3, vec![0.1, -0.2, 0.3], vec![0.6, 0.35, 0.15], 1).unwrap();
            let eta0 = 0.47;
            let chi0 = -0.23;
            let plant = ideal.with_drive_phase(-eta0).with_stark(-chi0);
            let cal = calibrate_cr(&plant, designated).unwrap();
            assert_abs_diff_eq!(cal.drive_phase, eta0, epsilon = 1e-10);
            assert_abs_diff_eq!(cal.stark_shift, chi0, epsilon = 1e-10);
            assert!(cal.residual_after < 1e-10, "residual {:.2e}", cal.residual_after);
            assert!(cal.params.is_ideal());
        }
    }

    #[test]
    fn rotary_scan_suppresses_leftover_spread() {
        let ideal = CrParams::ideal(3, vec![0.1, -0.2, 0.3], vec![0.5, 0.42, 0.15], 1).unwrap();
        let mut plant = ideal.with_drive_phase(-0.3).with_stark(0.1);
        plant.lambda[0] += 0.0314;
        plant.lambda[1] -= 0.0314;
        plant.chi[0] += 0.04;
        plant.chi[1] -= 0.04;
        let cal = calibrate_cr(&plant, 2).unwrap();
        assert!(
            cal.residual_after * 10.0 <= cal.residual_before,
            "before {:.3e} after {:.3e}",
            cal.residual_before,
            cal.residual_after
        );
    }

    #[test]
    fn so3_fit_inverts_the_forward_map() {
        let e = su2_expectations(&Array2::<C64>::eye(2)).unwrap();
        let fit = unitary_so3_fit(&e).unwrap();
        assert!(fit.unitary);
        assert_abs_diff_eq!(fit.psi, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.lambda, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.chi, 0.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..25 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm >= std::f64::consts::PI - 0.05 {
                continue;
            }
            let u = linalg::su2_exp(0.0, [v[0], v[1], v[2]]);
            let e = su2_expectations(&u).unwrap();
            let fit = unitary_so3_fit(&e).unwrap();
            assert!(fit.unitary);
            assert_abs_diff_eq!(fit.psi, v[0], epsilon = 1e-8);
            assert_abs_diff_eq!(fit.lambda, v[1], epsilon = 1e-8);
            assert_abs_diff_eq!(fit.chi, v[2], epsilon = 1e-8);
        }
    }

    #[test]
    fn so3_fit_flags_contraction() {
        let u = linalg::su2_exp(0.0, [0.4, -0.2, 0.9]);
        let e = su2_expectations(&u).unwrap().mapv(|x| 0.9 * x);
        let fit = unitary_so3_fit(&e).unwrap();
        assert!(!fit.unitary);
        assert!(fit.residual > 0.05);
    }
}
