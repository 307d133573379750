//! Noise layered on timed circuits: a bounded random walk standing in for
//! slow drift of the 1-2 resonance, always-on longitudinal couplings between
//! neighboring sites, and depolarizing-plus-dephasing decoherence attached to
//! idle time and to individual gates.

use std::cell::RefCell;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Gate, TimedCircuit};
use crate::error::{Error, Result};
use crate::op::Operator;
use crate::tomography::{MeasurableChannel, Setting};

/// Piecewise-constant detuning trajectory from a seeded bounded random walk.
/// The walk starts at zero and takes one uniform step per dwell segment,
/// clamped to `[-bound, bound]`.
#[derive(Clone, Debug)]
pub struct DeltaWalk {
    step: f64,
    bound: f64,
    dwell: f64,
    seed: u64,
}

impl DeltaWalk {
    pub fn new(step: f64, bound: f64, dwell: f64, seed: u64) -> Result<Self> {
        if !step.is_finite() || step < 0.0 {
            return Err(Error::InvalidInput(format!(
                "walk step {step} must be finite and nonnegative"
            )));
        }
        if !bound.is_finite() || bound < 0.0 {
            return Err(Error::InvalidInput(format!(
                "walk bound {bound} must be finite and nonnegative"
            )));
        }
        if !dwell.is_finite() || dwell <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "dwell time {dwell} must be finite and positive"
            )));
        }
        Ok(DeltaWalk { step, bound, dwell, seed })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Detuning during the dwell segment containing `time`. Times before
    /// zero use the starting value.
    pub fn delta_at(&self, time: f64) -> f64 {
        if !time.is_finite() || time < 0.0 {
            return 0.0;
        }
        let segment = (time / self.dwell).floor() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut delta = 0.0f64;
        for _ in 0..segment {
            let kick: f64 = rng.gen_range(-1.0..=1.0);
            delta = (delta + self.step * kick).clamp(-self.bound, self.bound);
        }
        delta
    }
}

/// Always-on `rate * n_a (x) n_b` term between two sites, with `n` the
/// number operator `diag(0, 1, ..)`. Rates are in radians per tick.
#[derive(Clone, Copy, Debug)]
pub struct CouplingTerm {
    pub site_a: usize,
    pub site_b: usize,
    pub rate: f64,
}

/// Full error model for a register: detuning drift, longitudinal couplings,
/// and decoherence rates. Idle rates act per tick of wall time; gate rates
/// act per unit of notional gate duration from [`gate_weight`].
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub delta_walk: Option<DeltaWalk>,
    pub couplings: Vec<CouplingTerm>,
    pub idle_depolarizing: f64,
    pub idle_dephasing: f64,
    pub gate_depolarizing: f64,
    pub gate_dephasing: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            delta_walk: None,
            couplings: Vec::new(),
            idle_depolarizing: 0.0,
            idle_dephasing: 0.0,
            gate_depolarizing: 0.0,
            gate_dephasing: 0.0,
        }
    }

    pub fn validate(&self, num_sites: usize) -> Result<()> {
        for r in [
            self.idle_depolarizing,
            self.idle_dephasing,
            self.gate_depolarizing,
            self.gate_dephasing,
        ] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "decoherence rate {r} must be finite and nonnegative"
                )));
            }
        }
        for c in &self.couplings {
            if c.site_a >= num_sites || c.site_b >= num_sites || c.site_a == c.site_b {
                return Err(Error::InvalidInput(format!(
                    "coupling between sites {} and {} is invalid on a {num_sites}-site register",
                    c.site_a, c.site_b
                )));
            }
            if !c.rate.is_finite() {
                return Err(Error::InvalidInput("coupling rate must be finite".into()));
            }
        }
        Ok(())
    }

    /// Copy with all four decoherence rates multiplied by `factor`.
    pub fn scaled_decoherence(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.idle_depolarizing *= factor;
        out.idle_dephasing *= factor;
        out.gate_depolarizing *= factor;
        out.gate_dephasing *= factor;
        out
    }

    /// Detuning at the given wall time, zero when no walk is configured.
    pub fn delta_at(&self, time: f64) -> f64 {
        self.delta_walk.as_ref().map_or(0.0, |w| w.delta_at(time))
    }
}

/// Notional duration of a gate in ticks, used to scale per-gate decoherence.
/// Diagonal phase gates are free in hardware and carry zero weight; the
/// entangling pulses dominate. A controlled X costs an echoed pair of
/// cross-resonance tones plus two local pulses.
pub fn gate_weight(gate: &Gate) -> f64 {
    match gate {
        Gate::LevelPhase { .. } | Gate::SubspaceRz { .. } => 0.0,
        Gate::PiPulse { .. }
        | Gate::PiPulsePhased { .. }
        | Gate::HalfPulse { .. }
        | Gate::SubspaceRx { .. }
        | Gate::PauliX
        | Gate::Hadamard => 1.0,
        Gate::CyclicShift { .. } => 2.0,
        Gate::TernaryBox { .. } => 4.0,
        Gate::ControlledX => 26.0,
        Gate::CrPulse { .. } | Gate::RotXz { .. } => 12.0,
    }
}

type PrepCache = RefCell<Option<(Vec<crate::tomography::PrepState>, Array2<C64>)>>;

/// A timed circuit evaluated under a noise model at a fixed detuning. The
/// detuning is frozen at the circuit's wall-clock start, so one channel
/// instance represents one execution epoch.
pub struct NoisyChannel<'a> {
    circuit: &'a TimedCircuit,
    noise: &'a NoiseModel,
    delta: f64,
    level_shifts: Vec<f64>,
    evolved_prep: PrepCache,
}

impl<'a> NoisyChannel<'a> {
    /// Channel for a circuit starting at `wall_time`, sampling the detuning
    /// walk there.
    pub fn new(circuit: &'a TimedCircuit, noise: &'a NoiseModel, wall_time: f64) -> Result<Self> {
        let delta = noise.delta_at(wall_time);
        NoisyChannel::with_delta(circuit, noise, delta)
    }

    /// Channel at an explicitly chosen detuning.
    pub fn with_delta(
        circuit: &'a TimedCircuit,
        noise: &'a NoiseModel,
        delta: f64,
    ) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::InvalidInput(format!("detuning {delta} must be finite")));
        }
        noise.validate(circuit.shape().num_sites())?;
        let shape = circuit.shape();
        let dim = shape.dim();
        let mut level_shifts = vec![0.0f64; dim];
        for c in &noise.couplings {
            for (idx, shift) in level_shifts.iter_mut().enumerate() {
                let levels = shape.unravel(idx);
                *shift += c.rate * levels[c.site_a] as f64 * levels[c.site_b] as f64;
            }
        }
        Ok(NoisyChannel {
            circuit,
            noise,
            delta,
            level_shifts,
            evolved_prep: RefCell::new(None),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn circuit(&self) -> &TimedCircuit {
        self.circuit
    }

    fn coupling_phases(&self, rho: &mut Array2<C64>, dt: f64) {
        let d = rho.nrows();
        for i in 0..d {
            for j in 0..d {
                let angle = (self.level_shifts[i] - self.level_shifts[j]) * dt;
                if angle != 0.0 {
                    rho[(i, j)] *= C64::from_polar(1.0, -angle);
                }
            }
        }
    }

    fn decohere(&self, rho: &mut Array2<C64>, depol_exponent: f64, dephase_exponent: f64) {
        let d = rho.nrows();
        let p = 1.0 - (-depol_exponent).exp();
        if p > 0.0 {
            let trace: C64 = (0..d).map(|i| rho[(i, i)]).sum();
            let uniform = trace / d as f64;
            rho.mapv_inplace(|z| z * (1.0 - p));
            for i in 0..d {
                rho[(i, i)] += uniform * p;
            }
        }
        let q = 1.0 - (-dephase_exponent).exp();
        if q > 0.0 {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        rho[(i, j)] *= 1.0 - q;
                    }
                }
            }
        }
    }

    fn idle(&self, rho: &mut Array2<C64>, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        self.coupling_phases(rho, dt);
        self.decohere(
            rho,
            self.noise.idle_depolarizing * dt,
            self.noise.idle_dephasing * dt,
        );
    }

    /// Density-matrix evolution through the full timeline: couplings and
    /// decoherence during idles, the detuned gate unitaries at their start
    /// ticks, and per-gate decoherence scaled by [`gate_weight`].
    pub fn apply_density(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let dim = self.circuit.shape().dim();
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::InvalidInput(format!(
                "density matrix is {}x{} but the register dimension is {dim}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let mut state = rho.clone();
        let gates = self.circuit.gates();
        let mut cursor = 0.0f64;
        for i in self.circuit.application_order() {
            let tg = &gates[i];
            self.idle(&mut state, tg.start - cursor);
            cursor = cursor.max(tg.start);
            let u = self.circuit.gate_unitary(i, self.delta)?;
            let m = u.matrix();
            state = m.dot(&state).dot(&crate::linalg::dagger(m));
            let w = gate_weight(&tg.gate);
            if w > 0.0 {
                self.decohere(
                    &mut state,
                    self.noise.gate_depolarizing * w,
                    self.noise.gate_dephasing * w,
                );
            }
        }
        self.idle(&mut state, self.circuit.duration() - cursor);
        Ok(state)
    }

    /// Net unitary of the circuit with detuning and couplings but without
    /// decoherence. Couplings enter as diagonal phases over each idle.
    pub fn unitary(&self) -> Result<Operator> {
        let dim = self.circuit.shape().dim();
        let gates = self.circuit.gates();
        let mut u = Operator::identity(self.circuit.shape().clone());
        let mut cursor = 0.0f64;
        let apply_idle = |u: &mut Operator, dt: f64| {
            if dt <= 0.0 {
                return;
            }
            let mut m = u.matrix().clone();
            for (i, shift) in self.level_shifts.iter().enumerate().take(dim) {
                let phase = C64::from_polar(1.0, -shift * dt);
                for j in 0..dim {
                    m[(i, j)] *= phase;
                }
            }
            *u = Operator::new(u.shape().clone(), m).expect("shape preserved");
        };
        for i in self.circuit.application_order() {
            let tg = &gates[i];
            apply_idle(&mut u, tg.start - cursor);
            cursor = cursor.max(tg.start);
            let g = self.circuit.gate_unitary(i, self.delta)?;
            u = g.compose(&u)?;
        }
        apply_idle(&mut u, self.circuit.duration() - cursor);
        Ok(u)
    }

    fn embedded_site_matrix(&self, site: usize, m2: &Array2<C64>) -> Array2<C64> {
        let d = self.circuit.shape().site_dim(site);
        let mut out = Array2::<C64>::eye(d);
        for i in 0..2 {
            for j in 0..2 {
                out[(i, j)] = m2[(i, j)];
            }
        }
        out
    }
}

impl MeasurableChannel for NoisyChannel<'_> {
    fn n_qubits(&self) -> usize {
        self.circuit.shape().num_sites()
    }

    /// Outcome statistics of the prepared, evolved, and basis-rotated
    /// register. Preparations and rotations act on the 0-1 subspace of each
    /// site; readout maps every level above 1 to outcome 1, the way a
    /// two-state discriminator classifies a leaked qutrit.
    fn outcome_probabilities(&self, setting: &Setting) -> Result<Vec<f64>> {
        let shape = self.circuit.shape();
        let n = shape.num_sites();
        if setting.n_qubits() != n {
            return Err(Error::InvalidInput(format!(
                "setting has {} qubits but the register has {n} sites",
                setting.n_qubits()
            )));
        }
        let cached = self
            .evolved_prep
            .borrow()
            .as_ref()
            .filter(|(preps, _)| preps == &setting.preps)
            .map(|(_, rho)| rho.clone());
        let evolved = match cached {
            Some(rho) => rho,
            None => {
                let mut rho = Array2::<C64>::eye(1);
                for (site, prep) in setting.preps.iter().enumerate() {
                    let local = self.embedded_site_matrix(site, &prep.density());
                    let mut local = local;
                    for l in 2..shape.site_dim(site) {
                        local[(l, l)] = C64::new(0.0, 0.0);
                    }
                    rho = ndarray::linalg::kron(&rho, &local);
                }
                let rho = self.apply_density(&rho)?;
                *self.evolved_prep.borrow_mut() = Some((setting.preps.clone(), rho.clone()));
                rho
            }
        };
        let mut rot = Array2::<C64>::eye(1);
        for (site, basis) in setting.bases.iter().enumerate() {
            let local = self.embedded_site_matrix(site, &basis.to_z_rotation());
            rot = ndarray::linalg::kron(&rot, &local);
        }
        let rotated = rot.dot(&evolved).dot(&crate::linalg::dagger(&rot));
        let mut probs = vec![0.0f64; 1usize << n];
        for idx in 0..shape.dim() {
            let levels = shape.unravel(idx);
            let mut outcome = 0usize;
            for &l in &levels {
                outcome = (outcome << 1) | usize::from(l >= 1);
            }
            probs[outcome] += rotated[(idx, idx)].re;
        }
        Ok(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::SystemShape;
    use crate::tomography::{Basis, PrepState};

    fn shape(dims: &[usize]) -> SystemShape {
        SystemShape::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn walk_stays_bounded_and_dwells() {
        let walk = DeltaWalk::new(0.08, 0.2, 25.0, 11).unwrap();
        for k in 0..200 {
            let t = k as f64 * 17.3;
            let d = walk.delta_at(t);
            assert!(d.abs() <= 0.2 + 1e-15, "walk escaped the bound: {d}");
            let segment_start = (t / 25.0).floor() * 25.0;
            assert_eq!(d, walk.delta_at(segment_start + 0.1));
            assert_eq!(d, walk.delta_at(segment_start + 24.9));
        }
        assert_eq!(walk.delta_at(0.0), 0.0);
        let twin = DeltaWalk::new(0.08, 0.2, 25.0, 11).unwrap();
        assert_eq!(walk.delta_at(1234.5), twin.delta_at(1234.5));
        let other = DeltaWalk::new(0.08, 0.2, 25.0, 12).unwrap();
        let moved = (0..40).any(|k| {
            let t = 100.0 * k as f64;
            (walk.delta_at(t) - other.delta_at(t)).abs() > 1e-12
        });
        assert!(moved, "independent seeds should decorrelate the walks");
    }

    #[test]
    fn noiseless_channel_reproduces_the_dense_unitary() {
        let mut c = TimedCircuit::new(shape(&[2, 3]));
        c.push(Gate::Hadamard, &[0], 0.0).unwrap();
        c.push(Gate::CyclicShift { raise: true }, &[1], 2.0).unwrap();
        c.push(Gate::ControlledX, &[0, 1], 5.0).unwrap();
        c.set_duration(8.0).unwrap();
        let noise = NoiseModel::noiseless();
        let ch = NoisyChannel::with_delta(&c, &noise, 0.17).unwrap();
        let u = c.unitary(0.17).unwrap();
        let m = u.matrix();
        let dim = m.nrows();
        let mut rho = Array2::<C64>::zeros((dim, dim));
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(0, 4)] = C64::new(0.5, 0.0);
        rho[(4, 0)] = C64::new(0.5, 0.0);
        rho[(4, 4)] = C64::new(0.5, 0.0);
        let got = ch.apply_density(&rho).unwrap();
        let want = m.dot(&rho).dot(&crate::linalg::dagger(m));
        let err: f64 = got
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "density evolution deviates by {err}");
        let un = ch.unitary().unwrap();
        assert!(crate::op::distance_up_to_global_phase(&un, &u).unwrap() < 1e-12);
    }

    #[test]
    fn couplings_phase_coherences_during_idles() {
        let mut c = TimedCircuit::new(shape(&[2, 2]));
        c.set_duration(10.0).unwrap();
        let mut noise = NoiseModel::noiseless();
        noise.couplings.push(CouplingTerm { site_a: 0, site_b: 1, rate: 0.03 });
        let ch = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let u = ch.unitary().unwrap();
        let m = u.matrix();
        for idx in 0..4 {
            let expect = if idx == 3 { C64::from_polar(1.0, -0.3) } else { C64::new(1.0, 0.0) };
            assert!((m[(idx, idx)] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn an_x_pair_on_the_partner_site_makes_the_coupling_local() {
        let mut c = TimedCircuit::new(shape(&[2, 2]));
        c.push(Gate::PauliX, &[1], 2.5).unwrap();
        c.push(Gate::PauliX, &[1], 7.5).unwrap();
        c.set_duration(10.0).unwrap();
        let mut noise = NoiseModel::noiseless();
        let rate = 0.05;
        noise.couplings.push(CouplingTerm { site_a: 0, site_b: 1, rate });
        let ch = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let u = ch.unitary().unwrap();
        let mut want = Array2::<C64>::eye(4);
        let local = C64::from_polar(1.0, -rate * 5.0);
        want[(2, 2)] = local;
        want[(3, 3)] = local;
        let want = Operator::new(shape(&[2, 2]), want).unwrap();
        let d = crate::op::distance_up_to_global_phase(&u, &want).unwrap();
        assert!(d < 1e-12, "echoed coupling should reduce to a local phase, got {d}");
    }

    #[test]
    fn idle_depolarizing_mixes_at_the_configured_rate() {
        let mut c = TimedCircuit::new(shape(&[2]));
        c.set_duration(4.0).unwrap();
        let mut noise = NoiseModel::noiseless();
        noise.idle_depolarizing = 0.05;
        let ch = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let mut rho = Array2::<C64>::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let out = ch.apply_density(&rho).unwrap();
        let p = 1.0 - (-0.05f64 * 4.0).exp();
        assert!((out[(0, 0)].re - (1.0 - p / 2.0)).abs() < 1e-12);
        assert!((out[(1, 1)].re - p / 2.0).abs() < 1e-12);
    }

    #[test]
    fn per_gate_dephasing_contracts_coherence_by_gate_weight() {
        let mut c = TimedCircuit::new(shape(&[2]));
        c.push(Gate::PauliX, &[0], 0.0).unwrap();
        let mut noise = NoiseModel::noiseless();
        noise.gate_dephasing = 0.25;
        let ch = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let mut rho = Array2::<C64>::from_elem((2, 2), C64::new(0.5, 0.0));
        let out = ch.apply_density(&rho).unwrap();
        let q = 1.0 - (-0.25f64).exp();
        assert!((out[(0, 1)].re - 0.5 * (1.0 - q)).abs() < 1e-12);
        rho[(0, 1)] = C64::new(0.5, 0.0);
        let interior = 2.0 * gate_weight(&Gate::RotXz { theta: 1.0 })
            + gate_weight(&Gate::SubspaceRx { k: 0, angle: 1.0 });
        assert!(gate_weight(&Gate::ControlledX) >= interior / 2.0 + 0.5);
        assert!(gate_weight(&Gate::ControlledX) > gate_weight(&Gate::PauliX));
        assert_eq!(gate_weight(&Gate::SubspaceRz { k: 0, phase: 1.0 }), 0.0);
    }

    #[test]
    fn leaked_population_reads_out_as_one() {
        let mut c = TimedCircuit::new(shape(&[3]));
        c.push(Gate::PiPulse { k: 1 }, &[0], 0.0).unwrap();
        let noise = NoiseModel::noiseless();
        let ch = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let setting =
            Setting::new(vec![PrepState::ZMinus], vec![Basis::Z]).unwrap();
        let probs = ch.outcome_probabilities(&setting).unwrap();
        assert!((probs[1] - 1.0).abs() < 1e-12, "level 2 should be assigned outcome 1");
        let ground = Setting::new(vec![PrepState::ZPlus], vec![Basis::Z]).unwrap();
        let probs = ch.outcome_probabilities(&ground).unwrap();
        assert!((probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prep_caching_does_not_change_results() {
        let mut c = TimedCircuit::new(shape(&[2, 3]));
        c.push(Gate::Hadamard, &[0], 0.0).unwrap();
        c.push(Gate::ControlledX, &[0, 1], 1.0).unwrap();
        let mut noise = NoiseModel::noiseless();
        noise.idle_dephasing = 0.01;
        let warm = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
        let s1 = Setting::new(vec![PrepState::XPlus, PrepState::ZPlus], vec![Basis::Z, Basis::Z])
            .unwrap();
        let s2 = Setting::new(vec![PrepState::XPlus, PrepState::ZPlus], vec![Basis::X, Basis::Y])
            .unwrap();
        let s3 = Setting::new(vec![PrepState::YPlus, PrepState::ZPlus], vec![Basis::X, Basis::Y])
            .unwrap();
        let mut warm_probs = Vec::new();
        for s in [&s1, &s2, &s3] {
            warm_probs.push(warm.outcome_probabilities(s).unwrap());
        }
        for (s, want) in [&s1, &s2, &s3].iter().zip(&warm_probs) {
            let cold = NoisyChannel::with_delta(&c, &noise, 0.0).unwrap();
            let got = cold.outcome_probabilities(s).unwrap();
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(DeltaWalk::new(-0.1, 0.2, 5.0, 0).is_err());
        assert!(DeltaWalk::new(0.1, 0.2, 0.0, 0).is_err());
        let mut noise = NoiseModel::noiseless();
        noise.idle_depolarizing = -1.0;
        assert!(noise.validate(2).is_err());
        let mut noise = NoiseModel::noiseless();
        noise.couplings.push(CouplingTerm { site_a: 0, site_b: 0, rate: 0.1 });
        assert!(noise.validate(2).is_err());
        let mut noise = NoiseModel::noiseless();
        noise.couplings.push(CouplingTerm { site_a: 0, site_b: 5, rate: 0.1 });
        assert!(noise.validate(2).is_err());
    }
}
