//! Timed gate sequences on mixed qubit/qutrit registers.
//!
//! A [`TimedCircuit`] records gates with explicit start times on the tick
//! grid. Dense simulation threads a [`DetuningModel`] through every gate
//! that touches the 1-2 subspace of a dimension-3 site, reproducing the
//! drift of the 1-2 drive frame between pulses. Gates on qubit sites and
//! gates confined to the 0-1 reference frame are unaffected.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cr::CrParams;
use crate::error::{Error, Result};
use crate::frame::DetuningModel;
use crate::gates::{self, ShiftDir};
use crate::linalg;
use crate::op::{self, Operator, SystemShape};
use crate::C64;

/// Dense complex matrix in a JSON-friendly row-major layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl CMat {
    pub fn from_array(a: &Array2<C64>) -> Self {
        let data = a.iter().map(|z| [z.re, z.im]).collect();
        CMat { rows: a.nrows(), cols: a.ncols(), data }
    }

    pub fn to_array(&self) -> Result<Array2<C64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidInput(format!(
                "matrix payload holds {} entries for a {}x{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        let v: Vec<C64> = self.data.iter().map(|&[re, im]| C64::new(re, im)).collect();
        Array2::from_shape_vec((self.rows, self.cols), v)
            .map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Gate kinds placeable in a timed circuit.
///
/// Site lists are given per gate in [`TimedCircuit::push`]; two-site gates
/// take (control, target) order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Gate {
    /// Pi pulse on the (k, k+1) transition, uniform -i convention.
    PiPulse { k: usize },
    /// Pi pulse with an explicit extra drive phase.
    PiPulsePhased { k: usize, phase: f64 },
    /// Full cyclic level shift, raising or lowering.
    CyclicShift { raise: bool },
    /// Half pulse `exp(-i pi X_k / 4)`.
    HalfPulse { k: usize },
    /// `exp(-i angle X_k / 2)`.
    SubspaceRx { k: usize, angle: f64 },
    /// Opposite phases `-phase/2`, `+phase/2` on levels k, k+1.
    SubspaceRz { k: usize, phase: f64 },
    /// Phase `e^{i phase}` on a single level.
    LevelPhase { level: usize, phase: f64 },
    /// Pauli X on a qubit site.
    PauliX,
    /// Hadamard on a qubit site.
    Hadamard,
    /// Cross-resonance pulse on (control, qubit target) sites.
    CrPulse { params: CrParams },
    /// `exp(-i theta/2 X_0 (x) Z)` on (qutrit, qubit) sites.
    RotXz { theta: f64 },
    /// CX between the 0-1 subspaces of (control, target); other control
    /// levels act as identity.
    ControlledX,
    /// Control-diagonal unitary `sum_l e^{-i delta alpha_l} |l><l| (x) v_l`
    /// whose level phases are linear in the detuning. The first site is the
    /// control; `alpha` is expressed in the circuit's detuning reference
    /// frame.
    TernaryBox { alpha: Vec<f64>, blocks: Vec<CMat> },
}

impl Gate {
    /// Number of sites the gate occupies.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Gate::PiPulse { .. }
            | Gate::PiPulsePhased { .. }
            | Gate::CyclicShift { .. }
            | Gate::HalfPulse { .. }
            | Gate::SubspaceRx { .. }
            | Gate::SubspaceRz { .. }
            | Gate::LevelPhase { .. }
            | Gate::PauliX
            | Gate::Hadamard => Some(1),
            Gate::CrPulse { .. } | Gate::RotXz { .. } | Gate::ControlledX => Some(2),
            Gate::TernaryBox { .. } => None,
        }
    }
}

/// Predicted pure-dephasing byproduct of a sequence at detuning `delta`: a
/// relative phase `e^{i delta coeff}` on `level` of `site`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPrediction {
    pub site: usize,
    pub level: usize,
    pub coeff: f64,
}

/// A gate placed on specific sites at a specific start tick.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimedGate {
    pub gate: Gate,
    pub sites: Vec<usize>,
    pub start: f64,
}

/// Gate sequence with explicit timing on a fixed register.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimedCircuit {
    shape: SystemShape,
    gates: Vec<TimedGate>,
    duration: f64,
    reference_time: f64,
    predicted_residual: Option<ResidualPrediction>,
}

impl TimedCircuit {
    pub fn new(shape: SystemShape) -> Self {
        TimedCircuit {
            shape,
            gates: Vec::new(),
            duration: 0.0,
            reference_time: 0.0,
            predicted_residual: None,
        }
    }

    pub fn shape(&self) -> &SystemShape {
        &self.shape
    }

    pub fn gates(&self) -> &[TimedGate] {
        &self.gates
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Reference time of the 1-2 drive frame.
    pub fn reference_time(&self) -> f64 {
        self.reference_time
    }

    pub fn set_reference_time(&mut self, t0: f64) {
        self.reference_time = t0;
    }

    pub fn predicted_residual(&self) -> Option<&ResidualPrediction> {
        self.predicted_residual.as_ref()
    }

    pub fn set_predicted_residual(&mut self, p: Option<ResidualPrediction>) {
        self.predicted_residual = p;
    }

    /// Extends the circuit to at least `duration` ticks of wall time.
    pub fn set_duration(&mut self, duration: f64) -> Result<()> {
        if !duration.is_finite() || duration < self.duration {
            return Err(Error::InvalidInput(format!(
                "duration {duration} must be finite and >= the last gate time {}",
                self.duration
            )));
        }
        self.duration = duration;
        Ok(())
    }

    /// Appends a gate at `start`. Gates sharing a start time are applied in
    /// insertion order.
    pub fn push(&mut self, gate: Gate, sites: &[usize], start: f64) -> Result<()> {
        if !start.is_finite() || start < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gate start time {start} must be finite and nonnegative"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &s in sites {
            if s >= self.shape.num_sites() {
                return Err(Error::InvalidInput(format!(
                    "site {s} is out of range for a {}-site register",
                    self.shape.num_sites()
                )));
            }
            if !seen.insert(s) {
                return Err(Error::InvalidInput(format!("site {s} repeated in gate site list")));
            }
        }
        self.validate_gate(&gate, sites)?;
        self.gates.push(TimedGate { gate, sites: sites.to_vec(), start });
        if start > self.duration {
            self.duration = start;
        }
        Ok(())
    }

    fn validate_gate(&self, gate: &Gate, sites: &[usize]) -> Result<()> {
        if let Some(n) = gate.arity() {
            if sites.len() != n {
                return Err(Error::InvalidInput(format!(
                    "gate takes {n} site(s), got {}",
                    sites.len()
                )));
            }
        }
        let dim = |i: usize| self.shape.site_dim(sites[i]);
        match gate {
            Gate::PiPulse { k }
            | Gate::PiPulsePhased { k, .. }
            | Gate::HalfPulse { k }
            | Gate::SubspaceRx { k, .. }
            | Gate::SubspaceRz { k, .. } => {
                if k + 1 >= dim(0) {
                    return Err(Error::InvalidInput(format!(
                        "transition {k} needs site dimension >= {}, got {}",
                        k + 2,
                        dim(0)
                    )));
                }
            }
            Gate::LevelPhase { level, .. } => {
                if *level >= dim(0) {
                    return Err(Error::InvalidInput(format!(
                        "level {level} is out of range for dimension {}",
                        dim(0)
                    )));
                }
            }
            Gate::CyclicShift { .. } => {}
            Gate::PauliX | Gate::Hadamard => {
                if dim(0) != 2 {
                    return Err(Error::InvalidInput(format!(
                        "qubit gate placed on a dimension-{} site",
                        dim(0)
                    )));
                }
            }
            Gate::CrPulse { params } => {
                if dim(0) != params.d {
                    return Err(Error::InvalidInput(format!(
                        "CR control dimension {} does not match site dimension {}",
                        params.d,
                        dim(0)
                    )));
                }
                if dim(1) != 2 {
                    return Err(Error::InvalidInput(
                        "CR target must be a qubit site".into(),
                    ));
                }
            }
            Gate::RotXz { .. } => {
                if dim(0) != 3 || dim(1) != 2 {
                    return Err(Error::InvalidInput(
                        "cross-axis rotation needs a (qutrit, qubit) site pair".into(),
                    ));
                }
            }
            Gate::ControlledX => {
                let ok = matches!((dim(0), dim(1)), (2, 2) | (2, 3));
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "controlled X supports (2,2) and (2,3) site pairs, got ({},{})",
                        dim(0),
                        dim(1)
                    )));
                }
            }
            Gate::TernaryBox { alpha, blocks } => {
                if sites.len() < 2 {
                    return Err(Error::InvalidInput(
                        "control-diagonal box needs a control site and an environment".into(),
                    ));
                }
                let dc = dim(0);
                if alpha.len() != dc || blocks.len() != dc {
                    return Err(Error::InvalidInput(format!(
                        "need {dc} phase coefficients and blocks, got {} and {}",
                        alpha.len(),
                        blocks.len()
                    )));
                }
                if alpha.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidInput("phase coefficients must be finite".into()));
                }
                let ed: usize = sites[1..].iter().map(|&s| self.shape.site_dim(s)).product();
                for (l, b) in blocks.iter().enumerate() {
                    let m = b.to_array()?;
                    if m.nrows() != ed || m.ncols() != ed {
                        return Err(Error::InvalidInput(format!(
                            "block {l} is {}x{} but the environment dimension is {ed}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    let uerr = linalg::unitarity_error(&m);
                    if uerr > 1e-8 {
                        return Err(Error::MatrixCheck(format!(
                            "block {l} deviates from unitary by {uerr:.3e}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense operator of one placed gate under the given detuning model.
    fn gate_operator(&self, tg: &TimedGate, model: &DetuningModel) -> Result<Operator> {
        let d0 = self.shape.site_dim(tg.sites[0]);
        let local = match &tg.gate {
            Gate::PiPulse { k } => {
                if d0 == 3 {
                    crate::frame::detuned_pi_pulse(*k, 0.0, tg.start, model)?
                } else {
                    gates::pi_pulse(*k, d0)?
                }
            }
            Gate::PiPulsePhased { k, phase } => {
                if d0 == 3 {
                    crate::frame::detuned_pi_pulse(*k, *phase, tg.start, model)?
                } else {
                    gates::pi_pulse_phased(*k, *phase, d0)?
                }
            }
            Gate::CyclicShift { raise } => {
                let dir = if *raise { ShiftDir::Raise } else { ShiftDir::Lower };
                if d0 == 3 {
                    crate::frame::detuned_cyclic_shift(dir, tg.start, model)?
                } else {
                    gates::cyclic_shift(dir, d0)?
                }
            }
            Gate::HalfPulse { k } => {
                frame_conjugated(gates::half_pulse(*k, d0)?, *k, d0, tg.start, model)?
            }
            Gate::SubspaceRx { k, angle } => {
                frame_conjugated(gates::subspace_rx(*k, *angle, d0)?, *k, d0, tg.start, model)?
            }
            Gate::SubspaceRz { k, phase } => gates::subspace_rz(*k, *phase, d0)?,
            Gate::LevelPhase { level, phase } => gates::level_phase(*level, *phase, d0)?,
            Gate::PauliX => gates::pauli_x(),
            Gate::Hadamard => gates::hadamard(),
            Gate::CrPulse { params } => crate::cr::cr_unitary(params)?,
            Gate::RotXz { theta } => gates::rot_xz(*theta)?,
            Gate::ControlledX => match (d0, self.shape.site_dim(tg.sites[1])) {
                (2, 2) => gates::cx_qubits(),
                (2, 3) => gates::cx_qubit_to_qutrit01()?,
                _ => unreachable!("rejected at push time"),
            },
            Gate::TernaryBox { alpha, blocks } => {
                let env_dims: Vec<usize> =
                    tg.sites[1..].iter().map(|&s| self.shape.site_dim(s)).collect();
                let ed: usize = env_dims.iter().product();
                let mut m = Array2::<C64>::zeros((d0 * ed, d0 * ed));
                for (l, b) in blocks.iter().enumerate() {
                    let phase = C64::from_polar(1.0, -model.delta * alpha[l]);
                    let blk = b.to_array()?;
                    for r in 0..ed {
                        for c in 0..ed {
                            m[(l * ed + r, l * ed + c)] = phase * blk[(r, c)];
                        }
                    }
                }
                let mut dims = vec![d0];
                dims.extend_from_slice(&env_dims);
                Operator::new(SystemShape::new(dims)?, m)?
            }
        };
        op::embed_on_sites(&local, &tg.sites, &self.shape)
    }

    /// Replays every gate of `other` onto this circuit, translating site
    /// `s` of `other` to `site_map[s]` and shifting start times by `offset`.
    /// Metadata of `other` (duration padding, residual prediction, reference
    /// time) is not carried over.
    pub fn append_mapped(
        &mut self,
        other: &TimedCircuit,
        site_map: &[usize],
        offset: f64,
    ) -> Result<()> {
        if site_map.len() != other.shape.num_sites() {
            return Err(Error::InvalidInput(format!(
                "site map covers {} sites but the source register has {}",
                site_map.len(),
                other.shape.num_sites()
            )));
        }
        if !offset.is_finite() || offset < 0.0 {
            return Err(Error::InvalidInput(format!(
                "offset {offset} must be finite and nonnegative"
            )));
        }
        for (s, &target) in site_map.iter().enumerate() {
            if target >= self.shape.num_sites()
                || self.shape.site_dim(target) != other.shape.site_dim(s)
            {
                return Err(Error::InvalidInput(format!(
                    "site {s} (dimension {}) cannot map onto site {target}",
                    other.shape.site_dim(s)
                )));
            }
        }
        for tg in &other.gates {
            let sites: Vec<usize> = tg.sites.iter().map(|&s| site_map[s]).collect();
            self.push(tg.gate.clone(), &sites, tg.start + offset)?;
        }
        Ok(())
    }

    /// Indices into [`Self::gates`] in application order: ascending start
    /// time, insertion order breaking ties.
    pub fn application_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.gates.len()).collect();
        order.sort_by(|&a, &b| {
            self.gates[a]
                .start
                .partial_cmp(&self.gates[b].start)
                .expect("finite start times")
                .then(a.cmp(&b))
        });
        order
    }

    /// Dense full-register operator of the gate at `index` under detuning
    /// `delta`, with the 1-2 frame referenced to [`Self::reference_time`].
    pub fn gate_unitary(&self, index: usize, delta: f64) -> Result<Operator> {
        let tg = self.gates.get(index).ok_or_else(|| {
            Error::InvalidInput(format!("gate index {index} out of range"))
        })?;
        let model = DetuningModel { delta, t0: self.reference_time };
        self.gate_operator(tg, &model)
    }

    /// Dense unitary of the whole sequence at detuning `delta`, with the
    /// 1-2 frame referenced to [`Self::reference_time`].
    pub fn unitary(&self, delta: f64) -> Result<Operator> {
        let mut u = Operator::identity(self.shape.clone());
        for i in self.application_order() {
            let g = self.gate_unitary(i, delta)?;
            u = g.compose(&u)?;
        }
        Ok(u)
    }

    /// Dense unitary with the detuning switched off.
    pub fn ideal_unitary(&self) -> Result<Operator> {
        self.unitary(0.0)
    }

    /// The predicted residual as a dense operator at detuning `delta`, or
    /// identity when no prediction is attached.
    pub fn residual_operator(&self, delta: f64) -> Result<Operator> {
        match &self.predicted_residual {
            None => Ok(Operator::identity(self.shape.clone())),
            Some(p) => {
                let d = self.shape.site_dim(p.site);
                let local = gates::level_phase(p.level, delta * p.coeff, d)?;
                op::embed(&local, p.site, &self.shape)
            }
        }
    }

    /// Measures the detuning response on one site, assuming the sequence
    /// turns detuning into pure level phases.
    ///
    /// Probes `U(delta) U(0)^dagger` at two small detunings, checks it is
    /// diagonal with phases that depend only on the level of `site`, and
    /// returns per-level phase coefficients relative to level 0: the
    /// response is `e^{i delta c_l}` on level `l`.
    pub fn detuning_response(&self, site: usize) -> Result<Vec<f64>> {
        if site >= self.shape.num_sites() {
            return Err(Error::InvalidInput(format!(
                "site {site} is out of range for a {}-site register",
                self.shape.num_sites()
            )));
        }
        let u0 = self.unitary(0.0)?;
        let probe = |delta: f64| -> Result<Vec<f64>> {
            let resp = self.unitary(delta)?.compose(&u0.dagger())?;
            let m = resp.matrix();
            let dim = self.shape.dim();
            let mut off = 0.0f64;
            for r in 0..dim {
                for c in 0..dim {
                    if r != c {
                        off = off.max(m[(r, c)].norm());
                    }
                }
            }
            if off > 1e-9 {
                return Err(Error::MatrixCheck(format!(
                    "detuning response is not diagonal (off-diagonal {off:.3e})"
                )));
            }
            let sd = self.shape.site_dim(site);
            let mut coeffs = vec![f64::NAN; sd];
            for j in 0..dim {
                let mut idx = self.shape.unravel(j);
                let level = idx[site];
                idx[site] = 0;
                let j0 = self.shape.ravel(&idx);
                let phase = (m[(j, j)] / m[(j0, j0)]).arg();
                let c = phase / delta;
                if coeffs[level].is_nan() {
                    coeffs[level] = c;
                } else if (coeffs[level] - c).abs() * delta.abs() > 1e-9 {
                    return Err(Error::MatrixCheck(format!(
                        "detuning phase on level {level} varies across spectator states"
                    )));
                }
            }
            Ok(coeffs)
        };
        let a = probe(1e-3)?;
        let b = probe(5e-4)?;
        for (x, y) in a.iter().zip(&b) {
            if (x - y).abs() > 1e-6 {
                return Err(Error::MatrixCheck(
                    "detuning response is not linear in delta".into(),
                ));
            }
        }
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: TimedCircuit = serde_json::from_str(s)?;
        for tg in &c.gates {
            c.validate_gate(&tg.gate, &tg.sites)?;
        }
        Ok(c)
    }
}

/// Applies the 1-2 frame phase to a subspace rotation: gates on the (1,2)
/// transition of a qutrit are conjugated by `P_2(phase)`, everything else
/// passes through.
fn frame_conjugated(
    g: Operator,
    k: usize,
    d: usize,
    t: f64,
    model: &DetuningModel,
) -> Result<Operator> {
    if d != 3 || k != 1 {
        return Ok(g);
    }
    let phi = model.phase_at(t);
    if phi == 0.0 {
        return Ok(g);
    }
    let plus = gates::level_phase(2, phi, 3)?;
    let minus = gates::level_phase(2, -phi, 3)?;
    minus.compose(&g)?.compose(&plus)
}
