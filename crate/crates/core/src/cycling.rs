//! Basis cycling: interleaving cyclic level shifts with control-diagonal
//! boxes, the qutrit refocusing scheduler built on top of it, and the
//! qubit echo special cases.
//!
//! Cycling `d` control-diagonal unitaries through the shift permutes which
//! environment block each level sees, so every level experiences all `d`
//! blocks in some rotation. The closed form turns that product into sums of
//! level phases and rotated block products, which is what the refocusing
//! scheduler exploits.

use ndarray::Array2;

use crate::circuit::{CMat, Gate, ResidualPrediction, TimedCircuit};
use crate::error::{Error, Result};
use crate::frame::DetuningModel;
use crate::gates::{self, ShiftDir};
use crate::linalg;
use crate::op::{self, DiagonalBlockOperator, Operator, SystemShape};
use crate::C64;

/// A basis-cycling sequence: `d` control-diagonal boxes, each followed by a
/// cyclic shift scheduled at the matching insertion time.
#[derive(Clone, Debug)]
pub struct CycleSpec {
    d: usize,
    v_list: Vec<DiagonalBlockOperator>,
    insertion_times: Vec<f64>,
}

impl CycleSpec {
    pub fn new(
        d: usize,
        v_list: Vec<DiagonalBlockOperator>,
        insertion_times: Vec<f64>,
    ) -> Result<Self> {
        if v_list.len() != d {
            return Err(Error::InvalidInput(format!(
                "need {d} boxes, got {}",
                v_list.len()
            )));
        }
        if insertion_times.len() != d {
            return Err(Error::InvalidInput(format!(
                "need {d} insertion times, got {}",
                insertion_times.len()
            )));
        }
        if insertion_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("insertion times must be finite".into()));
        }
        if insertion_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "insertion times must be strictly increasing".into(),
            ));
        }
        for (j, v) in v_list.iter().enumerate() {
            if v.control_dim() != d {
                return Err(Error::InvalidInput(format!(
                    "box {j} has control dimension {}, expected {d}",
                    v.control_dim()
                )));
            }
            if v.env_shape() != v_list[0].env_shape() {
                return Err(Error::InvalidInput(format!(
                    "box {j} has a different environment shape than box 0"
                )));
            }
        }
        Ok(CycleSpec { d, v_list, insertion_times })
    }

    pub fn control_dim(&self) -> usize {
        self.d
    }

    pub fn boxes(&self) -> &[DiagonalBlockOperator] {
        &self.v_list
    }

    pub fn insertion_times(&self) -> &[f64] {
        &self.insertion_times
    }

    pub fn env_shape(&self) -> &SystemShape {
        self.v_list[0].env_shape()
    }

    fn register_shape(&self) -> Result<SystemShape> {
        let mut dims = vec![self.d];
        dims.extend_from_slice(self.env_shape().dims());
        SystemShape::new(dims)
    }
}

/// Dense product of the cycle: shift after box, `d` times, later segments
/// multiplying from the left.
pub fn compose_cycle(spec: &CycleSpec) -> Result<Operator> {
    let shape = spec.register_shape()?;
    let shift = op::embed(
        &gates::shift_permutation(ShiftDir::Raise, spec.d)?,
        0,
        &shape,
    )?;
    let mut u = Operator::identity(shape);
    for v in &spec.v_list {
        let seg = shift.compose(&v.to_operator()?)?;
        u = seg.compose(&u)?;
    }
    Ok(u)
}

/// Closed form of the cycle: level `l` collects the phases and blocks of
/// box `j` at level `l + j`, indices modulo `d`, blocks in application
/// order.
pub fn closed_form_cycle(spec: &CycleSpec) -> Result<DiagonalBlockOperator> {
    let d = spec.d;
    let ed = spec.env_shape().dim();
    let mut phases = Vec::with_capacity(d);
    let mut blocks = Vec::with_capacity(d);
    for l in 0..d {
        let mut phase = 0.0;
        let mut acc = Array2::<C64>::eye(ed);
        for (j, v) in spec.v_list.iter().enumerate() {
            let idx = (l + j) % d;
            phase += v.phases()[idx];
            acc = v.blocks()[idx].dot(&acc);
        }
        phases.push(phase);
        blocks.push(acc);
    }
    DiagonalBlockOperator::new(d, spec.env_shape().clone(), phases, blocks)
}

/// Scheduling solution for the refocused ternary sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RefocusPlan {
    /// Interval between the first two shifts.
    pub tau1: f64,
    /// Interval between the last two shifts, containing the box.
    pub tau2: f64,
    /// Level phase coefficients the plan was solved for.
    pub alpha: Vec<f64>,
    /// Coefficient of the detuning in the leftover level-2 phase.
    pub residual_phase_coeff: f64,
}

/// Smallest intervals satisfying the refocusing condition
/// `tau2 - alpha2 = tau1 - alpha0` with both at least `min_spacing`,
/// `tau1` on the unit tick grid.
pub fn refocus_intervals(alpha: &[f64], min_spacing: f64) -> Result<RefocusPlan> {
    refocus_intervals_on_grid(alpha, min_spacing, 1.0)
}

/// [`refocus_intervals`] with a configurable tick granularity.
pub fn refocus_intervals_on_grid(
    alpha: &[f64],
    min_spacing: f64,
    grid: f64,
) -> Result<RefocusPlan> {
    if alpha.len() != 3 || alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput(
            "scheduling needs three finite phase coefficients".into(),
        ));
    }
    if !min_spacing.is_finite() || min_spacing < 0.0 {
        return Err(Error::InvalidInput("minimum spacing must be nonnegative".into()));
    }
    if !grid.is_finite() || grid <= 0.0 {
        return Err(Error::InvalidInput("tick grid must be positive".into()));
    }
    let gap = alpha[2] - alpha[0];
    let tau1_raw = min_spacing.max(min_spacing - gap);
    let tau1 = (tau1_raw / grid - 1e-9).ceil().max(0.0) * grid;
    let tau2 = tau1 + gap;
    let residual = -alpha[0] - alpha[1] + 2.0 * alpha[2] - 3.0 * tau2;
    Ok(RefocusPlan {
        tau1,
        tau2,
        alpha: alpha.to_vec(),
        residual_phase_coeff: residual,
    })
}

/// Which side of the ternary form the shifts sit on: `Upper` conjugates the
/// box as raise-box-lower, `Lower` as lower-box-raise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefocusSign {
    Upper,
    Lower,
}

/// A control-diagonal unitary whose level phases are linear in the
/// detuning: `sum_l e^{-i delta alpha_l} |l><l| (x) v_l`.
///
/// The phase slope coefficients are kept verbatim, unlike
/// [`DiagonalBlockOperator`] whose phases absorb block determinants.
#[derive(Clone, Debug)]
pub struct TernaryUnitary {
    alpha: Vec<f64>,
    blocks: Vec<Array2<C64>>,
    env_shape: SystemShape,
}

impl TernaryUnitary {
    pub fn new(
        alpha: Vec<f64>,
        blocks: Vec<Array2<C64>>,
        env_shape: SystemShape,
    ) -> Result<Self> {
        if alpha.len() != 3 || blocks.len() != 3 {
            return Err(Error::InvalidInput(
                "ternary unitary needs three phase coefficients and blocks".into(),
            ));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("phase coefficients must be finite".into()));
        }
        let ed = env_shape.dim();
        for (l, b) in blocks.iter().enumerate() {
            if b.nrows() != ed || b.ncols() != ed {
                return Err(Error::InvalidInput(format!(
                    "block {l} is {}x{} but the environment dimension is {ed}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            let uerr = linalg::unitarity_error(b);
            if uerr > 1e-8 {
                return Err(Error::MatrixCheck(format!(
                    "block {l} deviates from unitary by {uerr:.3e}"
                )));
            }
        }
        Ok(TernaryUnitary { alpha, blocks, env_shape })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn blocks(&self) -> &[Array2<C64>] {
        &self.blocks
    }

    pub fn env_shape(&self) -> &SystemShape {
        &self.env_shape
    }

    /// Dense operator at a given detuning.
    pub fn operator_at(&self, delta: f64) -> Result<Operator> {
        let mut dims = vec![3];
        dims.extend_from_slice(self.env_shape.dims());
        let shape = SystemShape::new(dims)?;
        let ed = self.env_shape.dim();
        let mut m = Array2::<C64>::zeros((3 * ed, 3 * ed));
        for l in 0..3 {
            let ph = C64::from_polar(1.0, -delta * self.alpha[l]);
            for r in 0..ed {
                for c in 0..ed {
                    m[(l * ed + r, l * ed + c)] = ph * self.blocks[l][(r, c)];
                }
            }
        }
        Operator::new(shape, m)
    }

    pub fn ideal_operator(&self) -> Result<Operator> {
        self.operator_at(0.0)
    }
}

/// Builds the refocused sequence: two shifts `tau1` apart, the box inside
/// the following `tau2` window, and a final shift closing the cycle.
///
/// Lower-sign plans are produced by solving [`refocus_intervals`] with the
/// first two phase coefficients swapped, since the lower condition pairs
/// `tau1` with `alpha1` instead of `alpha0`.
pub fn build_refocused_sequence(
    u_ternary: &TernaryUnitary,
    plan: &RefocusPlan,
    sign: RefocusSign,
) -> Result<TimedCircuit> {
    for (name, t) in [("tau1", plan.tau1), ("tau2", plan.tau2)] {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidInput(format!("{name} must be nonnegative")));
        }
    }
    let a = u_ternary.alpha();
    let paired = match sign {
        RefocusSign::Upper => a[0],
        RefocusSign::Lower => a[1],
    };
    let violation = (plan.tau2 - a[2]) - (plan.tau1 - paired);
    if violation.abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "plan violates the scheduling condition by {violation:.3e} ticks"
        )));
    }
    let expected = -a[0] - a[1] + 2.0 * a[2] - 3.0 * plan.tau2;
    if (plan.residual_phase_coeff - expected).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "plan residual coefficient {} does not match the schedule ({expected})",
            plan.residual_phase_coeff
        )));
    }

    let mut dims = vec![3];
    dims.extend_from_slice(u_ternary.env_shape().dims());
    let shape = SystemShape::new(dims)?;
    let sites: Vec<usize> = (0..shape.dims().len()).collect();
    let raise = sign == RefocusSign::Upper;
    let box_gate = Gate::TernaryBox {
        alpha: u_ternary.alpha().to_vec(),
        blocks: u_ternary.blocks().iter().map(CMat::from_array).collect(),
    };

    let mut c = TimedCircuit::new(shape);
    c.push(Gate::CyclicShift { raise }, &[0], 0.0)?;
    c.push(Gate::CyclicShift { raise }, &[0], plan.tau1)?;
    c.push(box_gate, &sites, plan.tau1)?;
    c.push(Gate::CyclicShift { raise }, &[0], plan.tau1 + plan.tau2)?;
    c.set_predicted_residual(Some(ResidualPrediction {
        site: 0,
        level: 2,
        coeff: plan.residual_phase_coeff,
    }));
    Ok(c)
}

/// Worst distance between the detuned circuit (with its predicted overall
/// level phase stripped) and `ideal_v`, over the given detunings.
pub fn verify_refocusing(
    circuit: &TimedCircuit,
    ideal_v: &Operator,
    deltas: &[f64],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &delta in deltas {
        let u = circuit.unitary(delta)?;
        let stripped = circuit.residual_operator(delta)?.dagger().compose(&u)?;
        worst = worst.max(op::distance_up_to_global_phase(&stripped, ideal_v)?);
    }
    Ok(worst)
}

/// Echoed pair of detuned qubit pi pulses spaced `alpha` apart, composed
/// with the free phase `e^{-i delta alpha Z}` they are meant to cancel.
/// Equals identity up to a global phase for every detuning.
pub fn qubit_echo_refocus(alpha: f64, t0: f64, detuning: f64) -> Result<Operator> {
    if !alpha.is_finite() || !t0.is_finite() || !detuning.is_finite() {
        return Err(Error::InvalidInput("echo arguments must be finite".into()));
    }
    let model = DetuningModel::new(detuning);
    let first = gates::pi_pulse_phased(0, model.phase_at(t0), 2)?;
    let second = gates::pi_pulse_phased(0, model.phase_at(t0 + alpha), 2)?;
    let free = gates::subspace_rz(0, 2.0 * detuning * alpha, 2)?;
    second.compose(&first)?.compose(&free)
}

/// Tolerance on the block distance below which the echoed qubit counts as
/// decoupled from its environment.
pub const DD_DECOUPLE_TOL: f64 = 1e-9;

/// Composes the two-box qubit echo `X u1 X u0` and reports whether the two
/// environment blocks of the result agree, i.e. whether the echo decoupled
/// the qubit.
pub fn dd_decouple_check(
    u0: &DiagonalBlockOperator,
    u1: &DiagonalBlockOperator,
) -> Result<(bool, f64)> {
    if u0.control_dim() != 2 || u1.control_dim() != 2 {
        return Err(Error::InvalidInput("echo decoupling is a qubit check".into()));
    }
    if u0.env_shape() != u1.env_shape() {
        return Err(Error::InvalidInput("boxes act on different environments".into()));
    }
    let scale = |phase: f64, m: Array2<C64>| m.mapv(|z| z * C64::from_polar(1.0, phase));
    let a = scale(
        u0.phases()[0] + u1.phases()[1],
        u1.blocks()[1].dot(&u0.blocks()[0]),
    );
    let b = scale(
        u0.phases()[1] + u1.phases()[0],
        u1.blocks()[0].dot(&u0.blocks()[1]),
    );
    let residual = linalg::max_abs_diff(&a, &b);
    Ok((residual < DD_DECOUPLE_TOL, residual))
}

/// Echoed cross resonance on a qubit pair: `X U_minus X U_plus` with the
/// echo pulse on the control.
pub fn ecr_compose(cr_plus: &Operator, cr_minus: &Operator) -> Result<Operator> {
    if cr_plus.shape() != cr_minus.shape() {
        return Err(Error::InvalidInput("polarity halves act on different registers".into()));
    }
    if cr_plus.shape().dims().first() != Some(&2) {
        return Err(Error::InvalidInput("echoed CR needs a qubit control".into()));
    }
    let x = op::embed(&gates::pauli_x(), 0, cr_plus.shape())?;
    x.compose(cr_minus)?.compose(&x)?.compose(cr_plus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr::{cr_unitary, CrParams};
    use crate::op::distance_up_to_global_phase;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let mut h = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            h[(i, i)] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        linalg::expm_i_hermitian(&h, 1.0).unwrap()
    }

    fn random_cycle(rng: &mut ChaCha8Rng, d: usize, env_dim: usize) -> CycleSpec {
        let env = SystemShape::site(env_dim).unwrap();
        let boxes: Vec<DiagonalBlockOperator> = (0..d)
            .map(|_| {
                let phases = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let blocks = (0..d).map(|_| random_unitary(env_dim, rng)).collect();
                DiagonalBlockOperator::new(d, env.clone(), phases, blocks).unwrap()
            })
            .collect();
        let times = (0..d).map(|j| (j + 1) as f64 * 5.0).collect();
        CycleSpec::new(d, boxes, times).unwrap()
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let env = SystemShape::site(2).unwrap();
        let ident = DiagonalBlockOperator::new(
            3,
            env.clone(),
            vec![0.0; 3],
            vec![Array2::<C64>::eye(2); 3],
        )
        .unwrap();
        assert!(CycleSpec::new(3, vec![ident.clone(); 2], vec![0.0, 1.0, 2.0]).is_err());
        assert!(CycleSpec::new(3, vec![ident.clone(); 3], vec![0.0, 2.0, 2.0]).is_err());
        assert!(CycleSpec::new(3, vec![ident; 3], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn cycle_of_identity_boxes_is_identity() {
        for d in [2usize, 3, 4] {
            let env = SystemShape::site(2).unwrap();
            let ident = DiagonalBlockOperator::new(
                d,
                env,
                vec![0.0; d],
                vec![Array2::<C64>::eye(2); d],
            )
            .unwrap();
            let times = (0..d).map(|j| j as f64).collect();
            let spec = CycleSpec::new(d, vec![ident; d], times).unwrap();
            let u = compose_cycle(&spec).unwrap();
            let id = Operator::identity(u.shape().clone());
            assert!(linalg::max_abs_diff(u.matrix(), id.matrix()) < 1e-12);
        }
    }

    #[test]
    fn qubit_echo_collects_crossed_phases() {
        let env = SystemShape::site(2).unwrap();
        let phases0 = [0.31, -0.82];
        let phases1 = [1.17, 0.45];
        let mk = |ph: [f64; 2]| {
            DiagonalBlockOperator::new(
                2,
                env.clone(),
                ph.to_vec(),
                vec![Array2::<C64>::eye(2); 2],
            )
            .unwrap()
        };
        let spec = CycleSpec::new(2, vec![mk(phases0), mk(phases1)], vec![0.0, 1.0]).unwrap();
        let u = compose_cycle(&spec).unwrap();
        let got0 = u.matrix()[(0, 0)];
        let got1 = u.matrix()[(2, 2)];
        assert_abs_diff_eq!(got0.arg(), phases0[0] + phases1[1], epsilon = 1e-12);
        assert_abs_diff_eq!(got1.arg(), phases0[1] + phases1[0], epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..102 {
            let d = [2, 3, 4][trial % 3];
            let spec = random_cycle(&mut rng, d, 2);
            let dense = compose_cycle(&spec).unwrap();
            let closed = closed_form_cycle(&spec).unwrap().to_operator().unwrap();
            let diff = linalg::max_abs_diff(dense.matrix(), closed.matrix());
            assert!(diff < 1e-10, "trial {trial} (d={d}): off by {diff:.2e}");
        }
    }

    #[test]
    fn cycle_output_is_control_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for d in [2usize, 3, 4] {
            let spec = random_cycle(&mut rng, d, 2);
            let dense = compose_cycle(&spec).unwrap();
            assert!(DiagonalBlockOperator::from_operator(&dense, 1e-10).is_ok());
        }
    }

    #[test]
    fn single_phase_lands_on_its_level() {
        let env = SystemShape::site(2).unwrap();
        let theta = 0.83;
        let mut boxes = Vec::new();
        for j in 0..3 {
            let mut phases = vec![0.0; 3];
            if j == 0 {
                phases[1] = theta;
            }
            boxes.push(
                DiagonalBlockOperator::new(
                    3,
                    env.clone(),
                    phases,
                    vec![Array2::<C64>::eye(2); 3],
                )
                .unwrap(),
            );
        }
        let spec = CycleSpec::new(3, boxes, vec![0.0, 1.0, 2.0]).unwrap();
        let closed = closed_form_cycle(&spec).unwrap();
        assert_abs_diff_eq!(closed.phases()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(closed.phases()[1], theta, epsilon = 1e-12);
        assert_abs_diff_eq!(closed.phases()[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn level_independent_blocks_factorize() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let env = SystemShape::site(2).unwrap();
        let per_box: Vec<Array2<C64>> = (0..3).map(|_| random_unitary(2, &mut rng)).collect();
        let boxes: Vec<DiagonalBlockOperator> = per_box
            .iter()
            .map(|w| {
                DiagonalBlockOperator::new(
                    3,
                    env.clone(),
                    vec![0.1, -0.4, 0.7],
                    vec![w.clone(); 3],
                )
                .unwrap()
            })
            .collect();
        let spec = CycleSpec::new(3, boxes, vec![0.0, 1.0, 2.0]).unwrap();
        let closed = closed_form_cycle(&spec).unwrap();
        let want = per_box[2].dot(&per_box[1]).dot(&per_box[0]);
        for l in 0..3 {
            let got = closed.blocks()[l].clone();
            let num = got
                .iter()
                .zip(want.iter())
                .map(|(a, b)| a * b.conj())
                .sum::<C64>();
            let aligned = want.mapv(|z| z * (num / num.norm()));
            assert!(linalg::max_abs_diff(&got, &aligned) < 1e-10, "level {l}");
        }
    }

    #[test]
    fn interval_solver_examples() {
        let plan = refocus_intervals(&[0.0, 0.0, 0.0], 5.0).unwrap();
        assert_abs_diff_eq!(plan.tau1, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.tau2, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.residual_phase_coeff, -15.0, epsilon = 1e-12);

        let plan = refocus_intervals(&[1.3, -0.4, 1.3], 5.0).unwrap();
        assert_abs_diff_eq!(plan.tau1, plan.tau2, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..50 {
            let alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let s = rng.gen_range(0.0..6.0);
            let plan = refocus_intervals(&alpha, s).unwrap();
            assert!(plan.tau1 >= s - 1e-9 && plan.tau2 >= s - 1e-9);
            assert_abs_diff_eq!(plan.tau1.fract().min(1.0 - plan.tau1.fract()), 0.0, epsilon = 1e-7);
            assert_abs_diff_eq!(
                plan.tau2 - alpha[2],
                plan.tau1 - alpha[0],
                epsilon = 1e-9
            );
        }
    }

    fn random_ternary(rng: &mut ChaCha8Rng) -> TernaryUnitary {
        let alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let blocks: Vec<Array2<C64>> = (0..3).map(|_| random_unitary(2, rng)).collect();
        TernaryUnitary::new(alpha, blocks, SystemShape::site(2).unwrap()).unwrap()
    }

    fn conjugated_target(u: &TernaryUnitary, sign: RefocusSign) -> Operator {
        let shift = gates::shift_permutation(
            match sign {
                RefocusSign::Upper => ShiftDir::Raise,
                RefocusSign::Lower => ShiftDir::Lower,
            },
            3,
        )
        .unwrap();
        let reg = u.ideal_operator().unwrap();
        let s = op::embed(&shift, 0, reg.shape()).unwrap();
        s.compose(&reg).unwrap().compose(&s.dagger()).unwrap()
    }

    #[test]
    fn refocused_sequence_is_the_conjugated_box_at_zero_detuning() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for sign in [RefocusSign::Upper, RefocusSign::Lower] {
            let u = random_ternary(&mut rng);
            let a = u.alpha();
            let solver_alpha = match sign {
                RefocusSign::Upper => vec![a[0], a[1], a[2]],
                RefocusSign::Lower => vec![a[1], a[0], a[2]],
            };
            let plan = refocus_intervals(&solver_alpha, 5.0).unwrap();
            let circuit = build_refocused_sequence(&u, &plan, sign).unwrap();
            let got = circuit.ideal_unitary().unwrap();
            let want = conjugated_target(&u, sign);
            let d = distance_up_to_global_phase(&got, &want).unwrap();
            assert!(d < 1e-12, "{sign:?}: distance {d:.2e}");
        }
    }

    #[test]
    fn refocusing_protects_against_detuning() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for sign in [RefocusSign::Upper, RefocusSign::Lower] {
            let u = random_ternary(&mut rng);
            let a = u.alpha();
            let solver_alpha = match sign {
                RefocusSign::Upper => vec![a[0], a[1], a[2]],
                RefocusSign::Lower => vec![a[1], a[0], a[2]],
            };
            let plan = refocus_intervals(&solver_alpha, 5.0).unwrap();
            let circuit = build_refocused_sequence(&u, &plan, sign).unwrap();
            let ideal = circuit.ideal_unitary().unwrap();
            let deltas: Vec<f64> = (0..100).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let worst = verify_refocusing(&circuit, &ideal, &deltas).unwrap();
            assert!(worst < 1e-9, "{sign:?}: worst distance {worst:.2e}");
        }
    }

    #[test]
    fn unprotected_conjugation_is_detuning_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let u = random_ternary(&mut rng);
        let mut c = TimedCircuit::new(SystemShape::new(vec![3, 2]).unwrap());
        c.push(Gate::CyclicShift { raise: false }, &[0], 0.0).unwrap();
        c.push(
            Gate::TernaryBox {
                alpha: u.alpha().to_vec(),
                blocks: u.blocks().iter().map(CMat::from_array).collect(),
            },
            &[0, 1],
            0.0,
        )
        .unwrap();
        c.push(Gate::CyclicShift { raise: true }, &[0], 7.0).unwrap();
        let ideal = c.ideal_unitary().unwrap();
        let worst = verify_refocusing(&c, &ideal, &[0.3]).unwrap();
        assert!(worst > 1e-3, "worst distance {worst:.2e}");
    }

    #[test]
    fn condition_violations_are_rejected_and_grow_with_detuning() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let u = random_ternary(&mut rng);
        let good = refocus_intervals(u.alpha(), 5.0).unwrap();
        let bad = RefocusPlan {
            tau2: good.tau2 + 3.0,
            residual_phase_coeff: good.residual_phase_coeff - 9.0,
            ..good.clone()
        };
        assert!(build_refocused_sequence(&u, &bad, RefocusSign::Upper).is_err());

        let mut c = TimedCircuit::new(SystemShape::new(vec![3, 2]).unwrap());
        c.push(Gate::CyclicShift { raise: true }, &[0], 0.0).unwrap();
        c.push(Gate::CyclicShift { raise: true }, &[0], good.tau1).unwrap();
        c.push(
            Gate::TernaryBox {
                alpha: u.alpha().to_vec(),
                blocks: u.blocks().iter().map(CMat::from_array).collect(),
            },
            &[0, 1],
            good.tau1,
        )
        .unwrap();
        c.push(Gate::CyclicShift { raise: true }, &[0], good.tau1 + bad.tau2).unwrap();
        c.set_predicted_residual(Some(ResidualPrediction {
            site: 0,
            level: 2,
            coeff: bad.residual_phase_coeff,
        }));
        let ideal = conjugated_target(&u, RefocusSign::Upper);
        let mut last = 0.0;
        for delta in [0.1, 0.2, 0.3] {
            let dist = verify_refocusing(&c, &ideal, &[delta]).unwrap();
            assert!(dist > last, "distance not growing at delta {delta}");
            last = dist;
        }
        assert!(last > 1e-3);
    }

    #[test]
    fn qubit_echo_cancels_free_phase() {
        let id = Operator::identity(SystemShape::site(2).unwrap());
        let u = qubit_echo_refocus(7.0, 0.0, 0.0).unwrap();
        assert!(distance_up_to_global_phase(&u, &id).unwrap() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let alpha = rng.gen_range(0.5..20.0);
            let t0 = rng.gen_range(0.0..40.0);
            let delta = rng.gen_range(-0.5..0.5);
            let u = qubit_echo_refocus(alpha, t0, delta).unwrap();
            let d = distance_up_to_global_phase(&u, &id).unwrap();
            assert!(d < 1e-12, "distance {d:.2e}");
        }
    }

    #[test]
    fn wrong_echo_interval_leaves_a_z_phase() {
        let (alpha, wrong, t0, delta) = (6.0, 4.5, 3.0, 0.2);
        let model = DetuningModel::new(delta);
        let first = gates::pi_pulse_phased(0, model.phase_at(t0), 2).unwrap();
        let second = gates::pi_pulse_phased(0, model.phase_at(t0 + alpha), 2).unwrap();
        let free = gates::subspace_rz(0, 2.0 * delta * wrong, 2).unwrap();
        let u = second.compose(&first).unwrap().compose(&free).unwrap();
        let rel = u.matrix()[(0, 0)] / u.matrix()[(1, 1)];
        assert_abs_diff_eq!(rel.arg(), 2.0 * delta * (alpha - wrong), epsilon = 1e-12);
    }

    #[test]
    fn echo_decouples_matched_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let env = SystemShape::site(2).unwrap();
        let w = random_unitary(2, &mut rng);
        let same = DiagonalBlockOperator::new(
            2,
            env.clone(),
            vec![0.4, -0.9],
            vec![w.clone(), w.clone()],
        )
        .unwrap();
        let (ok, residual) = dd_decouple_check(&same, &same).unwrap();
        assert!(ok, "residual {residual:.2e}");

        let det_root = |m: &Array2<C64>| {
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            det.sqrt()
        };
        let target = {
            let g = random_unitary(2, &mut rng);
            let r = det_root(&g);
            g.mapv(|z| z / r)
        };
        let b00 = random_unitary(2, &mut rng);
        let b00 = {
            let r = det_root(&b00);
            b00.mapv(|z| z / r)
        };
        let b01 = random_unitary(2, &mut rng);
        let b01 = {
            let r = det_root(&b01);
            b01.mapv(|z| z / r)
        };
        let phases0 = [0.7, -0.2];
        let u0 = DiagonalBlockOperator::new(
            2,
            env.clone(),
            phases0.to_vec(),
            vec![b00.clone(), b01.clone()],
        )
        .unwrap();
        let b11 = target.dot(&linalg::dagger(&b00));
        let b10 = target.dot(&linalg::dagger(&b01));
        let u1 = DiagonalBlockOperator::new(
            2,
            env.clone(),
            vec![-phases0[1], -phases0[0]],
            vec![b10, b11],
        )
        .unwrap();
        let (ok, residual) = dd_decouple_check(&u0, &u1).unwrap();
        assert!(ok, "residual {residual:.2e}");

        let spec = CycleSpec::new(2, vec![u0, u1], vec![0.0, 1.0]).unwrap();
        let dense = compose_cycle(&spec).unwrap();
        let factored = op::embed(
            &Operator::new(env.clone(), target.clone()).unwrap(),
            1,
            dense.shape(),
        )
        .unwrap();
        assert!(linalg::max_abs_diff(dense.matrix(), factored.matrix()) < 1e-9);

        let u_bad = DiagonalBlockOperator::new(
            2,
            env,
            vec![0.1, 0.2],
            vec![random_unitary(2, &mut rng), random_unitary(2, &mut rng)],
        )
        .unwrap();
        let (ok, residual) = dd_decouple_check(&same, &u_bad).unwrap();
        assert!(!ok);
        assert!(residual > 1e-3);
    }

    fn qubit_cr(rng: &mut ChaCha8Rng, psi: [f64; 2], chi: [f64; 2]) -> (CrParams, CrParams) {
        let phi = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let plus = CrParams::new(
            2,
            phi,
            psi.to_vec(),
            vec![0.0; 2],
            chi.to_vec(),
            1,
            0,
        )
        .unwrap();
        let minus = plus.flipped();
        (plus, minus)
    }

    #[test]
    fn echoed_cr_blocks_are_opposite_x_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);

        let (p, m) = qubit_cr(&mut rng, [0.0, 0.0], [0.0, 0.0]);
        let ecr = ecr_compose(&cr_unitary(&p).unwrap(), &cr_unitary(&m).unwrap()).unwrap();
        let id = Operator::identity(ecr.shape().clone());
        assert!(distance_up_to_global_phase(&ecr, &id).unwrap() < 1e-12);

        for _ in 0..10 {
            let psi = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let (p, m) = qubit_cr(&mut rng, psi, [0.0, 0.0]);
            let ecr = ecr_compose(&cr_unitary(&p).unwrap(), &cr_unitary(&m).unwrap()).unwrap();
            let mm = ecr.matrix();
            let block = |l: usize| {
                let mut b = Array2::<C64>::zeros((2, 2));
                for r in 0..2 {
                    for c in 0..2 {
                        b[(r, c)] = mm[(2 * l + r, 2 * l + c)];
                    }
                }
                b
            };
            let log0 = linalg::su2_log(&block(0)).unwrap();
            let log1 = linalg::su2_log(&block(1)).unwrap();
            let gap = psi[0] - psi[1];
            assert_abs_diff_eq!(log0.xyz[0], gap, epsilon = 1e-10);
            assert_abs_diff_eq!(log0.xyz[1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(log0.xyz[2], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(log1.xyz[0], -gap, epsilon = 1e-10);
            assert_abs_diff_eq!(log0.phi, log1.phi, epsilon = 1e-10);
        }

        let (p, m) = qubit_cr(&mut rng, [0.8, -0.3], [0.4, 0.25]);
        let ecr = ecr_compose(&cr_unitary(&p).unwrap(), &cr_unitary(&m).unwrap()).unwrap();
        let mut b = Array2::<C64>::zeros((2, 2));
        for r in 0..2 {
            for c in 0..2 {
                b[(r, c)] = ecr.matrix()[(r, c)];
            }
        }
        let log = linalg::su2_log(&b).unwrap();
        assert!(log.xyz[1].abs() + log.xyz[2].abs() > 1e-3);
    }
}
