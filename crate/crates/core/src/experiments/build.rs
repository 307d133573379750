//! Circuit builders for the three-site register: the protected CCZ and
//! Toffoli sequences, an unprotected variant that shelves a control in the
//! third level, the identity probe family, and the eight-CX qubit-only
//! Toffoli reference.
//!
//! The register is `[3, 2, 2]`: site 0 is the ternary second control, site 1
//! the first control qubit, site 2 the target qubit. Computational labels in
//! reports follow the (target, second control, first control) bit order; use
//! [`outcome_to_label`] to translate raveled register outcomes.

use std::f64::consts::FRAC_PI_4;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::circuit::{Gate, TimedCircuit};
use crate::cr;
use crate::error::{Error, Result};
use crate::gates;
use crate::op::{self, Operator, SystemShape};

/// Site index of the ternary second control.
pub const TERNARY_SITE: usize = 0;
/// Site index of the first control qubit.
pub const FIRST_CONTROL_SITE: usize = 1;
/// Site index of the target qubit.
pub const TARGET_SITE: usize = 2;

/// Idle windows shorter than this many ticks get no decoupling pair.
pub const DECOUPLING_MIN_WINDOW: f64 = 2.0;

/// The qutrit-plus-two-qubits register every builder here acts on.
pub fn ternary_register() -> SystemShape {
    SystemShape::new(vec![3, 2, 2]).expect("static register shape")
}

/// Rounds a requested shift spacing up to the tick grid. The interior of the
/// embedded controlled-Z unit sits at quarter points of one interval, so the
/// spacing is kept a multiple of four ticks and at least four.
pub fn resolved_spacing(min_spacing: f64) -> Result<f64> {
    if !min_spacing.is_finite() || min_spacing < 0.0 {
        return Err(Error::InvalidInput("minimum spacing must be finite and nonnegative".into()));
    }
    Ok(((min_spacing / 4.0).ceil() * 4.0).max(4.0))
}

/// Raveled register index -> report label with bits ordered (target, second
/// control, first control).
pub fn outcome_to_label(outcome: usize) -> usize {
    let c2 = (outcome >> 2) & 1;
    let c1 = (outcome >> 1) & 1;
    let t = outcome & 1;
    (t << 2) | (c2 << 1) | c1
}

/// Three-bit label as a string, most significant bit first.
pub fn label_string(label: usize) -> String {
    format!("{:03b}", label & 7)
}

/// Restriction of a register operator to the states where every site stays
/// in its lowest two levels, reshaped to an all-qubit register.
pub fn qubit_subspace(u: &Operator) -> Result<Operator> {
    let shape = u.shape();
    let keep: Vec<usize> =
        (0..shape.dim()).filter(|&i| shape.unravel(i).iter().all(|&l| l < 2)).collect();
    let m = u.matrix();
    let mut sub = Array2::<C64>::zeros((keep.len(), keep.len()));
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            sub[(r, c)] = m[(i, j)];
        }
    }
    Operator::new(SystemShape::new(vec![2; shape.dims().len()])?, sub)
}

/// Start times of every cyclic shift in the circuit, sorted.
pub fn shift_instants(c: &TimedCircuit) -> Vec<f64> {
    let mut times: Vec<f64> = c
        .gates()
        .iter()
        .filter(|tg| matches!(tg.gate, Gate::CyclicShift { .. }))
        .map(|tg| tg.start)
        .collect();
    times.sort_by(f64::total_cmp);
    times
}

/// Checks that consecutive gaps in a sorted time list are all equal.
pub fn check_equispaced(times: &[f64]) -> Result<()> {
    if times.len() < 3 {
        return Ok(());
    }
    let gap = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - gap).abs() > 1e-9 {
            return Err(Error::MatrixCheck(format!(
                "shift gaps differ: {} vs {gap}",
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

/// Inserts an X pair at the quarter points of every idle window of at least
/// `min_window` ticks on the listed qubit sites. Returns the number of
/// inserted gates. Windows are delimited by any gate touching the site, the
/// circuit start, and the circuit end; the pair brackets are chosen so the
/// echoed halves have equal length, which makes any longitudinal coupling to
/// a neighbor act as a local phase over the window.
pub fn insert_decoupling(
    c: &mut TimedCircuit,
    sites: &[usize],
    min_window: f64,
) -> Result<usize> {
    if !min_window.is_finite() || min_window <= 0.0 {
        return Err(Error::InvalidInput("decoupling window must be positive".into()));
    }
    let mut inserted = 0usize;
    for &s in sites {
        if s >= c.shape().num_sites() || c.shape().site_dim(s) != 2 {
            return Err(Error::InvalidInput(format!(
                "decoupling pairs go on qubit sites, site {s} is not one"
            )));
        }
        let mut marks: Vec<f64> = vec![0.0, c.duration()];
        marks.extend(c.gates().iter().filter(|tg| tg.sites.contains(&s)).map(|tg| tg.start));
        marks.sort_by(f64::total_cmp);
        let mut pairs = Vec::new();
        for w in marks.windows(2) {
            let len = w[1] - w[0];
            if len >= min_window {
                pairs.push((w[0] + 0.25 * len, w[0] + 0.75 * len));
            }
        }
        for (a, b) in pairs {
            c.push(Gate::PauliX, &[s], a)?;
            c.push(Gate::PauliX, &[s], b)?;
            inserted += 2;
        }
    }
    Ok(inserted)
}

/// Which pieces of the protected sequence to keep when laying out the
/// schedule; the probe circuits drop parts while keeping every shift time.
#[derive(Clone, Copy)]
struct CczParts {
    entanglers: bool,
    interior: bool,
    rz_mid: f64,
    rz_end: f64,
}

/// The protected schedule on the shared shift grid: six raises `h` apart,
/// the two controlled X pulses at 1.5h and 4.5h, the controlled-Z unit
/// embedded on the middle three shifts, and the two phase corrections.
fn ccz_schedule(h: f64, parts: CczParts) -> Result<TimedCircuit> {
    let mut c = TimedCircuit::new(ternary_register());
    let raise = Gate::CyclicShift { raise: true };
    c.push(raise.clone(), &[TERNARY_SITE], 0.0)?;
    c.push(raise.clone(), &[TERNARY_SITE], h)?;
    if parts.entanglers {
        c.push(Gate::ControlledX, &[FIRST_CONTROL_SITE, TERNARY_SITE], 1.5 * h)?;
    }
    c.push(Gate::SubspaceRz { k: 0, phase: parts.rz_mid }, &[TERNARY_SITE], 1.5 * h)?;
    if parts.interior {
        let inner = cr::backward_gencz(h)?;
        c.append_mapped(&inner, &[TERNARY_SITE, TARGET_SITE], 2.0 * h)?;
    } else {
        c.push(raise.clone(), &[TERNARY_SITE], 2.0 * h)?;
        c.push(raise.clone(), &[TERNARY_SITE], 3.0 * h)?;
        c.push(raise.clone(), &[TERNARY_SITE], 4.0 * h)?;
    }
    if parts.entanglers {
        c.push(Gate::ControlledX, &[FIRST_CONTROL_SITE, TERNARY_SITE], 4.5 * h)?;
    }
    c.push(raise, &[TERNARY_SITE], 5.0 * h)?;
    c.push(Gate::SubspaceRz { k: 0, phase: parts.rz_end }, &[TERNARY_SITE], 5.0 * h)?;
    c.set_duration(5.0 * h)?;
    c.set_predicted_residual(Some(crate::circuit::ResidualPrediction {
        site: TERNARY_SITE,
        level: 2,
        coeff: -6.0 * h,
    }));
    check_equispaced(&shift_instants(&c))?;
    Ok(c)
}

/// Protected CCZ with zero-valued phase corrections and decoupling pairs on
/// the two qubit sites. At zero detuning the dense unitary restricted to the
/// qubit subspace equals the three-qubit CCZ up to a global phase, and the
/// restriction is unchanged by any constant detuning.
pub fn build_ccz(min_spacing: f64) -> Result<TimedCircuit> {
    build_ccz_corrected(min_spacing, 0.0, 0.0)
}

/// Protected CCZ with explicit phase correction values, as recovered by the
/// coupling calibration.
pub fn build_ccz_corrected(min_spacing: f64, rz_mid: f64, rz_end: f64) -> Result<TimedCircuit> {
    for v in [rz_mid, rz_end] {
        if !v.is_finite() {
            return Err(Error::InvalidInput("phase corrections must be finite".into()));
        }
    }
    let h = resolved_spacing(min_spacing)?;
    let mut c =
        ccz_schedule(h, CczParts { entanglers: true, interior: true, rz_mid, rz_end })?;
    insert_decoupling(&mut c, &[FIRST_CONTROL_SITE, TARGET_SITE], DECOUPLING_MIN_WINDOW)?;
    Ok(c)
}

/// Unprotected CCZ variant: the second control shelves its `1` population in
/// the third level with a lowering shift, runs the same entangler core, and
/// unshelves at the end. The shelved interval is exposed to the upper-gap
/// detuning, so the gate phase drifts with it.
pub fn build_ccz_unprotected(min_spacing: f64) -> Result<TimedCircuit> {
    let h = resolved_spacing(min_spacing)?;
    let mut c = TimedCircuit::new(ternary_register());
    c.push(Gate::CyclicShift { raise: false }, &[TERNARY_SITE], 0.0)?;
    c.push(Gate::ControlledX, &[FIRST_CONTROL_SITE, TERNARY_SITE], 0.5 * h)?;
    let inner = cr::backward_gencz(h)?;
    c.append_mapped(&inner, &[TERNARY_SITE, TARGET_SITE], h)?;
    c.push(Gate::ControlledX, &[FIRST_CONTROL_SITE, TERNARY_SITE], 3.5 * h)?;
    c.push(Gate::CyclicShift { raise: true }, &[TERNARY_SITE], 4.0 * h)?;
    c.set_duration(4.0 * h)?;
    c.set_predicted_residual(None);
    check_equispaced(&shift_instants(&c))?;
    insert_decoupling(&mut c, &[FIRST_CONTROL_SITE, TARGET_SITE], DECOUPLING_MIN_WINDOW)?;
    Ok(c)
}

/// Protected Toffoli: the CCZ schedule with Hadamards on the target.
pub fn build_toffoli(min_spacing: f64) -> Result<TimedCircuit> {
    let h = resolved_spacing(min_spacing)?;
    let mut c = ccz_schedule(
        h,
        CczParts { entanglers: true, interior: true, rz_mid: 0.0, rz_end: 0.0 },
    )?;
    c.push(Gate::Hadamard, &[TARGET_SITE], 0.0)?;
    c.push(Gate::Hadamard, &[TARGET_SITE], 5.0 * h)?;
    insert_decoupling(&mut c, &[FIRST_CONTROL_SITE, TARGET_SITE], DECOUPLING_MIN_WINDOW)?;
    Ok(c)
}

/// The six identity probes, in the order they are reported: packed shifts,
/// then the three schedule subsets at the protected shift timings, then the
/// two duration-matched stability probes.
///
/// - `packed_shifts`: six contiguous raises, one tick apart.
/// - `shifts_only`: the protected schedule with both entangler kinds
///   replaced by decoupling.
/// - `no_entanglers`: keeps the controlled-Z interior, drops the two
///   controlled X pulses.
/// - `no_interior`: keeps the two controlled X pulses, drops the interior;
///   the pair composes to identity.
/// - `three_shifts`: three raises spread over the protected duration.
/// - `shift_echo`: one raise and one lower spread over the same duration;
///   the pair is not protected against detuning.
pub fn build_identity_probes(min_spacing: f64) -> Result<Vec<(String, TimedCircuit)>> {
    let h = resolved_spacing(min_spacing)?;
    let mut probes = Vec::new();

    let mut packed = TimedCircuit::new(ternary_register());
    for j in 0..6 {
        packed.push(Gate::CyclicShift { raise: true }, &[TERNARY_SITE], j as f64)?;
    }
    packed.set_duration(5.0)?;
    packed.set_predicted_residual(Some(crate::circuit::ResidualPrediction {
        site: TERNARY_SITE,
        level: 2,
        coeff: -6.0,
    }));
    probes.push(("packed_shifts".to_string(), packed));

    let subsets = [
        ("shifts_only", false, false),
        ("no_entanglers", false, true),
        ("no_interior", true, false),
    ];
    for (name, entanglers, interior) in subsets {
        let c = ccz_schedule(
            h,
            CczParts { entanglers, interior, rz_mid: 0.0, rz_end: 0.0 },
        )?;
        probes.push((name.to_string(), c));
    }

    let mut three = TimedCircuit::new(ternary_register());
    for j in 0..3 {
        three.push(Gate::CyclicShift { raise: true }, &[TERNARY_SITE], 2.5 * h * j as f64)?;
    }
    three.set_duration(5.0 * h)?;
    three.set_predicted_residual(Some(crate::circuit::ResidualPrediction {
        site: TERNARY_SITE,
        level: 2,
        coeff: -7.5 * h,
    }));
    probes.push(("three_shifts".to_string(), three));

    let mut echo = TimedCircuit::new(ternary_register());
    echo.push(Gate::CyclicShift { raise: true }, &[TERNARY_SITE], 0.0)?;
    echo.push(Gate::CyclicShift { raise: false }, &[TERNARY_SITE], 2.5 * h)?;
    echo.set_duration(5.0 * h)?;
    echo.set_predicted_residual(None);
    probes.push(("shift_echo".to_string(), echo));

    for (_, c) in probes.iter_mut() {
        check_equispaced(&shift_instants(c))?;
        insert_decoupling(c, &[FIRST_CONTROL_SITE, TARGET_SITE], DECOUPLING_MIN_WINDOW)?;
    }
    Ok(probes)
}

fn push_t(c: &mut TimedCircuit, site: usize, turns: f64, start: f64) -> Result<()> {
    c.push(Gate::LevelPhase { level: 1, phase: turns * FRAC_PI_4 }, &[site], start)
}

/// Qubit-only Toffoli on a three-site chain: eight nearest-neighbor CX
/// pulses interleaved with T rotations, target conjugated by Hadamards. The
/// construction is checked against the dense Toffoli at build time.
pub fn build_qubit_toffoli_reference() -> Result<TimedCircuit> {
    let shape = SystemShape::new(vec![2, 2, 2])?;
    let mut c = TimedCircuit::new(shape);
    c.push(Gate::Hadamard, &[2], 0.0)?;
    push_t(&mut c, 0, 1.0, 1.0)?;
    push_t(&mut c, 1, 1.0, 1.0)?;
    push_t(&mut c, 2, 1.0, 1.0)?;
    let steps: [(usize, usize, Option<(usize, f64)>); 8] = [
        (1, 2, Some((2, -1.0))),
        (0, 1, Some((1, -1.0))),
        (1, 2, Some((2, -1.0))),
        (0, 1, None),
        (1, 2, Some((2, 1.0))),
        (0, 1, None),
        (1, 2, None),
        (0, 1, None),
    ];
    let mut t = 2.0;
    for (control, target, phase) in steps {
        c.push(Gate::ControlledX, &[control, target], t)?;
        if let Some((site, turns)) = phase {
            push_t(&mut c, site, turns, t)?;
        }
        t += 1.0;
    }
    c.push(Gate::Hadamard, &[2], t)?;
    c.set_duration(t)?;

    let dense = c.unitary(0.0)?;
    let ideal = gates::toffoli_qubits();
    let dist = op::distance_up_to_global_phase(&dense, &ideal)?;
    if dist > 1e-10 {
        return Err(Error::MatrixCheck(format!(
            "eight-CX reference is {dist:.3e} away from the Toffoli"
        )));
    }
    Ok(c)
}

/// Sum of the notional gate durations in a circuit.
pub fn total_gate_weight(c: &TimedCircuit) -> f64 {
    c.gates().iter().map(|tg| crate::noise::gate_weight(&tg.gate)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op::distance_up_to_global_phase;

    const DELTAS: [f64; 6] = [-0.3, -0.17, -0.02, 0.01, 0.12, 0.3];

    fn subspace_distance(c: &TimedCircuit, delta: f64, ideal: &Operator) -> f64 {
        let u = c.unitary(delta).unwrap();
        distance_up_to_global_phase(&qubit_subspace(&u).unwrap(), ideal).unwrap()
    }

    #[test]
    fn protected_ccz_matches_the_phase_gate_and_ignores_detuning() {
        let c = build_ccz(4.0).unwrap();
        let ideal = gates::ccz_qubits();
        assert!(subspace_distance(&c, 0.0, &ideal) < 1e-9);
        for delta in DELTAS {
            assert!(subspace_distance(&c, delta, &ideal) < 1e-8);
        }
    }

    #[test]
    fn predicted_residual_accounts_for_the_full_detuned_unitary() {
        let c = build_ccz(4.0).unwrap();
        let base = c.unitary(0.0).unwrap();
        for delta in DELTAS {
            let u = c.unitary(delta).unwrap();
            let stripped = c.residual_operator(delta).unwrap().dagger().compose(&u).unwrap();
            assert!(distance_up_to_global_phase(&stripped, &base).unwrap() < 1e-8);
        }
        let response = c.detuning_response(TERNARY_SITE).unwrap();
        assert!(response[0].abs() < 1e-6);
        assert!(response[1].abs() < 1e-6);
        assert!((response[2] - (-24.0)).abs() < 1e-6);
    }

    #[test]
    fn unprotected_variant_is_correct_at_zero_detuning_but_drifts() {
        let c = build_ccz_unprotected(4.0).unwrap();
        let ideal = gates::ccz_qubits();
        assert!(subspace_distance(&c, 0.0, &ideal) < 1e-9);
        let mut worst = 0.0f64;
        for delta in DELTAS {
            if delta.abs() * c.duration() > 0.1 {
                worst = worst.max(subspace_distance(&c, delta, &ideal));
            }
        }
        assert!(worst > 1e-2);
    }

    #[test]
    fn toffoli_is_the_hadamard_conjugated_ccz() {
        let c = build_toffoli(4.0).unwrap();
        let ideal = gates::toffoli_qubits();
        assert!(subspace_distance(&c, 0.0, &ideal) < 1e-9);
        for delta in DELTAS {
            assert!(subspace_distance(&c, delta, &ideal) < 1e-8);
        }
        let u = qubit_subspace(&c.unitary(0.0).unwrap()).unwrap();
        let m = u.matrix();
        assert!((m[(7, 6)].norm() - 1.0).abs() < 1e-9);
        assert!((m[(6, 7)].norm() - 1.0).abs() < 1e-9);
        assert!((m[(0, 0)].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn every_probe_is_an_identity_on_the_qubit_subspace() {
        let shape = SystemShape::new(vec![2, 2, 2]).unwrap();
        let ideal = Operator::identity(shape);
        for (name, c) in build_identity_probes(4.0).unwrap() {
            let d = subspace_distance(&c, 0.0, &ideal);
            assert!(d < 1e-9, "{name} is {d:.3e} from identity");
        }
    }

    #[test]
    fn stability_probes_split_by_detuning_sensitivity() {
        let probes = build_identity_probes(4.0).unwrap();
        let shape = SystemShape::new(vec![2, 2, 2]).unwrap();
        let ideal = Operator::identity(shape);
        let three = &probes.iter().find(|(n, _)| n == "three_shifts").unwrap().1;
        let echo = &probes.iter().find(|(n, _)| n == "shift_echo").unwrap().1;
        let mut echo_range = 0.0f64;
        for delta in DELTAS {
            assert!(subspace_distance(three, delta, &ideal) < 1e-6);
            echo_range = echo_range.max(subspace_distance(echo, delta, &ideal));
        }
        assert!(echo_range > 0.1);
    }

    #[test]
    fn probe_ladder_orders_by_exposure() {
        let probes = build_identity_probes(4.0).unwrap();
        let get = |name: &str| &probes.iter().find(|(n, _)| n == name).unwrap().1;
        let ccz = build_ccz(4.0).unwrap();
        let ladder =
            [get("packed_shifts"), get("shifts_only"), get("no_entanglers"), get("no_interior")];
        let mut prev = total_gate_weight(ladder[0]);
        for c in &ladder[1..] {
            let w = total_gate_weight(c);
            assert!(w >= prev);
            prev = w;
        }
        assert!(total_gate_weight(&ccz) >= prev);
        assert!(get("packed_shifts").duration() < get("shifts_only").duration());
        for c in &ladder[1..] {
            assert_eq!(c.duration(), ccz.duration());
        }
    }

    #[test]
    fn decoupling_pairs_do_not_change_the_unitary() {
        let h = resolved_spacing(4.0).unwrap();
        let bare = ccz_schedule(
            h,
            CczParts { entanglers: true, interior: true, rz_mid: 0.3, rz_end: -0.2 },
        )
        .unwrap();
        let mut decoupled = bare.clone();
        let n = insert_decoupling(
            &mut decoupled,
            &[FIRST_CONTROL_SITE, TARGET_SITE],
            DECOUPLING_MIN_WINDOW,
        )
        .unwrap();
        assert!(n >= 8);
        assert_eq!(n % 2, 0);
        for delta in [0.0, 0.23] {
            let a = bare.unitary(delta).unwrap();
            let b = decoupled.unitary(delta).unwrap();
            assert!(crate::linalg::max_abs_diff(a.matrix(), b.matrix()) < 1e-12);
        }
    }

    #[test]
    fn eight_cx_reference_has_the_right_shape_and_truth_table() {
        let c = build_qubit_toffoli_reference().unwrap();
        let cx: Vec<&crate::circuit::TimedGate> =
            c.gates().iter().filter(|tg| matches!(tg.gate, Gate::ControlledX)).collect();
        assert_eq!(cx.len(), 8);
        for tg in &cx {
            let (a, b) = (tg.sites[0], tg.sites[1]);
            assert_eq!(a.abs_diff(b), 1, "CX on non-adjacent sites {a},{b}");
        }
        let u = c.unitary(0.0).unwrap();
        let m = u.matrix();
        for input in 0..8usize {
            let expect = if input & 0b110 == 0b110 { input ^ 1 } else { input };
            assert!((m[(expect, input)].norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn label_mapping_reorders_bits() {
        assert_eq!(outcome_to_label(0b100), 0b010);
        assert_eq!(outcome_to_label(0b010), 0b001);
        assert_eq!(outcome_to_label(0b001), 0b100);
        assert_eq!(outcome_to_label(0b111), 0b111);
        let mut seen = vec![false; 8];
        for o in 0..8 {
            seen[outcome_to_label(o)] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(label_string(0b101), "101");
    }

    #[test]
    fn spacing_resolves_to_the_grid() {
        assert_eq!(resolved_spacing(0.0).unwrap(), 4.0);
        assert_eq!(resolved_spacing(4.0).unwrap(), 4.0);
        assert_eq!(resolved_spacing(4.1).unwrap(), 8.0);
        assert_eq!(resolved_spacing(13.0).unwrap(), 16.0);
        assert!(resolved_spacing(f64::NAN).is_err());
    }
}
