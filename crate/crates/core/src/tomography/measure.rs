//! Preparation and measurement simulation for qubit registers: Born
//! probabilities per (preparation, basis) setting, readout confusion and its
//! inverse, seeded multinomial shot sampling, and Pauli expectation tables.
//!
//! Bitstrings and tensor factors put the leftmost qubit in the most
//! significant position throughout.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tomography::superop::Superoperator;
use crate::C64;

/// Single-qubit preparation choices; the informationally complete set used
/// for process tomography.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrepState {
    ZPlus,
    ZMinus,
    XPlus,
    YPlus,
}

impl PrepState {
    pub const ALL: [PrepState; 4] = [
        PrepState::ZPlus,
        PrepState::ZMinus,
        PrepState::XPlus,
        PrepState::YPlus,
    ];

    /// Single-qubit density matrix of the prepared state.
    pub fn density(self) -> Array2<C64> {
        let mut rho = Array2::<C64>::zeros((2, 2));
        match self {
            PrepState::ZPlus => rho[(0, 0)] = C64::new(1.0, 0.0),
            PrepState::ZMinus => rho[(1, 1)] = C64::new(1.0, 0.0),
            PrepState::XPlus => {
                for i in 0..2 {
                    for j in 0..2 {
                        rho[(i, j)] = C64::new(0.5, 0.0);
                    }
                }
            }
            PrepState::YPlus => {
                rho[(0, 0)] = C64::new(0.5, 0.0);
                rho[(1, 1)] = C64::new(0.5, 0.0);
                rho[(0, 1)] = C64::new(0.0, -0.5);
                rho[(1, 0)] = C64::new(0.0, 0.5);
            }
        }
        rho
    }
}

/// Measurement basis for one qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    /// Base-4 Pauli digit measured by this basis.
    pub fn pauli_digit(self) -> usize {
        match self {
            Basis::X => 1,
            Basis::Y => 2,
            Basis::Z => 3,
        }
    }

    /// Rotation mapping this basis onto the computational axis, so outcome
    /// bit 0 corresponds to eigenvalue +1.
    pub fn to_z_rotation(self) -> Array2<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut u = Array2::<C64>::zeros((2, 2));
        match self {
            Basis::X => {
                u[(0, 0)] = C64::new(s, 0.0);
                u[(0, 1)] = C64::new(s, 0.0);
                u[(1, 0)] = C64::new(s, 0.0);
                u[(1, 1)] = C64::new(-s, 0.0);
            }
            Basis::Y => {
                u[(0, 0)] = C64::new(s, 0.0);
                u[(0, 1)] = C64::new(0.0, -s);
                u[(1, 0)] = C64::new(s, 0.0);
                u[(1, 1)] = C64::new(0.0, s);
            }
            Basis::Z => {
                u[(0, 0)] = C64::new(1.0, 0.0);
                u[(1, 1)] = C64::new(1.0, 0.0);
            }
        }
        u
    }
}

/// One prepared-and-measured circuit: a preparation and a measurement basis
/// per qubit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub preps: Vec<PrepState>,
    pub bases: Vec<Basis>,
}

impl Setting {
    pub fn new(preps: Vec<PrepState>, bases: Vec<Basis>) -> Result<Self> {
        if preps.is_empty() || preps.len() != bases.len() {
            return Err(Error::InvalidInput(format!(
                "setting has {} preparations but {} bases",
                preps.len(),
                bases.len()
            )));
        }
        Ok(Setting { preps, bases })
    }

    pub fn n_qubits(&self) -> usize {
        self.preps.len()
    }
}

/// A batch of settings with a shot budget; `shots = 0` requests exact Born
/// probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub settings: Vec<Setting>,
    pub shots: u64,
    pub seed: u64,
}

impl MeasurementPlan {
    pub fn new(settings: Vec<Setting>, shots: u64, seed: u64) -> Result<Self> {
        let first = settings
            .first()
            .ok_or_else(|| Error::InvalidInput("plan has no settings".into()))?;
        let n = first.n_qubits();
        if settings.iter().any(|s| s.n_qubits() != n) {
            return Err(Error::InvalidInput("settings disagree on qubit count".into()));
        }
        Ok(MeasurementPlan { settings, shots, seed })
    }

    /// The full informationally complete grid: every preparation combination
    /// times every basis combination, preparations outermost, leftmost qubit
    /// as the most significant digit.
    pub fn full_qpt(n_qubits: usize, shots: u64, seed: u64) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidInput("need at least one qubit".into()));
        }
        let n_prep = 4usize.pow(n_qubits as u32);
        let n_basis = 3usize.pow(n_qubits as u32);
        let mut settings = Vec::with_capacity(n_prep * n_basis);
        for p in 0..n_prep {
            for b in 0..n_basis {
                settings.push(Setting {
                    preps: digits(p, 4, n_qubits).iter().map(|d| PrepState::ALL[*d]).collect(),
                    bases: digits(b, 3, n_qubits).iter().map(|d| Basis::ALL[*d]).collect(),
                });
            }
        }
        MeasurementPlan::new(settings, shots, seed)
    }
}

/// Base-`radix` digits of `value`, most significant first.
pub(crate) fn digits(value: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0usize; len];
    let mut v = value;
    for slot in out.iter_mut().rev() {
        *slot = v % radix;
        v /= radix;
    }
    out
}

/// Anything that can report outcome probabilities for a prepared and
/// basis-rotated circuit over `2^n` bitstrings.
pub trait MeasurableChannel {
    fn n_qubits(&self) -> usize;
    fn outcome_probabilities(&self, setting: &Setting) -> Result<Vec<f64>>;
}

impl MeasurableChannel for Superoperator {
    fn n_qubits(&self) -> usize {
        let mut n = 0usize;
        while 1usize << n < self.dim() {
            n += 1;
        }
        n
    }

    fn outcome_probabilities(&self, setting: &Setting) -> Result<Vec<f64>> {
        let n = setting.n_qubits();
        if 1usize << n != self.dim() {
            return Err(Error::InvalidInput(format!(
                "setting has {n} qubits but the channel dimension is {}",
                self.dim()
            )));
        }
        let mut rho = Array2::<C64>::eye(1);
        for prep in &setting.preps {
            rho = ndarray::linalg::kron(&rho, &prep.density());
        }
        let out = self.apply(&rho)?;
        let mut rot = Array2::<C64>::eye(1);
        for basis in &setting.bases {
            rot = ndarray::linalg::kron(&rot, &basis.to_z_rotation());
        }
        let rotated = rot.dot(&out).dot(&linalg::dagger(&rot));
        Ok((0..1usize << n).map(|i| rotated[(i, i)].re).collect())
    }
}

/// Per-qubit readout assignment error; entry `[t][a]` is the probability of
/// assigning outcome `a` when the true state is `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    rates: Vec<[[f64; 2]; 2]>,
}

impl ConfusionMatrix {
    pub fn new(rates: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidInput("confusion matrix needs at least one qubit".into()));
        }
        for (q, m) in rates.iter().enumerate() {
            for row in m {
                if row.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
                    return Err(Error::InvalidInput(format!(
                        "qubit {q} assignment probabilities must lie in [0,1]"
                    )));
                }
                if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "qubit {q} assignment rows must sum to 1"
                    )));
                }
            }
        }
        Ok(ConfusionMatrix { rates })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        ConfusionMatrix::new(vec![[[1.0, 0.0], [0.0, 1.0]]; n_qubits])
    }

    /// Equal flip probability in both directions on every qubit.
    pub fn symmetric(n_qubits: usize, flip: f64) -> Result<Self> {
        ConfusionMatrix::new(vec![[[1.0 - flip, flip], [flip, 1.0 - flip]]; n_qubits])
    }

    pub fn n_qubits(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[[[f64; 2]; 2]] {
        &self.rates
    }

    /// Pushes true-state probabilities through the assignment noise.
    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        self.transform(probs, |m| Ok(*m))
    }

    /// Applies the per-qubit inverse assignment matrices; the result may
    /// contain quasi-probabilities outside `[0, 1]`.
    pub fn mitigate(&self, probs: &[f64]) -> Result<Vec<f64>> {
        self.transform(probs, |m| {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-12 {
                return Err(Error::IllPosed(
                    "confusion matrix is singular; readout cannot be mitigated".into(),
                ));
            }
            Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
        })
    }

    fn transform(
        &self,
        probs: &[f64],
        prepare: impl Fn(&[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]>,
    ) -> Result<Vec<f64>> {
        let n = self.rates.len();
        if probs.len() != 1usize << n {
            return Err(Error::InvalidInput(format!(
                "got {} outcome probabilities for {n} qubits",
                probs.len()
            )));
        }
        let mut p = probs.to_vec();
        for (q, m) in self.rates.iter().enumerate() {
            let m = prepare(m)?;
            let stride = 1usize << (n - 1 - q);
            let mut next = vec![0.0f64; p.len()];
            for (i, v) in p.iter().enumerate() {
                let t = (i / stride) % 2;
                let base = i - t * stride;
                next[base] += v * m[t][0];
                next[base + stride] += v * m[t][1];
            }
            p = next;
        }
        Ok(p)
    }
}

/// Observed (or exact) outcome distribution for one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingRecord {
    pub setting: Setting,
    /// Outcome relative frequencies over bitstrings; quasi-probabilities
    /// after mitigation.
    pub probabilities: Vec<f64>,
    /// Shots behind this record; 0 means exact values.
    pub shots: u64,
}

/// Results of a measurement plan, one record per setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationTable {
    n_qubits: usize,
    records: Vec<SettingRecord>,
}

impl ExpectationTable {
    pub fn new(n_qubits: usize, records: Vec<SettingRecord>) -> Result<Self> {
        for r in &records {
            if r.setting.n_qubits() != n_qubits || r.probabilities.len() != 1usize << n_qubits {
                return Err(Error::InvalidInput("record shape mismatch".into()));
            }
        }
        Ok(ExpectationTable { n_qubits, records })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn records(&self) -> &[SettingRecord] {
        &self.records
    }

    /// Pauli expectation for a fixed preparation, averaged over every
    /// recorded basis setting that measures the requested letters; `letters`
    /// uses base-4 digits (0 = identity). Returns the value and a shot-noise
    /// standard error (0 for exact records).
    pub fn expectation(&self, preps: &[PrepState], letters: &[usize]) -> Result<(f64, f64)> {
        if preps.len() != self.n_qubits || letters.len() != self.n_qubits {
            return Err(Error::InvalidInput("prep or letter count mismatch".into()));
        }
        if letters.iter().any(|l| *l > 3) {
            return Err(Error::InvalidInput("Pauli letters are base-4 digits".into()));
        }
        let mut total = 0.0f64;
        let mut var = 0.0f64;
        let mut hits = 0usize;
        for record in &self.records {
            if record.setting.preps != preps {
                continue;
            }
            let consistent = record
                .setting
                .bases
                .iter()
                .zip(letters.iter())
                .all(|(b, l)| *l == 0 || b.pauli_digit() == *l);
            if !consistent {
                continue;
            }
            let mut v = 0.0f64;
            for (outcome, p) in record.probabilities.iter().enumerate() {
                v += sign_for(outcome, letters, self.n_qubits) * p;
            }
            total += v;
            if record.shots > 0 {
                var += (1.0 - v * v).max(0.0) / record.shots as f64;
            }
            hits += 1;
        }
        if hits == 0 {
            return Err(Error::InvalidInput(
                "no recorded setting measures the requested expectation".into(),
            ));
        }
        Ok((total / hits as f64, var.sqrt() / hits as f64))
    }
}

fn sign_for(outcome: usize, letters: &[usize], n: usize) -> f64 {
    let mut s = 1.0f64;
    for (q, l) in letters.iter().enumerate() {
        if *l == 0 {
            continue;
        }
        if (outcome >> (n - 1 - q)) & 1 == 1 {
            s = -s;
        }
    }
    s
}

/// Runs a measurement plan against a channel: Born probabilities, optional
/// readout confusion, then seeded multinomial sampling (skipped in exact
/// mode). Each setting uses an independent stream of the root seed.
pub fn sample_expectations<Ch: MeasurableChannel + ?Sized>(
    channel: &Ch,
    plan: &MeasurementPlan,
    confusion: Option<&ConfusionMatrix>,
) -> Result<ExpectationTable> {
    let n = channel.n_qubits();
    if let Some(c) = confusion {
        if c.n_qubits() != n {
            return Err(Error::InvalidInput(format!(
                "confusion matrix covers {} qubits, channel has {n}",
                c.n_qubits()
            )));
        }
    }
    let mut records = Vec::with_capacity(plan.settings.len());
    for (index, setting) in plan.settings.iter().enumerate() {
        if setting.n_qubits() != n {
            return Err(Error::InvalidInput(format!(
                "setting {index} has {} qubits, channel has {n}",
                setting.n_qubits()
            )));
        }
        let mut p = channel.outcome_probabilities(setting)?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < -1e-9) {
            return Err(Error::MatrixCheck(format!(
                "setting {index} produced an invalid distribution (sum {sum:.6})"
            )));
        }
        for v in p.iter_mut() {
            *v = v.max(0.0);
        }
        if let Some(c) = confusion {
            p = c.apply(&p)?;
        }
        let probabilities = if plan.shots == 0 {
            p
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(index as u64 + 1);
            let counts = multinomial(&p, plan.shots, &mut rng);
            counts.iter().map(|c| *c as f64 / plan.shots as f64).collect()
        };
        records.push(SettingRecord { setting: setting.clone(), probabilities, shots: plan.shots });
    }
    ExpectationTable::new(n, records)
}

fn multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let total: f64 = probs.iter().sum();
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..shots {
        let mut u = rng.gen_range(0.0..total);
        let mut picked = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                picked = i;
                break;
            }
            u -= p;
        }
        counts[picked] += 1;
    }
    counts
}

/// Applies inverse readout confusion to every record of a table.
pub fn mitigate_readout(
    table: &ExpectationTable,
    confusion: &ConfusionMatrix,
) -> Result<ExpectationTable> {
    if confusion.n_qubits() != table.n_qubits() {
        return Err(Error::InvalidInput(format!(
            "confusion matrix covers {} qubits, table has {}",
            confusion.n_qubits(),
            table.n_qubits()
        )));
    }
    let records = table
        .records()
        .iter()
        .map(|r| {
            Ok(SettingRecord {
                setting: r.setting.clone(),
                probabilities: confusion.mitigate(&r.probabilities)?,
                shots: r.shots,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExpectationTable::new(table.n_qubits(), records)
}

/// Diagonal survival probabilities of a channel over computational inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub survival: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Mean survival probability.
    pub fidelity: f64,
    pub fidelity_sigma: f64,
}

/// Prepares each computational basis state, measures in the computational
/// basis, and reports the survival probabilities and their mean.
pub fn truth_table<Ch: MeasurableChannel + ?Sized>(
    channel: &Ch,
    shots: u64,
    seed: u64,
    confusion: Option<&ConfusionMatrix>,
    mitigate: bool,
) -> Result<TruthTable> {
    let n = channel.n_qubits();
    let settings = (0..1usize << n)
        .map(|j| Setting {
            preps: (0..n)
                .map(|q| {
                    if (j >> (n - 1 - q)) & 1 == 1 {
                        PrepState::ZMinus
                    } else {
                        PrepState::ZPlus
                    }
                })
                .collect(),
            bases: vec![Basis::Z; n],
        })
        .collect();
    let plan = MeasurementPlan::new(settings, shots, seed)?;
    let mut table = sample_expectations(channel, &plan, confusion)?;
    if mitigate {
        if let Some(c) = confusion {
            table = mitigate_readout(&table, c)?;
        }
    }
    let mut survival = Vec::with_capacity(1usize << n);
    let mut sigma = Vec::with_capacity(1usize << n);
    for (j, record) in table.records().iter().enumerate() {
        let p = record.probabilities[j];
        survival.push(p);
        sigma.push(if shots > 0 {
            (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / shots as f64).sqrt()
        } else {
            0.0
        });
    }
    let count = survival.len() as f64;
    let fidelity = survival.iter().sum::<f64>() / count;
    let fidelity_sigma = sigma.iter().map(|s| s * s).sum::<f64>().sqrt() / count;
    Ok(TruthTable { survival, sigma, fidelity, fidelity_sigma })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::gates;
    use crate::tomography::superop::Superoperator;

    fn identity_channel(n: usize) -> Superoperator {
        Superoperator::identity(1 << n).unwrap()
    }

    #[test]
    fn z_preparation_measured_in_z_gives_one() {
        let channel = identity_channel(1);
        let plan = MeasurementPlan::new(
            vec![Setting::new(vec![PrepState::ZPlus], vec![Basis::Z]).unwrap()],
            0,
            0,
        )
        .unwrap();
        let table = sample_expectations(&channel, &plan, None).unwrap();
        let (v, s) = table.expectation(&[PrepState::ZPlus], &[3]).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn all_prep_basis_pairs_match_bloch_components() {
        let channel = identity_channel(1);
        let plan = MeasurementPlan::full_qpt(1, 0, 0).unwrap();
        let table = sample_expectations(&channel, &plan, None).unwrap();
        let expect = [
            (PrepState::ZPlus, [0.0, 0.0, 1.0]),
            (PrepState::ZMinus, [0.0, 0.0, -1.0]),
            (PrepState::XPlus, [1.0, 0.0, 0.0]),
            (PrepState::YPlus, [0.0, 1.0, 0.0]),
        ];
        for (prep, bloch) in expect {
            for (i, want) in bloch.iter().enumerate() {
                let (v, _) = table.expectation(&[prep], &[i + 1]).unwrap();
                assert_abs_diff_eq!(v, *want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ccz_flips_the_probe_correlator_only_beside_one_one() {
        let channel = Superoperator::from_unitary(gates::ccz_qubits().matrix()).unwrap();
        let probe = |spec1: PrepState, spec2: PrepState| {
            let setting = Setting::new(
                vec![PrepState::XPlus, spec1, spec2],
                vec![Basis::X, Basis::Z, Basis::Z],
            )
            .unwrap();
            let plan = MeasurementPlan::new(vec![setting], 0, 0).unwrap();
            let table = sample_expectations(&channel, &plan, None).unwrap();
            table.expectation(&[PrepState::XPlus, spec1, spec2], &[1, 0, 0]).unwrap().0
        };
        assert_abs_diff_eq!(probe(PrepState::ZMinus, PrepState::ZMinus), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probe(PrepState::ZPlus, PrepState::ZMinus), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probe(PrepState::ZMinus, PrepState::ZPlus), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_flip_contracts_each_measured_qubit() {
        let channel = identity_channel(2);
        let confusion = ConfusionMatrix::symmetric(2, 0.02).unwrap();
        let setting =
            Setting::new(vec![PrepState::XPlus, PrepState::XPlus], vec![Basis::X, Basis::X])
                .unwrap();
        let plan = MeasurementPlan::new(vec![setting], 0, 0).unwrap();
        let table = sample_expectations(&channel, &plan, Some(&confusion)).unwrap();
        let preps = [PrepState::XPlus, PrepState::XPlus];
        let (xx, _) = table.expectation(&preps, &[1, 1]).unwrap();
        let (xi, _) = table.expectation(&preps, &[1, 0]).unwrap();
        assert_abs_diff_eq!(xx, 0.96 * 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(xi, 0.96, epsilon = 1e-12);
    }

    #[test]
    fn mitigation_inverts_planted_confusion_exactly() {
        let channel = Superoperator::from_unitary(gates::cx_qubits().matrix()).unwrap();
        let confusion = ConfusionMatrix::new(vec![
            [[0.97, 0.03], [0.05, 0.95]],
            [[0.99, 0.01], [0.08, 0.92]],
        ])
        .unwrap();
        let plan = MeasurementPlan::full_qpt(2, 0, 0).unwrap();
        let clean = sample_expectations(&channel, &plan, None).unwrap();
        let noisy = sample_expectations(&channel, &plan, Some(&confusion)).unwrap();
        let fixed = mitigate_readout(&noisy, &confusion).unwrap();
        for (a, b) in clean.records().iter().zip(fixed.records().iter()) {
            for (x, y) in a.probabilities.iter().zip(b.probabilities.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
        let id = ConfusionMatrix::identity(2).unwrap();
        let same = mitigate_readout(&clean, &id).unwrap();
        assert_eq!(same, clean);
    }

    #[test]
    fn sampling_is_seed_deterministic_with_independent_streams() {
        let channel = identity_channel(1);
        let setting = Setting::new(vec![PrepState::XPlus], vec![Basis::Z]).unwrap();
        let plan =
            MeasurementPlan::new(vec![setting.clone(), setting.clone()], 400, 9).unwrap();
        let a = sample_expectations(&channel, &plan, None).unwrap();
        let b = sample_expectations(&channel, &plan, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records()[0].probabilities, a.records()[1].probabilities);
        let other = MeasurementPlan::new(vec![setting.clone(), setting], 400, 10).unwrap();
        let c = sample_expectations(&channel, &other, None).unwrap();
        assert_ne!(a.records()[0].probabilities, c.records()[0].probabilities);
    }

    #[test]
    fn mitigated_sampling_is_unbiased() {
        let channel = identity_channel(1);
        let confusion = ConfusionMatrix::new(vec![[[0.96, 0.04], [0.07, 0.93]]]).unwrap();
        let setting = Setting::new(vec![PrepState::XPlus], vec![Basis::X]).unwrap();
        let mut estimates = Vec::new();
        for rep in 0..200 {
            let plan = MeasurementPlan::new(vec![setting.clone()], 2000, rep).unwrap();
            let table = sample_expectations(&channel, &plan, Some(&confusion)).unwrap();
            let fixed = mitigate_readout(&table, &confusion).unwrap();
            estimates.push(fixed.expectation(&[PrepState::XPlus], &[1]).unwrap().0);
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let var = estimates.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (estimates.len() - 1) as f64;
        let sem = (var / estimates.len() as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * sem.max(1e-6),
            "mitigated mean {mean} deviates from 1 beyond 3 standard errors {sem}"
        );
    }

    #[test]
    fn truth_table_of_diagonal_and_depolarized_channels() {
        let ccz = Superoperator::from_unitary(gates::ccz_qubits().matrix()).unwrap();
        let exact = truth_table(&ccz, 0, 0, None, false).unwrap();
        for p in &exact.survival {
            assert_abs_diff_eq!(*p, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(exact.fidelity, 1.0, epsilon = 1e-12);

        let dep = Superoperator::depolarizing(8, 1.0).unwrap();
        let mixed = truth_table(&dep, 0, 0, None, false).unwrap();
        for p in &mixed.survival {
            assert_abs_diff_eq!(*p, 1.0 / 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn validation_rejects_inconsistent_inputs() {
        assert!(Setting::new(vec![PrepState::ZPlus], vec![]).is_err());
        assert!(MeasurementPlan::new(vec![], 0, 0).is_err());
        assert!(ConfusionMatrix::new(vec![[[0.9, 0.2], [0.0, 1.0]]]).is_err());
        assert!(ConfusionMatrix::symmetric(1, 0.5).unwrap().mitigate(&[0.5, 0.5]).is_err());
        let channel = identity_channel(2);
        let plan = MeasurementPlan::full_qpt(1, 0, 0).unwrap();
        assert!(sample_expectations(&channel, &plan, None).is_err());
        let table = sample_expectations(
            &identity_channel(1),
            &MeasurementPlan::full_qpt(1, 0, 0).unwrap(),
            None,
        )
        .unwrap();
        assert!(table.expectation(&[PrepState::ZPlus], &[4]).is_err());
        assert!(table
            .expectation(&[PrepState::ZPlus, PrepState::ZPlus], &[1, 1])
            .is_err());
    }
}
