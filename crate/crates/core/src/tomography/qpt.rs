//! Process tomography: rebuilding a channel's transfer matrix from an
//! informationally complete expectation table, then projecting the estimate
//! onto the physical (completely positive, trace preserving) set.

use std::collections::HashSet;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tomography::measure::{digits, ExpectationTable, PrepState};
use crate::tomography::superop::{project_cptp, Superoperator, CPTP_MAX_ITER, CPTP_TOL};

/// Expansion of each Pauli letter over the preparation set
/// (Z+, Z-, X+, Y+); rows follow the base-4 letter order I, X, Y, Z.
const PREP_WEIGHTS: [[f64; 4]; 4] = [
    [1.0, 1.0, 0.0, 0.0],
    [-1.0, -1.0, 2.0, 0.0],
    [-1.0, -1.0, 0.0, 2.0],
    [1.0, -1.0, 0.0, 0.0],
];

/// Reconstructs the channel behind a complete tomography table. The Pauli
/// transfer matrix is assembled by expanding input Paulis over the prepared
/// states, and the linear-inversion estimate is projected onto the nearest
/// physical channel.
pub fn qpt_reconstruct(table: &ExpectationTable) -> Result<Superoperator> {
    let n = table.n_qubits();
    let dim = 1usize << n;
    let n_pauli = dim * dim;
    let n_prep = 4usize.pow(n as u32);
    let n_basis = 3usize.pow(n as u32);

    let mut seen = HashSet::new();
    for record in table.records() {
        let preps: Vec<usize> = record
            .setting
            .preps
            .iter()
            .map(|p| PrepState::ALL.iter().position(|q| q == p).unwrap())
            .collect();
        let bases: Vec<usize> =
            record.setting.bases.iter().map(|b| b.pauli_digit() - 1).collect();
        seen.insert((preps, bases));
    }
    for p in 0..n_prep {
        for b in 0..n_basis {
            if !seen.contains(&(digits(p, 4, n), digits(b, 3, n))) {
                return Err(Error::InvalidInput(format!(
                    "tomography table is missing preparation {p}, basis {b}"
                )));
            }
        }
    }

    let mut expectations = vec![vec![0.0f64; n_pauli]; n_prep];
    for (s, row) in expectations.iter_mut().enumerate() {
        let preps: Vec<PrepState> =
            digits(s, 4, n).iter().map(|d| PrepState::ALL[*d]).collect();
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = table.expectation(&preps, &digits(a, 4, n))?.0;
        }
    }

    let mut ptm = Array2::<f64>::zeros((n_pauli, n_pauli));
    for b in 0..n_pauli {
        let letters = digits(b, 4, n);
        for s in 0..n_prep {
            let prep_digits = digits(s, 4, n);
            let weight: f64 = letters
                .iter()
                .zip(prep_digits.iter())
                .map(|(l, p)| PREP_WEIGHTS[*l][*p])
                .product();
            if weight == 0.0 {
                continue;
            }
            for a in 0..n_pauli {
                ptm[(a, b)] += weight * expectations[s][a] / dim as f64;
            }
        }
    }

    let raw = Superoperator::from_ptm(&ptm)?;
    project_cptp(&raw, CPTP_TOL, CPTP_MAX_ITER)
}
