//! Measurement simulation and estimation: Pauli expectation sampling with
//! readout confusion, CPTP process reconstruction, fidelity and truth-table
//! diagnostics, and the phase fits used by the error analysis.

pub mod fits;
pub mod measure;
pub mod qpt;
pub mod superop;

pub use fits::{phi_least_squares, ramsey_phase_fit, PhasePair, PhiFit, RamseyFit, RamseyPoint};
pub use measure::{
    mitigate_readout, sample_expectations, truth_table, Basis, ConfusionMatrix, ExpectationTable,
    MeasurableChannel, MeasurementPlan, PrepState, Setting, SettingRecord, TruthTable,
};
pub use qpt::qpt_reconstruct;
pub use superop::{process_fidelity, process_fidelity_raw, project_cptp, Superoperator};
