//! End-to-end assembly: the ternary CCZ and Toffoli circuits, the identity
//! probe family, phase-correction and noise calibration, and the stability
//! and error-analysis experiment drivers with their CSV and SVG outputs.

pub mod build;
pub mod calibrate;
pub mod run;

pub use build::{
    build_ccz, build_ccz_corrected, build_ccz_unprotected, build_identity_probes,
    build_qubit_toffoli_reference, build_toffoli, insert_decoupling, outcome_to_label,
    qubit_subspace, resolved_spacing, ternary_register,
};
pub use calibrate::{
    calibrate_decoherence_scale, calibrate_rz_corrections, measured_process_fidelity,
    ramsey_offset,
};
pub use run::{
    records_to_csv, run_error_analysis, run_stability_experiment, ExperimentConfig,
    ExperimentRecord, NoiseConfig, RunOutput,
};
