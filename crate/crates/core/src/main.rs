//! Command line driver: algebraic verification suites, the shift-interval
//! scheduler, simulated cross-resonance calibration, tomography
//! reconstruction from saved tables, and the two end-to-end experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qudit_cycling::circuit::{CMat, Gate, TimedCircuit};
use qudit_cycling::cr::{
    backward_gencx, calibrate_cr, cr_unitary, forward_gencx, su2_expectations, unitary_so3_fit,
    CrParams, CrRateModel,
};
use qudit_cycling::cycling::{
    build_refocused_sequence, closed_form_cycle, compose_cycle, dd_decouple_check, ecr_compose,
    qubit_echo_refocus, refocus_intervals, verify_refocusing, CycleSpec, RefocusSign,
    TernaryUnitary,
};
use qudit_cycling::error::{Error, Result};
use qudit_cycling::experiments::{
    records_to_csv, run_error_analysis, run_stability_experiment, ExperimentConfig, RunOutput,
};
use qudit_cycling::gates;
use qudit_cycling::linalg;
use qudit_cycling::op::{self, DiagonalBlockOperator, Operator, SystemShape};
use qudit_cycling::tomography::{process_fidelity, qpt_reconstruct, ExpectationTable};
use qudit_cycling::C64;

#[derive(Parser)]
#[command(
    name = "qudit-cycling",
    version,
    about = "Simulate and verify basis-cycled qudit gates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shots per measurement setting; zero selects exact expectation values.
    #[arg(long, global = true)]
    shots: Option<u64>,
    /// Directory for emitted CSV and SVG files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Stdout rendering; errors follow the same choice on stderr.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write an SVG plot next to the CSV.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the algebraic identity suites; any failure exits nonzero.
    Verify,
    /// Solve the shift schedule for three level phase coefficients.
    Refocus {
        /// Comma-separated phase coefficients, e.g. 1,2,3.
        #[arg(long)]
        alpha: String,
        /// Smallest allowed interval between shifts, ticks.
        #[arg(long, default_value_t = 0.0)]
        min_spacing: f64,
    },
    /// Calibrate a seeded detuned cross-resonance model and report the
    /// recovered corrections.
    CalibrateCr {
        /// Control level whose X rotation the calibration keeps (0 or 2).
        #[arg(long, default_value_t = 0)]
        designated: usize,
    },
    /// Reconstruct a channel from a saved expectation table.
    Qpt {
        /// Expectation table JSON file.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Ideal gate to score the reconstruction against.
        #[arg(long, value_enum, default_value_t = QptTarget::Ccz)]
        target: QptTarget,
    },
    /// Repeated tomography of the protected gate under a detuning walk.
    Stability,
    /// Single-epoch populations, relative phases, and the identity-probe
    /// fidelity ladder.
    ErrorAnalysis,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QptTarget {
    Ccz,
    Toffoli,
    Identity,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_usage = e.use_stderr();
            let _ = e.print();
            return if is_usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let format = cli.format;
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match format {
                Format::Json => {
                    let doc = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
                    eprintln!("{doc}");
                }
                Format::Csv => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Verify => cmd_verify(cli.seed.unwrap_or(0), cli.format),
        Command::Refocus { alpha, min_spacing } => cmd_refocus(alpha, *min_spacing, cli.format),
        Command::CalibrateCr { designated } => {
            cmd_calibrate_cr(cli.seed.unwrap_or(0), *designated, cli.format)
        }
        Command::Qpt { input, target } => cmd_qpt(input, *target, cli.format),
        Command::Stability => {
            let config = load_config(&cli)?;
            let output = run_stability_experiment(&config, cli.out.as_deref(), cli.plot)?;
            emit_run(&output, cli.format)
        }
        Command::ErrorAnalysis => {
            let config = load_config(&cli)?;
            let output = run_error_analysis(&config, cli.out.as_deref(), cli.plot)?;
            emit_run(&output, cli.format)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(shots) = cli.shots {
        config.shots = shots;
    }
    config.validate()?;
    Ok(config)
}

fn emit_run(output: &RunOutput, format: Format) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(output)?),
        Format::Csv => print!("{}", records_to_csv(&output.records)),
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Prints a flat JSON document, or its top-level fields as key,value rows.
fn emit_document(doc: &serde_json::Value, format: Format) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(doc)?),
        Format::Csv => {
            println!("key,value");
            if let Some(map) = doc.as_object() {
                for (k, v) in map {
                    let rendered = match v.as_str() {
                        Some(s) => s.to_string(),
                        None => v.to_string(),
                    };
                    println!("{},{}", csv_field(k), csv_field(&rendered));
                }
            }
        }
    }
    Ok(())
}

fn cmd_refocus(alpha: &str, min_spacing: f64, format: Format) -> Result<()> {
    let alpha: Vec<f64> = alpha
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad phase coefficient {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let plan = refocus_intervals(&alpha, min_spacing)?;
    emit_document(
        &json!({
            "alpha": plan.alpha,
            "tau1": plan.tau1,
            "tau2": plan.tau2,
            "residual_phase_coeff": plan.residual_phase_coeff,
        }),
        format,
    )
}

fn cmd_calibrate_cr(seed: u64, designated: usize, format: Format) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let psi = vec![
        rng.gen_range(0.45..0.7),
        rng.gen_range(0.25..0.42),
        rng.gen_range(0.08..0.22),
    ];
    let eta = rng.gen_range(-0.6..0.6);
    let stark = rng.gen_range(-0.3..0.3);
    let spread = rng.gen_range(0.01..0.05);
    let ideal = CrParams::ideal(3, phi, psi, 1)?;
    let mut plant = ideal.with_drive_phase(-eta).with_stark(-stark);
    let (la, lb) = if designated == 2 { (0, 1) } else { (1, 2) };
    plant.lambda[la] += spread;
    plant.lambda[lb] -= spread;
    plant.chi[la] += 0.8 * spread;
    plant.chi[lb] -= 0.8 * spread;
    let cal = calibrate_cr(&plant, designated)?;
    emit_document(
        &json!({
            "seed": seed,
            "designated_level": designated,
            "planted": {"drive_phase": eta, "stark_shift": stark, "rotary_spread": spread},
            "recovered": {
                "drive_phase": cal.drive_phase,
                "stark_shift": cal.stark_shift,
                "rotary": cal.rotary,
            },
            "residual_before": cal.residual_before,
            "residual_after": cal.residual_after,
        }),
        format,
    )
}

fn cmd_qpt(input: &Path, target: QptTarget, format: Format) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let table: ExpectationTable = serde_json::from_str(&text)?;
    let channel = qpt_reconstruct(&table)?;
    let (target_name, ideal) = match target {
        QptTarget::Ccz => ("ccz", gates::ccz_qubits().matrix().clone()),
        QptTarget::Toffoli => ("toffoli", gates::toffoli_qubits().matrix().clone()),
        QptTarget::Identity => ("identity", Array2::<C64>::eye(channel.dim())),
    };
    let fidelity = process_fidelity(&channel, &ideal)?;
    let mut doc = json!({
        "qubits": table.n_qubits(),
        "target": target_name,
        "process_fidelity": fidelity,
        "trace_preservation_error": channel.trace_preservation_error(),
        "choi_min_eigenvalue": channel.choi_min_eigenvalue()?,
    });
    if format == Format::Json {
        let ptm = channel.to_ptm()?;
        let rows: Vec<Vec<f64>> = ptm.outer_iter().map(|r| r.to_vec()).collect();
        doc["pauli_transfer_matrix"] = json!(rows);
    }
    emit_document(&doc, format)
}

fn cmd_verify(seed: u64, format: Format) -> Result<()> {
    let suites: [(&str, fn(u64) -> Result<String>); 5] = [
        ("closed_form", suite_closed_form),
        ("refocusing", suite_refocusing),
        ("qubit_echo", suite_qubit_echo),
        ("generalized_cx", suite_gencx),
        ("calibration", suite_calibration),
    ];
    let mut rows = Vec::new();
    for (name, run) in suites {
        let detail = run(seed).map_err(|e| {
            eprintln!("suite {name} FAILED");
            e
        })?;
        eprintln!("suite {name} ok ({detail})");
        rows.push(json!({"suite": name, "ok": true, "detail": detail}));
    }
    match format {
        Format::Json => {
            println!("{}", serde_json::to_string_pretty(&json!({"seed": seed, "suites": rows}))?)
        }
        Format::Csv => {
            println!("suite,ok,detail");
            for row in &rows {
                println!(
                    "{},true,{}",
                    row["suite"].as_str().unwrap_or(""),
                    csv_field(row["detail"].as_str().unwrap_or(""))
                );
            }
        }
    }
    Ok(())
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<C64>> {
    let mut h = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        h[(i, i)] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
        for j in 0..i {
            let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    linalg::expm_i_hermitian(&h, 1.0)
}

fn random_cycle(rng: &mut ChaCha8Rng, d: usize, env_dim: usize) -> Result<CycleSpec> {
    let env = SystemShape::site(env_dim)?;
    let mut boxes = Vec::with_capacity(d);
    for _ in 0..d {
        let phases = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let blocks =
            (0..d).map(|_| random_unitary(env_dim, rng)).collect::<Result<Vec<_>>>()?;
        boxes.push(DiagonalBlockOperator::new(d, env.clone(), phases, blocks)?);
    }
    let times = (0..d).map(|j| (j + 1) as f64 * 5.0).collect();
    CycleSpec::new(d, boxes, times)
}

fn suite_closed_form(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for trial in 0..60 {
        let d = [2, 3, 4][trial % 3];
        let spec = random_cycle(&mut rng, d, 2)?;
        let dense = compose_cycle(&spec)?;
        let closed = closed_form_cycle(&spec)?.to_operator()?;
        let diff = linalg::max_abs_diff(dense.matrix(), closed.matrix());
        worst = worst.max(diff);
        if diff > 1e-10 {
            return Err(Error::MatrixCheck(format!(
                "closed form is {diff:.3e} from the dense product at d={d}"
            )));
        }
    }
    Ok(format!("60 random cycles, worst deviation {worst:.2e}"))
}

fn suite_refocusing(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let random_ternary = |rng: &mut ChaCha8Rng| -> Result<TernaryUnitary> {
        let alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let blocks = (0..3).map(|_| random_unitary(2, rng)).collect::<Result<Vec<_>>>()?;
        TernaryUnitary::new(alpha, blocks, SystemShape::site(2)?)
    };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let sign = if trial % 2 == 0 { RefocusSign::Upper } else { RefocusSign::Lower };
        let u = random_ternary(&mut rng)?;
        let a = u.alpha();
        let solver_alpha = match sign {
            RefocusSign::Upper => vec![a[0], a[1], a[2]],
            RefocusSign::Lower => vec![a[1], a[0], a[2]],
        };
        let plan = refocus_intervals(&solver_alpha, 5.0)?;
        let circuit = build_refocused_sequence(&u, &plan, sign)?;
        let ideal = circuit.ideal_unitary()?;
        let deltas: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let dist = verify_refocusing(&circuit, &ideal, &deltas)?;
        worst = worst.max(dist);
        if dist > 1e-9 {
            return Err(Error::MatrixCheck(format!("refocusing leaks {dist:.3e}")));
        }
    }

    let u = random_ternary(&mut rng)?;
    let mut c = TimedCircuit::new(SystemShape::new(vec![3, 2])?);
    c.push(Gate::CyclicShift { raise: false }, &[0], 0.0)?;
    c.push(
        Gate::TernaryBox {
            alpha: u.alpha().to_vec(),
            blocks: u.blocks().iter().map(CMat::from_array).collect(),
        },
        &[0, 1],
        0.0,
    )?;
    c.push(Gate::CyclicShift { raise: true }, &[0], 7.0)?;
    let ideal = c.ideal_unitary()?;
    let drift = verify_refocusing(&c, &ideal, &[0.3])?;
    if drift < 1e-2 {
        return Err(Error::MatrixCheck(format!(
            "unscheduled conjugation is unexpectedly stable ({drift:.3e})"
        )));
    }
    Ok(format!("20 scheduled draws, worst distance {worst:.2e}; unscheduled drift {drift:.2}"))
}

fn suite_qubit_echo(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let id2 = Operator::identity(SystemShape::site(2)?);
    for _ in 0..25 {
        let alpha = rng.gen_range(0.5..20.0);
        let t0 = rng.gen_range(0.0..40.0);
        let delta = rng.gen_range(-0.5..0.5);
        let u = qubit_echo_refocus(alpha, t0, delta)?;
        let d = op::distance_up_to_global_phase(&u, &id2)?;
        if d > 1e-12 {
            return Err(Error::MatrixCheck(format!("echo misses identity by {d:.3e}")));
        }
    }

    let env = SystemShape::site(2)?;
    let w = random_unitary(2, &mut rng)?;
    let same =
        DiagonalBlockOperator::new(2, env.clone(), vec![0.4, -0.9], vec![w.clone(), w])?;
    let (ok, residual) = dd_decouple_check(&same, &same)?;
    if !ok {
        return Err(Error::MatrixCheck(format!(
            "matched boxes fail the echo check ({residual:.3e})"
        )));
    }
    let other = DiagonalBlockOperator::new(
        2,
        env,
        vec![0.1, 0.2],
        vec![random_unitary(2, &mut rng)?, random_unitary(2, &mut rng)?],
    )?;
    let (bad_ok, _) = dd_decouple_check(&same, &other)?;
    if bad_ok {
        return Err(Error::MatrixCheck("mismatched boxes pass the echo check".into()));
    }

    let mut worst_yz = 0.0f64;
    for _ in 0..10 {
        let phi = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let psi = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let plus = CrParams::new(2, phi, psi.clone(), vec![0.0; 2], vec![0.0; 2], 1, 0)?;
        let minus = plus.flipped();
        let ecr = ecr_compose(&cr_unitary(&plus)?, &cr_unitary(&minus)?)?;
        let m = ecr.matrix();
        let block = |l: usize| {
            let mut b = Array2::<C64>::zeros((2, 2));
            for r in 0..2 {
                for c in 0..2 {
                    b[(r, c)] = m[(2 * l + r, 2 * l + c)];
                }
            }
            b
        };
        let log0 = linalg::su2_log(&block(0))?;
        let log1 = linalg::su2_log(&block(1))?;
        let gap = psi[0] - psi[1];
        for (got, want) in [(log0.xyz[0], gap), (log1.xyz[0], -gap)] {
            if (got - want).abs() > 1e-10 {
                return Err(Error::MatrixCheck(format!(
                    "echoed X angle {got:.6} should be {want:.6}"
                )));
            }
        }
        for v in [log0.xyz[1], log0.xyz[2], log1.xyz[1], log1.xyz[2]] {
            worst_yz = worst_yz.max(v.abs());
        }
    }
    if worst_yz > 1e-10 {
        return Err(Error::MatrixCheck(format!("echoed CR leaks Y/Z content {worst_yz:.3e}")));
    }
    Ok(format!("25 echoes exact, swap condition sorts boxes, ECR Y/Z leak {worst_yz:.2e}"))
}

fn generalized_cx_target() -> Result<Operator> {
    let one = C64::new(1.0, 0.0);
    let mut m = Array2::<C64>::zeros((6, 6));
    m[(0, 0)] = one;
    m[(1, 1)] = one;
    m[(2, 3)] = one;
    m[(3, 2)] = one;
    m[(4, 4)] = one;
    m[(5, 5)] = one;
    Operator::new(SystemShape::new(vec![3, 2])?, m)
}

fn detuned_distance(circuit: &TimedCircuit, delta: f64) -> Result<f64> {
    let stripped =
        circuit.residual_operator(delta)?.dagger().compose(&circuit.unitary(delta)?)?;
    op::distance_up_to_global_phase(&stripped, &circuit.ideal_unitary()?)
}

fn suite_gencx(_seed: u64) -> Result<String> {
    let target = generalized_cx_target()?;
    let mut worst = 0.0f64;
    let rate_sets = [
        (vec![0.01, -0.02, 0.015], vec![0.030, 0.020, 0.004]),
        (vec![0.0; 3], vec![0.004, 0.019, 0.033]),
    ];
    for (phi, psi) in rate_sets {
        let rates = CrRateModel::new(phi, psi, vec![0.0; 3], vec![0.0; 3])?;
        let built = forward_gencx(&rates, 4.0)?;
        worst = worst
            .max(op::distance_up_to_global_phase(&built.circuit.ideal_unitary()?, &target)?);
        for delta in [-0.25, 0.1, 0.3] {
            worst = worst.max(detuned_distance(&built.circuit, delta)?);
        }
    }
    let back = backward_gencx(8.0)?;
    worst = worst.max(op::distance_up_to_global_phase(&back.ideal_unitary()?, &target)?);
    for delta in [-0.25, 0.1, 0.3] {
        worst = worst.max(detuned_distance(&back, delta)?);
    }
    if worst > 1e-9 {
        return Err(Error::MatrixCheck(format!(
            "a generalized CX misses its target by {worst:.3e}"
        )));
    }
    Ok(format!("both directions on and off resonance, worst distance {worst:.2e}"))
}

fn suite_calibration(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut worst = 0.0f64;
    let mut fitted = 0usize;
    while fitted < 25 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm >= std::f64::consts::PI - 0.05 {
            continue;
        }
        fitted += 1;
        let u = linalg::su2_exp(0.0, [v[0], v[1], v[2]]);
        let fit = unitary_so3_fit(&su2_expectations(&u)?)?;
        for (got, want) in [(fit.psi, v[0]), (fit.lambda, v[1]), (fit.chi, v[2])] {
            let err = (got - want).abs();
            worst = worst.max(err);
            if err > 1e-8 {
                return Err(Error::MatrixCheck(format!(
                    "rotation fit misses a planted angle by {err:.3e}"
                )));
            }
        }
    }

    let ideal = CrParams::ideal(3, vec![0.1, -0.2, 0.3], vec![0.5, 0.42, 0.15], 1)?;
    let mut plant = ideal.with_drive_phase(-0.3).with_stark(0.1);
    plant.lambda[0] += 0.0314;
    plant.lambda[1] -= 0.0314;
    plant.chi[0] += 0.04;
    plant.chi[1] -= 0.04;
    let cal = calibrate_cr(&plant, 2)?;
    if cal.residual_after * 10.0 > cal.residual_before {
        return Err(Error::MatrixCheck(format!(
            "calibration only got {:.3e} -> {:.3e}",
            cal.residual_before, cal.residual_after
        )));
    }
    Ok(format!(
        "rotation fit worst error {worst:.2e}; CR residual {:.2e} -> {:.2e}",
        cal.residual_before, cal.residual_after
    ))
}
