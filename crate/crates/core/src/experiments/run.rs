//! Experiment drivers: the long-horizon stability run and the single-epoch
//! error analysis, with deterministic CSV and SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::build::{
    build_ccz_corrected, build_identity_probes, label_string, outcome_to_label,
    FIRST_CONTROL_SITE, TARGET_SITE, TERNARY_SITE,
};
use crate::experiments::calibrate::{
    calibrate_decoherence_scale, calibrate_rz_corrections, measured_process_fidelity,
    ramsey_offset,
};
use crate::gates;
use crate::noise::{CouplingTerm, DeltaWalk, NoiseModel, NoisyChannel};
use crate::op::{Operator, SystemShape};
use crate::tomography::{phi_least_squares, truth_table, ConfusionMatrix, PhasePair};

/// Schema version accepted by [`ExperimentConfig::validate`].
pub const CONFIG_VERSION: u32 = 1;

/// Noise knobs for a simulated device epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Random-walk step of the upper-gap detuning, radians per tick per dwell.
    pub delta_step: f64,
    /// Hard bound on the walked detuning, radians per tick.
    pub delta_bound: f64,
    /// Dwell time between walk steps, ticks.
    pub delta_dwell: f64,
    pub idle_depolarizing: f64,
    pub idle_dephasing: f64,
    pub gate_depolarizing: f64,
    pub gate_dephasing: f64,
    /// Longitudinal coupling between the first control and the ternary site.
    pub coupling_control: f64,
    /// Longitudinal coupling between the ternary site and the target.
    pub coupling_target: f64,
    /// Symmetric readout flip probability per site.
    pub readout_flip: f64,
    /// Undo the readout confusion in the estimator.
    pub mitigate_readout: bool,
    /// When set, rescale the decoherence strengths so the protected gate
    /// opens at this process fidelity.
    pub target_fidelity: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            delta_step: 0.08,
            delta_bound: 0.2,
            delta_dwell: 25.0,
            idle_depolarizing: 2e-4,
            idle_dephasing: 2e-4,
            gate_depolarizing: 6e-4,
            gate_dephasing: 6e-4,
            coupling_control: 0.002,
            coupling_target: 0.0015,
            readout_flip: 0.0,
            mitigate_readout: false,
            target_fidelity: Some(0.93),
        }
    }
}

/// One experiment run, fully determined by its fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Minimum spacing between the cyclic shifts, ticks.
    pub min_spacing: f64,
    /// Virtual-time conversion used for reporting.
    pub ticks_per_hour: f64,
    /// Span of the stability run in virtual hours.
    pub hours: f64,
    /// Number of tomography points across the span.
    pub cadence: usize,
    /// Shots per measurement setting; zero runs every estimator in exact mode.
    pub shots: u64,
    pub seed: u64,
    /// Phase points per Ramsey fringe.
    pub ramsey_points: usize,
    pub noise: NoiseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            min_spacing: 4.0,
            ticks_per_hour: 100.0,
            hours: 33.0,
            cadence: 12,
            shots: 0,
            seed: 7,
            ramsey_points: 16,
            noise: NoiseConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !self.min_spacing.is_finite() || self.min_spacing < 0.0 {
            return Err(Error::Config("min_spacing must be finite and nonnegative".into()));
        }
        for (name, v) in [("ticks_per_hour", self.ticks_per_hour), ("hours", self.hours)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.cadence < 2 {
            return Err(Error::Config("cadence needs at least two time points".into()));
        }
        if self.ramsey_points < 8 {
            return Err(Error::Config("ramsey_points must be at least 8".into()));
        }
        let n = &self.noise;
        for (name, v) in [
            ("delta_step", n.delta_step),
            ("delta_bound", n.delta_bound),
            ("idle_depolarizing", n.idle_depolarizing),
            ("idle_dephasing", n.idle_dephasing),
            ("gate_depolarizing", n.gate_depolarizing),
            ("gate_dephasing", n.gate_dephasing),
            ("coupling_control", n.coupling_control),
            ("coupling_target", n.coupling_target),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("noise.{name} must be finite and nonnegative")));
            }
        }
        if !n.delta_dwell.is_finite() || n.delta_dwell <= 0.0 {
            return Err(Error::Config("noise.delta_dwell must be positive".into()));
        }
        if !n.readout_flip.is_finite() || !(0.0..0.5).contains(&n.readout_flip) {
            return Err(Error::Config("noise.readout_flip must sit in [0, 0.5)".into()));
        }
        if let Some(t) = n.target_fidelity {
            if !t.is_finite() || !(t > 0.0 && t < 1.0) {
                return Err(Error::Config("noise.target_fidelity must sit in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Parses and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Assembles the noise model this config describes.
    pub fn noise_model(&self) -> Result<NoiseModel> {
        self.validate()?;
        let n = &self.noise;
        let mut model = NoiseModel::noiseless();
        model.delta_walk =
            Some(DeltaWalk::new(n.delta_step, n.delta_bound, n.delta_dwell, self.seed)?);
        if n.coupling_control > 0.0 {
            model.couplings.push(CouplingTerm {
                site_a: FIRST_CONTROL_SITE,
                site_b: TERNARY_SITE,
                rate: n.coupling_control,
            });
        }
        if n.coupling_target > 0.0 {
            model.couplings.push(CouplingTerm {
                site_a: TERNARY_SITE,
                site_b: TARGET_SITE,
                rate: n.coupling_target,
            });
        }
        model.idle_depolarizing = n.idle_depolarizing;
        model.idle_dephasing = n.idle_dephasing;
        model.gate_depolarizing = n.gate_depolarizing;
        model.gate_dephasing = n.gate_dephasing;
        model.validate(3)?;
        Ok(model)
    }

    fn confusion(&self) -> Result<Option<ConfusionMatrix>> {
        if self.noise.readout_flip > 0.0 {
            Ok(Some(ConfusionMatrix::symmetric(3, self.noise.readout_flip)?))
        } else {
            Ok(None)
        }
    }
}

/// One measured quantity at one virtual time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub time_ticks: f64,
    pub circuit_id: String,
    pub metric: String,
    pub value: f64,
    pub sigma: f64,
}

impl ExperimentRecord {
    pub fn new(
        time_ticks: f64,
        circuit_id: &str,
        metric: &str,
        value: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !time_ticks.is_finite() || !value.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "record {circuit_id}/{metric} needs finite values and nonnegative uncertainty"
            )));
        }
        Ok(ExperimentRecord {
            time_ticks,
            circuit_id: circuit_id.to_string(),
            metric: metric.to_string(),
            value,
            sigma,
        })
    }
}

/// Everything a driver produced: the calibration context, the records, and
/// the files it wrote.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutput {
    pub experiment: String,
    pub seed: u64,
    /// Factor applied to the decoherence strengths (1 when no target is set).
    pub decoherence_scale: f64,
    /// Phase corrections applied on the ternary site (mid, end).
    pub rz_corrections: (f64, f64),
    pub records: Vec<ExperimentRecord>,
    pub files: Vec<PathBuf>,
}

/// Renders records as CSV with a fixed header and fixed float formatting,
/// so identical runs serialize to identical bytes.
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from("time_ticks,circuit_id,metric,value,sigma\n");
    for r in records {
        let _ = writeln!(
            out,
            "{:.3},{},{},{:.12e},{:.6e}",
            r.time_ticks, r.circuit_id, r.metric, r.value, r.sigma
        );
    }
    out
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic per-task seed derived from the root seed, a label, and an
/// index, so repeated estimators draw independent streams.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut acc = splitmix(root ^ 0xA5A5_5A5A_0F0F_F0F0);
    for b in label.as_bytes() {
        acc = splitmix(acc ^ u64::from(*b));
    }
    splitmix(acc ^ index)
}

fn write_deterministic(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content.as_bytes())?;
    Ok(())
}

fn corrections_for(config: &ExperimentConfig, noise: &NoiseModel) -> Result<(f64, f64)> {
    if noise.couplings.is_empty() {
        Ok((0.0, 0.0))
    } else {
        calibrate_rz_corrections(config.min_spacing, noise)
    }
}

fn scaled_for_target(
    config: &ExperimentConfig,
    noise: &NoiseModel,
    ccz: &crate::circuit::TimedCircuit,
) -> Result<(NoiseModel, f64)> {
    match config.noise.target_fidelity {
        Some(target) => {
            let scale = calibrate_decoherence_scale(
                ccz,
                noise,
                gates::ccz_qubits().matrix(),
                target,
            )?;
            Ok((noise.scaled_decoherence(scale), scale))
        }
        None => Ok((noise.clone(), 1.0)),
    }
}

/// Repeated tomography of the protected gate and the two duration-matched
/// identity probes across a span of virtual time, with the detuning frozen
/// at each cadence point. Writes `stability_seed<seed>.csv` (and `.svg` when
/// `plot` is set) under `out_dir`.
pub fn run_stability_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    plot: bool,
) -> Result<RunOutput> {
    config.validate()?;
    let noise = config.noise_model()?;
    let (rz_mid, rz_end) = corrections_for(config, &noise)?;
    let ccz = build_ccz_corrected(config.min_spacing, rz_mid, rz_end)?;
    let probes = build_identity_probes(config.min_spacing)?;
    let find = |name: &str| -> Result<&crate::circuit::TimedCircuit> {
        probes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::InvalidInput(format!("missing probe {name}")))
    };
    let three_shifts = find("three_shifts")?;
    let shift_echo = find("shift_echo")?;
    let (noise, scale) = scaled_for_target(config, &noise, &ccz)?;
    let confusion = config.confusion()?;

    let identity = Operator::identity(SystemShape::new(vec![2, 2, 2])?);
    let ccz_ideal = gates::ccz_qubits();
    let jobs: [(&str, &crate::circuit::TimedCircuit, &Operator); 3] = [
        ("ccz", &ccz, &ccz_ideal),
        ("three_shifts", three_shifts, &identity),
        ("shift_echo", shift_echo, &identity),
    ];

    let total_ticks = config.hours * config.ticks_per_hour;
    let mut records = Vec::new();
    for point in 0..config.cadence {
        let t = total_ticks * point as f64 / (config.cadence - 1) as f64;
        records.push(ExperimentRecord::new(
            t,
            "delta_walk",
            "detuning",
            noise.delta_at(t),
            0.0,
        )?);
        for (id, circuit, ideal) in jobs.iter() {
            let channel = NoisyChannel::new(circuit, &noise, t)?;
            let fidelity = measured_process_fidelity(
                &channel,
                ideal.matrix(),
                config.shots,
                derive_seed(config.seed, id, point as u64),
                confusion.as_ref(),
                config.noise.mitigate_readout,
            )?;
            records.push(ExperimentRecord::new(t, id, "process_fidelity", fidelity, 0.0)?);
        }
    }

    let mut output = RunOutput {
        experiment: "stability".to_string(),
        seed: config.seed,
        decoherence_scale: scale,
        rz_corrections: (rz_mid, rz_end),
        records,
        files: Vec::new(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("stability_seed{}.csv", config.seed));
        write_deterministic(&csv, &records_to_csv(&output.records))?;
        output.files.push(csv);
        if plot {
            let svg = dir.join(format!("stability_seed{}.svg", config.seed));
            write_deterministic(&svg, &stability_svg(&output.records))?;
            output.files.push(svg);
        }
    }
    Ok(output)
}

/// Label bit position (in the target, second-control, first-control report
/// order) that a register site controls.
fn site_label_bit(site: usize) -> usize {
    match site {
        TERNARY_SITE => 1,
        FIRST_CONTROL_SITE => 0,
        _ => 2,
    }
}

/// Single-epoch error analysis of the protected gate: the eight survival
/// probabilities, the seven relative phases from twelve Ramsey pairs, and
/// the truth-table fidelity ladder over the identity probes. Writes
/// `error_analysis_seed<seed>.csv` (and `.svg`) under `out_dir`.
pub fn run_error_analysis(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    plot: bool,
) -> Result<RunOutput> {
    config.validate()?;
    let noise = config.noise_model()?;
    let (rz_mid, rz_end) = corrections_for(config, &noise)?;
    let ccz = build_ccz_corrected(config.min_spacing, rz_mid, rz_end)?;
    let (noise, scale) = scaled_for_target(config, &noise, &ccz)?;
    let confusion = config.confusion()?;
    let delta = noise.delta_at(0.0);
    let mut records = Vec::new();

    let channel = NoisyChannel::new(&ccz, &noise, 0.0)?;
    let table = truth_table(
        &channel,
        config.shots,
        derive_seed(config.seed, "truth_table_ccz", 0),
        confusion.as_ref(),
        config.noise.mitigate_readout,
    )?;
    let mut by_label = vec![(0.0, 0.0); 8];
    for (outcome, (&p, &s)) in table.survival.iter().zip(table.sigma.iter()).enumerate() {
        by_label[outcome_to_label(outcome)] = (p, s);
    }
    for (label, (p, s)) in by_label.iter().enumerate() {
        records.push(ExperimentRecord::new(
            0.0,
            "ccz",
            &format!("population_{}", label_string(label)),
            *p,
            *s,
        )?);
    }

    let mut pairs = Vec::new();
    for site in [TERNARY_SITE, FIRST_CONTROL_SITE, TARGET_SITE] {
        let spectators: Vec<usize> = (0..3).filter(|&s| s != site).collect();
        for assignment in 0..4usize {
            let ones: Vec<usize> = spectators
                .iter()
                .enumerate()
                .filter(|(pos, _)| (assignment >> (1 - pos)) & 1 == 1)
                .map(|(_, &s)| s)
                .collect();
            let mut hi = 1usize << site_label_bit(site);
            let mut lo = 0usize;
            for &s in &ones {
                hi |= 1 << site_label_bit(s);
                lo |= 1 << site_label_bit(s);
            }
            let fit = ramsey_offset(
                &ccz,
                &noise,
                delta,
                site,
                &ones,
                config.ramsey_points,
                config.shots,
                derive_seed(config.seed, "ramsey", (site * 4 + assignment) as u64),
            )?;
            let sigma = if config.shots == 0 { 1e-9 } else { fit.offset_sigma.max(1e-9) };
            pairs.push(PhasePair { labels: (hi, lo), kappa: fit.offset, sigma });
        }
    }
    let phi = phi_least_squares(&pairs)?;
    for label in 0..8 {
        let sigma = if config.shots == 0 { 0.0 } else { phi.sigma[label] };
        records.push(ExperimentRecord::new(
            0.0,
            "ccz",
            &format!("phase_{}", label_string(label)),
            phi.phi[label],
            sigma,
        )?);
    }
    records.push(ExperimentRecord::new(
        0.0,
        "ccz",
        "phase_chi2_per_dof",
        if phi.dof > 0 { phi.chi2 / phi.dof as f64 } else { 0.0 },
        0.0,
    )?);

    let probes = build_identity_probes(config.min_spacing)?;
    let ladder = ["packed_shifts", "shifts_only", "no_entanglers", "no_interior"];
    for name in ladder {
        let circuit = &probes
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing probe {name}")))?
            .1;
        let ch = NoisyChannel::new(circuit, &noise, 0.0)?;
        let t = truth_table(
            &ch,
            config.shots,
            derive_seed(config.seed, "truth_table", ladder.iter().position(|n| *n == name).unwrap() as u64),
            confusion.as_ref(),
            config.noise.mitigate_readout,
        )?;
        records.push(ExperimentRecord::new(
            0.0,
            name,
            "truth_table_fidelity",
            t.fidelity,
            t.fidelity_sigma,
        )?);
    }
    records.push(ExperimentRecord::new(
        0.0,
        "ccz",
        "truth_table_fidelity",
        table.fidelity,
        table.fidelity_sigma,
    )?);

    let mut output = RunOutput {
        experiment: "error_analysis".to_string(),
        seed: config.seed,
        decoherence_scale: scale,
        rz_corrections: (rz_mid, rz_end),
        records,
        files: Vec::new(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("error_analysis_seed{}.csv", config.seed));
        write_deterministic(&csv, &records_to_csv(&output.records))?;
        output.files.push(csv);
        if plot {
            let svg = dir.join(format!("error_analysis_seed{}.svg", config.seed));
            write_deterministic(&svg, &error_analysis_svg(&output.records))?;
            output.files.push(svg);
        }
    }
    Ok(output)
}

const PALETTE: [&str; 5] = ["#4c78a8", "#e45756", "#54a24b", "#b279a2", "#f58518"];

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.x_lo) / (self.x_hi - self.x_lo).max(1e-12) * self.w
    }
    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.y_lo) / (self.y_hi - self.y_lo).max(1e-12) * self.h
    }
    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = write!(
            out,
            "<rect x='{:.2}' y='{:.2}' width='{:.2}' height='{:.2}' fill='none' stroke='#888'/>",
            self.x0, self.y0, self.w, self.h
        );
        for k in 0..=4 {
            let fy = self.y_lo + (self.y_hi - self.y_lo) * k as f64 / 4.0;
            let py = self.y(fy);
            let _ = write!(
                out,
                "<line x1='{:.2}' y1='{py:.2}' x2='{:.2}' y2='{py:.2}' stroke='#ddd'/>\
                 <text x='{:.2}' y='{:.2}' font-size='10' text-anchor='end' fill='#444'>{fy:.2}</text>",
                self.x0,
                self.x0 + self.w,
                self.x0 - 4.0,
                py + 3.0
            );
        }
        let _ = write!(
            out,
            "<text x='{:.2}' y='{:.2}' font-size='11' text-anchor='middle' fill='#222'>{x_label}</text>\
             <text x='{:.2}' y='{:.2}' font-size='11' text-anchor='middle' fill='#222' transform='rotate(-90 {:.2} {:.2})'>{y_label}</text>",
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 28.0,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0
        );
    }
}

fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{width:.0}' height='{height:.0}' \
         viewBox='0 0 {width:.0} {height:.0}'>\
         <rect width='100%' height='100%' fill='white'/>{body}</svg>\n"
    )
}

/// Fidelity time series per circuit, one polyline each, with the walked
/// detuning in a lower panel.
pub fn stability_svg(records: &[ExperimentRecord]) -> String {
    let mut body = String::new();
    let fid: Vec<&ExperimentRecord> =
        records.iter().filter(|r| r.metric == "process_fidelity").collect();
    let det: Vec<&ExperimentRecord> =
        records.iter().filter(|r| r.metric == "detuning").collect();
    let mut ids: Vec<&str> = Vec::new();
    for r in &fid {
        if !ids.contains(&r.circuit_id.as_str()) {
            ids.push(&r.circuit_id);
        }
    }
    let x_hi = records.iter().map(|r| r.time_ticks).fold(1.0f64, f64::max);
    let (mut y_lo, mut y_hi) = (1.0f64, 0.0f64);
    for r in &fid {
        y_lo = y_lo.min(r.value);
        y_hi = y_hi.max(r.value);
    }
    let pad = ((y_hi - y_lo) * 0.15).max(0.02);
    let top = Frame {
        x0: 60.0,
        y0: 20.0,
        w: 520.0,
        h: 230.0,
        x_lo: 0.0,
        x_hi,
        y_lo: (y_lo - pad).max(0.0),
        y_hi: (y_hi + pad).min(1.02),
    };
    top.axes(&mut body, "", "process fidelity");
    for (k, id) in ids.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        for r in fid.iter().filter(|r| r.circuit_id == *id) {
            let _ = write!(path, "{:.2},{:.2} ", top.x(r.time_ticks), top.y(r.value));
        }
        let _ = write!(
            body,
            "<polyline points='{}' fill='none' stroke='{color}' stroke-width='1.5'/>",
            path.trim_end()
        );
        let _ = write!(
            body,
            "<rect x='{:.2}' y='{:.2}' width='10' height='10' fill='{color}'/>\
             <text x='{:.2}' y='{:.2}' font-size='11' fill='#222'>{id}</text>",
            600.0,
            30.0 + 18.0 * k as f64,
            614.0,
            39.0 + 18.0 * k as f64
        );
    }
    let d_max = det.iter().map(|r| r.value.abs()).fold(0.05f64, f64::max) * 1.2;
    let bottom = Frame {
        x0: 60.0,
        y0: 290.0,
        w: 520.0,
        h: 110.0,
        x_lo: 0.0,
        x_hi,
        y_lo: -d_max,
        y_hi: d_max,
    };
    bottom.axes(&mut body, "time, ticks", "detuning");
    let mut path = String::new();
    for r in &det {
        let _ = write!(path, "{:.2},{:.2} ", bottom.x(r.time_ticks), bottom.y(r.value));
    }
    let _ = write!(
        body,
        "<polyline points='{}' fill='none' stroke='#666' stroke-width='1.2'/>",
        path.trim_end()
    );
    svg_document(720.0, 440.0, &body)
}

/// Survival bars, relative-phase markers, and the truth-table fidelity
/// ladder, stacked in one figure.
pub fn error_analysis_svg(records: &[ExperimentRecord]) -> String {
    let mut body = String::new();
    let pick = |prefix: &str| -> Vec<(String, f64, f64)> {
        let mut rows: Vec<(String, f64, f64)> = records
            .iter()
            .filter(|r| r.metric.starts_with(prefix))
            .map(|r| (r.metric.trim_start_matches(prefix).to_string(), r.value, r.sigma))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    };
    let populations = pick("population_");
    let phases = pick("phase_");
    let phases: Vec<&(String, f64, f64)> =
        phases.iter().filter(|(l, _, _)| l.len() == 3).collect();

    let top = Frame {
        x0: 60.0,
        y0: 20.0,
        w: 520.0,
        h: 170.0,
        x_lo: 0.0,
        x_hi: 8.0,
        y_lo: 0.0,
        y_hi: 1.05,
    };
    top.axes(&mut body, "", "survival");
    for (k, (label, v, _)) in populations.iter().enumerate() {
        let x = top.x(k as f64 + 0.15);
        let w = top.w / 8.0 * 0.7;
        let y = top.y(*v);
        let _ = write!(
            body,
            "<rect x='{x:.2}' y='{y:.2}' width='{w:.2}' height='{:.2}' fill='{}'/>\
             <text x='{:.2}' y='{:.2}' font-size='10' text-anchor='middle' fill='#222'>{label}</text>",
            top.y(0.0) - y,
            PALETTE[0],
            x + w / 2.0,
            top.y0 + top.h + 14.0
        );
    }

    let mid = Frame {
        x0: 60.0,
        y0: 230.0,
        w: 520.0,
        h: 170.0,
        x_lo: 0.0,
        x_hi: 8.0,
        y_lo: -0.6,
        y_hi: 3.6,
    };
    mid.axes(&mut body, "label", "relative phase, rad");
    let mut path = String::new();
    for (k, (_, v, _)) in phases.iter().enumerate() {
        let _ = write!(path, "{:.2},{:.2} ", mid.x(k as f64 + 0.5), mid.y(*v));
    }
    let _ = write!(
        body,
        "<polyline points='{}' fill='none' stroke='{}' stroke-width='1.5'/>",
        path.trim_end(),
        PALETTE[1]
    );
    for (k, (label, v, _)) in phases.iter().enumerate() {
        let _ = write!(
            body,
            "<circle cx='{:.2}' cy='{:.2}' r='3' fill='{}'/>\
             <text x='{:.2}' y='{:.2}' font-size='10' text-anchor='middle' fill='#222'>{label}</text>",
            mid.x(k as f64 + 0.5),
            mid.y(*v),
            PALETTE[1],
            mid.x(k as f64 + 0.5),
            mid.y0 + mid.h + 14.0
        );
    }

    let ladder: Vec<&ExperimentRecord> =
        records.iter().filter(|r| r.metric == "truth_table_fidelity").collect();
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for r in &ladder {
        lo = lo.min(r.value);
        hi = hi.max(r.value);
    }
    let pad = ((hi - lo) * 0.2).max(0.01);
    let bot = Frame {
        x0: 60.0,
        y0: 440.0,
        w: 520.0,
        h: 170.0,
        x_lo: 0.0,
        x_hi: ladder.len() as f64,
        y_lo: (lo - pad).max(0.0),
        y_hi: (hi + pad).min(1.02),
    };
    bot.axes(&mut body, "circuit", "truth-table fidelity");
    for (k, r) in ladder.iter().enumerate() {
        let x = bot.x(k as f64 + 0.15);
        let w = bot.w / ladder.len().max(1) as f64 * 0.7;
        let y = bot.y(r.value);
        let _ = write!(
            body,
            "<rect x='{x:.2}' y='{y:.2}' width='{w:.2}' height='{:.2}' fill='{}'/>\
             <text x='{:.2}' y='{:.2}' font-size='9' text-anchor='middle' fill='#222'>{}</text>",
            bot.y(bot.y_lo) - y,
            PALETTE[2],
            x + w / 2.0,
            bot.y0 + bot.h + 14.0,
            r.circuit_id
        );
    }
    svg_document(720.0, 660.0, &body)
}
