//! Command execution. Each command maps a config to in-memory artifacts, so
//! runs can be compared byte for byte before anything touches the disk.

use std::io::BufReader;

use qtomo::adaptive::{
    gaussian_scaled_mse, optimal_n_sic, run_two_step_mc, AdaptiveSettings, TwoStepPlan, WeightRule,
};
use qtomo::bayes::{bayes_risk_closed_form, minimize_risk, PriorSpec};
use qtomo::bounds::{nh_bound, sic_mse, BoundReport};
use qtomo::fitkit::{fit_scaling_model, mse_by_subsampling, EstimationPipeline, MseCurve, MsePoint, SubsampleOptions};
use qtomo::formats::{read_shot_record, write_shot_record, DilationJson, PovmJson};
use qtomo::naimark::{dilate, verify_dilation_seeded};
use qtomo::noisekit::{
    build_confusion_matrix, estimate_confusion_matrix, sample_shots_with, ConfusionMatrix, SamplingOptions, ShotRecord,
};
use qtomo::povm::{build_estimator, build_st_povm, QubitPovm, StGeometry, StMeasurement, StPovmParams, FREQ_SUM_TOL};
use qtomo::rng::substream_seed;
use qtomo::BlochVector;
use serde::Serialize;

use crate::config::*;
use crate::output::{Artifact, Cell, Csv};
use crate::CliError;

/// What a command produced: files for the output directory and a short
/// human-readable summary for stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub summary: String,
}

pub fn execute(config: &CommandConfig) -> Result<Outcome, CliError> {
    match config {
        CommandConfig::Bound(c) => bound(c),
        CommandConfig::Povm(c) => povm(c),
        CommandConfig::Dilate(c) => dilate_cmd(c),
        CommandConfig::Simulate(c) => simulate(c),
        CommandConfig::Fit(c) => fit(c),
        CommandConfig::Adaptive(c) => adaptive(c),
        CommandConfig::Bayes(c) => bayes(c),
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("self-check failed: {}", what())))
    }
}

fn bound(c: &BoundConfig) -> Result<Outcome, CliError> {
    if c.r.is_empty() {
        return Err(CliError::Config("bound needs at least one r value".into()));
    }
    let mut csv = Csv::new(&["r", "c_nh", "mse_sic"]);
    for &r in &c.r {
        let b = BoundReport::at(r)?;
        csv.row([b.r.into(), b.c_nh.into(), b.mse_sic.into()]);
    }
    let text = csv.into_string();
    Ok(Outcome {
        artifacts: vec![Artifact::new("bound.csv", text.clone())],
        summary: text,
    })
}

#[derive(Serialize)]
struct PovmReport {
    r_p: f64,
    phi: f64,
    orientation: BlochVector,
    sic_equivalent: bool,
    completeness_residual: f64,
    traces: [f64; 4],
    /// Estimator matrix in the aligned frame, 3 rows × 4 outcomes.
    estimator: [[f64; 4]; 3],
    /// Estimator columns rotated into the laboratory frame.
    lab_columns: [BlochVector; 4],
}

fn st_params(c: &PovmConfig) -> Result<StPovmParams, CliError> {
    Ok(StPovmParams::new(c.r_p, c.phi, c.orientation)?)
}

fn povm(c: &PovmConfig) -> Result<Outcome, CliError> {
    let params = st_params(c)?;
    let povm = build_st_povm(&params)?;
    let meas = StMeasurement::new(params)?;
    let report = PovmReport {
        r_p: params.r_p(),
        phi: params.phi(),
        orientation: params.orientation(),
        sic_equivalent: params.r_p() == 0.0,
        completeness_residual: povm.completeness_residual(),
        traces: povm.traces(),
        estimator: build_estimator(&params)?.rows(),
        lab_columns: std::array::from_fn(|k| meas.lab_column(k)),
    };
    check(report.completeness_residual <= 1e-12, || {
        format!("completeness residual {:e}", report.completeness_residual)
    })?;
    let summary = format!(
        "r_p = {}{}\ntraces = {:?}\ncompleteness residual = {:e}\n",
        report.r_p,
        if report.sic_equivalent { " (SIC-equivalent)" } else { "" },
        report.traces,
        report.completeness_residual
    );
    Ok(Outcome {
        artifacts: vec![
            Artifact::json("povm.json", &PovmJson::from(&povm)),
            Artifact::json("report.json", &report),
        ],
        summary,
    })
}

#[derive(Serialize)]
struct DilationReport {
    max_error: f64,
    n_states: usize,
    unitarity_error: f64,
}

fn dilate_cmd(c: &DilateConfig) -> Result<Outcome, CliError> {
    let povm: QubitPovm = match (&c.povm_file, &c.params) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            let j: PovmJson = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: not a POVM JSON file: {e}", path.display())))?;
            j.try_into()?
        }
        (None, Some(p)) => build_st_povm(&st_params(p)?)?,
        _ => return Err(CliError::Config("dilate needs exactly one of povm_file or params".into())),
    };
    if c.n_states == 0 {
        return Err(CliError::Config("n_states must be positive".into()));
    }
    let d = dilate(&povm)?;
    let max_error = verify_dilation_seeded(&d, c.n_states, substream_seed(c.seed, "dilate"))?;
    let report = DilationReport {
        max_error,
        n_states: c.n_states,
        unitarity_error: d.unitarity_error(),
    };
    check(report.unitarity_error <= 1e-10 && max_error <= 1e-10, || {
        format!("unitarity {:e}, probability mismatch {:e}", report.unitarity_error, max_error)
    })?;
    Ok(Outcome {
        summary: format!(
            "unitarity error = {:e}\nmax probability error over {} states = {:e}\n",
            report.unitarity_error, c.n_states, max_error
        ),
        artifacts: vec![
            Artifact::json("dilation.json", &DilationJson::from(&d)),
            Artifact::json("verification.json", &report),
        ],
    })
}

fn simulate(c: &SimulateConfig) -> Result<Outcome, CliError> {
    if c.states.is_empty() {
        return Err(CliError::Config("simulate needs at least one state".into()));
    }
    if c.mitigate && c.noise.is_none() {
        return Err(CliError::Config("mitigate requires a noise spec".into()));
    }
    let mitigation = match (c.mitigate, c.noise) {
        (true, Some(noise)) => Some(match c.confusion_shots {
            Some(n) => estimate_confusion_matrix(&noise, n, substream_seed(c.seed, "simulate/confusion"))?,
            None => build_confusion_matrix(&noise),
        }),
        _ => None,
    };
    let sampling = SamplingOptions {
        noise: c.noise,
        systematic: c.systematic,
        jitter_radius: None,
    };
    let mut csv = Csv::new(&[
        "index",
        "theta_x",
        "theta_y",
        "theta_z",
        "r",
        "r_p",
        "group_size",
        "scaled_mse",
        "std_err",
        "expected_mse",
        "c_nh",
        "mse_sic",
    ]);
    let mut artifacts = Vec::new();
    let mut summary = String::new();
    for (i, &theta) in c.states.iter().enumerate() {
        let params = match c.r_p {
            Some(rp) => StPovmParams::new(rp, c.phi, c.orientation.unwrap_or(BlochVector::Z))?,
            None => StPovmParams::matched_to(theta)?,
        };
        let record = sample_shots_with(
            &params,
            theta,
            c.shots,
            substream_seed(c.seed, &format!("simulate/record/{i}")),
            &sampling,
        )?;
        self_check_record(&record, c.shots)?;
        let pipeline = EstimationPipeline::new(&StMeasurement::new(params)?, mitigation.as_ref(), None)?;
        let stats = mse_by_subsampling(
            &record,
            c.group_size,
            &pipeline,
            &SubsampleOptions {
                n_instances: c.instances,
                n_resamples: c.resamples,
                seed: substream_seed(c.seed, &format!("simulate/subsample/{i}")),
            },
        )?;
        check(stats.mean_scaled_mse.is_finite() && stats.std_err.is_finite(), || {
            format!("non-finite MSE for state {i}")
        })?;
        let r = theta.norm();
        let expected = StGeometry::new(&params)?.expected_mse(theta);
        csv.row([
            Cell::from(i),
            theta.x.into(),
            theta.y.into(),
            theta.z.into(),
            r.into(),
            params.r_p().into(),
            c.group_size.into(),
            stats.mean_scaled_mse.into(),
            stats.std_err.into(),
            expected.into(),
            nh_bound(r)?.into(),
            sic_mse(r)?.into(),
        ]);
        summary.push_str(&format!(
            "state {i}: r = {r:.4}, scaled MSE = {:.4} ± {:.4} (N-H {:.4})\n",
            stats.mean_scaled_mse,
            stats.std_err,
            nh_bound(r)?
        ));
        if c.write_records {
            let mut buf = Vec::new();
            write_shot_record(&record, &mut buf)?;
            artifacts.push(Artifact::new(format!("records/shots_{i:03}.csv"), buf));
        }
    }
    artifacts.insert(0, Artifact::new("mse.csv", csv.into_string()));
    Ok(Outcome { artifacts, summary })
}

fn self_check_record(record: &ShotRecord, shots: usize) -> Result<(), CliError> {
    let total: u64 = record.counts().iter().sum();
    check(total == shots as u64, || format!("counts sum to {total}, expected {shots}"))?;
    let fsum: f64 = record.frequencies().iter().sum();
    check((fsum - 1.0).abs() <= FREQ_SUM_TOL, || format!("frequencies sum to {fsum}"))
}

fn fit(c: &FitConfig) -> Result<Outcome, CliError> {
    if c.group_sizes.is_empty() {
        return Err(CliError::Config("fit needs at least one group size".into()));
    }
    if !(c.records.len() == 1 || c.records.len() == c.group_sizes.len()) {
        return Err(CliError::Config(format!(
            "give one record or one per group size ({} records, {} group sizes)",
            c.records.len(),
            c.group_sizes.len()
        )));
    }
    let records = c
        .records
        .iter()
        .map(|p| {
            let f = std::fs::File::open(p)?;
            read_shot_record(BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let pipelines = records
        .iter()
        .map(|rec| {
            let m: Option<ConfusionMatrix> = match (c.mitigate, rec.noise) {
                (false, _) => None,
                (true, Some(noise)) => Some(build_confusion_matrix(&noise)),
                (true, None) => return Err(CliError::Config("mitigate requested but a record has no noise spec".into())),
            };
            Ok(EstimationPipeline::new(&StMeasurement::new(rec.povm_params)?, m.as_ref(), None)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut points = Vec::with_capacity(c.group_sizes.len());
    for (i, &g) in c.group_sizes.iter().enumerate() {
        let j = if records.len() == 1 { 0 } else { i };
        let s = mse_by_subsampling(
            &records[j],
            g,
            &pipelines[j],
            &SubsampleOptions {
                n_instances: c.instances,
                n_resamples: c.resamples,
                seed: substream_seed(c.seed, &format!("fit/{i}")),
            },
        )?;
        points.push(MsePoint {
            n: g as u64,
            mean_scaled_mse: s.mean_scaled_mse,
            std_err: s.std_err,
        });
    }
    let curve = MseCurve::new(points, c.resamples)?;
    let mut csv = Csv::new(&["N", "scaled_mse", "std_err"]);
    for p in &curve.points {
        csv.row([p.n.into(), p.mean_scaled_mse.into(), p.std_err.into()]);
    }
    let fit = fit_scaling_model(&curve)?;
    Ok(Outcome {
        summary: format!(
            "C = {:.4} ± {:.4}\ndelta = {:.3e} ± {:.3e}\n",
            fit.c, fit.c_err, fit.delta, fit.delta_err
        ),
        artifacts: vec![Artifact::new("mse.csv", csv.into_string()), Artifact::json("fit.json", &fit)],
    })
}

#[derive(Serialize)]
struct AdaptiveSummary {
    theta: BlochVector,
    n_total: u64,
    mode: AdaptiveMode,
    weight: WeightRule,
    best_n_sic: u64,
    best_scaled_mse: f64,
    best_std_err: f64,
    /// Shape of the allocation search (Gaussian scan only).
    unimodal: Option<bool>,
    sic_baseline: f64,
    nh_bound: f64,
}

fn scan_grid(n_total: u64, k: usize) -> Vec<u64> {
    let lo = 100.min(n_total / 4).max(1);
    let hi = n_total - lo;
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut g: Vec<u64> = (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k.max(2) - 1) as f64).exp().round() as u64)
        .collect();
    g.dedup();
    g
}

fn adaptive(c: &AdaptiveConfig) -> Result<Outcome, CliError> {
    if c.n_total < 8 {
        return Err(CliError::Config("n_total must be at least 8".into()));
    }
    if c.mode == AdaptiveMode::Mc && c.runs < 2 {
        return Err(CliError::Config("Monte Carlo mode needs at least 2 runs".into()));
    }
    if c.scan_points < 3 {
        return Err(CliError::Config("scan_points must be at least 3".into()));
    }
    let settings = AdaptiveSettings {
        mse1_rule: c.mse1_rule,
        ..AdaptiveSettings::default()
    };
    let r = c.theta.norm();
    let eval = |n_sic: u64| -> Result<(f64, f64), CliError> {
        let plan = TwoStepPlan::new(c.n_total, n_sic, c.weight)?;
        Ok(match c.mode {
            AdaptiveMode::Gaussian => (
                gaussian_scaled_mse(c.theta, c.n_total as f64, n_sic as f64, c.weight, &settings)?,
                0.0,
            ),
            AdaptiveMode::Mc => {
                let res = run_two_step_mc(
                    c.theta,
                    &plan,
                    c.runs,
                    substream_seed(c.seed, &format!("adaptive/{n_sic}")),
                    &settings,
                )?;
                (res.mean_scaled_mse, res.std_err)
            }
        })
    };
    let grid = match c.n_sic {
        Some(n) => vec![n],
        None => scan_grid(c.n_total, c.scan_points),
    };
    let mut rows = grid
        .iter()
        .map(|&n| Ok((n, eval(n)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut unimodal = None;
    if c.n_sic.is_none() && c.mode == AdaptiveMode::Gaussian && c.weight == WeightRule::OptimalPerRun {
        let alloc = optimal_n_sic(c.theta, c.n_total, &settings)?;
        unimodal = Some(alloc.unimodal);
        if !rows.iter().any(|(n, _)| *n == alloc.n_sic) {
            rows.push((alloc.n_sic, (alloc.scaled_mse, 0.0)));
            rows.sort_by_key(|(n, _)| *n);
        }
    }
    let &(best_n, (best_mse, best_se)) = rows
        .iter()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("grid is non-empty");
    let mut csv = Csv::new(&["n_sic", "scaled_mse", "std_err"]);
    for (n, (m, s)) in &rows {
        csv.row([(*n).into(), (*m).into(), (*s).into()]);
    }
    let summary = AdaptiveSummary {
        theta: c.theta,
        n_total: c.n_total,
        mode: c.mode,
        weight: c.weight,
        best_n_sic: best_n,
        best_scaled_mse: best_mse,
        best_std_err: best_se,
        unimodal,
        sic_baseline: sic_mse(r)?,
        nh_bound: nh_bound(r)?,
    };
    Ok(Outcome {
        summary: format!(
            "best n_sic = {best_n}, scaled MSE = {best_mse:.4}\nSIC-only = {:.4}, N-H = {:.4}\n",
            summary.sic_baseline, summary.nh_bound
        ),
        artifacts: vec![
            Artifact::new("adaptive.csv", csv.into_string()),
            Artifact::json("summary.json", &summary),
        ],
    })
}

#[derive(Serialize)]
struct BayesSummary {
    argmin_rp: f64,
    min_risk: f64,
}

fn bayes(c: &BayesConfig) -> Result<Outcome, CliError> {
    let spec = PriorSpec::new(c.center, c.kappa, c.alpha)?.with_measure(c.measure);
    if c.rp_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(CliError::Config("every r_p grid value must lie in [0, 1)".into()));
    }
    let curve = minimize_risk(&spec, &c.rp_grid, &c.quadrature)?;
    let mut csv = Csv::new(&["r_p", "risk"]);
    for &(rp, risk) in &curve.points {
        let exact = bayes_risk_closed_form(&spec, rp)?;
        check((risk - exact).abs() <= 1e-6 * exact.abs(), || {
            format!("quadrature risk {risk} disagrees with the moment identity {exact} at r_p = {rp}")
        })?;
        csv.row([rp.into(), risk.into()]);
    }
    let summary = BayesSummary {
        argmin_rp: curve.argmin_rp,
        min_risk: curve.min_risk,
    };
    Ok(Outcome {
        summary: format!("argmin r_p = {:.4}, min risk = {:.4}\n", curve.argmin_rp, curve.min_risk),
        artifacts: vec![
            Artifact::new("bayes.csv", csv.into_string()),
            Artifact::json("bayes.json", &summary),
        ],
    })
}
