//! End-to-end checks through the public API: sampling, file formats,
//! mitigation, calibration and the statistical estimators.

use qtomo::bayes::{bayes_risk, bayes_risk_closed_form, BayesQuadrature, PriorSpec, RadialMeasure};
use qtomo::bounds::nh_bound;
use qtomo::fitkit::{fit_scaling_model, mse_by_subsampling, EstimationPipeline, MseCurve, MsePoint, SubsampleOptions};
use qtomo::formats::{read_shot_record, write_shot_record};
use qtomo::noisekit::{
    build_confusion_matrix, calibrate_offsets, sample_shots, sample_shots_with, ReadoutNoiseSpec, SamplingOptions,
    SystematicModel,
};
use qtomo::povm::{StMeasurement, StPovmParams};
use qtomo::BlochVector;

#[test]
fn sampling_is_reproducible_and_seed_sensitive() {
    let p = StPovmParams::aligned(0.4).unwrap();
    let t = BlochVector::new(0.1, 0.2, 0.4);
    let a = sample_shots(&p, t, 200_000, 5, None).unwrap();
    let b = sample_shots(&p, t, 200_000, 5, None).unwrap();
    let c = sample_shots(&p, t, 200_000, 6, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.outcomes, c.outcomes);
}

#[test]
fn file_round_trip_preserves_estimates() {
    let p = StPovmParams::matched_to(BlochVector::new(0.0, 0.5, 0.2)).unwrap();
    let rec = sample_shots(&p, BlochVector::new(0.0, 0.5, 0.2), 5_000, 1, None).unwrap();
    let mut buf = Vec::new();
    write_shot_record(&rec, &mut buf).unwrap();
    let back = read_shot_record(buf.as_slice()).unwrap();
    let pa = EstimationPipeline::for_record(&rec).unwrap();
    let pb = EstimationPipeline::for_record(&back).unwrap();
    assert_eq!(pa.estimate_counts(&rec.counts()), pb.estimate_counts(&back.counts()));
}

#[test]
fn calibration_removes_an_injected_bias() {
    let theta = BlochVector::on_z(0.4);
    let p = StPovmParams::matched_to(theta).unwrap();
    let bias = [0.02, -0.01, 0.015];
    let sys = SystematicModel::AdditiveThetaBias { bias };
    let off = calibrate_offsets(&p, theta, 40, 50_000, 3, None, sys).unwrap();
    for (d, (b, se)) in off
        .delta_theta
        .to_array()
        .iter()
        .zip(bias.iter().zip(off.std_err.to_array()))
    {
        assert!((d - b).abs() < 4.0 * se, "{d} vs {b} ± {se}");
    }
    let rec = sample_shots_with(
        &p,
        theta,
        400_000,
        4,
        &SamplingOptions {
            systematic: sys,
            ..Default::default()
        },
    )
    .unwrap();
    let meas = StMeasurement::new(p).unwrap();
    let corrected = EstimationPipeline::new(&meas, None, Some(&off)).unwrap().estimate_counts(&rec.counts());
    let raw = EstimationPipeline::new(&meas, None, None).unwrap().estimate_counts(&rec.counts());
    assert!((corrected - theta).norm() < (raw - theta).norm());
}

#[test]
fn mitigated_subsampling_tracks_the_bound() {
    let theta = BlochVector::on_z(0.5);
    let p = StPovmParams::matched_to(theta).unwrap();
    let noise = ReadoutNoiseSpec::new(0.01, 0.02, 0.015, 0.01).unwrap();
    let rec = sample_shots(&p, theta, 200_000, 8, Some(noise)).unwrap();
    let m = build_confusion_matrix(&noise);
    let pipe = EstimationPipeline::new(&StMeasurement::new(p).unwrap(), Some(&m), None).unwrap();
    let s = mse_by_subsampling(
        &rec,
        100,
        &pipe,
        &SubsampleOptions {
            n_instances: 300,
            n_resamples: 300,
            seed: 2,
        },
    )
    .unwrap();
    // Mitigation removes the bias but inflates the variance above the ideal bound.
    assert!(s.mean_scaled_mse > nh_bound(0.5).unwrap());
    assert!(s.mean_scaled_mse < 10.0);
}

#[test]
fn exact_model_curve_fits_exactly() {
    let pts = (1..=5)
        .map(|i| MsePoint {
            n: 100 * i,
            mean_scaled_mse: 8.5 + 2e-4 * (100 * i) as f64,
            std_err: 0.0,
        })
        .collect();
    let f = fit_scaling_model(&MseCurve::new(pts, 1000).unwrap()).unwrap();
    assert!((f.c - 8.5).abs() < 1e-10 && (f.delta - 2e-4).abs() < 1e-13);
    assert_eq!((f.c_err, f.delta_err), (0.0, 0.0));
}

#[test]
fn bayes_quadrature_agrees_with_moment_identity_for_offset_centers() {
    let q = BayesQuadrature::default();
    for (c, k, a, m) in [
        (BlochVector::new(0.4, 0.4, -0.1), 7.0, 6.0, RadialMeasure::Marginal),
        (BlochVector::new(-0.2, 0.1, 0.3), 0.5, 1.5, RadialMeasure::Volume),
    ] {
        let spec = PriorSpec::new(c, k, a).unwrap().with_measure(m);
        for rp in [0.0, 0.35, 0.9] {
            let x = bayes_risk(&spec, rp, &q).unwrap();
            let y = bayes_risk_closed_form(&spec, rp).unwrap();
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

/// Golden values shared by the rayon and sequential builds.
#[test]
fn backend_independent_golden_values() {
    let p = StPovmParams::aligned(0.3).unwrap();
    let rec = sample_shots(&p, BlochVector::new(0.2, -0.1, 0.3), 300_000, 77, None).unwrap();
    let s = mse_by_subsampling(
        &rec,
        100,
        &EstimationPipeline::for_record(&rec).unwrap(),
        &SubsampleOptions {
            n_instances: 50,
            n_resamples: 100,
            seed: 78,
        },
    )
    .unwrap();
    assert_eq!(rec.counts(), [44280, 100339, 70913, 84468]);
    assert_eq!(s.mean_scaled_mse.to_bits(), 4621062839866519887);
    assert_eq!(s.std_err.to_bits(), 4580570299723526318);
}
