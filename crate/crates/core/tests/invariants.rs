//! Property-based invariants across modules.

use nalgebra::Vector3;
use proptest::prelude::*;
use qtomo::bounds::nh_bound;
use qtomo::naimark::{apply_dilated_measurement, dilate};
use qtomo::noisekit::{build_confusion_matrix, decompose_mixed, mitigate, ReadoutNoiseSpec};
use qtomo::povm::{build_st_povm, outcome_probabilities, StGeometry, StMeasurement, StPovmParams};
use qtomo::qstate::{bloch_to_density, density_to_bloch, trace_norm_distance};
use qtomo::{BlochVector, RotationSpec};

fn unit_dir() -> impl Strategy<Value = BlochVector> {
    (-1.0f64..=1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let s = (1.0 - z * z).sqrt();
        BlochVector::new(s * phi.cos(), s * phi.sin(), z)
    })
}

fn bloch_in_ball() -> impl Strategy<Value = BlochVector> {
    (unit_dir(), 0.0f64..=1.0).prop_map(|(d, u)| d * u.cbrt())
}

fn st_params() -> impl Strategy<Value = StPovmParams> {
    (0.0f64..0.995, 0.0f64..std::f64::consts::TAU, unit_dir())
        .prop_map(|(rp, phi, o)| StPovmParams::new(rp, phi, o).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trace_distance_is_euclidean(a in bloch_in_ball(), b in bloch_in_ball()) {
        let d = trace_norm_distance(&bloch_to_density(a).unwrap(), &bloch_to_density(b).unwrap());
        prop_assert!((d - (a - b).norm()).abs() < 1e-12);
    }

    #[test]
    fn density_round_trip(t in bloch_in_ball()) {
        let back = density_to_bloch(&bloch_to_density(t).unwrap());
        prop_assert!((back - t).norm() < 1e-14);
    }

    #[test]
    fn st_povm_is_a_valid_measurement(p in st_params(), t in bloch_in_ball()) {
        let povm = build_st_povm(&p).unwrap();
        prop_assert!(povm.completeness_residual() < 1e-12);
        let probs = outcome_probabilities(&povm, &bloch_to_density(t).unwrap());
        prop_assert!(probs.iter().all(|&q| q > -1e-14));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let geo = StGeometry::new(&p).unwrap().probabilities(t);
        for (a, b) in probs.iter().zip(geo) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn estimator_is_unbiased(p in st_params(), t in bloch_in_ball()) {
        let m = StMeasurement::new(p).unwrap();
        let probs = m.probabilities(t).unwrap();
        let est = m.estimate(&probs).unwrap();
        prop_assert!((est - t).norm() < 1e-11);
    }

    #[test]
    fn no_st_member_beats_the_nh_bound(p in st_params(), t in bloch_in_ball()) {
        let mse = StGeometry::new(&p).unwrap().expected_mse(t);
        prop_assert!(mse >= nh_bound(t.norm()).unwrap() - 1e-9);
    }

    #[test]
    fn matched_member_saturates_the_bound(t in bloch_in_ball()) {
        prop_assume!(t.norm() < 0.995);
        let p = StPovmParams::matched_to(t).unwrap();
        let mse = StGeometry::new(&p).unwrap().expected_mse(t);
        prop_assert!((mse - nh_bound(t.norm()).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rotations_compose_and_invert(axis in unit_dir(), angle in -6.0f64..6.0, v in bloch_in_ball()) {
        let r = RotationSpec::about_axis(axis.to_vector(), angle);
        prop_assert!((r.apply_inverse(r.apply(v)) - v).norm() < 1e-13);
        prop_assert!((r.inverse().apply(r.apply(v)) - v).norm() < 1e-13);
        // The SU(2) and SO(3) parts describe the same rotation.
        let rho = bloch_to_density(v).unwrap();
        let rotated = density_to_bloch(&rho.conjugated(&r.su2));
        prop_assert!((rotated - r.apply(v)).norm() < 1e-12);
    }

    #[test]
    fn align_to_z_maps_axis_onto_z(axis in unit_dir(), len in 0.1f64..1.0) {
        let r = RotationSpec::align_to_z(axis * len).unwrap();
        prop_assert!((r.apply(axis) - BlochVector::Z).norm() < 1e-12);
    }

    #[test]
    fn dilation_reproduces_probabilities(p in st_params(), t in bloch_in_ball()) {
        let povm = build_st_povm(&p).unwrap();
        let d = dilate(&povm).unwrap();
        prop_assert!(d.unitarity_error() < 1e-11);
        let rho = bloch_to_density(t).unwrap();
        let a = apply_dilated_measurement(&d, &rho);
        let b = outcome_probabilities(&povm, &rho);
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn confusion_matrix_is_stochastic_and_invertible(
        a in 0.0f64..0.3, b in 0.0f64..0.3, c in 0.0f64..0.3, d in 0.0f64..0.3,
        f in proptest::array::uniform4(0.0f64..1.0),
    ) {
        let m = build_confusion_matrix(&ReadoutNoiseSpec::new(a, b, c, d).unwrap());
        for j in 0..4 {
            prop_assert!((m.matrix().column(j).sum() - 1.0).abs() < 1e-14);
        }
        let s: f64 = f.iter().sum();
        prop_assume!(s > 1e-3);
        let f = f.map(|x| x / s);
        let back = mitigate(&m.apply(&f), &m).unwrap();
        for (x, y) in back.iter().zip(f) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_decomposition_averages_to_theta(t in bloch_in_ball()) {
        let d = decompose_mixed(t).unwrap();
        let mix = d.states[0] * d.p_first + d.states[1] * (1.0 - d.p_first);
        prop_assert!((mix - t).norm() < 1e-12);
        for s in d.states {
            prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&d.p_first));
    }
}

#[test]
fn sic_member_is_isotropic_in_its_error() {
    let p = StPovmParams::sic(BlochVector::new(0.3, 0.1, -0.2), 0.7).unwrap();
    let g = StGeometry::new(&p).unwrap();
    let r = 0.6;
    let a = g.expected_mse(BlochVector::new(r, 0.0, 0.0));
    let b = g.expected_mse(BlochVector::from(Vector3::new(0.0, -1.0, 1.0).normalize() * r));
    assert!((a - b).abs() < 1e-12);
    assert!((a - (9.0 - r * r)).abs() < 1e-12);
}
