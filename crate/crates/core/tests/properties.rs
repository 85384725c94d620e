use nalgebra::DVector;
use proptest::prelude::*;

use srkit::endpoint::{adjoint_integrate, controls_to_curve, fundamental_solution, Anchor, ControlCurve};
use srkit::flow::{flow_endpoint, hamiltonian, integrate_geodesic, FlowOptions};
use srkit::model::ChartModel;
use srkit::ode::Method;
use srkit::reparam::{arclength_profile, unit_speed_reparam};
use srkit::solver::{action, length};

fn model(k: usize) -> ChartModel {
    match k {
        0 => ChartModel::flat(3, 2),
        1 => ChartModel::heisenberg(),
        _ => ChartModel::martinet(),
    }
}

fn vec3(r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::array::uniform3(-r..r).prop_map(|a| DVector::from_row_slice(&a))
}

/// Piecewise-constant horizontal controls from a few harmonics.
fn controls(m: &ChartModel, q0: DVector<f64>, coeffs: &[f64; 6], intervals: usize) -> ControlCurve {
    let rank = m.rank();
    ControlCurve::from_fn(q0, (0.0, 1.0), intervals, |t| {
        let mut h = DVector::zeros(3);
        for i in 0..rank {
            h[i] = coeffs[3 * i] + coeffs[3 * i + 1] * (6.0 * t).sin() + coeffs[3 * i + 2] * (4.0 * t).cos();
        }
        h
    })
    .unwrap()
}

fn tight() -> Method {
    Method::adaptive(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hamiltonian_is_conserved(k in 0usize..3, q0 in vec3(1.0), p0 in vec3(2.0)) {
        let m = model(k);
        let h0 = hamiltonian(&m, &q0, &p0).unwrap();
        prop_assume!(h0 > 1e-4);
        let traj = integrate_geodesic(&m, &q0, &p0, (0.0, 1.0), &FlowOptions::adaptive(1e-10)).unwrap();
        prop_assert!(traj.energy_drift(&m) / h0 <= 1e-8);
    }

    #[test]
    fn hamiltonian_is_quadratic_in_p(k in 0usize..3, q in vec3(1.0), p in vec3(2.0), c in 0.1f64..3.0) {
        let m = model(k);
        let h = hamiltonian(&m, &q, &p).unwrap();
        let hc = hamiltonian(&m, &q, &(&p * c)).unwrap();
        prop_assert!((hc - c * c * h).abs() <= 1e-12 * (1.0 + hc.abs()));
        prop_assert!(h >= 0.0);
    }

    #[test]
    fn flow_is_time_reversible(k in 0usize..3, q0 in vec3(0.5), p0 in vec3(1.5)) {
        let m = model(k);
        let fwd = flow_endpoint(&m, &q0, &p0, (0.0, 1.0), &tight()).unwrap();
        let back = flow_endpoint(&m, &fwd.q, &(-&fwd.p), (0.0, 1.0), &tight()).unwrap();
        prop_assert!((&back.q - &q0).amax() <= 1e-8);
        prop_assert!((&back.p + &p0).amax() <= 1e-8);
    }

    #[test]
    fn affine_rescaling_reaches_the_same_point(k in 0usize..3, q0 in vec3(0.5), p0 in vec3(1.5), c in 0.25f64..4.0) {
        let m = model(k);
        let base = flow_endpoint(&m, &q0, &p0, (0.0, 1.0), &tight()).unwrap();
        let scaled = flow_endpoint(&m, &q0, &(&p0 * c), (0.0, 1.0 / c), &tight()).unwrap();
        prop_assert!((&base.q - &scaled.q).amax() <= 1e-8 * (1.0 + base.q.amax()));
        prop_assert!((&base.p * c - &scaled.p).amax() <= 1e-8 * c * (1.0 + base.p.amax()));
    }

    #[test]
    fn adjoint_pairing_is_invariant(k in 0usize..3, q0 in vec3(0.5), coeffs in prop::array::uniform6(-1.0f64..1.0), eta in vec3(1.0), v in vec3(1.0)) {
        let m = model(k);
        let c = controls(&m, q0, &coeffs, 24);
        let fs = fundamental_solution(&m, &c).unwrap();
        let path = adjoint_integrate(&m, &c, &eta, Anchor::Start).unwrap();
        let base = eta.dot(&v);
        for (e, phi) in path.iter().zip(&fs.phi) {
            prop_assert!((e.dot(&(phi * &v)) - base).abs() <= 1e-9 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn reparam_is_idempotent_and_keeps_length(k in 0usize..3, q0 in vec3(0.5), coeffs in prop::array::uniform6(0.2f64..1.0)) {
        let m = model(k);
        let c = controls(&m, q0, &coeffs, 40);
        let l = length(&m, &c).unwrap();
        let once = unit_speed_reparam(&m, &c).unwrap();
        let twice = unit_speed_reparam(&m, &once).unwrap();
        prop_assert!((length(&m, &once).unwrap() - l).abs() <= 1e-10 * (1.0 + l));
        prop_assert!((action(&m, &once).unwrap() - 0.5 * l).abs() <= 1e-10 * (1.0 + l));
        prop_assert_eq!(once.intervals(), twice.intervals());
        for (a, b) in once.grid.iter().zip(&twice.grid) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let end_c = controls_to_curve(&m, &c).unwrap();
        let end_once = controls_to_curve(&m, &once).unwrap();
        prop_assert!((end_c.end() - end_once.end()).amax() <= 1e-9);
    }

    #[test]
    fn arclength_profile_is_monotone(k in 0usize..3, q0 in vec3(0.5), coeffs in prop::array::uniform6(-1.0f64..1.0)) {
        let m = model(k);
        let p = arclength_profile(&m, &controls(&m, q0, &coeffs, 30)).unwrap();
        prop_assert!(p.values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((p.values[p.values.len() - 1] - p.length).abs() == 0.0);
    }

    #[test]
    fn cauchy_schwarz_between_length_and_action(k in 0usize..3, q0 in vec3(0.5), coeffs in prop::array::uniform6(-1.0f64..1.0)) {
        let m = model(k);
        let c = controls(&m, q0, &coeffs, 30);
        let (l, e) = (length(&m, &c).unwrap(), action(&m, &c).unwrap());
        prop_assert!(l * l <= 2.0 * e * (1.0 + 1e-12) + 1e-15);
    }
}
