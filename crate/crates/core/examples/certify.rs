//! Empirical minimality certificates for a Heisenberg geodesic whose planar
//! projection is a circle of perimeter 1. Short pieces are minimizing; past
//! the first conjugate point the oracle finds a shorter competitor.

use std::f64::consts::PI;

use nalgebra::{dvector, DVector};
use srkit::flow::{integrate_geodesic, FlowOptions};
use srkit::minimality::{minimality_certificate, CertificateOptions};
use srkit::model::ChartModel;
use srkit::solver::{BvpSolution, SubmanifoldSpec};

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let q0 = DVector::zeros(3);
    let p0 = dvector![0.0, 1.0, 2.0 * PI];
    let start = SubmanifoldSpec::point(q0.clone());

    for eps in [0.1, 1.2] {
        let traj = integrate_geodesic(&model, &q0, &p0, (0.0, eps), &FlowOptions::default())?;
        let geodesic = BvpSolution::from_geodesic(&model, traj)?;
        let cert = minimality_certificate(&model, &start, &geodesic, eps, &CertificateOptions::default())?;
        println!("{}", serde_json::to_string_pretty(&cert.to_json()).expect("serializable"));
    }
    Ok(())
}
