//! Loads a four-dimensional Engel-type frame from JSON and flows a geodesic
//! in it.

use nalgebra::dvector;
use srkit::flow::{flow_endpoint, hamiltonian};
use srkit::model::{ChartModel, ModelFile};
use srkit::ode::Method;

const ENGEL: &str = r#"{
    "name": "engel",
    "n": 4, "m": 2,
    "frame": [["1", "0", "0", "0"], ["0", "1", "q1", "q1^2/2"]],
    "domain_box": [[-10, 10], [-10, 10], [-10, 10], [-10, 10]]
}"#;

fn main() -> srkit::error::Result<()> {
    let model: ChartModel = ModelFile::from_json(ENGEL)?.into_model()?;
    println!("{}: n = {}, rank {}", model.name(), model.dim(), model.rank());

    let q0 = dvector![0.0, 0.0, 0.0, 0.0];
    let p0 = dvector![0.3, 1.0, 0.5, 2.0];
    let end = flow_endpoint(&model, &q0, &p0, (0.0, 1.0), &Method::default())?;
    println!("q(1) = {:.6?}", end.q.as_slice());
    println!("H: {:.12} -> {:.12}", hamiltonian(&model, &q0, &p0)?, hamiltonian(&model, &end.q, &end.p)?);
    Ok(())
}
