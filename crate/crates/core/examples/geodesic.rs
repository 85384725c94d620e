//! Integrates a Heisenberg geodesic and prints the trajectory as CSV.
//!
//! With `p0 = (1, 0, 2π)` the projection to the plane is a full circle of
//! perimeter 1, and the curve lifts to `(0, 0, 1/(4π))`.

use std::f64::consts::PI;

use nalgebra::dvector;
use srkit::flow::{integrate_geodesic, FlowOptions};
use srkit::model::ChartModel;

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let q0 = dvector![0.0, 0.0, 0.0];
    let p0 = dvector![1.0, 0.0, 2.0 * PI];
    let opts = FlowOptions::adaptive(1e-12).with_samples(Some(20));
    let traj = integrate_geodesic(&model, &q0, &p0, (0.0, 1.0), &opts)?;

    traj.write_csv(&model, std::io::stdout().lock())?;
    eprintln!("endpoint  {:?}", traj.end().as_slice());
    eprintln!("expected  [0, 0, {}]", 1.0 / (4.0 * PI));
    eprintln!("H drift   {:.2e}", traj.energy_drift(&model));
    Ok(())
}
