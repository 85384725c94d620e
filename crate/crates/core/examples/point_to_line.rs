//! Shortest geodesic from the origin to a vertical line, with the
//! transversality condition on the final covector.

use nalgebra::{dvector, DMatrix};
use srkit::model::ChartModel;
use srkit::solver::{shoot_to_submanifolds, ShootOptions, SubmanifoldSpec};

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let origin = SubmanifoldSpec::point(dvector![0.0, 0.0, 0.0]);
    let line = SubmanifoldSpec::affine(dvector![0.4, 0.2, 0.0], DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]))?;

    let sols = shoot_to_submanifolds(&model, &origin, &line, (0.0, 1.0), &ShootOptions::default())?;
    for s in sols.iter().filter(|s| s.converged) {
        let end = s.trajectory.final_state().expect("non-empty trajectory");
        println!("endpoint {:.6?}  length {:.6}  p(b)·e3 = {:.1e}", end.q.as_slice(), s.length, end.p[2]);
    }

    // A line inside the horizontal plane at height 0.5 misses transversality.
    let bad = SubmanifoldSpec::affine(dvector![0.0, 0.0, 0.5], DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))?;
    match shoot_to_submanifolds(&model, &origin, &bad, (0.0, 1.0), &ShootOptions::default()) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}
