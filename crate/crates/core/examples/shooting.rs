//! Point-to-point shooting in the Heisenberg group, checked against the
//! direct-transcription oracle.

use nalgebra::dvector;
use srkit::model::ChartModel;
use srkit::solver::{direct_minimize, shoot_point_to_point, DirectOptions, ShootOptions};

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let q0 = dvector![0.0, 0.0, 0.0];
    let q1 = dvector![0.3, -0.1, 0.08];

    let solutions = shoot_point_to_point(&model, &q0, &q1, (0.0, 1.0), &ShootOptions::default())?;
    for s in &solutions {
        println!(
            "p0 = {:>8.4?}  action {:.8}  length {:.8}  residual {:.1e}  converged {}",
            s.p0.as_slice(),
            s.action,
            s.length,
            s.residual,
            s.converged
        );
    }

    let oracle = direct_minimize(
        &model,
        &q0,
        &q1,
        (0.0, 1.0),
        &DirectOptions {
            intervals: 128,
            starts: 3,
            ..Default::default()
        },
    )?;
    println!("oracle action {:.8} (residual {:.1e})", oracle.action, oracle.endpoint_residual);
    if let Some(best) = solutions.first() {
        println!("relative gap {:+.2e}", (best.action - oracle.action) / oracle.action);
    }
    Ok(())
}
