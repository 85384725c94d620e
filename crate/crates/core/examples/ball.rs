//! Samples the wavefront of unit-speed normal geodesics of length 1 from the
//! origin of the Martinet model.

use nalgebra::DVector;
use srkit::model::ChartModel;
use srkit::ode::Method;
use srkit::solver::ball_sample;

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::martinet();
    let ball = ball_sample(&model, &DVector::zeros(3), 1.0, 500, 42, &Method::default())?;
    let reach = |k: usize| ball.points.iter().map(|p| p.endpoint[k].abs()).fold(0.0, f64::max);
    println!(
        "{} rays, max |x| {:.4}, max |y| {:.4}, max |z| {:.4}",
        ball.points.len(),
        reach(0),
        reach(1),
        reach(2)
    );
    println!("p1,p2,p3,q1,q2,q3");
    for p in ball.points.iter().take(10) {
        println!(
            "{:.5},{:.5},{:.5},{:.5},{:.5},{:.5}",
            p.p0[0], p.p0[1], p.p0[2], p.endpoint[0], p.endpoint[1], p.endpoint[2]
        );
    }
    Ok(())
}
