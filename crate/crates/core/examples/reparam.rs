//! Unit-speed reparameterization of a curve with speed `2t`.

use nalgebra::{dvector, DVector};
use srkit::endpoint::{controls_to_curve, ControlCurve};
use srkit::model::ChartModel;
use srkit::reparam::{arclength_profile, unit_speed_reparam};
use srkit::solver::{action, length};

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let c = ControlCurve::from_fn(DVector::zeros(3), (0.0, 1.0), 400, |t| {
        let a = t * t;
        dvector![2.0 * t * a.cos(), 2.0 * t * a.sin(), 0.0]
    })?;

    let profile = arclength_profile(&model, &c)?;
    println!("σ(0.5) = {:.6} (t² gives 0.25)", profile.eval(0.5));

    let r = unit_speed_reparam(&model, &c)?;
    println!("length {:.10} -> {:.10}", length(&model, &c)?, length(&model, &r)?);
    println!("action {:.10} -> {:.10}", action(&model, &c)?, action(&model, &r)?);

    // At unit speed the curve is (sin s, 1 - cos s, (s - sin s)/2).
    let curve = controls_to_curve(&model, &r)?;
    let worst = curve
        .grid
        .iter()
        .zip(&curve.q)
        .map(|(s, q)| (q - dvector![s.sin(), 1.0 - s.cos(), 0.5 * (s - s.sin())]).amax())
        .fold(0.0, f64::max);
    println!("max deviation from the closed form {worst:.2e}");
    Ok(())
}
