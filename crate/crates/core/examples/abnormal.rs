//! Rank of the endpoint differential along three curves.

use nalgebra::{dvector, DVector};
use srkit::endpoint::{endpoint_differential_gramian, geodesic_controls, ControlCurve, RankTolerance};
use srkit::model::ChartModel;
use srkit::ode::Method;

fn show(label: &str, model: &ChartModel, c: &ControlCurve) -> srkit::error::Result<()> {
    let r = endpoint_differential_gramian(model, c, RankTolerance::default())?;
    println!(
        "{label:<28} {:?} rank {} σ = {:?}",
        r.verdict,
        r.rank,
        r.singular_values.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>()
    );
    for ch in &r.characteristics {
        println!(
            "{:<28} η(a) = {:.3?}  η(b) = {:.3?}  violation {:.1e}",
            "", ch.eta_a, ch.eta_b, ch.max_violation
        );
    }
    Ok(())
}

fn main() -> srkit::error::Result<()> {
    let martinet = ChartModel::martinet();
    // The singular curve x = z = 0 of the Martinet distribution.
    let line = ControlCurve::constant(DVector::zeros(3), (0.0, 1.0), 64, dvector![0.0, 1.0, 0.0])?;
    show("martinet y-axis", &martinet, &line)?;

    let shifted = ControlCurve::constant(dvector![0.5, 0.0, 0.0], (0.0, 1.0), 64, dvector![0.0, 1.0, 0.0])?;
    show("martinet line at x = 0.5", &martinet, &shifted)?;

    let heis = ChartModel::heisenberg();
    let arc = geodesic_controls(&heis, &DVector::zeros(3), &dvector![1.0, 0.0, 3.0], (0.0, 1.0), 64, &Method::default())?;
    show("heisenberg geodesic", &heis, &arc)?;
    Ok(())
}
