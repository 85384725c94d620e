//! Wavefront chart of the plane x + z = 0 in the Heisenberg group and the
//! calibration check of its eikonal covector.

use nalgebra::{dvector, DVector};
use srkit::minimality::{build_wavefront, calibration_check, lower_bound_check, CalibrationOptions, Hypersurface, WavefrontGrid};
use srkit::model::ChartModel;
use srkit::ode::Method;
use srkit::solver::SubmanifoldSpec;

fn main() -> srkit::error::Result<()> {
    let model = ChartModel::heisenberg();
    let plane = Hypersurface::new(SubmanifoldSpec::expressions(&["q1 + q3"], DVector::zeros(3))?)?;
    let seed = dvector![1.0, 0.0, 1.0];

    for spacing in [0.02, 0.01, 0.005] {
        let grid = WavefrontGrid::centered((0.0, 0.2), 0.05, 2, spacing);
        let chart = build_wavefront(&model, &plane, &seed, &grid, &Method::default())?;
        let report = calibration_check(&chart, &CalibrationOptions::default())?;
        println!(
            "spacing {spacing:<6} samples {:>6}  min |det dF| {:.3}  residual {:.3e}",
            chart.samples.len(),
            chart.min_abs_det(),
            report.residual()
        );
        if spacing == 0.01 {
            let bound = lower_bound_check(&chart, 100, 1)?;
            println!("{:>15} {} test curves, min (length - Δτ) {:+.2e}", "", bound.curves, bound.worst_margin);
        }
    }
    Ok(())
}
