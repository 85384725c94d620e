use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, flow_endpoint};
use crate::model::ChartModel;
use crate::ode::Method;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallPoint {
    pub p0: Vec<f64>,
    pub endpoint: Vec<f64>,
    /// Arclength travelled; shorter than the radius when the ray left the chart.
    pub length: f64,
    pub exited: bool,
}

/// Endpoints of unit-speed normal geodesics of length `radius`.
///
/// This samples the normal-geodesic wavefront: each label is an upper bound
/// for the distance to `q0`, since minimizers may be abnormal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallSample {
    pub center: Vec<f64>,
    pub radius: f64,
    pub points: Vec<BallPoint>,
}

/// Shoots `num_rays` covectors drawn uniformly in direction and rescaled to
/// `H = ½`; rays run for time `radius`.
pub fn ball_sample(model: &ChartModel, q0: &DVector<f64>, radius: f64, num_rays: usize, seed: u64, method: &Method) -> Result<BallSample> {
    model.check_domain(q0.as_slice())?;
    if !(radius >= 0.0) {
        return Err(Error::invalid("radius must be nonnegative"));
    }
    let center = q0.as_slice().to_vec();
    if radius == 0.0 {
        return Ok(BallSample {
            center: center.clone(),
            radius,
            points: vec![BallPoint {
                p0: vec![0.0; model.dim()],
                endpoint: center,
                length: 0.0,
                exited: false,
            }],
        });
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covectors = Vec::with_capacity(num_rays);
    while covectors.len() < num_rays {
        let v = DVector::from_fn(n, |_, _| {
            let u: f64 = 1.0 - rng.random::<f64>();
            let w: f64 = rng.random::<f64>();
            (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * w).cos()
        });
        let h = flow::energy(model, q0.as_slice(), v.as_slice());
        if h > 1e-12 {
            covectors.push(v / (2.0 * h).sqrt());
        }
    }
    let points = covectors
        .par_iter()
        .map(|p0| match flow_endpoint(model, q0, p0, (0.0, radius), method) {
            Ok(end) => Ok(BallPoint {
                p0: p0.as_slice().to_vec(),
                endpoint: end.q.as_slice().to_vec(),
                length: radius,
                exited: false,
            }),
            Err(Error::OutOfChart { point, time, .. }) => Ok(BallPoint {
                p0: p0.as_slice().to_vec(),
                endpoint: point,
                length: time.unwrap_or(0.0),
                exited: true,
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BallSample { center, radius, points })
}
