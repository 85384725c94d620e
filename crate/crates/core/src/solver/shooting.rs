use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::newton::{damped_newton, NewtonOutcome, NewtonSettings};
use super::submanifold::{SubmanifoldSpec, TransversalityCertificate};
use super::{action, length, recover_multiplier, BvpSolution};
use crate::error::{Error, Result};
use crate::flow::{self, flow_endpoint, flow_linearization, integrate_geodesic, FlowOptions};
use crate::model::ChartModel;

/// Settings shared by the shooting solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub flow: FlowOptions,
    /// Number of random initial covectors.
    pub seeds: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Boundary residual tolerance (max norm).
    pub tol: f64,
    /// Solutions closer than this in `p0 (b - a)` are merged.
    pub dedupe_radius: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            flow: FlowOptions::default(),
            seeds: 32,
            seed: 0,
            max_iter: 50,
            tol: 1e-10,
            dedupe_radius: 1e-4,
        }
    }
}

/// Standard normal deviate by Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Initial covectors: the straight-line guess `ḡ(Δq)/T` when a target
/// displacement is known, then random unit directions scaled to `H = ½`
/// and divided by the duration.
fn initial_covectors(model: &ChartModel, q0: &DVector<f64>, displacement: Option<DVector<f64>>, duration: f64, opts: &ShootOptions) -> Vec<DVector<f64>> {
    let n = model.dim();
    let mut out = Vec::with_capacity(opts.seeds + 1);
    if let Some(dq) = displacement.filter(|d| d.amax() > 0.0) {
        if let Some(p) = model.dual_metric_at(q0.as_slice()).lu().solve(&dq) {
            out.push(p / duration);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut produced = 0;
    let mut guard = 0;
    while produced < opts.seeds && guard < 100 * (opts.seeds + 1) {
        guard += 1;
        let v = DVector::from_fn(n, |_, _| gaussian(&mut rng));
        let p = v.normalize();
        let h = flow::energy(model, q0.as_slice(), p.as_slice());
        if h < 1e-12 {
            continue;
        }
        out.push(p / (2.0 * h).sqrt() / duration);
        produced += 1;
    }
    out
}

fn settings(opts: &ShootOptions) -> NewtonSettings {
    NewtonSettings {
        max_iter: opts.max_iter,
        tol: opts.tol,
        max_step: 4.0,
    }
}

/// Damped-Newton shooting on `p0 ↦ q(b; q0, p0) - q1` with multistart.
/// Returns every distinct converged solution sorted by action; when nothing
/// converges the best attempt is returned with `converged = false`.
pub fn shoot_point_to_point(model: &ChartModel, q0: &DVector<f64>, q1: &DVector<f64>, span: (f64, f64), opts: &ShootOptions) -> Result<Vec<BvpSolution>> {
    model.check_domain(q0.as_slice())?;
    model.check_domain(q1.as_slice())?;
    let duration = span.1 - span.0;
    if !(duration > 0.0) {
        return Err(Error::invalid("span must satisfy b > a"));
    }
    let method = opts.flow.method;
    let flow_opts = FlowOptions {
        samples: None,
        ..opts.flow.clone()
    };
    let mut seeds = Vec::new();
    if (q1 - q0).amax() <= opts.tol {
        seeds.push(DVector::zeros(model.dim()));
    }
    seeds.extend(initial_covectors(model, q0, Some(q1 - q0), duration, opts));

    let outcomes: Vec<Option<NewtonOutcome>> = seeds
        .par_iter()
        .map(|p0| {
            damped_newton(
                p0.clone(),
                &settings(opts),
                |p| {
                    let lin = flow_linearization(model, q0, p, span, &flow_opts)?;
                    Ok((&lin.end.q - q1, lin.dq_dp0()))
                },
                |p| Ok(flow_endpoint(model, q0, p, span, &method)?.q - q1),
            )
            .ok()
        })
        .collect();

    let candidates: Vec<(DVector<f64>, DVector<f64>, NewtonOutcome)> = outcomes.into_iter().flatten().map(|o| (q0.clone(), o.z.clone(), o)).collect();
    finish(model, candidates, span, opts, |q_end| vec![(q_end - q1).amax()], None)
}

/// Turns Newton outcomes into deduplicated, sorted solutions.
fn finish(
    model: &ChartModel,
    candidates: Vec<(DVector<f64>, DVector<f64>, NewtonOutcome)>,
    span: (f64, f64),
    opts: &ShootOptions,
    boundary: impl Fn(&DVector<f64>) -> Vec<f64> + Sync,
    contact: Option<&(dyn Fn(&BvpSolution) -> TransversalityCertificate + Sync)>,
) -> Result<Vec<BvpSolution>> {
    let duration = span.1 - span.0;
    let any_converged = candidates.iter().any(|c| c.2.converged);
    let mut pool: Vec<_> = if any_converged {
        candidates.into_iter().filter(|c| c.2.converged).collect()
    } else {
        let best = candidates
            .into_iter()
            .min_by(|a, b| a.2.residual.total_cmp(&b.2.residual))
            .ok_or(Error::NoConvergence { residual: f64::INFINITY })?;
        vec![best]
    };

    let mut solutions: Vec<BvpSolution> = pool
        .par_drain(..)
        .filter_map(|(q0, p0, outcome)| {
            let trajectory = integrate_geodesic(model, &q0, &p0, span, &opts.flow).ok()?;
            let residuals = boundary(trajectory.end());
            let residual = residuals.iter().copied().fold(outcome.residual, f64::max);
            let multiplier = recover_multiplier(model, &trajectory).ok();
            Some(BvpSolution {
                action: action(model, &trajectory).ok()?,
                length: length(model, &trajectory).ok()?,
                q0,
                p0,
                span,
                trajectory,
                boundary_residuals: residuals,
                residual,
                multiplier,
                iterations: outcome.iterations,
                converged: outcome.converged,
                transversality: None,
            })
        })
        .collect();
    if let Some(certify) = contact {
        for s in &mut solutions {
            s.transversality = Some(certify(s));
        }
        if solutions.iter().all(|s| s.transversality.as_ref().is_some_and(|c| !c.transversal)) {
            if let Some(c) = solutions.first().and_then(|s| s.transversality.clone()) {
                return Err(Error::TransversalityFailure {
                    point: c.point,
                    rank: c.rank,
                    dim: c.dim,
                });
            }
        }
        solutions.retain(|s| s.transversality.as_ref().is_none_or(|c| c.transversal));
    }
    // Equal actions (to 1e-9) are ordered by the smallest lift, then lexically.
    solutions.sort_by(|a, b| {
        let key = |s: &BvpSolution| (s.action * 1e9).round() as i64;
        key(a)
            .cmp(&key(b))
            .then_with(|| a.p0.norm().total_cmp(&b.p0.norm()))
            .then_with(|| lexical(&a.p0, &b.p0))
            .then_with(|| lexical(&a.q0, &b.q0))
    });
    // Lifts are not unique along abnormal curves, so two solutions also
    // coincide when their sampled curves do.
    let mut unique: Vec<BvpSolution> = Vec::new();
    for s in solutions {
        let duplicate = unique.iter().any(|u| {
            let same_lift = ((&u.p0 - &s.p0) * duration).norm() <= opts.dedupe_radius && (&u.q0 - &s.q0).norm() <= opts.dedupe_radius;
            same_lift || same_curve(u, &s, opts.dedupe_radius)
        });
        if !duplicate {
            unique.push(s);
        }
    }
    if unique.is_empty() {
        return Err(Error::NoConvergence { residual: f64::INFINITY });
    }
    Ok(unique)
}

fn same_curve(a: &BvpSolution, b: &BvpSolution, radius: f64) -> bool {
    a.trajectory.len() == b.trajectory.len()
        && a.trajectory.grid == b.trajectory.grid
        && a.trajectory.q.iter().zip(&b.trajectory.q).all(|(x, y)| (x - y).amax() <= radius)
}

fn lexical(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// `∂/∂q (B(q)ᵀ p)` for the aligned tangent basis, by central differences.
fn tangent_pairing_jacobian(spec: &SubmanifoldSpec, q: &DVector<f64>, p: &DVector<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.len();
    let d = reference.ncols();
    let mut out = DMatrix::zeros(d, n);
    if d == 0 {
        return out;
    }
    let mut x = q.clone();
    for k in 0..n {
        let h = crate::linalg::fd_step(q[k], 1e-6, 1e-7);
        x[k] = q[k] + h;
        let plus = spec.tangent_basis(x.as_slice(), Some(reference)).transpose() * p;
        x[k] = q[k] - h;
        let minus = spec.tangent_basis(x.as_slice(), Some(reference)).transpose() * p;
        x[k] = q[k];
        out.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    out
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(len, parts.iter().flat_map(|p| p.iter().copied()))
}

/// Shooting between a start set `P` and a target set `Q`.
///
/// Unknowns are `(q0, p0)`; the conditions are `q0 ∈ P`, `q(b) ∈ Q`,
/// `p(a)` annihilating `T_{q0}P` and `p(b)` annihilating `T_{q(b)}Q`.
pub fn shoot_to_submanifolds(
    model: &ChartModel,
    start: &SubmanifoldSpec,
    target: &SubmanifoldSpec,
    span: (f64, f64),
    opts: &ShootOptions,
) -> Result<Vec<BvpSolution>> {
    if let (SubmanifoldSpec::Point(a), SubmanifoldSpec::Point(b)) = (start, target) {
        return shoot_point_to_point(model, a, b, span, opts);
    }
    let n = model.dim();
    if start.dim() != n || target.dim() != n {
        return Err(Error::invalid("submanifold dimension does not match the model"));
    }
    let duration = span.1 - span.0;
    if !(duration > 0.0) {
        return Err(Error::invalid("span must satisfy b > a"));
    }
    model.check_domain(start.anchor().as_slice())?;
    model.check_domain(target.anchor().as_slice())?;
    // The constrained end must meet the distribution transversally.
    let target_side = !target.is_point();
    let checked = if target_side { target } else { start };
    checked.transversality(model, checked.anchor().as_slice()).into_result()?;

    let ref_p = start.tangent_basis(start.anchor().as_slice(), None);
    let ref_q = target.tangent_basis(target.anchor().as_slice(), None);
    let method = opts.flow.method;
    let flow_opts = FlowOptions {
        samples: None,
        ..opts.flow.clone()
    };

    let residual_at = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let q0 = z.rows(0, n).into_owned();
        let p0 = z.rows(n, n).into_owned();
        let end = flow_endpoint(model, &q0, &p0, span, &method)?;
        Ok(stack(&[
            start.value(q0.as_slice()),
            target.value(end.q.as_slice()),
            start.tangent_basis(q0.as_slice(), Some(&ref_p)).transpose() * &p0,
            target.tangent_basis(end.q.as_slice(), Some(&ref_q)).transpose() * &end.p,
        ]))
    };
    let eval = |z: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q0 = z.rows(0, n).into_owned();
        let p0 = z.rows(n, n).into_owned();
        let lin = flow_linearization(model, &q0, &p0, span, &flow_opts)?;
        let (qb, pb) = (&lin.end.q, &lin.end.p);
        let bp = start.tangent_basis(q0.as_slice(), Some(&ref_p));
        let bq = target.tangent_basis(qb.as_slice(), Some(&ref_q));
        let r = stack(&[
            start.value(q0.as_slice()),
            target.value(qb.as_slice()),
            bp.transpose() * &p0,
            bq.transpose() * pb,
        ]);
        let dq_b = lin.jacobian.rows(0, n).into_owned();
        let dp_b = lin.jacobian.rows(n, n).into_owned();
        let mut jac = DMatrix::zeros(r.len(), 2 * n);
        let mut row = 0;
        let rp = start.codim();
        jac.view_mut((row, 0), (rp, n)).copy_from(&start.jacobian(q0.as_slice()));
        row += rp;
        let rq = target.codim();
        jac.view_mut((row, 0), (rq, 2 * n)).copy_from(&(target.jacobian(qb.as_slice()) * &dq_b));
        row += rq;
        let dp = bp.ncols();
        if dp > 0 {
            jac.view_mut((row, 0), (dp, n)).copy_from(&tangent_pairing_jacobian(start, &q0, &p0, &ref_p));
            jac.view_mut((row, n), (dp, n)).copy_from(&bp.transpose());
            row += dp;
        }
        let dq = bq.ncols();
        if dq > 0 {
            let dpair = tangent_pairing_jacobian(target, qb, pb, &ref_q) * &dq_b + bq.transpose() * &dp_b;
            jac.view_mut((row, 0), (dq, 2 * n)).copy_from(&dpair);
        }
        Ok((r, jac))
    };

    let q_start = start.anchor().clone();
    let seeds = initial_covectors(model, &q_start, Some(target.anchor() - &q_start), duration, opts);
    let outcomes: Vec<Option<NewtonOutcome>> = seeds
        .par_iter()
        .map(|p0| damped_newton(stack(&[q_start.clone(), p0.clone()]), &settings(opts), eval, residual_at).ok())
        .collect();
    let candidates = outcomes
        .into_iter()
        .flatten()
        .map(|o| (o.z.rows(0, n).into_owned(), o.z.rows(n, n).into_owned(), o))
        .collect();
    let certify = |s: &BvpSolution| {
        if target_side {
            target.transversality(model, s.endpoint().as_slice())
        } else {
            start.transversality(model, s.q0.as_slice())
        }
    };
    finish(
        model,
        candidates,
        span,
        opts,
        |q_end| vec![target.value(q_end.as_slice()).amax()],
        Some(&certify),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn quick() -> ShootOptions {
        ShootOptions {
            seeds: 8,
            ..Default::default()
        }
    }

    #[test]
    fn coincident_endpoints_give_trivial_solution_first() {
        let model = ChartModel::heisenberg();
        let q = dvector![0.1, 0.2, 0.3];
        let sols = shoot_point_to_point(&model, &q, &q, (0.0, 1.0), &quick()).unwrap();
        assert_eq!(sols[0].p0.amax(), 0.0);
        assert_eq!(sols[0].action, 0.0);
    }

    #[test]
    fn flat_straight_line() {
        let model = ChartModel::flat(3, 2);
        let sols = shoot_point_to_point(&model, &DVector::zeros(3), &dvector![1.0, 1.0, 0.0], (0.0, 2.0), &quick()).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((&sols[0].p0 - dvector![0.5, 0.5, 0.0]).amax() < 1e-12);
        assert!((sols[0].action - 0.5).abs() < 1e-12);
        assert!(sols[0].residual <= 1e-10);
    }

    #[test]
    fn heisenberg_vertical_target() {
        let model = ChartModel::heisenberg();
        let sols = shoot_point_to_point(&model, &DVector::zeros(3), &dvector![0.0, 0.0, 0.1], (0.0, 1.0), &ShootOptions::default()).unwrap();
        let best = &sols[0];
        assert!(best.converged);
        // Circle enclosing area 0.1: action 2π · 0.1.
        assert!((best.action - 0.2 * PI).abs() < 1e-6, "{}", best.action);
        assert!((best.p0[2].abs() - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn flat_point_to_plane() {
        let model = ChartModel::flat(3, 2);
        let plane = SubmanifoldSpec::expressions(&["q1 - 1"], DVector::zeros(3)).unwrap();
        let sols = shoot_to_submanifolds(&model, &SubmanifoldSpec::point(DVector::zeros(3)), &plane, (0.0, 1.0), &quick()).unwrap();
        let best = &sols[0];
        assert!((&best.p0 - dvector![1.0, 0.0, 0.0]).amax() < 1e-9);
        assert!((best.endpoint() - dvector![1.0, 0.0, 0.0]).amax() < 1e-9);
    }

    #[test]
    fn heisenberg_point_to_line() {
        let model = ChartModel::heisenberg();
        let line = SubmanifoldSpec::affine(dvector![1.0, 0.0, 0.0], DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let sols = shoot_to_submanifolds(&model, &SubmanifoldSpec::point(DVector::zeros(3)), &line, (0.0, 1.0), &quick()).unwrap();
        for s in sols.iter().filter(|s| s.converged) {
            let pb = s.trajectory.p.as_ref().unwrap().last().unwrap();
            assert!(pb[1].abs() <= 1e-8);
            assert!(s.transversality.as_ref().unwrap().transversal);
        }
    }

    #[test]
    fn non_transversal_target_is_rejected() {
        let model = ChartModel::heisenberg();
        let line = SubmanifoldSpec::affine(dvector![0.0, 0.0, 0.5], DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let err = shoot_to_submanifolds(&model, &SubmanifoldSpec::point(DVector::zeros(3)), &line, (0.0, 1.0), &quick()).unwrap_err();
        assert!(matches!(err, Error::TransversalityFailure { rank: 2, .. }));
    }
}
