use std::io::Write;

use nalgebra::DVector;

use super::{exit, meta, vector_arg, Cli, Command, ControlArgs, Emitted, Failure, Format};
use crate::endpoint::{characteristic_test, controls_to_curve, endpoint_differential_gramian, geodesic_controls, ControlCurve, RankTolerance};
use crate::flow::{integrate_geodesic, FlowOptions};
use crate::minimality::{
    build_wavefront, calibration_check, lower_bound_check, minimality_certificate, CalibrationOptions, CertificateOptions, Hypersurface, WavefrontGrid,
};
use crate::model::expr::Expr;
use crate::model::ChartModel;
use crate::reparam::{arclength_profile, unit_speed_reparam};
use crate::solver::{
    ball_sample, direct_minimize_from_set, shoot_point_to_point, shoot_to_submanifolds, BvpSolution, DirectOptions, ShootOptions, SubmanifoldSpec,
};

type Outcome = Result<Emitted, Failure>;

pub(crate) fn dispatch(cli: &Cli) -> Outcome {
    let model = ChartModel::resolve(&cli.common.model)?;
    match &cli.command {
        Command::Geodesic { q0, p0, span, samples } => {
            let n = model.dim();
            let (q0, p0) = (vector_arg(q0, n, "q0")?, vector_arg(p0, n, "p0")?);
            geodesic(cli, &model, &q0, &p0, (span.0, span.1), *samples)
        }
        Command::Bvp { .. } => bvp(cli, &model),
        Command::Abnormal {
            curve,
            rank_factor,
            characteristic,
        } => {
            let c = control_curve(cli, &model, curve)?;
            let report = endpoint_differential_gramian(&model, &c, RankTolerance { factor: *rank_factor })?;
            let test = match characteristic {
                Some(eta) => Some(characteristic_test(&model, &c, &vector_arg(eta, model.dim(), "characteristic")?, 1e-10)?),
                None => None,
            };
            let summary = serde_json::json!({"verdict": report.verdict, "rank": report.rank, "flags": report.flags});
            let body = serde_json::json!({"meta": meta(cli), "report": report.to_json(), "characteristic": test});
            json_only(cli, body, summary)
        }
        Command::Reparam { curve } => reparam(cli, &model, curve),
        Command::Ball { q0, radius, rays } => {
            let q0 = vector_arg(q0, model.dim(), "q0")?;
            let ball = ball_sample(&model, &q0, *radius, *rays, cli.common.seed, &cli.common.integrator())?;
            let exited = ball.points.iter().filter(|p| p.exited).count();
            let summary = serde_json::json!({"points": ball.points.len(), "exited": exited, "radius": radius});
            match cli.common.format.unwrap_or(Format::Csv) {
                Format::Json => emit_json(serde_json::json!({"meta": meta(cli), "summary": summary, "ball": ball}), summary),
                Format::Csv => {
                    let n = model.dim();
                    let mut body = csv_preamble(cli, &summary);
                    let mut header: Vec<String> = (1..=n).map(|i| format!("p{i}")).collect();
                    header.extend((1..=n).map(|i| format!("q{i}")));
                    header.extend(["length".to_string(), "exited".to_string()]);
                    writeln!(body, "{}", header.join(","))?;
                    for p in &ball.points {
                        let mut row: Vec<String> = p.p0.iter().chain(&p.endpoint).map(f64::to_string).collect();
                        row.push(p.length.to_string());
                        row.push(u8::from(p.exited).to_string());
                        writeln!(body, "{}", row.join(","))?;
                    }
                    Ok(Emitted {
                        body,
                        summary,
                        status: exit::OK,
                    })
                }
            }
        }
        Command::Wavefront { .. } => wavefront(cli, &model),
        Command::Certify { .. } => certify(cli, &model),
    }
}

fn emit_json(mut body: serde_json::Value, summary: serde_json::Value) -> Outcome {
    if let Some(obj) = body.as_object_mut() {
        obj.entry("summary").or_insert_with(|| summary.clone());
    }
    let mut bytes = serde_json::to_vec_pretty(&body).map_err(crate::error::Error::from)?;
    bytes.push(b'\n');
    Ok(Emitted {
        body: bytes,
        summary,
        status: exit::OK,
    })
}

fn json_only(cli: &Cli, body: serde_json::Value, summary: serde_json::Value) -> Outcome {
    if cli.common.format == Some(Format::Csv) {
        return Err(Failure::Config(format!("{} writes JSON reports only", cli.command.name())));
    }
    emit_json(body, summary)
}

/// `# meta:` and `# summary:` comment lines opening every CSV file.
fn csv_preamble(cli: &Cli, summary: &serde_json::Value) -> Vec<u8> {
    format!("# meta: {}\n# summary: {}\n", meta(cli), summary).into_bytes()
}

fn geodesic(cli: &Cli, model: &ChartModel, q0: &DVector<f64>, p0: &DVector<f64>, span: (f64, f64), samples: usize) -> Outcome {
    let method = cli.common.integrator();
    let opts = FlowOptions {
        method,
        samples: Some(samples.max(1)),
        drift_bound: None,
    };
    let traj = integrate_geodesic(model, q0, p0, span, &opts)?;
    let energies = traj.energies(model);
    let drift = traj.energy_drift(model);
    let summary = serde_json::json!({
        "endpoint": traj.end().as_slice(),
        "H0": energies[0],
        "energy_drift": drift,
        "relative_energy_drift": if energies[0] > 0.0 { drift / energies[0] } else { drift },
        "nodes": traj.len(),
    });
    match cli.common.format.unwrap_or(Format::Csv) {
        Format::Json => emit_json(
            serde_json::json!({"meta": meta(cli), "summary": summary, "trajectory": traj.to_json(model, &method, Some(cli.common.seed))}),
            summary,
        ),
        Format::Csv => {
            let mut body = csv_preamble(cli, &summary);
            traj.write_csv(model, &mut body)?;
            Ok(Emitted {
                body,
                summary,
                status: exit::OK,
            })
        }
    }
}

fn bvp(cli: &Cli, model: &ChartModel) -> Outcome {
    let Command::Bvp {
        q0,
        q1,
        span,
        submanifold,
        source,
        seeds,
        max_iter,
        bvp_tol,
        samples,
        oracle,
        oracle_intervals,
        oracle_starts,
    } = &cli.command
    else {
        unreachable!()
    };
    let n = model.dim();
    let q0 = vector_arg(q0, n, "q0")?;
    let q1 = q1.as_ref().map(|v| vector_arg(v, n, "q1")).transpose()?;
    let start = if source.is_empty() {
        SubmanifoldSpec::point(q0.clone())
    } else {
        SubmanifoldSpec::expressions(source, q0.clone())?
    };
    let target = if submanifold.is_empty() {
        SubmanifoldSpec::point(q1.clone().ok_or_else(|| Failure::Config("--q1 or --submanifold is required".into()))?)
    } else {
        SubmanifoldSpec::expressions(submanifold, q1.clone().unwrap_or_else(|| q0.clone()))?
    };
    let opts = ShootOptions {
        flow: FlowOptions {
            method: cli.common.integrator(),
            samples: Some((*samples).max(1)),
            drift_bound: None,
        },
        seeds: *seeds,
        seed: cli.common.seed,
        max_iter: *max_iter,
        tol: *bvp_tol,
        ..Default::default()
    };
    let span = (span.0, span.1);
    let solutions = match (&start, &target) {
        (SubmanifoldSpec::Point(a), SubmanifoldSpec::Point(b)) => shoot_point_to_point(model, a, b, span, &opts)?,
        _ => shoot_to_submanifolds(model, &start, &target, span, &opts)?,
    };
    let converged = solutions.iter().any(|s| s.converged);
    let oracle_row = match (oracle, &target) {
        (true, SubmanifoldSpec::Point(b)) => {
            let dopts = DirectOptions {
                intervals: *oracle_intervals,
                starts: *oracle_starts,
                seed: cli.common.seed,
                ..Default::default()
            };
            let r = direct_minimize_from_set(model, &start, b, span, &dopts)?;
            let best = solutions.first().map_or(f64::NAN, |s| s.action);
            serde_json::json!({
                "action": r.action,
                "length": r.length,
                "converged": r.converged,
                "endpoint_residual": r.endpoint_residual,
                "relative_gap": (best - r.action) / r.action.max(f64::MIN_POSITIVE),
            })
        }
        (true, _) => serde_json::json!({"skipped": "the oracle needs a point target"}),
        (false, _) => serde_json::Value::Null,
    };
    let method = cli.common.integrator();
    let rows: Vec<_> = solutions
        .iter()
        .map(|s| {
            let mut row = serde_json::to_value(s.summary()).unwrap_or_default();
            row["trajectory"] = s.trajectory.to_json(model, &method, Some(cli.common.seed));
            row
        })
        .collect();
    let summary = serde_json::json!({
        "solutions": rows.len(),
        "converged": converged,
        "best_action": solutions.first().map(|s| s.action),
        "oracle": oracle_row,
    });
    let body = serde_json::json!({"meta": meta(cli), "solutions": rows, "oracle": oracle_row});
    let mut out = json_only(cli, body, summary)?;
    if !converged {
        out.status = exit::NUMERIC;
    }
    Ok(out)
}

fn control_curve(cli: &Cli, model: &ChartModel, args: &ControlArgs) -> Result<ControlCurve, Failure> {
    let n = model.dim();
    let q0 = vector_arg(&args.q0, n, "q0")?;
    let span = (args.span.0, args.span.1);
    let intervals = args.intervals.max(1);
    let given = [
        args.constant.is_some(),
        args.control_expr.is_some(),
        args.controls.is_some(),
        args.from_p0.is_some(),
    ];
    if given.iter().filter(|&&g| g).count() != 1 {
        return Err(Failure::Config("give exactly one of --constant, --control-expr, --controls, --from-p0".into()));
    }
    if let Some(h) = &args.constant {
        return Ok(ControlCurve::constant(q0, span, intervals, vector_arg(h, n, "constant")?)?);
    }
    if let Some(src) = &args.control_expr {
        let exprs = src
            .split(';')
            .map(|s| Expr::parse(s.trim(), &|name| (name == "t").then_some(0)))
            .collect::<Result<Vec<_>, _>>()?;
        if exprs.len() != n {
            return Err(Failure::Config(format!("--control-expr expects {n} expressions, got {}", exprs.len())));
        }
        return Ok(ControlCurve::from_fn(q0, span, intervals, |t| {
            DVector::from_iterator(n, exprs.iter().map(|e| e.eval(&[t])))
        })?);
    }
    if let Some(path) = &args.controls {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut h = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
                continue;
            }
            let v: super::Vector = line.parse().map_err(|e| Failure::Config(format!("{} line {}: {e}", path.display(), k + 1)))?;
            h.push(vector_arg(&v, n, "controls")?);
        }
        if h.is_empty() {
            return Err(Failure::Config(format!("{} holds no controls", path.display())));
        }
        return Ok(ControlCurve::uniform(q0, span, h)?);
    }
    let p0 = vector_arg(args.from_p0.as_ref().expect("checked above"), n, "from-p0")?;
    Ok(geodesic_controls(model, &q0, &p0, span, intervals, &cli.common.integrator())?)
}

fn reparam(cli: &Cli, model: &ChartModel, args: &ControlArgs) -> Outcome {
    let c = control_curve(cli, model, args)?;
    let profile = arclength_profile(model, &c)?;
    let r = unit_speed_reparam(model, &c)?;
    let curve = controls_to_curve(model, &r)?;
    let speed_error = r.horizontal_speeds(model.rank()).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let summary = serde_json::json!({
        "length": profile.length,
        "intervals_in": c.intervals(),
        "intervals_out": r.intervals(),
        "max_speed_error": speed_error,
        "endpoint": curve.end().as_slice(),
    });
    let n = model.dim();
    match cli.common.format.unwrap_or(Format::Csv) {
        Format::Json => emit_json(
            serde_json::json!({
                "meta": meta(cli),
                "summary": summary,
                "grid": r.grid,
                "controls": r.h.iter().map(|h| h.as_slice().to_vec()).collect::<Vec<_>>(),
                "nodes": curve.q.iter().map(|q| q.as_slice().to_vec()).collect::<Vec<_>>(),
            }),
            summary,
        ),
        Format::Csv => {
            // Node rows carry the control of the interval they start.
            let mut body = csv_preamble(cli, &summary);
            let mut header = vec!["s".to_string()];
            header.extend((1..=n).map(|i| format!("q{i}")));
            header.extend((1..=n).map(|i| format!("h{i}")));
            writeln!(body, "{}", header.join(","))?;
            for (j, q) in curve.q.iter().enumerate() {
                let h = &r.h[j.min(r.intervals() - 1)];
                let row: Vec<String> = std::iter::once(r.grid[j])
                    .chain(q.iter().copied())
                    .chain(h.iter().copied())
                    .map(|v| v.to_string())
                    .collect();
                writeln!(body, "{}", row.join(","))?;
            }
            Ok(Emitted {
                body,
                summary,
                status: exit::OK,
            })
        }
    }
}

fn wavefront(cli: &Cli, model: &ChartModel) -> Outcome {
    let Command::Wavefront {
        surface,
        origin,
        seed_covector,
        t_range,
        half_width,
        spacing,
        fd_step,
        no_calibration,
        curves,
    } = &cli.command
    else {
        unreachable!()
    };
    let n = model.dim();
    let guess = match origin {
        Some(v) => vector_arg(v, n, "origin")?,
        None => DVector::zeros(n),
    };
    let seed = vector_arg(seed_covector, n, "seed-covector")?;
    let hs = Hypersurface::new(SubmanifoldSpec::expressions(&[surface.as_str()], guess)?)?;
    let grid = WavefrontGrid::centered((t_range.0, t_range.1), *half_width, hs.param_dim(), *spacing);
    let chart = build_wavefront(model, &hs, &seed, &grid, &cli.common.integrator())?;
    let calibration = if *no_calibration {
        None
    } else {
        Some(calibration_check(
            &chart,
            &CalibrationOptions {
                fd_step: *fd_step,
                ..Default::default()
            },
        )?)
    };
    let bound = if *curves > 0 {
        Some(lower_bound_check(&chart, *curves, cli.common.seed)?)
    } else {
        None
    };
    let summary = serde_json::json!({
        "samples": chart.samples.len(),
        "min_abs_det_dF": chart.min_abs_det(),
        "max_condition": chart.max_condition(),
        "calibration": calibration,
        "lower_bound": bound,
    });
    match cli.common.format.unwrap_or(Format::Csv) {
        Format::Json => emit_json(serde_json::json!({"meta": meta(cli), "summary": summary, "samples": chart.samples}), summary),
        Format::Csv => {
            let mut body = csv_preamble(cli, &summary);
            chart.write_csv(&mut body)?;
            Ok(Emitted {
                body,
                summary,
                status: exit::OK,
            })
        }
    }
}

fn certify(cli: &Cli, model: &ChartModel) -> Outcome {
    let Command::Certify {
        q0,
        p0,
        epsilon,
        source,
        oracle_intervals,
        oracle_starts,
        calibration_tol,
        oracle_tol,
    } = &cli.command
    else {
        unreachable!()
    };
    let n = model.dim();
    let (q0, p0) = (vector_arg(q0, n, "q0")?, vector_arg(p0, n, "p0")?);
    let start = if source.is_empty() {
        SubmanifoldSpec::point(q0.clone())
    } else {
        SubmanifoldSpec::expressions(source, q0.clone())?
    };
    let method = cli.common.integrator();
    let flow = FlowOptions { method, ..Default::default() };
    let geodesic = BvpSolution::from_geodesic(model, integrate_geodesic(model, &q0, &p0, (0.0, *epsilon), &flow)?)?;
    let opts = CertificateOptions {
        calibration_tol: *calibration_tol,
        oracle_tol: *oracle_tol,
        direct: DirectOptions {
            intervals: *oracle_intervals,
            starts: *oracle_starts,
            seed: cli.common.seed,
            ..Default::default()
        },
        method,
        ..Default::default()
    };
    let cert = minimality_certificate(model, &start, &geodesic, *epsilon, &opts)?;
    let summary = serde_json::json!({"verdict": cert.verdict, "oracle_gap": cert.oracle_gap});
    json_only(cli, serde_json::json!({"meta": meta(cli), "certificate": cert.to_json()}), summary)
}
