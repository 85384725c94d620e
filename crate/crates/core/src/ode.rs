//! Explicit Runge-Kutta integrators: classical RK4 with a fixed number of
//! steps and Dormand-Prince 5(4) with step-size control and dense output.
//! Both support a domain predicate; when a step leaves the domain the exit
//! time is located by bisection on the step interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with `steps` equal steps.
    Rk4 { steps: usize },
    /// Embedded Dormand-Prince 5(4).
    Adaptive {
        rtol: f64,
        atol: f64,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
}

fn default_max_steps() -> usize {
    200_000
}

impl Method {
    pub fn adaptive(tol: f64) -> Self {
        Method::Adaptive {
            rtol: tol,
            atol: tol,
            max_steps: default_max_steps(),
        }
    }

    pub fn rk4(steps: usize) -> Self {
        Method::Rk4 { steps }
    }
}

impl Default for Method {
    fn default() -> Self {
        Method::adaptive(1e-10)
    }
}

/// Which times the solution is reported at.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Every accepted step.
    Steps,
    /// `k + 1` equally spaced times including both ends.
    Uniform(usize),
    /// Explicit monotone times within the span (the end time is always added).
    Times(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct OdeOutput {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Set when the domain predicate failed; the last sample is the exit point.
    pub exit_time: Option<f64>,
    pub steps: usize,
    pub rejected: usize,
}

impl OdeOutput {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("at least one sample")
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F, D>(mut rhs: F, t0: f64, y0: &[f64], t1: f64, method: &Method, sampling: &Sampling, inside: D) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    D: Fn(&[f64]) -> bool,
{
    let targets = sample_times(t0, t1, sampling);
    let mut out = Recorder::new(t0, y0, targets, matches!(sampling, Sampling::Steps));
    if t0 == t1 {
        out.finish(t1, y0);
        return Ok(out.into_output(None, 0, 0));
    }
    match *method {
        Method::Rk4 { steps } => rk4(&mut rhs, t0, y0, t1, steps.max(1), &inside, out),
        Method::Adaptive { rtol, atol, max_steps } => dopri5(&mut rhs, t0, y0, t1, rtol, atol, max_steps, &inside, out),
    }
}

fn sample_times(t0: f64, t1: f64, sampling: &Sampling) -> Vec<f64> {
    match sampling {
        Sampling::Steps => vec![t1],
        Sampling::Uniform(k) => {
            let k = (*k).max(1);
            (1..=k).map(|i| if i == k { t1 } else { t0 + (t1 - t0) * i as f64 / k as f64 }).collect()
        }
        Sampling::Times(ts) => {
            let mut v: Vec<f64> = ts
                .iter()
                .copied()
                .filter(|&t| (t - t0) * (t1 - t0) > 0.0 && (t1 - t) * (t1 - t0) > 0.0)
                .collect();
            v.push(t1);
            v
        }
    }
}

/// Collects samples as the integrator advances.
struct Recorder {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    targets: Vec<f64>,
    next: usize,
    every_step: bool,
}

impl Recorder {
    fn new(t0: f64, y0: &[f64], targets: Vec<f64>, every_step: bool) -> Self {
        Recorder {
            times: vec![t0],
            states: vec![y0.to_vec()],
            targets,
            next: 0,
            every_step,
        }
    }

    /// Emits targets inside `(ta, tb]` using the interpolant `interp(theta)`.
    fn step(&mut self, ta: f64, tb: f64, y_end: &[f64], interp: &dyn Fn(f64) -> Vec<f64>) {
        let dir = (tb - ta).signum();
        if self.every_step {
            self.times.push(tb);
            self.states.push(y_end.to_vec());
            return;
        }
        while self.next < self.targets.len() {
            let t = self.targets[self.next];
            if (t - tb) * dir > 0.0 {
                break;
            }
            let y = if t == tb { y_end.to_vec() } else { interp((t - ta) / (tb - ta)) };
            self.times.push(t);
            self.states.push(y);
            self.next += 1;
        }
    }

    fn finish(&mut self, t: f64, y: &[f64]) {
        if self.times.last() != Some(&t) {
            self.times.push(t);
            self.states.push(y.to_vec());
        }
    }

    fn into_output(self, exit_time: Option<f64>, steps: usize, rejected: usize) -> OdeOutput {
        OdeOutput {
            times: self.times,
            states: self.states,
            exit_time,
            steps,
            rejected,
        }
    }
}

/// Locates the exit time on `[0, 1]` by bisection of the step interpolant.
fn bisect_exit(interp: &dyn Fn(f64) -> Vec<f64>, inside: &dyn Fn(&[f64]) -> bool) -> (f64, Vec<f64>) {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(&interp(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, interp(lo))
}

fn hermite(y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], h: f64, theta: f64) -> Vec<f64> {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    (0..y0.len()).map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]).collect()
}

fn rk4<F>(rhs: &mut F, t0: f64, y0: &[f64], t1: f64, steps: usize, inside: &dyn Fn(&[f64]) -> bool, mut out: Recorder) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let mut f_end = vec![0.0; dim];
    for s in 0..steps {
        let t = t0 + h * s as f64;
        let t_next = if s + 1 == steps { t1 } else { t0 + h * (s + 1) as f64 };
        rhs(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        let y_new: Vec<f64> = (0..dim).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
        let needs_interp = !inside(&y_new) || !out.every_step;
        if needs_interp {
            rhs(t_next, &y_new, &mut f_end);
        }
        let interp = |theta: f64| hermite(&y, &k1, &y_new, &f_end, h, theta);
        if !inside(&y_new) {
            let (theta, y_exit) = bisect_exit(&interp, inside);
            let t_exit = t + theta * h;
            out.step(t, t_exit, &y_exit, &interp);
            out.finish(t_exit, &y_exit);
            return Ok(out.into_output(Some(t_exit), s + 1, 0));
        }
        out.step(t, t_next, &y_new, &interp);
        y = y_new;
    }
    out.finish(t1, &y);
    Ok(out.into_output(None, steps, 0))
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output coefficients (Shampine).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], rtol: f64, atol: f64) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len().max(1) as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn dopri5<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    rtol: f64,
    atol: f64,
    max_steps: usize,
    inside: &dyn Fn(&[f64]) -> bool,
    mut out: Recorder,
) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];
    rhs(t, &y, &mut k[0]);

    // Initial step guess (Hairer & Wanner, II.4).
    let mut h = {
        let sc: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();
        let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / dim as f64).sqrt();
        let d1 = (k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / dim as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for i in 0..dim {
            tmp[i] = y[i] + dir * h0 * k[0][i];
        }
        let mut f1 = vec![0.0; dim];
        rhs(t + dir * h0, &tmp, &mut f1);
        let d2 = (f1.iter().zip(&k[0]).zip(&sc).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>() / dim as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    };

    let mut steps = 0;
    let mut rejected = 0;
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        if steps >= max_steps {
            return Err(Error::StepFailure { t, h });
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        for i in 0..dim {
            tmp[i] = y[i] + hs * A21 * k[0][i];
        }
        let (head, tail) = k.split_at_mut(1);
        rhs(t + C2 * hs, &tmp, &mut tail[0]);
        let k1 = &head[0];
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * tail[0][i]);
        }
        rhs(t + C3 * hs, &tmp, &mut tail[1]);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * tail[0][i] + A43 * tail[1][i]);
        }
        rhs(t + C4 * hs, &tmp, &mut tail[2]);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * tail[0][i] + A53 * tail[1][i] + A54 * tail[2][i]);
        }
        rhs(t + C5 * hs, &tmp, &mut tail[3]);
        for i in 0..dim {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * tail[0][i] + A63 * tail[1][i] + A64 * tail[2][i] + A65 * tail[3][i]);
        }
        rhs(t + hs, &tmp, &mut tail[4]);
        for i in 0..dim {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * tail[1][i] + A74 * tail[2][i] + A75 * tail[3][i] + A76 * tail[4][i]);
        }
        let t_new = if last { t1 } else { t + hs };
        rhs(t_new, &y_new, &mut tail[5]);
        for i in 0..dim {
            err[i] = hs * (E1 * k1[i] + E3 * tail[1][i] + E4 * tail[2][i] + E5 * tail[3][i] + E6 * tail[4][i] + E7 * tail[5][i]);
        }
        let en = error_norm(&err, &y, &y_new, rtol, atol);
        steps += 1;
        if !en.is_finite() || en > 1.0 {
            rejected += 1;
            let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepFailure { t, h });
            }
            continue;
        }

        // Dense output polynomial for this step.
        let r1 = y.clone();
        let r2: Vec<f64> = (0..dim).map(|i| y_new[i] - y[i]).collect();
        let r3: Vec<f64> = (0..dim).map(|i| hs * k1[i] - r2[i]).collect();
        let r4: Vec<f64> = (0..dim).map(|i| r2[i] - hs * tail[5][i] - r3[i]).collect();
        let r5: Vec<f64> = (0..dim)
            .map(|i| hs * (D1 * k1[i] + D3 * tail[1][i] + D4 * tail[2][i] + D5 * tail[3][i] + D6 * tail[4][i] + D7 * tail[5][i]))
            .collect();
        let interp = |theta: f64| -> Vec<f64> {
            let t1m = 1.0 - theta;
            (0..dim)
                .map(|i| r1[i] + theta * (r2[i] + t1m * (r3[i] + theta * (r4[i] + t1m * r5[i]))))
                .collect()
        };

        if !inside(&y_new) {
            let (theta, y_exit) = bisect_exit(&interp, inside);
            let t_exit = t + theta * hs;
            out.step(t, t_exit, &y_exit, &interp);
            out.finish(t_exit, &y_exit);
            return Ok(out.into_output(Some(t_exit), steps, rejected));
        }
        out.step(t, t_new, &y_new, &interp);

        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        let f_last = std::mem::take(&mut k[6]);
        k[0] = f_last;
        k[6] = vec![0.0; dim];
        if last {
            break;
        }
        let fac = (0.9 * en.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        h *= fac;
    }
    out.finish(t1, &y);
    Ok(out.into_output(None, steps, rejected))
}
