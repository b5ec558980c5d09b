//! Least-squares fit of `y = A exp(-t/T) + c`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpFit {
    pub amplitude: f64,
    /// Decay rate `1/T`.
    pub rate: f64,
    pub offset: f64,
    /// RMS residual.
    pub residual: f64,
}

impl ExpFit {
    pub fn lifetime(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp() + self.offset
    }
}

const MAX_ITER: usize = 500;

/// Best `(A, c)` and squared residual at fixed rate `k`.
fn linear_part(t: &[f64], y: &[f64], k: f64) -> (f64, f64, f64) {
    let mut m = Matrix2::zeros();
    let mut r = Vector2::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-k * ti).exp();
        m += Matrix2::new(e * e, e, e, 1.0);
        r += Vector2::new(e * yi, yi);
    }
    let Some(sol) = m.lu().solve(&r) else {
        return (0.0, 0.0, f64::INFINITY);
    };
    let ssr = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (sol[0] * (-k * ti).exp() + sol[1] - yi).powi(2))
        .sum();
    (sol[0], sol[1], ssr)
}

/// Log-linear seed for the rate, using the last sample as the offset guess.
fn log_linear_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let floor = ymin - 1e-3 * (ymax - ymin).max(f64::MIN_POSITIVE);
    let sign = if y[0] >= y[y.len() - 1] { 1.0 } else { -1.0 };
    let base = if sign > 0.0 { floor } else { ymax + 1e-3 * (ymax - ymin) };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter_map(|(&ti, &yi)| {
            let v = sign * (yi - base);
            (v > 0.0).then(|| (ti, v.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |(a, b), p| {
        (a + (p.0 - mx).powi(2), b + (p.0 - mx) * (p.1 - my))
    });
    let k = -sxy / sxx;
    (k.is_finite() && k > 0.0).then_some(k)
}

/// Fit `y = A exp(-t/T) + c` with all three parameters free.
///
/// The rate is seeded log-linearly, bracketed on a logarithmic grid with
/// `A`, `c` eliminated, then all parameters are refined by damped Gauss-Newton.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    if t.len() != y.len() {
        return Err(Error::FitFailure {
            reason: format!("{} times but {} values", t.len(), y.len()),
            seed: None,
        });
    }
    if t.len() < 8 {
        return Err(Error::FitFailure {
            reason: format!("need at least 8 samples, got {}", t.len()),
            seed: None,
        });
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::FitFailure {
            reason: "non-finite sample".into(),
            seed: None,
        });
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return Err(Error::FitFailure {
            reason: "samples must span a positive time window".into(),
            seed: None,
        });
    }
    // Work on shifted, scaled time so the problem is well conditioned.
    let t0 = t[0];
    let ts: Vec<f64> = t.iter().map(|&v| (v - t0) / span).collect();

    let mut best = (f64::INFINITY, 1.0);
    if let Some(k) = log_linear_rate(&ts, y) {
        let (_, _, s) = linear_part(&ts, y, k);
        best = (s, k);
    }
    for i in 0..=80 {
        let k = 10f64.powf(-3.0 + 6.0 * i as f64 / 80.0);
        let (_, _, s) = linear_part(&ts, y, k);
        if s < best.0 {
            best = (s, k);
        }
    }
    let (a0, c0, _) = linear_part(&ts, y, best.1);
    let seed = (a0, best.1 / span, c0);

    // Parameters (A, ln k, c).
    let mut p = Vector3::new(a0, best.1.ln(), c0);
    let ssr = |p: &Vector3<f64>| -> f64 {
        let k = p[1].exp();
        ts.iter()
            .zip(y)
            .map(|(&ti, &yi)| (p[0] * (-k * ti).exp() + p[2] - yi).powi(2))
            .sum()
    };
    let mut cost = ssr(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let k = p[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&ti, &yi) in ts.iter().zip(y) {
            let e = (-k * ti).exp();
            let r = p[0] * e + p[2] - yi;
            let j = Vector3::new(e, -p[0] * k * ti * e, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut stepped = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for d in 0..3 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + delta;
            let c = ssr(&trial);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                let small = delta
                    .iter()
                    .zip(p.iter())
                    .all(|(d, v)| d.abs() <= 1e-13 * (1.0 + v.abs()));
                p = trial;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if small || rel < 1e-20 || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // No descent direction left: at a minimum to working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailure {
            reason: format!("no convergence after {MAX_ITER} iterations"),
            seed: Some(seed),
        });
    }
    let rate = p[1].exp() / span;
    // Undo the time shift: A e^{-k(t - t0)} = (A e^{k t0}) e^{-k t}.
    let amplitude = p[0] * (rate * t0).exp();
    Ok(ExpFit {
        amplitude,
        rate,
        offset: p[2],
        residual: (cost / t.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(n: usize, t_max: f64, f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect();
        let y = t.iter().map(|&x| f(x)).collect();
        (t, y)
    }

    #[test]
    fn pure_exponential() {
        let (t, y) = sample(20, 5.0, |x| (-x).exp());
        let fit = fit_exponential(&t, &y).unwrap();
        assert_relative_eq!(fit.lifetime(), 1.0, max_relative = 1e-10);
        assert!(fit.offset.abs() < 1e-10);
    }

    #[test]
    fn three_parameter_case() {
        let (t, y) = sample(40, 12.0, |x| 0.5 * (-x / 3.0).exp() + 0.1);
        let fit = fit_exponential(&t, &y).unwrap();
        assert!((fit.amplitude - 0.5).abs() < 1e-8);
        assert!((fit.lifetime() - 3.0).abs() < 1e-8);
        assert!((fit.offset - 0.1).abs() < 1e-8);
    }

    #[test]
    fn late_window_and_rising_curve() {
        let (t, y) = sample(30, 10.0, |x| 1.0 - 0.8 * (-(x + 2.0) / 4.0).exp());
        let t: Vec<f64> = t.iter().map(|x| x + 2.0).collect();
        let fit = fit_exponential(&t, &y).unwrap();
        assert!((fit.lifetime() - 4.0).abs() < 1e-8);
        assert!((fit.amplitude + 0.8).abs() < 1e-8);
        assert!((fit.offset - 1.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_samples() {
        let (t, y) = sample(5, 1.0, |x| (-x).exp());
        assert!(matches!(fit_exponential(&t, &y), Err(Error::FitFailure { .. })));
    }
}
