//! Dormand-Prince 5(4) with PI step-size control.
//!
//! Coefficients and controller constants follow Hairer's `dopri5`. Steps are
//! shortened to land exactly on requested sample times, so no dense output is
//! needed.

use crate::error::{Error, Result};

/// A first-order system `dy/dt = f(t, y)` with reusable internal scratch.
pub trait OdeSystem {
    fn len(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Number of entries the RMS error norm is averaged over. May exceed the
    /// stored length when the state omits entries that are identically zero.
    pub norm_len: usize,
    pub max_steps: usize,
    pub h_init: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

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

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

pub struct Dopri5 {
    ctl: StepControl,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    stats: StepStats,
    facold: f64,
}

impl Dopri5 {
    pub fn new(len: usize, ctl: StepControl) -> Self {
        let z = || vec![0.0; len];
        Self {
            ctl,
            k: [z(), z(), z(), z(), z(), z(), z()],
            ytmp: z(),
            ynew: z(),
            stats: StepStats::default(),
            facold: 1e-4,
        }
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    fn scaled_norm(&self, err: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let StepControl { rtol, atol, .. } = self.ctl;
        let mut acc = 0.0;
        for ((e, a), b) in err.iter().zip(y0).zip(y1) {
            let sc = atol + rtol * a.abs().max(b.abs());
            let r = e.abs() / sc;
            acc += r * r;
        }
        (acc / self.ctl.norm_len as f64).sqrt()
    }

    // Hairer's starting-step heuristic.
    fn initial_step<S: OdeSystem>(&mut self, sys: &mut S, t: f64, y: &[f64], span: f64) -> f64 {
        let f0 = &self.k[0];
        let StepControl { rtol, atol, .. } = self.ctl;
        let n = self.ctl.norm_len as f64;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for (yi, fi) in y.iter().zip(f0) {
            let sk = atol + rtol * yi.abs();
            dnf += (fi.abs() / sk).powi(2);
            dny += (yi.abs() / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(span);
        for ((yt, yi), fi) in self.ytmp.iter_mut().zip(y).zip(f0) {
            *yt = yi + fi * h;
        }
        sys.rhs(t + h, &self.ytmp, &mut self.k[1]);
        self.stats.rhs_evals += 1;
        let mut der2 = 0.0;
        for ((yi, f1), f0i) in y.iter().zip(&self.k[1]).zip(&self.k[0]) {
            let sk = atol + rtol * yi.abs();
            der2 += ((f1 - f0i).abs() / sk).powi(2);
        }
        let der2 = (der2 / n).sqrt() / h;
        let der12 = der2.abs().max((dnf / n).sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        (100.0 * h).min(h1).min(span)
    }

    /// Integrate from `t0` through each of `stops` (sorted, > t0), calling
    /// `on_stop(index, t, y)` at each. `y` is advanced in place.
    pub fn integrate<S, F>(
        &mut self,
        sys: &mut S,
        t0: f64,
        y: &mut Vec<f64>,
        stops: &[f64],
        mut on_stop: F,
    ) -> Result<StepStats>
    where
        S: OdeSystem,
        F: FnMut(usize, f64, &[f64]) -> Result<()>,
    {
        let Some(&t_end) = stops.last() else {
            return Ok(self.stats);
        };
        let mut t = t0;
        sys.rhs(t, y, &mut self.k[0]);
        self.stats.rhs_evals += 1;
        let mut h = match self.ctl.h_init {
            Some(h) => h,
            None => self.initial_step(sys, t, y, t_end - t0),
        };
        let mut next = 0;
        while next < stops.len() && stops[next] <= t {
            on_stop(next, t, y)?;
            next += 1;
        }
        let mut reject = false;
        while next < stops.len() {
            if self.stats.accepted + self.stats.rejected >= self.ctl.max_steps {
                return Err(Error::StepSizeUnderflow {
                    t,
                    h,
                    steps: self.stats.accepted,
                });
            }
            let target = stops[next];
            let clipped = t + h >= target;
            let h_step = if clipped { target - t } else { h };
            if h_step <= f64::EPSILON * t.abs().max(1e-300) * 10.0 {
                return Err(Error::StepSizeUnderflow {
                    t,
                    h: h_step,
                    steps: self.stats.accepted,
                });
            }
            let err = self.attempt(sys, t, y, h_step);
            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let mut fac = fac11 / self.facold.powf(BETA);
                fac = (1.0 / FAC_MAX).max((1.0 / FAC_MIN).min(fac / SAFE));
                let mut h_new = h_step / fac;
                if reject {
                    h_new = h_new.min(h_step);
                }
                self.facold = err.max(1e-4);
                self.stats.accepted += 1;
                t = if clipped { target } else { t + h_step };
                std::mem::swap(y, &mut self.ynew);
                // FSAL: the last stage is f(t + h, y_new).
                let (first, rest) = self.k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);
                reject = false;
                // A clipped step says nothing about the natural step size.
                h = if clipped { h.max(h_new) } else { h_new };
                while next < stops.len() && stops[next] <= t {
                    on_stop(next, t, y)?;
                    next += 1;
                }
            } else {
                h = h_step / (1.0 / FAC_MIN).min(fac11 / SAFE);
                reject = true;
                self.stats.rejected += 1;
            }
        }
        Ok(self.stats)
    }

    // One trial step; fills `ynew` and `k[6]`, returns the scaled error.
    fn attempt<S: OdeSystem>(&mut self, sys: &mut S, t: f64, y: &[f64], h: f64) -> f64 {
        let n = y.len();
        macro_rules! stage {
            ($dst:expr, $tc:expr, [$($j:expr => $a:expr),*]) => {{
                for i in 0..n {
                    let mut acc = 0.0;
                    $( acc += self.k[$j][i] * $a; )*
                    self.ytmp[i] = y[i] + acc * h;
                }
                let (ytmp, k) = (&self.ytmp, &mut self.k);
                sys.rhs(t + $tc * h, ytmp, &mut k[$dst]);
            }};
        }
        stage!(1, C2, [0 => A21]);
        stage!(2, C3, [0 => A31, 1 => A32]);
        stage!(3, C4, [0 => A41, 1 => A42, 2 => A43]);
        stage!(4, C5, [0 => A51, 1 => A52, 2 => A53, 3 => A54]);
        stage!(5, 1.0, [0 => A61, 1 => A62, 2 => A63, 3 => A64, 4 => A65]);
        for i in 0..n {
            let k = &self.k;
            let acc = k[0][i] * A71 + k[2][i] * A73 + k[3][i] * A74 + k[4][i] * A75 + k[5][i] * A76;
            self.ynew[i] = y[i] + acc * h;
        }
        {
            let (ynew, k) = (&self.ynew, &mut self.k);
            sys.rhs(t + h, ynew, &mut k[6]);
        }
        self.stats.rhs_evals += 6;
        for i in 0..n {
            let k = &self.k;
            let e = k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7;
            self.ytmp[i] = e * h;
        }
        self.scaled_norm(&self.ytmp, y, &self.ynew)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `z' = -(gamma + i omega) z` stored as `[re, im]`.
    struct Rotor {
        omega: f64,
        gamma: f64,
    }

    impl OdeSystem for Rotor {
        fn len(&self) -> usize {
            2
        }
        fn rhs(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.gamma * y[0] + self.omega * y[1];
            dy[1] = -self.omega * y[0] - self.gamma * y[1];
        }
    }

    fn exact(omega: f64, gamma: f64, t: f64) -> [f64; 2] {
        let r = (-gamma * t).exp();
        [r * (omega * t).cos(), -r * (omega * t).sin()]
    }

    fn dist(y: &[f64], e: [f64; 2]) -> f64 {
        (y[0] - e[0]).hypot(y[1] - e[1])
    }

    fn ctl(rtol: f64, atol: f64) -> StepControl {
        StepControl {
            rtol,
            atol,
            norm_len: 2,
            max_steps: 1_000_000,
            h_init: None,
        }
    }

    #[test]
    fn damped_rotor_matches_closed_form() {
        let mut sys = Rotor { omega: 7.0, gamma: 0.3 };
        let stops: Vec<f64> = (1..=20).map(|i| i as f64 * 0.25).collect();
        let mut y = vec![1.0, 0.0];
        let mut worst: f64 = 0.0;
        let mut seen = 0;
        let mut solver = Dopri5::new(2, ctl(1e-10, 1e-12));
        solver
            .integrate(&mut sys, 0.0, &mut y, &stops, |_, t, y| {
                worst = worst.max(dist(y, exact(7.0, 0.3, t)));
                seen += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, stops.len());
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn error_scales_like_fifth_order() {
        let run = |tol: f64| {
            let mut sys = Rotor { omega: 3.0, gamma: 0.0 };
            let mut y = vec![1.0, 0.0];
            let mut solver = Dopri5::new(2, ctl(tol, tol));
            let stats = solver
                .integrate(&mut sys, 0.0, &mut y, &[10.0], |_, _, _| Ok(()))
                .unwrap();
            (dist(&y, exact(3.0, 0.0, 10.0)), stats.accepted)
        };
        let (e1, n1) = run(1e-6);
        let (e2, n2) = run(1e-9);
        assert!(e2 < e1);
        assert!(n2 > n1);
        assert!(e2 < 1e-6);
    }

    #[test]
    fn stops_at_start_are_reported() {
        let mut sys = Rotor { omega: 1.0, gamma: 0.0 };
        let mut y = vec![1.0, 0.0];
        let mut ts = Vec::new();
        Dopri5::new(2, ctl(1e-8, 1e-10))
            .integrate(&mut sys, 0.0, &mut y, &[0.0, 0.5, 1.0], |_, t, _| {
                ts.push(t);
                Ok(())
            })
            .unwrap();
        assert_eq!(ts, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn step_budget_exhaustion_is_an_error() {
        let mut sys = Rotor { omega: 1e6, gamma: 0.0 };
        let mut y = vec![1.0, 0.0];
        let mut c = ctl(1e-10, 1e-12);
        c.max_steps = 10;
        let r = Dopri5::new(2, c).integrate(&mut sys, 0.0, &mut y, &[1.0], |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::StepSizeUnderflow { .. })));
    }
}
