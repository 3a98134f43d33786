//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! Steps are stored with their own local time origin so that very short
//! steps late in an accumulating event sequence keep full relative precision.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step length; `None` means the interval length.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-11, max_step: None, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
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
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Quartic Hermite-type interpolant over one accepted step.
///
/// `t0` is the step start, `h` the step length used for the coefficients and
/// `span ≤ h` the part of the step that belongs to the trajectory (a step may
/// be truncated at an event).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    pub span: f64,
    n: usize,
    rc: Vec<f64>,
}

impl DenseStep {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.span
    }

    /// Evaluates the interpolant at local time `tau` measured from `t0`.
    pub fn eval_local(&self, tau: f64, out: &mut [f64]) {
        let n = self.n;
        let th = if self.h == 0.0 { 0.0 } else { tau / self.h };
        let th1 = 1.0 - th;
        let (r1, rest) = self.rc.split_at(n);
        let (r2, rest) = rest.split_at(n);
        let (r3, rest) = rest.split_at(n);
        let (r4, r5) = rest.split_at(n);
        for i in 0..n {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }

    pub fn state_local(&self, tau: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        self.eval_local(tau, &mut v);
        v
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.state_local(t - self.t0)
    }

    /// State at the start of the step (exact, not interpolated).
    pub fn start(&self) -> &[f64] {
        &self.rc[..self.n]
    }

    /// Builds a linear interpolant between two states; used for zero-length
    /// pieces and in tests.
    pub fn linear(t0: f64, h: f64, y0: &[f64], y1: &[f64]) -> Self {
        let n = y0.len();
        let mut rc = vec![0.0; 5 * n];
        for i in 0..n {
            rc[i] = y0[i];
            rc[n + i] = y1[i] - y0[i];
        }
        Self { t0, h, span: h, n, rc }
    }
}

/// Stateful step driver: holds the FSAL stage and the proposed step size.
pub struct Dopri5 {
    n: usize,
    cfg: IntegratorConfig,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fsal_valid: bool,
    h_next: Option<f64>,
    steps: usize,
}

#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub t_new: f64,
    pub y_new: Vec<f64>,
    pub dense: DenseStep,
}

impl Dopri5 {
    pub fn new(n: usize, cfg: IntegratorConfig) -> Self {
        let z = || vec![0.0; n];
        Self { n, cfg, k: [z(), z(), z(), z(), z(), z(), z()], ytmp: z(), ynew: z(), fsal_valid: false, h_next: None, steps: 0 }
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// Forgets the cached first stage; call after the state is changed
    /// externally (reset, truncation).
    pub fn invalidate(&mut self) {
        self.fsal_valid = false;
    }

    fn err_norm(&self, y: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let sk = self.cfg.atol + self.cfg.rtol * y[i].abs().max(self.ynew[i].abs());
            let e = E1 * self.k[0][i]
                + E3 * self.k[2][i]
                + E4 * self.k[3][i]
                + E5 * self.k[4][i]
                + E6 * self.k[5][i]
                + E7 * self.k[6][i];
            acc += (e / sk).powi(2);
        }
        (acc / n as f64).sqrt()
    }

    fn initial_step<F>(&mut self, f: &mut F, t: f64, y: &[f64], hmax: f64) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.n;
        let (atol, rtol) = (self.cfg.atol, self.cfg.rtol);
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..n {
            let sk = atol + rtol * y[i].abs();
            dnf += (self.k[0][i] / sk).powi(2);
            dny += (y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(hmax);
        for i in 0..n {
            self.ytmp[i] = y[i] + h * self.k[0][i];
        }
        let mut f1 = vec![0.0; n];
        f(t + h, &self.ytmp, &mut f1);
        let mut der2 = 0.0;
        for i in 0..n {
            let sk = atol + rtol * y[i].abs();
            der2 += ((f1[i] - self.k[0][i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1).min(hmax)
    }

    fn attempt<F>(&mut self, f: &mut F, t: f64, y: &[f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.n;
        macro_rules! stage {
            ($dst:expr, $c:expr, $( ($a:expr, $j:expr) ),+ ) => {{
                for i in 0..n {
                    let mut s = 0.0;
                    $( s += $a * self.k[$j][i]; )+
                    self.ytmp[i] = y[i] + h * s;
                }
                let (ytmp, k) = (&self.ytmp, &mut self.k[$dst]);
                f(t + $c * h, ytmp, k);
            }};
        }
        stage!(1, C2, (A21, 0));
        stage!(2, C3, (A31, 0), (A32, 1));
        stage!(3, C4, (A41, 0), (A42, 1), (A43, 2));
        stage!(4, C5, (A51, 0), (A52, 1), (A53, 2), (A54, 3));
        stage!(5, 1.0, (A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4));
        for i in 0..n {
            self.ynew[i] = y[i]
                + h * (A71 * self.k[0][i] + A73 * self.k[2][i] + A74 * self.k[3][i] + A75 * self.k[4][i] + A76 * self.k[5][i]);
        }
        {
            let (ynew, k) = (&self.ynew, &mut self.k[6]);
            f(t + h, ynew, k);
        }
        self.steps += 1;
    }

    fn dense(&self, t: f64, y: &[f64], h: f64) -> DenseStep {
        let n = self.n;
        let mut rc = vec![0.0; 5 * n];
        for i in 0..n {
            let ydiff = self.ynew[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            rc[i] = y[i];
            rc[n + i] = ydiff;
            rc[2 * n + i] = bspl;
            rc[3 * n + i] = ydiff - h * self.k[6][i] - bspl;
            rc[4 * n + i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
        DenseStep { t0: t, h, span: h, n, rc }
    }

    /// Takes one accepted step from `(t, y)` without passing `t_limit`.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &[f64], t_limit: f64) -> Result<AcceptedStep, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let remaining = t_limit - t;
        debug_assert!(remaining > 0.0);
        let hmax = self.cfg.max_step.unwrap_or(f64::INFINITY).min(remaining);
        if !self.fsal_valid {
            let (k0, _) = self.k.split_at_mut(1);
            f(t, y, &mut k0[0]);
            self.fsal_valid = true;
        }
        let mut h = match self.h_next {
            Some(h) => h,
            None => self.initial_step(f, t, y, hmax),
        };
        let mut rejected = false;
        loop {
            if self.steps >= self.cfg.max_steps {
                return Err(OdeError::TooManySteps(self.cfg.max_steps));
            }
            let last = h >= hmax * (1.0 - 1e-12);
            if last {
                h = hmax;
            }
            if h.abs() <= 16.0 * f64::EPSILON * t.abs().max(remaining).max(1e-300) && !last {
                return Err(OdeError::StepSizeUnderflow { t });
            }
            self.attempt(f, t, y, h);
            let err = {
                let mut e = self.err_norm(y) * h;
                if !e.is_finite() || self.ynew.iter().any(|v| !v.is_finite()) {
                    e = f64::INFINITY;
                }
                e
            };
            if err <= 1.0 {
                let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
                let fac = if rejected { fac.min(1.0) } else { fac };
                let hn = h * fac;
                // keep the proposal from the unconstrained step when we clipped to the limit
                self.h_next = Some(if last && self.h_next.is_some() { hn.max(self.h_next.unwrap()) } else { hn });
                let dense = self.dense(t, y, h);
                let t_new = if last && hmax == remaining { t_limit } else { t + h };
                let y_new = self.ynew.clone();
                self.k.swap(0, 6);
                return Ok(AcceptedStep { t_new, y_new, dense });
            }
            if !err.is_finite() {
                h *= 0.1;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
            rejected = true;
            if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
                if self.ynew.iter().any(|v| !v.is_finite()) {
                    return Err(OdeError::NonFinite { t });
                }
                return Err(OdeError::StepSizeUnderflow { t });
            }
        }
    }
}

/// Integrates a smooth ODE from `t0` to `t1`, returning the end state and the
/// dense pieces.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, cfg: IntegratorConfig) -> Result<(Vec<f64>, Vec<DenseStep>), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut stepper = Dopri5::new(y0.len(), cfg);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut pieces = Vec::new();
    while t < t1 {
        let s = stepper.step(&mut f, t, &y, t1)?;
        t = s.t_new;
        y = s.y_new;
        pieces.push(s.dense);
    }
    Ok((y, pieces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_hits_tolerance() {
        let (y, pieces) = integrate(|_, y, d| d[0] = -y[0], 0.0, &[1.0], 2.0, IntegratorConfig::default()).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-9);
        // dense output at midpoints
        for p in &pieces {
            let tm = p.t0 + 0.5 * p.span;
            let v = p.state_at(tm)[0];
            assert!((v - (-tm).exp()).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn quadratic_solution_is_reproduced_exactly() {
        let (y, pieces) = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -2.0;
            },
            0.0,
            &[1.0, 0.0],
            0.9,
            IntegratorConfig::default(),
        )
        .unwrap();
        assert!((y[0] - (1.0 - 0.81)).abs() < 1e-13);
        let p = &pieces[0];
        let t = p.t0 + 0.3 * p.span;
        assert!((p.state_at(t)[0] - (1.0 - t * t)).abs() < 1e-13);
    }
}
