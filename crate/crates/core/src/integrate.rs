//! Dormand–Prince 5(4) integrator with PI step control and dense output.
//!
//! Generic over [`Scalar`]: when the state carries dual numbers the step
//! sequence is chosen from the primal values only, so the tangent part is the
//! exact derivative of the discrete flow.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Right-hand side `ẏ = f(t, y)` of an ODE with `N` states.
pub trait OdeSystem<S: Scalar, const N: usize> {
    fn rhs(&self, t: S, y: &[S; N]) -> Result<[S; N]>;
}

impl<S: Scalar, const N: usize, F> OdeSystem<S, N> for F
where
    F: Fn(S, &[S; N]) -> Result<[S; N]>,
{
    fn rhs(&self, t: S, y: &[S; N]) -> Result<[S; N]> {
        self(t, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Largest step; `0` means unbounded.
    pub h_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
            h_max: 0.0,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
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

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct Step<S, const N: usize> {
    pub t0: S,
    pub t1: S,
    pub y0: [S; N],
    pub y1: [S; N],
    pub f0: [S; N],
    pub f1: [S; N],
    cont: [[S; N]; 5],
}

impl<S: Scalar, const N: usize> Step<S, N> {
    /// Fourth-order dense output inside `[t0, t1]`.
    pub fn interpolate(&self, t: S) -> [S; N] {
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = S::one() - th;
        let c = &self.cont;
        std::array::from_fn(|i| c[0][i] + th * (c[1][i] + th1 * (c[2][i] + th * (c[3][i] + th1 * c[4][i]))))
    }

    pub fn h(&self) -> S {
        self.t1 - self.t0
    }
}

/// Stepper state for one integration.
pub struct Dopri5<'a, Sys, S: Scalar, const N: usize> {
    sys: &'a Sys,
    tol: Tolerances,
    pub t: S,
    pub y: [S; N],
    f: [S; N],
    h: f64,
    err_old: f64,
    steps: usize,
    rejected_in_row: usize,
}

fn axpy<S: Scalar, const N: usize>(y: &[S; N], h: S, terms: &[(f64, &[S; N])]) -> [S; N] {
    std::array::from_fn(|i| {
        let mut acc = S::zero();
        for (c, k) in terms {
            if *c != 0.0 {
                acc += S::lit(*c) * k[i];
            }
        }
        y[i] + h * acc
    })
}

impl<'a, Sys, S, const N: usize> Dopri5<'a, Sys, S, N>
where
    Sys: OdeSystem<S, N>,
    S: Scalar,
{
    pub fn new(sys: &'a Sys, t0: S, y0: [S; N], tol: Tolerances) -> Result<Self> {
        let f = sys.rhs(t0, &y0)?;
        Ok(Self {
            sys,
            tol,
            t: t0,
            y: y0,
            f,
            h: 0.0,
            err_old: 1e-4,
            steps: 0,
            rejected_in_row: 0,
        })
    }

    fn scale(&self, a: S, b: S) -> f64 {
        self.tol.atol + self.tol.rtol * a.value().abs().max(b.value().abs())
    }

    fn initial_step(&self, dir: f64) -> Result<f64> {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sk = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i].value() / sk).powi(2);
            d1 += (self.f[i].value() / sk).powi(2);
        }
        let n = N as f64;
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        if self.tol.h_max > 0.0 {
            h0 = h0.min(self.tol.h_max);
        }
        let y1 = axpy(&self.y, S::lit(dir * h0), &[(1.0, &self.f)]);
        let f1 = self.sys.rhs(self.t + S::lit(dir * h0), &y1)?;
        let mut d2 = 0.0;
        for i in 0..N {
            let sk = self.scale(self.y[i], self.y[i]);
            d2 += ((f1[i] - self.f[i]).value() / sk).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1))
    }

    /// Takes one accepted step, never passing `t_end`.
    pub fn step(&mut self, t_end: S) -> Result<Step<S, N>> {
        let dir = if (t_end - self.t).value() >= 0.0 { 1.0 } else { -1.0 };
        if self.h == 0.0 {
            self.h = self.initial_step(dir)?;
        }
        loop {
            self.steps += 1;
            if self.steps > self.tol.max_steps {
                return Err(Error::StepFailure { t: self.t.value(), h: self.h });
            }
            let remaining = (t_end - self.t).value() * dir;
            let mut h = self.h.min(if self.tol.h_max > 0.0 { self.tol.h_max } else { f64::INFINITY });
            let last = h >= remaining * (1.0 - 1e-12) || remaining - h < 1e-12 * remaining.abs().max(1.0);
            // land exactly on t_end (keeps its tangent part for dual time)
            let hs = if last {
                h = remaining;
                t_end - self.t
            } else {
                S::lit(dir * h)
            };
            if h <= 1e-14 * (1.0 + self.t.value().abs()) && !last {
                return Err(Error::StepFailure { t: self.t.value(), h });
            }
            let t = self.t;
            let y = &self.y;
            let k1 = self.f;
            let k2 = self.sys.rhs(t + S::lit(C2) * hs, &axpy(y, hs, &[(A21, &k1)]))?;
            let k3 = self.sys.rhs(t + S::lit(C3) * hs, &axpy(y, hs, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = self.sys.rhs(
                t + S::lit(C4) * hs,
                &axpy(y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = self.sys.rhs(
                t + S::lit(C5) * hs,
                &axpy(y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = self.sys.rhs(
                t + hs,
                &axpy(y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            )?;
            let y1 = axpy(y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let t1 = if last { t_end } else { t + hs };
            let k7 = self.sys.rhs(t1, &y1)?;

            let mut err = 0.0;
            for i in 0..N {
                let e = (E1 * k1[i].value()
                    + E3 * k3[i].value()
                    + E4 * k4[i].value()
                    + E5 * k5[i].value()
                    + E6 * k6[i].value()
                    + E7 * k7[i].value())
                    * h;
                let sk = self.scale(y[i], y1[i]);
                err += (e / sk).powi(2);
            }
            let err = (err / N as f64).sqrt();
            if !err.is_finite() {
                self.h *= 0.1;
                self.rejected_in_row += 1;
                if self.rejected_in_row > 50 {
                    return Err(Error::StepFailure { t: t.value(), h });
                }
                continue;
            }

            const BETA: f64 = 0.04;
            const EXPO: f64 = 0.2 - BETA * 0.75;
            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let fac = (fac11 / self.err_old.powf(BETA) / 0.9).clamp(1.0 / 10.0, 5.0);
                self.err_old = err.max(1e-4);
                self.h = h / fac;
                self.rejected_in_row = 0;

                let ydiff: [S; N] = std::array::from_fn(|i| y1[i] - y[i]);
                let bspl: [S; N] = std::array::from_fn(|i| hs * k1[i] - ydiff[i]);
                let cont = [
                    *y,
                    ydiff,
                    bspl,
                    std::array::from_fn(|i| ydiff[i] - hs * k7[i] - bspl[i]),
                    std::array::from_fn(|i| {
                        hs * (S::lit(D1) * k1[i]
                            + S::lit(D3) * k3[i]
                            + S::lit(D4) * k4[i]
                            + S::lit(D5) * k5[i]
                            + S::lit(D6) * k6[i]
                            + S::lit(D7) * k7[i])
                    }),
                ];
                let step = Step {
                    t0: t,
                    t1,
                    y0: *y,
                    y1,
                    f0: k1,
                    f1: k7,
                    cont,
                };
                self.t = t1;
                self.y = y1;
                self.f = k7;
                return Ok(step);
            }
            self.h = h / (fac11 / 0.9).min(10.0);
            self.rejected_in_row += 1;
            if self.rejected_in_row > 100 {
                return Err(Error::StepFailure { t: t.value(), h });
            }
        }
    }

    pub fn done(&self, t_end: S) -> bool {
        self.t == t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Integrates from `t0` to `t1`, calling `on_step` after every accepted step.
pub fn integrate_with<Sys, S, const N: usize>(
    sys: &Sys,
    t0: S,
    y0: [S; N],
    t1: S,
    tol: Tolerances,
    mut on_step: impl FnMut(&Step<S, N>) -> Result<()>,
) -> Result<[S; N]>
where
    Sys: OdeSystem<S, N>,
    S: Scalar,
{
    if t1 == t0 {
        return Ok(y0);
    }
    let mut stepper = Dopri5::new(sys, t0, y0, tol)?;
    while !stepper.done(t1) {
        let step = stepper.step(t1)?;
        on_step(&step)?;
    }
    Ok(stepper.y)
}

/// Integrates from `t0` to `t1` and returns the final state.
pub fn integrate<Sys, S, const N: usize>(sys: &Sys, t0: S, y0: [S; N], t1: S, tol: Tolerances) -> Result<[S; N]>
where
    Sys: OdeSystem<S, N>,
    S: Scalar,
{
    integrate_with(sys, t0, y0, t1, tol, |_| Ok(()))
}
