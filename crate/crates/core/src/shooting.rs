//! Flow maps with exact sensitivities and a least-squares Newton solver.

use nalgebra::{DMatrix, DVector};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::integrate::{integrate, Tolerances};
use crate::params::ModelParams;
use crate::sim::ShapeFlow;

/// Direction along which a flow is differentiated: a state perturbation and a
/// perturbation of the spring equilibria.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Seed {
    pub state: [f64; 4],
    pub r_eq: [f64; 2],
}

impl Seed {
    pub fn state(i: usize) -> Self {
        let mut s = Self::default();
        s.state[i] = 1.0;
        s
    }

    pub fn diagonal_eq() -> Self {
        Self {
            state: [0.0; 4],
            r_eq: [1.0, -1.0],
        }
    }
}

/// Unactuated shape flow over time `t`.
pub fn flow(p: &ModelParams, y0: &[f64; 4], t: f64, tol: Tolerances) -> Result<[f64; 4]> {
    integrate(&ShapeFlow::new(*p), 0.0, *y0, t, tol)
}

/// Flow over time `t` with its directional derivatives along `seeds`.
pub fn flow_tangents(
    p: &ModelParams,
    y0: &[f64; 4],
    t: f64,
    tol: Tolerances,
    seeds: &[Seed],
) -> Result<([f64; 4], Vec<[f64; 4]>)> {
    if seeds.is_empty() {
        return Ok((flow(p, y0, t, tol)?, Vec::new()));
    }
    let mut end = [0.0; 4];
    let mut tangents = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let mut pd = p.map(Dual::constant);
        pd.r_eq = std::array::from_fn(|i| Dual::new(p.r_eq[i], seed.r_eq[i]));
        let yd: [Dual<f64>; 4] = std::array::from_fn(|i| Dual::new(y0[i], seed.state[i]));
        let y = integrate(&ShapeFlow::new(pd), Dual::constant(0.0), yd, Dual::constant(t), tol)?;
        end = y.map(|d| d.re);
        tangents.push(y.map(|d| d.eps));
    }
    Ok((end, tangents))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged when the residual norm drops below this.
    pub tol: f64,
    /// Relative cutoff for singular values in the least-squares step.
    pub rcond: f64,
    /// Largest allowed step norm.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
            rcond: 1e-10,
            max_step: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub z: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Jacobian at the returned point.
    pub jacobian: DMatrix<f64>,
}

/// Gauss–Newton with SVD least-squares steps and backtracking.
///
/// `system(z, with_jacobian)` returns the residual and, when requested, its
/// Jacobian. Rank deficiency from continuous symmetries is handled by the
/// minimum-norm step.
pub fn gauss_newton(
    mut system: impl FnMut(&DVector<f64>, bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)>,
    z0: DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    let mut z = z0;
    let (mut f, mut jac) = system(&z, true)?;
    let mut norm = f.norm();
    for it in 0..opts.max_iter {
        let j = jac.take().expect("jacobian requested");
        if norm < opts.tol {
            return Ok(NewtonResult {
                z,
                residual: norm,
                iterations: it,
                jacobian: j,
            });
        }
        let svd = j.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let mut dz = svd
            .solve(&(-&f), opts.rcond * smax)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        let n = dz.norm();
        if n > opts.max_step {
            dz *= opts.max_step / n;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &z + &dz * lambda;
            if let Ok((ft, _)) = system(&trial, false) {
                let nt = ft.norm();
                if nt.is_finite() && nt < norm * (1.0 - 1e-4 * lambda) {
                    z = trial;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: norm,
            });
        }
        let (fz, jz) = system(&z, true)?;
        f = fz;
        jac = jz;
        norm = f.norm();
    }
    if norm < opts.tol {
        return Ok(NewtonResult {
            z,
            residual: norm,
            iterations: opts.max_iter,
            jacobian: jac.expect("jacobian requested"),
        });
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tangents_match_finite_differences() {
        let p = ModelParams::default();
        let y0 = [0.8, -0.4, 0.2, -0.1];
        let tol = Tolerances::new(1e-12, 1e-14);
        let seeds = [Seed::state(0), Seed::state(3), Seed::diagonal_eq()];
        let (end, tan) = flow_tangents(&p, &y0, 1.3, tol, &seeds).unwrap();
        let plain = flow(&p, &y0, 1.3, tol).unwrap();
        for i in 0..4 {
            assert_relative_eq!(end[i], plain[i], max_relative = 1e-12);
        }
        let h = 1e-6;
        for (seed, t) in seeds.iter().zip(&tan) {
            let shifted = |s: f64| {
                let y: [f64; 4] = std::array::from_fn(|i| y0[i] + s * seed.state[i]);
                let q = p.with_r_eq([p.r_eq[0] + s * seed.r_eq[0], p.r_eq[1] + s * seed.r_eq[1]]);
                flow(&q, &y, 1.3, tol).unwrap()
            };
            let (a, b) = (shifted(h), shifted(-h));
            for i in 0..4 {
                assert_relative_eq!(t[i], (a[i] - b[i]) / (2.0 * h), epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn newton_solves_square_and_redundant_systems() {
        let square = |z: &DVector<f64>, _: bool| {
            let f = DVector::from_vec(vec![z[0] * z[0] - 2.0, z[0] + z[1] - 1.0]);
            let j = DMatrix::from_row_slice(2, 2, &[2.0 * z[0], 0.0, 1.0, 1.0]);
            Ok((f, Some(j)))
        };
        let r = gauss_newton(square, DVector::from_vec(vec![1.0, 0.0]), &NewtonOptions::default()).unwrap();
        assert_relative_eq!(r.z[0], 2f64.sqrt(), epsilon = 1e-9);

        // one equation repeated: rank one Jacobian, consistent system
        let redundant = |z: &DVector<f64>, _: bool| {
            let g = z[0] + 2.0 * z[1] - 3.0;
            let f = DVector::from_vec(vec![g, 2.0 * g]);
            let j = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
            Ok((f, Some(j)))
        };
        let r = gauss_newton(redundant, DVector::from_vec(vec![0.0, 0.0]), &NewtonOptions::default()).unwrap();
        assert!(r.residual < 1e-9);
        assert_relative_eq!(r.z[0], 0.6, epsilon = 1e-9);
    }
}
