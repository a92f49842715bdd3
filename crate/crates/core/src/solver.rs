//! Matrix-free conjugate gradient.
//!
//! Every linear system in the solver is symmetric positive definite under the
//! plain Euclidean inner product (uniform quadrature weights cancel), so one
//! CG routine serves the Neumann Poisson problem, the implicit Cahn-Hilliard
//! Newton systems and the viscous velocity solve.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:e}, target {target:e})")]
pub struct CgError {
    pub iterations: usize,
    pub residual: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop when `‖r‖ ≤ max(rel_tol·‖b‖, abs_tol)`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Work on the zero-mean subspace: `b`, the iterate and every Krylov
    /// vector are re-projected after each operator application.
    pub zero_mean: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_iter: 10_000,
            zero_mean: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

/// Solves `A x = b` for SPD `A` given as `apply(x, out)`; `x` holds the
/// initial guess on entry.
pub fn conjugate_gradient<F>(
    mut apply: F,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgStats, CgError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n, "cg: dimension mismatch");
    let mut rhs = b.to_vec();
    if opts.zero_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let target = (opts.rel_tol * dot(&rhs, &rhs).sqrt()).max(opts.abs_tol);

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    // A couple of restarts guard against recurrence drift at tight tolerances.
    for _restart in 0..4 {
        apply(x, &mut ap);
        for i in 0..n {
            r[i] = rhs[i] - ap[i];
        }
        if opts.zero_mean {
            remove_mean(&mut r);
        }
        let mut rr = dot(&r, &r);
        if rr.sqrt() <= target {
            return Ok(CgStats {
                iterations,
                residual: rr.sqrt(),
            });
        }
        let mut p = r.clone();
        loop {
            if iterations >= opts.max_iter {
                return Err(CgError {
                    iterations,
                    residual: rr.sqrt(),
                    target,
                });
            }
            iterations += 1;
            apply(&p, &mut ap);
            if opts.zero_mean {
                remove_mean(&mut ap);
            }
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= target {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        if opts.zero_mean {
            remove_mean(x);
        }
    }
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    if opts.zero_mean {
        remove_mean(&mut r);
    }
    let residual = dot(&r, &r).sqrt();
    if residual <= target * 10.0 {
        Ok(CgStats {
            iterations,
            residual,
        })
    } else {
        Err(CgError {
            iterations,
            residual,
            target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // tridiagonal 2,-1 matrix
        let n = 20;
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                out[i] = 2.0 * x[i] - left - right;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let stats = conjugate_gradient(apply, &b, &mut x, CgOptions::default()).unwrap();
        assert!(stats.iterations <= n + 1);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let mut x = vec![0.0; 5];
        let stats = conjugate_gradient(
            |x: &[f64], out: &mut [f64]| out.copy_from_slice(x),
            &[0.0; 5],
            &mut x,
            CgOptions::default(),
        )
        .unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reports_non_convergence() {
        let mut x = vec![0.0; 50];
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let opts = CgOptions {
            max_iter: 2,
            rel_tol: 1e-14,
            ..CgOptions::default()
        };
        let res = conjugate_gradient(
            |x: &[f64], out: &mut [f64]| {
                for i in 0..x.len() {
                    out[i] = (1.0 + i as f64) * x[i];
                }
            },
            &b,
            &mut x,
            opts,
        );
        assert!(res.is_err());
    }
}
