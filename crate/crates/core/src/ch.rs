//! Convective nonlocal Cahn-Hilliard stepping.
//!
//! With the nonlocal part written around a shift `s` (the midrange of `φⁿ`),
//!
//! ```text
//! μ = a(φ − s) − J∗(φ − s) + F'(φ),
//! ```
//!
//! the convex-split step is implicit in `g(φ) = a(φ − s) + G'(φ)` and explicit
//! in `e = −J∗(φⁿ − s) + α_* φⁿ`:
//!
//! ```text
//! φⁿ⁺¹ − dt Δ g(φⁿ⁺¹) = φⁿ − dt div(u φⁿ) + dt Δ e,     μⁿ⁺¹ = g(φⁿ⁺¹) + e.
//! ```
//!
//! The shift makes constant states exact fixed points (the nonlocal part of a
//! constant field is identically zero rather than `c·a − J∗c`). The convective
//! flux on a face is `u·½(φ_L + φ_R)`, the adjoint of the capillary force used
//! by the momentum step.

use thiserror::Error;

use crate::grid::{divergence_into, gradient_into, laplace_into, Grid, GridError, ScalarBc, ScalarField, VectorField};
use crate::kernel::KernelData;
use crate::potential::{DoubleWell, PotentialError};
use crate::solver::{conjugate_gradient, CgError, CgOptions};

/// Nodes of a singular-potential run may not come closer than this to ±1.
pub const SINGULAR_GUARD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChError {
    #[error("Newton iteration failed after {iterations} iterations (residual {residual:e}); retry with dt = {suggested_dt:e}")]
    NewtonFailed {
        iterations: usize,
        residual: f64,
        suggested_dt: f64,
    },
    #[error("non-finite value in the phase field")]
    NonFinite,
    #[error("|φ| reached {max_abs} within {guard:e} of ±1 under the singular potential")]
    SingularGuard { max_abs: f64, guard: f64 },
    #[error("explicit step dt = {dt:e} exceeds the stability limit {limit:e}")]
    ExplicitUnstable { dt: f64, limit: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] CgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChScheme {
    ConvexSplit,
    Explicit,
}

impl std::str::FromStr for ChScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convex-split" | "semi-implicit-convex-split" => Ok(Self::ConvexSplit),
            "explicit" => Ok(Self::Explicit),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

impl ChScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::ConvexSplit => "convex-split",
            Self::Explicit => "explicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChOptions {
    pub scheme: ChScheme,
    /// Newton stops once `‖R‖_∞ ≤ newton_tol·max(1, ‖b‖_∞)`, or once `‖R‖_∞`
    /// is down to the rounding noise of evaluating `dtΔg`.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Relative tolerance of the inner linear solves.
    pub linear_tol: f64,
}

impl Default for ChOptions {
    fn default() -> Self {
        Self {
            scheme: ChScheme::ConvexSplit,
            newton_tol: 1e-12,
            max_newton: 50,
            linear_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChState {
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub t: f64,
    pub mass0: f64,
}

impl ChState {
    /// Initial state with `μ` evaluated from `φ`.
    pub fn new(phi: ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<Self, ChError> {
        let mu = chemical_potential(&phi, kd, pot)?;
        let mass0 = phi.mean();
        Ok(Self { phi, mu, t: 0.0, mass0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct ChStepStats {
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
}

fn midrange(f: &[f64]) -> f64 {
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    0.5 * (lo + hi)
}

/// `aψ − J∗ψ` with `ψ = φ − s`.
fn nonlocal_part(phi: &[f64], kd: &KernelData, s: f64) -> Vec<f64> {
    let psi: Vec<f64> = phi.iter().map(|p| p - s).collect();
    let mut conv = vec![0.0; psi.len()];
    kd.convolve_values(&psi, &mut conv);
    let a = kd.a_field().values();
    psi.iter().zip(a).zip(&conv).map(|((p, a), c)| a * p - c).collect()
}

/// `μ = aφ − J∗φ + F'(φ)` nodewise.
pub fn chemical_potential(phi: &ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<ScalarField, ChError> {
    phi.ensure_same_grid(kd.grid())?;
    if !phi.is_finite() {
        return Err(ChError::NonFinite);
    }
    let s = midrange(phi.values());
    let mut mu = nonlocal_part(phi.values(), kd, s);
    for (m, &p) in mu.iter_mut().zip(phi.values()) {
        *m += pot.first(p)?;
    }
    Ok(ScalarField::from_values(*phi.grid(), mu)?.with_bc(ScalarBc::NeumannNoFlux))
}

/// Cahn-Hilliard free energy split into its nonlocal and potential parts.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChEnergy {
    /// `¼∬J(φ(x) − φ(y))²`, evaluated as `½⟨aψ, ψ⟩ − ½⟨ψ, J∗ψ⟩`.
    pub nonlocal: f64,
    pub potential: f64,
    pub total: f64,
}

pub fn ch_energy(phi: &ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<ChEnergy, ChError> {
    phi.ensure_same_grid(kd.grid())?;
    let w = phi.grid().cell_volume();
    let s = midrange(phi.values());
    let nl = nonlocal_part(phi.values(), kd, s);
    let nonlocal = 0.5 * w * nl.iter().zip(phi.values()).map(|(n, p)| n * (p - s)).sum::<f64>();
    let mut potential = 0.0;
    for &p in phi.values() {
        potential += pot.value(p)?;
    }
    potential *= w;
    Ok(ChEnergy {
        nonlocal,
        potential,
        total: nonlocal + potential,
    })
}

/// `div(u·φ_face)` with `φ_face = ½(φ_L + φ_R)`; `u` vanishes on walls.
pub fn convective_flux_divergence(phi: &ScalarField, u: &VectorField) -> Result<ScalarField, ChError> {
    let g = *phi.grid();
    u.ensure_same_grid(&g)?;
    let (fu, fv) = face_products(&g, phi.values(), u);
    let mut out = vec![0.0; g.cells()];
    divergence_into(&g, &fu, &fv, &mut out);
    Ok(ScalarField::from_values(g, out)?)
}

/// Face components of `u·φ_face`.
pub(crate) fn face_products(g: &Grid, phi: &[f64], u: &VectorField) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (g.nx(), g.ny());
    let mut fu = vec![0.0; g.u_len()];
    let mut fv = vec![0.0; g.v_len()];
    for j in 0..ny {
        for i in 1..nx {
            let k = g.uidx(i, j);
            fu[k] = u.u()[k] * 0.5 * (phi[j * nx + i] + phi[j * nx + i - 1]);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let k = g.vidx(i, j);
            fv[k] = u.v()[k] * 0.5 * (phi[j * nx + i] + phi[(j - 1) * nx + i]);
        }
    }
    (fu, fv)
}

/// Advances `state` by `dt` with the prescribed divergence-free velocity `u`.
pub fn ch_step(
    state: &ChState,
    u: &VectorField,
    dt: f64,
    kd: &KernelData,
    pot: &dyn DoubleWell,
    opts: &ChOptions,
) -> Result<(ChState, ChStepStats), ChError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ChError::InvalidDt(dt));
    }
    let g = *state.phi.grid();
    state.phi.ensure_same_grid(kd.grid())?;
    u.ensure_same_grid(&g)?;
    if !state.phi.is_finite() || !u.is_finite() {
        return Err(ChError::NonFinite);
    }
    let (phi, mu, stats) = match opts.scheme {
        ChScheme::ConvexSplit => convex_split_step(&state.phi, u, dt, kd, pot, opts)?,
        ChScheme::Explicit => explicit_step(&state.phi, u, dt, kd, pot)?,
    };
    if phi.iter().any(|v| !v.is_finite()) || mu.iter().any(|v| !v.is_finite()) {
        return Err(ChError::NonFinite);
    }
    if pot.is_singular() {
        let max_abs = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs >= 1.0 - SINGULAR_GUARD {
            return Err(ChError::SingularGuard {
                max_abs,
                guard: SINGULAR_GUARD,
            });
        }
    }
    let next = ChState {
        phi: ScalarField::from_values(g, phi)?.with_bc(ScalarBc::NeumannNoFlux),
        mu: ScalarField::from_values(g, mu)?.with_bc(ScalarBc::NeumannNoFlux),
        t: state.t + dt,
        mass0: state.mass0,
    };
    Ok((next, stats))
}

/// Largest explicit step allowed at the current state.
pub fn explicit_dt_limit(phi: &ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<f64, ChError> {
    let g = phi.grid();
    let h = g.hx().min(g.hy());
    let mut curv: f64 = 0.0;
    for &p in phi.values() {
        curv = curv.max(pot.second(p)?);
    }
    let bound = (kd.a_inf() + curv).max(f64::MIN_POSITIVE);
    Ok(h * h / (4.0 * bound))
}

fn explicit_step(
    phi: &ScalarField,
    u: &VectorField,
    dt: f64,
    kd: &KernelData,
    pot: &dyn DoubleWell,
) -> Result<(Vec<f64>, Vec<f64>, ChStepStats), ChError> {
    let limit = explicit_dt_limit(phi, kd, pot)?;
    if dt > limit {
        return Err(ChError::ExplicitUnstable { dt, limit });
    }
    let g = *phi.grid();
    let mu = chemical_potential(phi, kd, pot)?.into_values();
    let conv = convective_flux_divergence(phi, u)?;
    let mut lap = vec![0.0; g.cells()];
    laplace_into(&g, &mu, &mut lap);
    let next = phi
        .values()
        .iter()
        .zip(&lap)
        .zip(conv.values())
        .map(|((p, l), c)| p + dt * (l - c))
        .collect();
    Ok((next, mu, ChStepStats::default()))
}

fn convex_split_step(
    phi_n: &ScalarField,
    u: &VectorField,
    dt: f64,
    kd: &KernelData,
    pot: &dyn DoubleWell,
    opts: &ChOptions,
) -> Result<(Vec<f64>, Vec<f64>, ChStepStats), ChError> {
    let g = *phi_n.grid();
    let n = g.cells();
    let a = kd.a_field().values();
    let alpha_star = pot.alpha_star();
    let pn = phi_n.values();
    let s = midrange(pn);

    // explicit part e = −J∗ψⁿ + α_* φⁿ
    let psi: Vec<f64> = pn.iter().map(|p| p - s).collect();
    let mut e = vec![0.0; n];
    kd.convolve_values(&psi, &mut e);
    for (ek, p) in e.iter_mut().zip(pn) {
        *ek = -*ek + alpha_star * p;
    }

    // b = φⁿ − dt div(uφⁿ) + dt Δe
    let conv = convective_flux_divergence(phi_n, u)?;
    let mut b = vec![0.0; n];
    laplace_into(&g, &e, &mut b);
    for k in 0..n {
        b[k] = pn[k] + dt * (b[k] - conv.values()[k]);
    }
    let b_scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = opts.newton_tol * b_scale;

    let singular = pot.is_singular();
    let implicit = |x: &[f64], gv: &mut [f64], gp: &mut [f64]| -> Result<(), PotentialError> {
        for k in 0..x.len() {
            gv[k] = a[k] * (x[k] - s) + pot.convex_first(x[k])?;
            gp[k] = a[k] + pot.convex_second(x[k])?;
        }
        Ok(())
    };
    let residual = |x: &[f64], gv: &[f64], lap: &mut [f64], r: &mut [f64]| -> f64 {
        laplace_into(&g, gv, lap);
        let mut m: f64 = 0.0;
        for k in 0..x.len() {
            r[k] = x[k] - dt * lap[k] - b[k];
            m = m.max(r[k].abs());
        }
        m
    };

    let mut x = pn.to_vec();
    let mut gv = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let mut r = vec![0.0; n];
    implicit(&x, &mut gv, &mut gp)?;
    let mut rnorm = residual(&x, &gv, &mut lap, &mut r);
    let mut stats = ChStepStats::default();
    let fail = |iterations, residual| ChError::NewtonFailed {
        iterations,
        residual,
        suggested_dt: 0.5 * dt,
    };

    let mut trial = vec![0.0; n];
    let mut tgv = vec![0.0; n];
    let mut tgp = vec![0.0; n];
    let mut tr = vec![0.0; n];
    // perturbing x by one ulp moves dtΔg(x) by about dt·|Δ|·g'·ulp; below that the
    // residual is noise
    let lap_norm = 4.0 / (g.hx() * g.hx()) + 4.0 / (g.hy() * g.hy());
    let noise = |gp: &[f64]| {
        let gmax = gp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        16.0 * f64::EPSILON * (1.0 + dt * lap_norm * gmax)
    };
    while rnorm > tol.max(noise(&gp)) {
        if stats.newton_iterations >= opts.max_newton {
            return Err(fail(stats.newton_iterations, rnorm));
        }
        stats.newton_iterations += 1;
        // (diag(1/g') − dtΔ) η = −R, δ = η / g'
        let inv_gp: Vec<f64> = gp.iter().map(|v| 1.0 / v).collect();
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut eta = vec![0.0; n];
        let cg = conjugate_gradient(
            |p, out| {
                laplace_into(&g, p, out);
                for k in 0..p.len() {
                    out[k] = inv_gp[k] * p[k] - dt * out[k];
                }
            },
            &rhs,
            &mut eta,
            CgOptions {
                rel_tol: opts.linear_tol,
                abs_tol: 0.0,
                max_iter: 10 * n,
                zero_mean: false,
            },
        )?;
        stats.linear_iterations += cg.iterations;
        let delta: Vec<f64> = eta.iter().zip(&inv_gp).map(|(e, ig)| e * ig).collect();

        let mut step = 1.0;
        if singular {
            // stay strictly inside (−1, 1)
            for k in 0..n {
                let target = x[k] + delta[k];
                if target.abs() >= 1.0 {
                    let room = (delta[k].signum() - x[k]) / delta[k];
                    step = f64::min(step, 0.99 * room);
                }
            }
        }
        // backtrack until the residual decreases
        let mut accepted = false;
        for _ in 0..30 {
            for k in 0..n {
                trial[k] = x[k] + step * delta[k];
            }
            if implicit(&trial, &mut tgv, &mut tgp).is_ok() {
                let tn = residual(&trial, &tgv, &mut lap, &mut tr);
                if tn < rnorm || tn <= tol.max(noise(&tgp)) {
                    std::mem::swap(&mut x, &mut trial);
                    std::mem::swap(&mut gv, &mut tgv);
                    std::mem::swap(&mut gp, &mut tgp);
                    std::mem::swap(&mut r, &mut tr);
                    rnorm = tn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(fail(stats.newton_iterations, rnorm));
        }
    }
    stats.residual = rnorm;

    // flux form φⁿ⁺¹ = b + dt Δg keeps the mass balance exact
    laplace_into(&g, &gv, &mut lap);
    let next: Vec<f64> = b.iter().zip(&lap).map(|(bk, l)| bk + dt * l).collect();
    let mu: Vec<f64> = gv.iter().zip(&e).map(|(gk, ek)| gk + ek).collect();
    Ok((next, mu, stats))
}

/// Per-step residual of the CH energy balance with prescribed velocity:
/// `(E_{n+1} − E_n)/dt + ‖∇μⁿ⁺¹‖² − (u φⁿ, ∇μⁿ⁺¹)`.
pub fn ch_energy_identity_residual(
    traj: &[ChState],
    velocities: &[VectorField],
    kd: &KernelData,
    pot: &dyn DoubleWell,
) -> Result<Vec<f64>, ChError> {
    assert_eq!(velocities.len() + 1, traj.len(), "one velocity per step");
    let mut energies = Vec::with_capacity(traj.len());
    for st in traj {
        energies.push(ch_energy(&st.phi, kd, pot)?.total);
    }
    let mut out = Vec::with_capacity(velocities.len());
    for (n, u) in velocities.iter().enumerate() {
        let dt = traj[n + 1].t - traj[n].t;
        let (grad_mu2, transport) = ch_dissipation(&traj[n].phi, &traj[n + 1].mu, u);
        out.push((energies[n + 1] - energies[n]) / dt + grad_mu2 - transport);
    }
    Ok(out)
}

/// `(‖∇μ‖², (u φ_face, ∇μ))`.
pub fn ch_dissipation(phi: &ScalarField, mu: &ScalarField, u: &VectorField) -> (f64, f64) {
    let g = *phi.grid();
    let mut gu = vec![0.0; g.u_len()];
    let mut gv = vec![0.0; g.v_len()];
    gradient_into(&g, mu.values(), &mut gu, &mut gv);
    let w = g.cell_volume();
    let grad2 = w * (gu.iter().map(|x| x * x).sum::<f64>() + gv.iter().map(|x| x * x).sum::<f64>());
    let (fu, fv) = face_products(&g, phi.values(), u);
    let transport = w * (fu.iter().zip(&gu).map(|(a, b)| a * b).sum::<f64>()
        + fv.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>());
    (grad2, transport)
}
