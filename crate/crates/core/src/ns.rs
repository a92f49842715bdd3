//! Incompressible momentum step on the MAC grid.
//!
//! `(u* − uⁿ)/dt + L u* = −N(uⁿ) − φ_face ∇μ + h − ∇pⁿ`, then the projection
//! `A δp = −div u*/dt`, `uⁿ⁺¹ = u* − dt ∇δp`, `pⁿ⁺¹ = pⁿ + δp`.
//!
//! `L` is built from the quadratic form `2‖√ν Du‖²` with `D₁₁, D₂₂` sampled at
//! cell centres and `D₁₂` at cell corners (ghost reflection across the
//! walls), so `⟨Lu, u⟩` equals the discrete viscous dissipation exactly.
//! `N` is the divergence form of `(u·∇)u` with centred averaging.

use thiserror::Error;

use crate::ch::face_products;
use crate::grid::{divergence_into, gradient_into, laplace_into, Grid, GridError, ScalarField, VectorBc, VectorField};
use crate::solver::{conjugate_gradient, dot, CgError, CgOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NsError {
    #[error("invalid viscosity bounds ν₁ = {nu1}, ν₂ = {nu2}")]
    Viscosity { nu1: f64, nu2: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("non-finite value in the velocity")]
    NonFinite,
    #[error("linear solve failed: {0}")]
    Solver(#[from] CgError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `ν(s) = ν₁ + (ν₂ − ν₁)(1 + s)/2` clipped to `[ν₁, ν₂]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ViscositySpec {
    pub nu1: f64,
    pub nu2: f64,
}

impl ViscositySpec {
    pub fn new(nu1: f64, nu2: f64) -> Result<Self, NsError> {
        if !(nu1 > 0.0 && nu2 >= nu1 && nu2.is_finite()) {
            return Err(NsError::Viscosity { nu1, nu2 });
        }
        Ok(Self { nu1, nu2 })
    }

    pub fn constant(nu: f64) -> Result<Self, NsError> {
        Self::new(nu, nu)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.nu1 + 0.5 * (self.nu2 - self.nu1) * (1.0 + s)).clamp(self.nu1, self.nu2)
    }
}

/// Time-independent or periodic body force.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Forcing {
    Zero,
    /// Constant vector `(fx, fy)`.
    Constant { fx: f64, fy: f64 },
    /// `amplitude·sin(2πt/period)` times the curl of `sin²(πx)sin²(πy)`.
    TimePeriodic { amplitude: f64, period: f64 },
}

impl Forcing {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Constant { .. } => "constant",
            Self::TimePeriodic { .. } => "time-periodic",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    pub fn field(&self, grid: Grid, t: f64) -> VectorField {
        match *self {
            Self::Zero => VectorField::zeros(grid),
            Self::Constant { fx, fy } => VectorField::from_fns(grid, |_, _| fx, |_, _| fy, VectorBc::NoSlip),
            Self::TimePeriodic { amplitude, period } => {
                let c = amplitude * (2.0 * std::f64::consts::PI * t / period).sin();
                let (lx, ly) = (grid.lx(), grid.ly());
                VectorField::from_stream_function(grid, move |x, y| {
                    use std::f64::consts::PI;
                    c * (PI * x / lx).sin().powi(2) * (PI * y / ly).sin().powi(2)
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsState {
    pub u: VectorField,
    pub pressure: ScalarField,
    pub t: f64,
}

impl NsState {
    pub fn new(u: VectorField) -> Self {
        let g = *u.grid();
        Self {
            u,
            pressure: ScalarField::zeros(g),
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NsOptions {
    /// Relative tolerance of the momentum solve.
    pub momentum_tol: f64,
    /// Target for `‖div uⁿ⁺¹‖_∞`.
    pub div_tol: f64,
}

impl Default for NsOptions {
    fn default() -> Self {
        Self {
            momentum_tol: 1e-12,
            div_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct NsStepStats {
    pub momentum_iterations: usize,
    pub pressure_iterations: usize,
    pub max_div: f64,
}

/// Strain-form viscous operator with frozen cell and corner viscosities.
#[derive(Debug, Clone)]
pub struct ViscousOperator {
    grid: Grid,
    nu_cell: Vec<f64>,
    /// `(nx+1)·(ny+1)` corners, index `j·(nx+1) + i`.
    nu_corner: Vec<f64>,
}

impl ViscousOperator {
    pub fn new(grid: Grid, phi: &[f64], visc: &ViscositySpec) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let nu_cell: Vec<f64> = phi.iter().map(|&p| visc.eval(p)).collect();
        let mut nu_corner = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for (ci, cj) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)] {
                    if ci < nx && cj < ny {
                        acc += nu_cell[cj * nx + ci];
                        cnt += 1.0;
                    }
                }
                nu_corner[j * (nx + 1) + i] = acc / cnt;
            }
        }
        Self { grid, nu_cell, nu_corner }
    }

    pub fn uniform(grid: Grid, nu: f64) -> Self {
        let phi = vec![0.0; grid.cells()];
        Self::new(grid, &phi, &ViscositySpec { nu1: nu, nu2: nu })
    }

    fn corner_weight(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let mut w = g.cell_volume();
        if i == 0 || i == g.nx() {
            w *= 0.5;
        }
        if j == 0 || j == g.ny() {
            w *= 0.5;
        }
        w
    }

    /// Shear rate `D₁₂` at corner `(i, j)` from face values.
    fn shear(&self, u: &[f64], v: &[f64], i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let dudy = if i == 0 || i == nx {
            0.0
        } else {
            let above = if j < ny { u[g.uidx(i, j)] } else { -u[g.uidx(i, ny - 1)] };
            let below = if j > 0 { u[g.uidx(i, j - 1)] } else { -u[g.uidx(i, 0)] };
            (above - below) / g.hy()
        };
        let dvdx = if j == 0 || j == ny {
            0.0
        } else {
            let right = if i < nx { v[g.vidx(i, j)] } else { -v[g.vidx(nx - 1, j)] };
            let left = if i > 0 { v[g.vidx(i - 1, j)] } else { -v[g.vidx(0, j)] };
            (right - left) / g.hx()
        };
        0.5 * (dudy + dvdx)
    }

    /// `2‖√ν Du‖²`.
    pub fn dissipation(&self, u: &[f64], v: &[f64]) -> f64 {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let w = g.cell_volume();
        let mut acc = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let d11 = (u[g.uidx(i + 1, j)] - u[g.uidx(i, j)]) / g.hx();
                let d22 = (v[g.vidx(i, j + 1)] - v[g.vidx(i, j)]) / g.hy();
                acc += w * 2.0 * self.nu_cell[j * nx + i] * (d11 * d11 + d22 * d22);
            }
        }
        for j in 0..=ny {
            for i in 0..=nx {
                let d12 = self.shear(u, v, i, j);
                acc += self.corner_weight(i, j) * 4.0 * self.nu_corner[j * (nx + 1) + i] * d12 * d12;
            }
        }
        acc
    }

    /// `L u` on faces; `⟨Lu, w⟩ = ½ ∂²Q` paired against `w` in the face inner product.
    pub fn apply(&self, u: &[f64], v: &[f64], out_u: &mut [f64], out_v: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.hx(), g.hy());
        out_u.iter_mut().for_each(|x| *x = 0.0);
        out_v.iter_mut().for_each(|x| *x = 0.0);
        // normal strains; weights cancel against the face weight
        for j in 0..ny {
            for i in 0..nx {
                let two_nu = 2.0 * self.nu_cell[j * nx + i];
                let s11 = two_nu * (u[g.uidx(i + 1, j)] - u[g.uidx(i, j)]) / (hx * hx);
                out_u[g.uidx(i + 1, j)] += s11;
                out_u[g.uidx(i, j)] -= s11;
                let s22 = two_nu * (v[g.vidx(i, j + 1)] - v[g.vidx(i, j)]) / (hy * hy);
                out_v[g.vidx(i, j + 1)] += s22;
                out_v[g.vidx(i, j)] -= s22;
            }
        }
        let w = g.cell_volume();
        for j in 0..=ny {
            for i in 0..=nx {
                let c = self.corner_weight(i, j) / w * 2.0 * self.nu_corner[j * (nx + 1) + i] * self.shear(u, v, i, j);
                if c == 0.0 {
                    continue;
                }
                if i > 0 && i < nx {
                    let cy = c / hy;
                    if j < ny {
                        out_u[g.uidx(i, j)] += cy;
                    } else {
                        out_u[g.uidx(i, ny - 1)] -= cy;
                    }
                    if j > 0 {
                        out_u[g.uidx(i, j - 1)] -= cy;
                    } else {
                        out_u[g.uidx(i, 0)] += cy;
                    }
                }
                if j > 0 && j < ny {
                    let cx = c / hx;
                    if i < nx {
                        out_v[g.vidx(i, j)] += cx;
                    } else {
                        out_v[g.vidx(nx - 1, j)] -= cx;
                    }
                    if i > 0 {
                        out_v[g.vidx(i - 1, j)] -= cx;
                    } else {
                        out_v[g.vidx(0, j)] += cx;
                    }
                }
            }
        }
        // the operator acts on the interior (free) faces only
        for j in 0..ny {
            out_u[g.uidx(0, j)] = 0.0;
            out_u[g.uidx(nx, j)] = 0.0;
        }
        for i in 0..nx {
            out_v[g.vidx(i, 0)] = 0.0;
            out_v[g.vidx(i, ny)] = 0.0;
        }
    }
}

/// Divergence-form advection `div(u ⊗ u)` at the faces.
pub fn advection(u: &VectorField) -> VectorField {
    let g = *u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let (uu, vv) = (u.u(), u.v());
    // corner flux u·v, zero on the walls
    let mut uv = vec![0.0; (nx + 1) * (ny + 1)];
    for j in 1..ny {
        for i in 1..nx {
            let ua = 0.5 * (uu[g.uidx(i, j - 1)] + uu[g.uidx(i, j)]);
            let va = 0.5 * (vv[g.vidx(i - 1, j)] + vv[g.vidx(i, j)]);
            uv[j * (nx + 1) + i] = ua * va;
        }
    }
    let mut out = VectorField::zeros(g);
    {
        let nu = out.u_mut();
        for j in 0..ny {
            for i in 1..nx {
                let right = 0.5 * (uu[g.uidx(i, j)] + uu[g.uidx(i + 1, j)]);
                let left = 0.5 * (uu[g.uidx(i - 1, j)] + uu[g.uidx(i, j)]);
                nu[g.uidx(i, j)] = (right * right - left * left) / hx
                    + (uv[(j + 1) * (nx + 1) + i] - uv[j * (nx + 1) + i]) / hy;
            }
        }
    }
    {
        let nv = out.v_mut();
        for j in 1..ny {
            for i in 0..nx {
                let up = 0.5 * (vv[g.vidx(i, j)] + vv[g.vidx(i, j + 1)]);
                let down = 0.5 * (vv[g.vidx(i, j - 1)] + vv[g.vidx(i, j)]);
                nv[g.vidx(i, j)] = (up * up - down * down) / hy
                    + (uv[j * (nx + 1) + i + 1] - uv[j * (nx + 1) + i]) / hx;
            }
        }
    }
    out
}

/// Capillary force `−φ_face ∇μ` on the faces.
pub fn capillary_force(phi: &ScalarField, mu: &ScalarField) -> Result<VectorField, GridError> {
    let g = *phi.grid();
    mu.ensure_same_grid(&g)?;
    let mut gu = vec![0.0; g.u_len()];
    let mut gv = vec![0.0; g.v_len()];
    gradient_into(&g, mu.values(), &mut gu, &mut gv);
    let grad_mu = VectorField::from_components(g, gu, gv, VectorBc::NoSlip)?;
    let (fu, fv) = face_products(&g, phi.values(), &grad_mu);
    let mut f = VectorField::from_components(g, fu, fv, VectorBc::NoSlip)?;
    f.scale(-1.0);
    Ok(f)
}

/// `½‖u‖²`.
pub fn kinetic_energy(u: &VectorField) -> f64 {
    let w = u.grid().cell_volume();
    0.5 * w * (dot(u.u(), u.u()) + dot(u.v(), u.v()))
}

/// `‖div u‖_∞`.
pub fn max_divergence(u: &VectorField) -> f64 {
    let g = *u.grid();
    let mut d = vec![0.0; g.cells()];
    divergence_into(&g, u.u(), u.v(), &mut d);
    d.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Free face degrees of freedom: all but the wall-normal ones.
fn free_mask(g: &Grid) -> Vec<bool> {
    let mut m = vec![true; g.u_len() + g.v_len()];
    for j in 0..g.ny() {
        m[g.uidx(0, j)] = false;
        m[g.uidx(g.nx(), j)] = false;
    }
    let off = g.u_len();
    for i in 0..g.nx() {
        m[off + g.vidx(i, 0)] = false;
        m[off + g.vidx(i, g.ny())] = false;
    }
    m
}

/// One momentum-plus-projection step with `φ`, `μ` from the same level and
/// the force `h` sampled at the new time.
#[allow(clippy::too_many_arguments)]
pub fn ns_step(
    ns: &NsState,
    phi: &ScalarField,
    mu: &ScalarField,
    h: &VectorField,
    visc: &ViscositySpec,
    dt: f64,
    opts: &NsOptions,
) -> Result<(NsState, NsStepStats), NsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(NsError::InvalidDt(dt));
    }
    let g = *ns.u.grid();
    phi.ensure_same_grid(&g)?;
    mu.ensure_same_grid(&g)?;
    h.ensure_same_grid(&g)?;
    if !ns.u.is_finite() || !phi.is_finite() || !mu.is_finite() {
        return Err(NsError::NonFinite);
    }
    let (ul, vl) = (g.u_len(), g.v_len());
    let op = ViscousOperator::new(g, phi.values(), visc);
    let adv = advection(&ns.u);
    let force = capillary_force(phi, mu)?;
    let mut gpu = vec![0.0; ul];
    let mut gpv = vec![0.0; vl];
    gradient_into(&g, ns.pressure.values(), &mut gpu, &mut gpv);

    let mask = free_mask(&g);
    let mut rhs = ns.u.to_flat();
    let adv = adv.to_flat();
    let force = force.to_flat();
    let hf = h.to_flat();
    let gp: Vec<f64> = gpu.iter().chain(&gpv).cloned().collect();
    for k in 0..rhs.len() {
        rhs[k] = if mask[k] {
            rhs[k] / dt - adv[k] + force[k] + hf[k] - gp[k]
        } else {
            0.0
        };
    }
    let mut x = ns.u.to_flat();
    let inv_dt = 1.0 / dt;
    let mut lu = vec![0.0; ul];
    let mut lv = vec![0.0; vl];
    let mom = conjugate_gradient(
        |p, out| {
            let (pu, pv) = p.split_at(ul);
            op.apply(pu, pv, &mut lu, &mut lv);
            let (ou, ov) = out.split_at_mut(ul);
            for k in 0..ul {
                ou[k] = if mask[k] { inv_dt * pu[k] + lu[k] } else { pu[k] };
            }
            for k in 0..vl {
                ov[k] = if mask[ul + k] { inv_dt * pv[k] + lv[k] } else { pv[k] };
            }
        },
        &rhs,
        &mut x,
        CgOptions {
            rel_tol: opts.momentum_tol,
            abs_tol: 0.0,
            max_iter: 20 * rhs.len(),
            zero_mean: false,
        },
    )?;

    // projection
    let (xu, xv) = x.split_at_mut(ul);
    let mut div = vec![0.0; g.cells()];
    divergence_into(&g, xu, xv, &mut div);
    let neg_lap_rhs: Vec<f64> = div.iter().map(|d| -d / dt).collect();
    let mut dp = vec![0.0; g.cells()];
    let pres = conjugate_gradient(
        |p, out| {
            laplace_into(&g, p, out);
            out.iter_mut().for_each(|v| *v = -*v);
        },
        &neg_lap_rhs,
        &mut dp,
        CgOptions {
            rel_tol: 0.0,
            abs_tol: opts.div_tol / dt,
            max_iter: 20 * g.cells(),
            zero_mean: true,
        },
    )?;
    gradient_into(&g, &dp, &mut gpu, &mut gpv);
    for k in 0..ul {
        xu[k] -= dt * gpu[k];
    }
    for k in 0..vl {
        xv[k] -= dt * gpv[k];
    }
    let u = VectorField::from_components(g, xu.to_vec(), xv.to_vec(), VectorBc::NoSlip)?;
    if !u.is_finite() {
        return Err(NsError::NonFinite);
    }
    let mut p = ns.pressure.clone();
    for (pk, d) in p.values_mut().iter_mut().zip(&dp) {
        *pk += d;
    }
    let stats = NsStepStats {
        momentum_iterations: mom.iterations,
        pressure_iterations: pres.iterations,
        max_div: max_divergence(&u),
    };
    Ok((
        NsState {
            u,
            pressure: p,
            t: ns.t + dt,
        },
        stats,
    ))
}

/// Velocity of the discrete stream function `ψ` (interior corners, zero on
/// the boundary), written into `u`/`v`.
pub(crate) fn curl_interior(g: &Grid, psi: &[f64], u: &mut [f64], v: &mut [f64]) {
    let (nx, ny) = (g.nx(), g.ny());
    let m = nx - 1;
    let at = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i == nx || j == ny {
            0.0
        } else {
            psi[(j - 1) * m + (i - 1)]
        }
    };
    u.iter_mut().for_each(|x| *x = 0.0);
    v.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..ny {
        for i in 1..nx {
            u[g.uidx(i, j)] = (at(i, j + 1) - at(i, j)) / g.hy();
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            v[g.vidx(i, j)] = -(at(i + 1, j) - at(i, j)) / g.hx();
        }
    }
}

/// Transpose of [`curl_interior`].
pub(crate) fn curl_interior_t(g: &Grid, u: &[f64], v: &[f64], psi: &mut [f64]) {
    let (nx, ny) = (g.nx(), g.ny());
    let m = nx - 1;
    psi.iter_mut().for_each(|x| *x = 0.0);
    let mut add = |i: usize, j: usize, val: f64| {
        if !(i == 0 || j == 0 || i == nx || j == ny) {
            psi[(j - 1) * m + (i - 1)] += val;
        }
    };
    for j in 0..ny {
        for i in 1..nx {
            let c = u[g.uidx(i, j)] / g.hy();
            add(i, j + 1, c);
            add(i, j, -c);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let c = -v[g.vidx(i, j)] / g.hx();
            add(i + 1, j, c);
            add(i, j, -c);
        }
    }
}

/// Smallest eigenvalue of the discrete Stokes operator (`ν = 1`) on the
/// divergence-free, no-slip face fields, by inverse power iteration in
/// stream-function form.
pub fn stokes_first_eigenvalue(grid: &Grid, tol: f64) -> Result<f64, NsError> {
    let g = *grid;
    let op = ViscousOperator::uniform(g, 1.0);
    let m = (g.nx() - 1) * (g.ny() - 1);
    let (ul, vl) = (g.u_len(), g.v_len());
    let mut fu = vec![0.0; ul];
    let mut fv = vec![0.0; vl];
    let mut lu = vec![0.0; ul];
    let mut lv = vec![0.0; vl];
    let mut apply_k = |p: &[f64], out: &mut [f64]| {
        curl_interior(&g, p, &mut fu, &mut fv);
        op.apply(&fu, &fv, &mut lu, &mut lv);
        curl_interior_t(&g, &lu, &lv, out);
    };
    let mut mu_ = vec![0.0; ul];
    let mut mv_ = vec![0.0; vl];
    let mut apply_m = |p: &[f64], out: &mut [f64]| {
        curl_interior(&g, p, &mut mu_, &mut mv_);
        curl_interior_t(&g, &mu_, &mv_, out);
    };
    // smooth positive start, rich in the lowest mode
    let mut x: Vec<f64> = (0..m)
        .map(|k| {
            let (i, j) = (k % (g.nx() - 1) + 1, k / (g.nx() - 1) + 1);
            let (s, t) = (i as f64 / g.nx() as f64, j as f64 / g.ny() as f64);
            (s * (1.0 - s) * t * (1.0 - t)).powi(2) * (1.0 + 0.1 * s)
        })
        .collect();
    let mut kx = vec![0.0; m];
    let mut mx = vec![0.0; m];
    let mut lambda = f64::NAN;
    for _ in 0..200 {
        apply_m(&x, &mut mx);
        let mut y = x.clone();
        conjugate_gradient(
            &mut apply_k,
            &mx,
            &mut y,
            CgOptions {
                rel_tol: 1e-10,
                abs_tol: 0.0,
                max_iter: 50 * m,
                zero_mean: false,
            },
        )?;
        apply_m(&y, &mut mx);
        let norm = dot(&y, &mx).sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        apply_k(&y, &mut kx);
        apply_m(&y, &mut mx);
        let next = dot(&y, &kx) / dot(&y, &mx);
        x = y;
        if (next - lambda).abs() <= tol * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::inner_faces;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: Grid, rng: &mut ChaCha8Rng) -> VectorField {
        let u = (0..g.u_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = (0..g.v_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        VectorField::from_components(g, u, v, VectorBc::NoSlip).unwrap()
    }

    fn swirl(g: Grid, amp: f64) -> VectorField {
        use std::f64::consts::PI;
        VectorField::from_stream_function(g, move |x, y| amp * (PI * x).sin().powi(2) * (PI * y).sin().powi(2))
    }

    #[test]
    fn viscosity_is_clipped() {
        let v = ViscositySpec::new(1.0, 3.0).unwrap();
        assert_eq!(v.eval(-1.0), 1.0);
        assert_eq!(v.eval(1.0), 3.0);
        assert_eq!(v.eval(5.0), 3.0);
        assert_eq!(v.eval(-7.0), 1.0);
        assert!(ViscositySpec::new(2.0, 1.0).is_err());
        assert!(ViscositySpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn viscous_operator_is_symmetric_and_matches_dissipation() {
        let g = Grid::new(12, 10, 1.0, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi: Vec<f64> = (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = ViscousOperator::new(g, &phi, &ViscositySpec::new(1.0, 4.0).unwrap());
        let a = random_field(g, &mut rng);
        let b = random_field(g, &mut rng);
        let mut la = VectorField::zeros(g);
        let mut lb = VectorField::zeros(g);
        {
            let (mut ou, mut ov) = (vec![0.0; g.u_len()], vec![0.0; g.v_len()]);
            op.apply(a.u(), a.v(), &mut ou, &mut ov);
            la.u_mut().copy_from_slice(&ou);
            la.v_mut().copy_from_slice(&ov);
            op.apply(b.u(), b.v(), &mut ou, &mut ov);
            lb.u_mut().copy_from_slice(&ou);
            lb.v_mut().copy_from_slice(&ov);
        }
        let ab = inner_faces(&la, &b);
        let ba = inner_faces(&a, &lb);
        assert!((ab - ba).abs() < 1e-10 * ab.abs().max(1.0));
        let q = op.dissipation(a.u(), a.v());
        assert!((inner_faces(&la, &a) - q).abs() < 1e-10 * q);
        assert!(q > 0.0);
    }

    #[test]
    fn uniform_viscous_operator_is_a_vector_laplacian_in_the_interior() {
        // for div-free fields 2 div(Du) = Δu
        let g = Grid::unit_square(32).unwrap();
        let u = swirl(g, 1.0);
        let op = ViscousOperator::uniform(g, 1.0);
        let (mut ou, mut ov) = (vec![0.0; g.u_len()], vec![0.0; g.v_len()]);
        op.apply(u.u(), u.v(), &mut ou, &mut ov);
        // compare with a 5-point Laplacian away from the walls
        let (nx, ny) = (g.nx(), g.ny());
        let h2 = g.hx() * g.hx();
        let uu = u.u();
        for j in 4..ny - 4 {
            for i in 4..nx - 4 {
                let lap = (uu[g.uidx(i + 1, j)] + uu[g.uidx(i - 1, j)] + uu[g.uidx(i, j + 1)] + uu[g.uidx(i, j - 1)]
                    - 4.0 * uu[g.uidx(i, j)])
                    / h2;
                assert!((ou[g.uidx(i, j)] + lap).abs() < 1e-8 * lap.abs().max(1.0));
            }
        }
    }

    #[test]
    fn advection_is_energy_neutral_for_div_free_fields() {
        let g = Grid::unit_square(24).unwrap();
        let u = VectorField::from_stream_function(g, |x, y| {
            use std::f64::consts::PI;
            (PI * x).sin().powi(2) * (PI * y).sin().powi(2) * (1.0 + x + 2.0 * y * y)
        });
        let n = advection(&u);
        let e = inner_faces(&n, &u);
        assert!(e.abs() < 1e-12 * inner_faces(&n, &n).sqrt(), "{e}");
    }

    #[test]
    fn capillary_force_cases() {
        let g = Grid::unit_square(16).unwrap();
        let phi = ScalarField::constant(g, 0.5);
        let f = capillary_force(&phi, &ScalarField::constant(g, 3.0)).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        let ramp = ScalarField::from_fn(g, |x, _| 2.0 * x);
        let f = capillary_force(&phi, &ramp).unwrap();
        for j in 0..16 {
            for i in 1..16 {
                assert!((f.u()[g.uidx(i, j)] + 1.0).abs() < 1e-12);
            }
        }
        assert!(f.v().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let g = Grid::unit_square(16).unwrap();
        let ns = NsState::new(VectorField::zeros(g));
        let phi = ScalarField::constant(g, 0.2);
        let mu = ScalarField::constant(g, -1.0);
        let h = VectorField::zeros(g);
        let visc = ViscositySpec::new(1.0, 2.0).unwrap();
        let (next, _) = ns_step(&ns, &phi, &mu, &h, &visc, 1e-2, &NsOptions::default()).unwrap();
        assert_eq!(next.u.max_abs(), 0.0);
    }

    #[test]
    fn projection_leaves_divergence_free_field() {
        let g = Grid::unit_square(24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ns = NsState::new(random_field(g, &mut rng));
        let phi = ScalarField::from_fn(g, |x, y| (4.0 * x).sin() * y);
        let mu = ScalarField::from_fn(g, |x, y| (3.0 * y).cos() + x);
        let h = Forcing::Constant { fx: 0.3, fy: -0.1 }.field(g, 0.0);
        let visc = ViscositySpec::new(1.0, 2.0).unwrap();
        let (next, stats) = ns_step(&ns, &phi, &mu, &h, &visc, 1e-3, &NsOptions::default()).unwrap();
        assert!(stats.max_div <= 1e-10, "{}", stats.max_div);
        assert!(max_divergence(&next.u) <= 1e-10);
    }

    #[test]
    fn swirl_decays() {
        let g = Grid::unit_square(24).unwrap();
        let mut ns = NsState::new(swirl(g, 1.0));
        let phi = ScalarField::zeros(g);
        let mu = ScalarField::zeros(g);
        let h = VectorField::zeros(g);
        let visc = ViscositySpec::constant(0.1).unwrap();
        let mut k = kinetic_energy(&ns.u);
        for _ in 0..20 {
            ns = ns_step(&ns, &phi, &mu, &h, &visc, 1e-2, &NsOptions::default()).unwrap().0;
            let k1 = kinetic_energy(&ns.u);
            assert!(k1 < k);
            k = k1;
        }
    }

    #[test]
    fn stokes_eigenvalue_on_unit_square() {
        let g = Grid::unit_square(32).unwrap();
        let lam = stokes_first_eigenvalue(&g, 1e-9).unwrap();
        // continuous value ≈ 52.34
        assert!((lam - 52.34).abs() < 1.5, "{lam}");
    }

    #[test]
    fn curl_transpose_is_adjoint() {
        let g = Grid::new(10, 9, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = (g.nx() - 1) * (g.ny() - 1);
        let psi: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = random_field(g, &mut rng);
        let (mut u, mut v) = (vec![0.0; g.u_len()], vec![0.0; g.v_len()]);
        curl_interior(&g, &psi, &mut u, &mut v);
        let mut t = vec![0.0; m];
        curl_interior_t(&g, w.u(), w.v(), &mut t);
        let lhs = dot(&u, w.u()) + dot(&v, w.v());
        let rhs = dot(&psi, &t);
        assert!((lhs - rhs).abs() < 1e-11);
    }
}
