//! Grids, fields and the discrete differential operators.
//!
//! Scalars live at cell centres of a uniform `nx × ny` grid on
//! `[0, lx] × [0, ly]`; every cell carries the quadrature weight `hx·hy`.
//! Vector fields are MAC-staggered: the x-component sits on vertical faces,
//! the y-component on horizontal faces. Gradients are face differences with
//! zero flux through the boundary, divergence is the exact negative adjoint
//! of the gradient, and the Neumann Laplacian is `div ∘ grad`, so summation
//! by parts holds to rounding error.

use crate::solver::{conjugate_gradient, dot, remove_mean, CgOptions};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 8 cells per axis, got {nx}x{ny}")]
    TooCoarse { nx: usize, ny: usize },
    #[error("domain extents must be positive and finite, got {lx}x{ly}")]
    BadExtent { lx: f64, ly: f64 },
    #[error("field has {got} values, grid expects {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("fields live on different grids")]
    Mismatch,
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("inverse Neumann operator needs a zero-mean input (mean {mean:e}, norm {norm:e})")]
    NonzeroMean { mean: f64, norm: f64 },
    #[error(transparent)]
    Solver(#[from] crate::solver::CgError),
}

/// Uniform cell-centred grid on a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        if nx < 8 || ny < 8 {
            return Err(GridError::TooCoarse { nx, ny });
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(GridError::BadExtent { lx, ly });
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    pub fn unit_square(n: usize) -> Result<Self, GridError> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn hy(&self) -> f64 {
        self.hy
    }
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }
    /// Quadrature weight of a single cell (and of a single face).
    pub fn cell_volume(&self) -> f64 {
        self.hx * self.hy
    }
    /// |Ω|.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    /// Cell-centre coordinates.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx
    }
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy
    }
    pub fn u_len(&self) -> usize {
        (self.nx + 1) * self.ny
    }
    pub fn v_len(&self) -> usize {
        self.nx * (self.ny + 1)
    }
    /// Index of the x-face at `x = i·hx`, row `j`.
    #[inline]
    pub fn uidx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    /// Index of the y-face at `y = j·hy`, column `i`.
    #[inline]
    pub fn vidx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarBc {
    NeumannNoFlux,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    bc: ScalarBc,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.cells()],
            bc: ScalarBc::NeumannNoFlux,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self {
            grid,
            values,
            bc: ScalarBc::NeumannNoFlux,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cells() {
            return Err(GridError::BadLength {
                expected: grid.cells(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFinite);
        }
        Ok(Self {
            grid,
            values,
            bc: ScalarBc::NeumannNoFlux,
        })
    }

    pub fn with_bc(mut self, bc: ScalarBc) -> Self {
        self.bc = bc;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn bc(&self) -> ScalarBc {
        self.bc
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// ⟨f, 1⟩ / |Ω|.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            bc: self.bc,
        }
    }

    /// `self + a·other`.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn ensure_same_grid(&self, other: &Grid) -> Result<(), GridError> {
        if &self.grid == other {
            Ok(())
        } else {
            Err(GridError::Mismatch)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorBc {
    /// Both components vanish on ∂Ω (normal faces are zero, tangential
    /// values are reflected with a sign change in the viscous stencil).
    NoSlip,
    /// Only the normal component vanishes; what a no-flux gradient produces.
    NoPenetration,
    None,
}

/// MAC-staggered vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    u: Vec<f64>,
    v: Vec<f64>,
    bc: VectorBc,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            u: vec![0.0; grid.u_len()],
            v: vec![0.0; grid.v_len()],
            bc: VectorBc::NoSlip,
        }
    }

    pub fn from_components(grid: Grid, u: Vec<f64>, v: Vec<f64>, bc: VectorBc) -> Result<Self, GridError> {
        if u.len() != grid.u_len() {
            return Err(GridError::BadLength {
                expected: grid.u_len(),
                got: u.len(),
            });
        }
        if v.len() != grid.v_len() {
            return Err(GridError::BadLength {
                expected: grid.v_len(),
                got: v.len(),
            });
        }
        let mut out = Self { grid, u, v, bc };
        if bc != VectorBc::None {
            out.zero_normal_boundary();
        }
        Ok(out)
    }

    /// Samples smooth component functions at face centres.
    pub fn from_fns(
        grid: Grid,
        fu: impl Fn(f64, f64) -> f64,
        fv: impl Fn(f64, f64) -> f64,
        bc: VectorBc,
    ) -> Self {
        let mut u = vec![0.0; grid.u_len()];
        let mut v = vec![0.0; grid.v_len()];
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                u[grid.uidx(i, j)] = fu(i as f64 * grid.hx, grid.y(j));
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                v[grid.vidx(i, j)] = fv(grid.x(i), j as f64 * grid.hy);
            }
        }
        let mut out = Self { grid, u, v, bc };
        if bc != VectorBc::None {
            out.zero_normal_boundary();
        }
        out
    }

    /// Discrete curl of a stream function sampled at cell corners:
    /// `u = ∂ψ/∂y`, `v = −∂ψ/∂x`. Exactly divergence free; no-slip when
    /// ψ and its normal derivative vanish on ∂Ω.
    pub fn from_stream_function(grid: Grid, psi: impl Fn(f64, f64) -> f64) -> Self {
        let (nx, ny, hx, hy) = (grid.nx, grid.ny, grid.hx, grid.hy);
        let corner = |i: usize, j: usize| psi(i as f64 * hx, j as f64 * hy);
        let mut u = vec![0.0; grid.u_len()];
        let mut v = vec![0.0; grid.v_len()];
        for j in 0..ny {
            for i in 1..nx {
                u[grid.uidx(i, j)] = (corner(i, j + 1) - corner(i, j)) / hy;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                v[grid.vidx(i, j)] = -(corner(i + 1, j) - corner(i, j)) / hx;
            }
        }
        Self {
            grid,
            u,
            v,
            bc: VectorBc::NoSlip,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn bc(&self) -> VectorBc {
        self.bc
    }
    pub fn u(&self) -> &[f64] {
        &self.u
    }
    pub fn v(&self) -> &[f64] {
        &self.v
    }
    pub fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }
    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }
    pub fn with_bc(mut self, bc: VectorBc) -> Self {
        self.bc = bc;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn zero_normal_boundary(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.u[g.uidx(0, j)] = 0.0;
            self.u[g.uidx(g.nx, j)] = 0.0;
        }
        for i in 0..g.nx {
            self.v[g.vidx(i, 0)] = 0.0;
            self.v[g.vidx(i, g.ny)] = 0.0;
        }
    }

    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for (x, y) in self.u.iter_mut().zip(&other.u) {
            *x += a * y;
        }
        for (x, y) in self.v.iter_mut().zip(&other.v) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.u.iter_mut().chain(self.v.iter_mut()).for_each(|x| *x *= a);
    }

    /// Packs both components into one vector (u first).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_flat(grid: Grid, flat: &[f64], bc: VectorBc) -> Self {
        let (u, v) = flat.split_at(grid.u_len());
        Self {
            grid,
            u: u.to_vec(),
            v: v.to_vec(),
            bc,
        }
    }

    pub fn ensure_same_grid(&self, other: &Grid) -> Result<(), GridError> {
        if &self.grid == other {
            Ok(())
        } else {
            Err(GridError::Mismatch)
        }
    }
}

/// Weighted L² inner product of two scalar fields.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    f.grid.cell_volume() * dot(&f.values, &g.values)
}

/// Weighted L² inner product of two face fields.
pub fn inner_faces(a: &VectorField, b: &VectorField) -> f64 {
    a.grid.cell_volume() * (dot(&a.u, &b.u) + dot(&a.v, &b.v))
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut out = VectorField::zeros(g).with_bc(VectorBc::NoPenetration);
    gradient_into(&g, &f.values, &mut out.u, &mut out.v);
    out
}

pub(crate) fn gradient_into(g: &Grid, f: &[f64], gu: &mut [f64], gv: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..ny {
        let row = j * nx;
        let urow = j * (nx + 1);
        gu[urow] = 0.0;
        gu[urow + nx] = 0.0;
        for i in 1..nx {
            gu[urow + i] = (f[row + i] - f[row + i - 1]) * ihx;
        }
    }
    for i in 0..nx {
        gv[i] = 0.0;
        gv[ny * nx + i] = 0.0;
    }
    for j in 1..ny {
        for i in 0..nx {
            gv[j * nx + i] = (f[j * nx + i] - f[(j - 1) * nx + i]) * ihy;
        }
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = vec![0.0; g.cells()];
    divergence_into(&g, &v.u, &v.v, &mut out);
    ScalarField {
        grid: g,
        values: out,
        bc: ScalarBc::None,
    }
}

pub(crate) fn divergence_into(g: &Grid, u: &[f64], v: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..ny {
        for i in 0..nx {
            out[j * nx + i] = (u[j * (nx + 1) + i + 1] - u[j * (nx + 1) + i]) * ihx
                + (v[(j + 1) * nx + i] - v[j * nx + i]) * ihy;
        }
    }
}

/// Δ with homogeneous Neumann data, `div(grad f)`.
pub fn laplace_neumann(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut out = vec![0.0; g.cells()];
    laplace_into(&g, &f.values, &mut out);
    ScalarField {
        grid: g,
        values: out,
        bc: ScalarBc::None,
    }
}

pub(crate) fn laplace_into(g: &Grid, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let c = f[k];
            let mut acc = 0.0;
            if i > 0 {
                acc += (f[k - 1] - c) * cx;
            }
            if i + 1 < nx {
                acc += (f[k + 1] - c) * cx;
            }
            if j > 0 {
                acc += (f[k - nx] - c) * cy;
            }
            if j + 1 < ny {
                acc += (f[k + nx] - c) * cy;
            }
            out[k] = acc;
        }
    }
}

/// The weak Neumann operator `A = −Δ`, ⟨Au, v⟩ = ⟨∇u, ∇v⟩.
pub fn neumann_operator(f: &ScalarField) -> ScalarField {
    let mut out = laplace_neumann(f);
    out.values.iter_mut().for_each(|x| *x = -*x);
    out
}

/// Relative mean tolerance accepted by [`inverse_neumann`].
pub const ZERO_MEAN_TOL: f64 = 1e-10;

/// `𝒩f`: the zero-mean solution of `A w = f`.
pub fn inverse_neumann(f: &ScalarField) -> Result<ScalarField, GridError> {
    inverse_neumann_with(f, 1e-12, None)
}

/// Like [`inverse_neumann`] with an explicit relative tolerance and an
/// optional warm start.
pub fn inverse_neumann_with(
    f: &ScalarField,
    rel_tol: f64,
    guess: Option<&ScalarField>,
) -> Result<ScalarField, GridError> {
    let g = f.grid;
    let mean = f.mean();
    let norm = (f.values.iter().map(|v| v * v).sum::<f64>() / f.values.len() as f64).sqrt();
    if mean.abs() > ZERO_MEAN_TOL * norm.max(f64::MIN_POSITIVE) && mean != 0.0 {
        return Err(GridError::NonzeroMean { mean, norm });
    }
    let mut x = match guess {
        Some(w) => {
            w.ensure_same_grid(&g)?;
            w.values.clone()
        }
        None => vec![0.0; g.cells()],
    };
    conjugate_gradient(
        |p, out| {
            laplace_into(&g, p, out);
            out.iter_mut().for_each(|v| *v = -*v);
        },
        &f.values,
        &mut x,
        CgOptions {
            rel_tol,
            abs_tol: 0.0,
            max_iter: 20 * g.cells(),
            zero_mean: true,
        },
    )?;
    remove_mean(&mut x);
    Ok(ScalarField {
        grid: g,
        values: x,
        bc: ScalarBc::NeumannNoFlux,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarNorms {
    pub l2: f64,
    pub h1_semi: f64,
    /// `L^p` with `p = 2 + 2q`.
    pub lp: f64,
    pub linf: f64,
    /// `⟨f, 𝒩f⟩^{1/2}`; `None` when the field does not have zero mean.
    pub v0_dual: Option<f64>,
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    inner(f, f).sqrt()
}

pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    let w = f.grid.cell_volume();
    (w * f.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
}

pub fn h1_seminorm(f: &ScalarField) -> f64 {
    let gr = gradient(f);
    inner_faces(&gr, &gr).sqrt()
}

/// `⟨f, 𝒩f⟩^{1/2}` for a zero-mean field.
pub fn v0_dual_norm(f: &ScalarField) -> Result<f64, GridError> {
    let w = inverse_neumann(f)?;
    Ok(inner(f, &w).max(0.0).sqrt())
}

pub fn norms(f: &ScalarField, q: u32) -> ScalarNorms {
    ScalarNorms {
        l2: l2_norm(f),
        h1_semi: h1_seminorm(f),
        lp: lp_norm(f, 2.0 + 2.0 * q as f64),
        linf: f.max_abs(),
        v0_dual: v0_dual_norm(f).ok(),
    }
}

pub fn vector_l2_norm(v: &VectorField) -> f64 {
    inner_faces(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_zero_mean(grid: Grid, seed: u64) -> ScalarField {
        let f = random_field(grid, seed);
        let m = f.mean();
        f.map(|v| v - m)
    }

    #[test]
    fn rejects_coarse_grids() {
        assert_eq!(Grid::new(4, 16, 1.0, 1.0), Err(GridError::TooCoarse { nx: 4, ny: 16 }));
        assert!(Grid::new(8, 8, -1.0, 1.0).is_err());
    }

    #[test]
    fn cell_volumes_sum_to_area() {
        let g = Grid::new(12, 9, 2.0, 0.5).unwrap();
        assert!((g.cell_volume() * g.cells() as f64 - g.area()).abs() < 1e-14);
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let g = Grid::new(10, 13, 1.0, 2.0).unwrap();
        let f = ScalarField::constant(g, 3.7);
        assert!(laplace_neumann(&f).values().iter().all(|&v| v == 0.0));
        let gr = gradient(&f);
        assert!(gr.max_abs() == 0.0);
    }

    #[test]
    fn laplacian_has_zero_mean() {
        let g = Grid::unit_square(16).unwrap();
        let f = random_field(g, 1);
        let lf = laplace_neumann(&f);
        assert!(inner(&lf, &ScalarField::constant(g, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = Grid::new(11, 14, 1.3, 0.7).unwrap();
        let f = random_field(g, 2);
        let h = random_field(g, 3);
        let lhs = inner(&laplace_neumann(&f), &h);
        let rhs = -inner_faces(&gradient(&f), &gradient(&h));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let g = Grid::new(9, 12, 1.0, 1.0).unwrap();
        let f = random_field(g, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..g.u_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..g.v_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = VectorField::from_components(g, u, v, VectorBc::NoSlip).unwrap();
        let lhs = inner_faces(&gradient(&f), &w);
        let rhs = -inner(&f, &divergence(&w));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn neumann_laplacian_converges_at_second_order() {
        let mut errs = vec![];
        for &n in &[16usize, 32, 64] {
            let g = Grid::new(n, 8, 1.0, 1.0).unwrap();
            let f = ScalarField::from_fn(g, |x, _| (PI * x).cos());
            let af = neumann_operator(&f);
            let err = af
                .values()
                .iter()
                .enumerate()
                .map(|(k, &v)| (v - PI * PI * (PI * g.x(k % n)).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order}");
        }
    }

    #[test]
    fn inverse_neumann_round_trip_and_symmetry() {
        let g = Grid::new(20, 16, 1.0, 0.8).unwrap();
        let f = random_zero_mean(g, 6);
        let h = random_zero_mean(g, 7);
        let nf = inverse_neumann(&f).unwrap();
        let nh = inverse_neumann(&h).unwrap();
        assert!(nf.mean().abs() < 1e-14);
        let back = neumann_operator(&nf);
        let err = l2_norm(&back.sub(&f));
        assert!(err <= 1e-9 * l2_norm(&f), "round trip error {err}");
        let a = inner(&f, &nh);
        let b = inner(&h, &nf);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        // 𝒩 ∘ A on zero-mean fields
        let again = inverse_neumann(&neumann_operator(&f)).unwrap();
        assert!(l2_norm(&again.sub(&f)) < 1e-9 * l2_norm(&f));
    }

    #[test]
    fn inverse_neumann_of_zero_is_zero() {
        let g = Grid::unit_square(8).unwrap();
        let z = inverse_neumann(&ScalarField::zeros(g)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_neumann_rejects_nonzero_mean() {
        let g = Grid::unit_square(8).unwrap();
        let f = ScalarField::constant(g, 1.0);
        assert!(matches!(inverse_neumann(&f), Err(GridError::NonzeroMean { .. })));
        assert!(v0_dual_norm(&f).is_err());
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Grid::unit_square(8).unwrap();
        let z = norms(&ScalarField::zeros(g), 1);
        assert_eq!((z.l2, z.h1_semi, z.lp, z.linf, z.v0_dual), (0.0, 0.0, 0.0, 0.0, Some(0.0)));
        let one = norms(&ScalarField::constant(g, 1.0), 1);
        assert!((one.l2 - 1.0).abs() < 1e-14);
        assert_eq!(one.h1_semi, 0.0);
        assert!((one.lp - 1.0).abs() < 1e-14);
        assert!(one.v0_dual.is_none());
    }

    #[test]
    fn poincare_wirtinger_with_power_iteration_constant() {
        // Largest eigenvalue of 𝒩 is 1/λ_min(A); the Poincaré constant is its square root.
        let g = Grid::unit_square(16).unwrap();
        let mut x = random_zero_mean(g, 8);
        let mut lam = 0.0;
        for _ in 0..200 {
            let y = inverse_neumann(&x).unwrap();
            lam = l2_norm(&y) / l2_norm(&x);
            let n = l2_norm(&y);
            x = y.map(|v| v / n);
        }
        // continuous value 1/π² on the unit square, discrete slightly larger
        assert!((lam * PI * PI - 1.0).abs() < 5e-3, "lam = {lam}");
        let cp = lam.sqrt();
        for seed in 0..5 {
            let f = random_zero_mean(g, 100 + seed);
            assert!(l2_norm(&f) <= cp * h1_seminorm(&f) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn stream_function_velocity_is_divergence_free() {
        let g = Grid::new(16, 12, 1.0, 0.75).unwrap();
        let vf = VectorField::from_stream_function(g, |x, y| {
            (PI * x).sin().powi(2) * (PI * y / 0.75).sin().powi(2)
        });
        assert!(divergence(&vf).max_abs() < 1e-12);
    }
}
