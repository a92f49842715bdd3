//! Interaction kernel `J`, the Ω-restricted convolution and the coefficient
//! `a(x) = ∫_Ω J(x−y) dy`.
//!
//! The convolution is the midpoint-rule double sum `Σ_j h_x h_y J(x_i − y_j) f_j`
//! over cell centres, evaluated with FFTs on a grid zero-padded to twice the
//! extent in each direction, so no wraparound reaches Ω. `a` is the
//! convolution of the indicator of Ω through the very same code path.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::grid::{Grid, GridError, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel width {width} is under-resolved: need width ≥ 2h = {min_width}")]
    Resolution { width: f64, min_width: f64 },
    #[error("invalid kernel parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("β = {beta} does not exceed θ_c − θ = {required} (margin {margin:e})")]
    BetaMargin { beta: f64, required: f64, margin: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(−r²/2σ²)` truncated at `6σ`.
    Gaussian,
    /// Wendland bump `(1 − r/R)⁴₊ (4r/R + 1)` with support radius `R = 3σ`.
    CompactBump,
}

impl std::str::FromStr for KernelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "compact-bump" | "compact-mollifier" => Ok(Self::CompactBump),
            other => Err(format!("unknown kernel family `{other}`")),
        }
    }
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::CompactBump => "compact-bump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length scale σ.
    pub width: f64,
    /// Total mass of `J` as seen by the grid quadrature.
    pub mass: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64, mass: f64) -> Result<Self, KernelError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(KernelError::InvalidParameter { name: "width", value: width });
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(KernelError::InvalidParameter { name: "mass", value: mass });
        }
        Ok(Self { family, width, mass })
    }

    /// Radius beyond which `J` vanishes.
    pub fn cutoff(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 6.0 * self.width,
            KernelFamily::CompactBump => 3.0 * self.width,
        }
    }

    /// Unnormalized radial profile.
    fn profile(&self, r: f64) -> f64 {
        let rc = self.cutoff();
        if r > rc {
            return 0.0;
        }
        match self.family {
            KernelFamily::Gaussian => (-0.5 * (r / self.width).powi(2)).exp(),
            KernelFamily::CompactBump => {
                let t = r / rc;
                (1.0 - t).powi(4) * (4.0 * t + 1.0)
            }
        }
    }

    /// Derivative of the unnormalized profile for `r < cutoff`.
    fn profile_slope(&self, r: f64) -> f64 {
        let rc = self.cutoff();
        match self.family {
            KernelFamily::Gaussian => -r / (self.width * self.width) * self.profile(r),
            KernelFamily::CompactBump => {
                let t = r / rc;
                -20.0 * t * (1.0 - t).powi(3) / rc
            }
        }
    }
}

/// Precomputed kernel data on a grid.
#[derive(Clone)]
pub struct KernelData {
    spec: KernelSpec,
    grid: Grid,
    amplitude: f64,
    a_field: ScalarField,
    beta: f64,
    a_inf: f64,
    grad_l1: f64,
    plan: ConvolutionPlan,
}

impl std::fmt::Debug for KernelData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelData")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .field("beta", &self.beta)
            .field("a_inf", &self.a_inf)
            .field("grad_l1", &self.grad_l1)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
struct ConvolutionPlan {
    px: usize,
    py: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Transform of the wrapped kernel, stored transposed (`x` fastest after
    /// the column pass), already scaled by the cell volume and `1/(px·py)`.
    kernel_hat: Vec<Complex<f64>>,
}

impl ConvolutionPlan {
    fn new(grid: &Grid, kernel_value: impl Fn(f64, f64) -> f64) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let (px, py) = (2 * nx, 2 * ny);
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(px);
        let inv_x = planner.plan_fft_inverse(px);
        let fwd_y = planner.plan_fft_forward(py);
        let inv_y = planner.plan_fft_inverse(py);
        let scale = grid.cell_volume() / (px * py) as f64;
        let mut buf = vec![Complex::new(0.0, 0.0); px * py];
        // offsets d ∈ (−n, n) stored at d mod 2n
        for jj in 0..py {
            let dy = if jj < ny { jj as f64 } else { jj as f64 - py as f64 };
            for ii in 0..px {
                let dx = if ii < nx { ii as f64 } else { ii as f64 - px as f64 };
                if ii == nx || jj == ny {
                    continue;
                }
                buf[jj * px + ii] = Complex::new(scale * kernel_value(dx * grid.hx(), dy * grid.hy()), 0.0);
            }
        }
        let mut plan = Self {
            px,
            py,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            kernel_hat: Vec::new(),
        };
        plan.kernel_hat = plan.forward(buf);
        plan
    }

    /// Row transforms, transpose, column transforms; result is transposed.
    fn forward(&self, mut buf: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.fwd_x.process(&mut buf);
        let mut t = transpose(&buf, self.px, self.py);
        self.fwd_y.process(&mut t);
        t
    }

    fn inverse(&self, mut t: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.inv_y.process(&mut t);
        let mut buf = transpose(&t, self.py, self.px);
        self.inv_x.process(&mut buf);
        buf
    }

    fn apply(&self, grid: &Grid, f: &[f64], out: &mut [f64]) {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut buf = vec![Complex::new(0.0, 0.0); self.px * self.py];
        for j in 0..ny {
            for i in 0..nx {
                buf[j * self.px + i].re = f[j * nx + i];
            }
        }
        let mut t = self.forward(buf);
        for (z, k) in t.iter_mut().zip(&self.kernel_hat) {
            *z *= k;
        }
        let buf = self.inverse(t);
        for j in 0..ny {
            for i in 0..nx {
                out[j * nx + i] = buf[j * self.px + i].re;
            }
        }
    }
}

/// `rows × cols` row-major (`cols` fastest) into `cols × rows`.
fn transpose(a: &[Complex<f64>], cols: usize, rows: usize) -> Vec<Complex<f64>> {
    let mut t = vec![Complex::new(0.0, 0.0); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Amplitude making the full-lattice quadrature of `J` equal `spec.mass`.
fn lattice_amplitude(spec: &KernelSpec, grid: &Grid) -> f64 {
    let rc = spec.cutoff();
    let mx = (rc / grid.hx()).ceil() as i64;
    let my = (rc / grid.hy()).ceil() as i64;
    let mut sum = 0.0;
    for j in -my..=my {
        for i in -mx..=mx {
            let r = ((i as f64 * grid.hx()).powi(2) + (j as f64 * grid.hy()).powi(2)).sqrt();
            sum += spec.profile(r);
        }
    }
    spec.mass / (sum * grid.cell_volume())
}

/// `‖∇J‖_{L¹(ℝ²)} = 2π∫₀^{r_c} |J'(r)| r dr`, plus the jump of a truncated
/// profile as a measure on the cutoff circle.
fn gradient_l1(spec: &KernelSpec, amplitude: f64) -> f64 {
    let rc = spec.cutoff();
    const PANELS: usize = 20_000;
    let h = rc / PANELS as f64;
    let g = |r: f64| spec.profile_slope(r).abs() * r;
    // composite Simpson
    let mut acc = g(0.0) + g(rc * (1.0 - 1e-15));
    for k in 1..PANELS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(k as f64 * h);
    }
    let smooth = 2.0 * PI * acc * h / 3.0;
    let jump = 2.0 * PI * rc * spec.profile(rc);
    amplitude * (smooth + jump)
}

/// Evaluates the kernel, `a(x)`, its bounds and the gradient norm on `grid`.
pub fn build_kernel(spec: &KernelSpec, grid: &Grid) -> Result<KernelData, KernelError> {
    let h = grid.hx().max(grid.hy());
    if spec.width < 2.0 * h {
        return Err(KernelError::Resolution {
            width: spec.width,
            min_width: 2.0 * h,
        });
    }
    let amplitude = lattice_amplitude(spec, grid);
    let plan = ConvolutionPlan::new(grid, |dx, dy| amplitude * spec.profile((dx * dx + dy * dy).sqrt()));
    let mut a = vec![0.0; grid.cells()];
    plan.apply(grid, &vec![1.0; grid.cells()], &mut a);
    let beta = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_inf = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a_field = ScalarField::from_values(*grid, a)?;
    Ok(KernelData {
        spec: *spec,
        grid: *grid,
        amplitude,
        a_field,
        beta,
        a_inf,
        grad_l1: gradient_l1(spec, amplitude),
        plan,
    })
}

impl KernelData {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn a_field(&self) -> &ScalarField {
        &self.a_field
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn a_inf(&self) -> f64 {
        self.a_inf
    }
    pub fn grad_l1(&self) -> f64 {
        self.grad_l1
    }
    /// Pointwise kernel value `J(x)` at displacement `(dx, dy)`.
    pub fn value(&self, dx: f64, dy: f64) -> f64 {
        self.amplitude * self.spec.profile((dx * dx + dy * dy).sqrt())
    }

    /// Rejects potentials whose convexity margin `β − (θ_c − θ)` is not positive.
    pub fn check_beta_margin(&self, theta: f64, theta_c: f64) -> Result<f64, KernelError> {
        let required = theta_c - theta;
        let margin = self.beta - required;
        if margin > 0.0 {
            Ok(margin)
        } else {
            Err(KernelError::BetaMargin {
                beta: self.beta,
                required,
                margin,
            })
        }
    }

    /// `J∗f` on raw cell values.
    pub fn convolve_values(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.grid.cells());
        assert_eq!(out.len(), self.grid.cells());
        self.plan.apply(&self.grid, f, out);
    }

    pub fn report(&self, theta: f64, theta_c: f64) -> KernelReport {
        KernelReport {
            family: self.spec.family.name(),
            width: self.spec.width,
            mass: self.spec.mass,
            cutoff: self.spec.cutoff(),
            beta: self.beta,
            a_inf: self.a_inf,
            grad_l1: self.grad_l1,
            required_beta: theta_c - theta,
            margin: self.beta - (theta_c - theta),
        }
    }
}

/// `(J∗f)(x_i) = Σ_j h_x h_y J(x_i − y_j) f(y_j)` over Ω only.
pub fn convolve(kd: &KernelData, f: &ScalarField) -> Result<ScalarField, KernelError> {
    if f.grid() != kd.grid() {
        return Err(GridError::Mismatch.into());
    }
    let mut out = vec![0.0; kd.grid.cells()];
    kd.convolve_values(f.values(), &mut out);
    Ok(ScalarField::from_values(kd.grid, out)?)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KernelReport {
    pub family: &'static str,
    pub width: f64,
    pub mass: f64,
    pub cutoff: f64,
    pub beta: f64,
    pub a_inf: f64,
    pub grad_l1: f64,
    pub required_beta: f64,
    pub margin: f64,
}
