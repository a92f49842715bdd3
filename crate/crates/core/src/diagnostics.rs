//! Energy bookkeeping, dissipative estimate, Kenmochi-type bound and the
//! trajectory-space metric with the translation semigroup.

use thiserror::Error;

use crate::ch::{ch_energy, chemical_potential, ChError};
use crate::grid::{gradient_into, inner, inverse_neumann_with, Grid, GridError, ScalarField, VectorField};
use crate::kernel::KernelData;
use crate::ns::{kinetic_energy, ViscousOperator};
use crate::potential::{f1_derivative, DoubleWell, PotentialError};
use crate::solver::{conjugate_gradient, dot, CgError, CgOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("trajectories differ in {0}")]
    Mismatch(&'static str),
    #[error("trajectory needs at least {needed} snapshots, has {got}")]
    TooShort { needed: usize, got: usize },
    #[error("shift {shift} is not a nonnegative multiple of dt = {dt} below the horizon {horizon}")]
    BadShift { shift: f64, dt: f64, horizon: f64 },
    #[error("|mean φ| = {mean} exceeds the cap m0 = {m0}")]
    MeanCap { mean: f64, m0: f64 },
    #[error("non-finite snapshot at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Ch(#[from] ChError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] CgError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Energy of a state plus the dissipation terms of the step that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct EnergyReport {
    pub t: f64,
    pub kinetic: f64,
    pub nonlocal: f64,
    pub potential: f64,
    pub total: f64,
    /// `2‖√ν(φⁿ) D uⁿ⁺¹‖²`.
    pub dissipation_visc: f64,
    /// `‖∇μⁿ⁺¹‖²`.
    pub dissipation_mu: f64,
    /// `⟨h, uⁿ⁺¹⟩`.
    pub forcing: f64,
}

/// `ℰ = ½‖u‖² + ¼∬J(φ(x) − φ(y))² + ∫F(φ)`; dissipation terms left at zero.
pub fn energy(t: f64, u: &VectorField, phi: &ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<EnergyReport, ChError> {
    let ch = ch_energy(phi, kd, pot)?;
    let kinetic = kinetic_energy(u);
    Ok(EnergyReport {
        t,
        kinetic,
        nonlocal: ch.nonlocal,
        potential: ch.potential,
        total: kinetic + ch.total,
        ..EnergyReport::default()
    })
}

/// `¼ Σ_i Σ_j w² J(x_i − x_j)(φ_i − φ_j)²`, the quadratic-cost reference form.
pub fn nonlocal_energy_direct(phi: &ScalarField, kd: &KernelData) -> f64 {
    let g = phi.grid();
    let w = g.cell_volume();
    let f = phi.values();
    let mut acc = 0.0;
    for j1 in 0..g.ny() {
        for i1 in 0..g.nx() {
            let a = f[g.idx(i1, j1)];
            for j2 in 0..g.ny() {
                for i2 in 0..g.nx() {
                    let dx = (i1 as f64 - i2 as f64) * g.hx();
                    let dy = (j1 as f64 - j2 as f64) * g.hy();
                    let d = a - f[g.idx(i2, j2)];
                    acc += kd.value(dx, dy) * d * d;
                }
            }
        }
    }
    0.25 * w * w * acc
}

/// `r_n = (ℰ_{n+1} − ℰ_n)/dt + 2‖√ν Du‖² + ‖∇μ‖² − ⟨h, u⟩`, the dissipation
/// terms taken from report `n + 1`.
pub fn energy_identity_residual(reports: &[EnergyReport]) -> Vec<f64> {
    reports
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            (w[1].total - w[0].total) / dt + w[1].dissipation_visc + w[1].dissipation_mu - w[1].forcing
        })
        .collect()
}

/// `Σ r_n dt`.
pub fn cumulative_residual(reports: &[EnergyReport]) -> f64 {
    energy_identity_residual(reports)
        .iter()
        .zip(reports.windows(2))
        .map(|(r, w)| r * (w[1].t - w[0].t))
        .sum()
}

/// Successive ratios `v[i]/v[i+1]` of a refinement sequence.
pub fn refinement_ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DissipativeCheck {
    pub status: CheckStatus,
    pub k: f64,
    pub plateau: f64,
    pub k_fitted: f64,
    pub fit_window: f64,
    /// `bound − ℰ` after the fit window.
    pub min_margin: f64,
    pub first_violation: Option<(f64, f64, f64)>,
}

/// Checks `ℰ(t) ≤ ℰ(0)e^{−kt} + F(φ̄₀)|Ω| + K` with `K ≥ 0` fitted on
/// `[0, 1/k]` and then held fixed for the rest of the series.
pub fn dissipative_estimate_check(times: &[f64], energies: &[f64], k: f64, plateau: f64) -> DissipativeCheck {
    assert_eq!(times.len(), energies.len());
    let fit_window = 1.0 / k;
    let horizon = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let e0 = energies.first().copied().unwrap_or(0.0);
    let t0 = times.first().copied().unwrap_or(0.0);
    let envelope = |t: f64| e0 * (-k * (t - t0)).exp() + plateau;
    let mut k_fitted: f64 = 0.0;
    for (t, e) in times.iter().zip(energies) {
        if t - t0 <= fit_window {
            k_fitted = k_fitted.max(e - envelope(*t));
        }
    }
    let mut min_margin = f64::INFINITY;
    let mut first_violation = None;
    for (t, e) in times.iter().zip(energies) {
        if t - t0 > fit_window {
            let bound = envelope(*t) + k_fitted;
            let margin = bound - e;
            min_margin = min_margin.min(margin);
            if margin < 0.0 && first_violation.is_none() {
                first_violation = Some((*t, *e, bound));
            }
        }
    }
    let status = if horizon < 5.0 / k {
        CheckStatus::Inconclusive
    } else if first_violation.is_some() {
        CheckStatus::Fail
    } else {
        CheckStatus::Pass
    };
    DissipativeCheck {
        status,
        k,
        plateau,
        k_fitted,
        fit_window,
        min_margin,
        first_violation,
    }
}

/// `‖F'(φ)‖_{L¹}`.
pub fn kenmochi_l1(phi: &ScalarField, pot: &dyn DoubleWell) -> Result<f64, PotentialError> {
    let mut acc = 0.0;
    for &p in phi.values() {
        acc += pot.first(p)?.abs();
    }
    Ok(acc * phi.grid().cell_volume())
}

pub fn kenmochi_series(phis: &[ScalarField], pot: &dyn DoubleWell) -> Result<Vec<f64>, PotentialError> {
    phis.iter().map(|p| kenmochi_l1(p, pot)).collect()
}

/// Sides of `δ‖H'(φ)‖_{L¹} ≤ ∫(φ − φ̄₀)(H'(φ) − mean H'(φ)) + K(φ̄₀)`, with
/// `H(s) = F(s) + (a_∞/2)(s − s₀)²`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KenmochiBound {
    pub m1: f64,
    pub m2: f64,
    pub delta: f64,
    pub constant: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl KenmochiBound {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-12 * self.rhs.abs().max(1.0)
    }
}

/// Default cut levels: halfway between `min(s₀, φ̄₀)` and −1, and between
/// `max(s₀, φ̄₀)` and 1.
pub fn kenmochi_levels(s0: f64, mean0: f64) -> (f64, f64) {
    (0.5 * (s0.min(mean0) - 1.0), 0.5 * (s0.max(mean0) + 1.0))
}

pub fn kenmochi_bound(
    phi: &ScalarField,
    mean0: f64,
    pot: &dyn DoubleWell,
    a_inf: f64,
    levels: (f64, f64),
) -> Result<KenmochiBound, PotentialError> {
    let spec = pot.spec();
    let s0 = spec.s0;
    let (m1, m2) = levels;
    let w = phi.grid().cell_volume();
    let area = phi.grid().area();
    let hp: Vec<f64> = phi
        .values()
        .iter()
        .map(|&p| Ok(pot.first(p)? + a_inf * (p - s0)))
        .collect::<Result<_, PotentialError>>()?;
    let mean_hp = hp.iter().sum::<f64>() * w / area;
    let l1 = w * hp.iter().map(|v| v.abs()).sum::<f64>();
    let pairing = w * phi.values().iter().zip(&hp).map(|(p, h)| (p - mean0) * (h - mean_hp)).sum::<f64>();
    let delta = (mean0 - m1).min(m2 - mean0);
    let delta1 = (mean0 - m1).max(m2 - mean0);
    let delta2 = (s0 - m1).max(m2 - s0);
    // |F₁'| and |F₂'| grow with |s|, so the max over [m1, m2] sits at an end
    let slope = |m: f64| -> Result<f64, PotentialError> {
        Ok(f1_derivative(spec.theta, 1, m)?.abs() + (spec.theta_c * m).abs())
    };
    let max_slope = slope(m1)?.max(slope(m2)?);
    let constant = (delta1 + delta) * area * (max_slope + a_inf * delta2);
    Ok(KenmochiBound {
        m1,
        m2,
        delta,
        constant,
        lhs: delta * l1,
        rhs: pairing + constant,
    })
}

/// Sides of `‖∇μ‖² ≥ (c₀²/4)‖∇φ‖² − 2‖∇J‖²_{L¹}‖φ‖²`, with `μ` evaluated
/// from `φ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GradientBound {
    pub grad_mu2: f64,
    pub rhs: f64,
}

impl GradientBound {
    pub fn holds(&self) -> bool {
        self.grad_mu2 >= self.rhs
    }
}

pub fn gradient_lower_bound(phi: &ScalarField, kd: &KernelData, pot: &dyn DoubleWell) -> Result<GradientBound, ChError> {
    let mu = chemical_potential(phi, kd, pot)?;
    let c0 = pot.spec().c0;
    let grad2 = |f: &ScalarField| {
        let g = f.grid();
        let mut gu = vec![0.0; g.u_len()];
        let mut gv = vec![0.0; g.v_len()];
        gradient_into(g, f.values(), &mut gu, &mut gv);
        g.cell_volume() * (dot(&gu, &gu) + dot(&gv, &gv))
    };
    let k = 2.0 * kd.grad_l1().powi(2);
    Ok(GradientBound {
        grad_mu2: grad2(&mu),
        rhs: 0.25 * c0 * c0 * grad2(phi) - k * inner(phi, phi),
    })
}

/// Uniformly sampled trajectory `t ↦ (u(t), φ(t))` on `[0, (len−1)·dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    q: u32,
    u: Vec<VectorField>,
    phi: Vec<ScalarField>,
    /// `∫_Ω F(φ(t))`.
    f_integral: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        dt: f64,
        u: Vec<VectorField>,
        phi: Vec<ScalarField>,
        pot: &dyn DoubleWell,
        m0: Option<f64>,
    ) -> Result<Self, DiagnosticsError> {
        if u.len() != phi.len() {
            return Err(DiagnosticsError::Mismatch("snapshot counts"));
        }
        if phi.is_empty() {
            return Err(DiagnosticsError::TooShort { needed: 1, got: 0 });
        }
        let g = *phi[0].grid();
        let mut f_integral = Vec::with_capacity(phi.len());
        for (n, (v, p)) in u.iter().zip(&phi).enumerate() {
            if v.grid() != &g || p.grid() != &g {
                return Err(DiagnosticsError::Mismatch("grids"));
            }
            if !v.is_finite() || !p.is_finite() {
                return Err(DiagnosticsError::NonFinite(n));
            }
            if let Some(m0) = m0 {
                let mean = p.mean();
                if mean.abs() > m0 {
                    return Err(DiagnosticsError::MeanCap { mean, m0 });
                }
            }
            let mut acc = 0.0;
            for &s in p.values() {
                acc += pot.value(s)?;
            }
            f_integral.push(acc * g.cell_volume());
        }
        Ok(Self {
            dt,
            q: pot.spec().q,
            u,
            phi,
            f_integral,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn len(&self) -> usize {
        self.phi.len()
    }
    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }
    pub fn grid(&self) -> &Grid {
        self.phi[0].grid()
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| n as f64 * self.dt).collect()
    }
    pub fn velocities(&self) -> &[VectorField] {
        &self.u
    }
    pub fn phases(&self) -> &[ScalarField] {
        &self.phi
    }
    pub fn potential_integrals(&self) -> &[f64] {
        &self.f_integral
    }
}

/// `T(t)z`: drops the first `t/dt` snapshots; time restarts at 0.
pub fn translate(z: &Trajectory, shift: f64) -> Result<Trajectory, DiagnosticsError> {
    let steps = (shift / z.dt).round();
    let bad = || DiagnosticsError::BadShift {
        shift,
        dt: z.dt,
        horizon: z.horizon(),
    };
    if !(shift >= 0.0) || (steps * z.dt - shift).abs() > 1e-9 * z.dt.max(shift) {
        return Err(bad());
    }
    let k = steps as usize;
    if k >= z.len() {
        return Err(bad());
    }
    Ok(Trajectory {
        dt: z.dt,
        q: z.q,
        u: z.u[k..].to_vec(),
        phi: z.phi[k..].to_vec(),
        f_integral: z.f_integral[k..].to_vec(),
    })
}

/// Dual norms used by the metric, with solver data cached per grid.
struct DualNorms {
    grid: Grid,
    op: ViscousOperator,
}

impl DualNorms {
    fn new(grid: Grid) -> Self {
        Self {
            grid,
            op: ViscousOperator::uniform(grid, 1.0),
        }
    }

    /// `‖w‖_{V'_div}² = sup_v ⟨w, v⟩²/‖v‖²_V` over discrete divergence-free
    /// no-slip `v = curl χ`, i.e. `w·(curlᵀ K⁻¹ curlᵀ) w` with `K = curlᵀ L curl`.
    fn v_div_dual(&self, w: &VectorField) -> Result<f64, CgError> {
        let g = self.grid;
        let m = (g.nx() - 1) * (g.ny() - 1);
        let mut b = vec![0.0; m];
        crate::ns::curl_interior_t(&g, w.u(), w.v(), &mut b);
        if b.iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let (ul, vl) = (g.u_len(), g.v_len());
        let (mut fu, mut fv) = (vec![0.0; ul], vec![0.0; vl]);
        let (mut lu, mut lv) = (vec![0.0; ul], vec![0.0; vl]);
        let mut x = vec![0.0; m];
        conjugate_gradient(
            |p, out| {
                crate::ns::curl_interior(&g, p, &mut fu, &mut fv);
                self.op.apply(&fu, &fv, &mut lu, &mut lv);
                crate::ns::curl_interior_t(&g, &lu, &lv, out);
            },
            &b,
            &mut x,
            CgOptions {
                rel_tol: 1e-12,
                abs_tol: 0.0,
                max_iter: 100 * m,
                zero_mean: false,
            },
        )?;
        Ok((g.cell_volume() * dot(&b, &x)).max(0.0).sqrt())
    }

    /// `‖f‖_{V'}² = ⟨f − f̄, 𝒩(f − f̄)⟩ + |Ω| f̄²`.
    fn v_dual(&self, f: &ScalarField) -> Result<f64, GridError> {
        let mean = f.mean();
        let centred = f.map(|x| x - mean);
        let n = inverse_neumann_with(&centred, 1e-12, None)?;
        Ok((inner(&centred, &n).max(0.0) + f.grid().area() * mean * mean).sqrt())
    }

    /// `‖∇v‖²` through the strain form.
    fn v_div_sq(&self, v: &VectorField) -> f64 {
        self.op.dissipation(v.u(), v.v())
    }

    /// `‖f‖² + ‖∇f‖²`.
    fn h1_sq(&self, f: &ScalarField) -> f64 {
        let g = self.grid;
        let mut gu = vec![0.0; g.u_len()];
        let mut gv = vec![0.0; g.v_len()];
        gradient_into(&g, f.values(), &mut gu, &mut gv);
        inner(f, f) + g.cell_volume() * (dot(&gu, &gu) + dot(&gv, &gv))
    }
}

/// Translation-bounded `L^p` norm of a sampled series: sup over windows of
/// unit length (the whole series when shorter) of `(Σ dt|f|^p)^{1/p}`.
pub fn tb_norm(series: &[f64], dt: f64, p: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let w = ((1.0 / dt).round() as usize).clamp(1, series.len());
    let powered: Vec<f64> = series.iter().map(|x| x.abs().powf(p)).collect();
    let best = (0..=powered.len() - w)
        .map(|start| powered[start..start + w].iter().sum::<f64>())
        .fold(0.0, f64::max);
    (dt * best).powf(1.0 / p)
}

/// Components of the trajectory metric, summed in [`MetricParts::total`].
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct MetricParts {
    pub sup_state: f64,
    pub tb_energy: f64,
    pub tb_velocity_rate: f64,
    pub tb_phase_rate: f64,
    pub potential_gap: f64,
}

impl MetricParts {
    pub fn total(&self) -> f64 {
        self.sup_state + self.tb_energy + self.tb_velocity_rate + self.tb_phase_rate + self.potential_gap
    }
}

pub fn trajectory_metric_parts(z1: &Trajectory, z2: &Trajectory) -> Result<MetricParts, DiagnosticsError> {
    if z1.grid() != z2.grid() {
        return Err(DiagnosticsError::Mismatch("grids"));
    }
    if z1.len() != z2.len() {
        return Err(DiagnosticsError::Mismatch("horizons"));
    }
    if z1.dt != z2.dt {
        return Err(DiagnosticsError::Mismatch("time steps"));
    }
    if z1.q != z2.q {
        return Err(DiagnosticsError::Mismatch("potential order"));
    }
    let dn = DualNorms::new(*z1.grid());
    let p = 2.0 + 2.0 * z1.q as f64;
    let dt = z1.dt;
    let n = z1.len();
    let du: Vec<VectorField> = (0..n).map(|k| z2.u[k].sub(&z1.u[k])).collect();
    let dphi: Vec<ScalarField> = (0..n).map(|k| z2.phi[k].sub(&z1.phi[k])).collect();

    let mut sup_state: f64 = 0.0;
    let mut energy = Vec::with_capacity(n);
    for k in 0..n {
        let kin = crate::grid::vector_l2_norm(&du[k]);
        sup_state = sup_state.max(kin + crate::grid::lp_norm(&dphi[k], p));
        energy.push((dn.v_div_sq(&du[k]) + dn.h1_sq(&dphi[k])).sqrt());
    }
    let mut vel_rate = Vec::with_capacity(n.saturating_sub(1));
    let mut phase_rate = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let mut dv = du[k + 1].sub(&du[k]);
        dv.scale(1.0 / dt);
        vel_rate.push(dn.v_div_dual(&dv)?);
        let mut df = dphi[k + 1].sub(&dphi[k]);
        df.values_mut().iter_mut().for_each(|x| *x /= dt);
        phase_rate.push(dn.v_dual(&df)?);
    }
    let gap = z1
        .f_integral
        .iter()
        .zip(&z2.f_integral)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(MetricParts {
        sup_state,
        tb_energy: tb_norm(&energy, dt, 2.0),
        tb_velocity_rate: tb_norm(&vel_rate, dt, 4.0 / 3.0),
        tb_phase_rate: tb_norm(&phase_rate, dt, 2.0),
        potential_gap: gap.sqrt(),
    })
}

/// Finite-horizon version of the trajectory-space metric.
pub fn trajectory_metric(z1: &Trajectory, z2: &Trajectory) -> Result<f64, DiagnosticsError> {
    Ok(trajectory_metric_parts(z1, z2)?.total())
}
