//! Run orchestration: setup from a [`RunConfig`], the coupled and CH-only
//! time loops, the ε sweep, and run-directory output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::ch::{ch_dissipation, ch_energy, ch_step, chemical_potential, ChError, ChOptions, ChState};
use crate::config::{ConfigError, ForcingSpec, InitialPhase, RunConfig, VelocityProfile};
use crate::diagnostics::{
    energy, gradient_lower_bound, kenmochi_bound, kenmochi_l1, kenmochi_levels, DiagnosticsError, EnergyReport,
    GradientBound, KenmochiBound,
};
use crate::grid::{inner_faces, l2_norm, Grid, ScalarBc, ScalarField, VectorField};
use crate::io::{read_snapshot, write_raw, write_snapshot, Series};
use crate::kernel::{build_kernel, KernelData, KernelError, KernelSpec};
use crate::ns::{max_divergence, ns_step, Forcing, NsError, NsOptions, NsState, ViscositySpec, ViscousOperator};
use crate::potential::{DoubleWell, PotentialError, PotentialModel, PotentialSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config rejected ({code}): {source}", code = .source.code())]
    Config {
        #[from]
        source: ConfigError,
    },
    #[error("numerical failure at step {step}: {source}")]
    Numerical { step: usize, source: NumericalError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum NumericalError {
    #[error(transparent)]
    Ch(#[from] ChError),
    #[error(transparent)]
    Ns(#[from] NsError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl RunError {
    /// Process exit status: 2 for config rejection, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io(_) => 1,
        }
    }

    fn at(step: usize, e: impl Into<NumericalError>) -> Self {
        RunError::Numerical {
            step,
            source: e.into(),
        }
    }
}

fn potential_error(e: PotentialError) -> ConfigError {
    match e {
        PotentialError::EpsilonOutOfRange { epsilon, eps_max } => ConfigError::EpsilonRange {
            epsilon,
            eps_max,
            reason: "outside the validated range".into(),
        },
        PotentialError::PremiseViolated { premise, s, value } => ConfigError::EpsilonRange {
            epsilon: f64::NAN,
            eps_max: f64::NAN,
            reason: format!("premise {premise} fails at s = {s} (value {value})"),
        },
        PotentialError::ConvexityMargin { c0, required } => ConfigError::BetaMargin {
            beta: required + c0,
            required,
            margin: c0,
        },
        other => ConfigError::Invalid {
            key: "potential",
            value: other.to_string(),
            reason: "rejected by the potential builder",
        },
    }
}

/// Potential for `epsilon` (`0` for the singular mode) paired with `beta`.
pub fn build_potential(cfg: &RunConfig, epsilon: f64, beta: f64) -> Result<PotentialModel, ConfigError> {
    let spec = if epsilon == 0.0 {
        PotentialSpec::singular(cfg.theta, cfg.theta_c, cfg.q, beta)
    } else {
        PotentialSpec::with_eps_max(cfg.theta, cfg.theta_c, cfg.q, epsilon, beta, cfg.eps_max)
    }
    .map_err(|e| match e {
        PotentialError::EpsilonOutOfRange { .. } => ConfigError::EpsilonRange {
            epsilon,
            eps_max: cfg.eps_max,
            reason: "outside the validated range".into(),
        },
        e => potential_error(e),
    })?;
    PotentialModel::from_spec(&spec).map_err(|e| match e {
        PotentialError::PremiseViolated { premise, s, value } => ConfigError::EpsilonRange {
            epsilon,
            eps_max: cfg.eps_max,
            reason: format!("premise {premise} fails at s = {s} (value {value})"),
        },
        e => potential_error(e),
    })
}

/// Everything a run needs, built and validated from the config.
#[derive(Debug)]
pub struct Setup {
    pub config: RunConfig,
    pub grid: Grid,
    pub kernel: KernelData,
    pub potential: PotentialModel,
    pub visc: ViscositySpec,
    pub forcing: Forcing,
    pub phi0: ScalarField,
    pub u0: VectorField,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let grid = Grid::new(cfg.nx, cfg.ny, cfg.lx, cfg.ly).map_err(|e| ConfigError::Invalid {
            key: "grid",
            value: e.to_string(),
            reason: "rejected by the grid builder",
        })?;
        let kernel = build_kernel_for(cfg, &grid)?;
        let potential = build_potential(cfg, cfg.epsilon, kernel.beta())?;
        let visc = ViscositySpec::new(cfg.nu1, cfg.nu2).map_err(|_| ConfigError::Invalid {
            key: "nu1",
            value: format!("{}, {}", cfg.nu1, cfg.nu2),
            reason: "need 0 < nu1 <= nu2",
        })?;
        let forcing = match cfg.forcing {
            ForcingSpec::Zero => Forcing::Zero,
            ForcingSpec::SteadyGradient { fx, fy } => Forcing::Constant { fx, fy },
            ForcingSpec::TimePeriodic { amplitude, period } => Forcing::TimePeriodic { amplitude, period },
        };
        let phi0 = initial_phase(cfg, grid)?;
        let mean = phi0.mean();
        if mean.abs() > cfg.m0 {
            return Err(ConfigError::MeanCap { mean, m0: cfg.m0 });
        }
        if potential.is_singular() {
            if let Some(&bad) = phi0.values().iter().find(|v| v.abs() >= 1.0) {
                return Err(ConfigError::Invalid {
                    key: "init",
                    value: bad.to_string(),
                    reason: "singular mode needs |phi0| < 1",
                });
            }
        }
        let u0 = velocity_field(cfg.velocity, grid);
        Ok(Self {
            config: cfg.clone(),
            grid,
            kernel,
            potential,
            visc,
            forcing,
            phi0,
            u0,
        })
    }

    pub fn ch_options(&self) -> ChOptions {
        ChOptions {
            scheme: self.config.scheme,
            newton_tol: self.config.newton_tol,
            max_newton: self.config.max_newton,
            linear_tol: self.config.linear_tol,
        }
    }

    pub fn ns_options(&self) -> NsOptions {
        NsOptions {
            momentum_tol: self.config.momentum_tol,
            div_tol: self.config.div_tol,
        }
    }
}

fn build_kernel_for(cfg: &RunConfig, grid: &Grid) -> Result<KernelData, ConfigError> {
    let spec = KernelSpec::new(cfg.kernel, cfg.kernel_width, cfg.kernel_mass).map_err(|e| ConfigError::Invalid {
        key: "kernel",
        value: e.to_string(),
        reason: "rejected by the kernel builder",
    })?;
    let kd = build_kernel(&spec, grid).map_err(|e| ConfigError::Invalid {
        key: "kernel_width",
        value: e.to_string(),
        reason: "rejected by the kernel builder",
    })?;
    kd.check_beta_margin(cfg.theta, cfg.theta_c).map_err(|e| match e {
        KernelError::BetaMargin { beta, required, margin } => ConfigError::BetaMargin { beta, required, margin },
        e => ConfigError::Invalid {
            key: "kernel",
            value: e.to_string(),
            reason: "rejected by the kernel builder",
        },
    })?;
    Ok(kd)
}

pub fn velocity_field(profile: VelocityProfile, grid: Grid) -> VectorField {
    match profile {
        VelocityProfile::Zero => VectorField::zeros(grid),
        VelocityProfile::Swirl { amplitude } => {
            use std::f64::consts::PI;
            let (lx, ly) = (grid.lx(), grid.ly());
            VectorField::from_stream_function(grid, move |x, y| {
                amplitude * (PI * x / lx).sin().powi(2) * (PI * y / ly).sin().powi(2)
            })
        }
    }
}

pub fn initial_phase(cfg: &RunConfig, grid: Grid) -> Result<ScalarField, ConfigError> {
    use std::f64::consts::PI;
    let (lx, ly) = (grid.lx(), grid.ly());
    let f = match &cfg.init {
        InitialPhase::ConstantNoise { mean, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut noise: Vec<f64> = (0..grid.cells())
                .map(|_| if *amplitude > 0.0 { rng.gen_range(-1.0..=1.0) * amplitude } else { 0.0 })
                .collect();
            let m = noise.iter().sum::<f64>() / noise.len() as f64;
            noise.iter_mut().for_each(|v| *v += mean - m);
            ScalarField::from_values(grid, noise).expect("sized to the grid")
        }
        InitialPhase::Stripe { mean, amplitude, modes } => {
            let k = 2.0 * PI * *modes as f64 / lx;
            ScalarField::from_fn(grid, |x, _| mean + amplitude * (k * x).cos())
        }
        InitialPhase::Bubble {
            mean,
            amplitude,
            radius,
            width,
        } => ScalarField::from_fn(grid, |x, y| {
            let r = ((x - 0.5 * lx).powi(2) + (y - 0.5 * ly).powi(2)).sqrt();
            mean + amplitude * ((radius - r) / width).tanh()
        }),
        InitialPhase::Cosine { mean, amplitude } => {
            ScalarField::from_fn(grid, |x, y| mean + amplitude * (PI * x / lx).cos() * (PI * y / ly).cos())
        }
        InitialPhase::TanhStripe { amplitude, width } => {
            ScalarField::from_fn(grid, |x, _| amplitude * ((PI * x / lx).cos() / width).tanh())
        }
        InitialPhase::Bump { mean, amplitude, width } => ScalarField::from_fn(grid, |x, y| {
            let r2 = (x - 0.5 * lx).powi(2) + (y - 0.5 * ly).powi(2);
            mean + amplitude * (-0.5 * r2 / (width * width)).exp()
        }),
        InitialPhase::File(path) => {
            let (f, _) = read_snapshot(path).map_err(|e| ConfigError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            let g = f.grid();
            if g.nx() != grid.nx() || g.ny() != grid.ny() {
                return Err(ConfigError::Invalid {
                    key: "init_file",
                    value: format!("{}x{}", g.nx(), g.ny()),
                    reason: "snapshot grid differs from nx x ny",
                });
            }
            ScalarField::from_values(grid, f.into_values()).expect("sized to the grid")
        }
    };
    if !f.is_finite() {
        return Err(ConfigError::Invalid {
            key: "init",
            value: "non-finite".into(),
            reason: "initial phase must be finite",
        });
    }
    Ok(f.with_bc(ScalarBc::NeumannNoFlux))
}

/// Stored state at the snapshot cadence, with the pointwise-in-time checks.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phi: ScalarField,
    pub u: VectorField,
    pub gradient: GradientBound,
    pub kenmochi: KenmochiBound,
}

#[derive(Debug)]
pub struct RunOutput {
    pub kind: &'static str,
    pub series: Series,
    pub reports: Vec<EnergyReport>,
    pub snapshots: Vec<Snapshot>,
    pub steps_done: usize,
    pub failure: Option<RunError>,
}

impl RunOutput {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

pub const COUPLED_COLUMNS: &[&str] = &[
    "t",
    "mass",
    "mass_drift",
    "energy",
    "kinetic",
    "nonlocal",
    "potential",
    "dissipation_visc",
    "dissipation_mu",
    "forcing",
    "residual",
    "max_abs_phi",
    "kenmochi_l1",
    "max_div",
    "newton_iterations",
];

pub const CH_COLUMNS: &[&str] = &[
    "t",
    "mass",
    "mass_drift",
    "energy",
    "grad_mu2",
    "transport",
    "residual",
    "max_abs_phi",
    "kenmochi_l1",
    "newton_iterations",
];

fn is_snapshot_step(step: usize, total: usize, every: usize) -> bool {
    step == 0 || step == total || (every > 0 && step % every == 0)
}

fn snapshot(setup: &Setup, step: usize, t: f64, phi: &ScalarField, u: &VectorField, mass0: f64) -> Result<Snapshot, RunError> {
    let pot = &setup.potential;
    let gradient = gradient_lower_bound(phi, &setup.kernel, pot).map_err(|e| RunError::at(step, e))?;
    let levels = kenmochi_levels(pot.spec().s0, mass0);
    let kenmochi = kenmochi_bound(phi, mass0, pot, setup.kernel.a_inf(), levels).map_err(|e| RunError::at(step, e))?;
    Ok(Snapshot {
        step,
        t,
        phi: phi.clone(),
        u: u.clone(),
        gradient,
        kenmochi,
    })
}

fn max_abs(f: &ScalarField) -> f64 {
    f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Coupled loop: `μⁿ = μ(φⁿ)`, `uⁿ⁺¹ = NS(uⁿ, φⁿ, μⁿ)`, `φⁿ⁺¹ = CH(φⁿ, uⁿ⁺¹)`.
pub fn run_coupled(setup: &Setup) -> Result<RunOutput, RunError> {
    let cfg = &setup.config;
    let pot = &setup.potential;
    let kd = &setup.kernel;
    let g = setup.grid;
    let dt = cfg.dt;
    let (ch_opts, ns_opts) = (setup.ch_options(), setup.ns_options());

    let mut ch = ChState::new(setup.phi0.clone(), kd, pot).map_err(|e| RunError::at(0, e))?;
    let mut ns = NsState::new(setup.u0.clone());
    let mut series = Series::new(COUPLED_COLUMNS);
    let mut reports = Vec::with_capacity(cfg.steps + 1);
    let mut snapshots = Vec::new();

    let e0 = energy(0.0, &ns.u, &ch.phi, kd, pot).map_err(|e| RunError::at(0, e))?;
    let kl1 = kenmochi_l1(&ch.phi, pot).map_err(|e| RunError::at(0, e))?;
    series.push(vec![
        0.0,
        ch.phi.mean(),
        0.0,
        e0.total,
        e0.kinetic,
        e0.nonlocal,
        e0.potential,
        0.0,
        0.0,
        0.0,
        0.0,
        max_abs(&ch.phi),
        kl1,
        max_divergence(&ns.u),
        0.0,
    ]);
    reports.push(e0);
    if cfg.steps > 0 {
        snapshots.push(snapshot(setup, 0, 0.0, &ch.phi, &ns.u, ch.mass0)?);
    }

    let mut failure = None;
    let mut steps_done = 0;
    for n in 0..cfg.steps {
        let step = n + 1;
        let t_next = step as f64 * dt;
        let result = (|| -> Result<(ChState, NsState, EnergyReport, f64, usize), RunError> {
            let mu_n = chemical_potential(&ch.phi, kd, pot).map_err(|e| RunError::at(step, e))?;
            let h = setup.forcing.field(g, t_next);
            let (ns_next, ns_stats) =
                ns_step(&ns, &ch.phi, &mu_n, &h, &setup.visc, dt, &ns_opts).map_err(|e| RunError::at(step, e))?;
            let (mut ch_next, ch_stats) =
                ch_step(&ch, &ns_next.u, dt, kd, pot, &ch_opts).map_err(|e| RunError::at(step, e))?;
            ch_next.t = t_next;
            let mut rep = energy(t_next, &ns_next.u, &ch_next.phi, kd, pot).map_err(|e| RunError::at(step, e))?;
            let op = ViscousOperator::new(g, ch.phi.values(), &setup.visc);
            rep.dissipation_visc = op.dissipation(ns_next.u.u(), ns_next.u.v());
            rep.dissipation_mu = ch_dissipation(&ch.phi, &ch_next.mu, &ns_next.u).0;
            rep.forcing = inner_faces(&h, &ns_next.u);
            Ok((ch_next, ns_next, rep, ns_stats.max_div, ch_stats.newton_iterations))
        })();
        match result {
            Ok((ch_next, ns_next, rep, max_div, newton)) => {
                let prev = reports.last().expect("initial report");
                let residual = (rep.total - prev.total) / dt + rep.dissipation_visc + rep.dissipation_mu - rep.forcing;
                let kl1 = match kenmochi_l1(&ch_next.phi, pot) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(RunError::at(step, e));
                        break;
                    }
                };
                let mass = ch_next.phi.mean();
                series.push(vec![
                    t_next,
                    mass,
                    mass - ch.mass0,
                    rep.total,
                    rep.kinetic,
                    rep.nonlocal,
                    rep.potential,
                    rep.dissipation_visc,
                    rep.dissipation_mu,
                    rep.forcing,
                    residual,
                    max_abs(&ch_next.phi),
                    kl1,
                    max_div,
                    newton as f64,
                ]);
                reports.push(rep);
                ch = ch_next;
                ns = ns_next;
                steps_done = step;
                if is_snapshot_step(step, cfg.steps, cfg.snapshot_every) {
                    match snapshot(setup, step, t_next, &ch.phi, &ns.u, ch.mass0) {
                        Ok(s) => snapshots.push(s),
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if failure.is_some() && snapshots.last().map(|s| s.step) != Some(steps_done) {
        // last good state, checks best effort
        if let Ok(s) = snapshot(setup, steps_done, steps_done as f64 * dt, &ch.phi, &ns.u, ch.mass0) {
            snapshots.push(s);
        }
    }
    Ok(RunOutput {
        kind: "coupled",
        series,
        reports,
        snapshots,
        steps_done,
        failure,
    })
}

/// CH equation with the prescribed, time-independent velocity of the config.
pub fn run_ch_only(setup: &Setup) -> Result<RunOutput, RunError> {
    let cfg = &setup.config;
    let pot = &setup.potential;
    let kd = &setup.kernel;
    let dt = cfg.dt;
    let opts = setup.ch_options();
    let u = &setup.u0;

    let mut ch = ChState::new(setup.phi0.clone(), kd, pot).map_err(|e| RunError::at(0, e))?;
    let mut series = Series::new(CH_COLUMNS);
    let mut snapshots = Vec::new();
    let e0 = ch_energy(&ch.phi, kd, pot).map_err(|e| RunError::at(0, e))?;
    let kl1 = kenmochi_l1(&ch.phi, pot).map_err(|e| RunError::at(0, e))?;
    series.push(vec![0.0, ch.phi.mean(), 0.0, e0.total, 0.0, 0.0, 0.0, max_abs(&ch.phi), kl1, 0.0]);
    if cfg.steps > 0 {
        snapshots.push(snapshot(setup, 0, 0.0, &ch.phi, u, ch.mass0)?);
    }
    let mut e_prev = e0.total;
    let mut failure = None;
    let mut steps_done = 0;
    for n in 0..cfg.steps {
        let step = n + 1;
        let t_next = step as f64 * dt;
        let result = (|| -> Result<(ChState, [f64; 5]), RunError> {
            let (mut next, stats) = ch_step(&ch, u, dt, kd, pot, &opts).map_err(|e| RunError::at(step, e))?;
            next.t = t_next;
            let en = ch_energy(&next.phi, kd, pot).map_err(|e| RunError::at(step, e))?.total;
            let (grad2, transport) = ch_dissipation(&ch.phi, &next.mu, u);
            let kl1 = kenmochi_l1(&next.phi, pot).map_err(|e| RunError::at(step, e))?;
            Ok((next, [en, grad2, transport, kl1, stats.newton_iterations as f64]))
        })();
        match result {
            Ok((next, [en, grad2, transport, kl1, newton])) => {
                let residual = (en - e_prev) / dt + grad2 - transport;
                let mass = next.phi.mean();
                series.push(vec![
                    t_next,
                    mass,
                    mass - ch.mass0,
                    en,
                    grad2,
                    transport,
                    residual,
                    max_abs(&next.phi),
                    kl1,
                    newton,
                ]);
                e_prev = en;
                ch = next;
                steps_done = step;
                if is_snapshot_step(step, cfg.steps, cfg.snapshot_every) {
                    match snapshot(setup, step, t_next, &ch.phi, u, ch.mass0) {
                        Ok(s) => snapshots.push(s),
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if failure.is_some() && snapshots.last().map(|s| s.step) != Some(steps_done) {
        if let Ok(s) = snapshot(setup, steps_done, steps_done as f64 * dt, &ch.phi, u, ch.mass0) {
            snapshots.push(s);
        }
    }
    Ok(RunOutput {
        kind: "ch-only",
        series,
        reports: Vec::new(),
        snapshots,
        steps_done,
        failure,
    })
}

/// One row of the ε sweep: `‖φ_ε − φ_{ε/2}‖_{L²}` at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub l2_diff: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepTable {
    pub horizon: f64,
    pub rows: Vec<SweepRow>,
    /// Differences strictly decrease along the grid.
    pub strictly_decreasing: bool,
}

fn final_phase(cfg: &RunConfig, epsilon: f64) -> Result<ScalarField, RunError> {
    let c = RunConfig {
        epsilon,
        snapshot_every: 0,
        ..cfg.clone()
    };
    let setup = Setup::new(&c)?;
    let out = run_ch_only(&setup)?;
    if let Some(e) = out.failure {
        return Err(e);
    }
    Ok(out.snapshots.last().expect("final snapshot").phi.clone())
}

/// CH-only runs at every `ε` of the grid and at `ε/2`.
pub fn eps_sweep(cfg: &RunConfig) -> Result<SweepTable, RunError> {
    let mut rows = Vec::with_capacity(cfg.eps_grid.len());
    for &eps in &cfg.eps_grid {
        let a = final_phase(cfg, eps)?;
        let b = final_phase(cfg, 0.5 * eps)?;
        rows.push(SweepRow {
            epsilon: eps,
            l2_diff: l2_norm(&a.sub(&b)),
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].l2_diff < w[0].l2_diff);
    Ok(SweepTable {
        horizon: cfg.horizon(),
        rows,
        strictly_decreasing,
    })
}

impl SweepTable {
    pub fn series(&self) -> Series {
        let mut s = Series::new(&["epsilon", "l2_diff"]);
        for r in &self.rows {
            s.push(vec![r.epsilon, r.l2_diff]);
        }
        s
    }
}

/// `(s, F, F', F_ε, F_ε', F_ε'')` on a uniform grid strictly inside (−1, 1).
pub fn potential_table(cfg: &RunConfig, points: usize) -> Result<Series, RunError> {
    cfg.validate()?;
    let grid = Grid::new(cfg.nx, cfg.ny, cfg.lx, cfg.ly).map_err(|e| ConfigError::Invalid {
        key: "grid",
        value: e.to_string(),
        reason: "rejected by the grid builder",
    })?;
    let beta = build_kernel_for(cfg, &grid)?.beta();
    let singular = build_potential(cfg, 0.0, beta)?;
    let eps = if cfg.epsilon > 0.0 { cfg.epsilon } else { cfg.eps_grid.first().copied().unwrap_or(1e-3) };
    let reg = build_potential(cfg, eps, beta)?;
    let mut s = Series::new(&["s", "F", "F_prime", "F_eps", "F_eps_prime", "F_eps_second"]);
    let lim = 1.0 - 1e-6;
    for i in 0..points {
        let x = -lim + 2.0 * lim * i as f64 / (points - 1).max(1) as f64;
        let row = (|| -> Result<Vec<f64>, PotentialError> {
            Ok(vec![
                x,
                singular.value(x)?,
                singular.first(x)?,
                reg.value(x)?,
                reg.first(x)?,
                reg.second(x)?,
            ])
        })()
        .map_err(|e| RunError::at(0, e))?;
        s.push(row);
    }
    Ok(s)
}

fn manifest(setup: &Setup, out: Option<&RunOutput>, kind: &str) -> serde_json::Value {
    let cfg = &setup.config;
    let spec = setup.potential.spec();
    let kr = setup.kernel.report(cfg.theta, cfg.theta_c);
    let status = match out {
        None => "ok".to_string(),
        Some(o) => match &o.failure {
            None => "ok".to_string(),
            Some(_) => "failed".to_string(),
        },
    };
    json!({
        "kind": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "error": out.and_then(|o| o.failure.as_ref().map(|e| e.to_string())),
        "steps_requested": cfg.steps,
        "steps_done": out.map(|o| o.steps_done).unwrap_or(0),
        "horizon": cfg.horizon(),
        "config": cfg.to_text(),
        "potential": {
            "theta": spec.theta,
            "theta_c": spec.theta_c,
            "q": spec.q,
            "epsilon": spec.epsilon,
            "singular": setup.potential.is_singular(),
            "alpha": spec.alpha,
            "alpha_star": spec.alpha_star,
            "beta": spec.beta,
            "c0": spec.c0,
            "s0": spec.s0,
        },
        "kernel": kr,
        "tolerances": {
            "newton_tol": cfg.newton_tol,
            "max_newton": cfg.max_newton,
            "linear_tol": cfg.linear_tol,
            "momentum_tol": cfg.momentum_tol,
            "div_tol": cfg.div_tol,
            "singular_guard": crate::ch::SINGULAR_GUARD,
        },
        "scheme": {
            "ch": cfg.scheme.name(),
            "coupling": "ns-then-ch, lagged mu",
            "convection": "divergence form, face-averaged phi",
            "capillary_force": "-phi grad mu",
            "viscosity": "frozen nu(phi^n)",
        },
        "seed": cfg.seed,
    })
}

/// Writes `manifest.json`, and, when anything was stepped, `series.csv`,
/// `snapshots.csv` and the field snapshots under `fields/`.
pub fn write_run(dir: &Path, setup: &Setup, out: Option<&RunOutput>, kind: &str) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let m = manifest(setup, out, kind);
    if let Some(out) = out.filter(|_| setup.config.steps > 0) {
        out.series.write_csv(&dir.join("series.csv"))?;
        let mut checks = Series::new(&[
            "step",
            "t",
            "grad_mu2",
            "grad_rhs",
            "kenmochi_lhs",
            "kenmochi_rhs",
        ]);
        let fields = dir.join("fields");
        std::fs::create_dir_all(&fields)?;
        let mut index = Vec::new();
        for s in &out.snapshots {
            checks.push(vec![
                s.step as f64,
                s.t,
                s.gradient.grad_mu2,
                s.gradient.rhs,
                s.kenmochi.lhs,
                s.kenmochi.rhs,
            ]);
            let phi_name = format!("phi_{:07}.bin", s.step);
            let u_name = format!("u_{:07}.bin", s.step);
            let v_name = format!("v_{:07}.bin", s.step);
            let g = s.phi.grid();
            write_snapshot(&fields.join(&phi_name), &s.phi, s.t)?;
            write_raw(&fields.join(&u_name), g.nx() + 1, g.ny(), g.hx(), g.hy(), s.t, s.u.u())?;
            write_raw(&fields.join(&v_name), g.nx(), g.ny() + 1, g.hx(), g.hy(), s.t, s.u.v())?;
            index.push(json!({"step": s.step, "t": s.t, "phi": phi_name, "u": u_name, "v": v_name}));
        }
        checks.write_csv(&dir.join("snapshots.csv"))?;
        std::fs::write(fields.join("index.json"), serde_json::to_string_pretty(&index).expect("json"))?;
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m).expect("json"))?;
    Ok(())
}

/// Config text stored in a manifest, for re-running from the manifest alone.
pub fn config_from_manifest(text: &str) -> Result<RunConfig, ConfigError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Io {
        path: "manifest".into(),
        reason: e.to_string(),
    })?;
    let cfg = v.get("config").and_then(|c| c.as_str()).ok_or_else(|| ConfigError::Io {
        path: "manifest".into(),
        reason: "no config entry".into(),
    })?;
    RunConfig::default().apply_text(cfg)
}

/// Kernel summary plus the `a(x)` field.
pub fn kernel_report(dir: &Path, cfg: &RunConfig) -> Result<serde_json::Value, RunError> {
    cfg.validate()?;
    let grid = Grid::new(cfg.nx, cfg.ny, cfg.lx, cfg.ly).map_err(|e| ConfigError::Invalid {
        key: "grid",
        value: e.to_string(),
        reason: "rejected by the grid builder",
    })?;
    let spec = KernelSpec::new(cfg.kernel, cfg.kernel_width, cfg.kernel_mass).map_err(|e| ConfigError::Invalid {
        key: "kernel",
        value: e.to_string(),
        reason: "rejected by the kernel builder",
    })?;
    let kd = build_kernel(&spec, &grid).map_err(|e| ConfigError::Invalid {
        key: "kernel_width",
        value: e.to_string(),
        reason: "rejected by the kernel builder",
    })?;
    let report = kd.report(cfg.theta, cfg.theta_c);
    std::fs::create_dir_all(dir)?;
    write_snapshot(&dir.join("a_field.bin"), kd.a_field(), 0.0)?;
    let mut a = Series::new(&["x", "y", "a"]);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            a.push(vec![grid.x(i), grid.y(j), kd.a_field().at(i, j)]);
        }
    }
    a.write_csv(&dir.join("a_field.csv"))?;
    let v = serde_json::to_value(report).expect("json");
    std::fs::write(dir.join("kernel.json"), serde_json::to_string_pretty(&v).expect("json"))?;
    Ok(v)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Option<Vec<f64>> {
    let c = header.iter().position(|h| h == name)?;
    Some(rows.iter().map(|r| r[c]).collect())
}

/// `k = min(1/2, λ₁ν₁)` with `λ₁` from the discrete Stokes eigensolver.
pub fn decay_rate(grid: &Grid, nu1: f64) -> Result<(f64, f64), RunError> {
    let lambda1 = crate::ns::stokes_first_eigenvalue(grid, 1e-8).map_err(|e| RunError::at(0, e))?;
    Ok((lambda1, (lambda1 * nu1).min(0.5)))
}

/// Reads a run directory back and evaluates every stored-series property.
pub fn diagnose(dir: &Path) -> Result<serde_json::Value, RunError> {
    use crate::diagnostics::{dissipative_estimate_check, tb_norm};
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let cfg = config_from_manifest(&manifest.to_string())?;
    let kind = manifest.get("kind").and_then(|k| k.as_str()).unwrap_or("coupled").to_string();
    let setup = Setup::new(&cfg)?;
    let (header, rows) = Series::read_csv(&dir.join("series.csv"))?;
    let col = |n: &str| column(&header, &rows, n).unwrap_or_default();
    let t = col("t");
    let drift = col("mass_drift");
    let en = col("energy");
    let res = col("residual");
    let maxphi = col("max_abs_phi");
    let kl1 = col("kenmochi_l1");

    let max_drift = drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_abs_phi = maxphi.iter().cloned().fold(0.0f64, f64::max);
    let increases = en.windows(2).filter(|w| w[1] > w[0]).count();
    let max_residual = res.iter().skip(1).fold(0.0f64, |m, v| m.max(v.abs()));
    let cumulative: f64 = res.iter().skip(1).map(|r| r * cfg.dt).sum();

    let (lambda1, k) = decay_rate(&setup.grid, cfg.nu1)?;
    let mean0 = setup.phi0.mean();
    let plateau = setup.potential.value(mean0).map_err(|e| RunError::at(0, e))? * setup.grid.area();
    let dissipative = dissipative_estimate_check(&t, &en, k, plateau);

    let (sh, srows) = Series::read_csv(&dir.join("snapshots.csv"))?;
    let scol = |n: &str| column(&sh, &srows, n).unwrap_or_default();
    let gradient_ok = scol("grad_mu2").iter().zip(scol("grad_rhs")).all(|(l, r)| *l >= r);
    let kenmochi_ok = scol("kenmochi_lhs")
        .iter()
        .zip(scol("kenmochi_rhs"))
        .all(|(l, r)| *l <= r + 1e-12 * r.abs().max(1.0));
    let kenmochi_finite = kl1.iter().all(|v| v.is_finite());

    Ok(json!({
        "kind": kind,
        "steps": rows.len().saturating_sub(1),
        "mass": {"max_drift": max_drift, "holds": max_drift <= 1e-12},
        "singular_bound": {"max_abs_phi": max_abs_phi, "holds": max_abs_phi < 1.0},
        "energy": {
            "increasing_steps": increases,
            "max_abs_residual": max_residual,
            "cumulative_residual": cumulative,
        },
        "dissipative_estimate": {
            "lambda1": lambda1,
            "k": k,
            "horizon": t.last().copied().unwrap_or(0.0),
            "check": dissipative,
        },
        "gradient_lower_bound": {"snapshots": srows.len(), "holds": gradient_ok},
        "kenmochi": {
            "max_l1": kl1.iter().cloned().fold(0.0f64, f64::max),
            "tb_l2": tb_norm(&kl1, cfg.dt, 2.0),
            "finite": kenmochi_finite,
            "bound_holds": kenmochi_ok,
        },
    }))
}
