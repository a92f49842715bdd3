//! Flat `key = value` run configuration and scenario presets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::ch::ChScheme;
use crate::kernel::KernelFamily;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{key} = {value} is invalid: {reason}")]
    Invalid { key: &'static str, value: String, reason: &'static str },
    #[error("kernel lower bound beta = {beta} must exceed theta_c - theta = {required} (margin {margin})")]
    BetaMargin { beta: f64, required: f64, margin: f64 },
    #[error("epsilon = {epsilon} outside (0, {eps_max}]: {reason}")]
    EpsilonRange { epsilon: f64, eps_max: f64, reason: String },
    #[error("|mean phi0| = {mean} exceeds m0 = {m0}")]
    MeanCap { mean: f64, m0: f64 },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

impl ConfigError {
    /// Stable machine-readable tag, one per rejection path.
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Syntax { .. } => "syntax",
            ConfigError::UnknownKey(_) => "unknown-key",
            ConfigError::BadValue { .. } => "bad-value",
            ConfigError::UnknownPreset(_) => "unknown-preset",
            ConfigError::Invalid { .. } => "invalid-parameter",
            ConfigError::BetaMargin { .. } => "beta-margin",
            ConfigError::EpsilonRange { .. } => "epsilon-range",
            ConfigError::MeanCap { .. } => "mean-cap",
            ConfigError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingSpec {
    Zero,
    /// Constant body force.
    SteadyGradient { fx: f64, fy: f64 },
    TimePeriodic { amplitude: f64, period: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPhase {
    /// Mean plus uniform noise in `[−amplitude, amplitude]`, recentred.
    ConstantNoise { mean: f64, amplitude: f64 },
    /// `mean + amplitude·cos(2π·modes·x/lx)`.
    Stripe { mean: f64, amplitude: f64, modes: u32 },
    /// Disc of radius `radius` at the centre, `tanh` profile of width `width`.
    Bubble { mean: f64, amplitude: f64, radius: f64, width: f64 },
    /// `mean + amplitude·cos(πx/lx)cos(πy/ly)`.
    Cosine { mean: f64, amplitude: f64 },
    /// `amplitude·tanh(cos(πx/lx)/width)`: two plateaus at `±amplitude`.
    TanhStripe { amplitude: f64, width: f64 },
    /// Centred Gaussian `mean + amplitude·exp(−r²/(2·width²))`, flat near the walls.
    Bump { mean: f64, amplitude: f64, width: f64 },
    File(PathBuf),
}

/// Prescribed or initial velocity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityProfile {
    Zero,
    /// Stream function `A·sin²(πx/lx)·sin²(πy/ly)`.
    Swirl { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub theta: f64,
    pub theta_c: f64,
    pub q: u32,
    /// `0` selects the unregularized singular potential.
    pub epsilon: f64,
    pub eps_max: f64,
    pub eps_grid: Vec<f64>,
    pub kernel: KernelFamily,
    /// Kernel width σ in length units.
    pub kernel_width: f64,
    pub kernel_mass: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub forcing: ForcingSpec,
    pub init: InitialPhase,
    pub velocity: VelocityProfile,
    pub m0: f64,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    pub scheme: ChScheme,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub linear_tol: f64,
    pub momentum_tol: f64,
    pub div_tol: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            lx: 1.0,
            ly: 1.0,
            theta: 1.0,
            theta_c: 2.0,
            q: 1,
            epsilon: 1e-3,
            eps_max: crate::potential::DEFAULT_EPS_MAX,
            eps_grid: vec![1e-1, 1e-2, 1e-3, 1e-4],
            kernel: KernelFamily::Gaussian,
            kernel_width: 2.5 / 64.0,
            kernel_mass: 6.0,
            nu1: 0.05,
            nu2: 0.1,
            forcing: ForcingSpec::Zero,
            init: InitialPhase::ConstantNoise { mean: 0.0, amplitude: 1e-2 },
            velocity: VelocityProfile::Zero,
            m0: 0.9,
            dt: 1e-4,
            steps: 100,
            snapshot_every: 0,
            scheme: ChScheme::ConvexSplit,
            newton_tol: 1e-12,
            max_newton: 50,
            linear_tol: 1e-10,
            momentum_tol: 1e-12,
            div_tol: 1e-11,
            seed: 0,
        }
    }
}

pub const PRESETS: &[&str] = &["spinodal-2d", "bubble-swirl", "saturated-cosine", "equilibrium"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let base = Self::default();
        match name {
            "spinodal-2d" => Ok(Self {
                steps: 10_000,
                snapshot_every: 1000,
                ..base
            }),
            "bubble-swirl" => Ok(Self {
                nx: 32,
                ny: 32,
                kernel_width: 2.5 / 32.0,
                init: InitialPhase::Bubble {
                    mean: 0.0,
                    amplitude: 0.8,
                    radius: 0.25,
                    width: 0.05,
                },
                velocity: VelocityProfile::Swirl { amplitude: 0.5 },
                dt: 1e-3,
                steps: 200,
                ..base
            }),
            "saturated-cosine" => Ok(Self {
                nx: 32,
                ny: 32,
                kernel_width: 2.5 / 32.0,
                // wells at ±(1 − 3.3e-6), inside every band of the default eps grid
                theta: 0.3,
                kernel_mass: 8.0,
                init: InitialPhase::TanhStripe {
                    amplitude: 1.0 - 1e-6,
                    width: 0.1,
                },
                dt: 1e-3,
                steps: 1000,
                ..base
            }),
            "equilibrium" => Ok(Self {
                nx: 32,
                ny: 32,
                kernel_width: 2.5 / 32.0,
                init: InitialPhase::ConstantNoise { mean: 0.3, amplitude: 0.0 },
                steps: 1000,
                ..base
            }),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(mut self, text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_string(),
                });
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        // preset first so that later keys override it
        if let Some((_, p)) = pairs.iter().find(|(k, _)| k == "preset") {
            self = Self::preset(p)?;
        }
        let map: BTreeMap<String, String> = pairs.into_iter().filter(|(k, _)| k != "preset").collect();
        self.apply_map(&map)?;
        Ok(self)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::default().apply_text(&text)
    }

    fn apply_map(&mut self, map: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::BadValue {
                key: k.to_string(),
                value: v.to_string(),
            })
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let getf = |k: &str, d: f64| get(k).map(|v| num::<f64>(k, v)).transpose().map(|o| o.unwrap_or(d));

        for (k, v) in map {
            match k.as_str() {
                "nx" => self.nx = num(k, v)?,
                "ny" => self.ny = num(k, v)?,
                "lx" => self.lx = num(k, v)?,
                "ly" => self.ly = num(k, v)?,
                "theta" => self.theta = num(k, v)?,
                "theta_c" => self.theta_c = num(k, v)?,
                "q" => self.q = num(k, v)?,
                "epsilon" => self.epsilon = num(k, v)?,
                "eps_max" => self.eps_max = num(k, v)?,
                "eps_grid" => {
                    self.eps_grid = v
                        .split(',')
                        .map(|s| num::<f64>(k, s.trim()))
                        .collect::<Result<_, _>>()?
                }
                "kernel" => {
                    self.kernel = v.parse().map_err(|_| ConfigError::BadValue {
                        key: k.clone(),
                        value: v.clone(),
                    })?
                }
                "kernel_width" => self.kernel_width = num(k, v)?,
                "kernel_mass" => self.kernel_mass = num(k, v)?,
                "nu1" => self.nu1 = num(k, v)?,
                "nu2" => self.nu2 = num(k, v)?,
                "m0" => self.m0 = num(k, v)?,
                "dt" => self.dt = num(k, v)?,
                "steps" => self.steps = num(k, v)?,
                "horizon" => {}
                "snapshot_every" => self.snapshot_every = num(k, v)?,
                "scheme" => {
                    self.scheme = v.parse().map_err(|_| ConfigError::BadValue {
                        key: k.clone(),
                        value: v.clone(),
                    })?
                }
                "newton_tol" => self.newton_tol = num(k, v)?,
                "max_newton" => self.max_newton = num(k, v)?,
                "linear_tol" => self.linear_tol = num(k, v)?,
                "momentum_tol" => self.momentum_tol = num(k, v)?,
                "div_tol" => self.div_tol = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                "forcing" | "forcing_fx" | "forcing_fy" | "forcing_amplitude" | "forcing_period" => {}
                "init" | "init_mean" | "init_amplitude" | "init_modes" | "init_radius" | "init_width" | "init_file" => {}
                "velocity" | "velocity_amplitude" => {}
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        if let Some(h) = get("horizon") {
            let horizon: f64 = num("horizon", h)?;
            if !(horizon >= 0.0 && horizon.is_finite()) {
                return Err(ConfigError::Invalid {
                    key: "horizon",
                    value: h.to_string(),
                    reason: "must be nonnegative",
                });
            }
            self.steps = (horizon / self.dt).round() as usize;
        }

        let (fx0, fy0, amp0, per0) = match self.forcing {
            ForcingSpec::SteadyGradient { fx, fy } => (fx, fy, 0.0, 1.0),
            ForcingSpec::TimePeriodic { amplitude, period } => (0.0, 0.0, amplitude, period),
            ForcingSpec::Zero => (0.0, 0.0, 0.0, 1.0),
        };
        let forcing_kind = get("forcing").unwrap_or(match self.forcing {
            ForcingSpec::Zero => "zero",
            ForcingSpec::SteadyGradient { .. } => "steady-gradient",
            ForcingSpec::TimePeriodic { .. } => "time-periodic",
        });
        self.forcing = match forcing_kind {
            "zero" => ForcingSpec::Zero,
            "steady-gradient" | "constant" => ForcingSpec::SteadyGradient {
                fx: getf("forcing_fx", fx0)?,
                fy: getf("forcing_fy", fy0)?,
            },
            "time-periodic" => ForcingSpec::TimePeriodic {
                amplitude: getf("forcing_amplitude", amp0)?,
                period: getf("forcing_period", per0)?,
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "forcing".into(),
                    value: other.into(),
                })
            }
        };

        let (mean0, amp0, modes0, radius0, width0) = match &self.init {
            InitialPhase::ConstantNoise { mean, amplitude } => (*mean, *amplitude, 1, 0.25, 0.05),
            InitialPhase::Stripe { mean, amplitude, modes } => (*mean, *amplitude, *modes, 0.25, 0.05),
            InitialPhase::Bubble {
                mean,
                amplitude,
                radius,
                width,
            } => (*mean, *amplitude, 1, *radius, *width),
            InitialPhase::Cosine { mean, amplitude } => (*mean, *amplitude, 1, 0.25, 0.05),
            InitialPhase::Bump { mean, amplitude, width } => (*mean, *amplitude, 1, 0.25, *width),
            InitialPhase::TanhStripe { amplitude, width } => (0.0, *amplitude, 1, 0.25, *width),
            InitialPhase::File(_) => (0.0, 0.0, 1, 0.25, 0.05),
        };
        let init_kind = get("init").unwrap_or(match &self.init {
            InitialPhase::ConstantNoise { .. } => "constant-noise",
            InitialPhase::Stripe { .. } => "stripe",
            InitialPhase::Bubble { .. } => "bubble",
            InitialPhase::Cosine { .. } => "cosine",
            InitialPhase::Bump { .. } => "bump",
            InitialPhase::TanhStripe { .. } => "tanh-stripe",
            InitialPhase::File(_) => "file",
        });
        let mean = getf("init_mean", mean0)?;
        let amplitude = getf("init_amplitude", amp0)?;
        self.init = match init_kind {
            "constant-noise" | "constant" => InitialPhase::ConstantNoise { mean, amplitude },
            "stripe" => InitialPhase::Stripe {
                mean,
                amplitude,
                modes: get("init_modes").map(|v| num("init_modes", v)).transpose()?.unwrap_or(modes0),
            },
            "bubble" => InitialPhase::Bubble {
                mean,
                amplitude,
                radius: getf("init_radius", radius0)?,
                width: getf("init_width", width0)?,
            },
            "cosine" => InitialPhase::Cosine { mean, amplitude },
            "tanh-stripe" => InitialPhase::TanhStripe {
                amplitude,
                width: getf("init_width", width0)?,
            },
            "bump" => InitialPhase::Bump {
                mean,
                amplitude,
                width: getf("init_width", width0)?,
            },
            "file" => match get("init_file") {
                Some(p) => InitialPhase::File(PathBuf::from(p)),
                None => match &self.init {
                    InitialPhase::File(p) => InitialPhase::File(p.clone()),
                    _ => {
                        return Err(ConfigError::Invalid {
                            key: "init_file",
                            value: String::new(),
                            reason: "required when init = file",
                        })
                    }
                },
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "init".into(),
                    value: other.into(),
                })
            }
        };

        let vamp0 = match self.velocity {
            VelocityProfile::Swirl { amplitude } => amplitude,
            VelocityProfile::Zero => 0.0,
        };
        let vkind = get("velocity").unwrap_or(match self.velocity {
            VelocityProfile::Zero => "zero",
            VelocityProfile::Swirl { .. } => "swirl",
        });
        self.velocity = match vkind {
            "zero" => VelocityProfile::Zero,
            "swirl" => VelocityProfile::Swirl {
                amplitude: getf("velocity_amplitude", vamp0)?,
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "velocity".into(),
                    value: other.into(),
                })
            }
        };
        Ok(())
    }

    /// Checks that only need the config itself; kernel and potential margins
    /// are checked at setup.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |key: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    key,
                    value: v.to_string(),
                    reason: "must be positive and finite",
                })
            }
        };
        pos("lx", self.lx)?;
        pos("ly", self.ly)?;
        pos("theta", self.theta)?;
        pos("theta_c", self.theta_c)?;
        pos("kernel_width", self.kernel_width)?;
        pos("kernel_mass", self.kernel_mass)?;
        pos("nu1", self.nu1)?;
        pos("nu2", self.nu2)?;
        pos("dt", self.dt)?;
        if self.nu2 < self.nu1 {
            return Err(ConfigError::Invalid {
                key: "nu2",
                value: self.nu2.to_string(),
                reason: "must be at least nu1",
            });
        }
        if self.nx < 8 || self.ny < 8 {
            return Err(ConfigError::Invalid {
                key: "nx",
                value: format!("{}x{}", self.nx, self.ny),
                reason: "at least 8 cells per axis",
            });
        }
        if !(self.m0 >= 0.0 && self.m0 < 1.0) {
            return Err(ConfigError::Invalid {
                key: "m0",
                value: self.m0.to_string(),
                reason: "must lie in [0, 1)",
            });
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= self.eps_max) {
            return Err(ConfigError::EpsilonRange {
                epsilon: self.epsilon,
                eps_max: self.eps_max,
                reason: "outside the validated range".into(),
            });
        }
        for &e in &self.eps_grid {
            if !(e > 0.0 && e <= self.eps_max) {
                return Err(ConfigError::EpsilonRange {
                    epsilon: e,
                    eps_max: self.eps_max,
                    reason: "eps_grid entry outside the validated range".into(),
                });
            }
        }
        if let ForcingSpec::TimePeriodic { period, .. } = self.forcing {
            pos("forcing_period", period)?;
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:e}");
        kv("nx", self.nx.to_string());
        kv("ny", self.ny.to_string());
        kv("lx", f(self.lx));
        kv("ly", f(self.ly));
        kv("theta", f(self.theta));
        kv("theta_c", f(self.theta_c));
        kv("q", self.q.to_string());
        kv("epsilon", f(self.epsilon));
        kv("eps_max", f(self.eps_max));
        kv(
            "eps_grid",
            self.eps_grid.iter().map(|e| f(*e)).collect::<Vec<_>>().join(","),
        );
        kv("kernel", self.kernel.name().into());
        kv("kernel_width", f(self.kernel_width));
        kv("kernel_mass", f(self.kernel_mass));
        kv("nu1", f(self.nu1));
        kv("nu2", f(self.nu2));
        match &self.forcing {
            ForcingSpec::Zero => kv("forcing", "zero".into()),
            ForcingSpec::SteadyGradient { fx, fy } => {
                kv("forcing", "steady-gradient".into());
                kv("forcing_fx", f(*fx));
                kv("forcing_fy", f(*fy));
            }
            ForcingSpec::TimePeriodic { amplitude, period } => {
                kv("forcing", "time-periodic".into());
                kv("forcing_amplitude", f(*amplitude));
                kv("forcing_period", f(*period));
            }
        }
        match &self.init {
            InitialPhase::ConstantNoise { mean, amplitude } => {
                kv("init", "constant-noise".into());
                kv("init_mean", f(*mean));
                kv("init_amplitude", f(*amplitude));
            }
            InitialPhase::Stripe { mean, amplitude, modes } => {
                kv("init", "stripe".into());
                kv("init_mean", f(*mean));
                kv("init_amplitude", f(*amplitude));
                kv("init_modes", modes.to_string());
            }
            InitialPhase::Bubble {
                mean,
                amplitude,
                radius,
                width,
            } => {
                kv("init", "bubble".into());
                kv("init_mean", f(*mean));
                kv("init_amplitude", f(*amplitude));
                kv("init_radius", f(*radius));
                kv("init_width", f(*width));
            }
            InitialPhase::Cosine { mean, amplitude } => {
                kv("init", "cosine".into());
                kv("init_mean", f(*mean));
                kv("init_amplitude", f(*amplitude));
            }
            InitialPhase::TanhStripe { amplitude, width } => {
                kv("init", "tanh-stripe".into());
                kv("init_amplitude", f(*amplitude));
                kv("init_width", f(*width));
            }
            InitialPhase::Bump { mean, amplitude, width } => {
                kv("init", "bump".into());
                kv("init_mean", f(*mean));
                kv("init_amplitude", f(*amplitude));
                kv("init_width", f(*width));
            }
            InitialPhase::File(p) => {
                kv("init", "file".into());
                kv("init_file", p.display().to_string());
            }
        }
        match self.velocity {
            VelocityProfile::Zero => kv("velocity", "zero".into()),
            VelocityProfile::Swirl { amplitude } => {
                kv("velocity", "swirl".into());
                kv("velocity_amplitude", f(amplitude));
            }
        }
        kv("m0", f(self.m0));
        kv("dt", f(self.dt));
        kv("steps", self.steps.to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("scheme", self.scheme.name().into());
        kv("newton_tol", f(self.newton_tol));
        kv("max_newton", self.max_newton.to_string());
        kv("linear_tol", f(self.linear_tol));
        kv("momentum_tol", f(self.momentum_tol));
        kv("div_tol", f(self.div_tol));
        kv("seed", self.seed.to_string());
        s
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            let back = RunConfig::default().apply_text(&c.to_text()).unwrap();
            assert_eq!(c, back, "{p}");
        }
    }

    #[test]
    fn overrides_and_errors() {
        let c = RunConfig::default()
            .apply_text("preset = bubble-swirl\n nx = 16 # coarse\ninit_radius = 0.3\n dt=0.01\nhorizon = 1")
            .unwrap();
        assert_eq!(c.nx, 16);
        assert_eq!(c.steps, 100);
        assert!(matches!(c.init, InitialPhase::Bubble { radius, .. } if radius == 0.3));
        assert_eq!(RunConfig::default().apply_text("bogus = 1").unwrap_err().code(), "unknown-key");
        assert_eq!(RunConfig::default().apply_text("nx = x").unwrap_err().code(), "bad-value");
        assert_eq!(RunConfig::default().apply_text("nx").unwrap_err().code(), "syntax");
        let bad_eps = RunConfig {
            epsilon: 0.5,
            ..RunConfig::default()
        };
        assert_eq!(bad_eps.validate().unwrap_err().code(), "epsilon-range");
    }
}
