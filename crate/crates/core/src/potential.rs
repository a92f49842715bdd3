//! The logarithmic double-well potential and its polynomial regularization.
//!
//! The singular potential is split as `F = F₁ + F₂` with
//!
//! ```text
//! F₁(s) = (θ/2)((1+s)log(1+s) + (1−s)log(1−s)),   F₂(s) = −(θ_c/2)s²,
//! ```
//!
//! defined on `(−1, 1)`. The regularized `F₁ε` coincides with `F₁` on
//! `[−1+ε, 1−ε]` and continues outside with the degree `2+2q` Taylor
//! polynomial of `F₁` about `±(1−ε)`, i.e. the `(2+2q)`-th derivative is
//! frozen at its value on the join. `F₂` is already a quadratic on all of ℝ
//! and is used unchanged as its own extension.

use thiserror::Error;

/// Largest supported regularization order; `(2+2q)!` stays far from overflow.
pub const MAX_ORDER_Q: u32 = 8;

/// Default upper bound on ε for the logarithmic family.
pub const DEFAULT_EPS_MAX: f64 = 0.2;

/// Slack used when comparing two floating-point evaluations that are equal in
/// exact arithmetic on part of the domain.
const ROUNDING_SLACK: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("singular potential evaluated at or beyond ±1 (s = {s})")]
    Domain { s: f64 },
    #[error("invalid potential parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("regularization parameter ε = {epsilon} outside (0, {eps_max}]")]
    EpsilonOutOfRange { epsilon: f64, eps_max: f64 },
    #[error("premise {premise} of the regularization lemmas fails at s = {s} (value {value:e})")]
    PremiseViolated {
        premise: &'static str,
        s: f64,
        value: f64,
    },
    #[error("convexity margin c0 = α + β + min F₂'' = {c0} is not positive (need β > θ_c − θ = {required})")]
    ConvexityMargin { c0: f64, required: f64 },
    #[error("derivative order {k} exceeds 2+2q = {max}")]
    OrderTooHigh { k: usize, max: usize },
}

/// Parameters and derived constants of the (θ, θ_c) logarithmic family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub theta: f64,
    pub theta_c: f64,
    pub q: u32,
    /// Regularization parameter; `0.0` marks the unregularized singular mode.
    pub epsilon: f64,
    pub eps_max: f64,
    /// Lower bound of `F₁''` on (−1, 1).
    pub alpha: f64,
    /// Lower bound of the kernel mass `a(x)`.
    pub beta: f64,
    /// `α + β + min F₂''`.
    pub c0: f64,
    /// `α + min F₂''`.
    pub alpha_star: f64,
    /// Root of `F'` in (−1, 1).
    pub s0: f64,
}

impl PotentialSpec {
    pub fn new(theta: f64, theta_c: f64, q: u32, epsilon: f64, beta: f64) -> Result<Self, PotentialError> {
        Self::with_eps_max(theta, theta_c, q, epsilon, beta, DEFAULT_EPS_MAX)
    }

    pub fn with_eps_max(
        theta: f64,
        theta_c: f64,
        q: u32,
        epsilon: f64,
        beta: f64,
        eps_max: f64,
    ) -> Result<Self, PotentialError> {
        if !(eps_max > 0.0 && eps_max < 1.0) {
            return Err(PotentialError::InvalidParameter {
                name: "eps_max",
                value: eps_max,
                reason: "must lie in (0, 1)",
            });
        }
        if !(epsilon > 0.0 && epsilon <= eps_max) {
            return Err(PotentialError::EpsilonOutOfRange { epsilon, eps_max });
        }
        let mut spec = Self::singular(theta, theta_c, q, beta)?;
        spec.epsilon = epsilon;
        spec.eps_max = eps_max;
        Ok(spec)
    }

    /// Spec for the true singular potential (ε = 0 mode).
    pub fn singular(theta: f64, theta_c: f64, q: u32, beta: f64) -> Result<Self, PotentialError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(PotentialError::InvalidParameter {
                name: "theta",
                value: theta,
                reason: "must be positive",
            });
        }
        if !(theta_c > 0.0 && theta_c.is_finite()) {
            return Err(PotentialError::InvalidParameter {
                name: "theta_c",
                value: theta_c,
                reason: "must be positive",
            });
        }
        if q == 0 || q > MAX_ORDER_Q {
            return Err(PotentialError::InvalidParameter {
                name: "q",
                value: q as f64,
                reason: "must be an integer in 1..=8",
            });
        }
        if !beta.is_finite() {
            return Err(PotentialError::InvalidParameter {
                name: "beta",
                value: beta,
                reason: "must be finite",
            });
        }
        // F₁'' = θ/(1−s²) ≥ θ, F₂'' ≡ −θ_c.
        let alpha = theta;
        let alpha_star = alpha - theta_c;
        let c0 = alpha + beta - theta_c;
        if !(c0 > 0.0) {
            return Err(PotentialError::ConvexityMargin {
                c0,
                required: theta_c - theta,
            });
        }
        Ok(Self {
            theta,
            theta_c,
            q,
            epsilon: 0.0,
            eps_max: DEFAULT_EPS_MAX,
            alpha,
            beta,
            c0,
            alpha_star,
            // F' is odd for this family, so s = 0 is always a root.
            s0: 0.0,
        })
    }

    /// `2 + 2q`.
    pub fn order(&self) -> usize {
        2 + 2 * self.q as usize
    }

    pub fn is_singular_mode(&self) -> bool {
        self.epsilon == 0.0
    }

    /// `F₁^{(k)}(s)` for `0 ≤ k ≤ 2+2q`, closed form.
    pub fn f1_derivative(&self, k: usize, s: f64) -> Result<f64, PotentialError> {
        if k > self.order() {
            return Err(PotentialError::OrderTooHigh { k, max: self.order() });
        }
        f1_derivative(self.theta, k, s)
    }

    pub fn f(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(f1_derivative(self.theta, 0, s)? - 0.5 * self.theta_c * s * s)
    }

    pub fn f_prime(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(f1_derivative(self.theta, 1, s)? - self.theta_c * s)
    }

    pub fn f_second(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(f1_derivative(self.theta, 2, s)? - self.theta_c)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Closed-form derivatives of `F₁`, any order.
pub fn f1_derivative(theta: f64, k: usize, s: f64) -> Result<f64, PotentialError> {
    if !(s.abs() < 1.0) {
        return Err(PotentialError::Domain { s });
    }
    let v = match k {
        0 => 0.5 * theta * ((1.0 + s) * s.ln_1p() + (1.0 - s) * (-s).ln_1p()),
        1 => 0.5 * theta * (s.ln_1p() - (-s).ln_1p()),
        _ => {
            let p = (k - 1) as i32;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * theta
                * factorial(k - 2)
                * (sign / (1.0 + s).powi(p) + 1.0 / (1.0 - s).powi(p))
        }
    };
    Ok(v)
}

/// Common interface of the singular and the regularized potential, as used
/// by the steppers and diagnostics.
pub trait DoubleWell: Send + Sync + std::fmt::Debug {
    fn spec(&self) -> &PotentialSpec;
    fn value(&self, s: f64) -> Result<f64, PotentialError>;
    fn first(&self, s: f64) -> Result<f64, PotentialError>;
    fn second(&self, s: f64) -> Result<f64, PotentialError>;

    fn is_singular(&self) -> bool {
        false
    }

    /// `α_*`, the curvature of the quadratic split off the potential.
    fn alpha_star(&self) -> f64 {
        self.spec().alpha_star
    }

    /// Convex part `G = F − (α_*/2)s²`.
    fn convex_value(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.value(s)? - 0.5 * self.alpha_star() * s * s)
    }
    fn convex_first(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.first(s)? - self.alpha_star() * s)
    }
    fn convex_second(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.second(s)? - self.alpha_star())
    }
}

/// The unregularized logarithmic potential; errors outside (−1, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPotential {
    spec: PotentialSpec,
}

impl SingularPotential {
    pub fn new(spec: PotentialSpec) -> Self {
        Self { spec }
    }
}

impl DoubleWell for SingularPotential {
    fn spec(&self) -> &PotentialSpec {
        &self.spec
    }
    fn value(&self, s: f64) -> Result<f64, PotentialError> {
        self.spec.f(s)
    }
    fn first(&self, s: f64) -> Result<f64, PotentialError> {
        self.spec.f_prime(s)
    }
    fn second(&self, s: f64) -> Result<f64, PotentialError> {
        self.spec.f_second(s)
    }
    fn is_singular(&self) -> bool {
        true
    }
}

/// `F_ε = F₁ε + F₂`, smooth on ℝ with polynomial growth of order `2+2q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedPotential {
    spec: PotentialSpec,
    join: f64,
    /// `F₁^{(k)}(1−ε)`, k = 0..=2+2q.
    right: Vec<f64>,
    /// `F₁^{(k)}(−1+ε)`.
    left: Vec<f64>,
    inv_fact: Vec<f64>,
}

/// Builds the regularized family after checking, on both boundary strips of
/// width ε, the sign and monotonicity premises the coercivity, convexity and
/// comparison bounds rest on.
pub fn build_regularized(spec: &PotentialSpec) -> Result<RegularizedPotential, PotentialError> {
    if !(spec.epsilon > 0.0 && spec.epsilon <= spec.eps_max) {
        return Err(PotentialError::EpsilonOutOfRange {
            epsilon: spec.epsilon,
            eps_max: spec.eps_max,
        });
    }
    if !(spec.c0 > 0.0) {
        return Err(PotentialError::ConvexityMargin {
            c0: spec.c0,
            required: spec.theta_c - spec.theta,
        });
    }
    check_premises(spec, spec.epsilon)?;
    let n = spec.order();
    let join = 1.0 - spec.epsilon;
    let right = (0..=n)
        .map(|k| f1_derivative(spec.theta, k, join))
        .collect::<Result<Vec<_>, _>>()?;
    let left = (0..=n)
        .map(|k| f1_derivative(spec.theta, k, -join))
        .collect::<Result<Vec<_>, _>>()?;
    let inv_fact = (0..=n).map(|k| 1.0 / factorial(k)).collect();
    Ok(RegularizedPotential {
        spec: *spec,
        join,
        right,
        left,
        inv_fact,
    })
}

/// Samples the strip premises: every derivative nonnegative near +1, the
/// alternating sign pattern near −1, positivity and monotonicity of the top
/// derivative on both strips.
fn check_premises(spec: &PotentialSpec, width: f64) -> Result<(), PotentialError> {
    const SAMPLES: usize = 256;
    let n = spec.order();
    let th = spec.theta;
    let mut prev_right = f64::NEG_INFINITY;
    let mut prev_left = f64::NEG_INFINITY;
    for i in 0..SAMPLES {
        // from the join towards the singularity, never touching ±1
        let t = width * (i as f64) / SAMPLES as f64;
        let s = 1.0 - width + t;
        for k in 0..=n {
            let r = f1_derivative(th, k, s)?;
            if r < 0.0 {
                return Err(PotentialError::PremiseViolated {
                    premise: "(A4) nonnegative derivatives on [1-eps, 1)",
                    s,
                    value: r,
                });
            }
            if k >= 1 {
                let l = f1_derivative(th, k, -s)?;
                let ok = if k % 2 == 0 { l >= 0.0 } else { l <= 0.0 };
                if !ok {
                    return Err(PotentialError::PremiseViolated {
                        premise: "(A4) alternating signs on (-1, -1+eps]",
                        s: -s,
                        value: l,
                    });
                }
            }
        }
        let top_r = f1_derivative(th, n, s)?;
        let top_l = f1_derivative(th, n, -s)?;
        if !(top_r > 0.0 && top_l > 0.0) {
            return Err(PotentialError::PremiseViolated {
                premise: "(A3) positive top derivative near ±1",
                s,
                value: top_r.min(top_l),
            });
        }
        if top_r < prev_right || top_l < prev_left {
            return Err(PotentialError::PremiseViolated {
                premise: "(A5) monotone top derivative near ±1",
                s,
                value: top_r,
            });
        }
        prev_right = top_r;
        prev_left = top_l;
    }
    Ok(())
}

impl RegularizedPotential {
    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    /// `F₁ε^{(k)}(s)`, any real `s`, `0 ≤ k ≤ 2+2q`.
    pub fn f1_eps_derivative(&self, k: usize, s: f64) -> f64 {
        let n = self.spec.order();
        debug_assert!(k <= n);
        if s.abs() <= self.join {
            // interior: the closed form itself
            return f1_derivative(self.spec.theta, k, s).expect("|s| < 1 inside the join");
        }
        let (coef, d) = if s > 0.0 {
            (&self.right, s - self.join)
        } else {
            (&self.left, s + self.join)
        };
        let mut acc = 0.0;
        for t in (0..=(n - k)).rev() {
            acc = acc * d + coef[k + t] * self.inv_fact[t];
        }
        acc
    }

    pub fn f1_eps(&self, s: f64) -> f64 {
        self.f1_eps_derivative(0, s)
    }

    /// `F_ε^{(k)}`, the full regularized potential.
    pub fn derivative(&self, k: usize, s: f64) -> f64 {
        let f2 = match k {
            0 => -0.5 * self.spec.theta_c * s * s,
            1 => -self.spec.theta_c * s,
            2 => -self.spec.theta_c,
            _ => 0.0,
        };
        self.f1_eps_derivative(k, s) + f2
    }
}

impl DoubleWell for RegularizedPotential {
    fn spec(&self) -> &PotentialSpec {
        &self.spec
    }
    fn value(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.derivative(0, s))
    }
    fn first(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.derivative(1, s))
    }
    fn second(&self, s: f64) -> Result<f64, PotentialError> {
        Ok(self.derivative(2, s))
    }
}

/// Either potential, chosen at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialModel {
    Singular(SingularPotential),
    Regularized(RegularizedPotential),
}

impl PotentialModel {
    /// ε = 0 yields the singular model, anything else the regularized one.
    pub fn from_spec(spec: &PotentialSpec) -> Result<Self, PotentialError> {
        if spec.is_singular_mode() {
            Ok(Self::Singular(SingularPotential::new(*spec)))
        } else {
            Ok(Self::Regularized(build_regularized(spec)?))
        }
    }

    fn inner(&self) -> &dyn DoubleWell {
        match self {
            Self::Singular(p) => p,
            Self::Regularized(p) => p,
        }
    }
}

impl DoubleWell for PotentialModel {
    fn spec(&self) -> &PotentialSpec {
        self.inner().spec()
    }
    fn value(&self, s: f64) -> Result<f64, PotentialError> {
        self.inner().value(s)
    }
    fn first(&self, s: f64) -> Result<f64, PotentialError> {
        self.inner().first(s)
    }
    fn second(&self, s: f64) -> Result<f64, PotentialError> {
        self.inner().second(s)
    }
    fn is_singular(&self) -> bool {
        self.inner().is_singular()
    }
}

/// Convex/concave split `F_ε = G_ε + (α_*/2)s²` with `G_ε'' ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ConvexSplit<'a> {
    potential: &'a RegularizedPotential,
    pub alpha_star: f64,
}

pub fn convex_split(potential: &RegularizedPotential) -> ConvexSplit<'_> {
    ConvexSplit {
        potential,
        alpha_star: potential.spec.alpha_star,
    }
}

impl ConvexSplit<'_> {
    pub fn g(&self, s: f64) -> f64 {
        self.potential.derivative(0, s) - 0.5 * self.alpha_star * s * s
    }
    pub fn g_prime(&self, s: f64) -> f64 {
        self.potential.derivative(1, s) - self.alpha_star * s
    }
    pub fn g_second(&self, s: f64) -> f64 {
        self.potential.derivative(2, s) - self.alpha_star
    }
    pub fn quadratic(&self, s: f64) -> f64 {
        0.5 * self.alpha_star * s * s
    }
}

/// Constants of the coercivity bound `F_ε(s) ≥ c_q|s|^{2+2q} − d_q`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CoercivityConstants {
    pub c_q: f64,
    pub d_q: f64,
}

/// `c₁ = min F₁^{(2+2q)}` over the strips of width `eps_max`, attained at
/// `±(1 − eps_max)` since the top derivative grows towards ±1.
pub fn boundary_top_derivative_min(spec: &PotentialSpec) -> f64 {
    let n = spec.order();
    let s = 1.0 - spec.eps_max;
    f1_derivative(spec.theta, n, s)
        .unwrap()
        .min(f1_derivative(spec.theta, n, -s).unwrap())
}

/// `c_q = c₁ / (2·(2+2q)!)`.
pub fn coercivity_c_q(spec: &PotentialSpec) -> f64 {
    boundary_top_derivative_min(spec) / (2.0 * factorial(spec.order()))
}

/// Margin added on top of the scanned maximum when exhibiting `d_q`.
pub const D_Q_MARGIN: f64 = 1e-6;

/// `max_s (c_q|s|^{2+2q} − F_ε(s))` by a coarse scan refined with golden
/// section search around the best scan point, plus [`D_Q_MARGIN`].
pub fn scan_d_q(potential: &RegularizedPotential, c_q: f64) -> f64 {
    let n = potential.spec.order();
    let nf = n as f64;
    let gap = |s: f64| c_q * s.abs().powi(n as i32) - potential.derivative(0, s);
    // Past this radius the frozen top derivative dominates c_q|s|^n.
    let radius = 4.0 / (1.0 - 0.5f64.powf(1.0 / nf));
    const SCAN: usize = 200_000;
    let step = 2.0 * radius / SCAN as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=SCAN {
        let s = -radius + i as f64 * step;
        let v = gap(s);
        if v > best.0 {
            best = (v, s);
        }
    }
    // golden section on [s* − h, s* + h]
    let (mut a, mut b) = (best.1 - step, best.1 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..100 {
        if gap(c) > gap(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    let refined = gap(0.5 * (a + b)).max(best.0);
    refined.max(0.0) + D_Q_MARGIN
}

/// One set of `(c_q, d_q)` valid for every ε in `eps_grid`.
pub fn coercivity_constants(
    theta: f64,
    theta_c: f64,
    q: u32,
    beta: f64,
    eps_grid: &[f64],
) -> Result<CoercivityConstants, PotentialError> {
    let mut c_q = f64::NAN;
    let mut d_q: f64 = 0.0;
    for &eps in eps_grid {
        let spec = PotentialSpec::new(theta, theta_c, q, eps, beta)?;
        let pot = build_regularized(&spec)?;
        c_q = coercivity_c_q(&spec);
        d_q = d_q.max(scan_d_q(&pot, c_q));
    }
    Ok(CoercivityConstants { c_q, d_q })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LemmaCheck {
    /// `F_ε(s) ≥ c_q|s|^{2+2q} − d_q`.
    Coercivity,
    /// `F_ε''(s) + β ≥ c0`.
    ConvexityShift,
    /// `F₁ε ≤ F₁` on (−1, 1).
    ValueComparison,
    /// `|F₁ε'| ≤ |F₁'|` on (−1, 1).
    SlopeComparison,
    /// `F₁ε'' ≥ α`.
    CurvatureLowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LemmaViolation {
    pub check: LemmaCheck,
    pub s: f64,
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LemmaReport {
    pub epsilon: f64,
    pub q: u32,
    pub c_q: f64,
    pub d_q: f64,
    pub samples: usize,
    pub violations: Vec<LemmaViolation>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Tolerance granted to the convexity-shift bound.
pub const CONVEXITY_SHIFT_TOL: f64 = 1e-12;

/// Samples every bound with `samples` points per check: `[−3, 3]` for the
/// bounds stated on ℝ, `(−1, 1)` for the comparison bounds.
pub fn verify_potential_lemmas(
    potential: &RegularizedPotential,
    samples: usize,
    constants: Option<CoercivityConstants>,
) -> LemmaReport {
    let spec = potential.spec;
    let n = spec.order();
    let constants = constants.unwrap_or_else(|| {
        let c_q = coercivity_c_q(&spec);
        CoercivityConstants {
            c_q,
            d_q: scan_d_q(potential, c_q),
        }
    });
    let mut violations = Vec::new();
    let mut flag = |check, s, lhs: f64, rhs: f64| {
        violations.push(LemmaViolation {
            check,
            s,
            epsilon: spec.epsilon,
            lhs,
            rhs,
        })
    };
    // irrational offset keeps the samples off the d_q scan lattice
    let offset = 0.5 * (5f64.sqrt() - 1.0);
    const REACH: f64 = 3.0;
    for i in 0..samples {
        let s = -REACH + 2.0 * REACH * ((i as f64 + offset) / samples as f64);
        let fe = potential.derivative(0, s);
        let bound = constants.c_q * s.abs().powi(n as i32) - constants.d_q;
        if !(fe >= bound) {
            flag(LemmaCheck::Coercivity, s, fe, bound);
        }
        let f1e2 = potential.f1_eps_derivative(2, s);
        if !(f1e2 >= spec.alpha * (1.0 - ROUNDING_SLACK)) {
            flag(LemmaCheck::CurvatureLowerBound, s, f1e2, spec.alpha);
        }
        let shifted = potential.derivative(2, s) + spec.beta;
        if !(shifted >= spec.c0 - CONVEXITY_SHIFT_TOL) {
            flag(LemmaCheck::ConvexityShift, s, shifted, spec.c0);
        }
    }
    for i in 0..samples {
        let s = -1.0 + 2.0 * ((i as f64 + offset) / samples as f64);
        let f1 = f1_derivative(spec.theta, 0, s).expect("inside (-1,1)");
        let f1e = potential.f1_eps(s);
        if !(f1e <= f1 + ROUNDING_SLACK * f1.abs().max(1.0)) {
            flag(LemmaCheck::ValueComparison, s, f1e, f1);
        }
        let d1 = f1_derivative(spec.theta, 1, s).expect("inside (-1,1)").abs();
        let d1e = potential.f1_eps_derivative(1, s).abs();
        if !(d1e <= d1 + ROUNDING_SLACK * d1.max(1.0)) {
            flag(LemmaCheck::SlopeComparison, s, d1e, d1);
        }
    }
    LemmaReport {
        epsilon: spec.epsilon,
        q: spec.q,
        c_q: constants.c_q,
        d_q: constants.d_q,
        samples,
        violations,
    }
}
