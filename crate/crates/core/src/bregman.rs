//! Bregman majorization and the solvers built on it.
//!
//! Majorizing `f` by `f(x) + B_φ(x‖x_n)` for a convex generator `φ` recovers
//! three classical first-order methods:
//!
//! * `φ = ‖x‖²/(2α) − f₀` gives the proximal gradient method on `f₀ + h`;
//! * `φ = ψ/α − f` with a 1-strongly convex `ψ` gives mirror descent;
//! * `ψ` the negative entropy on the simplex gives exponentiated gradient.

use std::sync::Arc;

use serde::Serialize;

use crate::engine::{Objective, Surrogate, SurrogateFactory, SurrogateStep};
use crate::error::{MmError, Result};
use crate::linalg::{ensure_finite_vector, RealVector};
use crate::projection::ProjectionOperator;

/// Divergences this far below zero are treated as rounding noise.
const DIVERGENCE_FLOOR: f64 = -1e-12;

/// A differentiable convex generator `φ`.
pub trait BregmanGeometry: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: &RealVector) -> f64;

    fn gradient(&self, x: &RealVector) -> RealVector;

    /// `∇φ*`, the inverse of `∇φ`, when available in closed form.
    fn conjugate_gradient(&self, _y: &RealVector) -> Option<RealVector> {
        None
    }

    fn strong_convexity(&self) -> f64;

    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Membership in the interior of `dom φ`.
    fn in_domain(&self, x: &RealVector) -> bool {
        x.iter().all(|v| v.is_finite())
    }
}

/// `φ(x) = (s/2)‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euclidean {
    pub scale: f64,
}

impl Euclidean {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(MmError::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn unit() -> Self {
        Self { scale: 1.0 }
    }
}

impl BregmanGeometry for Euclidean {
    fn name(&self) -> &str {
        "euclidean"
    }

    fn value(&self, x: &RealVector) -> f64 {
        0.5 * self.scale * x.norm_squared()
    }

    fn gradient(&self, x: &RealVector) -> RealVector {
        x * self.scale
    }

    fn conjugate_gradient(&self, y: &RealVector) -> Option<RealVector> {
        Some(y / self.scale)
    }

    fn strong_convexity(&self) -> f64 {
        self.scale
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.scale)
    }
}

/// `ψ(x) = s·Σ (x_i ln x_i − x_i)` on the positive orthant. With `s = 1` this
/// is 1-strongly convex in the ℓ₁ norm on the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeEntropy {
    pub scale: f64,
}

impl NegativeEntropy {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(MmError::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn unit() -> Self {
        Self { scale: 1.0 }
    }
}

impl BregmanGeometry for NegativeEntropy {
    fn name(&self) -> &str {
        "negative-entropy"
    }

    fn value(&self, x: &RealVector) -> f64 {
        self.scale * x.iter().map(|&v| v * v.ln() - v).sum::<f64>()
    }

    fn gradient(&self, x: &RealVector) -> RealVector {
        x.map(|v| self.scale * v.ln())
    }

    fn conjugate_gradient(&self, y: &RealVector) -> Option<RealVector> {
        Some(y.map(|v| (v / self.scale).exp()))
    }

    fn strong_convexity(&self) -> f64 {
        self.scale
    }

    fn in_domain(&self, x: &RealVector) -> bool {
        x.iter().all(|&v| v > 0.0 && v.is_finite())
    }
}

/// `φ(x) = ‖x‖²/(2α) − f₀(x)`, the generator that turns Bregman majorization
/// into the proximal gradient method.
pub struct ProxGradGeometry {
    smooth: Arc<dyn Objective>,
    alpha: f64,
    smooth_l: f64,
}

impl ProxGradGeometry {
    pub fn new(smooth: Arc<dyn Objective>, alpha: f64) -> Result<Self> {
        let smooth_l = smooth
            .smoothness()
            .ok_or_else(|| MmError::Unsupported("smooth part needs a smoothness constant".into()))?;
        validate_step(alpha, smooth_l, false)?;
        Ok(Self { smooth, alpha, smooth_l })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn smooth_gradient(&self, x: &RealVector) -> RealVector {
        self.smooth
            .gradient(x)
            .expect("smooth part of a composite problem has a gradient")
    }
}

impl BregmanGeometry for ProxGradGeometry {
    fn name(&self) -> &str {
        "prox-grad"
    }

    fn value(&self, x: &RealVector) -> f64 {
        x.norm_squared() / (2.0 * self.alpha) - self.smooth.value(x)
    }

    fn gradient(&self, x: &RealVector) -> RealVector {
        x / self.alpha - self.smooth_gradient(x)
    }

    fn strong_convexity(&self) -> f64 {
        1.0 / self.alpha - self.smooth_l
    }

    fn smoothness(&self) -> Option<f64> {
        Some(1.0 / self.alpha)
    }
}

/// `B_φ(x‖y) = φ(x) − φ(y) − ⟨∇φ(y), x − y⟩`.
pub fn bregman_divergence(geometry: &dyn BregmanGeometry, x: &RealVector, y: &RealVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MmError::Shape(format!("lengths {} and {}", x.len(), y.len())));
    }
    for (p, label) in [(x, "x"), (y, "y")] {
        if !geometry.in_domain(p) {
            return Err(MmError::Domain(format!("{label} is outside dom {}", geometry.name())));
        }
    }
    let d = geometry.value(x) - geometry.value(y) - geometry.gradient(y).dot(&(x - y));
    if d < DIVERGENCE_FLOOR * (1.0 + geometry.value(x).abs()) {
        return Err(MmError::Numerical(format!(
            "negative divergence {d:e}; generator is not convex"
        )));
    }
    Ok(d.max(0.0))
}

/// A function with an exact proximal map `prox_{t h}(v) = argmin h(x) + ‖x − v‖²/(2t)`.
pub trait ProxFunction: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: &RealVector) -> f64;

    fn prox(&self, v: &RealVector, step: f64) -> RealVector;

    /// `ρ` such that `h + (ρ/2)‖·‖²` is convex, for weakly convex `h`.
    fn weak_convexity(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ProxFunction for Zero {
    fn name(&self) -> &str {
        "zero"
    }

    fn value(&self, _x: &RealVector) -> f64 {
        0.0
    }

    fn prox(&self, v: &RealVector, _step: f64) -> RealVector {
        v.clone()
    }
}

/// `λ‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct L1Norm {
    pub lambda: f64,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl ProxFunction for L1Norm {
    fn name(&self) -> &str {
        "l1"
    }

    fn value(&self, x: &RealVector) -> f64 {
        self.lambda * x.lp_norm(1)
    }

    fn prox(&self, v: &RealVector, step: f64) -> RealVector {
        v.map(|vi| soft_threshold(vi, step * self.lambda))
    }
}

/// Minimax concave penalty, `(1/γ)`-weakly convex.
#[derive(Debug, Clone, Copy)]
pub struct Mcp {
    pub lambda: f64,
    pub gamma: f64,
}

impl ProxFunction for Mcp {
    fn name(&self) -> &str {
        "mcp"
    }

    fn value(&self, x: &RealVector) -> f64 {
        let (l, g) = (self.lambda, self.gamma);
        x.iter()
            .map(|t| {
                let a = t.abs();
                if a <= g * l {
                    l * a - a * a / (2.0 * g)
                } else {
                    0.5 * g * l * l
                }
            })
            .sum()
    }

    fn prox(&self, v: &RealVector, step: f64) -> RealVector {
        // firm thresholding; valid for step < γ
        let (l, g) = (self.lambda, self.gamma);
        v.map(|vi| {
            let a = vi.abs();
            if a <= step * l {
                0.0
            } else if a <= g * l {
                vi.signum() * (a - step * l) / (1.0 - step / g)
            } else {
                vi
            }
        })
    }

    fn weak_convexity(&self) -> Option<f64> {
        Some(1.0 / self.gamma)
    }
}

/// `f = f₀ + h` with `f₀` smooth (known `L`) and `h` prox-friendly.
pub struct CompositeProblem {
    pub smooth: Arc<dyn Objective>,
    pub nonsmooth: Arc<dyn ProxFunction>,
    smooth_l: f64,
}

impl CompositeProblem {
    pub fn new(smooth: Arc<dyn Objective>, nonsmooth: Arc<dyn ProxFunction>) -> Result<Self> {
        let smooth_l = smooth
            .smoothness()
            .ok_or_else(|| MmError::Unsupported("smooth part needs a smoothness constant".into()))?;
        Ok(Self {
            smooth,
            nonsmooth,
            smooth_l,
        })
    }

    pub fn smoothness(&self) -> f64 {
        self.smooth_l
    }

    pub(crate) fn smooth_gradient(&self, x: &RealVector) -> Result<RealVector> {
        self.smooth
            .gradient(x)
            .ok_or_else(|| MmError::Unsupported("smooth part has no gradient".into()))
    }
}

impl Objective for CompositeProblem {
    fn value(&self, x: &RealVector) -> f64 {
        self.smooth.value(x) + self.nonsmooth.value(x)
    }

    fn known_minimum(&self) -> Option<(RealVector, f64)> {
        None
    }
}

fn validate_step(alpha: f64, smoothness: f64, allow_extended_step: bool) -> Result<()> {
    let limit = if allow_extended_step { 2.0 / smoothness } else { 1.0 / smoothness };
    if !(alpha > 0.0 && alpha < limit) {
        return Err(MmError::InvalidParameter(format!(
            "step size {alpha} outside (0, {limit})"
        )));
    }
    Ok(())
}

/// `prox_{αh}(x_n − α∇f₀(x_n))`, the minimizer of the linearized surrogate.
///
/// With `allow_extended_step` the step may reach `2/L`; the surrogate then no
/// longer majorizes, but the engine's descent check still applies.
pub fn proximal_gradient_step(
    problem: &CompositeProblem,
    x_n: &RealVector,
    alpha: f64,
    allow_extended_step: bool,
) -> Result<RealVector> {
    validate_step(alpha, problem.smooth_l, allow_extended_step)?;
    if let Some(rho) = problem.nonsmooth.weak_convexity() {
        if rho * alpha >= 1.0 {
            return Err(MmError::InvalidParameter(format!(
                "weak convexity {rho} times step {alpha} must stay below 1"
            )));
        }
    }
    ensure_finite_vector(x_n, "x_n")?;
    prox_step(problem, x_n, alpha)
}

fn prox_step(problem: &CompositeProblem, x_n: &RealVector, alpha: f64) -> Result<RealVector> {
    let g = problem.smooth_gradient(x_n)?;
    Ok(problem.nonsmooth.prox(&(x_n - g * alpha), alpha))
}

/// Surrogate factory for the proximal gradient method.
pub struct ProxGradFactory {
    problem: Arc<CompositeProblem>,
    alpha: f64,
    allow_extended_step: bool,
}

impl ProxGradFactory {
    pub fn new(problem: Arc<CompositeProblem>, alpha: f64, allow_extended_step: bool) -> Result<Self> {
        validate_step(alpha, problem.smooth_l, allow_extended_step)?;
        Ok(Self {
            problem,
            alpha,
            allow_extended_step,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Strong convexity modulus `1/α` of every surrogate.
    pub fn surrogate_modulus(&self) -> f64 {
        1.0 / self.alpha
    }
}

struct ProxGradSurrogate<'a> {
    factory: &'a ProxGradFactory,
    anchor: RealVector,
    f0_anchor: f64,
    grad_anchor: RealVector,
}

impl Surrogate for ProxGradSurrogate<'_> {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        let d = x - &self.anchor;
        self.f0_anchor
            + self.grad_anchor.dot(&d)
            + self.factory.problem.nonsmooth.value(x)
            + d.norm_squared() / (2.0 * self.factory.alpha)
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        let p = &self.factory.problem;
        proximal_gradient_step(p, &self.anchor, self.factory.alpha, self.factory.allow_extended_step)
            .map(SurrogateStep::new)
    }

    fn minimize_with_proximal(&self, rho: f64) -> Result<SurrogateStep> {
        // 1/(2α) + ρ/2 = 1/(2α')
        let alpha = 1.0 / (1.0 / self.factory.alpha + rho);
        let v = &self.anchor - &self.grad_anchor * alpha;
        Ok(SurrogateStep::new(self.factory.problem.nonsmooth.prox(&v, alpha)))
    }

    fn gradient_at_anchor(&self) -> Option<RealVector> {
        Some(self.grad_anchor.clone())
    }
}

impl SurrogateFactory for ProxGradFactory {
    fn build<'a>(&'a self, anchor: &RealVector, _iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        let grad_anchor = self.problem.smooth_gradient(anchor)?;
        Ok(Box::new(ProxGradSurrogate {
            factory: self,
            anchor: anchor.clone(),
            f0_anchor: self.problem.smooth.value(anchor),
            grad_anchor,
        }))
    }
}

/// Non-Euclidean projection `P_C^d` onto the constraint set.
pub trait BregmanProjector: Send + Sync {
    fn project(&self, y: &RealVector) -> Result<RealVector>;

    fn contains(&self, _x: &RealVector) -> bool {
        true
    }
}

/// No constraint.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unconstrained;

impl BregmanProjector for Unconstrained {
    fn project(&self, y: &RealVector) -> Result<RealVector> {
        Ok(y.clone())
    }
}

/// KL projection onto the probability simplex.
#[derive(Debug, Clone, Copy, Default)]
pub struct KlSimplex;

impl BregmanProjector for KlSimplex {
    fn project(&self, y: &RealVector) -> Result<RealVector> {
        kl_project_simplex(y)
    }

    fn contains(&self, x: &RealVector) -> bool {
        x.iter().all(|&v| v >= 0.0) && (x.sum() - 1.0).abs() <= 1e-9
    }
}

/// Euclidean projection onto a convex set, for use with `ψ = ½‖·‖²`.
pub struct EuclideanSet(pub Arc<dyn ProjectionOperator>);

impl BregmanProjector for EuclideanSet {
    fn project(&self, y: &RealVector) -> Result<RealVector> {
        Ok(self.0.project(y))
    }

    fn contains(&self, x: &RealVector) -> bool {
        self.0.contains(x, 1e-9)
    }
}

/// `x_i = y_i / Σ_j y_j`.
pub fn kl_project_simplex(y: &RealVector) -> Result<RealVector> {
    if y.is_empty() {
        return Err(MmError::Shape("empty vector".into()));
    }
    if let Some(v) = y.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(MmError::Domain(format!(
            "KL projection needs strictly positive finite entries, found {v}"
        )));
    }
    Ok(y / y.sum())
}

/// The three stages of one mirror descent update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirrorStep {
    /// `∇ψ(x_n) − α∇f(x_n)` (gradient step, dual space).
    pub dual: Vec<f64>,
    /// `∇ψ*(dual)` (mirroring step).
    pub mirrored: Vec<f64>,
    /// `P_C^d(mirrored)` (projection step).
    pub point: Vec<f64>,
}

pub fn mirror_descent_step(
    f: &dyn Objective,
    psi: &dyn BregmanGeometry,
    projector: &dyn BregmanProjector,
    x_n: &RealVector,
    alpha: f64,
) -> Result<MirrorStep> {
    if psi.strong_convexity() < 1.0 {
        return Err(MmError::InvalidParameter(format!(
            "mirror map must be at least 1-strongly convex, got {}",
            psi.strong_convexity()
        )));
    }
    if let Some(l) = f.smoothness() {
        validate_step(alpha, l, false)?;
    } else if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MmError::InvalidParameter(format!("step size {alpha} must be positive")));
    }
    if !psi.in_domain(x_n) {
        return Err(MmError::Domain(format!("x_n is outside dom {}", psi.name())));
    }
    let grad = f
        .gradient(x_n)
        .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))?;

    let dual = psi.gradient(x_n) - grad * alpha;
    let mirrored = psi
        .conjugate_gradient(&dual)
        .ok_or_else(|| MmError::Unsupported(format!("{} has no conjugate gradient", psi.name())))?;
    if !mirrored.iter().all(|v| v.is_finite()) || !psi.in_domain(&mirrored) {
        return Err(MmError::Domain(format!(
            "mirrored point left dom {}",
            psi.name()
        )));
    }
    let point = projector.project(&mirrored)?;
    Ok(MirrorStep {
        dual: dual.as_slice().to_vec(),
        mirrored: mirrored.as_slice().to_vec(),
        point: point.as_slice().to_vec(),
    })
}

fn check_simplex_interior(x: &RealVector) -> Result<()> {
    if let Some(v) = x.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(MmError::Domain(format!(
            "simplex iterate needs strictly positive entries, found {v}"
        )));
    }
    let s = x.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(MmError::Domain(format!("simplex iterate sums to {s}")));
    }
    Ok(())
}

/// `x_n ⊙ exp(−α∇f(x_n)) / Z`.
pub fn exponentiated_gradient_step(f: &dyn Objective, x_n: &RealVector, alpha: f64) -> Result<RealVector> {
    check_simplex_interior(x_n)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MmError::InvalidParameter(format!("step size {alpha} must be positive")));
    }
    let grad = f
        .gradient(x_n)
        .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))?;
    // shifting the exponent leaves the normalized result unchanged
    let shift = grad.iter().copied().fold(f64::INFINITY, f64::min);
    let weights = RealVector::from_iterator(
        x_n.len(),
        x_n.iter().zip(grad.iter()).map(|(x, g)| x * (-alpha * (g - shift)).exp()),
    );
    let z = weights.sum();
    let out = weights / z;
    if !out.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(MmError::Numerical(
            "exponentiated gradient step underflowed to the simplex boundary".into(),
        ));
    }
    Ok(out)
}

/// Mirror descent packaged as an MM surrogate factory. The surrogate is
/// `f(x_n) + ⟨∇f(x_n), x − x_n⟩ + B_ψ(x‖x_n)/α`, restricted to `C`.
pub struct MirrorDescentFactory {
    f: Arc<dyn Objective>,
    psi: Arc<dyn BregmanGeometry>,
    projector: Arc<dyn BregmanProjector>,
    alpha: f64,
}

impl MirrorDescentFactory {
    pub fn new(
        f: Arc<dyn Objective>,
        psi: Arc<dyn BregmanGeometry>,
        projector: Arc<dyn BregmanProjector>,
        alpha: f64,
    ) -> Result<Self> {
        if let Some(l) = f.smoothness() {
            validate_step(alpha, l, false)?;
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(MmError::InvalidParameter(format!("step size {alpha} must be positive")));
        }
        Ok(Self { f, psi, projector, alpha })
    }
}

struct MirrorSurrogate<'a> {
    factory: &'a MirrorDescentFactory,
    anchor: RealVector,
    f_anchor: f64,
    grad_anchor: RealVector,
}

impl Surrogate for MirrorSurrogate<'_> {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        let fac = self.factory;
        if !fac.projector.contains(x) || !fac.psi.in_domain(x) {
            return f64::INFINITY;
        }
        let Ok(d) = bregman_divergence(fac.psi.as_ref(), x, &self.anchor) else {
            return f64::INFINITY;
        };
        self.f_anchor + self.grad_anchor.dot(&(x - &self.anchor)) + d / fac.alpha
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        let fac = self.factory;
        let step = mirror_descent_step(fac.f.as_ref(), fac.psi.as_ref(), fac.projector.as_ref(), &self.anchor, fac.alpha)?;
        Ok(SurrogateStep::new(RealVector::from_vec(step.point.clone()))
            .with_extra("dual", step.dual)
            .with_extra("mirrored", step.mirrored))
    }

    fn gradient_at_anchor(&self) -> Option<RealVector> {
        Some(self.grad_anchor.clone())
    }
}

impl SurrogateFactory for MirrorDescentFactory {
    fn build<'a>(&'a self, anchor: &RealVector, _iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        let grad_anchor = self
            .f
            .gradient(anchor)
            .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))?;
        Ok(Box::new(MirrorSurrogate {
            factory: self,
            anchor: anchor.clone(),
            f_anchor: self.f.value(anchor),
            grad_anchor,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaReport {
    /// `[g(x|x_n) − g(x_{n+1}|x_n)] − [g(x|x_{n+1}) − f(x)]` per sample.
    pub margins: Vec<f64>,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const SUMMA_TOL: f64 = 1e-9;

/// Checks `g(x|x_n) − g(x_{n+1}|x_n) ≥ g(x|x_{n+1}) − f(x)` at each sample.
pub fn check_summa(
    f: &dyn Objective,
    factory: &dyn SurrogateFactory,
    x_n: &RealVector,
    x_next: &RealVector,
    samples: &[RealVector],
) -> Result<SummaReport> {
    let g_n = factory.build(x_n, 0)?;
    let g_next = factory.build(x_next, 0)?;
    let base = g_n.value(x_next);
    let margins: Vec<f64> = samples
        .iter()
        .map(|x| (g_n.value(x) - base) - (g_next.value(x) - f.value(x)))
        .collect();
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SummaReport {
        passed: worst_margin >= -SUMMA_TOL,
        margins,
        worst_margin,
        tolerance: SUMMA_TOL,
    })
}
