//! The MM iteration: surrogate contracts, the descent loop with runtime
//! checks, and the viscosity wrapper.
//!
//! A surrogate `g(·|x_n)` must touch the objective at its anchor and lie above
//! it everywhere else. The engine never trusts this: with
//! [`CheckLevel::Cheap`] every step is checked for descent, and with
//! [`CheckLevel::Full`] tangency and dominance at sampled points are checked
//! too.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diagnostics::detect_cycle_in;
use crate::error::{MmError, Result};
use crate::linalg::{ensure_finite_vector, RealVector};

/// Relative slack allowed on the descent inequality.
pub const DESCENT_SLACK: f64 = 1e-12;
/// Tolerance on tangency residuals and dominance margins.
pub const MAJORIZATION_TOL: f64 = 1e-9;

/// An extended-value objective. Points outside the domain evaluate to `+∞`.
pub trait Objective: Send + Sync {
    fn value(&self, x: &RealVector) -> f64;

    fn gradient(&self, _x: &RealVector) -> Option<RealVector> {
        None
    }

    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    fn smoothness(&self) -> Option<f64> {
        None
    }

    fn known_minimum(&self) -> Option<(RealVector, f64)> {
        None
    }

    /// True when the objective is affine, so its gradient is constant.
    fn is_affine(&self) -> bool {
        false
    }
}

type ValueFn = Box<dyn Fn(&RealVector) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&RealVector) -> RealVector + Send + Sync>;

/// Objective assembled from closures.
pub struct FnObjective {
    value: ValueFn,
    gradient: Option<GradFn>,
    mu: Option<f64>,
    smoothness: Option<f64>,
    minimum: Option<(RealVector, f64)>,
}

impl FnObjective {
    pub fn new(value: impl Fn(&RealVector) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Box::new(value),
            gradient: None,
            mu: None,
            smoothness: None,
            minimum: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&RealVector) -> RealVector + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_known_minimum(mut self, point: RealVector, value: f64) -> Self {
        self.minimum = Some((point, value));
        self
    }

    /// Attaches curvature constants; rejects `μ > L` and non-positive `L`.
    pub fn with_constants(mut self, mu: Option<f64>, smoothness: Option<f64>) -> Result<Self> {
        validate_constants(mu, smoothness)?;
        self.mu = mu;
        self.smoothness = smoothness;
        Ok(self)
    }
}

pub(crate) fn validate_constants(mu: Option<f64>, smoothness: Option<f64>) -> Result<()> {
    if let Some(m) = mu {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(MmError::InvalidParameter(format!("mu must be >= 0, got {m}")));
        }
    }
    if let Some(l) = smoothness {
        if !(l > 0.0) || !l.is_finite() {
            return Err(MmError::InvalidParameter(format!("L must be > 0, got {l}")));
        }
    }
    if let (Some(m), Some(l)) = (mu, smoothness) {
        if m > l {
            return Err(MmError::InvalidParameter(format!(
                "strong convexity {m} exceeds smoothness {l}"
            )));
        }
    }
    Ok(())
}

impl Objective for FnObjective {
    fn value(&self, x: &RealVector) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &RealVector) -> Option<RealVector> {
        self.gradient.as_ref().map(|g| g(x))
    }

    fn strong_convexity(&self) -> Option<f64> {
        self.mu
    }

    fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    fn known_minimum(&self) -> Option<(RealVector, f64)> {
        self.minimum.clone()
    }
}

/// Named auxiliary values recorded alongside an iterate.
pub type Extras = BTreeMap<String, Vec<f64>>;

/// Result of minimizing a surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateStep {
    pub point: RealVector,
    pub extras: Extras,
}

impl SurrogateStep {
    pub fn new(point: RealVector) -> Self {
        Self {
            point,
            extras: Extras::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, values: Vec<f64>) -> Self {
        self.extras.insert(key.to_string(), values);
        self
    }
}

/// `g(·|anchor)`.
pub trait Surrogate {
    fn anchor(&self) -> &RealVector;

    fn value(&self, x: &RealVector) -> f64;

    fn minimize(&self) -> Result<SurrogateStep>;

    /// Minimizes `g(x|anchor) + (ρ/2)‖x − anchor‖²`.
    fn minimize_with_proximal(&self, _rho: f64) -> Result<SurrogateStep> {
        Err(MmError::Unsupported(
            "surrogate has no proximal minimizer".into(),
        ))
    }

    /// `∇g(anchor|anchor)` when it exists.
    fn gradient_at_anchor(&self) -> Option<RealVector> {
        None
    }
}

/// Builds surrogates. `iteration` lets block schemes cycle through blocks.
pub trait SurrogateFactory: Send + Sync {
    fn build<'a>(&'a self, anchor: &RealVector, iteration: usize) -> Result<Box<dyn Surrogate + 'a>>;
}

impl<F: SurrogateFactory + ?Sized> SurrogateFactory for &F {
    fn build<'a>(&'a self, anchor: &RealVector, iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        (**self).build(anchor, iteration)
    }
}

impl<F: SurrogateFactory + ?Sized> SurrogateFactory for Box<F> {
    fn build<'a>(&'a self, anchor: &RealVector, iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        (**self).build(anchor, iteration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop when `‖x_{n+1} − x_n‖ ≤ step_tol`.
    pub step_tol: f64,
    /// Stop when `f(x_n) − f(x_{n+1}) ≤ objective_tol·max(1, |f(x_n)|)`.
    /// Zero disables the criterion, since a zero decrease is also what a
    /// cycle between equal-valued points produces.
    pub objective_tol: f64,
}

impl StopRule {
    pub fn new(max_iters: usize, step_tol: f64, objective_tol: f64) -> Result<Self> {
        let rule = Self {
            max_iters,
            step_tol,
            objective_tol,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(MmError::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.step_tol >= 0.0) || !(self.objective_tol >= 0.0) {
            return Err(MmError::InvalidParameter(
                "stopping tolerances must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            step_tol: 1e-10,
            objective_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CheckLevel {
    Off,
    #[default]
    Cheap,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleDetection {
    pub point_tol: f64,
    pub max_period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub check_level: CheckLevel,
    pub cycle_detection: Option<CycleDetection>,
    /// Number of trailing steps that must all be below `step_tol` before the
    /// run counts as converged. Block schemes set this to the block count.
    pub step_window: usize,
    /// Sample points per iteration for the dominance check at `Full`.
    pub dominance_samples: usize,
    pub sample_radius: f64,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            check_level: CheckLevel::Cheap,
            cycle_detection: None,
            step_window: 1,
            dominance_samples: 20,
            sample_radius: 1.0,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminationReason {
    Converged,
    MaxIters,
    CycleDetected { period: usize },
    Error,
}

/// The record of one run. `step_norms[n]` and `surrogate_gaps[n]` describe the
/// move from `iterates[n]` to `iterates[n + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub iterates: Vec<RealVector>,
    pub objective_values: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub surrogate_gaps: Vec<f64>,
    pub extras: Vec<Extras>,
    pub termination: TerminationReason,
}

impl IterateTrace {
    pub fn starting_at(x0: RealVector, f0: f64) -> Self {
        Self {
            iterates: vec![x0],
            objective_values: vec![f0],
            step_norms: Vec::new(),
            surrogate_gaps: Vec::new(),
            extras: Vec::new(),
            termination: TerminationReason::MaxIters,
        }
    }

    pub fn push(&mut self, x: RealVector, f: f64, gap: f64, extras: Extras) {
        let step = (&x - self.last_iterate()).norm();
        self.iterates.push(x);
        self.objective_values.push(f);
        self.step_norms.push(step);
        self.surrogate_gaps.push(gap);
        self.extras.push(extras);
    }

    pub fn iterations(&self) -> usize {
        self.step_norms.len()
    }

    pub fn last_iterate(&self) -> &RealVector {
        self.iterates.last().expect("trace holds at least x0")
    }

    pub fn last_value(&self) -> f64 {
        *self.objective_values.last().expect("trace holds at least f(x0)")
    }

    pub fn final_step_norm(&self) -> Option<f64> {
        self.step_norms.last().copied()
    }

    /// Keeps every `stride`-th iterate (`x_0, x_stride, …`). Step norms are
    /// recomputed between kept iterates and surrogate gaps are summed over
    /// each stride. Used to view block-level runs sweep by sweep.
    pub fn coarsen(&self, stride: usize) -> IterateTrace {
        let stride = stride.max(1);
        let mut out = IterateTrace::starting_at(self.iterates[0].clone(), self.objective_values[0]);
        let mut idx = stride;
        while idx < self.iterates.len() {
            let gap: f64 = self.surrogate_gaps[idx - stride..idx].iter().sum();
            out.push(
                self.iterates[idx].clone(),
                self.objective_values[idx],
                gap,
                self.extras[idx - 1].clone(),
            );
            idx += stride;
        }
        out.termination = self.termination;
        out
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: MmError,
    pub trace: IterateTrace,
}

fn descent_slack(f: f64) -> f64 {
    DESCENT_SLACK * f.abs().max(1.0)
}

fn fail(mut trace: IterateTrace, error: MmError) -> std::result::Result<IterateTrace, RunFailure> {
    trace.termination = TerminationReason::Error;
    Err(RunFailure { error, trace })
}

/// Runs `x_{n+1} = argmin g(·|x_n)` from `x0`.
pub fn run_mm(
    f: &dyn Objective,
    factory: &dyn SurrogateFactory,
    x0: &RealVector,
    stop: &StopRule,
    options: &RunOptions,
) -> std::result::Result<IterateTrace, RunFailure> {
    let f0 = f.value(x0);
    let mut trace = IterateTrace::starting_at(x0.clone(), f0);
    if let Err(e) = stop.validate().and_then(|_| ensure_finite_vector(x0, "x0")) {
        return fail(trace, e);
    }
    if !f0.is_finite() {
        return fail(trace, MmError::Numerical(format!("f(x0) = {f0} is not finite")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let window = options.step_window.max(1);

    for n in 0..stop.max_iters {
        let x = trace.last_iterate().clone();
        let fx = trace.last_value();
        let surrogate = match factory.build(&x, n) {
            Ok(s) => s,
            Err(e) => return fail(trace, e),
        };

        if options.check_level == CheckLevel::Full {
            let samples = sample_around(&x, options.dominance_samples, options.sample_radius, &mut rng);
            let report = majorization_report(f, surrogate.as_ref(), &samples);
            if !report.passed() {
                return fail(
                    trace,
                    MmError::MajorizationViolation {
                        iteration: n,
                        detail: format!(
                            "tangency residual {:e}, worst dominance margin {:e}",
                            report.tangency_residual, report.worst_dominance_margin
                        ),
                    },
                );
            }
        }

        let step = match surrogate.minimize() {
            Ok(s) => s,
            Err(e) => return fail(trace, e),
        };
        if let Err(e) = ensure_finite_vector(&step.point, "surrogate minimizer") {
            return fail(trace, MmError::Numerical(e.to_string()));
        }
        let f_next = f.value(&step.point);
        if !f_next.is_finite() {
            return fail(
                trace,
                MmError::Numerical(format!("f = {f_next} at iteration {}", n + 1)),
            );
        }
        let gap = surrogate.value(&step.point) - f_next;

        if options.check_level != CheckLevel::Off && f_next > fx + descent_slack(fx) {
            return fail(
                trace,
                MmError::DescentViolation {
                    iteration: n + 1,
                    before: fx,
                    after: f_next,
                },
            );
        }
        if options.check_level == CheckLevel::Full && gap < -MAJORIZATION_TOL * f_next.abs().max(1.0) {
            return fail(
                trace,
                MmError::MajorizationViolation {
                    iteration: n,
                    detail: format!("negative surrogate gap {gap:e} at the new iterate"),
                },
            );
        }

        trace.push(step.point, f_next, gap, step.extras);

        let steps = &trace.step_norms;
        if steps.len() >= window && steps[steps.len() - window..].iter().all(|&s| s <= stop.step_tol) {
            trace.termination = TerminationReason::Converged;
            return Ok(trace);
        }
        if stop.objective_tol > 0.0 && fx - f_next <= stop.objective_tol * fx.abs().max(1.0) {
            trace.termination = TerminationReason::Converged;
            return Ok(trace);
        }
        if let Some(cd) = options.cycle_detection {
            if let Some(period) = detect_cycle_in(&trace.iterates, cd.point_tol, cd.max_period) {
                // period 1 is a stalled iterate, which the step rule handles
                if period >= 2 {
                    trace.termination = TerminationReason::CycleDetected { period };
                    return Ok(trace);
                }
            }
        }
    }

    trace.termination = TerminationReason::MaxIters;
    Ok(trace)
}

fn sample_around(x: &RealVector, count: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<RealVector> {
    (0..count)
        .map(|_| {
            let noise = RealVector::from_iterator(
                x.len(),
                (0..x.len()).map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * radius
                }),
            );
            x + noise
        })
        .collect()
}

/// Seeded Gaussian samples around a point, for majorization and SUMMA checks.
pub fn seeded_samples(center: &RealVector, count: usize, radius: f64, seed: u64) -> Vec<RealVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_around(center, count, radius, &mut rng)
}

/// Tangency residual and worst dominance margin of one surrogate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MajorizationReport {
    pub anchor_value: f64,
    /// `|g(anchor|anchor) − f(anchor)|`.
    pub tangency_residual: f64,
    /// `min (g(x|anchor) − f(x))` over samples where `f` is finite.
    pub worst_dominance_margin: f64,
    /// `min (g(x|anchor) − f(x)) / max(1, |f(x)|)`, the quantity the
    /// dominance tolerance applies to.
    pub worst_relative_margin: f64,
    pub worst_sample: Option<usize>,
    pub samples_checked: usize,
}

impl MajorizationReport {
    pub fn tangency_ok(&self) -> bool {
        self.tangency_residual <= MAJORIZATION_TOL * self.anchor_value.abs().max(1.0)
    }

    pub fn dominance_ok(&self) -> bool {
        self.worst_relative_margin >= -MAJORIZATION_TOL
    }

    pub fn passed(&self) -> bool {
        self.tangency_ok() && self.dominance_ok()
    }
}

fn majorization_report(f: &dyn Objective, surrogate: &dyn Surrogate, samples: &[RealVector]) -> MajorizationReport {
    let anchor = surrogate.anchor();
    let fa = f.value(anchor);
    let tangency_residual = (surrogate.value(anchor) - fa).abs();
    let mut worst = f64::INFINITY;
    let mut worst_relative = f64::INFINITY;
    let mut worst_sample = None;
    let mut checked = 0;
    for (i, x) in samples.iter().enumerate() {
        let fx = f.value(x);
        if !fx.is_finite() {
            continue;
        }
        checked += 1;
        let margin = surrogate.value(x) - fx;
        worst = worst.min(margin);
        let relative = margin / fx.abs().max(1.0);
        if relative < worst_relative {
            worst_relative = relative;
            worst_sample = Some(i);
        }
    }
    MajorizationReport {
        anchor_value: fa,
        tangency_residual,
        worst_dominance_margin: worst,
        worst_relative_margin: worst_relative,
        worst_sample,
        samples_checked: checked,
    }
}

/// Checks tangency at `anchor` and dominance at each sample.
pub fn check_majorization(
    f: &dyn Objective,
    factory: &dyn SurrogateFactory,
    anchor: &RealVector,
    samples: &[RealVector],
) -> Result<MajorizationReport> {
    let surrogate = factory.build(anchor, 0)?;
    Ok(majorization_report(f, surrogate.as_ref(), samples))
}

/// Adds `(ρ/2)‖x − x_n‖²` to every surrogate of the wrapped factory.
pub struct Viscosity<F> {
    inner: F,
    rho: f64,
}

impl<F> Viscosity<F> {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

pub fn wrap_viscosity<F: SurrogateFactory>(factory: F, rho: f64) -> Result<Viscosity<F>> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(MmError::InvalidParameter(format!(
            "viscosity must be positive, got {rho}"
        )));
    }
    Ok(Viscosity { inner: factory, rho })
}

struct ViscousSurrogate<'a> {
    inner: Box<dyn Surrogate + 'a>,
    rho: f64,
}

impl Surrogate for ViscousSurrogate<'_> {
    fn anchor(&self) -> &RealVector {
        self.inner.anchor()
    }

    fn value(&self, x: &RealVector) -> f64 {
        let d = (x - self.inner.anchor()).norm_squared();
        self.inner.value(x) + 0.5 * self.rho * d
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        self.inner.minimize_with_proximal(self.rho)
    }

    fn minimize_with_proximal(&self, rho: f64) -> Result<SurrogateStep> {
        self.inner.minimize_with_proximal(self.rho + rho)
    }

    fn gradient_at_anchor(&self) -> Option<RealVector> {
        self.inner.gradient_at_anchor()
    }
}

impl<F: SurrogateFactory> SurrogateFactory for Viscosity<F> {
    fn build<'a>(&'a self, anchor: &RealVector, iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        let inner = self.inner.build(anchor, iteration)?;
        Ok(Box::new(ViscousSurrogate { inner, rho: self.rho }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticUpperBound;
    use std::sync::Arc;

    fn square() -> Arc<FnObjective> {
        Arc::new(
            FnObjective::new(|x: &RealVector| x.norm_squared())
                .with_gradient(|x: &RealVector| x * 2.0)
                .with_constants(Some(2.0), Some(2.0))
                .unwrap(),
        )
    }

    #[test]
    fn exact_surrogate_converges_in_one_step() {
        let f = square();
        let factory = QuadraticUpperBound::new(f.clone()).unwrap();
        let trace = run_mm(
            f.as_ref(),
            &factory,
            &RealVector::from_vec(vec![1.0]),
            &StopRule::default(),
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.iterates[1][0], 0.0);
        assert_eq!(trace.termination, TerminationReason::Converged);
        assert_eq!(trace.iterations(), 2);
    }

    #[test]
    fn constants_validated() {
        let r = FnObjective::new(|_: &RealVector| 0.0).with_constants(Some(3.0), Some(2.0));
        assert!(matches!(r, Err(MmError::InvalidParameter(_))));
    }

    #[test]
    fn understated_curvature_breaks_dominance() {
        let f = square();
        let factory = QuadraticUpperBound::with_smoothness(f.clone(), 1.0).unwrap();
        let anchor = RealVector::from_vec(vec![0.5]);
        let report = check_majorization(
            f.as_ref(),
            &factory,
            &anchor,
            &[RealVector::from_vec(vec![1.5])],
        )
        .unwrap();
        // g − f at anchor + 1 is (L_used − 2)/2 · 1² = −1/2
        assert!(report.tangency_ok());
        assert!((report.worst_dominance_margin + 0.5).abs() < 1e-15);
        assert!(!report.passed());
    }

    #[test]
    fn exact_surrogate_has_zero_margins() {
        let f = square();
        let factory = QuadraticUpperBound::new(f.clone()).unwrap();
        let anchor = RealVector::from_vec(vec![0.3]);
        let samples = seeded_samples(&anchor, 50, 2.0, 9);
        let report = check_majorization(f.as_ref(), &factory, &anchor, &samples).unwrap();
        assert_eq!(report.tangency_residual, 0.0);
        assert!(report.worst_dominance_margin.abs() < 1e-15);
    }

    #[test]
    fn viscosity_rejects_nonpositive_rho() {
        let f = square();
        let factory = QuadraticUpperBound::new(f).unwrap();
        assert!(wrap_viscosity(&factory, 0.0).is_err());
        assert!(wrap_viscosity(&factory, -1.0).is_err());
    }

    #[test]
    fn viscosity_surrogate_matches_at_anchor_and_tiny_rho() {
        let f = square();
        let factory = QuadraticUpperBound::new(f.clone()).unwrap();
        let wrapped = wrap_viscosity(&factory, 1e-300).unwrap();
        let anchor = RealVector::from_vec(vec![0.7]);
        let g = factory.build(&anchor, 0).unwrap();
        let gw = wrapped.build(&anchor, 0).unwrap();
        for x in seeded_samples(&anchor, 20, 3.0, 4) {
            assert_eq!(g.value(&x), gw.value(&x));
        }
        let big = wrap_viscosity(&factory, 5.0).unwrap();
        let gb = big.build(&anchor, 0).unwrap();
        assert_eq!(gb.value(&anchor), f.value(&anchor));
    }

    #[test]
    fn descent_violation_is_an_error() {
        struct Uphill;
        struct UphillSurrogate(RealVector);
        impl Surrogate for UphillSurrogate {
            fn anchor(&self) -> &RealVector {
                &self.0
            }
            fn value(&self, x: &RealVector) -> f64 {
                x.norm_squared()
            }
            fn minimize(&self) -> Result<SurrogateStep> {
                Ok(SurrogateStep::new(&self.0 * 2.0))
            }
        }
        impl SurrogateFactory for Uphill {
            fn build<'a>(&'a self, anchor: &RealVector, _: usize) -> Result<Box<dyn Surrogate + 'a>> {
                Ok(Box::new(UphillSurrogate(anchor.clone())))
            }
        }
        let f = square();
        let err = run_mm(
            f.as_ref(),
            &Uphill,
            &RealVector::from_vec(vec![1.0]),
            &StopRule::default(),
            &RunOptions::default(),
        )
        .unwrap_err();
        assert_eq!(
            err.error,
            MmError::DescentViolation {
                iteration: 1,
                before: 1.0,
                after: 4.0
            }
        );
        assert_eq!(err.trace.termination, TerminationReason::Error);

        let off = RunOptions {
            check_level: CheckLevel::Off,
            ..RunOptions::default()
        };
        let stop = StopRule::new(3, 0.0, 0.0).unwrap();
        let trace = run_mm(f.as_ref(), &Uphill, &RealVector::from_vec(vec![1.0]), &stop, &off).unwrap();
        assert_eq!(trace.termination, TerminationReason::MaxIters);
    }

    #[test]
    fn non_finite_start_rejected() {
        let f = Arc::new(FnObjective::new(|x: &RealVector| if x[0] > 0.0 { x[0].ln() } else { f64::INFINITY }));
        let factory = QuadraticUpperBound::with_smoothness(square(), 2.0).unwrap();
        let err = run_mm(
            f.as_ref(),
            &factory,
            &RealVector::from_vec(vec![-1.0]),
            &StopRule::default(),
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err.error, MmError::Numerical(_)));
    }

    #[test]
    fn stop_rule_validation() {
        assert!(StopRule::new(0, 1e-10, 0.0).is_err());
        assert!(StopRule::new(10, -1.0, 0.0).is_err());
        assert!(StopRule::new(10, 1e-10, f64::NAN).is_err());
    }

    #[test]
    fn coarsen_sums_gaps_and_recomputes_steps() {
        let mut t = IterateTrace::starting_at(RealVector::from_vec(vec![0.0]), 5.0);
        for (i, x) in [1.0, 3.0, 6.0, 10.0].iter().enumerate() {
            t.push(RealVector::from_vec(vec![*x]), 4.0 - i as f64, 0.5, Extras::new());
        }
        let c = t.coarsen(2);
        assert_eq!(c.iterates.len(), 3);
        assert_eq!(c.step_norms, vec![3.0, 7.0]);
        assert_eq!(c.surrogate_gaps, vec![1.0, 1.0]);
        assert_eq!(c.objective_values, vec![5.0, 3.0, 1.0]);
    }
}
