//! Checks of the quantitative convergence guarantees on finished traces, plus
//! cycle detection.
//!
//! Each check returns a [`BoundReport`] holding the left- and right-hand side
//! of the inequality at every index, so a failure can be located and plotted.
//! The theorems behind these bounds hold exactly; the only slack granted is
//! [`BOUND_TOL`] of floating-point noise on each margin.

use serde::Serialize;

use crate::engine::{IterateTrace, Objective};
use crate::error::{MmError, Result};
use crate::linalg::RealVector;

pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `min (rhs − lhs)`; the bound reads `lhs ≤ rhs`.
    pub worst_margin: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

impl BoundReport {
    /// A report whose per-index margins are already `rhs − lhs`.
    pub fn from_margins(name: &str, margins: Vec<f64>, tolerance: f64) -> Self {
        Self::from_sides(name, vec![0.0; margins.len()], margins, tolerance)
    }

    pub(crate) fn from_sides(name: &str, lhs: Vec<f64>, rhs: Vec<f64>, tolerance: f64) -> Self {
        let mut worst = f64::INFINITY;
        let mut worst_index = None;
        for (i, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
            let m = r - l;
            // NaN margins count as failures
            if !(m >= worst) {
                worst = m;
                worst_index = Some(i);
            }
        }
        let passed = worst >= -tolerance;
        Self {
            bound_name: name.to_string(),
            lhs,
            rhs,
            worst_margin: worst,
            worst_index,
            tolerance,
            passed,
        }
    }
}

/// `‖∇f(x_k)‖` for every iterate of the trace.
pub fn gradient_norms(trace: &IterateTrace, f: &dyn Objective) -> Result<Vec<f64>> {
    trace
        .iterates
        .iter()
        .map(|x| {
            f.gradient(x)
                .map(|g| g.norm())
                .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))
        })
        .collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(MmError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// `min_{k≤n} ‖∇f(x_k)‖² ≤ 2L/(n+1) · (f(x₀) − f_floor)` for every prefix `n`.
pub fn check_sublinear_bound(
    trace: &IterateTrace,
    grad_norms: &[f64],
    smoothness: f64,
    f_floor: f64,
) -> Result<BoundReport> {
    positive("L", smoothness)?;
    if grad_norms.len() != trace.iterates.len() {
        return Err(MmError::Unsupported(format!(
            "need one gradient norm per iterate ({}), got {}",
            trace.iterates.len(),
            grad_norms.len()
        )));
    }
    let gap0 = trace.objective_values[0] - f_floor;
    if gap0 < -BOUND_TOL {
        return Err(MmError::Inconsistent(format!(
            "f_floor {f_floor} exceeds f(x0) {}",
            trace.objective_values[0]
        )));
    }
    let mut running = f64::INFINITY;
    let mut lhs = Vec::with_capacity(grad_norms.len());
    let mut rhs = Vec::with_capacity(grad_norms.len());
    for (n, g) in grad_norms.iter().enumerate() {
        running = running.min(g * g);
        lhs.push(running);
        rhs.push(2.0 * smoothness / (n as f64 + 1.0) * gap0);
    }
    Ok(BoundReport::from_sides("sublinear_gradient_bound", lhs, rhs, BOUND_TOL))
}

/// Both readings of the strongly convex rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRateReport {
    /// `f(x_n) − f* ≤ (1 − (μ/L)²)ⁿ (f(x₀) − f*)`.
    pub statement_form: BoundReport,
    /// `f(x_n) − f* ≤ (1 − μ²/(2L²))ⁿ (f(x₀) − f*)`.
    pub proof_chain_form: BoundReport,
    /// `f(x_{n+1}) − f* ≤ (1 − μ²/(2L²)) (f(x_n) − f*)`.
    pub per_step_form: BoundReport,
    /// Largest observed ratio `(f(x_{n+1}) − f*) / (f(x_n) − f*)` over steps
    /// whose gap is above the rounding floor `1e-10·max(1, |f*|)`.
    pub worst_observed_factor: f64,
}

impl LinearRateReport {
    pub fn passed(&self) -> bool {
        self.statement_form.passed && self.proof_chain_form.passed && self.per_step_form.passed
    }
}

fn validate_mu_l(mu: f64, smoothness: f64) -> Result<()> {
    positive("mu", mu)?;
    positive("L", smoothness)?;
    if mu > smoothness {
        return Err(MmError::InvalidParameter(format!(
            "mu = {mu} exceeds L = {smoothness}"
        )));
    }
    Ok(())
}

pub fn check_linear_rate(trace: &IterateTrace, mu: f64, smoothness: f64, f_star: f64) -> Result<LinearRateReport> {
    validate_mu_l(mu, smoothness)?;
    let min_seen = trace
        .objective_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if f_star > min_seen + BOUND_TOL * min_seen.abs().max(1.0) {
        return Err(MmError::Inconsistent(format!(
            "f* = {f_star} lies above the smallest traced value {min_seen}"
        )));
    }

    let gaps: Vec<f64> = trace.objective_values.iter().map(|f| f - f_star).collect();
    let statement = 1.0 - (mu / smoothness).powi(2);
    let proof = 1.0 - mu * mu / (2.0 * smoothness * smoothness);

    let cumulative = |factor: f64| -> Vec<f64> {
        gaps.iter()
            .enumerate()
            .map(|(n, _)| factor.powi(n as i32) * gaps[0])
            .collect()
    };

    let statement_form = BoundReport::from_sides("linear_rate_statement", gaps.clone(), cumulative(statement), BOUND_TOL);
    let proof_chain_form = BoundReport::from_sides("linear_rate_proof_chain", gaps.clone(), cumulative(proof), BOUND_TOL);

    let step_lhs: Vec<f64> = gaps.iter().skip(1).copied().collect();
    let step_rhs: Vec<f64> = gaps.iter().take(gaps.len().saturating_sub(1)).map(|g| proof * g).collect();
    let per_step_form = BoundReport::from_sides("linear_rate_per_step", step_lhs, step_rhs, BOUND_TOL);

    let floor = 1e-10 * f_star.abs().max(1.0);
    let worst_observed_factor = gaps
        .windows(2)
        .filter(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);

    Ok(LinearRateReport {
        statement_form,
        proof_chain_form,
        per_step_form,
        worst_observed_factor,
    })
}

/// `‖∇f(x)‖² ≥ μ²/(2L) · (f(x) − f*)` at each point.
pub fn check_pl_inequality(
    points: &[RealVector],
    f: &dyn Objective,
    mu: f64,
    smoothness: f64,
    f_star: f64,
) -> Result<BoundReport> {
    validate_mu_l(mu, smoothness)?;
    let c = mu * mu / (2.0 * smoothness);
    let mut lhs = Vec::with_capacity(points.len());
    let mut rhs = Vec::with_capacity(points.len());
    for x in points {
        let g = f
            .gradient(x)
            .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))?;
        // written as lhs ≤ rhs
        lhs.push(c * (f.value(x) - f_star));
        rhs.push(g.norm_squared());
    }
    Ok(BoundReport::from_sides("polyak_lojasiewicz", lhs, rhs, BOUND_TOL))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummabilityReport {
    /// `(μ/2)‖x_{n+1} − x_n‖² ≤ f(x_n) − f(x_{n+1})`.
    pub per_step: BoundReport,
    /// `Σ_{k≤n} ‖x_{k+1} − x_k‖² ≤ (2/μ)(f(x₀) − f_limit)`, the sum of the
    /// per-step inequalities.
    pub cumulative: BoundReport,
    /// The same sum against the tighter budget `(1/μ)(f(x₀) − f_limit)`.
    /// Not implied by the per-step inequality (an exact quadratic step
    /// already violates it), so it is reported but not part of `passed`.
    pub cumulative_half_budget: BoundReport,
    /// Partial sums of squared step norms.
    pub partial_sums: Vec<f64>,
}

impl SummabilityReport {
    pub fn passed(&self) -> bool {
        self.per_step.passed && self.cumulative.passed
    }
}

pub fn check_step_summability(trace: &IterateTrace, mu: f64, f_limit: f64) -> Result<SummabilityReport> {
    positive("mu", mu)?;
    let f = &trace.objective_values;
    let steps = &trace.step_norms;

    let per_lhs: Vec<f64> = steps.iter().map(|s| 0.5 * mu * s * s).collect();
    let per_rhs: Vec<f64> = f.windows(2).map(|w| w[0] - w[1]).collect();
    let per_step = BoundReport::from_sides("strong_convexity_step", per_lhs, per_rhs, BOUND_TOL);

    let mut partial_sums = Vec::with_capacity(steps.len());
    let mut acc = 0.0;
    for s in steps {
        acc += s * s;
        partial_sums.push(acc);
    }
    let budget = (f[0] - f_limit) / mu;
    let cumulative = BoundReport::from_sides(
        "square_summable_steps",
        partial_sums.clone(),
        vec![2.0 * budget; partial_sums.len()],
        BOUND_TOL,
    );
    let cumulative_half_budget = BoundReport::from_sides(
        "square_summable_steps_half_budget",
        partial_sums.clone(),
        vec![budget; partial_sums.len()],
        BOUND_TOL,
    );
    Ok(SummabilityReport {
        per_step,
        cumulative,
        cumulative_half_budget,
        partial_sums,
    })
}

/// Smallest period `p ≤ max_period` such that the last `3p` iterates satisfy
/// `‖x_k − x_{k+p}‖ ≤ point_tol` throughout the window.
pub fn detect_cycle_in(iterates: &[RealVector], point_tol: f64, max_period: usize) -> Option<usize> {
    let len = iterates.len();
    (1..=max_period).find(|&p| {
        if len < 3 * p {
            return false;
        }
        let start = len - 3 * p;
        (start..len - p).all(|k| (&iterates[k] - &iterates[k + p]).norm() <= point_tol)
    })
}

pub fn detect_cycle(trace: &IterateTrace, point_tol: f64, max_period: usize) -> Option<usize> {
    detect_cycle_in(&trace.iterates, point_tol, max_period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Extras, FnObjective};

    fn trace_of(points: &[f64], values: &[f64]) -> IterateTrace {
        let mut t = IterateTrace::starting_at(RealVector::from_vec(vec![points[0]]), values[0]);
        for (x, f) in points.iter().zip(values).skip(1) {
            t.push(RealVector::from_vec(vec![*x]), *f, 0.0, Extras::new());
        }
        t
    }

    #[test]
    fn constant_trace_is_period_one() {
        let t = trace_of(&[1.0; 5], &[0.0; 5]);
        assert_eq!(detect_cycle(&t, 1e-12, 4), Some(1));
    }

    #[test]
    fn alternating_trace_is_period_two() {
        let t = trace_of(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0], &[0.0; 6]);
        assert_eq!(detect_cycle(&t, 1e-12, 4), Some(2));
        // too short a window
        let t = trace_of(&[1.0, -1.0, 1.0, -1.0, 1.0], &[0.0; 5]);
        assert_eq!(detect_cycle(&t, 1e-12, 4), None);
    }

    #[test]
    fn objective_constant_drift_is_not_a_cycle() {
        let pts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let t = trace_of(&pts, &[1.0; 20]);
        assert_eq!(detect_cycle(&t, 1e-9, 6), None);
    }

    #[test]
    fn zero_gradient_start_passes_sublinear() {
        let t = trace_of(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]);
        let r = check_sublinear_bound(&t, &[0.0, 0.0, 0.0], 1.0, 0.0).unwrap();
        assert!(r.passed);
        assert!(r.lhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sublinear_needs_gradient_norms() {
        let t = trace_of(&[0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(
            check_sublinear_bound(&t, &[0.0], 1.0, 0.0),
            Err(MmError::Unsupported(_))
        ));
    }

    #[test]
    fn linear_rate_rejects_mu_above_l() {
        let t = trace_of(&[1.0, 0.0], &[1.0, 0.0]);
        assert!(check_linear_rate(&t, 2.0, 1.0, 0.0).is_err());
        assert!(check_linear_rate(&t, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn linear_rate_rejects_f_star_above_trace() {
        let t = trace_of(&[1.0, 0.5], &[1.0, 0.5]);
        assert!(matches!(
            check_linear_rate(&t, 1.0, 2.0, 0.9),
            Err(MmError::Inconsistent(_))
        ));
    }

    #[test]
    fn linear_rate_at_n_zero_is_trivial() {
        let t = trace_of(&[1.0], &[3.0]);
        let r = check_linear_rate(&t, 1.0, 4.0, 1.0).unwrap();
        assert!(r.passed());
        assert_eq!(r.statement_form.lhs, vec![2.0]);
        assert_eq!(r.statement_form.rhs, vec![2.0]);
        assert!(r.per_step_form.lhs.is_empty());
    }

    #[test]
    fn exact_minimization_satisfies_both_rate_forms() {
        let t = trace_of(&[2.0, 0.0, 0.0], &[2.0, 0.0, 0.0]);
        let r = check_linear_rate(&t, 1.0, 1.0, 0.0).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn pl_at_minimizer_is_zero_zero() {
        let f = FnObjective::new(|x: &RealVector| 0.5 * x.norm_squared()).with_gradient(|x: &RealVector| x.clone());
        let r = check_pl_inequality(&[RealVector::zeros(3)], &f, 1.0, 1.0, 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.lhs, vec![0.0]);
        assert_eq!(r.rhs, vec![0.0]);
    }

    #[test]
    fn pl_fails_for_quartic() {
        let f = FnObjective::new(|x: &RealVector| x[0].powi(4)).with_gradient(|x: &RealVector| RealVector::from_vec(vec![4.0 * x[0].powi(3)]));
        let pts: Vec<RealVector> = [1e-1, 1e-2, 1e-3].iter().map(|&v| RealVector::from_vec(vec![v])).collect();
        let r = check_pl_inequality(&pts, &f, 1.0, 1.0, 0.0).unwrap();
        // 16x⁶ ≥ x⁴/2 fails once x² < 1/32
        assert!(!r.passed);
    }

    #[test]
    fn exact_step_needs_the_full_budget() {
        // f = x², exact surrogate with modulus 2: one step from 1 to 0
        let t = trace_of(&[1.0, 0.0], &[1.0, 0.0]);
        let r = check_step_summability(&t, 2.0, 0.0).unwrap();
        assert!(r.passed());
        assert_eq!(r.cumulative.worst_margin, 0.0);
        assert!((r.cumulative_half_budget.worst_margin + 0.5).abs() < 1e-15);
        assert!(!r.cumulative_half_budget.passed);
    }

    #[test]
    fn constant_trace_is_summable() {
        let t = trace_of(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]);
        let r = check_step_summability(&t, 1.0, 2.0).unwrap();
        assert!(r.passed());
        assert_eq!(r.partial_sums, vec![0.0, 0.0]);
    }

    #[test]
    fn cycling_trace_is_flagged() {
        let t = trace_of(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]);
        let r = check_step_summability(&t, 1.0, 0.0).unwrap();
        assert!(!r.passed());
        assert_eq!(r.partial_sums, vec![4.0, 8.0, 12.0]);
    }
}
