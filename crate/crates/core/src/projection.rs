//! Euclidean projections, Minkowski-sum projection by block descent, cyclic
//! fixed-point iteration, and property harnesses for (para)contractivity.
//!
//! `minkowski_project` presumes `A + B` is closed (true when one set is
//! compact and the other closed); black-box operators cannot be checked for
//! this, so it is the caller's obligation.

use serde::Serialize;

use crate::engine::StopRule;
use crate::error::{MmError, Result};
use crate::linalg::{ensure_finite_vector, RealMatrix, RealVector};

/// Membership slack applied when a projection's output is tested against its set.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// A Euclidean projection onto a closed convex set.
pub trait ProjectionOperator: Send + Sync {
    fn project(&self, x: &RealVector) -> RealVector;

    fn describe(&self) -> String;

    fn contains(&self, x: &RealVector, tol: f64) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: RealVector,
    radius: f64,
}

impl Ball {
    pub fn new(center: RealVector, radius: f64) -> Result<Self> {
        ensure_finite_vector(&center, "center")?;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MmError::InvalidParameter(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            center: RealVector::zeros(dim),
            radius: 1.0,
        }
    }
}

impl ProjectionOperator for Ball {
    fn project(&self, x: &RealVector) -> RealVector {
        let d = x - &self.center;
        let n = d.norm();
        if n <= self.radius {
            x.clone()
        } else {
            &self.center + d * (self.radius / n)
        }
    }

    fn describe(&self) -> String {
        format!("ball(radius {}, dim {})", self.radius, self.center.len())
    }

    fn contains(&self, x: &RealVector, tol: f64) -> bool {
        (x - &self.center).norm() <= self.radius + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: RealVector,
    hi: RealVector,
}

impl BoxSet {
    pub fn new(lo: RealVector, hi: RealVector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(MmError::Shape(format!("bounds of lengths {} and {}", lo.len(), hi.len())));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(MmError::InvalidParameter("need lo ≤ hi componentwise".into()));
        }
        Ok(Self { lo, hi })
    }
}

impl ProjectionOperator for BoxSet {
    fn project(&self, x: &RealVector) -> RealVector {
        RealVector::from_fn(x.len(), |i, _| x[i].clamp(self.lo[i], self.hi[i]))
    }

    fn describe(&self) -> String {
        format!("box(dim {})", self.lo.len())
    }

    fn contains(&self, x: &RealVector, tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lo[i] - tol && v <= self.hi[i] + tol)
    }
}

/// `{x : Cx = d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSet {
    constraint: RealMatrix,
    rhs: RealVector,
    pinv: RealMatrix,
}

impl AffineSet {
    pub fn new(constraint: RealMatrix, rhs: RealVector) -> Result<Self> {
        if constraint.nrows() != rhs.len() || constraint.ncols() == 0 {
            return Err(MmError::Shape(format!(
                "constraint {}×{} with rhs of length {}",
                constraint.nrows(),
                constraint.ncols(),
                rhs.len()
            )));
        }
        let pinv = constraint
            .clone()
            .pseudo_inverse(1e-12 * constraint.amax().max(1.0))
            .map_err(|e| MmError::Numerical(e.to_string()))?;
        let residual = (&constraint * (&pinv * &rhs) - &rhs).amax();
        if residual > 1e-9 * rhs.amax().max(1.0) {
            return Err(MmError::InvalidParameter("affine set is empty".into()));
        }
        Ok(Self { constraint, rhs, pinv })
    }
}

impl ProjectionOperator for AffineSet {
    fn project(&self, x: &RealVector) -> RealVector {
        x - &self.pinv * (&self.constraint * x - &self.rhs)
    }

    fn describe(&self) -> String {
        format!("affine({} constraints, dim {})", self.rhs.len(), self.constraint.ncols())
    }

    fn contains(&self, x: &RealVector, tol: f64) -> bool {
        (&self.constraint * x - &self.rhs).amax() <= tol * (1.0 + x.amax())
    }
}

/// The probability simplex `{x ≥ 0, Σx = 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuclideanSimplex;

impl ProjectionOperator for EuclideanSimplex {
    fn project(&self, x: &RealVector) -> RealVector {
        let mut u: Vec<f64> = x.iter().copied().collect();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cumsum = 0.0;
        let mut theta = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            cumsum += uj;
            let t = (cumsum - 1.0) / (j + 1) as f64;
            if uj - t > 0.0 {
                theta = t;
            }
        }
        x.map(|v| (v - theta).max(0.0))
    }

    fn describe(&self) -> String {
        "simplex".into()
    }

    fn contains(&self, x: &RealVector, tol: f64) -> bool {
        x.iter().all(|&v| v >= -tol) && (x.sum() - 1.0).abs() <= tol * x.len() as f64
    }
}

pub fn project_ball(ball: &Ball, x: &RealVector) -> RealVector {
    ball.project(x)
}

pub fn project_box(set: &BoxSet, x: &RealVector) -> RealVector {
    set.project(x)
}

pub fn project_affine(set: &AffineSet, x: &RealVector) -> RealVector {
    set.project(x)
}

pub fn project_simplex_euclidean(x: &RealVector) -> RealVector {
    EuclideanSimplex.project(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinkowskiResult {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub converged: bool,
    /// `½‖x − a − b‖²` after every half-step, starting from `(a₀, ·)` with
    /// the first `b` update.
    pub half_step_objectives: Vec<f64>,
}

impl MinkowskiResult {
    pub fn a(&self) -> RealVector {
        RealVector::from_vec(self.a.clone())
    }

    pub fn b(&self) -> RealVector {
        RealVector::from_vec(self.b.clone())
    }

    pub fn sum(&self) -> RealVector {
        self.a() + self.b()
    }
}

/// Nearest point of `A + B` to `x` by alternating `b ← P_B(x − a)`,
/// `a ← P_A(x − b)`. Starts from `a₀ = P_A(x)` unless given.
pub fn minkowski_project(
    x: &RealVector,
    pa: &dyn ProjectionOperator,
    pb: &dyn ProjectionOperator,
    a0: Option<&RealVector>,
    stop: &StopRule,
) -> Result<MinkowskiResult> {
    stop.validate()?;
    ensure_finite_vector(x, "x")?;
    let mut a = match a0 {
        Some(a0) => {
            if a0.len() != x.len() {
                return Err(MmError::Shape(format!("a0 has length {}, x has {}", a0.len(), x.len())));
            }
            a0.clone()
        }
        None => pa.project(x),
    };
    let mut b = pb.project(&(x - &a));
    let half = |a: &RealVector, b: &RealVector| 0.5 * (x - a - b).norm_squared();
    let mut objectives = vec![half(&a, &b)];
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < stop.max_iters {
        iterations += 1;
        let a_next = pa.project(&(x - &b));
        objectives.push(half(&a_next, &b));
        let b_next = pb.project(&(x - &a_next));
        objectives.push(half(&a_next, &b_next));
        step = ((&a_next - &a).norm_squared() + (&b_next - &b).norm_squared()).sqrt();
        a = a_next;
        b = b_next;
        if step <= stop.step_tol {
            converged = true;
            break;
        }
    }
    Ok(MinkowskiResult {
        a: a.as_slice().to_vec(),
        b: b.as_slice().to_vec(),
        iterations,
        final_step_norm: step,
        converged,
        half_step_objectives: objectives,
    })
}

/// The block-descent map `T(a) = P_A[x − P_B(x − a)]`, whose fixed points
/// are the `a`-parts of nearest points of `A + B`.
pub fn minkowski_map<'a>(
    x: &'a RealVector,
    pa: &'a dyn ProjectionOperator,
    pb: &'a dyn ProjectionOperator,
) -> impl Fn(&RealVector) -> RealVector + 'a {
    move |a| pa.project(&(x - pb.project(&(x - a))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointResult {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FixedPointResult {
    pub fn point(&self) -> RealVector {
        RealVector::from_vec(self.point.clone())
    }
}

pub type Map<'a> = &'a dyn Fn(&RealVector) -> RealVector;

/// `x_{n+1} = T_{n mod r}(x_n)` until a full cycle of `r` steps each move at
/// most `stop.step_tol`. Fails once `‖x_n‖` exceeds `divergence_bound`
/// (default `1e8·(1 + ‖x₀‖)`).
pub fn cyclic_fixed_point(
    maps: &[Map<'_>],
    x0: &RealVector,
    stop: &StopRule,
    divergence_bound: Option<f64>,
) -> Result<FixedPointResult> {
    if maps.is_empty() {
        return Err(MmError::InvalidInput("no maps given".into()));
    }
    stop.validate()?;
    ensure_finite_vector(x0, "x0")?;
    let bound = divergence_bound.unwrap_or(1e8 * (1.0 + x0.norm()));
    let r = maps.len();
    let mut x = x0.clone();
    let mut quiet = 0;
    for n in 0..stop.max_iters {
        let next = maps[n % r](&x);
        let norm = next.norm();
        if !(norm <= bound) {
            return Err(MmError::Divergence {
                iterations: n + 1,
                norm,
                bound,
            });
        }
        let step = (&next - &x).norm();
        x = next;
        quiet = if step <= stop.step_tol { quiet + 1 } else { 0 };
        if quiet >= r {
            return Ok(FixedPointResult {
                point: x.as_slice().to_vec(),
                iterations: n + 1,
                converged: true,
            });
        }
    }
    Ok(FixedPointResult {
        point: x.as_slice().to_vec(),
        iterations: stop.max_iters,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub checked: usize,
    pub exempt: usize,
    pub violations: usize,
    /// Largest `‖T(x) − T(y)‖ / ‖x − y‖` (or `‖T(x) − y*‖ / ‖x − y*‖`).
    pub worst_ratio: f64,
    /// Smallest `rhs − lhs` of the checked inequality.
    pub worst_margin: f64,
    pub passed: bool,
}

struct Tally {
    property: &'static str,
    checked: usize,
    exempt: usize,
    violations: usize,
    worst_ratio: f64,
    worst_margin: f64,
}

impl Tally {
    fn new(property: &'static str) -> Self {
        Self {
            property,
            checked: 0,
            exempt: 0,
            violations: 0,
            worst_ratio: 0.0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, ratio: f64, margin: f64, ok: bool) {
        self.checked += 1;
        if ratio.is_finite() {
            self.worst_ratio = self.worst_ratio.max(ratio);
        }
        self.worst_margin = self.worst_margin.min(margin);
        if !ok {
            self.violations += 1;
        }
    }

    fn finish(self) -> PropertyReport {
        PropertyReport {
            property: self.property.into(),
            checked: self.checked,
            exempt: self.exempt,
            violations: self.violations,
            worst_ratio: self.worst_ratio,
            worst_margin: self.worst_margin,
            passed: self.violations == 0,
        }
    }
}

pub const NONEXPANSIVE_TOL: f64 = 1e-10;

/// `‖T(x) − T(y)‖ ≤ ‖x − y‖ + 1e-10` on each pair.
pub fn check_nonexpansive(op: Map<'_>, pairs: &[(RealVector, RealVector)]) -> PropertyReport {
    let mut tally = Tally::new("nonexpansive");
    for (x, y) in pairs {
        let lhs = (op(x) - op(y)).norm();
        let rhs = (x - y).norm();
        let margin = rhs + NONEXPANSIVE_TOL - lhs;
        tally.record(lhs / rhs, rhs - lhs, margin >= 0.0);
    }
    tally.finish()
}

/// `‖P(x) − P(y)‖² ≤ ⟨x − y, P(x) − P(y)⟩ + 1e-10` on each pair.
pub fn check_firmly_nonexpansive(op: Map<'_>, pairs: &[(RealVector, RealVector)]) -> PropertyReport {
    let mut tally = Tally::new("firmly nonexpansive");
    for (x, y) in pairs {
        let d = op(x) - op(y);
        let lhs = d.norm_squared();
        let rhs = (x - y).dot(&d);
        let ratio = d.norm() / (x - y).norm();
        tally.record(ratio, rhs - lhs, rhs + NONEXPANSIVE_TOL - lhs >= 0.0);
    }
    tally.finish()
}

/// Samples within this distance of their image count as fixed.
pub const FIXED_TOL: f64 = 1e-8;
/// Relative strictness margin for the paracontraction inequality.
pub const STRICT_TOL: f64 = 1e-12;

/// `‖T(x) − y‖ < ‖x − y‖ − 1e-12‖x − y‖` for every non-fixed sample, where
/// `y` is a claimed fixed point.
pub fn check_paracontractive(op: Map<'_>, fixed_point: &RealVector, samples: &[RealVector]) -> Result<PropertyReport> {
    let drift = (op(fixed_point) - fixed_point).norm();
    if drift > FIXED_TOL {
        return Err(MmError::Precondition(format!(
            "claimed fixed point moves by {drift:e}"
        )));
    }
    let mut tally = Tally::new("paracontractive");
    for x in samples {
        let tx = op(x);
        if (&tx - x).norm() <= FIXED_TOL {
            tally.exempt += 1;
            continue;
        }
        let lhs = (&tx - fixed_point).norm();
        let rhs = (x - fixed_point).norm();
        let margin = rhs * (1.0 - STRICT_TOL) - lhs;
        tally.record(lhs / rhs, margin, margin > 0.0);
    }
    Ok(tally.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::seeded_samples;

    fn v(xs: &[f64]) -> RealVector {
        RealVector::from_vec(xs.to_vec())
    }

    fn stop() -> StopRule {
        StopRule::new(10_000, 1e-12, 0.0).unwrap()
    }

    #[test]
    fn ball_scales_radially() {
        assert_eq!(Ball::unit(2).project(&v(&[3.0, 0.0])), v(&[1.0, 0.0]));
        assert!(Ball::new(v(&[0.0]), 0.0).is_err());
    }

    #[test]
    fn box_clamps() {
        let b = BoxSet::new(v(&[0.0, 0.0]), v(&[1.0, 1.0])).unwrap();
        assert_eq!(b.project(&v(&[2.0, -1.0])), v(&[1.0, 0.0]));
        assert!(BoxSet::new(v(&[1.0]), v(&[0.0])).is_err());
    }

    #[test]
    fn simplex_projection_matches_grid_oracle() {
        let x = v(&[0.6, 0.6]);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let t = i as f64 * 1e-4;
            let d = (t - 0.6).powi(2) + (1.0 - t - 0.6).powi(2);
            if d < best.0 {
                best = (d, t);
            }
        }
        let p = project_simplex_euclidean(&x);
        assert!((p[0] - best.1).abs() < 1e-4);
        assert!((p - v(&[0.5, 0.5])).amax() < 1e-15);
    }

    #[test]
    fn simplex_projection_keeps_members() {
        let x = v(&[0.2, 0.3, 0.5]);
        assert!((project_simplex_euclidean(&x) - &x).amax() < 1e-15);
        let p = project_simplex_euclidean(&v(&[3.0, -1.0, 0.5]));
        assert_eq!(p, v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn affine_projection_onto_line() {
        // x + y = 2
        let s = AffineSet::new(RealMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[2.0])).unwrap();
        let p = s.project(&v(&[0.0, 0.0]));
        assert!((p - v(&[1.0, 1.0])).amax() < 1e-14);
        let empty = AffineSet::new(RealMatrix::from_row_slice(2, 1, &[1.0, 1.0]), v(&[0.0, 1.0]));
        assert!(empty.is_err());
    }

    #[test]
    fn minkowski_interior_point_is_reached() {
        let ball = Ball::unit(2);
        let x = v(&[1.0, 1.0]);
        let r = minkowski_project(&x, &ball, &ball, None, &stop()).unwrap();
        assert!((&x - r.sum()).norm() <= 1e-8);
        assert!(ball.contains(&r.a(), MEMBERSHIP_TOL) && ball.contains(&r.b(), MEMBERSHIP_TOL));
    }

    #[test]
    fn minkowski_far_point_matches_brute_force() {
        let ball = Ball::unit(2);
        let x = v(&[4.0, 0.0]);
        let r = minkowski_project(&x, &ball, &ball, None, &stop()).unwrap();
        assert!((r.sum() - v(&[2.0, 0.0])).amax() < 1e-8);
        // brute force over boundary pairs at angular step 1e-3
        let n = (2.0 * std::f64::consts::PI / 1e-3) as usize;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in (0..n).step_by(7) {
            let (sa, ca) = (i as f64 * 1e-3).sin_cos();
            for j in (0..n).step_by(7) {
                let (sb, cb) = (j as f64 * 1e-3).sin_cos();
                let s = (ca + cb, sa + sb);
                let d = (4.0 - s.0).powi(2) + s.1.powi(2);
                if d < best.0 {
                    best = (d, s.0, s.1);
                }
            }
        }
        assert!((best.1 - 2.0).abs() < 1e-6 && best.2.abs() < 1e-6);
    }

    #[test]
    fn minkowski_zero_point() {
        let ball = Ball::unit(3);
        let r = minkowski_project(&RealVector::zeros(3), &ball, &ball, None, &stop()).unwrap();
        assert_eq!(r.a(), RealVector::zeros(3));
        assert_eq!(r.b(), RealVector::zeros(3));
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn minkowski_half_steps_do_not_increase() {
        let a = BoxSet::new(v(&[-1.0, 0.0]), v(&[0.0, 2.0])).unwrap();
        let b = Ball::new(v(&[3.0, -1.0]), 0.5).unwrap();
        let r = minkowski_project(&v(&[-4.0, 7.0]), &a, &b, Some(&v(&[5.0, 5.0])), &stop()).unwrap();
        for w in r.half_step_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn cyclic_single_projection() {
        let ball = Ball::unit(2);
        let t = |x: &RealVector| ball.project(x);
        let r = cyclic_fixed_point(&[&t], &v(&[5.0, 0.0]), &stop(), None).unwrap();
        assert_eq!(r.point(), v(&[1.0, 0.0]));
        assert!(r.converged);
    }

    #[test]
    fn cyclic_alternating_lines_hits_intersection() {
        // y = x and y = 2 − x meet at (1, 1)
        let l1 = AffineSet::new(RealMatrix::from_row_slice(1, 2, &[1.0, -1.0]), v(&[0.0])).unwrap();
        let l2 = AffineSet::new(RealMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[2.0])).unwrap();
        let t1 = |x: &RealVector| l1.project(x);
        let t2 = |x: &RealVector| l2.project(x);
        let r = cyclic_fixed_point(&[&t1, &t2], &v(&[7.0, -3.0]), &stop(), None).unwrap();
        assert!((r.point() - v(&[1.0, 1.0])).amax() < 1e-10);
    }

    #[test]
    fn cyclic_identity_makes_no_progress() {
        let id = |x: &RealVector| x.clone();
        let x0 = v(&[2.0, 3.0]);
        let r = cyclic_fixed_point(&[&id], &x0, &stop(), None).unwrap();
        assert_eq!(r.point(), x0);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn cyclic_divergence_detected() {
        let double = |x: &RealVector| x * 2.0;
        let r = cyclic_fixed_point(&[&double], &v(&[1.0]), &stop(), Some(100.0));
        assert!(matches!(r, Err(MmError::Divergence { iterations: 7, .. })));
    }

    fn pairs(dim: usize, n: usize, seed: u64) -> Vec<(RealVector, RealVector)> {
        let a = seeded_samples(&RealVector::zeros(dim), n, 3.0, seed);
        let b = seeded_samples(&RealVector::zeros(dim), n, 3.0, seed + 1);
        a.into_iter().zip(b).collect()
    }

    #[test]
    fn scaling_is_expansive() {
        let double = |x: &RealVector| x * 2.0;
        let r = check_nonexpansive(&double, &pairs(3, 20, 1));
        assert!(!r.passed);
        assert!((r.worst_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_is_nonexpansive() {
        let ball = Ball::unit(3);
        let p = |x: &RealVector| ball.project(x);
        assert!(check_nonexpansive(&p, &pairs(3, 200, 2)).passed);
        assert!(check_firmly_nonexpansive(&p, &pairs(3, 200, 3)).passed);
    }

    #[test]
    fn composed_map_is_nonexpansive() {
        let a = Ball::unit(2);
        let b = BoxSet::new(v(&[0.0, 0.0]), v(&[1.0, 2.0])).unwrap();
        let x = v(&[4.0, -3.0]);
        let t = minkowski_map(&x, &a, &b);
        assert!(check_nonexpansive(&t, &pairs(2, 300, 4)).passed);
    }

    #[test]
    fn rotation_is_not_paracontractive() {
        let rot = |x: &RealVector| v(&[-x[1], x[0]]);
        let r = check_paracontractive(&rot, &v(&[0.0, 0.0]), &seeded_samples(&v(&[0.0, 0.0]), 20, 1.0, 5)).unwrap();
        assert!(!r.passed);
        assert!((r.worst_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_projection_is_paracontractive() {
        let ball = Ball::unit(2);
        let p = |x: &RealVector| ball.project(x);
        let samples: Vec<RealVector> = seeded_samples(&v(&[0.0, 0.0]), 100, 4.0, 6);
        let r = check_paracontractive(&p, &v(&[0.5, 0.0]), &samples).unwrap();
        assert!(r.passed);
        assert!(r.exempt > 0 && r.checked > 0);
    }

    #[test]
    fn paracontraction_needs_a_fixed_point() {
        let ball = Ball::unit(2);
        let p = |x: &RealVector| ball.project(x);
        let r = check_paracontractive(&p, &v(&[3.0, 0.0]), &[]);
        assert!(matches!(r, Err(MmError::Precondition(_))));
    }
}
