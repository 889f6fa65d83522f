//! Test objectives and the surrogate factories that wire them to the engine.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bregman::{
    bregman_divergence, exponentiated_gradient_step, proximal_gradient_step, BregmanGeometry, CompositeProblem,
    KlSimplex, BregmanProjector, L1Norm, NegativeEntropy, ProxGradGeometry,
};
use crate::engine::{Objective, Surrogate, SurrogateFactory, SurrogateStep};
use crate::error::{MmError, Result};
use crate::linalg::{RealMatrix, RealVector};

/// `g(x|x_n) = f(x_n) + ⟨∇f(x_n), x − x_n⟩ + (L/2)‖x − x_n‖²`.
pub struct QuadraticUpperBound {
    f: Arc<dyn Objective>,
    smoothness: f64,
}

impl QuadraticUpperBound {
    /// Uses the smoothness constant the objective carries.
    pub fn new(f: Arc<dyn Objective>) -> Result<Self> {
        let l = f
            .smoothness()
            .ok_or_else(|| MmError::Unsupported("objective carries no smoothness constant".into()))?;
        Self::with_smoothness(f, l)
    }

    /// Uses a caller-supplied curvature, which need not be a valid bound.
    pub fn with_smoothness(f: Arc<dyn Objective>, smoothness: f64) -> Result<Self> {
        if !(smoothness > 0.0) || !smoothness.is_finite() {
            return Err(MmError::InvalidParameter(format!(
                "smoothness must be positive, got {smoothness}"
            )));
        }
        Ok(Self { f, smoothness })
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

struct QuadraticSurrogate {
    anchor: RealVector,
    f_anchor: f64,
    grad: RealVector,
    smoothness: f64,
}

impl Surrogate for QuadraticSurrogate {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        let d = x - &self.anchor;
        self.f_anchor + self.grad.dot(&d) + 0.5 * self.smoothness * d.norm_squared()
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        Ok(SurrogateStep::new(&self.anchor - &self.grad / self.smoothness))
    }

    fn minimize_with_proximal(&self, rho: f64) -> Result<SurrogateStep> {
        Ok(SurrogateStep::new(&self.anchor - &self.grad / (self.smoothness + rho)))
    }

    fn gradient_at_anchor(&self) -> Option<RealVector> {
        Some(self.grad.clone())
    }
}

impl SurrogateFactory for QuadraticUpperBound {
    fn build<'a>(&'a self, anchor: &RealVector, _iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        let grad = self
            .f
            .gradient(anchor)
            .ok_or_else(|| MmError::Unsupported("objective has no gradient".into()))?;
        Ok(Box::new(QuadraticSurrogate {
            anchor: anchor.clone(),
            f_anchor: self.f.value(anchor),
            grad,
            smoothness: self.smoothness,
        }))
    }
}

/// `f(x) = ½xᵀHx − bᵀx` with constants certified by eigen-decomposition.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    hessian: RealMatrix,
    linear: RealVector,
    mu: f64,
    smoothness: f64,
    minimizer: Option<(RealVector, f64)>,
}

impl QuadraticProblem {
    pub fn new(hessian: RealMatrix, linear: RealVector) -> Result<Self> {
        let d = hessian.nrows();
        if d == 0 || hessian.ncols() != d || linear.len() != d {
            return Err(MmError::Shape(format!(
                "hessian {}×{} with linear term of length {}",
                hessian.nrows(),
                hessian.ncols(),
                linear.len()
            )));
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-12 * hessian.amax().max(1.0) {
            return Err(MmError::InvalidInput(format!("hessian not symmetric (residual {asym:e})")));
        }
        let eig = hessian.clone().symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo < -1e-12 * hi.abs().max(1.0) {
            return Err(MmError::InvalidInput(format!("hessian has negative eigenvalue {lo}")));
        }
        if !(hi > 0.0) {
            return Err(MmError::InvalidInput("hessian is zero".into()));
        }
        let mu = lo.max(0.0);
        let minimizer = if mu > 0.0 {
            let x = hessian
                .clone()
                .cholesky()
                .ok_or_else(|| MmError::Numerical("cholesky failed on a positive definite hessian".into()))?
                .solve(&linear);
            let v = -0.5 * linear.dot(&x);
            Some((x, v))
        } else {
            None
        };
        Ok(Self {
            hessian,
            linear,
            mu,
            smoothness: hi,
            minimizer,
        })
    }

    /// `H = Q diag(λ) Qᵀ` with `λ` evenly spaced on `[lo, hi]` and `Q` a
    /// seeded random rotation; `b` is standard normal.
    pub fn seeded(dim: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if dim == 0 || !(0.0 <= lo && lo <= hi && hi > 0.0) {
            return Err(MmError::InvalidParameter(format!(
                "need dim ≥ 1 and 0 ≤ lo ≤ hi, hi > 0; got dim {dim}, [{lo}, {hi}]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = RealMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let eigs = RealVector::from_fn(dim, |i, _| {
            if dim == 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (dim - 1) as f64
            }
        });
        let mut h = &q * RealMatrix::from_diagonal(&eigs) * q.transpose();
        h = (&h + h.transpose()) * 0.5;
        let b = RealVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        Self::new(h, b)
    }

    pub fn hessian(&self) -> &RealMatrix {
        &self.hessian
    }

    pub fn linear(&self) -> &RealVector {
        &self.linear
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> f64 {
        self.smoothness
    }
}

impl Objective for QuadraticProblem {
    fn value(&self, x: &RealVector) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) - self.linear.dot(x)
    }

    fn gradient(&self, x: &RealVector) -> Option<RealVector> {
        Some(&self.hessian * x - &self.linear)
    }

    fn strong_convexity(&self) -> Option<f64> {
        (self.mu > 0.0).then_some(self.mu)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn known_minimum(&self) -> Option<(RealVector, f64)> {
        self.minimizer.clone()
    }
}

/// `f(x) = ⟨c, x⟩`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub coefficients: RealVector,
}

impl LinearObjective {
    pub fn new(coefficients: RealVector) -> Result<Self> {
        if coefficients.is_empty() || !coefficients.iter().all(|c| c.is_finite()) {
            return Err(MmError::InvalidInput("coefficients must be finite and nonempty".into()));
        }
        Ok(Self { coefficients })
    }

    /// Index of the smallest coefficient (the optimal simplex vertex).
    pub fn argmin_vertex(&self) -> usize {
        self.coefficients.argmin().0
    }
}

impl Objective for LinearObjective {
    fn value(&self, x: &RealVector) -> f64 {
        self.coefficients.dot(x)
    }

    fn gradient(&self, _x: &RealVector) -> Option<RealVector> {
        Some(self.coefficients.clone())
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// `½‖Ax − y‖²`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    design: RealMatrix,
    response: RealVector,
    smoothness: f64,
}

impl LeastSquares {
    pub fn new(design: RealMatrix, response: RealVector) -> Result<Self> {
        if design.nrows() != response.len() || design.ncols() == 0 {
            return Err(MmError::Shape(format!(
                "design {}×{} with response of length {}",
                design.nrows(),
                design.ncols(),
                response.len()
            )));
        }
        let gram = design.transpose() * &design;
        let smoothness = gram.symmetric_eigen().eigenvalues.max();
        if !(smoothness > 0.0) {
            return Err(MmError::InvalidInput("design is zero".into()));
        }
        Ok(Self {
            design,
            response,
            smoothness,
        })
    }

    pub fn design(&self) -> &RealMatrix {
        &self.design
    }

    pub fn response(&self) -> &RealVector {
        &self.response
    }
}

impl Objective for LeastSquares {
    fn value(&self, x: &RealVector) -> f64 {
        0.5 * (&self.design * x - &self.response).norm_squared()
    }

    fn gradient(&self, x: &RealVector) -> Option<RealVector> {
        Some(self.design.transpose() * (&self.design * x - &self.response))
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }
}

/// A seeded lasso instance `½‖Ax − y‖² + λ‖x‖₁`.
pub struct LassoProblem {
    pub least_squares: Arc<LeastSquares>,
    pub lambda: f64,
    pub composite: Arc<CompositeProblem>,
}

impl LassoProblem {
    pub fn new(design: RealMatrix, response: RealVector, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(MmError::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        let least_squares = Arc::new(LeastSquares::new(design, response)?);
        let composite = Arc::new(CompositeProblem::new(least_squares.clone(), Arc::new(L1Norm { lambda }))?);
        Ok(Self {
            least_squares,
            lambda,
            composite,
        })
    }

    /// 40 observations, 20 features, 5-sparse truth, λ = 0.1‖Aᵀy‖_∞.
    pub fn desk(seed: u64) -> Result<Self> {
        let (n, d) = (40, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = RealMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let truth = RealVector::from_fn(d, |i, _| if i % 4 == 0 { 1.0 + i as f64 / 10.0 } else { 0.0 });
        let noise = RealVector::from_fn(n, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z });
        let y = &a * truth + noise;
        let lambda = 0.1 * (a.transpose() * &y).amax();
        Self::new(a, y, lambda)
    }

    pub fn dim(&self) -> usize {
        self.least_squares.design.ncols()
    }

    pub fn lipschitz(&self) -> f64 {
        self.least_squares.smoothness
    }

    pub fn value(&self, x: &RealVector) -> f64 {
        self.composite.value(x)
    }

    /// Largest violation of `0 ∈ ∇f₀(x) + λ∂‖x‖₁`, coordinate by coordinate.
    pub fn optimality_residual(&self, x: &RealVector) -> f64 {
        let g = self.least_squares.gradient(x).expect("least squares has a gradient");
        x.iter()
            .zip(g.iter())
            .map(|(&xi, &gi)| {
                if xi != 0.0 {
                    (gi + self.lambda * xi.signum()).abs()
                } else {
                    (gi.abs() - self.lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Cyclic coordinate descent run to machine precision; an independent
    /// reference for the proximal gradient iterates.
    pub fn coordinate_descent(&self, max_sweeps: usize) -> RealVector {
        let a = &self.least_squares.design;
        let y = &self.least_squares.response;
        let d = a.ncols();
        let col_sq: Vec<f64> = (0..d).map(|j| a.column(j).norm_squared()).collect();
        let mut x = RealVector::zeros(d);
        let mut resid = y.clone();
        for _ in 0..max_sweeps {
            let mut biggest = 0.0f64;
            for j in 0..d {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let rho = a.column(j).dot(&resid) + col_sq[j] * x[j];
                let new = crate::bregman::soft_threshold(rho, self.lambda) / col_sq[j];
                let delta = new - x[j];
                if delta != 0.0 {
                    resid.axpy(-delta, &a.column(j).into_owned(), 1.0);
                    x[j] = new;
                    biggest = biggest.max(delta.abs());
                }
            }
            if biggest < 1e-16 {
                break;
            }
        }
        x
    }
}

/// How a Bregman surrogate `f + B_φ(·‖x_n)` is minimized.
enum Minimizer {
    /// `φ = ‖x‖²/(2α) − f₀`: a single proximal step.
    ProxGrad { problem: Arc<CompositeProblem>, alpha: f64 },
    /// Affine `f` on the simplex with `φ = ψ/α`: an exponentiated gradient step.
    Entropic { alpha: f64 },
    /// Proximal gradient on `f₀ + φ − ⟨∇φ(x_n), ·⟩ + h` to a gradient-mapping tolerance.
    Inner {
        problem: Arc<CompositeProblem>,
        tol: f64,
        max_iters: usize,
    },
}

/// Default tolerance of the inner Bregman solver.
pub const INNER_TOL: f64 = 1e-10;

/// The surrogate `g(x|x_n) = f(x) + B_φ(x‖x_n)`.
pub struct BregmanFactory {
    f: Arc<dyn Objective>,
    geometry: Arc<dyn BregmanGeometry>,
    minimizer: Minimizer,
}

impl BregmanFactory {
    /// The proximal gradient geometry; minimization is closed form.
    pub fn prox_grad(problem: Arc<CompositeProblem>, alpha: f64) -> Result<Self> {
        let geometry = Arc::new(ProxGradGeometry::new(problem.smooth.clone(), alpha)?);
        Ok(Self {
            f: problem.clone(),
            geometry,
            minimizer: Minimizer::ProxGrad { problem, alpha },
        })
    }

    /// Negative entropy scaled by `1/α` on the simplex, for affine `f`.
    pub fn entropic_simplex(f: Arc<dyn Objective>, alpha: f64) -> Result<Self> {
        if !f.is_affine() {
            return Err(MmError::Unsupported(
                "closed-form entropic minimization needs an affine objective".into(),
            ));
        }
        Ok(Self {
            f,
            geometry: Arc::new(NegativeEntropy::new(1.0 / alpha)?),
            minimizer: Minimizer::Entropic { alpha },
        })
    }

    /// Any geometry with a known smoothness constant, minimized by an inner
    /// proximal gradient loop.
    pub fn with_inner_solver(
        problem: Arc<CompositeProblem>,
        geometry: Arc<dyn BregmanGeometry>,
        tol: f64,
    ) -> Result<Self> {
        if geometry.smoothness().is_none() {
            return Err(MmError::Unsupported(format!(
                "{} has no smoothness constant for the inner solver",
                geometry.name()
            )));
        }
        if !(tol > 0.0) {
            return Err(MmError::InvalidParameter(format!("inner tolerance must be positive, got {tol}")));
        }
        Ok(Self {
            f: problem.clone(),
            geometry,
            minimizer: Minimizer::Inner {
                problem,
                tol,
                max_iters: 100_000,
            },
        })
    }

    pub fn geometry(&self) -> &dyn BregmanGeometry {
        self.geometry.as_ref()
    }
}

/// `f + B_φ` with the inner solver at the default tolerance.
pub fn bregman_factory(problem: Arc<CompositeProblem>, geometry: Arc<dyn BregmanGeometry>) -> Result<BregmanFactory> {
    BregmanFactory::with_inner_solver(problem, geometry, INNER_TOL)
}

struct BregmanSurrogate<'a> {
    factory: &'a BregmanFactory,
    anchor: RealVector,
}

impl BregmanSurrogate<'_> {
    fn inner_solve(&self, problem: &CompositeProblem, tol: f64, max_iters: usize) -> Result<RealVector> {
        let geo = self.factory.geometry.as_ref();
        let l = problem.smoothness() + geo.smoothness().expect("checked at construction");
        let step = 1.0 / l;
        let shift = geo.gradient(&self.anchor);
        let mut x = self.anchor.clone();
        for _ in 0..max_iters {
            let g = problem.smooth_gradient(&x)? + geo.gradient(&x) - &shift;
            let next = problem.nonsmooth.prox(&(&x - g * step), step);
            let mapping = (&next - &x).norm() / step;
            x = next;
            if mapping <= tol {
                return Ok(x);
            }
        }
        Err(MmError::Numerical(format!(
            "inner Bregman solve missed tolerance {tol:e} after {max_iters} iterations"
        )))
    }
}

impl Surrogate for BregmanSurrogate<'_> {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        if matches!(self.factory.minimizer, Minimizer::Entropic { .. }) && !KlSimplex.contains(x) {
            return f64::INFINITY;
        }
        match bregman_divergence(self.factory.geometry.as_ref(), x, &self.anchor) {
            Ok(d) => self.factory.f.value(x) + d,
            Err(_) => f64::INFINITY,
        }
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        let point = match &self.factory.minimizer {
            Minimizer::ProxGrad { problem, alpha } => proximal_gradient_step(problem, &self.anchor, *alpha, false)?,
            Minimizer::Entropic { alpha } => exponentiated_gradient_step(self.factory.f.as_ref(), &self.anchor, *alpha)?,
            Minimizer::Inner {
                problem,
                tol,
                max_iters,
            } => self.inner_solve(problem, *tol, *max_iters)?,
        };
        Ok(SurrogateStep::new(point))
    }

    fn gradient_at_anchor(&self) -> Option<RealVector> {
        self.factory.f.gradient(&self.anchor)
    }
}

impl SurrogateFactory for BregmanFactory {
    fn build<'a>(&'a self, anchor: &RealVector, _iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        if !self.geometry.in_domain(anchor) {
            return Err(MmError::Domain(format!("anchor outside dom {}", self.geometry.name())));
        }
        Ok(Box::new(BregmanSurrogate {
            factory: self,
            anchor: anchor.clone(),
        }))
    }
}

/// Uniformly random points of the open simplex (normalized exponentials).
pub fn seeded_simplex_points(dim: usize, count: usize, seed: u64) -> Vec<RealVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let e = RealVector::from_fn(dim, |_, _| {
                let u: f64 = rand::Rng::random_range(&mut rng, f64::MIN_POSITIVE..1.0);
                -u.ln()
            });
            let s = e.sum();
            e / s
        })
        .collect()
}

/// Coefficients of the `simplex-linear` problem; the minimum sits at index 3.
pub fn simplex_linear() -> LinearObjective {
    LinearObjective::new(RealVector::from_vec(vec![0.9, 0.3, 0.5, 0.1, 0.7])).expect("finite coefficients")
}

/// The `quad-small` problem: dimension 10, spectrum evenly spread on [1, 4].
pub fn quad_small(seed: u64) -> QuadraticProblem {
    QuadraticProblem::seeded(10, 1.0, 4.0, seed).expect("valid parameters")
}
