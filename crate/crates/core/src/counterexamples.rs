//! Two MM schemes that cycle instead of converging, and the viscosity fix.
//!
//! * A bivariate-normal EM iteration whose printed update map oscillates
//!   between `(σ², ρ) = (3, ±1/√3)`.
//! * Ten Berge's block relaxation for generalized CCA (MAXDIFF) on a
//!   three-block instance, which cycles through four states when the
//!   set-valued block update picks the maximizer farthest from the current
//!   block.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::engine::{Objective, Surrogate, SurrogateFactory, SurrogateStep};
use crate::error::{MmError, Result};
use crate::linalg::{
    ensure_finite_matrix, polar_factor, select_maximizer, stiefel_residual, trace_maximizer_set, BranchPolicy,
    RealMatrix, RealVector, DEFAULT_RANK_TOL,
};

/// State of the EM oscillation example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaidaState {
    pub sigma2: f64,
    pub rho: f64,
}

impl VaidaState {
    pub fn new(sigma2: f64, rho: f64) -> Result<Self> {
        let s = Self { sigma2, rho };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(MmError::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(MmError::Domain(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }

    /// The starting point `(3, 1/√3)`.
    pub fn reference_start() -> Self {
        Self {
            sigma2: 3.0,
            rho: 1.0 / 3f64.sqrt(),
        }
    }

    pub fn to_vector(self) -> RealVector {
        RealVector::from_vec(vec![self.sigma2, self.rho])
    }

    pub fn from_vector(x: &RealVector) -> Result<Self> {
        if x.len() != 2 {
            return Err(MmError::Shape(format!("state vector has length {}, expected 2", x.len())));
        }
        Self::new(x[0], x[1])
    }

    /// `u = σ²(1 − ρ²)`.
    fn conditional_variance(self) -> f64 {
        self.sigma2 * (1.0 - self.rho * self.rho)
    }
}

/// `8 log σ² + 18/σ² + 2 log(σ²(1 − ρ²)) + 4/(σ²(1 − ρ²))`.
pub fn vaida_objective(s: VaidaState) -> Result<f64> {
    s.validate()?;
    let u = s.conditional_variance();
    Ok(8.0 * s.sigma2.ln() + 18.0 / s.sigma2 + 2.0 * u.ln() + 4.0 / u)
}

/// Branch taken for the correlation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignRule {
    /// `ρ_{n+1} = −sgn(ρ_n)·√(…)` with `sgn(0) = +1`.
    AlternatingPaper,
    /// Always the positive root.
    PositiveBranch,
}

/// `σ² ← 3`, `ρ ← ±√(2/3 − σ²(1 − ρ²)/6)`.
pub fn vaida_step(s: VaidaState, rule: SignRule) -> Result<VaidaState> {
    s.validate()?;
    let radicand = 2.0 / 3.0 - s.conditional_variance() / 6.0;
    if radicand < 0.0 {
        return Err(MmError::Domain(format!("negative radicand {radicand}")));
    }
    let root = radicand.sqrt();
    let rho = match rule {
        SignRule::AlternatingPaper => {
            if s.rho >= 0.0 {
                -root
            } else {
                root
            }
        }
        SignRule::PositiveBranch => root,
    };
    VaidaState::new(3.0, rho)
}

/// The EM objective over `(σ², ρ)`, `+∞` outside the domain.
#[derive(Debug, Clone, Copy, Default)]
pub struct VaidaObjective;

impl Objective for VaidaObjective {
    fn value(&self, x: &RealVector) -> f64 {
        VaidaState::from_vector(x)
            .and_then(vaida_objective)
            .unwrap_or(f64::INFINITY)
    }
}

/// EM surrogate `f(x) + 2[log(u/u_n) + u_n/u − 1]`, minimized by the printed
/// update map.
#[derive(Debug, Clone, Copy)]
pub struct VaidaFactory {
    pub rule: SignRule,
}

struct VaidaSurrogate {
    anchor: RealVector,
    state: VaidaState,
    rule: SignRule,
}

impl Surrogate for VaidaSurrogate {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        let Ok(s) = VaidaState::from_vector(x) else {
            return f64::INFINITY;
        };
        let Ok(f) = vaida_objective(s) else {
            return f64::INFINITY;
        };
        let ratio = self.state.conditional_variance() / s.conditional_variance();
        f + 2.0 * (ratio - 1.0 - ratio.ln())
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        let next = vaida_step(self.state, self.rule)?;
        Ok(SurrogateStep::new(next.to_vector()))
    }
}

impl SurrogateFactory for VaidaFactory {
    fn build<'a>(&'a self, anchor: &RealVector, _iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        Ok(Box::new(VaidaSurrogate {
            anchor: anchor.clone(),
            state: VaidaState::from_vector(anchor)?,
            rule: self.rule,
        }))
    }
}

/// Stiefel membership tolerance for block states.
pub const STIEFEL_TOL: f64 = 1e-10;

/// Data blocks `A_i` (`n × d_i`) sharing a row count, and the block rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxdiffProblem {
    blocks: Vec<RealMatrix>,
    rank: usize,
    /// `cross[i][j] = A_iᵀ A_j`.
    cross: Vec<Vec<RealMatrix>>,
}

impl MaxdiffProblem {
    pub fn new(blocks: Vec<RealMatrix>, rank: usize) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(MmError::InvalidInput("need at least two blocks".into()));
        }
        let n = blocks[0].nrows();
        for (i, a) in blocks.iter().enumerate() {
            ensure_finite_matrix(a, "data block")?;
            if a.nrows() != n {
                return Err(MmError::Shape(format!("block {i} has {} rows, expected {n}", a.nrows())));
            }
            if a.ncols() < rank {
                return Err(MmError::Shape(format!(
                    "block {i} has {} columns, fewer than rank {rank}",
                    a.ncols()
                )));
            }
        }
        if rank == 0 {
            return Err(MmError::InvalidParameter("rank must be at least 1".into()));
        }
        let cross = blocks
            .iter()
            .map(|ai| blocks.iter().map(|aj| ai.transpose() * aj).collect())
            .collect();
        Ok(Self { blocks, rank, cross })
    }

    pub fn blocks(&self) -> &[RealMatrix] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cross(&self, i: usize, j: usize) -> &RealMatrix {
        &self.cross[i][j]
    }

    /// Shapes `(d_i, r)` of the blocks `O_i`.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|a| (a.ncols(), self.rank)).collect()
    }

    /// `B_i = Σ_{j≠i} A_iᵀ A_j O_j`.
    pub fn block_gradient(&self, s: &StiefelBlockSet, i: usize) -> RealMatrix {
        let (d, r) = (self.blocks[i].ncols(), self.rank);
        let mut b = RealMatrix::zeros(d, r);
        for (j, oj) in s.blocks.iter().enumerate() {
            if j != i {
                b += &self.cross[i][j] * oj;
            }
        }
        b
    }

    fn check_shapes(&self, s: &StiefelBlockSet) -> Result<()> {
        if s.blocks.len() != self.blocks.len() {
            return Err(MmError::Shape(format!(
                "{} blocks given for a {}-block problem",
                s.blocks.len(),
                self.blocks.len()
            )));
        }
        for (i, (o, (d, r))) in s.blocks.iter().zip(self.block_shapes()).enumerate() {
            if o.shape() != (d, r) {
                return Err(MmError::Shape(format!(
                    "block {i} is {}x{}, expected {d}x{r}",
                    o.nrows(),
                    o.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Matrices `O_1..O_m` with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelBlockSet {
    blocks: Vec<RealMatrix>,
}

impl StiefelBlockSet {
    pub fn new(blocks: Vec<RealMatrix>) -> Result<Self> {
        for (i, o) in blocks.iter().enumerate() {
            ensure_finite_matrix(o, "block")?;
            if o.nrows() < o.ncols() {
                return Err(MmError::Shape(format!("block {i} is wider than tall")));
            }
            let res = stiefel_residual(o);
            if res > STIEFEL_TOL {
                return Err(MmError::Domain(format!(
                    "block {i} is off the Stiefel manifold (residual {res:e})"
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[RealMatrix] {
        &self.blocks
    }

    /// Largest `|OᵀO − I|` entry over all blocks.
    pub fn stiefel_residual(&self) -> f64 {
        self.blocks.iter().map(stiefel_residual).fold(0.0, f64::max)
    }

    /// Column-major concatenation of the blocks.
    pub fn to_vector(&self) -> RealVector {
        let data: Vec<f64> = self.blocks.iter().flat_map(|o| o.as_slice().to_vec()).collect();
        RealVector::from_vec(data)
    }

    /// Inverse of [`to_vector`](Self::to_vector); does not check orthonormality.
    pub fn from_vector_unchecked(x: &RealVector, shapes: &[(usize, usize)]) -> Result<Self> {
        let total: usize = shapes.iter().map(|(d, r)| d * r).sum();
        if x.len() != total {
            return Err(MmError::Shape(format!("vector of length {} for {total} entries", x.len())));
        }
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(d, r)| {
                let m = RealMatrix::from_column_slice(d, r, &x.as_slice()[offset..offset + d * r]);
                offset += d * r;
                m
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn from_vector(x: &RealVector, shapes: &[(usize, usize)]) -> Result<Self> {
        Self::new(Self::from_vector_unchecked(x, shapes)?.blocks)
    }

    /// Largest entrywise difference to another block set of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn negated(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(|o| -o).collect(),
        }
    }
}

/// `Σ_{i<j} tr(O_iᵀ A_iᵀ A_j O_j)`.
pub fn maxdiff_objective(p: &MaxdiffProblem, s: &StiefelBlockSet) -> Result<f64> {
    p.check_shapes(s)?;
    let m = p.num_blocks();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (s.blocks[i].transpose() * p.cross(i, j) * &s.blocks[j]).trace();
        }
    }
    Ok(total)
}

/// `J`, the first two canonical vectors of `ℝ³` as columns.
pub fn matrix_j() -> RealMatrix {
    RealMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

/// `K`, `J` with its columns swapped.
pub fn matrix_k() -> RealMatrix {
    RealMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0])
}

/// Blocks `A₁ = [I, I, 0]ᵀ`, `A₂ = [−I, 0, I]ᵀ`, `A₃ = [0, I, I]ᵀ` with
/// `I = I₃` and rank 2, started at `(J, K, J)`.
pub fn build_tenberge_instance() -> (MaxdiffProblem, StiefelBlockSet) {
    let d = 3;
    let stack = |parts: [f64; 3]| {
        let mut a = RealMatrix::zeros(3 * d, d);
        for (k, &c) in parts.iter().enumerate() {
            for t in 0..d {
                a[(k * d + t, t)] = c;
            }
        }
        a
    };
    let blocks = vec![stack([1.0, 1.0, 0.0]), stack([-1.0, 0.0, 1.0]), stack([0.0, 1.0, 1.0])];
    let problem = MaxdiffProblem::new(blocks, 2).expect("well-formed instance");
    let start = StiefelBlockSet::new(vec![matrix_j(), matrix_k(), matrix_j()]).expect("orthonormal start");
    (problem, start)
}

/// The four end-of-sweep states `(J,K,J) → (−K,J,−K) → (−J,−K,−J) → (K,−J,K)`.
pub fn tenberge_cycle_states() -> [StiefelBlockSet; 4] {
    let (j, k) = (matrix_j(), matrix_k());
    let set = |a: &RealMatrix, b: &RealMatrix, c: &RealMatrix| {
        StiefelBlockSet::new(vec![a.clone(), b.clone(), c.clone()]).expect("orthonormal")
    };
    [
        set(&j, &k, &j),
        set(&-&k, &j, &-&k),
        set(&-&j, &-&k, &-&j),
        set(&k, &-&j, &k),
    ]
}

/// How each block update chooses among tied maximizers.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepPolicy {
    Canonical,
    /// The maximizer nearest the block being replaced.
    NearestToCurrent,
    /// The maximizer nearest the negated current block, i.e. farthest from it.
    /// From (J, K, J) this produces the four-state cycle.
    OppositeOfCurrent,
    /// Fixed per-block targets.
    Targets(Vec<RealMatrix>),
}

impl SweepPolicy {
    fn branch(&self, i: usize, current: &RealMatrix) -> Result<BranchPolicy> {
        Ok(match self {
            SweepPolicy::Canonical => BranchPolicy::Canonical,
            SweepPolicy::NearestToCurrent => BranchPolicy::NearestTo(current.clone()),
            SweepPolicy::OppositeOfCurrent => BranchPolicy::NearestTo(-current),
            SweepPolicy::Targets(t) => BranchPolicy::NearestTo(
                t.get(i)
                    .ok_or_else(|| MmError::Shape(format!("no target for block {i}")))?
                    .clone(),
            ),
        })
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "canonical" => Ok(Self::Canonical),
            "nearest" => Ok(Self::NearestToCurrent),
            "opposite" => Ok(Self::OppositeOfCurrent),
            other => Err(MmError::InvalidParameter(format!("unknown branch policy '{other}'"))),
        }
    }
}

/// New block `i`: the selected maximizer of `tr(Oᵀ(B_i + ρO_i))`.
fn update_block(
    p: &MaxdiffProblem,
    s: &StiefelBlockSet,
    i: usize,
    policy: &SweepPolicy,
    viscosity: Option<f64>,
) -> Result<RealMatrix> {
    let current = &s.blocks[i];
    let mut b = p.block_gradient(s, i);
    if let Some(rho) = viscosity {
        b += current * rho;
    }
    let params = trace_maximizer_set(&b, DEFAULT_RANK_TOL)?;
    select_maximizer(&params, &policy.branch(i, current)?)
}

/// One pass of block relaxation over `i = 1..m`, each block seeing the
/// already-updated earlier blocks. `viscosity = Some(ρ)` adds
/// `(ρ/2)‖O_i − O_i^k‖²` to each block subproblem.
pub fn tenberge_sweep(
    p: &MaxdiffProblem,
    s: &StiefelBlockSet,
    policy: &SweepPolicy,
    viscosity: Option<f64>,
) -> Result<StiefelBlockSet> {
    p.check_shapes(s)?;
    if let Some(rho) = viscosity {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(MmError::InvalidParameter(format!("viscosity must be positive, got {rho}")));
        }
    }
    let mut state = s.clone();
    for i in 0..p.num_blocks() {
        state.blocks[i] = update_block(p, &state, i, policy, viscosity)?;
    }
    Ok(state)
}

/// Seeded random feasible block sets; returns the best objective found and
/// the set attaining it.
pub fn random_search(p: &MaxdiffProblem, samples: usize, seed: u64) -> Result<(f64, StiefelBlockSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = p.block_shapes();
    let mut best: Option<(f64, StiefelBlockSet)> = None;
    for _ in 0..samples {
        let blocks = shapes
            .iter()
            .map(|&(d, r)| polar_factor(&RealMatrix::from_fn(d, r, |_, _| StandardNormal.sample(&mut rng))))
            .collect::<Result<Vec<_>>>()?;
        let s = StiefelBlockSet::new(blocks)?;
        let v = maxdiff_objective(p, &s)?;
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, s));
        }
    }
    best.ok_or_else(|| MmError::InvalidParameter("need at least one sample".into()))
}

/// `−maxdiff` on vectorized block sets, `+∞` off the Stiefel manifold. The
/// engine minimizes, so maximization runs through the negation.
pub struct NegatedMaxdiff {
    problem: Arc<MaxdiffProblem>,
    shapes: Vec<(usize, usize)>,
}

/// Looser membership used when evaluating vectorized states.
const STATE_TOL: f64 = 1e-8;

impl NegatedMaxdiff {
    pub fn new(problem: Arc<MaxdiffProblem>) -> Self {
        let shapes = problem.block_shapes();
        Self { problem, shapes }
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }
}

impl Objective for NegatedMaxdiff {
    fn value(&self, x: &RealVector) -> f64 {
        let Ok(s) = StiefelBlockSet::from_vector_unchecked(x, &self.shapes) else {
            return f64::INFINITY;
        };
        if !(s.stiefel_residual() <= STATE_TOL) {
            return f64::INFINITY;
        }
        maxdiff_objective(&self.problem, &s).map(|v| -v).unwrap_or(f64::INFINITY)
    }
}

/// Block relaxation as MM: iteration `n` updates block `n mod m`. The
/// surrogate is `−maxdiff` with every other block pinned at the anchor
/// (`+∞` elsewhere), which is exact on its slice.
pub struct TenBergeBlockFactory {
    objective: NegatedMaxdiff,
    policy: SweepPolicy,
}

impl TenBergeBlockFactory {
    pub fn new(problem: Arc<MaxdiffProblem>, policy: SweepPolicy) -> Self {
        Self {
            objective: NegatedMaxdiff::new(problem),
            policy,
        }
    }

    pub fn objective(&self) -> &NegatedMaxdiff {
        &self.objective
    }

    pub fn num_blocks(&self) -> usize {
        self.objective.problem.num_blocks()
    }
}

struct BlockSurrogate<'a> {
    factory: &'a TenBergeBlockFactory,
    anchor: RealVector,
    state: StiefelBlockSet,
    block: usize,
}

impl BlockSurrogate<'_> {
    fn step(&self, viscosity: Option<f64>) -> Result<SurrogateStep> {
        let p = &self.factory.objective.problem;
        let mut next = self.state.clone();
        next.blocks[self.block] = update_block(p, &self.state, self.block, &self.factory.policy, viscosity)?;
        Ok(SurrogateStep::new(next.to_vector()).with_extra("block", vec![self.block as f64]))
    }
}

impl Surrogate for BlockSurrogate<'_> {
    fn anchor(&self) -> &RealVector {
        &self.anchor
    }

    fn value(&self, x: &RealVector) -> f64 {
        let shapes = &self.factory.objective.shapes;
        let Ok(s) = StiefelBlockSet::from_vector_unchecked(x, shapes) else {
            return f64::INFINITY;
        };
        let pinned = s
            .blocks
            .iter()
            .zip(&self.state.blocks)
            .enumerate()
            .all(|(j, (a, b))| j == self.block || a == b);
        if pinned {
            self.factory.objective.value(x)
        } else {
            f64::INFINITY
        }
    }

    fn minimize(&self) -> Result<SurrogateStep> {
        self.step(None)
    }

    fn minimize_with_proximal(&self, rho: f64) -> Result<SurrogateStep> {
        self.step(Some(rho))
    }
}

impl SurrogateFactory for TenBergeBlockFactory {
    fn build<'a>(&'a self, anchor: &RealVector, iteration: usize) -> Result<Box<dyn Surrogate + 'a>> {
        let state = StiefelBlockSet::from_vector_unchecked(anchor, &self.objective.shapes)?;
        let residual = state.stiefel_residual();
        if residual > STATE_TOL {
            return Err(MmError::Domain(format!("anchor off the Stiefel manifold (residual {residual:e})")));
        }
        Ok(Box::new(BlockSurrogate {
            factory: self,
            anchor: anchor.clone(),
            state,
            block: iteration % self.num_blocks(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vaida_objective_is_even_in_rho() {
        let a = vaida_objective(VaidaState::new(3.0, 1.0 / 3f64.sqrt()).unwrap()).unwrap();
        let b = vaida_objective(VaidaState::new(3.0, -1.0 / 3f64.sqrt()).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(vaida_objective(VaidaState::new(1.0, 0.0).unwrap()).unwrap().is_finite());
    }

    #[test]
    fn cycle_points_beat_zero_correlation() {
        let on = vaida_objective(VaidaState::reference_start()).unwrap();
        let off = vaida_objective(VaidaState::new(3.0, 0.0).unwrap()).unwrap();
        // direct: 2 ln 2 + 2 versus 2 ln 3 + 4/3, plus the shared σ² terms
        assert!((off - on - (2.0 * 1.5f64.ln() - 2.0 / 3.0)).abs() < 1e-13);
        assert!(on < off);
    }

    #[test]
    fn vaida_domain_enforced() {
        assert!(matches!(VaidaState::new(0.0, 0.0), Err(MmError::Domain(_))));
        assert!(matches!(VaidaState::new(1.0, 1.0), Err(MmError::Domain(_))));
        assert_eq!(VaidaObjective.value(&RealVector::from_vec(vec![-1.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn vaida_step_branches() {
        let s = VaidaState::reference_start();
        let r = 1.0 / 3f64.sqrt();
        let a = vaida_step(s, SignRule::AlternatingPaper).unwrap();
        assert_eq!(a.sigma2, 3.0);
        assert!((a.rho + r).abs() < 1e-15);
        let p = vaida_step(s, SignRule::PositiveBranch).unwrap();
        assert!((p.rho - r).abs() < 1e-15);
        let z = vaida_step(VaidaState::new(1.0, 0.0).unwrap(), SignRule::AlternatingPaper).unwrap();
        assert_eq!(z.sigma2, 3.0);
        assert!((z.rho + 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vaida_negative_radicand_is_domain_error() {
        // 2/3 − 6·1/6 < 0
        let s = VaidaState::new(6.0, 0.0).unwrap();
        assert!(matches!(vaida_step(s, SignRule::PositiveBranch), Err(MmError::Domain(_))));
    }

    #[test]
    fn vaida_surrogate_majorizes() {
        let fac = VaidaFactory {
            rule: SignRule::AlternatingPaper,
        };
        let anchor = VaidaState::new(2.0, 0.3).unwrap().to_vector();
        let samples = crate::engine::seeded_samples(&anchor, 200, 0.5, 3);
        let r = crate::engine::check_majorization(&VaidaObjective, &fac, &anchor, &samples).unwrap();
        assert!(r.passed());
        assert!(r.samples_checked > 100);
    }

    #[test]
    fn tenberge_cross_products() {
        let (p, _) = build_tenberge_instance();
        let i3 = RealMatrix::identity(3, 3);
        assert_eq!(p.cross(0, 1), &-&i3);
        assert_eq!(p.cross(0, 2), &i3);
        assert_eq!(p.cross(1, 2), &i3);
    }

    #[test]
    fn j_and_k_are_orthonormal_and_orthogonal() {
        let (j, k) = (matrix_j(), matrix_k());
        assert_eq!(j.transpose() * &j, RealMatrix::identity(2, 2));
        assert_eq!(k.transpose() * &k, RealMatrix::identity(2, 2));
        assert_eq!((j.transpose() * &k).trace(), 0.0);
    }

    #[test]
    fn objective_of_orthogonal_blocks_is_zero() {
        let a1 = RealMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let a2 = RealMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let p = MaxdiffProblem::new(vec![a1, a2], 2).unwrap();
        let s = StiefelBlockSet::new(vec![RealMatrix::identity(2, 2); 2]).unwrap();
        assert_eq!(maxdiff_objective(&p, &s).unwrap(), 0.0);
    }

    #[test]
    fn cycle_value_by_hand() {
        // −tr(JᵀK) + tr(JᵀJ) + tr(KᵀJ) = 0 + 2 + 0
        let (p, s) = build_tenberge_instance();
        assert_eq!(maxdiff_objective(&p, &s).unwrap(), 2.0);
    }

    #[test]
    fn first_sweep_with_fixed_targets() {
        let (p, s) = build_tenberge_instance();
        let k = matrix_k();
        let targets = SweepPolicy::Targets(vec![-&k, matrix_j(), -&k]);
        let next = tenberge_sweep(&p, &s, &targets, None).unwrap();
        assert!(next.max_abs_diff(&tenberge_cycle_states()[1]) < 1e-12);
    }

    #[test]
    fn opposite_policy_cycles_with_period_four() {
        let (p, s) = build_tenberge_instance();
        let states = tenberge_cycle_states();
        let mut cur = s;
        for step in 1..=8 {
            cur = tenberge_sweep(&p, &cur, &SweepPolicy::OppositeOfCurrent, None).unwrap();
            assert!(cur.max_abs_diff(&states[step % 4]) < 1e-12, "sweep {step}");
        }
    }

    #[test]
    fn two_blocks_settle_after_one_sweep() {
        // square blocks: O2 = polar(M O1) and then polar(Mᵀ O2) = O1
        for d in [2usize, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let a1 = RealMatrix::from_fn(6, d, |_, _| StandardNormal.sample(&mut rng));
            let a2 = RealMatrix::from_fn(6, d, |_, _| StandardNormal.sample(&mut rng));
            let p = MaxdiffProblem::new(vec![a1, a2], d).unwrap();
            let e = RealMatrix::identity(d, d);
            let s0 = StiefelBlockSet::new(vec![e.clone(), e]).unwrap();
            let s1 = tenberge_sweep(&p, &s0, &SweepPolicy::Canonical, None).unwrap();
            let s2 = tenberge_sweep(&p, &s1, &SweepPolicy::Canonical, None).unwrap();
            assert!(s2.max_abs_diff(&s1) < 1e-10);
        }
    }

    #[test]
    fn thin_two_blocks_keep_moving() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a1 = RealMatrix::from_fn(6, 3, |_, _| StandardNormal.sample(&mut rng));
        let a2 = RealMatrix::from_fn(6, 3, |_, _| StandardNormal.sample(&mut rng));
        let p = MaxdiffProblem::new(vec![a1, a2], 2).unwrap();
        let e = RealMatrix::identity(3, 2);
        let s0 = StiefelBlockSet::new(vec![e.clone(), e]).unwrap();
        let s1 = tenberge_sweep(&p, &s0, &SweepPolicy::Canonical, None).unwrap();
        let s2 = tenberge_sweep(&p, &s1, &SweepPolicy::Canonical, None).unwrap();
        assert!(s2.max_abs_diff(&s1) > 1e-6);
        let v1 = maxdiff_objective(&p, &s1).unwrap();
        let v2 = maxdiff_objective(&p, &s2).unwrap();
        assert!(v2 >= v1 - 1e-12);
    }

    #[test]
    fn vector_round_trip() {
        let (_, s) = build_tenberge_instance();
        let shapes = vec![(3, 2); 3];
        let back = StiefelBlockSet::from_vector(&s.to_vector(), &shapes).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn nonorthonormal_block_rejected() {
        let m = RealMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(StiefelBlockSet::new(vec![m]), Err(MmError::Domain(_))));
    }

    #[test]
    fn viscosity_sweeps_never_decrease_objective() {
        let (p, mut s) = build_tenberge_instance();
        let mut prev = maxdiff_objective(&p, &s).unwrap();
        for _ in 0..50 {
            s = tenberge_sweep(&p, &s, &SweepPolicy::OppositeOfCurrent, Some(0.1)).unwrap();
            let v = maxdiff_objective(&p, &s).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }
}
