//! The selection objective `U = (1 - alpha) * U1 + alpha * U2`.
//!
//! `U1` is the weighted mean absolute Pearson correlation between treated
//! samples' ratio profiles restricted to the subset, normalized by the number
//! of pairs with weight 1. `U2` is the mean feature norm of the subset
//! divided by the largest feature norm in the whole matrix.
//!
//! [`SubsetState`] keeps per-column and per-pair running sums so one swap
//! costs O(treated + pairs) instead of O(n * pairs). Sums are accumulated
//! with compensated summation around a per-column center; columns whose sums
//! become ill-conditioned fall back to an exact two-pass computation over
//! the members, and the centers are refreshed on the next commit.

use crate::error::{Error, Result};
use crate::model::{ExpressionMatrix, PairWeights, RatioMatrix, Selection};

/// A column whose standard deviation over the subset is at most this
/// fraction of `max(1, |mean|)` counts as constant and contributes zero
/// correlation.
pub const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Sums are trusted while `sum_sq <= CONDITION_LIMIT * centered_ss`.
const CONDITION_LIMIT: f64 = 64.0;

/// Committed swaps between full recomputations of the running sums.
pub const RESYNC_INTERVAL: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    /// `|corr(x, y)|`, clamped to [0, 1]; zero when degenerate.
    pub abs: f64,
    /// Set when either vector has zero variance.
    pub degenerate: bool,
}

pub(crate) fn is_degenerate(centered_ss: f64, n: usize, mean: f64) -> bool {
    let sd = (centered_ss.max(0.0) / n as f64).sqrt();
    sd <= DEGENERATE_REL_TOL * mean.abs().max(1.0)
}

/// Absolute Pearson correlation. Zero-variance input yields 0 with the
/// degenerate flag set.
pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n == 0 {
        return Ok(Correlation {
            abs: 0.0,
            degenerate: true,
        });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if is_degenerate(sxx, n, mx) || is_degenerate(syy, n, my) {
        return Ok(Correlation {
            abs: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        abs: (sxy.abs() / (sxx * syy).sqrt()).min(1.0),
        degenerate: false,
    })
}

/// Subset size, blend factor and pair weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    pub alpha: f64,
    pub n: usize,
    pub weights: PairWeights,
}

impl ObjectiveParams {
    pub fn new(alpha: f64, n: usize, weights: PairWeights) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("alpha {alpha} is outside [0, 1]")));
        }
        if n == 0 {
            return Err(Error::Parameter("subset size n must be positive".into()));
        }
        if weights.count_positive() == 0 {
            return Err(Error::Parameter(
                "at least one sample pair must carry weight 1".into(),
            ));
        }
        Ok(Self { alpha, n, weights })
    }
}

/// Immutable data the objective reads: ratios, feature norms and the global
/// maximum norm. Shared read-only across annealing chains.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    ratios: RatioMatrix,
    norms: Vec<f64>,
    max_norm: f64,
}

impl ObjectiveContext {
    /// Norms are taken from `matrix` over all samples; feature order must match.
    pub fn new(matrix: &ExpressionMatrix, ratios: RatioMatrix) -> Result<Self> {
        if matrix.feature_ids() != ratios.feature_ids() {
            return Err(Error::Validation(
                "ratio matrix features do not match the expression matrix".into(),
            ));
        }
        Self::from_parts(ratios, matrix.feature_norms())
    }

    pub fn from_parts(ratios: RatioMatrix, norms: Vec<f64>) -> Result<Self> {
        if norms.len() != ratios.n_features() {
            return Err(Error::LengthMismatch {
                left: norms.len(),
                right: ratios.n_features(),
            });
        }
        if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("feature norms must be finite and nonnegative".into()));
        }
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        if max_norm <= 0.0 {
            return Err(Error::Validation("every feature has zero norm".into()));
        }
        Ok(Self {
            ratios,
            norms,
            max_norm,
        })
    }

    pub fn n_features(&self) -> usize {
        self.ratios.n_features()
    }

    pub fn n_treated(&self) -> usize {
        self.ratios.n_treated()
    }

    pub fn ratios(&self) -> &RatioMatrix {
        &self.ratios
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn check_params(&self, params: &ObjectiveParams) -> Result<()> {
        if params.n > self.n_features() {
            return Err(Error::Parameter(format!(
                "subset size {} exceeds the {} available features",
                params.n,
                self.n_features()
            )));
        }
        if params.weights.size() != self.n_treated() {
            return Err(Error::Parameter(format!(
                "weights cover {} samples but there are {} treated samples",
                params.weights.size(),
                self.n_treated()
            )));
        }
        Ok(())
    }

    fn check_subset(&self, indices: &[usize]) {
        assert!(!indices.is_empty(), "subset must not be empty");
        let f = self.n_features();
        assert!(indices.iter().all(|&i| i < f), "feature index out of range");
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub u: f64,
    pub u1: f64,
    pub u2: f64,
}

/// Pairs with nonzero weight; zero-weight pairs never enter the sum.
#[derive(Debug, Clone)]
struct PairTerms {
    pairs: Vec<(usize, usize, f64)>,
    count_positive: f64,
}

impl PairTerms {
    fn new(weights: &PairWeights) -> Self {
        Self {
            pairs: weights
                .pairs()
                .filter(|&(_, _, w)| w != 0)
                .map(|(a, b, w)| (a, b, f64::from(w)))
                .collect(),
            count_positive: weights.count_positive() as f64,
        }
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    hi: f64,
    lo: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.hi + x;
        if self.hi.abs() >= x.abs() {
            self.lo += (self.hi - t) + x;
        } else {
            self.lo += (x - t) + self.hi;
        }
        self.hi = t;
    }

    #[inline]
    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Running sums over the subset of centered ratios `x - center`.
#[derive(Debug, Clone)]
struct Sums {
    col: Vec<Acc>,
    sq: Vec<Acc>,
    cross: Vec<Acc>,
    norm: Acc,
}

impl Sums {
    fn zeros(g: usize, pairs: usize) -> Self {
        Self {
            col: vec![Acc::default(); g],
            sq: vec![Acc::default(); g],
            cross: vec![Acc::default(); pairs],
            norm: Acc::default(),
        }
    }

    fn accumulate(&mut self, ctx: &ObjectiveContext, terms: &PairTerms, center: &[f64], feature: usize, sign: f64) {
        let row = ctx.ratios.row(feature);
        for (g, (&x, &c)) in row.iter().zip(center).enumerate() {
            let d = x - c;
            self.col[g].add(sign * d);
            self.sq[g].add(sign * d * d);
        }
        for (p, &(a, b, _)) in terms.pairs.iter().enumerate() {
            self.cross[p].add(sign * (row[a] - center[a]) * (row[b] - center[b]));
        }
        self.norm.add(sign * ctx.norms[feature]);
    }

    fn build(ctx: &ObjectiveContext, terms: &PairTerms, center: &[f64], members: &[usize]) -> Self {
        let mut sums = Self::zeros(ctx.n_treated(), terms.pairs.len());
        for &f in members {
            sums.accumulate(ctx, terms, center, f, 1.0);
        }
        sums
    }
}

fn column_means(ctx: &ObjectiveContext, members: &[usize]) -> Vec<f64> {
    let mut acc = vec![Acc::default(); ctx.n_treated()];
    for &f in members {
        for (a, &x) in acc.iter_mut().zip(ctx.ratios.row(f)) {
            a.add(x);
        }
    }
    let n = members.len() as f64;
    acc.into_iter().map(|a| a.value() / n).collect()
}

/// Members of the evaluated subset, optionally with one element substituted.
#[derive(Clone, Copy)]
struct Members<'a> {
    base: &'a [usize],
    swap: Option<(usize, usize)>,
}

impl Members<'_> {
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.base.iter().map(move |&f| match self.swap {
            Some((out, inn)) if f == out => inn,
            _ => f,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ColumnMoments {
    mean: f64,
    ss: f64,
    exact: bool,
    degenerate: bool,
}

/// Evaluates U from running sums. Returns the evaluation and whether any
/// column needed the exact fallback.
fn evaluate(
    ctx: &ObjectiveContext,
    terms: &PairTerms,
    alpha: f64,
    center: &[f64],
    sums: &Sums,
    members: Members<'_>,
) -> (Evaluation, bool) {
    let n = members.base.len();
    let nf = n as f64;
    let mut fallback = false;
    let cols: Vec<ColumnMoments> = (0..ctx.n_treated())
        .map(|g| {
            let s = sums.col[g].value();
            let sq = sums.sq[g].value();
            let ss = sq - s * s / nf;
            if sq <= CONDITION_LIMIT * ss.max(0.0) {
                let mean = center[g] + s / nf;
                ColumnMoments {
                    mean,
                    ss,
                    exact: false,
                    degenerate: is_degenerate(ss, n, mean),
                }
            } else {
                fallback = true;
                let mut acc = Acc::default();
                for f in members.iter() {
                    acc.add(ctx.ratios.value(f, g));
                }
                let mean = acc.value() / nf;
                let mut ss = Acc::default();
                for f in members.iter() {
                    let d = ctx.ratios.value(f, g) - mean;
                    ss.add(d * d);
                }
                let ss = ss.value();
                ColumnMoments {
                    mean,
                    ss,
                    exact: true,
                    degenerate: is_degenerate(ss, n, mean),
                }
            }
        })
        .collect();

    let mut total = 0.0;
    for (p, &(a, b, w)) in terms.pairs.iter().enumerate() {
        let (ca, cb) = (&cols[a], &cols[b]);
        if ca.degenerate || cb.degenerate {
            continue;
        }
        let sxy = if ca.exact || cb.exact {
            let mut acc = Acc::default();
            for f in members.iter() {
                let row = ctx.ratios.row(f);
                acc.add((row[a] - ca.mean) * (row[b] - cb.mean));
            }
            acc.value()
        } else {
            sums.cross[p].value() - sums.col[a].value() * sums.col[b].value() / nf
        };
        let r = (sxy.abs() / (ca.ss * cb.ss).sqrt()).min(1.0);
        total += w * r;
    }
    let u1 = total / terms.count_positive;
    let u2 = sums.norm.value() / (nf * ctx.max_norm);
    (
        Evaluation {
            u: (1.0 - alpha) * u1 + alpha * u2,
            u1,
            u2,
        },
        fallback,
    )
}

fn evaluate_from_scratch(ctx: &ObjectiveContext, terms: &PairTerms, alpha: f64, indices: &[usize]) -> Evaluation {
    ctx.check_subset(indices);
    let center = column_means(ctx, indices);
    let sums = Sums::build(ctx, terms, &center, indices);
    evaluate(ctx, terms, alpha, &center, &sums, Members { base: indices, swap: None }).0
}

/// U1 of a subset, computed from scratch.
pub fn eval_u1(ctx: &ObjectiveContext, indices: &[usize], weights: &PairWeights) -> f64 {
    evaluate_from_scratch(ctx, &PairTerms::new(weights), 0.0, indices).u1
}

/// U2 of a subset: mean of `norm / max_norm` over the selected features.
pub fn eval_u2(ctx: &ObjectiveContext, indices: &[usize]) -> f64 {
    ctx.check_subset(indices);
    indices.iter().map(|&i| ctx.norms[i] / ctx.max_norm).sum::<f64>() / indices.len() as f64
}

/// U, U1 and U2 of a subset, computed from scratch.
pub fn eval_u(ctx: &ObjectiveContext, indices: &[usize], params: &ObjectiveParams) -> Evaluation {
    evaluate_from_scratch(ctx, &PairTerms::new(&params.weights), params.alpha, indices)
}

/// Builds a [`Selection`] (sorted indices plus from-scratch objective values).
pub fn evaluate_selection(ctx: &ObjectiveContext, indices: &[usize], params: &ObjectiveParams) -> Selection {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), indices.len(), "subset contains duplicate features");
    let e = eval_u(ctx, &sorted, params);
    Selection {
        indices: sorted,
        objective: e.u,
        u1: e.u1,
        u2: e.u2,
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    out: usize,
    inn: usize,
    eval: Evaluation,
    fallback: bool,
}

/// Mutable subset plus running sums for one annealing chain.
#[derive(Debug, Clone)]
pub struct SubsetState<'a> {
    ctx: &'a ObjectiveContext,
    terms: PairTerms,
    alpha: f64,
    members: Vec<usize>,
    outside: Vec<usize>,
    // position of each feature inside `members` or `outside`
    slot: Vec<usize>,
    in_subset: Vec<bool>,
    center: Vec<f64>,
    sums: Sums,
    scratch: Sums,
    current: Evaluation,
    pending: Option<Pending>,
    commits_since_sync: usize,
}

impl<'a> SubsetState<'a> {
    pub fn new(ctx: &'a ObjectiveContext, params: &ObjectiveParams, indices: &[usize]) -> Result<Self> {
        ctx.check_params(params)?;
        if indices.len() != params.n {
            return Err(Error::Parameter(format!(
                "initial subset has {} features, expected {}",
                indices.len(),
                params.n
            )));
        }
        let f = ctx.n_features();
        let mut in_subset = vec![false; f];
        for &i in indices {
            if i >= f || in_subset[i] {
                return Err(Error::Parameter(format!(
                    "feature index {i} is out of range or repeated"
                )));
            }
            in_subset[i] = true;
        }
        let members = indices.to_vec();
        let outside: Vec<usize> = (0..f).filter(|&i| !in_subset[i]).collect();
        let mut slot = vec![0; f];
        for (k, &i) in members.iter().enumerate() {
            slot[i] = k;
        }
        for (k, &i) in outside.iter().enumerate() {
            slot[i] = k;
        }
        let terms = PairTerms::new(&params.weights);
        let scratch = Sums::zeros(ctx.n_treated(), terms.pairs.len());
        let mut state = Self {
            ctx,
            terms,
            alpha: params.alpha,
            members,
            outside,
            slot,
            in_subset,
            center: Vec::new(),
            sums: scratch.clone(),
            scratch,
            current: Evaluation {
                u: 0.0,
                u1: 0.0,
                u2: 0.0,
            },
            pending: None,
            commits_since_sync: 0,
        };
        state.resync();
        Ok(state)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn outside(&self) -> &[usize] {
        &self.outside
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.in_subset[feature]
    }

    pub fn current(&self) -> Evaluation {
        self.current
    }

    /// Sorted copy of the current members with the running-sum evaluation.
    pub fn selection(&self) -> Selection {
        let mut indices = self.members.clone();
        indices.sort_unstable();
        Selection {
            indices,
            objective: self.current.u,
            u1: self.current.u1,
            u2: self.current.u2,
        }
    }

    /// Recenters on the current subset means and rebuilds every sum.
    pub fn resync(&mut self) {
        self.center = column_means(self.ctx, &self.members);
        self.sums = Sums::build(self.ctx, &self.terms, &self.center, &self.members);
        self.current = evaluate(
            self.ctx,
            &self.terms,
            self.alpha,
            &self.center,
            &self.sums,
            Members {
                base: &self.members,
                swap: None,
            },
        )
        .0;
        self.pending = None;
        self.commits_since_sync = 0;
    }

    /// Objective of the subset with `out` replaced by `inn`, without changing
    /// the state. A following [`commit`](Self::commit) applies exactly this swap.
    pub fn swap_delta(&mut self, out: usize, inn: usize) -> Evaluation {
        assert!(self.in_subset[out], "feature {out} is not in the subset");
        assert!(!self.in_subset[inn], "feature {inn} is already in the subset");
        self.scratch.clone_from(&self.sums);
        self.scratch.accumulate(self.ctx, &self.terms, &self.center, out, -1.0);
        self.scratch.accumulate(self.ctx, &self.terms, &self.center, inn, 1.0);
        let (eval, fallback) = evaluate(
            self.ctx,
            &self.terms,
            self.alpha,
            &self.center,
            &self.scratch,
            Members {
                base: &self.members,
                swap: Some((out, inn)),
            },
        );
        self.pending = Some(Pending {
            out,
            inn,
            eval,
            fallback,
        });
        eval
    }

    /// Applies the swap last evaluated by [`swap_delta`](Self::swap_delta).
    pub fn commit(&mut self) {
        let p = self.pending.take().expect("commit without a pending swap");
        std::mem::swap(&mut self.sums, &mut self.scratch);
        let (ms, os) = (self.slot[p.out], self.slot[p.inn]);
        self.members[ms] = p.inn;
        self.outside[os] = p.out;
        self.slot[p.inn] = ms;
        self.slot[p.out] = os;
        self.in_subset[p.out] = false;
        self.in_subset[p.inn] = true;
        self.current = p.eval;
        self.commits_since_sync += 1;
        if p.fallback || self.commits_since_sync >= RESYNC_INTERVAL {
            self.resync();
        }
    }

    /// Drops an evaluated but unwanted swap.
    pub fn discard(&mut self) {
        self.pending = None;
    }

    pub fn swap(&mut self, out: usize, inn: usize) -> Evaluation {
        self.swap_delta(out, inn);
        self.commit();
        self.current
    }

    /// Absolute difference between the running value and a from-scratch evaluation.
    pub fn drift(&self) -> f64 {
        let scratch = evaluate_from_scratch(self.ctx, &self.terms, self.alpha, &self.members);
        (scratch.u - self.current.u).abs()
    }
}
