//! Brute-force references for tests: exhaustive subset search and textbook
//! average linkage. Neither shares code with the production paths; the
//! correlation here is a plain two-pass formula on purpose.

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::model::{Dendrogram, Merge, Selection};
use crate::objective::{ObjectiveContext, ObjectiveParams};

/// Largest number of subsets [`exhaustive_optimum`] will enumerate.
pub const MAX_SUBSETS: u64 = 1_000_000;

/// Largest sample count accepted by [`naive_average_linkage`].
pub const MAX_NAIVE_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub best_subset: Selection,
    pub best_u: f64,
    pub evaluated_count: u64,
}

/// `C(f, n)`, or `None` past `u64`.
pub fn binomial(f: usize, n: usize) -> Option<u64> {
    if n > f {
        return Some(0);
    }
    let k = n.min(f - n) as u64;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (f as u128 - i as u128) / (i as u128 + 1);
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

fn naive_abs_corr(x: &[f64], y: &[f64]) -> f64 {
    let len = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / len;
    let mean_y = y.iter().sum::<f64>() / len;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for i in 0..x.len() {
        var_x += (x[i] - mean_x) * (x[i] - mean_x);
        var_y += (y[i] - mean_y) * (y[i] - mean_y);
        cov += (x[i] - mean_x) * (y[i] - mean_y);
    }
    let flat = |var: f64, mean: f64| (var / len).sqrt() <= 1e-12 * f64::max(1.0, mean.abs());
    if flat(var_x, mean_x) || flat(var_y, mean_y) {
        return 0.0;
    }
    f64::min(1.0, (cov / (var_x.sqrt() * var_y.sqrt())).abs())
}

/// U, U1, U2 of one subset, computed directly from the ratio and norm tables.
pub fn naive_u(ctx: &ObjectiveContext, params: &ObjectiveParams, subset: &[usize]) -> (f64, f64, f64) {
    let ratios = ctx.ratios();
    let profiles: Vec<Vec<f64>> = (0..ctx.n_treated())
        .map(|s| subset.iter().map(|&f| ratios.value(f, s)).collect())
        .collect();
    let mut numerator = 0.0;
    let mut count = 0usize;
    for a in 0..profiles.len() {
        for b in a + 1..profiles.len() {
            let w = params.weights.get(a, b);
            if w == 1 {
                count += 1;
            }
            if w != 0 {
                numerator += w as f64 * naive_abs_corr(&profiles[a], &profiles[b]);
            }
        }
    }
    let u1 = numerator / count as f64;
    let norms = ctx.norms();
    let u2 = subset.iter().map(|&f| norms[f]).sum::<f64>() / (subset.len() as f64 * ctx.max_norm());
    ((1.0 - params.alpha) * u1 + params.alpha * u2, u1, u2)
}

/// Advances `c` to the next n-combination of `0..f` in lexicographic order.
fn next_combination(c: &mut [usize], f: usize) -> bool {
    let n = c.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if c[i] < f - n + i {
            c[i] += 1;
            for j in i + 1..n {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Larger U wins; equal U goes to the lexicographically smaller subset.
fn better(a: &(f64, f64, f64, Vec<usize>), b: &(f64, f64, f64, Vec<usize>)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.3 < b.3)
}

/// Evaluates every n-subset and returns the maximum of U.
pub fn exhaustive_optimum(ctx: &ObjectiveContext, params: &ObjectiveParams) -> Result<OracleResult> {
    ctx.check_params(params)?;
    let (f, n) = (ctx.n_features(), params.n);
    let total = binomial(f, n).filter(|&c| c <= MAX_SUBSETS).ok_or(Error::InstanceTooLarge {
        features: f,
        n,
        limit: MAX_SUBSETS,
    })?;

    // one job per leading index; each walks the combinations starting with it
    let best = (0..=f - n)
        .into_par_iter()
        .map(|first| {
            let mut c: Vec<usize> = (first..first + n).collect();
            let mut best: Option<(f64, f64, f64, Vec<usize>)> = None;
            let mut count = 0u64;
            loop {
                let (u, u1, u2) = naive_u(ctx, params, &c);
                let cand = (u, u1, u2, c.clone());
                count += 1;
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
                if !next_combination(&mut c, f) || c[0] != first {
                    break;
                }
            }
            (best.expect("at least one subset"), count)
        })
        .reduce_with(|a, b| {
            let count = a.1 + b.1;
            if better(&b.0, &a.0) {
                (b.0, count)
            } else {
                (a.0, count)
            }
        })
        .expect("at least one leading index");

    let ((u, u1, u2, indices), evaluated) = best;
    debug_assert_eq!(evaluated, total);
    Ok(OracleResult {
        best_subset: Selection {
            indices,
            objective: u,
            u1,
            u2,
        },
        best_u: u,
        evaluated_count: evaluated,
    })
}

/// Textbook O(S^3) average linkage: every step recomputes the mean
/// dissimilarity between all cluster pairs from the original matrix.
pub fn naive_average_linkage(d: &DissimilarityMatrix) -> Dendrogram {
    let s = d.len();
    assert!(
        (2..=MAX_NAIVE_SAMPLES).contains(&s),
        "naive linkage supports 2..={MAX_NAIVE_SAMPLES} samples"
    );
    // (node id, member leaves); members stay sorted so members[0] is the min leaf
    let mut clusters: Vec<(usize, Vec<usize>, f64)> = (0..s).map(|i| (i, vec![i], 0.0)).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a].1 {
                    for &j in &clusters[b].1 {
                        total += d.get(i, j);
                    }
                }
                let mean = total / (clusters[a].1.len() * clusters[b].1.len()) as f64;
                let (la, lb) = (clusters[a].1[0], clusters[b].1[0]);
                let key = (la.min(lb), la.max(lb));
                let take = match &best {
                    None => true,
                    Some((h, k, _, _)) => mean < *h || (mean == *h && key < *k),
                };
                if take {
                    best = Some((mean, key, a, b));
                }
            }
        }
        let (height, _, a, b) = best.unwrap();
        let cb = clusters.remove(b);
        let ca = clusters.remove(a);
        let (left, right) = if ca.1[0] < cb.1[0] { (ca, cb) } else { (cb, ca) };
        let node = s + merges.len();
        merges.push(Merge {
            left: left.0,
            right: right.0,
            height,
            size: left.1.len() + right.1.len(),
        });
        let mut members = left.1;
        members.extend(right.1);
        members.sort_unstable();
        clusters.push((node, members, height));
    }
    Dendrogram {
        leaves: d.labels().to_vec(),
        merges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::average_linkage;
    use crate::model::{PairWeights, RatioMatrix};
    use crate::objective::eval_u;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ctx(rng: &mut ChaCha8Rng, f: usize, g: usize) -> ObjectiveContext {
        let ids = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let ratios: Vec<f64> = (0..f * g).map(|_| rng.random_range(-3.0..3.0)).collect();
        let norms: Vec<f64> = (0..f).map(|_| rng.random_range(0.1..50.0)).collect();
        let r = RatioMatrix::new(ids("f", f), ids("s", g), ratios).unwrap();
        ObjectiveContext::from_parts(r, norms).unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 4), Some(495));
        assert_eq!(binomial(5, 5), Some(1));
        assert_eq!(binomial(3, 4), Some(0));
        assert_eq!(binomial(60, 30), Some(118_264_581_564_861_424));
    }

    #[test]
    fn counts_every_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = random_ctx(&mut rng, 12, 4);
        let params = ObjectiveParams::new(0.2, 4, PairWeights::uniform(4, 1).unwrap()).unwrap();
        let res = exhaustive_optimum(&ctx, &params).unwrap();
        assert_eq!(res.evaluated_count, 495);
        assert_eq!(res.best_subset.indices.len(), 4);
        assert!(res.best_subset.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn whole_set_when_f_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = random_ctx(&mut rng, 5, 3);
        let params = ObjectiveParams::new(0.3, 5, PairWeights::uniform(3, 1).unwrap()).unwrap();
        let res = exhaustive_optimum(&ctx, &params).unwrap();
        assert_eq!(res.best_subset.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(res.evaluated_count, 1);
        assert!((res.best_u - eval_u(&ctx, &[0, 1, 2, 3, 4], &params).u).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_picks_largest_norms() {
        let r = RatioMatrix::new(
            (0..6).map(|i| format!("f{i}")).collect(),
            vec!["a".into(), "b".into()],
            vec![0.5; 12],
        )
        .unwrap();
        let ctx = ObjectiveContext::from_parts(r, vec![3.0, 9.0, 1.0, 9.0, 7.0, 2.0]).unwrap();
        let params = ObjectiveParams::new(1.0, 3, PairWeights::uniform(2, 1).unwrap()).unwrap();
        let res = exhaustive_optimum(&ctx, &params).unwrap();
        assert_eq!(res.best_subset.indices, vec![1, 3, 4]);
    }

    #[test]
    fn ties_keep_smallest_subset() {
        // all features equal: every subset scores the same
        let r = RatioMatrix::new(
            (0..5).map(|i| format!("f{i}")).collect(),
            vec!["a".into(), "b".into()],
            vec![1.0; 10],
        )
        .unwrap();
        let ctx = ObjectiveContext::from_parts(r, vec![2.0; 5]).unwrap();
        let params = ObjectiveParams::new(0.5, 2, PairWeights::uniform(2, 1).unwrap()).unwrap();
        let res = exhaustive_optimum(&ctx, &params).unwrap();
        assert_eq!(res.best_subset.indices, vec![0, 1]);
    }

    #[test]
    fn rejects_huge_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = random_ctx(&mut rng, 40, 2);
        let params = ObjectiveParams::new(0.2, 20, PairWeights::uniform(2, 1).unwrap()).unwrap();
        let err = exhaustive_optimum(&ctx, &params).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { .. }));
    }

    #[test]
    fn naive_u_matches_eval_u_on_every_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = random_ctx(&mut rng, 10, 5);
        let mut weights = PairWeights::uniform(5, 1).unwrap();
        weights.set(0, 3, 0).unwrap();
        weights.set(1, 4, -1).unwrap();
        let params = ObjectiveParams::new(0.25, 4, weights).unwrap();
        let mut c = vec![0, 1, 2, 3];
        loop {
            let (u, u1, u2) = naive_u(&ctx, &params, &c);
            let e = eval_u(&ctx, &c, &params);
            assert!((u - e.u).abs() < 1e-12 && (u1 - e.u1).abs() < 1e-12 && (u2 - e.u2).abs() < 1e-12);
            if !next_combination(&mut c, 10) {
                break;
            }
        }
    }

    #[test]
    fn naive_linkage_two_samples() {
        let d = DissimilarityMatrix::from_full(vec!["a".into(), "b".into()], vec![0.0, 0.3, 0.3, 0.0]).unwrap();
        let dend = naive_average_linkage(&d);
        assert_eq!(dend.merges, vec![Merge { left: 0, right: 1, height: 0.3, size: 2 }]);
    }

    #[test]
    fn naive_linkage_matches_fast_linkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = 6;
            let mut d = vec![0.0; s * s];
            for i in 0..s {
                for j in i + 1..s {
                    let v = rng.random_range(0.0..1.0);
                    d[i * s + j] = v;
                    d[j * s + i] = v;
                }
            }
            let labels = (0..s).map(|i| i.to_string()).collect();
            let m = DissimilarityMatrix::from_full(labels, d).unwrap();
            let (fast, slow) = (average_linkage(&m), naive_average_linkage(&m));
            for (a, b) in fast.merges.iter().zip(&slow.merges) {
                assert_eq!((a.left, a.right, a.size), (b.left, b.right, b.size));
                assert!((a.height - b.height).abs() <= 1e-12);
            }
        }
    }
}
