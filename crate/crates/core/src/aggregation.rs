//! Rounding fractional outcomes into funding decisions, comparing outcomes,
//! and testing whether approval votes are independent across items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::coreverify::{find_deviation_integral, Deviation};
use crate::error::{Error, Result};
use crate::model::{Allocation, Instance};

/// Significance level below which two items are marked correlated.
pub const CORRELATION_LEVEL: f64 = 0.1;
/// Pairs tested on fewer voters are flagged as unreliable.
pub const MIN_TEST_VOTERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Rank by core funding per unit cost, `x_j / s_j`.
    Core,
    /// Rank by votes per unit cost, `n_j / s_j`.
    Welfare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScheme {
    pub scheme: Scheme,
    /// Items by descending score, ties to the lower index.
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    /// Items filled in order, the first that does not fit filled partially.
    pub fractional: Allocation,
    /// Greedy fill that skips items exceeding the remaining budget.
    pub integral: Allocation,
}

/// Ranks items under `scheme` and rounds the ranking into a fractional and
/// an integral allocation. `Core` needs the fractional core outcome.
pub fn rank_and_round(
    inst: &Instance,
    scheme: Scheme,
    core: Option<&Allocation>,
) -> Result<RankedScheme> {
    let sizes = inst.require_sizes()?;
    let k = inst.k();
    let scores: Vec<f64> = match scheme {
        Scheme::Core => {
            let x = core.ok_or_else(|| {
                Error::Config("core ranking needs the fractional core allocation".into())
            })?;
            if x.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: x.len(),
                });
            }
            x.x.iter().zip(sizes).map(|(x, s)| x / s).collect()
        }
        Scheme::Welfare => inst
            .vote_counts()
            .iter()
            .zip(sizes)
            .map(|(&v, s)| v as f64 / s)
            .collect(),
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let budget = inst.budget();
    let mut fractional = vec![0.0; k];
    let mut left = budget;
    for &j in &order {
        if sizes[j] <= left {
            fractional[j] = sizes[j];
            left -= sizes[j];
        } else {
            fractional[j] = left;
            break;
        }
    }

    let mut integral = vec![0.0; k];
    let mut spent = 0.0;
    for &j in &order {
        if spent + sizes[j] <= budget {
            integral[j] = sizes[j];
            spent += sizes[j];
        }
    }

    Ok(RankedScheme {
        scheme,
        order,
        scores,
        fractional: Allocation::fractional(fractional),
        integral: Allocation::integral(integral),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub jaccard: f64,
    pub budget_similarity: f64,
}

/// `|A ∩ B| / |A ∪ B|` over funded items; 1 when both fund nothing.
pub fn jaccard(a: &Allocation, b: &Allocation) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut both, mut either) = (0usize, 0usize);
    for (&p, &q) in a.x.iter().zip(&b.x) {
        both += (p > 0.0 && q > 0.0) as usize;
        either += (p > 0.0 || q > 0.0) as usize;
    }
    Ok(if either == 0 {
        1.0
    } else {
        both as f64 / either as f64
    })
}

/// `sum_j min(x_j, z_j) / B`.
pub fn budget_similarity(x: &Allocation, z: &Allocation, budget: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
        });
    }
    if !(budget > 0.0) {
        return Err(Error::InvalidInstance(format!(
            "budget must be positive, got {budget}"
        )));
    }
    Ok(x.x.iter().zip(&z.x).map(|(a, b)| a.min(*b)).sum::<f64>() / budget)
}

/// Compares the integral and fractional outcomes of two rankings.
pub fn compare(a: &RankedScheme, b: &RankedScheme, budget: f64) -> Result<SimilarityReport> {
    Ok(SimilarityReport {
        jaccard: jaccard(&a.integral, &b.integral)?,
        budget_similarity: budget_similarity(&a.fractional, &b.fractional, budget)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: `0..k` are items, `k + t` is the cluster formed at merge `t`.
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub dof: f64,
    /// `k x k`, symmetric; empty on the diagonal and for degenerate pairs.
    pub p_values: Vec<Vec<Option<f64>>>,
    pub statistics: Vec<Vec<Option<f64>>>,
    pub correlated: Vec<Vec<bool>>,
    /// Items whose approval column is constant; excluded from clustering.
    pub degenerate: Vec<usize>,
    /// Items entering the clustering, in leaf order.
    pub clustered_items: Vec<usize>,
    /// Average-linkage merges over the 0/1 correlation distance; leaf `t`
    /// is `clustered_items[t]`.
    pub merges: Vec<Merge>,
    pub small_sample: bool,
    pub warnings: Vec<String>,
}

/// Pearson statistic of the 2x2 table of two binary columns, without
/// continuity correction. `None` when a margin is empty.
pub fn chi2_statistic(a: &[bool], b: &[bool]) -> Option<f64> {
    let mut table = [[0.0f64; 2]; 2];
    for (&p, &q) in a.iter().zip(b) {
        table[p as usize][q as usize] += 1.0;
    }
    let n = a.len() as f64;
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return None;
    }
    let cross = table[0][0] * table[1][1] - table[0][1] * table[1][0];
    Some(n * cross * cross / (rows[0] * rows[1] * cols[0] * cols[1]))
}

/// Pairwise χ² independence tests between approval columns, and
/// average-linkage clustering of items at distance 0 (correlated) or 1.
pub fn chi2_pairwise(inst: &Instance, dof: f64) -> Result<IndependenceReport> {
    let chi = ChiSquared::new(dof)
        .map_err(|e| Error::Config(format!("degrees of freedom {dof}: {e}")))?;
    let (n, k) = (inst.n(), inst.k());
    let columns: Vec<Vec<bool>> = (0..k)
        .map(|j| (0..n).map(|i| inst.utility(i, j) > 0.0).collect())
        .collect();
    let degenerate: Vec<usize> = (0..k)
        .filter(|&j| columns[j].iter().all(|&v| v) || columns[j].iter().all(|&v| !v))
        .collect();
    let mut warnings: Vec<String> = degenerate
        .iter()
        .map(|&j| {
            format!(
                "item {} has a constant approval column and is excluded",
                inst.item_names()[j]
            )
        })
        .collect();
    let small_sample = n < MIN_TEST_VOTERS;
    if small_sample {
        warnings.push(format!(
            "only {n} voters; the χ² approximation needs at least {MIN_TEST_VOTERS}"
        ));
    }

    let mut p_values = vec![vec![None; k]; k];
    let mut statistics = vec![vec![None; k]; k];
    let mut correlated = vec![vec![false; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            if let Some(stat) = chi2_statistic(&columns[a], &columns[b]) {
                let p = chi.sf(stat);
                p_values[a][b] = Some(p);
                p_values[b][a] = Some(p);
                statistics[a][b] = Some(stat);
                statistics[b][a] = Some(stat);
                correlated[a][b] = p < CORRELATION_LEVEL;
                correlated[b][a] = p < CORRELATION_LEVEL;
            }
        }
    }

    let clustered_items: Vec<usize> = (0..k).filter(|j| !degenerate.contains(j)).collect();
    let leaves = clustered_items.len();
    let merges = if leaves >= 2 {
        let mut condensed = Vec::with_capacity(leaves * (leaves - 1) / 2);
        for a in 0..leaves {
            for b in a + 1..leaves {
                condensed.push(if correlated[clustered_items[a]][clustered_items[b]] {
                    0.0
                } else {
                    1.0
                });
            }
        }
        kodama::linkage(&mut condensed, leaves, kodama::Method::Average)
            .steps()
            .iter()
            .map(|s| Merge {
                cluster_a: s.cluster1,
                cluster_b: s.cluster2,
                height: s.dissimilarity,
                size: s.size,
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(IndependenceReport {
        dof,
        p_values,
        statistics,
        correlated,
        degenerate,
        clustered_items,
        merges,
        small_sample,
        warnings,
    })
}

/// Items with the `budget` largest values of `p_j u_j`, ties to the lower
/// index. This maximizes expected welfare under unit costs.
pub fn welfare_top_b(p: &[f64], u: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (p[b] * u[b]).total_cmp(&(p[a] * u[a])).then(a.cmp(&b)));
    order.truncate(budget);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTrial {
    pub welfare_set: Vec<usize>,
    /// `E[U(S*)] = sum_{j in S*} p_j u_j`.
    pub expected_utility: f64,
    /// Whether `E[U(S*)] > sqrt(B ln B) / eps`.
    pub precondition_held: bool,
    pub deviation: Option<Deviation>,
}

/// Draws `n` voters approving item `j` independently with probability
/// `p_j`, funds the expected-welfare maximizing `budget` unit-cost items,
/// and searches for a `(1 + eps)`-multiplicative integral deviation.
pub fn random_model_trial(
    p: &[f64],
    u: &[f64],
    budget: usize,
    n: usize,
    eps: f64,
    seed: u64,
) -> Result<RandomTrial> {
    let k = p.len();
    if u.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: u.len(),
        });
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!(
            "approval probability {v} outside [0, 1]"
        )));
    }
    if budget == 0 || budget > k {
        return Err(Error::Config(format!(
            "budget must be between 1 and {k} items, got {budget}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|j| if rng.random_bool(p[j]) { u[j] } else { 0.0 })
                .collect()
        })
        .collect();
    let inst = Instance::with_abstentions(rows, budget as f64)?.with_sizes(vec![1.0; k])?;
    let welfare_set = welfare_top_b(p, u, budget);
    let expected_utility: f64 = welfare_set.iter().map(|&j| p[j] * u[j]).sum();
    let b = budget as f64;
    let precondition_held = expected_utility > (b * b.ln()).sqrt() / eps;
    let x = Allocation::from_funded_set(&inst, &welfare_set)?;
    let deviation = find_deviation_integral(&inst, &x, eps)?;
    Ok(RandomTrial {
        welfare_set,
        expected_utility,
        precondition_held,
        deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_skips_and_partially_fills() {
        // Votes per cost: item 0: 3/2, item 1: 2/4, item 2: 1/1.
        let rows = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        let inst = Instance::new(rows, 4.0)
            .unwrap()
            .with_sizes(vec![2.0, 4.0, 1.0])
            .unwrap();
        let r = rank_and_round(&inst, Scheme::Welfare, None).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);
        assert_eq!(r.integral.x, vec![2.0, 0.0, 1.0]);
        assert_eq!(r.fractional.x, vec![2.0, 1.0, 1.0]);
        assert!(rank_and_round(&inst, Scheme::Core, None).is_err());
    }

    #[test]
    fn identical_items_fund_floor_of_budget_over_size() {
        let inst = Instance::new(vec![vec![1.0; 5]; 3], 7.0)
            .unwrap()
            .with_sizes(vec![2.0; 5])
            .unwrap();
        let r = rank_and_round(&inst, Scheme::Welfare, None).unwrap();
        assert_eq!(r.integral.funded().len(), 3);
        let core = Allocation::fractional(vec![1.4; 5]);
        let c = rank_and_round(&inst, Scheme::Core, Some(&core)).unwrap();
        assert_eq!(c.integral.funded().len(), 3);
    }

    #[test]
    fn single_item_within_budget_is_funded() {
        let inst = Instance::new(vec![vec![1.0]], 3.0)
            .unwrap()
            .with_sizes(vec![2.0])
            .unwrap();
        for (scheme, core) in [
            (Scheme::Welfare, None),
            (Scheme::Core, Some(Allocation::fractional(vec![2.0]))),
        ] {
            let r = rank_and_round(&inst, scheme, core.as_ref()).unwrap();
            assert_eq!(r.integral.x, vec![2.0]);
        }
    }

    #[test]
    fn similarity_values() {
        let a = Allocation::integral(vec![1.0, 1.0, 0.0]);
        let b = Allocation::integral(vec![0.0, 1.0, 1.0]);
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let none = Allocation::integral(vec![0.0; 3]);
        assert_eq!(jaccard(&none, &none).unwrap(), 1.0);

        let x = Allocation::fractional(vec![0.6, 0.4]);
        let z = Allocation::fractional(vec![0.4, 0.6]);
        assert!((budget_similarity(&x, &z, 1.0).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(budget_similarity(&x, &x, 1.0).unwrap(), 1.0);
        let e1 = Allocation::fractional(vec![1.0, 0.0]);
        let e2 = Allocation::fractional(vec![0.0, 1.0]);
        assert_eq!(budget_similarity(&e1, &e2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn chi2_statistic_matches_hand_value() {
        // Table [[10, 20], [30, 40]]: 100 (400 - 600)^2 / (30 * 70 * 40 * 60).
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (p, q, count) in [
            (false, false, 10),
            (false, true, 20),
            (true, false, 30),
            (true, true, 40),
        ] {
            for _ in 0..count {
                a.push(p);
                b.push(q);
            }
        }
        let expected = 100.0 * 200.0f64.powi(2) / (30.0 * 70.0 * 40.0 * 60.0);
        assert!((chi2_statistic(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!(chi2_statistic(&a, &[true; 100]).is_none());
    }

    #[test]
    fn identical_columns_are_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let v = rng.random_bool(0.5) as u8 as f64;
                vec![v, v, 1.0]
            })
            .collect();
        let inst = Instance::new(rows, 1.0).unwrap();
        let rep = chi2_pairwise(&inst, 2.0).unwrap();
        assert!(rep.p_values[0][1].unwrap() < 1e-100);
        assert!(rep.p_values[0][2].is_none());
        assert!(rep.correlated[0][1]);
        assert_eq!(rep.degenerate, vec![2]);
        assert_eq!(rep.merges.len(), 1);
        assert_eq!(rep.merges[0].height, 0.0);
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn blocks_merge_internally_first() {
        // Two independent latent traits, each driving approval of three items.
        let mut rows = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let traits = [rng.random_bool(0.5), rng.random_bool(0.5)];
            let row = (0..6)
                .map(|j| {
                    let p = if traits[j / 3] { 0.8 } else { 0.2 };
                    rng.random_bool(p) as u8 as f64
                })
                .collect();
            rows.push(row);
        }
        let inst = Instance::with_abstentions(rows, 1.0).unwrap();
        let rep = chi2_pairwise(&inst, 2.0).unwrap();
        let heights: Vec<f64> = rep.merges.iter().map(|m| m.height).collect();
        assert_eq!(heights.len(), 5);
        assert_eq!(&heights[..4], &[0.0; 4]);
        assert!(heights[4] > 0.5, "{heights:?}");
    }

    #[test]
    fn universal_approval_never_deviates() {
        let p = vec![1.0; 6];
        let u = vec![0.3, 0.9, 0.5, 0.7, 0.2, 0.4];
        for seed in 0..20 {
            let t = random_model_trial(&p, &u, 3, 15, 0.1, seed).unwrap();
            assert!(t.deviation.is_none());
            assert_eq!(t.welfare_set, vec![1, 2, 3]);
        }
    }
}
