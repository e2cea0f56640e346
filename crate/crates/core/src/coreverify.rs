//! Core membership: residual-based approximate certificates and
//! brute-force deviation oracles for small instances.
//!
//! The continuous oracle reduces the search over coalitions exactly. For a
//! fixed deviation `y` and coalition size `s`, the best coalition consists
//! of the `s` agents gaining most, so its worst member's gain is the `s`-th
//! largest gain. Utilities are nondecreasing, so only grid points that spend
//! the whole coalition budget need to be examined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindahl::{self, PriceVectors};
use crate::model::{Allocation, Instance, ItemCurve, UtilityModel};
use crate::saturating::HeuristicResult;

/// Largest item count the continuous grid oracle accepts.
pub const MAX_GRID_ITEMS: usize = 4;
/// Largest agent count the continuous grid oracle accepts.
pub const MAX_GRID_AGENTS: usize = 1_000;
/// Largest item count the integral subset oracle accepts.
pub const MAX_SUBSET_ITEMS: usize = 16;

/// Approximate-core guarantee implied by residuals of size `epsilon`:
/// spend is at most `B / (1 - epsilon)` and no coalition `S` can make all
/// its members strictly better off with budget `(|S|/n - epsilon) B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreCertificate {
    pub epsilon: f64,
    pub residuals: Vec<f64>,
    pub prices: PriceVectors,
    pub total_spend: f64,
    /// `B / (1 - epsilon)`, infinite once `epsilon >= 1`.
    pub spend_bound: f64,
    /// `spend_bound - total_spend`; nonnegative whenever the guarantee holds.
    pub budget_slack: f64,
    pub guarantee: String,
    n: usize,
    budget: f64,
}

impl CoreCertificate {
    fn build(inst: &Instance, x: &Allocation, residuals: Vec<f64>, prices: PriceVectors) -> Self {
        let epsilon = lindahl::violation(&x.x, &residuals);
        let budget = inst.budget();
        let total_spend = x.total();
        let spend_bound = if epsilon < 1.0 {
            budget / (1.0 - epsilon)
        } else {
            f64::INFINITY
        };
        let guarantee = format!(
            "total spend {total_spend} <= {spend_bound}; no coalition S improves every member \
             with budget (|S|/{} - {epsilon}) * {budget}",
            inst.n()
        );
        Self {
            epsilon,
            residuals,
            prices,
            total_spend,
            spend_bound,
            budget_slack: spend_bound - total_spend,
            guarantee,
            n: inst.n(),
            budget,
        }
    }

    /// Budget up to which a coalition of `size` agents provably cannot
    /// deviate; zero when the guarantee is vacuous for that size.
    pub fn coalition_budget(&self, size: usize) -> f64 {
        ((size as f64 / self.n as f64 - self.epsilon) * self.budget).max(0.0)
    }

    pub fn spend_within_bound(&self) -> bool {
        self.total_spend <= self.spend_bound * (1.0 + 1e-12)
    }
}

pub fn certify_from_residual(
    inst: &Instance,
    model: &UtilityModel,
    x: &Allocation,
) -> Result<CoreCertificate> {
    let residuals = lindahl::lindahl_residuals(inst, model, x)?;
    let prices = lindahl::recover_prices(inst, model, x)?;
    Ok(CoreCertificate::build(inst, x, residuals, prices))
}

/// Certificate for a saturating allocation whose marginal values are given
/// explicitly, as produced by the heuristic. The guarantee refers to the
/// perturbed utilities the heuristic actually solved.
pub fn certify_from_marginals(
    inst: &Instance,
    x: &Allocation,
    marginals: &[f64],
) -> Result<CoreCertificate> {
    if marginals.len() != inst.k() || x.len() != inst.k() {
        return Err(Error::DimensionMismatch {
            expected: inst.k(),
            got: marginals.len().min(x.len()),
        });
    }
    let elasticities: Vec<f64> = x.x.iter().zip(marginals).map(|(a, b)| a * b).collect();
    let residuals = lindahl::residuals_with_marginals(inst, marginals, &elasticities)?;
    let scale = inst.budget() / inst.n() as f64;
    let mut p = Vec::with_capacity(inst.n() * inst.k());
    for i in 0..inst.n() {
        let row = inst.row(i);
        let denom: f64 = row.iter().zip(&elasticities).map(|(u, e)| u * e).sum();
        p.extend(
            row.iter()
                .zip(marginals)
                .map(|(u, m)| scale * u * m / denom),
        );
    }
    let prices = PriceVectors::from_rows(inst.n(), inst.k(), p);
    Ok(CoreCertificate::build(inst, x, residuals, prices))
}

pub fn certify_heuristic(res: &HeuristicResult) -> Result<CoreCertificate> {
    certify_from_marginals(&res.perturbed, &res.x, &res.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "alpha", rename_all = "snake_case")]
pub enum DeviationMode {
    /// Every member gains more than `alpha` in absolute utility.
    Additive(f64),
    /// Every member's utility grows by a factor above `alpha`.
    Multiplicative(f64),
}

impl DeviationMode {
    fn gain(&self, after: f64, before: f64) -> f64 {
        match *self {
            DeviationMode::Additive(_) => after - before,
            DeviationMode::Multiplicative(_) => {
                if before > 0.0 {
                    after / before
                } else if after > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    fn threshold(&self) -> f64 {
        match *self {
            DeviationMode::Additive(a) | DeviationMode::Multiplicative(a) => a,
        }
    }
}

/// A coalition together with an allocation of its budget that every member
/// strictly prefers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// Sorted agent indices.
    pub coalition: Vec<usize>,
    pub y: Allocation,
    /// Smallest gain over the coalition, measured as the search mode dictates.
    pub min_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSearch {
    pub grid_steps: usize,
    pub mode: DeviationMode,
    /// Coalition budgets are `(|S|/n - budget_reduction) B`.
    pub budget_reduction: f64,
    pub max_coalition: Option<usize>,
}

impl ContinuousSearch {
    pub fn new(grid_steps: usize, mode: DeviationMode) -> Self {
        Self {
            grid_steps,
            mode,
            budget_reduction: 0.0,
            max_coalition: None,
        }
    }
}

/// All compositions of `total` into `parts` nonnegative integers, in
/// lexicographic order.
fn compositions(total: usize, parts: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(rest: usize, idx: usize, cur: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
        if idx + 1 == cur.len() {
            cur[idx] = rest;
            visit(cur);
            return;
        }
        for v in 0..=rest {
            cur[idx] = v;
            rec(rest - v, idx + 1, cur, visit);
        }
    }
    let mut cur = vec![0; parts];
    rec(total, 0, &mut cur, &mut visit);
}

/// Evaluates every agent's utility at a point.
struct Evaluator<'a> {
    inst: &'a Instance,
    curves: Option<Vec<ItemCurve>>,
    exponents: Option<&'a [Vec<f64>]>,
}

impl<'a> Evaluator<'a> {
    fn new(inst: &'a Instance, model: &'a UtilityModel) -> Result<Self> {
        model.validate(inst)?;
        let exponents = match model {
            UtilityModel::CobbDouglas { exponents } => Some(exponents.as_slice()),
            _ => None,
        };
        Ok(Self {
            inst,
            curves: model.curves(inst)?,
            exponents,
        })
    }

    fn all(&self, y: &[f64], out: &mut [f64]) {
        if let Some(exps) = self.exponents {
            for (o, row) in out.iter_mut().zip(exps) {
                *o = row
                    .iter()
                    .zip(y)
                    .map(|(&a, &v)| if a == 0.0 { 1.0 } else { v.powf(a) })
                    .product();
            }
            return;
        }
        let curves = self.curves.as_ref().expect("separable family");
        let f: Vec<f64> = curves.iter().zip(y).map(|(c, &v)| c.value(v)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self
                .inst
                .row(i)
                .iter()
                .zip(&f)
                .map(|(u, fv)| if *u == 0.0 { 0.0 } else { u * fv })
                .sum();
        }
    }
}

/// Shorthand for [`find_deviation_continuous_with`] over all coalitions at
/// full budget.
pub fn find_deviation_continuous(
    inst: &Instance,
    model: &UtilityModel,
    x: &Allocation,
    grid_steps: usize,
    mode: DeviationMode,
) -> Result<Option<Deviation>> {
    find_deviation_continuous_with(inst, model, x, &ContinuousSearch::new(grid_steps, mode))
}

/// Grid search for the deviation with the largest worst-member gain above
/// the mode's threshold. Deviations are allocations on the grid of
/// multiples of `b_S / grid_steps`, where `b_S` is the coalition budget.
pub fn find_deviation_continuous_with(
    inst: &Instance,
    model: &UtilityModel,
    x: &Allocation,
    search: &ContinuousSearch,
) -> Result<Option<Deviation>> {
    let (n, k) = (inst.n(), inst.k());
    if k > MAX_GRID_ITEMS || n > MAX_GRID_AGENTS {
        return Err(Error::TooLarge(format!(
            "grid oracle handles at most {MAX_GRID_AGENTS} agents and {MAX_GRID_ITEMS} items, got {n} x {k}"
        )));
    }
    if search.grid_steps == 0 {
        return Err(Error::Config("grid_steps must be positive".into()));
    }
    if x.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: x.len(),
        });
    }
    let eval = Evaluator::new(inst, model)?;
    let mut current = vec![0.0; n];
    eval.all(&x.x, &mut current);

    let max_size = search.max_coalition.unwrap_or(n).min(n);
    let budgets: Vec<(usize, f64)> = (1..=max_size)
        .map(|s| {
            (
                s,
                (s as f64 / n as f64 - search.budget_reduction) * inst.budget(),
            )
        })
        .filter(|&(_, b)| b > 0.0)
        .collect();
    let homogeneous = model.is_homogeneous();
    let threshold = search.mode.threshold();
    let steps = search.grid_steps as f64;

    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    let mut unit = vec![0.0; k];
    let mut y = vec![0.0; k];
    let mut base = vec![0.0; n];
    let mut after = vec![0.0; n];
    let mut gains = vec![0.0; n];
    compositions(search.grid_steps, k, |c| {
        for (u, &ci) in unit.iter_mut().zip(c) {
            *u = ci as f64 / steps;
        }
        if homogeneous {
            eval.all(&unit, &mut base);
        }
        for &(s, b) in &budgets {
            for (yj, uj) in y.iter_mut().zip(&unit) {
                *yj = uj * b;
            }
            if homogeneous {
                for (a, u) in after.iter_mut().zip(&base) {
                    *a = b * u;
                }
            } else {
                eval.all(&y, &mut after);
            }
            for i in 0..n {
                gains[i] = search.mode.gain(after[i], current[i]);
            }
            // s-th largest gain.
            let (_, kth, _) = gains.select_nth_unstable_by(s - 1, |a, b| b.total_cmp(a));
            let kth = *kth;
            if kth > threshold && best.as_ref().is_none_or(|bst| kth > bst.0) {
                best = Some((kth, s, y.clone(), after.clone()));
            }
        }
    });

    Ok(best.map(|(min_gain, s, y, after)| {
        let mut order: Vec<usize> = (0..n).collect();
        let gain = |i: usize| search.mode.gain(after[i], current[i]);
        order.sort_by(|&a, &b| gain(b).total_cmp(&gain(a)).then(a.cmp(&b)));
        let mut coalition = order[..s].to_vec();
        coalition.sort_unstable();
        Deviation {
            coalition,
            y: Allocation::fractional(y),
            min_gain,
        }
    }))
}

/// Searches for a coalition `S` and an item set `T` costing at most
/// `|S| B / n` that raises every member's saturating utility above
/// `(1 + epsilon_mult)` times its value at `x`. Returns the deviation with
/// the largest worst-member additive gain.
pub fn find_deviation_integral(
    inst: &Instance,
    x: &Allocation,
    epsilon_mult: f64,
) -> Result<Option<Deviation>> {
    let (n, k) = (inst.n(), inst.k());
    if k > MAX_SUBSET_ITEMS {
        return Err(Error::TooLarge(format!(
            "subset oracle handles at most {MAX_SUBSET_ITEMS} items, got {k}"
        )));
    }
    let sizes = inst.require_sizes()?;
    if x.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: x.len(),
        });
    }
    let model = UtilityModel::Saturating;
    let current: Vec<f64> = (0..n)
        .map(|i| model.evaluate(inst, i, &x.x))
        .collect::<Result<_>>()?;
    let factor = 1.0 + epsilon_mult;

    let mut best: Option<(f64, usize)> = None;
    for mask in 1usize..(1 << k) {
        let cost: f64 = (0..k)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| sizes[j])
            .sum();
        if cost > inst.budget() * (1.0 + 1e-12) {
            continue;
        }
        let mut members = 0usize;
        let mut min_gain = f64::INFINITY;
        for (i, &cur) in current.iter().enumerate() {
            let row = inst.row(i);
            let value: f64 = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| row[j]).sum();
            if value > factor * cur {
                members += 1;
                min_gain = min_gain.min(value - cur);
            }
        }
        if members > 0
            && members as f64 * inst.budget() >= cost * n as f64 * (1.0 - 1e-12)
            && best.is_none_or(|(g, _)| min_gain > g)
        {
            best = Some((min_gain, mask));
        }
    }

    Ok(best.map(|(min_gain, mask)| {
        let funded: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        let coalition = (0..n)
            .filter(|&i| {
                let value: f64 = funded.iter().map(|&j| inst.row(i)[j]).sum();
                value > factor * current[i]
            })
            .collect();
        let y = Allocation::from_funded_set(inst, &funded).expect("sizes checked above");
        Deviation {
            coalition,
            y,
            min_gain,
        }
    }))
}
