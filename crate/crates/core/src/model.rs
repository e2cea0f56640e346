//! Problem instances, utility families and allocations.
//!
//! Every family except Cobb-Douglas is scalar separable,
//! `U_i(x) = sum_j u_ij f_j(x_j)`, where the per-item curve `f_j` is shared
//! by all agents and only the weights `u_ij` differ. Cobb-Douglas is
//! `U_i(x) = prod_j x_j^a_ij` and is only ever solved through its
//! logarithm, which has the same core.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on Cobb-Douglas exponent rows summing to one.
pub const EXPONENT_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    n: usize,
    k: usize,
    budget: f64,
    /// Row-major `n x k`.
    utilities: Vec<f64>,
    sizes: Option<Vec<f64>>,
    item_names: Vec<String>,
}

impl Instance {
    /// Builds an instance from utility rows. Every agent must value at least
    /// one item.
    pub fn new(rows: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let inst = Self::build(rows, budget)?;
        if let Some(agent) = inst.first_zero_row() {
            return Err(Error::InvalidInstance(format!(
                "agent {agent} has zero utility for every item"
            )));
        }
        Ok(inst)
    }

    /// Like [`Instance::new`] but keeps agents whose utility row is all zero.
    /// Simulated electorates contain voters who approve nothing; they still
    /// count towards `n` and therefore towards coalition budgets.
    pub fn with_abstentions(rows: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        Self::build(rows, budget)
    }

    fn build(rows: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInstance("no agents".into()));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::InvalidInstance("no items".into()));
        }
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "budget must be positive, got {budget}"
            )));
        }
        let mut utilities = Vec::with_capacity(n * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidInstance(format!(
                    "agent {i} has invalid utility {v}"
                )));
            }
            utilities.extend(row);
        }
        let item_names = (1..=k).map(|j| format!("item{j}")).collect();
        Ok(Self {
            n,
            k,
            budget,
            utilities,
            sizes: None,
            item_names,
        })
    }

    pub fn with_sizes(mut self, sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: sizes.len(),
            });
        }
        if let Some(s) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidInstance(format!(
                "item size must be positive, got {s}"
            )));
        }
        self.sizes = Some(sizes);
        Ok(self)
    }

    pub fn with_item_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: names.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInstance(format!(
                    "duplicate item name {name:?}"
                )));
            }
        }
        self.item_names = names;
        Ok(self)
    }

    /// Same instance with a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "budget must be positive, got {budget}"
            )));
        }
        Ok(Self {
            budget,
            ..self.clone()
        })
    }

    /// Same instance with agent `agent`'s report replaced.
    pub fn with_row(&self, agent: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: row.len(),
            });
        }
        let mut rows = self.rows();
        rows[agent] = row.to_vec();
        let mut out = Self::build(rows, self.budget)?;
        out.sizes = self.sizes.clone();
        out.item_names = self.item_names.clone();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn utility(&self, agent: usize, item: usize) -> f64 {
        self.utilities[agent * self.k + item]
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.utilities[agent * self.k..(agent + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.utilities.chunks(self.k).map(|r| r.to_vec()).collect()
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn sizes(&self) -> Option<&[f64]> {
        self.sizes.as_deref()
    }

    pub fn require_sizes(&self) -> Result<&[f64]> {
        self.sizes.as_deref().ok_or(Error::MissingSizes)
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    /// Number of agents with a strictly positive utility for each item.
    pub fn vote_counts(&self) -> Vec<usize> {
        (0..self.k)
            .map(|j| (0..self.n).filter(|&i| self.utility(i, j) > 0.0).count())
            .collect()
    }

    fn first_zero_row(&self) -> Option<usize> {
        (0..self.n).find(|&i| self.row(i).iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    Fractional,
    Integral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<f64>,
    pub kind: AllocationKind,
}

impl Allocation {
    pub fn fractional(x: Vec<f64>) -> Self {
        Self {
            x,
            kind: AllocationKind::Fractional,
        }
    }

    pub fn integral(x: Vec<f64>) -> Self {
        Self {
            x,
            kind: AllocationKind::Integral,
        }
    }

    /// Integral allocation funding exactly the items in `funded`.
    pub fn from_funded_set(inst: &Instance, funded: &[usize]) -> Result<Self> {
        let sizes = inst.require_sizes()?;
        let mut x = vec![0.0; inst.k()];
        for &j in funded {
            x[j] = sizes[j];
        }
        Ok(Self::integral(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Indices of items with positive funding.
    pub fn funded(&self) -> Vec<usize> {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Checks non-negativity, `sum x <= B (1 + tol)` and, for integral
    /// allocations, `x_j in {0, s_j}`.
    pub fn validate(&self, inst: &Instance, tol: f64) -> Result<()> {
        if self.x.len() != inst.k() {
            return Err(Error::DimensionMismatch {
                expected: inst.k(),
                got: self.x.len(),
            });
        }
        if let Some(v) = self.x.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NotFeasible(format!(
                "negative or non-finite entry {v}"
            )));
        }
        let total = self.total();
        if total > inst.budget() * (1.0 + tol) {
            return Err(Error::NotFeasible(format!(
                "spends {total} against budget {}",
                inst.budget()
            )));
        }
        if self.kind == AllocationKind::Integral {
            let sizes = inst.require_sizes()?;
            for (j, (&v, &s)) in self.x.iter().zip(sizes).enumerate() {
                if v != 0.0 && v != s {
                    return Err(Error::NotFeasible(format!(
                        "integral allocation funds item {j} at {v}, size is {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-item curve `f_j` of a scalar separable utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ItemCurve {
    Linear,
    /// `x^alpha`, `alpha in (0, 1]`.
    Power {
        alpha: f64,
    },
    /// `min(x / s, 1)`.
    Saturating {
        size: f64,
    },
    /// `x / s` up to the knee, `(1/eps)(x/s)^eps + 1 - 1/eps` beyond it.
    SmoothedSaturating {
        size: f64,
        eps: f64,
    },
}

impl ItemCurve {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ItemCurve::Linear => x,
            ItemCurve::Power { alpha } => x.powf(alpha),
            ItemCurve::Saturating { size } => (x / size).min(1.0),
            ItemCurve::SmoothedSaturating { size, eps } => {
                if x <= size {
                    x / size
                } else {
                    (x / size).powf(eps) / eps + 1.0 - 1.0 / eps
                }
            }
        }
    }

    /// `f'(x)`. At the saturating knee this is the left derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ItemCurve::Linear => 1.0,
            ItemCurve::Power { alpha } => {
                if alpha == 1.0 {
                    1.0
                } else {
                    alpha * x.powf(alpha - 1.0)
                }
            }
            ItemCurve::Saturating { size } => {
                if x <= size {
                    1.0 / size
                } else {
                    0.0
                }
            }
            ItemCurve::SmoothedSaturating { size, eps } => {
                if x <= size {
                    1.0 / size
                } else {
                    (x / size).powf(eps - 1.0) / size
                }
            }
        }
    }

    /// `z(x) = x f'(x)`, finite at zero for every family.
    pub fn elasticity(&self, x: f64) -> f64 {
        match *self {
            ItemCurve::Linear => x,
            ItemCurve::Power { alpha } => alpha * x.powf(alpha),
            ItemCurve::Saturating { size } => {
                if x <= size {
                    x / size
                } else {
                    0.0
                }
            }
            ItemCurve::SmoothedSaturating { size, eps } => {
                if x <= size {
                    x / size
                } else {
                    (x / size).powf(eps)
                }
            }
        }
    }

    pub fn is_kink(&self, x: f64) -> bool {
        matches!(*self, ItemCurve::Saturating { size } if x == size)
    }

    /// Inverse of [`ItemCurve::elasticity`]. Only defined for non-satiating
    /// curves.
    fn inverse_elasticity(&self, z: f64) -> f64 {
        match *self {
            ItemCurve::Linear => z,
            ItemCurve::Power { alpha } => (z / alpha).powf(1.0 / alpha),
            ItemCurve::SmoothedSaturating { size, eps } => {
                if z <= 1.0 {
                    size * z
                } else {
                    size * z.powf(1.0 / eps)
                }
            }
            ItemCurve::Saturating { .. } => unreachable!("saturating curves have no z inverse"),
        }
    }

    /// `r(z) = h(z) / z = 1 / f'(h(z))`, written so that `z = 0` is finite.
    fn ratio(&self, z: f64) -> f64 {
        match *self {
            ItemCurve::Linear => 1.0,
            ItemCurve::Power { alpha } => {
                if alpha == 1.0 {
                    1.0
                } else {
                    alpha.powf(-1.0 / alpha) * z.powf(1.0 / alpha - 1.0)
                }
            }
            ItemCurve::SmoothedSaturating { size, eps } => {
                if z <= 1.0 {
                    size
                } else {
                    size * z.powf(1.0 / eps - 1.0)
                }
            }
            ItemCurve::Saturating { .. } => unreachable!("saturating curves have no z inverse"),
        }
    }

    /// `R(z) = int_0^z r(t) dt`.
    fn ratio_integral(&self, z: f64) -> f64 {
        match *self {
            ItemCurve::Linear => z,
            ItemCurve::Power { alpha } => alpha.powf(1.0 - 1.0 / alpha) * z.powf(1.0 / alpha),
            ItemCurve::SmoothedSaturating { size, eps } => {
                if z <= 1.0 {
                    size * z
                } else {
                    size + size * eps * (z.powf(1.0 / eps) - 1.0)
                }
            }
            ItemCurve::Saturating { .. } => unreachable!("saturating curves have no z inverse"),
        }
    }

    /// `R(z + dz) - R(z)` without cancellation for small `dz`.
    fn ratio_integral_delta(&self, z: f64, dz: f64) -> f64 {
        let growth = |p: f64| z.powf(p) * (p * (dz / z).ln_1p()).exp_m1();
        match *self {
            ItemCurve::Linear => dz,
            ItemCurve::Power { alpha } if z > 0.0 && dz / z > -1.0 => {
                alpha.powf(1.0 - 1.0 / alpha) * growth(1.0 / alpha)
            }
            ItemCurve::SmoothedSaturating { size, eps } if z > 1.0 && z + dz > 1.0 => {
                size * eps * growth(1.0 / eps)
            }
            _ => self.ratio_integral(z + dz) - self.ratio_integral(z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityModel {
    Linear,
    /// `sum_j u_ij x_j^alpha_j`.
    PowerSum {
        alphas: Vec<f64>,
    },
    /// `prod_j x_j^a_ij`; the utility matrix of the instance is ignored.
    CobbDouglas {
        exponents: Vec<Vec<f64>>,
    },
    /// `sum_j u_ij min(x_j / s_j, 1)` with sizes taken from the instance.
    Saturating,
    SmoothedSaturating {
        eps: f64,
    },
}

/// Gradient of one agent's utility. `kinks` lists items evaluated exactly at
/// a saturation point, where the left derivative was returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub kinks: Vec<usize>,
}

impl UtilityModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            UtilityModel::Linear => "linear",
            UtilityModel::PowerSum { .. } => "power_sum",
            UtilityModel::CobbDouglas { .. } => "cobb_douglas",
            UtilityModel::Saturating => "saturating",
            UtilityModel::SmoothedSaturating { .. } => "smoothed_saturating",
        }
    }

    /// Homogeneous of degree one (or a monotone transform of such).
    pub fn is_homogeneous(&self) -> bool {
        match self {
            UtilityModel::Linear | UtilityModel::CobbDouglas { .. } => true,
            UtilityModel::PowerSum { alphas } => alphas.iter().all(|&a| a == 1.0),
            _ => false,
        }
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        match self {
            UtilityModel::Linear => Ok(()),
            UtilityModel::PowerSum { alphas } => {
                if alphas.len() != inst.k() {
                    return Err(Error::DimensionMismatch {
                        expected: inst.k(),
                        got: alphas.len(),
                    });
                }
                match alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
                    Some(a) => Err(Error::InvalidModel(format!(
                        "power exponent {a} not in (0, 1]"
                    ))),
                    None => Ok(()),
                }
            }
            UtilityModel::CobbDouglas { exponents } => {
                if exponents.len() != inst.n() {
                    return Err(Error::DimensionMismatch {
                        expected: inst.n(),
                        got: exponents.len(),
                    });
                }
                for (i, row) in exponents.iter().enumerate() {
                    if row.len() != inst.k() {
                        return Err(Error::DimensionMismatch {
                            expected: inst.k(),
                            got: row.len(),
                        });
                    }
                    if row.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                        return Err(Error::InvalidModel(format!(
                            "agent {i} has a negative exponent"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > EXPONENT_ROW_TOL {
                        return Err(Error::InvalidModel(format!(
                            "agent {i} exponents sum to {sum}, expected 1"
                        )));
                    }
                }
                Ok(())
            }
            UtilityModel::Saturating => inst.require_sizes().map(|_| ()),
            UtilityModel::SmoothedSaturating { eps } => {
                inst.require_sizes()?;
                if !(*eps > 0.0 && *eps <= 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "smoothing exponent {eps} not in (0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Per-item curves, or `None` for Cobb-Douglas which is not separable.
    pub fn curves(&self, inst: &Instance) -> Result<Option<Vec<ItemCurve>>> {
        let k = inst.k();
        Ok(match self {
            UtilityModel::Linear => Some(vec![ItemCurve::Linear; k]),
            UtilityModel::PowerSum { alphas } => Some(
                alphas
                    .iter()
                    .map(|&alpha| ItemCurve::Power { alpha })
                    .collect(),
            ),
            UtilityModel::CobbDouglas { .. } => None,
            UtilityModel::Saturating => Some(
                inst.require_sizes()?
                    .iter()
                    .map(|&size| ItemCurve::Saturating { size })
                    .collect(),
            ),
            UtilityModel::SmoothedSaturating { eps } => Some(
                inst.require_sizes()?
                    .iter()
                    .map(|&size| ItemCurve::SmoothedSaturating { size, eps: *eps })
                    .collect(),
            ),
        })
    }

    fn check_point(&self, inst: &Instance, agent: usize, x: &[f64]) -> Result<()> {
        if x.len() != inst.k() {
            return Err(Error::DimensionMismatch {
                expected: inst.k(),
                got: x.len(),
            });
        }
        if agent >= inst.n() {
            return Err(Error::DimensionMismatch {
                expected: inst.n(),
                got: agent + 1,
            });
        }
        Ok(())
    }

    /// `U_i(x)`.
    pub fn evaluate(&self, inst: &Instance, agent: usize, x: &[f64]) -> Result<f64> {
        self.check_point(inst, agent, x)?;
        if let UtilityModel::CobbDouglas { exponents } = self {
            return Ok(exponents[agent]
                .iter()
                .zip(x)
                .map(|(&a, &xj)| if a == 0.0 { 1.0 } else { xj.powf(a) })
                .product());
        }
        let curves = self.curves(inst)?.expect("separable family");
        Ok(inst
            .row(agent)
            .iter()
            .zip(&curves)
            .zip(x)
            .map(|((&u, c), &xj)| if u == 0.0 { 0.0 } else { u * c.value(xj) })
            .sum())
    }

    /// `grad U_i(x)`. Saturating kinks return the left derivative and are
    /// listed in [`Gradient::kinks`].
    pub fn gradient(&self, inst: &Instance, agent: usize, x: &[f64]) -> Result<Gradient> {
        self.check_point(inst, agent, x)?;
        if let UtilityModel::CobbDouglas { exponents } = self {
            let row = &exponents[agent];
            let values = (0..x.len())
                .map(|j| {
                    if row[j] == 0.0 {
                        return 0.0;
                    }
                    // a_j x_j^(a_j - 1) prod_{m != j} x_m^a_m
                    let rest: f64 = row
                        .iter()
                        .zip(x)
                        .enumerate()
                        .filter(|&(m, (&a, _))| m != j && a != 0.0)
                        .map(|(_, (&a, &xm))| xm.powf(a))
                        .product();
                    if rest == 0.0 {
                        0.0
                    } else {
                        row[j] * x[j].powf(row[j] - 1.0) * rest
                    }
                })
                .collect();
            return Ok(Gradient {
                values,
                kinks: Vec::new(),
            });
        }
        let curves = self.curves(inst)?.expect("separable family");
        let mut kinks = Vec::new();
        let values = inst
            .row(agent)
            .iter()
            .zip(&curves)
            .zip(x)
            .enumerate()
            .map(|(j, ((&u, c), &xj))| {
                if c.is_kink(xj) {
                    kinks.push(j);
                }
                if u == 0.0 {
                    0.0
                } else {
                    u * c.derivative(xj)
                }
            })
            .collect();
        Ok(Gradient { values, kinks })
    }

    /// Closed-form z-space transform for non-satiating families.
    pub fn z_transform(&self, inst: &Instance) -> Result<ZTransform> {
        self.validate(inst)?;
        match self {
            UtilityModel::Saturating => Err(Error::Unsupported {
                family: self.family_name(),
                reason: "x f'(x) is not increasing; smooth the model first".into(),
            }),
            UtilityModel::CobbDouglas { .. } => Err(Error::Unsupported {
                family: self.family_name(),
                reason: "not separable; solve through proportional fairness".into(),
            }),
            _ => Ok(ZTransform {
                curves: self.curves(inst)?.expect("separable family"),
            }),
        }
    }
}

/// Change of variables `z_j = x_j f_j'(x_j)` under which the Lindahl
/// conditions become the optimality conditions of a concave program.
#[derive(Debug, Clone, PartialEq)]
pub struct ZTransform {
    curves: Vec<ItemCurve>,
}

impl ZTransform {
    pub fn k(&self) -> usize {
        self.curves.len()
    }

    pub fn curve(&self, item: usize) -> ItemCurve {
        self.curves[item]
    }

    pub fn z(&self, item: usize, x: f64) -> f64 {
        self.curves[item].elasticity(x)
    }

    /// `h_j`, the inverse of `z_j`.
    pub fn h(&self, item: usize, z: f64) -> f64 {
        self.curves[item].inverse_elasticity(z)
    }

    /// `r_j(z) = h_j(z) / z`.
    pub fn r(&self, item: usize, z: f64) -> f64 {
        self.curves[item].ratio(z)
    }

    /// `R_j(z)`, the antiderivative of `r_j` vanishing at zero.
    pub fn big_r(&self, item: usize, z: f64) -> f64 {
        self.curves[item].ratio_integral(z)
    }

    /// `R_j(z + dz) - R_j(z)`, accurate for small steps.
    pub fn big_r_delta(&self, item: usize, z: f64, dz: f64) -> f64 {
        self.curves[item].ratio_integral_delta(z, dz)
    }

    pub fn to_z(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.z(j, v)).collect()
    }

    pub fn to_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(j, &v)| self.h(j, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_items(rows: Vec<Vec<f64>>) -> Instance {
        Instance::new(rows, 1.0).unwrap()
    }

    #[test]
    fn linear_utility_is_a_dot_product() {
        let inst = two_items(vec![vec![1.0, 0.0]]);
        let u = UtilityModel::Linear
            .evaluate(&inst, 0, &[0.5, 0.5])
            .unwrap();
        assert_eq!(u, 0.5);
        let inst = two_items(vec![vec![2.0, 3.0]]);
        let g = UtilityModel::Linear
            .gradient(&inst, 0, &[0.1, 0.7])
            .unwrap();
        assert_eq!(g.values, vec![2.0, 3.0]);
    }

    #[test]
    fn saturating_caps_each_item() {
        let inst = two_items(vec![vec![1.0, 1.0]])
            .with_sizes(vec![2.0, 2.0])
            .unwrap();
        let u = UtilityModel::Saturating
            .evaluate(&inst, 0, &[2.0, 1.0])
            .unwrap();
        assert_eq!(u, 1.5);
    }

    #[test]
    fn saturating_kink_reports_left_derivative() {
        let inst = two_items(vec![vec![3.0, 1.0]])
            .with_sizes(vec![2.0, 2.0])
            .unwrap();
        let g = UtilityModel::Saturating
            .gradient(&inst, 0, &[2.0, 3.0])
            .unwrap();
        assert_eq!(g.values, vec![1.5, 0.0]);
        assert_eq!(g.kinks, vec![0]);
    }

    #[test]
    fn saturating_without_sizes_is_rejected() {
        let inst = two_items(vec![vec![1.0, 1.0]]);
        assert_eq!(
            UtilityModel::Saturating.evaluate(&inst, 0, &[0.1, 0.1]),
            Err(Error::MissingSizes)
        );
    }

    #[test]
    fn cobb_douglas_value_and_gradient() {
        let inst = two_items(vec![vec![1.0, 1.0]]);
        let model = UtilityModel::CobbDouglas {
            exponents: vec![vec![0.5, 0.5]],
        };
        assert!((model.evaluate(&inst, 0, &[4.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
        let g = model.gradient(&inst, 0, &[4.0, 1.0]).unwrap();
        // Central differences, step 1e-6.
        let h = 1e-6;
        let fd0 = (model.evaluate(&inst, 0, &[4.0 + h, 1.0]).unwrap()
            - model.evaluate(&inst, 0, &[4.0 - h, 1.0]).unwrap())
            / (2.0 * h);
        let fd1 = (model.evaluate(&inst, 0, &[4.0, 1.0 + h]).unwrap()
            - model.evaluate(&inst, 0, &[4.0, 1.0 - h]).unwrap())
            / (2.0 * h);
        assert!((fd0 - 0.25).abs() < 1e-8 && (fd1 - 1.0).abs() < 1e-8);
        assert!((g.values[0] - 0.25).abs() < 1e-12);
        assert!((g.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_sum_gradient() {
        let inst = two_items(vec![vec![1.0, 1.0]]);
        let model = UtilityModel::PowerSum {
            alphas: vec![0.5, 0.5],
        };
        let g = model.gradient(&inst, 0, &[1.0, 4.0]).unwrap();
        assert_eq!(g.values, vec![0.5, 0.25]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let inst = two_items(vec![vec![1.0, 1.0]]);
        assert!(matches!(
            UtilityModel::Linear.evaluate(&inst, 0, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn zero_rows_rejected_unless_abstentions_allowed() {
        assert!(Instance::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0).is_err());
        assert!(Instance::with_abstentions(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0).is_ok());
    }

    #[test]
    fn cobb_douglas_rows_must_sum_to_one() {
        let inst = two_items(vec![vec![1.0, 1.0]]);
        let bad = UtilityModel::CobbDouglas {
            exponents: vec![vec![0.5, 0.6]],
        };
        assert!(bad.validate(&inst).is_err());
    }

    #[test]
    fn z_transform_closed_forms() {
        let inst = Instance::new(vec![vec![1.0]], 1.0)
            .unwrap()
            .with_sizes(vec![1.0])
            .unwrap();
        let lin = UtilityModel::Linear.z_transform(&inst).unwrap();
        assert_eq!(
            (lin.z(0, 2.0), lin.h(0, 2.0), lin.r(0, 2.0)),
            (2.0, 2.0, 1.0)
        );

        let pow = UtilityModel::PowerSum { alphas: vec![0.5] }
            .z_transform(&inst)
            .unwrap();
        assert!((pow.z(0, 4.0) - 1.0).abs() < 1e-15);
        assert!((pow.h(0, 1.0) - 4.0).abs() < 1e-12);

        let smooth = UtilityModel::SmoothedSaturating { eps: 0.5 }
            .z_transform(&inst)
            .unwrap();
        assert!((smooth.z(0, 4.0) - 2.0).abs() < 1e-15);
        assert!((smooth.h(0, 2.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn z_transform_rejects_satiating_families() {
        let inst = Instance::new(vec![vec![1.0]], 1.0)
            .unwrap()
            .with_sizes(vec![1.0])
            .unwrap();
        assert!(matches!(
            UtilityModel::Saturating.z_transform(&inst),
            Err(Error::Unsupported { .. })
        ));
        let cd = UtilityModel::CobbDouglas {
            exponents: vec![vec![1.0]],
        };
        assert!(matches!(
            cd.z_transform(&inst),
            Err(Error::Unsupported { .. })
        ));
    }

    #[test]
    fn integral_allocation_must_match_sizes() {
        let inst = two_items(vec![vec![1.0, 1.0]])
            .with_sizes(vec![0.5, 0.5])
            .unwrap();
        assert!(Allocation::integral(vec![0.5, 0.0])
            .validate(&inst, 0.0)
            .is_ok());
        assert!(Allocation::integral(vec![0.25, 0.0])
            .validate(&inst, 0.0)
            .is_err());
        assert!(Allocation::fractional(vec![0.75, 0.5])
            .validate(&inst, 0.0)
            .is_err());
    }
}
