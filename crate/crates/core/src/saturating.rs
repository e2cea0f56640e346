//! Core allocations for saturating utilities `u_ij min(x_j / s_j, 1)`.
//!
//! Two routes: a smoothed non-satiating relaxation, solved exactly and
//! carrying a multiplicative guarantee, and a coordinate heuristic that
//! searches directly for an exact equilibrium in `(x_j, y_j)`, where
//! `y_j = f_j'(x_j)` is free in `(0, 1/s_j]` once item `j` is fully funded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindahl::{self, LindahlResult, SolverConfig};
use crate::model::{Allocation, Instance, UtilityModel};

/// Replaces the saturating curve by its non-satiating smoothing with
/// exponent `eps`.
pub fn smooth_relax(model: &UtilityModel, eps: f64) -> Result<UtilityModel> {
    if *model != UtilityModel::Saturating {
        return Err(Error::InvalidModel(format!(
            "only saturating utilities can be smoothed, got {}",
            model.family_name()
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidModel(format!(
            "smoothing exponent {eps} not in (0, 1]"
        )));
    }
    Ok(UtilityModel::SmoothedSaturating { eps })
}

/// Multiplicative approximation factor `(1/eps)(B/s)^eps + 1 - 1/eps` of the
/// smoothed solution. Below `B/s = 1` the smoothing never engages and the
/// factor is exactly one.
pub fn alpha_bound(budget_over_size: f64, eps: f64) -> f64 {
    if budget_over_size <= 1.0 {
        return 1.0;
    }
    (budget_over_size.powf(eps) / eps + 1.0 - 1.0 / eps).max(1.0)
}

/// The exponent `1 / ln(B/s)` minimizing the order of [`alpha_bound`],
/// which is then `1 + (e - 1) ln(B/s)`. Capped at one when `B/s <= e`.
pub fn log_optimal_eps(budget_over_size: f64) -> f64 {
    let l = budget_over_size.ln();
    if l <= 1.0 {
        1.0
    } else {
        1.0 / l
    }
}

/// Solves the smoothed relaxation and reports its approximation factor
/// with `s = min_j s_j`.
pub fn solve_smoothed(
    inst: &Instance,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<(LindahlResult, f64)> {
    let model = smooth_relax(&UtilityModel::Saturating, eps)?;
    let sizes = inst.require_sizes()?;
    let s = sizes.iter().copied().fold(f64::INFINITY, f64::min);
    let res = lindahl::solve_potential(inst, &model, cfg)?;
    Ok((res, alpha_bound(inst.budget() / s, eps)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Target violation; `None` means `1/n`.
    pub eps_target: Option<f64>,
    /// Upper end of the uniform utility noise; `None` means `1/k^2`.
    pub perturb_alpha: Option<f64>,
    pub max_sweeps: usize,
    pub bisection_tol: f64,
    pub seed: u64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            eps_target: None,
            perturb_alpha: None,
            max_sweeps: 10_000,
            bisection_tol: 1e-10,
            seed: 0,
        }
    }
}

impl HeuristicConfig {
    fn resolve(&self, inst: &Instance) -> Result<(f64, f64)> {
        let eps = self.eps_target.unwrap_or(1.0 / inst.n() as f64);
        let alpha = self
            .perturb_alpha
            .unwrap_or(1.0 / (inst.k() * inst.k()) as f64);
        if !(eps > 0.0) || !(self.bisection_tol > 0.0) || !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!(
                "heuristic parameters must be positive (eps_target {eps}, bisection_tol {}, perturb_alpha {alpha})",
                self.bisection_tol
            )));
        }
        if eps < self.bisection_tol {
            return Err(Error::Config(format!(
                "eps_target {eps} is below bisection_tol {}",
                self.bisection_tol
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be positive".into()));
        }
        Ok((eps, alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicResult {
    /// Allocation with `0 <= x_j <= s_j`.
    pub x: Allocation,
    /// Marginal values `y_j`, equal to `1/s_j` unless item `j` is saturated.
    pub y: Vec<f64>,
    /// `(sweep, max violation)` after each item update; sweep 0 is the start.
    pub max_violation_trace: Vec<(usize, f64)>,
    pub converged: bool,
    pub sweeps: usize,
    /// Final per-item violations.
    pub violations: Vec<f64>,
    /// Spend differs from `B` by more than `eps_target * B`.
    pub budget_flagged: bool,
    /// The instance with the noisy utilities actually used.
    pub perturbed: Instance,
}

impl HeuristicResult {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

struct State<'a> {
    inst: &'a Instance,
    sizes: &'a [f64],
    scale: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    /// `D_i = sum_m u_im x_m y_m`.
    spend: Vec<f64>,
}

impl State<'_> {
    fn refresh(&mut self) {
        let k = self.inst.k();
        for (i, d) in self.spend.iter_mut().enumerate() {
            let row = &self.inst.utilities()[i * k..(i + 1) * k];
            *d = row
                .iter()
                .zip(&self.x)
                .zip(&self.y)
                .map(|((u, x), y)| u * x * y)
                .sum();
        }
    }

    /// Left side of the equilibrium condition for item `j` with `(x_j, y_j)`
    /// replaced by `(xj, yj)`.
    fn lhs(&self, j: usize, xj: f64, yj: f64) -> f64 {
        let k = self.inst.k();
        let (x0, y0) = (self.x[j], self.y[j]);
        let mut total = 0.0;
        for (i, &d) in self.spend.iter().enumerate() {
            let u = self.inst.utilities()[i * k + j];
            if u == 0.0 {
                continue;
            }
            let rest = (d - u * x0 * y0).max(0.0);
            let denom = rest + u * xj * yj;
            if denom <= 0.0 {
                return f64::INFINITY;
            }
            total += u * yj / denom;
        }
        self.scale * total
    }

    fn violation(&self, j: usize) -> f64 {
        let l = self.lhs(j, self.x[j], self.y[j]);
        if self.x[j] > 0.0 {
            (l - 1.0).abs()
        } else {
            (l - 1.0).max(0.0)
        }
    }

    /// Sets `(x_j, y_j)` so that item `j` satisfies its condition given the
    /// others, respecting complementarity.
    fn resolve(&mut self, j: usize, tol: f64) {
        let s = self.sizes[j];
        let full = 1.0 / s;
        let (xj, yj) = if self.lhs(j, 0.0, full) <= 1.0 {
            (0.0, full)
        } else if self.lhs(j, s, full) >= 1.0 {
            // Saturated: lower the marginal value until the condition is tight.
            // The left side is increasing in y.
            let (mut lo, mut hi) = (0.0, full);
            while hi - lo > tol * full {
                let mid = 0.5 * (lo + hi);
                if self.lhs(j, s, mid) > 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            (s, 0.5 * (lo + hi))
        } else {
            // Interior: the left side is decreasing in x.
            let (mut lo, mut hi) = (0.0, s);
            while hi - lo > tol * s {
                let mid = 0.5 * (lo + hi);
                if self.lhs(j, mid, full) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi), full)
        };
        let k = self.inst.k();
        let (x0, y0) = (self.x[j], self.y[j]);
        for (i, d) in self.spend.iter_mut().enumerate() {
            let u = self.inst.utilities()[i * k + j];
            *d += u * (xj * yj - x0 * y0);
        }
        self.x[j] = xj;
        self.y[j] = yj;
    }
}

/// Searches for an exact equilibrium of a saturating instance by repeatedly
/// re-solving the item with the largest violation. Utilities are perturbed
/// once, up front, with `Uniform(0, perturb_alpha)` noise.
pub fn heuristic_solve(inst: &Instance, cfg: &HeuristicConfig) -> Result<HeuristicResult> {
    let sizes = inst.require_sizes()?.to_vec();
    let (eps, alpha) = cfg.resolve(inst)?;
    let (n, k, budget) = (inst.n(), inst.k(), inst.budget());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            inst.row(i)
                .iter()
                .map(|&u| {
                    if alpha > 0.0 {
                        u + rng.random_range(0.0..alpha)
                    } else {
                        u
                    }
                })
                .collect()
        })
        .collect();
    let perturbed = Instance::new(rows, budget)
        .map_err(|_| {
            let agent = (0..n)
                .find(|&i| inst.row(i).iter().all(|&u| u == 0.0))
                .unwrap_or(0);
            Error::DegenerateAgent { agent }
        })?
        .with_sizes(sizes.clone())?
        .with_item_names(inst.item_names().to_vec())?;

    let total_size: f64 = sizes.iter().sum();
    if total_size <= budget * (1.0 + 1e-12) {
        // Everything fits: funding every item gives each agent its maximum
        // utility, which no coalition can improve on.
        let y: Vec<f64> = sizes.iter().map(|s| 1.0 / s).collect();
        return Ok(HeuristicResult {
            x: Allocation::fractional(sizes),
            y,
            max_violation_trace: vec![(0, 0.0)],
            converged: true,
            sweeps: 0,
            violations: vec![0.0; k],
            budget_flagged: false,
            perturbed,
        });
    }

    let mut state = State {
        inst: &perturbed,
        sizes: &sizes,
        scale: budget / n as f64,
        x: sizes.iter().map(|&s| s.min(budget / k as f64)).collect(),
        y: sizes.iter().map(|s| 1.0 / s).collect(),
        spend: vec![0.0; n],
    };
    state.refresh();

    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    let mut sweeps = 0;
    loop {
        if sweeps % 64 == 0 {
            // Bound drift in the incrementally maintained spends.
            state.refresh();
        }
        let violations: Vec<f64> = (0..k).map(|j| state.violation(j)).collect();
        let (worst, max_v) =
            violations
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
                );
        trace.push((sweeps, max_v));
        if best.as_ref().is_none_or(|b| max_v < b.0) {
            best = Some((max_v, state.x.clone(), state.y.clone()));
        }
        if max_v <= eps {
            converged = true;
            break;
        }
        if sweeps == cfg.max_sweeps {
            break;
        }
        state.resolve(worst, cfg.bisection_tol);
        sweeps += 1;
    }

    let (x, y) = if converged {
        (state.x, state.y)
    } else {
        let (_, x, y) = best.expect("at least one iterate");
        (x, y)
    };
    state = State {
        inst: &perturbed,
        sizes: &sizes,
        scale: budget / n as f64,
        x,
        y,
        spend: vec![0.0; n],
    };
    state.refresh();
    let violations: Vec<f64> = (0..k).map(|j| state.violation(j)).collect();
    let spent: f64 = state.x.iter().sum();
    let budget_flagged = (spent - budget).abs() > eps * budget;
    if budget_flagged {
        log::warn!("heuristic allocation spends {spent} against budget {budget}");
    }
    Ok(HeuristicResult {
        x: Allocation::fractional(state.x),
        y: state.y,
        max_violation_trace: trace,
        converged,
        sweeps,
        violations,
        budget_flagged,
        perturbed,
    })
}
