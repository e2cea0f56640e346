//! Lindahl equilibria for non-satiating utilities.
//!
//! An allocation is a Lindahl equilibrium iff, for every item,
//! `(B/n) sum_i dU_i/dx_j / (x . grad U_i) <= 1`, with equality on funded
//! items. The signed left side minus one is the *residual* used throughout.
//! For non-satiating separable families the conditions are the optimality
//! conditions of a concave potential in `z_j = x_j f_j'(x_j)`; for
//! homogeneous families they are those of proportional fairness.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ascent::{self, AscentConfig, AscentOutcome, Objective};
use crate::error::{Error, Result};
use crate::model::{Allocation, Instance, UtilityModel, ZTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Lower bound on each coordinate, as a fraction of the budget.
    pub z_floor: f64,
    pub step_init: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            max_iters: 50_000,
            z_floor: 1e-12,
            step_init: 1.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::Config(format!(
                "residual_tol must be positive, got {}",
                self.residual_tol
            )));
        }
        if !(self.z_floor > 0.0) {
            return Err(Error::Config(format!(
                "z_floor must be positive, got {}",
                self.z_floor
            )));
        }
        if !(self.step_init > 0.0) {
            return Err(Error::Config(format!(
                "step_init must be positive, got {}",
                self.step_init
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindahlResult {
    pub x: Allocation,
    /// Residuals of the equilibrium conditions at `x`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, max violation)` over the run.
    pub objective_trace: Vec<(usize, f64)>,
    /// Objective value at each accepted iterate, relative to the starting point.
    pub potential_trace: Vec<f64>,
}

impl LindahlResult {
    /// Largest violation: `|r_j|` on funded items, `max(r_j, 0)` elsewhere.
    pub fn max_violation(&self) -> f64 {
        violation(&self.x.x, &self.residuals)
    }
}

pub(crate) fn violation(x: &[f64], residuals: &[f64]) -> f64 {
    x.iter()
        .zip(residuals)
        .map(|(&xj, &r)| if xj > 0.0 { r.abs() } else { r.max(0.0) })
        .fold(0.0, f64::max)
}

/// Per-agent item prices supporting an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVectors {
    n: usize,
    k: usize,
    /// Row-major `n x k`.
    p: Vec<f64>,
}

impl PriceVectors {
    pub(crate) fn from_rows(n: usize, k: usize, p: Vec<f64>) -> Self {
        debug_assert_eq!(p.len(), n * k);
        Self { n, k, p }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn price(&self, agent: usize, item: usize) -> f64 {
        self.p[agent * self.k + item]
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.p[agent * self.k..(agent + 1) * self.k]
    }

    /// `sum_j p_ij x_j`.
    pub fn spend(&self, agent: usize, x: &[f64]) -> f64 {
        self.row(agent)
            .iter()
            .zip(x)
            .map(|(p, v)| if *v == 0.0 { 0.0 } else { p * v })
            .sum()
    }

    /// `sum_i p_ij` for each item.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for row in self.p.chunks(self.k) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

/// Row-major `n x k` matrix of `(dU_i/dx_j) / (x . grad U_i)`.
fn marginal_shares(inst: &Instance, model: &UtilityModel, x: &[f64]) -> Result<Vec<f64>> {
    model.validate(inst)?;
    let (n, k) = (inst.n(), inst.k());
    if x.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: x.len(),
        });
    }
    if let UtilityModel::CobbDouglas { exponents } = model {
        // x . grad U = U by homogeneity, so the share is a_ij / x_j.
        let mut out = Vec::with_capacity(n * k);
        for row in exponents {
            out.extend(
                row.iter()
                    .zip(x)
                    .map(|(&a, &xj)| if a == 0.0 { 0.0 } else { a / xj }),
            );
        }
        return Ok(out);
    }
    let curves = model.curves(inst)?.expect("separable family");
    let marginals: Vec<f64> = curves
        .iter()
        .zip(x)
        .map(|(c, &v)| c.derivative(v))
        .collect();
    let elasticities: Vec<f64> = curves
        .iter()
        .zip(x)
        .map(|(c, &v)| c.elasticity(v))
        .collect();
    separable_shares(inst, &marginals, &elasticities)
}

fn separable_shares(inst: &Instance, marginals: &[f64], elasticities: &[f64]) -> Result<Vec<f64>> {
    let k = inst.k();
    for v in [marginals.len(), elasticities.len()] {
        if v != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: v,
            });
        }
    }
    let mut out = Vec::with_capacity(inst.n() * k);
    for i in 0..inst.n() {
        let row = inst.row(i);
        let denom: f64 = row
            .iter()
            .zip(elasticities)
            .map(|(&u, &e)| if u == 0.0 { 0.0 } else { u * e })
            .sum();
        if !(denom > 0.0) {
            return Err(Error::DegenerateAgent { agent: i });
        }
        out.extend(
            row.iter()
                .zip(marginals)
                .map(|(&u, &m)| if u == 0.0 { 0.0 } else { u * m / denom }),
        );
    }
    Ok(out)
}

fn residuals_from_shares(inst: &Instance, shares: &[f64]) -> Vec<f64> {
    let k = inst.k();
    let scale = inst.budget() / inst.n() as f64;
    let mut out = vec![0.0; k];
    for row in shares.chunks(k) {
        for (o, s) in out.iter_mut().zip(row) {
            *o += s;
        }
    }
    out.iter().map(|s| scale * s - 1.0).collect()
}

/// Residuals of the equilibrium conditions at `x`.
pub fn lindahl_residuals(
    inst: &Instance,
    model: &UtilityModel,
    x: &Allocation,
) -> Result<Vec<f64>> {
    let shares = marginal_shares(inst, model, &x.x)?;
    Ok(residuals_from_shares(inst, &shares))
}

/// Residuals for a separable model given per-item marginal values `m_j` and
/// `e_j = x_j m_j`. This is the form used when the marginal is a free
/// variable, as for saturating utilities at the knee.
pub fn residuals_with_marginals(
    inst: &Instance,
    marginals: &[f64],
    elasticities: &[f64],
) -> Result<Vec<f64>> {
    let shares = separable_shares(inst, marginals, elasticities)?;
    Ok(residuals_from_shares(inst, &shares))
}

/// Prices `p_ij = (B/n) (dU_i/dx_j) / (x . grad U_i)`.
pub fn recover_prices(
    inst: &Instance,
    model: &UtilityModel,
    x: &Allocation,
) -> Result<PriceVectors> {
    let scale = inst.budget() / inst.n() as f64;
    let p = marginal_shares(inst, model, &x.x)?
        .into_iter()
        .map(|s| scale * s)
        .collect();
    Ok(PriceVectors {
        n: inst.n(),
        k: inst.k(),
        p,
    })
}

/// Identical utility rows merged into `(row, multiplicity)`, in first-seen order.
fn merge_rows(inst: &Instance) -> (Vec<f64>, Vec<f64>) {
    let k = inst.k();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..inst.n() {
        let row = inst.row(i);
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&g) => weights[g] += 1.0,
            None => {
                index.insert(key, weights.len());
                rows.extend_from_slice(row);
                weights.push(1.0);
            }
        }
    }
    debug_assert_eq!(rows.len(), weights.len() * k);
    (rows, weights)
}

/// `sum_g w_g log(u_g . z) - (n/B) sum_j R_j(z_j)`.
struct Potential {
    k: usize,
    rows: Vec<f64>,
    weights: Vec<f64>,
    scale: f64,
    transform: ZTransform,
}

impl Potential {
    fn dots(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .chunks(self.k)
            .map(|row| row.iter().zip(v).map(|(u, z)| u * z).sum())
            .collect()
    }
}

impl Objective for Potential {
    fn dim(&self) -> usize {
        self.k
    }

    fn value(&self, v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (w, d) in self.weights.iter().zip(self.dots(v)) {
            if !(d > 0.0) {
                return f64::NEG_INFINITY;
            }
            total += w * d.ln();
        }
        let cost: f64 = v
            .iter()
            .enumerate()
            .map(|(j, &z)| self.transform.big_r(j, z))
            .sum();
        total - self.scale * cost
    }

    fn delta(&self, v: &[f64], d: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((w, base), step) in self.weights.iter().zip(self.dots(v)).zip(self.dots(d)) {
            let ratio = step / base;
            if !(ratio > -1.0) {
                return f64::NEG_INFINITY;
            }
            total += w * ratio.ln_1p();
        }
        let cost: f64 = (0..self.k)
            .map(|j| {
                if self.transform.curve(j) == crate::model::ItemCurve::Linear {
                    d[j]
                } else {
                    self.transform.big_r_delta(j, v[j], d[j])
                }
            })
            .sum();
        total - self.scale * cost
    }

    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        for j in 0..self.k {
            out[j] = -self.scale * self.transform.r(j, v[j]);
        }
        for (row, (w, d)) in self
            .rows
            .chunks(self.k)
            .zip(self.weights.iter().zip(self.dots(v)))
        {
            let coef = w / d;
            for (o, u) in out.iter_mut().zip(row) {
                *o += coef * u;
            }
        }
    }

    fn residual(&self, v: &[f64], grad: &[f64], j: usize) -> f64 {
        grad[j] / (self.scale * self.transform.r(j, v[j]))
    }
}

/// Log of homogeneous Cobb-Douglas utilities, aggregated per item:
/// `sum_j w_j log x_j - (n/B) sum_j x_j` with `w_j = sum_i a_ij`.
struct LogCobbDouglas {
    weights: Vec<f64>,
    scale: f64,
}

impl Objective for LogCobbDouglas {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .map(|(&w, &x)| {
                if w == 0.0 {
                    -self.scale * x
                } else {
                    w * x.ln() - self.scale * x
                }
            })
            .sum()
    }

    fn delta(&self, v: &[f64], d: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((&w, &x), &dx) in self.weights.iter().zip(v).zip(d) {
            if w > 0.0 {
                let ratio = dx / x;
                if !(ratio > -1.0) {
                    return f64::NEG_INFINITY;
                }
                total += w * ratio.ln_1p();
            }
            total -= self.scale * dx;
        }
        total
    }

    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        for ((o, &w), &x) in out.iter_mut().zip(&self.weights).zip(v) {
            *o = w / x - self.scale;
        }
    }

    fn residual(&self, _v: &[f64], grad: &[f64], j: usize) -> f64 {
        grad[j] / self.scale
    }
}

fn reject_abstainers(inst: &Instance, model: &UtilityModel) -> Result<()> {
    if matches!(model, UtilityModel::CobbDouglas { .. }) {
        return Ok(());
    }
    match (0..inst.n()).find(|&i| inst.row(i).iter().all(|&u| u == 0.0)) {
        Some(agent) => Err(Error::DegenerateAgent { agent }),
        None => Ok(()),
    }
}

fn ascent_config(inst: &Instance, cfg: &SolverConfig) -> AscentConfig {
    // Stop a little inside the tolerance so the independent residual
    // evaluation on the snapped allocation also passes.
    AscentConfig {
        tol: 0.5 * cfg.residual_tol,
        max_iters: cfg.max_iters,
        floor: cfg.z_floor * inst.budget(),
        step_init: cfg.step_init,
    }
}

fn finish(
    inst: &Instance,
    model: &UtilityModel,
    cfg: &SolverConfig,
    outcome: AscentOutcome,
    to_x: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<LindahlResult> {
    let floor = cfg.z_floor * inst.budget();
    let snapped: Vec<f64> = outcome
        .v
        .iter()
        .map(|&v| if ascent::at_floor(v, floor) { 0.0 } else { v })
        .collect();
    let x = Allocation::fractional(to_x(&snapped));
    let residuals = match lindahl_residuals(inst, model, &x) {
        Ok(r) => r,
        // Snapping can starve an agent whose only liked items sat at the
        // floor; such an iterate is certainly not an equilibrium.
        Err(Error::DegenerateAgent { .. }) => vec![f64::INFINITY; inst.k()],
        Err(e) => return Err(e),
    };
    // The residual check is authoritative: a line search that stalls on
    // roundoff next to the optimum still yields a certified equilibrium.
    let converged = violation(&x.x, &residuals) <= cfg.residual_tol;
    if !converged {
        log::debug!(
            "lindahl solver stopped after {} iterations without converging (line search failed: {})",
            outcome.iterations,
            outcome.line_search_failed
        );
    } else if !outcome.converged {
        log::debug!(
            "lindahl solver stalled on roundoff after {} iterations within tolerance",
            outcome.iterations
        );
    }
    Ok(LindahlResult {
        x,
        residuals,
        iterations: outcome.iterations,
        converged,
        objective_trace: outcome.trace,
        potential_trace: outcome.values,
    })
}

/// Maximizes the potential in z-space by projected gradient ascent.
/// Cobb-Douglas is delegated to [`solve_proportional_fairness`].
pub fn solve_potential(
    inst: &Instance,
    model: &UtilityModel,
    cfg: &SolverConfig,
) -> Result<LindahlResult> {
    cfg.check()?;
    if matches!(model, UtilityModel::CobbDouglas { .. }) {
        return solve_proportional_fairness(inst, model, cfg);
    }
    let transform = model.z_transform(inst)?;
    reject_abstainers(inst, model)?;
    let (rows, weights) = merge_rows(inst);
    let objective = Potential {
        k: inst.k(),
        rows,
        weights,
        scale: inst.n() as f64 / inst.budget(),
        transform: transform.clone(),
    };
    let start = transform.to_z(&vec![inst.budget() / inst.k() as f64; inst.k()]);
    let outcome = ascent::projected_ascent(&objective, &start, &ascent_config(inst, cfg));
    finish(inst, model, cfg, outcome, |z| transform.to_x(z))
}

/// Maximizes `sum_i log U_i(x)` over the budget simplex for homogeneous
/// degree-one families (linear and Cobb-Douglas).
pub fn solve_proportional_fairness(
    inst: &Instance,
    model: &UtilityModel,
    cfg: &SolverConfig,
) -> Result<LindahlResult> {
    cfg.check()?;
    model.validate(inst)?;
    if !model.is_homogeneous() {
        return Err(Error::Unsupported {
            family: model.family_name(),
            reason: "proportional fairness equals the Lindahl equilibrium only for homogeneous utilities".into(),
        });
    }
    let scale = inst.n() as f64 / inst.budget();
    let start = vec![inst.budget() / inst.k() as f64; inst.k()];
    let acfg = ascent_config(inst, cfg);
    let outcome = match model {
        UtilityModel::CobbDouglas { exponents } => {
            let mut weights = vec![0.0; inst.k()];
            for row in exponents {
                for (w, a) in weights.iter_mut().zip(row) {
                    *w += a;
                }
            }
            ascent::projected_ascent(&LogCobbDouglas { weights, scale }, &start, &acfg)
        }
        _ => {
            reject_abstainers(inst, model)?;
            let (rows, weights) = merge_rows(inst);
            let transform = UtilityModel::Linear.z_transform(inst)?;
            let objective = Potential {
                k: inst.k(),
                rows,
                weights,
                scale,
                transform,
            };
            ascent::projected_ascent(&objective, &start, &acfg)
        }
    };
    finish(inst, model, cfg, outcome, |x| x.to_vec())
}

/// Step size rule for [`sgd_elicitation`], in budget-normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `c / sqrt(t)`.
    InvSqrt {
        c: f64,
    },
    Constant {
        eta: f64,
    },
}

impl StepSchedule {
    fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::InvSqrt { c } => c / (t as f64).sqrt(),
            StepSchedule::Constant { eta } => eta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    /// Lower bound on each coordinate, as a fraction of the budget.
    pub x_floor: f64,
    /// Maximum residual violation reported as converged. Stochastic
    /// iterates never satisfy the deterministic tolerance.
    pub tolerance: f64,
    /// Number of residual samples recorded in the trace.
    pub trace_points: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            rounds: 100_000,
            schedule: StepSchedule::InvSqrt { c: 0.05 },
            seed: 0,
            x_floor: 1e-9,
            tolerance: 1e-2,
            trace_points: 100,
        }
    }
}

/// The simulated quadratic-voting response of `agent` at `x`: the direction
/// of steepest utility increase, normalized to the unit sphere.
pub fn vote_direction(
    inst: &Instance,
    model: &UtilityModel,
    agent: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let g = model.gradient(inst, agent, x)?.values;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateAgent { agent });
    }
    Ok(g.into_iter().map(|v| v / norm).collect())
}

/// Unbiased single-agent estimate of the gradient of
/// `F(x) = (1/n) sum_i log U_i(x) - |x|_1 / B`. Homogeneity gives
/// `grad U_i / U_i = d / (x . d)` for the vote direction `d`.
pub fn stochastic_gradient(
    inst: &Instance,
    model: &UtilityModel,
    agent: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let d = vote_direction(inst, model, agent, x)?;
    let dot: f64 = d.iter().zip(x).map(|(a, b)| a * b).sum();
    if !(dot > 0.0) {
        return Err(Error::DegenerateAgent { agent });
    }
    let inv_b = 1.0 / inst.budget();
    Ok(d.into_iter().map(|v| v / dot - inv_b).collect())
}

/// Exact gradient of `F`.
pub fn elicitation_gradient(inst: &Instance, model: &UtilityModel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; inst.k()];
    for i in 0..inst.n() {
        for (o, g) in out.iter_mut().zip(stochastic_gradient(inst, model, i, x)?) {
            *o += g;
        }
    }
    let n = inst.n() as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// Stochastic gradient ascent on `F`, one sampled voter per round. The
/// returned allocation is the average of the iterates over the second half
/// of the run.
pub fn sgd_elicitation(
    inst: &Instance,
    model: &UtilityModel,
    cfg: &SgdConfig,
) -> Result<LindahlResult> {
    model.validate(inst)?;
    if !model.is_homogeneous() {
        return Err(Error::Unsupported {
            family: model.family_name(),
            reason: "the elicitation gradient estimate requires homogeneous utilities".into(),
        });
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("sgd needs at least one round".into()));
    }
    let (n, k, budget) = (inst.n(), inst.k(), inst.budget());
    let floor = cfg.x_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Work in x / B so that step sizes are dimensionless.
    let mut x = vec![1.0 / k as f64; k];
    let mut avg = vec![0.0; k];
    let mut averaged = 0usize;
    let tail_start = cfg.rounds / 2;
    let trace_every = (cfg.rounds / cfg.trace_points.max(1)).max(1);
    let mut trace = Vec::new();
    let mut scaled = vec![0.0; k];

    for t in 1..=cfg.rounds {
        let agent = rng.random_range(0..n);
        for (s, v) in scaled.iter_mut().zip(&x) {
            *s = v * budget;
        }
        let g = stochastic_gradient(inst, model, agent, &scaled)?;
        let eta = cfg.schedule.at(t);
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj = (*xj + eta * gj * budget).max(floor);
        }
        if t > tail_start {
            averaged += 1;
            for (a, v) in avg.iter_mut().zip(&x) {
                *a += (v - *a) / averaged as f64;
            }
        }
        if t % trace_every == 0 {
            let current = Allocation::fractional(x.iter().map(|v| v * budget).collect());
            let r = lindahl_residuals(inst, model, &current)?;
            trace.push((t, violation(&current.x, &r)));
        }
    }

    let x = Allocation::fractional(avg.into_iter().map(|v| v * budget).collect());
    let residuals = lindahl_residuals(inst, model, &x)?;
    let converged = violation(&x.x, &residuals) <= cfg.tolerance;
    Ok(LindahlResult {
        x,
        residuals,
        iterations: cfg.rounds,
        converged,
        objective_trace: trace,
        potential_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(sizes: &[usize], budget: f64) -> Instance {
        let k = sizes.len();
        let mut rows = Vec::new();
        for (j, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                let mut row = vec![0.0; k];
                row[j] = 1.0;
                rows.push(row);
            }
        }
        Instance::new(rows, budget).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn residuals_vanish_at_proportional_split() {
        let inst = groups(&[3, 1], 1.0);
        let r = lindahl_residuals(
            &inst,
            &UtilityModel::Linear,
            &Allocation::fractional(vec![0.75, 0.25]),
        )
        .unwrap();
        assert_close(&r, &[0.0, 0.0], 1e-15);

        let sym = groups(&[1, 1], 2.0);
        let r = lindahl_residuals(
            &sym,
            &UtilityModel::Linear,
            &Allocation::fractional(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_close(&r, &[0.0, 0.0], 1e-15);
    }

    #[test]
    fn residuals_flag_starved_agent() {
        let sym = groups(&[1, 1], 2.0);
        let err = lindahl_residuals(
            &sym,
            &UtilityModel::Linear,
            &Allocation::fractional(vec![2.0, 0.0]),
        );
        assert_eq!(err, Err(Error::DegenerateAgent { agent: 1 }));
    }

    #[test]
    fn proportional_fairness_on_disjoint_groups() {
        let inst = groups(&[4, 1], 1.0);
        let res =
            solve_proportional_fairness(&inst, &UtilityModel::Linear, &SolverConfig::default())
                .unwrap();
        assert!(res.converged);
        assert_close(&res.x.x, &[0.8, 0.2], 1e-8);
        assert!((res.x.total() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cobb_douglas_averages_exponents() {
        let inst = Instance::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]], 1.0).unwrap();
        let model = UtilityModel::CobbDouglas {
            exponents: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        };
        let res = solve_proportional_fairness(&inst, &model, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert_close(&res.x.x, &[0.5, 0.5], 1e-8);
    }

    #[test]
    fn shared_item_beats_split_funding() {
        let inst = Instance::new(
            vec![
                vec![0.6, 0.0, 0.4],
                vec![0.6, 0.0, 0.4],
                vec![0.0, 0.6, 0.4],
                vec![0.0, 0.6, 0.4],
            ],
            1.0,
        )
        .unwrap();
        let res =
            solve_proportional_fairness(&inst, &UtilityModel::Linear, &SolverConfig::default())
                .unwrap();
        assert!(res.converged);
        assert_close(&res.x.x, &[0.0, 0.0, 1.0], 1e-9);

        // Brute force over a 1e-3 grid of the budget simplex.
        let log_welfare = |x: &[f64]| -> f64 {
            (0..4)
                .map(|i| UtilityModel::Linear.evaluate(&inst, i, x).unwrap().ln())
                .sum()
        };
        let steps = 1000;
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let x = [
                    a as f64 / steps as f64,
                    b as f64 / steps as f64,
                    (steps - a - b) as f64 / steps as f64,
                ];
                let v = log_welfare(&x);
                if v > best.0 {
                    best = (v, x.to_vec());
                }
            }
        }
        assert_close(&best.1, &res.x.x, 1e-3);
    }

    #[test]
    fn potential_recovers_group_proportions_for_power_utilities() {
        let inst =
            Instance::new(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        let model = UtilityModel::PowerSum {
            alphas: vec![0.5, 0.9],
        };
        let res = solve_potential(&inst, &model, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert_close(&res.x.x, &[2.0 / 3.0, 1.0 / 3.0], 1e-7);
    }

    #[test]
    fn single_item_takes_whole_budget() {
        let inst = Instance::new(vec![vec![2.0], vec![0.5]], 3.0)
            .unwrap()
            .with_sizes(vec![1.0])
            .unwrap();
        for model in [
            UtilityModel::Linear,
            UtilityModel::PowerSum { alphas: vec![0.3] },
            UtilityModel::SmoothedSaturating { eps: 0.5 },
        ] {
            let res = solve_potential(&inst, &model, &SolverConfig::default()).unwrap();
            assert!(res.converged, "{model:?}");
            assert_close(&res.x.x, &[3.0], 1e-7);
        }
    }

    #[test]
    fn random_linear_instance_passes_independent_residual_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let inst = Instance::new(rows, 1.0).unwrap();
        let res = solve_potential(&inst, &UtilityModel::Linear, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        let r = lindahl_residuals(&inst, &UtilityModel::Linear, &res.x).unwrap();
        assert!(violation(&res.x.x, &r) <= 1e-8);
    }

    #[test]
    fn potential_trace_is_nondecreasing() {
        let inst = Instance::new(
            vec![
                vec![1.0, 0.2, 0.0],
                vec![0.1, 1.0, 0.5],
                vec![0.0, 0.3, 1.0],
            ],
            2.0,
        )
        .unwrap();
        let model = UtilityModel::PowerSum {
            alphas: vec![0.4, 0.7, 1.0],
        };
        let res = solve_potential(&inst, &model, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.potential_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn prices_support_the_equilibrium() {
        let inst = groups(&[4, 1], 1.0);
        let x = Allocation::fractional(vec![0.8, 0.2]);
        let p = recover_prices(&inst, &UtilityModel::Linear, &x).unwrap();
        assert_close(p.row(0), &[0.25, 0.0], 1e-15);
        assert_close(p.row(4), &[0.0, 1.0], 1e-15);
        for i in 0..5 {
            assert!((p.spend(i, &x.x) - 0.2).abs() < 1e-15);
        }
        assert_close(&p.column_sums(), &[1.0, 1.0], 1e-15);
    }

    #[test]
    fn single_agent_prices_spend_whole_budget() {
        let inst = Instance::new(vec![vec![0.3, 0.9, 0.1]], 5.0).unwrap();
        let x = Allocation::fractional(vec![1.0, 2.5, 1.5]);
        let p = recover_prices(&inst, &UtilityModel::Linear, &x).unwrap();
        assert!((p.spend(0, &x.x) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_approaches_proportional_fairness() {
        let inst = groups(&[4, 1], 1.0);
        let res = sgd_elicitation(&inst, &UtilityModel::Linear, &SgdConfig::default()).unwrap();
        let exact =
            solve_proportional_fairness(&inst, &UtilityModel::Linear, &SolverConfig::default())
                .unwrap();
        assert_close(&res.x.x, &exact.x.x, 0.02);

        let single = Instance::new(vec![vec![1.0, 0.0]], 1.0).unwrap();
        let res = sgd_elicitation(&single, &UtilityModel::Linear, &SgdConfig::default()).unwrap();
        assert_close(&res.x.x, &[1.0, 0.0], 0.02);
    }

    #[test]
    fn sampled_gradient_is_unbiased() {
        let inst = Instance::new(
            vec![
                vec![1.0, 0.0, 0.5],
                vec![0.2, 1.0, 0.0],
                vec![0.0, 0.4, 1.0],
                vec![1.0, 1.0, 1.0],
            ],
            1.0,
        )
        .unwrap();
        let x = [0.2, 0.5, 0.3];
        let exact = elicitation_gradient(&inst, &UtilityModel::Linear, &x).unwrap();
        let draws = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..draws {
            let g = stochastic_gradient(&inst, &UtilityModel::Linear, rng.random_range(0..4), &x)
                .unwrap();
            for j in 0..3 {
                sum[j] += g[j];
                sum_sq[j] += g[j] * g[j];
            }
        }
        for j in 0..3 {
            let mean = sum[j] / draws as f64;
            let var = sum_sq[j] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!(
                (mean - exact[j]).abs() <= 3.0 * se,
                "item {j}: {mean} vs {}",
                exact[j]
            );
        }
    }
}
