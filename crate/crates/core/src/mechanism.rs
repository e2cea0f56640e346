//! Approximately truthful exponential mechanism for linear utilities.
//!
//! Inputs are normalized on entry (`B = 1`, `|u_i|_1 = 1`) and allocations
//! are reported back in the instance's budget units. The mechanism samples
//! from the density `exp(eps q(x))` on the polytope
//! `P = {x >= n^-gamma, |x|_1 <= 1}`, where
//! `q(x) = n - n^-gamma max_{y in P} sum_i U_i(y) / U_i(x)`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, Instance};

/// Maximum rejection proposals per chord before the sampler gives up.
pub const MAX_CHORD_TRIES: usize = 10_000;
/// Log-density drop below the chord peak at which the chord is truncated.
/// The discarded tail carries relative mass below `e^-40`.
const TAIL_LOG_MASS: f64 = 40.0;
/// Golden-section iterations locating the chord peak.
const PEAK_ITERS: usize = 24;
/// Bisection steps bracketing the chord's high-density region.
const BRACKET_ITERS: usize = 12;
/// Tolerance on membership in `P`.
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismConfig {
    pub gamma: f64,
    pub epsilon_priv: f64,
    pub chain_steps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            epsilon_priv: 0.1,
            chain_steps: 20_000,
            burn_in: 5_000,
            seed: 0,
        }
    }
}

impl MechanismConfig {
    fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.epsilon_priv >= 0.0 && self.epsilon_priv.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon_priv must be nonnegative, got {}",
                self.epsilon_priv
            )));
        }
        if self.burn_in >= self.chain_steps {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below chain_steps ({})",
                self.burn_in, self.chain_steps
            )));
        }
        Ok(())
    }
}

/// `P = {x : x_j >= n^-gamma, sum_j x_j <= 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
}

impl FeasibleSet {
    pub fn new(n: usize, k: usize, gamma: f64) -> Self {
        Self { n, k, gamma }
    }

    /// `n^-gamma`.
    pub fn floor(&self) -> f64 {
        (self.n as f64).powf(-self.gamma)
    }

    /// Budget left after every floor is paid, `1 - k n^-gamma`.
    pub fn free_mass(&self) -> f64 {
        1.0 - self.k as f64 * self.floor()
    }

    pub fn is_nonempty(&self) -> bool {
        self.free_mass() >= 0.0
    }

    /// Has interior, so that a uniform density on it exists.
    pub fn has_interior(&self) -> bool {
        self.free_mass() > 0.0
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let m = self.floor();
        x.len() == self.k && x.iter().all(|&v| v >= m - tol) && x.iter().sum::<f64>() <= 1.0 + tol
    }

    /// Parameter range `[lo, hi]` of the chord `{x + t d} ∩ P`.
    pub fn chord(&self, x: &[f64], d: &[f64]) -> (f64, f64) {
        let m = self.floor();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (&xj, &dj) in x.iter().zip(d) {
            if dj > 0.0 {
                lo = lo.max((m - xj) / dj);
            } else if dj < 0.0 {
                hi = hi.min((m - xj) / dj);
            }
        }
        let dsum: f64 = d.iter().sum();
        let slack = 1.0 - x.iter().sum::<f64>();
        if dsum > 0.0 {
            hi = hi.min(slack / dsum);
        } else if dsum < 0.0 {
            lo = lo.max(slack / dsum);
        }
        (lo.min(0.0), hi.max(0.0))
    }

    /// Centroid of `P`.
    pub fn center(&self) -> Vec<f64> {
        vec![self.floor() + self.free_mass() / (self.k + 1) as f64; self.k]
    }
}

/// Linear utilities with unit-norm rows on a unit budget, identical rows
/// merged with multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    n: usize,
    k: usize,
    budget: f64,
    rows: Vec<f64>,
    weights: Vec<f64>,
}

impl Normalized {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Budget of the original instance.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// `q(x)` for `x` in unit-budget coordinates, without a membership check.
    pub fn score(&self, gamma: f64, x: &[f64]) -> f64 {
        let set = FeasibleSet::new(self.n, self.k, gamma);
        let mut scratch = vec![0.0; self.k];
        score_unit(self, &set, x, &mut scratch)
    }

    fn groups(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.rows.chunks(self.k).zip(self.weights.iter().copied())
    }

    /// `w_j = sum_i u_ij / U_i(x)`.
    fn weights_at(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, w) in self.groups() {
            let u: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            let coef = w / u;
            for (o, a) in out.iter_mut().zip(row) {
                *o += coef * a;
            }
        }
    }
}

fn normalize_row(row: &[f64], agent: usize) -> Result<Vec<f64>> {
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateAgent { agent });
    }
    Ok(row.iter().map(|v| v / total).collect())
}

/// Rescales rows to unit `l1` norm and the budget to one.
pub fn normalization(inst: &Instance) -> Result<Normalized> {
    let k = inst.k();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..inst.n() {
        let row = normalize_row(inst.row(i), i)?;
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&g) => weights[g] += 1.0,
            None => {
                index.insert(key, weights.len());
                rows.extend(row);
                weights.push(1.0);
            }
        }
    }
    Ok(Normalized {
        n: inst.n(),
        k,
        budget: inst.budget(),
        rows,
        weights,
    })
}

fn feasible(norm: &Normalized, gamma: f64) -> Result<FeasibleSet> {
    let set = FeasibleSet::new(norm.n, norm.k, gamma);
    if !set.has_interior() {
        return Err(Error::Infeasible(format!(
            "k n^-gamma = {} must be below 1 (n = {}, k = {}, gamma = {gamma})",
            1.0 - set.free_mass(),
            norm.n,
            norm.k
        )));
    }
    Ok(set)
}

fn to_unit(norm: &Normalized, x: &Allocation) -> Result<Vec<f64>> {
    if x.len() != norm.k {
        return Err(Error::DimensionMismatch {
            expected: norm.k,
            got: x.len(),
        });
    }
    Ok(x.x.iter().map(|v| v / norm.budget).collect())
}

fn check_member(set: &FeasibleSet, x: &[f64]) -> Result<()> {
    if set.contains(x, MEMBERSHIP_TOL) {
        Ok(())
    } else {
        Err(Error::NotFeasible(format!(
            "allocation {x:?} is outside P (floor {}, unit budget)",
            set.floor()
        )))
    }
}

/// Closed-form `max_{y in P} sum_i U_i(y) / U_i(x)` on normalized inputs.
fn inner_max_unit(
    norm: &Normalized,
    set: &FeasibleSet,
    x: &[f64],
    scratch: &mut [f64],
) -> (f64, usize) {
    norm.weights_at(x, scratch);
    let mut best = 0;
    for j in 1..scratch.len() {
        if scratch[j] > scratch[best] {
            best = j;
        }
    }
    let total: f64 = scratch.iter().sum();
    (set.floor() * total + set.free_mass() * scratch[best], best)
}

/// `max_{y in P} sum_i U_i(y) / U_i(x)`. The objective is linear in `y`,
/// so the maximizer is the vertex putting all free mass on the item with
/// the largest `sum_i u_ij / U_i(x)`. Returns the value and that vertex in
/// budget units. `x` need not lie in `P` but must give every agent positive
/// utility.
pub fn inner_max(inst: &Instance, x: &Allocation, gamma: f64) -> Result<(f64, Allocation)> {
    let norm = normalization(inst)?;
    let set = FeasibleSet::new(norm.n, norm.k, gamma);
    if !set.is_nonempty() {
        return Err(Error::Infeasible("P is empty".into()));
    }
    let xu = to_unit(&norm, x)?;
    if xu.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::NotFeasible(format!(
            "allocation {xu:?} has negative entries"
        )));
    }
    if let Some(agent) = (0..inst.n())
        .find(|&i| !(inst.row(i).iter().zip(&xu).map(|(a, b)| a * b).sum::<f64>() > 0.0))
    {
        return Err(Error::DegenerateAgent { agent });
    }
    let mut scratch = vec![0.0; norm.k];
    let (value, j) = inner_max_unit(&norm, &set, &xu, &mut scratch);
    let mut y = vec![set.floor() * norm.budget; norm.k];
    y[j] += set.free_mass() * norm.budget;
    Ok((value, Allocation::fractional(y)))
}

fn score_unit(norm: &Normalized, set: &FeasibleSet, x: &[f64], scratch: &mut [f64]) -> f64 {
    norm.n as f64 - set.floor() * inner_max_unit(norm, set, x, scratch).0
}

/// The mechanism's score `q(x)`.
pub fn score_q(inst: &Instance, x: &Allocation, gamma: f64) -> Result<f64> {
    let set = FeasibleSet::new(inst.n(), inst.k(), gamma);
    check_member(
        &set,
        &x.x.iter().map(|v| v / inst.budget()).collect::<Vec<_>>(),
    )?;
    let (value, _) = inner_max(inst, x, gamma)?;
    Ok(inst.n() as f64 - (inst.n() as f64).powf(-gamma) * value)
}

/// Euclidean projection onto `{v >= 0, sum v = c}`.
fn project_simplex(v: &mut [f64], c: f64) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - c) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Maximizes `sum_i log U_i(x)` over `P` in unit coordinates, stopping when
/// the inner maximum is within `rel_gap * n` of `n`.
fn pf_in_p_unit(norm: &Normalized, set: &FeasibleSet, rel_gap: f64, max_iters: usize) -> Vec<f64> {
    let k = norm.k;
    let m = set.floor();
    let c = set.free_mass();
    let n = norm.n as f64;
    let objective = |x: &[f64]| -> f64 {
        norm.groups()
            .map(|(row, w)| w * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().ln())
            .sum()
    };
    let mut x = set.center();
    let mut grad = vec![0.0; k];
    let mut next_grad = vec![0.0; k];
    norm.weights_at(&x, &mut grad);
    let mut f = objective(&x);
    let mut step = 1.0 / n;
    for _ in 0..max_iters {
        let gap =
            m * grad.iter().sum::<f64>() + c * grad.iter().copied().fold(f64::MIN, f64::max) - n;
        if gap <= rel_gap * n {
            break;
        }
        let mut t = step;
        let (trial, f_new) = loop {
            let mut v: Vec<f64> = x.iter().zip(&grad).map(|(xj, g)| xj - m + t * g).collect();
            project_simplex(&mut v, c);
            let trial: Vec<f64> = v.iter().map(|vj| vj + m).collect();
            let slope: f64 = grad
                .iter()
                .zip(trial.iter().zip(&x))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            let f_new = objective(&trial);
            if f_new >= f + 1e-4 * slope || t < 1e-18 {
                break (trial, f_new);
            }
            t *= 0.5;
        };
        norm.weights_at(&trial, &mut next_grad);
        let (mut ss, mut sy) = (0.0, 0.0);
        for j in 0..k {
            let s = trial[j] - x[j];
            ss += s * s;
            sy += s * (next_grad[j] - grad[j]);
        }
        step = if sy < 0.0 { ss / -sy } else { 2.0 * t };
        if ss == 0.0 {
            break;
        }
        x = trial;
        f = f_new;
        std::mem::swap(&mut grad, &mut next_grad);
    }
    x
}

/// Proportionally fair allocation restricted to `P`, in budget units. Its
/// inner maximum equals `n`, so it maximizes `q`.
pub fn pf_optimum_in_p(inst: &Instance, gamma: f64) -> Result<Allocation> {
    let norm = normalization(inst)?;
    let set = feasible(&norm, gamma)?;
    let x = pf_in_p_unit(&norm, &set, 1e-13, 100_000);
    Ok(Allocation::fractional(
        x.into_iter().map(|v| v * norm.budget).collect(),
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub steps: usize,
    /// Accepted proposals over all proposals in the chord rejection step.
    pub acceptance_rate: f64,
    pub proposals: usize,
    pub score_evaluations: usize,
    pub mean_chord_length: f64,
    pub max_proposals_in_step: usize,
}

/// Hit-and-run chain on `P` targeting `exp(eps q(x))`.
pub struct HitAndRun {
    norm: Normalized,
    set: FeasibleSet,
    eps: f64,
    x: Vec<f64>,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
    point: Vec<f64>,
    direction: Vec<f64>,
    diag: ChainDiagnostics,
    chord_total: f64,
}

impl HitAndRun {
    pub fn new(inst: &Instance, cfg: &MechanismConfig) -> Result<Self> {
        Self::with_stream(inst, cfg, 0)
    }

    /// Chain seeded by `cfg.seed` on ChaCha stream `stream`, so that chains
    /// sharing a seed and stream consume identical randomness.
    pub fn with_stream(inst: &Instance, cfg: &MechanismConfig, stream: u64) -> Result<Self> {
        cfg.check()?;
        let norm = normalization(inst)?;
        Self::from_normalized(norm, cfg, stream)
    }

    fn from_normalized(norm: Normalized, cfg: &MechanismConfig, stream: u64) -> Result<Self> {
        let set = feasible(&norm, cfg.gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let k = norm.k;
        Ok(Self {
            x: set.center(),
            norm,
            set,
            eps: cfg.epsilon_priv,
            rng,
            scratch: vec![0.0; k],
            point: vec![0.0; k],
            direction: vec![0.0; k],
            diag: ChainDiagnostics::default(),
            chord_total: 0.0,
        })
    }

    /// Current state in budget units.
    pub fn state(&self) -> Vec<f64> {
        self.x.iter().map(|v| v * self.norm.budget).collect()
    }

    /// Current state in unit-budget coordinates.
    pub fn unit_state(&self) -> &[f64] {
        &self.x
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        self.set
    }

    pub fn diagnostics(&self) -> ChainDiagnostics {
        let mut d = self.diag.clone();
        d.mean_chord_length = if d.steps > 0 {
            self.chord_total / d.steps as f64
        } else {
            0.0
        };
        d.acceptance_rate = if d.proposals > 0 {
            d.steps as f64 / d.proposals as f64
        } else {
            0.0
        };
        d
    }

    fn log_density(&mut self, t: f64) -> f64 {
        for ((p, x), d) in self.point.iter_mut().zip(&self.x).zip(&self.direction) {
            *p = x + t * d;
        }
        self.diag.score_evaluations += 1;
        self.eps * score_unit(&self.norm, &self.set, &self.point, &mut self.scratch)
    }

    pub fn step(&mut self) -> Result<()> {
        let k = self.norm.k;
        loop {
            let mut norm2 = 0.0;
            for j in 0..k {
                let g: f64 = self.rng.sample(StandardNormal);
                self.direction[j] = g;
                norm2 += g * g;
            }
            if norm2 > 0.0 {
                let s = norm2.sqrt();
                self.direction.iter_mut().for_each(|d| *d /= s);
                break;
            }
        }
        let dir = self.direction.clone();
        let (lo, hi) = self.set.chord(&self.x, &dir);
        self.chord_total += hi - lo;

        let (peak_t, ceiling) = self.chord_peak(lo, hi);
        let floor_level = ceiling - TAIL_LOG_MASS;
        let a = self.bracket(lo, peak_t, floor_level);
        let b = self.bracket(hi, peak_t, floor_level);

        let mut tries = 0;
        let t = loop {
            tries += 1;
            if tries > MAX_CHORD_TRIES {
                return Err(Error::Sampler(format!(
                    "no proposal accepted after {MAX_CHORD_TRIES} tries on chord [{lo}, {hi}]"
                )));
            }
            let t = if b > a {
                self.rng.random_range(a..=b)
            } else {
                a
            };
            let level = self.log_density(t);
            if level > ceiling + 1e-9 {
                log::debug!("chord envelope exceeded by {}", level - ceiling);
            }
            let u: f64 = self.rng.random();
            if u.ln() <= level - ceiling {
                break t;
            }
        };
        self.diag.proposals += tries;
        self.diag.max_proposals_in_step = self.diag.max_proposals_in_step.max(tries);
        self.diag.steps += 1;
        for (x, d) in self.x.iter_mut().zip(&dir) {
            *x += t * d;
        }
        // Keep rounding from drifting the state out of P.
        let m = self.set.floor();
        for x in self.x.iter_mut() {
            *x = x.max(m);
        }
        let total: f64 = self.x.iter().sum();
        if total > 1.0 {
            let excess = total - 1.0;
            let free: f64 = self.x.iter().map(|x| x - m).sum();
            if free > 0.0 {
                for x in self.x.iter_mut() {
                    *x -= excess * (*x - m) / free;
                }
            }
        }
        Ok(())
    }

    /// Golden-section search for the peak of the (concave) log density on
    /// the chord, returning the best point and a rigorous upper bound on
    /// the log density derived from concavity.
    fn chord_peak(&mut self, lo: f64, hi: f64) -> (f64, f64) {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(PEAK_ITERS + 4);
        if self.eps == 0.0 || hi - lo <= 0.0 {
            let t = 0.5 * (lo + hi);
            return (
                t,
                if self.eps == 0.0 {
                    0.0
                } else {
                    self.log_density(t)
                },
            );
        }
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut a, mut b) = (lo, hi);
        pts.push((a, self.log_density(a)));
        pts.push((b, self.log_density(b)));
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let mut fc = self.log_density(c);
        let mut fd = self.log_density(d);
        pts.push((c, fc));
        pts.push((d, fd));
        for _ in 0..PEAK_ITERS {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = self.log_density(c);
                pts.push((c, fc));
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = self.log_density(d);
                pts.push((d, fd));
            }
        }
        pts.sort_by(|p, q| p.0.total_cmp(&q.0));
        let best = (0..pts.len())
            .max_by(|&i, &j| pts[i].1.total_cmp(&pts[j].1))
            .expect("points");
        let (tb, fb) = pts[best];
        let line =
            |p: (f64, f64), q: (f64, f64), t: f64| p.1 + (q.1 - p.1) / (q.0 - p.0) * (t - p.0);
        let mut bound = fb;
        // The maximum lies between the neighbours of the best sampled point;
        // bound each side by extending a chord from the opposite side.
        if best > 0 {
            let left = pts[best - 1];
            let extra = if best + 1 < pts.len() && pts[best + 1].0 > tb {
                line(pts[best + 1], (tb, fb), left.0)
            } else if best >= 2 && left.0 > pts[best - 2].0 {
                line(pts[best - 2], left, tb)
            } else {
                f64::INFINITY
            };
            bound = bound.max(extra);
        }
        if best + 1 < pts.len() {
            let right = pts[best + 1];
            let extra = if best > 0 && pts[best - 1].0 < tb {
                line(pts[best - 1], (tb, fb), right.0)
            } else if best + 2 < pts.len() && pts[best + 2].0 > right.0 {
                line(right, pts[best + 2], tb)
            } else {
                f64::INFINITY
            };
            bound = bound.max(extra);
        }
        if !bound.is_finite() {
            bound = fb;
        }
        (tb, bound)
    }

    /// Moves from `end` towards `peak` and returns a point no closer to the
    /// peak than where the log density first reaches `level`.
    fn bracket(&mut self, end: f64, peak: f64, level: f64) -> f64 {
        if self.eps == 0.0 || self.log_density(end) >= level {
            return end;
        }
        let (mut outside, mut inside) = (end, peak);
        for _ in 0..BRACKET_ITERS {
            let mid = 0.5 * (outside + inside);
            if self.log_density(mid) >= level {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        outside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSample {
    pub x: Allocation,
    pub diagnostics: ChainDiagnostics,
}

/// Runs the chain for `chain_steps` steps and returns the final state.
pub fn sample_mechanism(inst: &Instance, cfg: &MechanismConfig) -> Result<MechanismSample> {
    let mut chain = HitAndRun::new(inst, cfg)?;
    for _ in 0..cfg.chain_steps {
        chain.step()?;
    }
    Ok(MechanismSample {
        x: Allocation::fractional(chain.state()),
        diagnostics: chain.diagnostics(),
    })
}

/// Collects `count` states, one every `thin` steps after `burn_in`, in
/// budget units.
pub fn sample_chain(
    inst: &Instance,
    cfg: &MechanismConfig,
    count: usize,
    thin: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut chain = HitAndRun::new(inst, cfg)?;
    for _ in 0..cfg.burn_in {
        chain.step()?;
    }
    let thin = thin.max(1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..thin {
            chain.step()?;
        }
        out.push(chain.state());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximationCertificate {
    /// `max_{y in P} sum_i U_i(y)/U_i(x) - n`.
    pub alpha: f64,
    /// Additive-core approximation `((k-1) n^-gamma + alpha / n) / (1 - k n^-gamma)`
    /// guaranteed at `x`, in normalized utility units.
    pub additive_bound: f64,
    /// High-probability bound for a sample of the mechanism,
    /// `((k-1) n^-gamma + 2 (k+1) n^(gamma-1) ln n / eps) / (1 - k n^-gamma)`.
    pub sampled_bound: f64,
    /// Whether `1/eps > k n / ((n - k^2) ln n)` holds, the condition under
    /// which the sampled bound is claimed.
    pub precondition_holds: bool,
}

pub fn additive_core_bound(n: usize, k: usize, gamma: f64, alpha: f64) -> f64 {
    let set = FeasibleSet::new(n, k, gamma);
    ((k as f64 - 1.0) * set.floor() + alpha / n as f64) / set.free_mass()
}

pub fn sampled_core_bound(n: usize, k: usize, gamma: f64, eps: f64) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    let set = FeasibleSet::new(n, k, gamma);
    ((kf - 1.0) * set.floor() + 2.0 * (kf + 1.0) / eps * nf.powf(gamma - 1.0) * nf.ln())
        / set.free_mass()
}

pub fn precondition_holds(n: usize, k: usize, eps: f64) -> bool {
    let (nf, kf) = (n as f64, k as f64);
    nf > kf * kf && 1.0 / eps > kf * nf / ((nf - kf * kf) * nf.ln())
}

/// The additive-core guarantee carried by `x`, plus the sampled-allocation
/// bound for the configured privacy parameter.
pub fn approximation_certificate(
    inst: &Instance,
    x: &Allocation,
    cfg: &MechanismConfig,
) -> Result<ApproximationCertificate> {
    let (value, _) = inner_max(inst, x, cfg.gamma)?;
    let (n, k) = (inst.n(), inst.k());
    let alpha = value - n as f64;
    Ok(ApproximationCertificate {
        alpha,
        additive_bound: additive_core_bound(n, k, cfg.gamma, alpha),
        sampled_bound: sampled_core_bound(n, k, cfg.gamma, cfg.epsilon_priv),
        precondition_holds: precondition_holds(n, k, cfg.epsilon_priv),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipulationEstimate {
    /// Mean over trials of the agent's true utility under the misreport
    /// minus under the truthful report, both on normalized inputs.
    pub gain: f64,
    pub std_error: f64,
    pub truthful_utility: f64,
    pub misreport_utility: f64,
    pub trials: usize,
}

/// Estimates of one agent's expected utility under the mechanism for
/// different reports. Trial `t` of every report uses ChaCha stream `t`, so
/// estimates are paired across reports.
pub struct ManipulationStudy {
    inst: Instance,
    agent: usize,
    cfg: MechanismConfig,
    truth_row: Vec<f64>,
    truthful: Vec<f64>,
}

impl ManipulationStudy {
    pub fn new(
        inst: &Instance,
        agent: usize,
        cfg: &MechanismConfig,
        trials: usize,
    ) -> Result<Self> {
        cfg.check()?;
        if agent >= inst.n() {
            return Err(Error::DimensionMismatch {
                expected: inst.n(),
                got: agent + 1,
            });
        }
        if trials < 2 {
            return Err(Error::Config(
                "manipulation estimates need at least two trials".into(),
            ));
        }
        let truth_row = normalize_row(inst.row(agent), agent)?;
        let mut study = Self {
            inst: inst.clone(),
            agent,
            cfg: *cfg,
            truth_row,
            truthful: Vec::new(),
        };
        study.truthful = study.run(inst, trials)?;
        Ok(study)
    }

    /// Per-trial ergodic averages of the agent's true utility.
    fn run(&self, reported: &Instance, trials: usize) -> Result<Vec<f64>> {
        (0..trials)
            .map(|t| {
                let mut chain = HitAndRun::with_stream(reported, &self.cfg, t as u64)?;
                for _ in 0..self.cfg.burn_in {
                    chain.step()?;
                }
                let mut total = 0.0;
                let kept = self.cfg.chain_steps - self.cfg.burn_in;
                for _ in 0..kept {
                    chain.step()?;
                    total += self
                        .truth_row
                        .iter()
                        .zip(chain.unit_state())
                        .map(|(u, x)| u * x)
                        .sum::<f64>();
                }
                Ok(total / kept as f64)
            })
            .collect()
    }

    pub fn gain(&self, misreport: &[f64]) -> Result<ManipulationEstimate> {
        let row = normalize_row(misreport, self.agent)?;
        let reported = self.inst.with_row(self.agent, &row)?;
        let lying = self.run(&reported, self.truthful.len())?;
        let trials = lying.len();
        let diffs: Vec<f64> = lying
            .iter()
            .zip(&self.truthful)
            .map(|(a, b)| a - b)
            .collect();
        let mean = diffs.iter().sum::<f64>() / trials as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        Ok(ManipulationEstimate {
            gain: mean,
            std_error: (var / trials as f64).sqrt(),
            truthful_utility: self.truthful.iter().sum::<f64>() / trials as f64,
            misreport_utility: lying.iter().sum::<f64>() / trials as f64,
            trials,
        })
    }
}

/// Expected utility gain of `agent` from reporting `misreport` instead of
/// its true row.
pub fn manipulation_gain(
    inst: &Instance,
    agent: usize,
    misreport: &[f64],
    cfg: &MechanismConfig,
    trials: usize,
) -> Result<ManipulationEstimate> {
    ManipulationStudy::new(inst, agent, cfg, trials)?.gain(misreport)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_instance(n: usize, k: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(0.01..1.0)).collect())
            .collect();
        Instance::new(rows, 1.0).unwrap()
    }

    fn random_point(set: &FeasibleSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Uniform on the simplex of free mass via sorted uniforms.
        let mut cuts: Vec<f64> = (0..set.k).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        cuts.iter()
            .map(|&c| {
                let v = set.floor() + set.free_mass() * (c - prev);
                prev = c;
                v
            })
            .collect()
    }

    #[test]
    fn chord_stays_in_feasible_set() {
        let set = FeasibleSet::new(50, 3, 0.5);
        let x = set.center();
        let d = [0.6, -0.8, 0.0];
        let (lo, hi) = set.chord(&x, &d);
        for t in [lo, hi, 0.5 * (lo + hi)] {
            let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            assert!(set.contains(&p, 1e-12));
        }
        let beyond: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + (hi + 1e-6) * b).collect();
        assert!(!set.contains(&beyond, 1e-12));
    }

    #[test]
    fn inner_max_single_item() {
        let inst = Instance::new(vec![vec![1.0]], 1.0).unwrap();
        let (value, y) = inner_max(&inst, &Allocation::fractional(vec![0.25]), 0.5).unwrap();
        assert!((value - 4.0).abs() < 1e-15);
        assert_eq!(y.x, vec![1.0]);
    }

    #[test]
    fn inner_max_matches_grid_search() {
        let inst = random_instance(4, 2, 1);
        let gamma = 0.6;
        let set = FeasibleSet::new(4, 2, gamma);
        let x = Allocation::fractional(vec![0.5, 0.45]);
        let (value, _) = inner_max(&inst, &x, gamma).unwrap();
        let norm_rows: Vec<Vec<f64>> = inst
            .rows()
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let u = |row: &[f64], p: &[f64]| row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        let mut best = f64::NEG_INFINITY;
        let m = set.floor();
        let steps = ((1.0 - m) / 1e-3) as usize;
        for a in 0..=steps {
            for b in 0..=steps {
                let y = [m + a as f64 * 1e-3, m + b as f64 * 1e-3];
                if !set.contains(&y, 1e-12) {
                    continue;
                }
                let v: f64 = norm_rows.iter().map(|r| u(r, &y) / u(r, &x.x)).sum();
                best = best.max(v);
            }
        }
        assert!(
            best <= value + 1e-12 && value - best < 1e-2,
            "{value} vs grid {best}"
        );
    }

    #[test]
    fn score_is_maximal_at_pf_optimum() {
        let inst = random_instance(30, 3, 2);
        let x = pf_optimum_in_p(&inst, 0.5).unwrap();
        let (value, _) = inner_max(&inst, &x, 0.5).unwrap();
        assert!((value - 30.0).abs() < 1e-8);
        let q = score_q(&inst, &x, 0.5).unwrap();
        assert!((q - (30.0 - 30f64.powf(0.5))).abs() < 1e-6);
    }

    #[test]
    fn score_range_and_concavity() {
        let inst = random_instance(20, 3, 3);
        let norm = normalization(&inst).unwrap();
        let set = FeasibleSet::new(20, 3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scratch = vec![0.0; 3];
        let top = 20.0 - 20f64.powf(0.5);
        for _ in 0..500 {
            let a = random_point(&set, &mut rng);
            let b = random_point(&set, &mut rng);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
            let (qa, qb, qm) = (
                score_unit(&norm, &set, &a, &mut scratch),
                score_unit(&norm, &set, &b, &mut scratch),
                score_unit(&norm, &set, &mid, &mut scratch),
            );
            for q in [qa, qb, qm] {
                assert!((-1e-9..=top + 1e-9).contains(&q));
            }
            assert!(qm >= 0.5 * (qa + qb) - 1e-9);
        }
    }

    #[test]
    fn single_report_moves_score_by_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let inst = random_instance(12, 3, 100 + trial);
            let set = FeasibleSet::new(12, 3, 0.5);
            let x = Allocation::fractional(random_point(&set, &mut rng));
            let agent = rng.random_range(0..12);
            let lie: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let other = inst.with_row(agent, &lie).unwrap();
            let dq = score_q(&inst, &x, 0.5).unwrap() - score_q(&other, &x, 0.5).unwrap();
            assert!(dq.abs() <= 1.0 + 1e-9, "{dq}");
        }
    }

    #[test]
    fn certificate_at_exact_point() {
        let inst = random_instance(40, 2, 6);
        let cfg = MechanismConfig::default();
        let x = pf_optimum_in_p(&inst, cfg.gamma).unwrap();
        let cert = approximation_certificate(&inst, &x, &cfg).unwrap();
        let m = 40f64.powf(-0.5);
        assert!(cert.alpha.abs() < 1e-8);
        assert!((cert.additive_bound - m / (1.0 - 2.0 * m)).abs() < 1e-9);

        let one = Instance::new(vec![vec![1.0]; 9], 1.0).unwrap();
        let x = Allocation::fractional(vec![0.5]);
        let cert = approximation_certificate(&one, &x, &cfg).unwrap();
        // k = 1: value = n / x, bound = alpha / n / (1 - n^-gamma).
        let alpha = 9.0 / 0.5 - 9.0;
        assert!((cert.additive_bound - alpha / 9.0 / (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_feasible_set_is_rejected() {
        let inst = random_instance(3, 2, 7);
        let cfg = MechanismConfig {
            gamma: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            sample_mechanism(&inst, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn chain_is_deterministic_and_feasible() {
        let inst = random_instance(10, 3, 8);
        let cfg = MechanismConfig {
            epsilon_priv: 1.0,
            chain_steps: 600,
            burn_in: 100,
            ..Default::default()
        };
        let a = sample_mechanism(&inst, &cfg).unwrap();
        let b = sample_mechanism(&inst, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(FeasibleSet::new(10, 3, 0.5).contains(&a.x.x, 1e-12));
        assert!(a.diagnostics.acceptance_rate > 0.0);
    }

    #[test]
    fn large_epsilon_concentrates_near_optimum() {
        let mut rows = vec![vec![1.0, 0.1]; 40];
        rows.extend(vec![vec![0.1, 1.0]; 10]);
        let inst = Instance::new(rows, 1.0).unwrap();
        let target = pf_optimum_in_p(&inst, 0.5).unwrap();
        let mut close = 0;
        for seed in 0..20 {
            let cfg = MechanismConfig {
                epsilon_priv: 50.0,
                chain_steps: 2_000,
                burn_in: 1_000,
                seed,
                ..Default::default()
            };
            let x = sample_mechanism(&inst, &cfg).unwrap().x;
            if x.x.iter().zip(&target.x).all(|(a, b)| (a - b).abs() <= 0.1) {
                close += 1;
            }
        }
        assert!(close >= 18, "{close} of 20 seeds near the optimum");
    }

    #[test]
    fn truthful_report_has_zero_gain() {
        let inst = Instance::new(
            vec![
                vec![1.0, 2.0],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
            ],
            1.0,
        )
        .unwrap();
        let cfg = MechanismConfig {
            gamma: 0.9,
            epsilon_priv: 0.1,
            chain_steps: 300,
            burn_in: 100,
            seed: 3,
        };
        let est = manipulation_gain(&inst, 0, &[1.0, 2.0], &cfg, 3).unwrap();
        assert_eq!(est.gain, 0.0);
        assert_eq!(est.std_error, 0.0);
    }
}
