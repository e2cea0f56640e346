//! Projected gradient ascent over `{v : v_j >= floor}` with Armijo
//! backtracking. Trial steps come from the Barzilai-Borwein estimate of the
//! previous iteration, so the method adapts to the scale of the problem.

/// Armijo sufficient-increase factor.
const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
/// A line search that has shrunk the trial step by this factor has failed.
const MIN_STEP_RATIO: f64 = 1e-16;
/// Objective changes below this are treated as roundoff; such steps are
/// judged by the directional derivative at the trial point instead.
const ROUNDOFF: f64 = 1e-11;

pub(crate) trait Objective {
    fn dim(&self) -> usize;

    /// Objective value; `-inf` outside the domain.
    fn value(&self, v: &[f64]) -> f64;

    /// `value(v + d) - value(v)`, computed without cancellation where possible.
    fn delta(&self, v: &[f64], d: &[f64]) -> f64 {
        let moved: Vec<f64> = v.iter().zip(d).map(|(a, b)| a + b).collect();
        self.value(&moved) - self.value(v)
    }

    fn gradient(&self, v: &[f64], out: &mut [f64]);

    /// Scaled optimality residual of coordinate `j` given the gradient.
    fn residual(&self, v: &[f64], grad: &[f64], j: usize) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AscentConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub floor: f64,
    pub step_init: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct AscentOutcome {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// `(iteration, max violation)` before each step.
    pub trace: Vec<(usize, f64)>,
    /// Objective value at every accepted iterate, relative to the start.
    pub values: Vec<f64>,
}

/// Largest violation of the complementarity conditions: two-sided for
/// coordinates above the floor, one-sided for those resting on it.
pub(crate) fn max_violation<O: Objective>(obj: &O, v: &[f64], grad: &[f64], floor: f64) -> f64 {
    (0..v.len())
        .map(|j| {
            let r = obj.residual(v, grad, j);
            if at_floor(v[j], floor) {
                r.max(0.0)
            } else {
                r.abs()
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn at_floor(v: f64, floor: f64) -> bool {
    v <= floor * (1.0 + 1e-9)
}

pub(crate) fn projected_ascent<O: Objective>(
    obj: &O,
    start: &[f64],
    cfg: &AscentConfig,
) -> AscentOutcome {
    let dim = obj.dim();
    let mut v: Vec<f64> = start.iter().map(|&s| s.max(cfg.floor)).collect();
    let mut grad = vec![0.0; dim];
    let mut next_grad = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut d = vec![0.0; dim];
    obj.gradient(&v, &mut grad);

    let mut step = cfg.step_init;
    let mut level = 0.0;
    let mut trace = Vec::new();
    let mut values = vec![0.0];
    let mut converged = false;
    let mut line_search_failed = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let violation = max_violation(obj, &v, &grad, cfg.floor);
        trace.push((iterations, violation));
        if violation <= cfg.tol {
            converged = true;
            break;
        }

        let mut t = step;
        let accepted = loop {
            for j in 0..dim {
                trial[j] = (v[j] + t * grad[j]).max(cfg.floor);
                d[j] = trial[j] - v[j];
            }
            let slope: f64 = grad.iter().zip(&d).map(|(g, dj)| g * dj).sum();
            if slope <= 0.0 {
                // Projection leaves nothing to move along.
                break None;
            }
            let gain = obj.delta(&v, &d);
            if gain.is_finite() && gain >= ARMIJO_C * slope {
                break Some(gain);
            }
            if gain.is_finite() && gain.abs() <= ROUNDOFF {
                obj.gradient(&trial, &mut next_grad);
                let end_slope: f64 = next_grad.iter().zip(&d).map(|(g, dj)| g * dj).sum();
                if end_slope >= (2.0 * ARMIJO_C - 1.0) * slope {
                    break Some(gain);
                }
            }
            t *= SHRINK;
            if t < step * MIN_STEP_RATIO {
                break None;
            }
        };
        let Some(gain) = accepted else {
            line_search_failed = true;
            break;
        };

        obj.gradient(&trial, &mut next_grad);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for j in 0..dim {
            ss += d[j] * d[j];
            sy += d[j] * (next_grad[j] - grad[j]);
        }
        step = if sy < 0.0 {
            (ss / -sy).clamp(1e-30, 1e30)
        } else {
            t * 2.0
        };

        std::mem::swap(&mut v, &mut trial);
        std::mem::swap(&mut grad, &mut next_grad);
        level += gain;
        values.push(level);
        iterations += 1;
    }

    if !converged && !line_search_failed {
        let violation = max_violation(obj, &v, &grad, cfg.floor);
        trace.push((iterations, violation));
        converged = violation <= cfg.tol;
    }

    AscentOutcome {
        v,
        iterations,
        converged,
        line_search_failed,
        trace,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `sum_j w_j log v_j - sum_j v_j`, maximized at `v_j = w_j`.
    struct LogSum {
        w: Vec<f64>,
    }

    impl Objective for LogSum {
        fn dim(&self) -> usize {
            self.w.len()
        }

        fn value(&self, v: &[f64]) -> f64 {
            self.w.iter().zip(v).map(|(w, x)| w * x.ln() - x).sum()
        }

        fn gradient(&self, v: &[f64], out: &mut [f64]) {
            for j in 0..v.len() {
                out[j] = self.w[j] / v[j] - 1.0;
            }
        }

        fn residual(&self, _v: &[f64], grad: &[f64], j: usize) -> f64 {
            grad[j]
        }
    }

    #[test]
    fn finds_separable_optimum() {
        let obj = LogSum {
            w: vec![0.3, 2.0, 7.5],
        };
        let cfg = AscentConfig {
            tol: 1e-12,
            max_iters: 10_000,
            floor: 1e-12,
            step_init: 1.0,
        };
        let out = projected_ascent(&obj, &[1.0, 1.0, 1.0], &cfg);
        assert!(out.converged);
        for (v, w) in out.v.iter().zip(&obj.w) {
            assert!((v - w).abs() < 1e-9, "{v} vs {w}");
        }
        assert!(out.values.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn reports_non_convergence_when_out_of_iterations() {
        let obj = LogSum {
            w: vec![0.3, 2.0, 7.5],
        };
        let cfg = AscentConfig {
            tol: 1e-12,
            max_iters: 2,
            floor: 1e-12,
            step_init: 1e-3,
        };
        let out = projected_ascent(&obj, &[1.0, 1.0, 1.0], &cfg);
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }
}
