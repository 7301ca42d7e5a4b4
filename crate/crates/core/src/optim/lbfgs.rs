//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Stop once `max |∇f|` falls to this value.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            grad_tol: 1e-12,
        }
    }
}

/// Curvature history of the two-loop recursion.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    skipped_pairs: usize,
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::new(),
            skipped_pairs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn skipped_pairs(&self) -> usize {
        self.skipped_pairs
    }

    /// Stores `(s, y)` if `sᵀy > 0`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy.is_nan() || sy <= 1e-300 || !sy.is_finite() {
            self.skipped_pairs += 1;
            return false;
        }
        debug_assert!(sy > 0.0);
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// `−H g` by the two-loop recursion with `H₀ = (sᵀy / yᵀy) I`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let rho = 1.0 / dot(s, y);
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push((a, rho));
        }
        if let Some((s, y)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Iterations where the Wolfe search failed and a backtracking
    /// steepest-descent step was taken instead.
    pub fallback_steps: usize,
    pub skipped_pairs: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Probe<'a, F> {
    objective: &'a mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Probe<'_, F> {
    /// Value and gradient at `x + t d`; non-finite values map to `+∞`.
    fn along(&mut self, x: &[f64], t: f64, d: &[f64]) -> (f64, Vec<f64>) {
        let point: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        self.at(&point)
    }

    fn at(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evaluations += 1;
        let (f, g) = (self.objective)(x);
        if f.is_finite() && all_finite(&g) {
            (f, g)
        } else {
            (f64::INFINITY, vec![0.0; x.len()])
        }
    }
}

/// Minimizer of the cubic interpolating two points with derivatives,
/// clamped to `bounds` (or the interval spanned by the points).
fn cubic_interpolate(
    (x1, f1, g1): (f64, f64, f64),
    (x2, f2, g2): (f64, f64, f64),
    bounds: Option<(f64, f64)>,
) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 && d2_sq.is_finite() {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    (lo + hi) / 2.0
}

struct LineSearchResult {
    t: f64,
    f: f64,
    g: Vec<f64>,
}

/// Bracketing + zoom search for a step satisfying the strong Wolfe
/// conditions. Returns `None` if no step with sufficient decrease exists.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    probe: &mut Probe<'_, F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    t_init: f64,
    config: &LbfgsConfig,
) -> Option<LineSearchResult> {
    let (c1, c2) = (config.c1, config.c2);
    let gtd0 = dot(g0, d);
    let d_norm = max_abs(d);
    let mut t = t_init;
    let (mut f_new, mut g_new) = probe.along(x, t, d);
    let mut gtd_new = dot(&g_new, d);

    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, f0, g0.to_vec(), gtd0);
    let mut done = false;
    let mut iters = 0;

    // Each bracket end: (step, value, gradient, directional derivative).
    type End = (f64, f64, Vec<f64>, f64);
    let mut bracket: Vec<End> = Vec::new();

    while iters < config.max_line_search {
        if f_new > f0 + c1 * t * gtd0 || (iters > 1 && f_new >= f_prev) {
            bracket = vec![
                (t_prev, f_prev, g_prev.clone(), gtd_prev),
                (t, f_new, g_new.clone(), gtd_new),
            ];
            break;
        }
        if gtd_new.abs() <= -c2 * gtd0 {
            bracket = vec![(t, f_new, g_new.clone(), gtd_new)];
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = vec![
                (t_prev, f_prev, g_prev.clone(), gtd_prev),
                (t, f_new, g_new.clone(), gtd_new),
            ];
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let next = cubic_interpolate(
            (t_prev, f_prev, gtd_prev),
            (t, f_new, gtd_new),
            Some((min_step, max_step)),
        );
        t_prev = t;
        f_prev = f_new;
        g_prev = g_new;
        gtd_prev = gtd_new;
        t = next;
        let eval = probe.along(x, t, d);
        f_new = eval.0;
        g_new = eval.1;
        gtd_new = dot(&g_new, d);
        iters += 1;
    }
    if bracket.is_empty() {
        bracket = vec![(0.0, f0, g0.to_vec(), gtd0), (t, f_new, g_new.clone(), gtd_new)];
    }

    let mut insufficient_progress = false;
    let ordered = |b: &[End]| if b[0].1 <= b[b.len() - 1].1 { (0, 1) } else { (1, 0) };
    let (mut low, mut high) = if bracket.len() == 2 { ordered(&bracket) } else { (0, 0) };

    while !done && iters < config.max_line_search {
        let (a, b) = (bracket[0].0, bracket[1].0);
        if (b - a).abs() * d_norm < 1e-16 {
            break;
        }
        let mut t = cubic_interpolate(
            (bracket[0].0, bracket[0].1, bracket[0].3),
            (bracket[1].0, bracket[1].1, bracket[1].3),
            None,
        );
        let (lo, hi) = (a.min(b), a.max(b));
        let eps = 0.1 * (hi - lo);
        if (hi - t).min(t - lo) < eps {
            if insufficient_progress || t >= hi || t <= lo {
                t = if (t - hi).abs() < (t - lo).abs() { hi - eps } else { lo + eps };
                insufficient_progress = false;
            } else {
                insufficient_progress = true;
            }
        } else {
            insufficient_progress = false;
        }
        let (f_t, g_t) = probe.along(x, t, d);
        let gtd_t = dot(&g_t, d);
        iters += 1;

        if f_t > f0 + c1 * t * gtd0 || f_t >= bracket[low].1 {
            bracket[high] = (t, f_t, g_t, gtd_t);
            (low, high) = ordered(&bracket);
        } else {
            if gtd_t.abs() <= -c2 * gtd0 {
                done = true;
            } else if gtd_t * (bracket[high].0 - bracket[low].0) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = (t, f_t, g_t, gtd_t);
        }
    }

    let (t, f, g, _) = bracket.swap_remove(low);
    let sufficient = f.is_finite() && t > 0.0 && f <= f0 + c1 * t * gtd0;
    sufficient.then_some(LineSearchResult { t, f, g })
}

/// Armijo backtracking along `−g`.
fn backtrack<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    probe: &mut Probe<'_, F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    c1: f64,
) -> Option<LineSearchResult> {
    let d: Vec<f64> = g0.iter().map(|v| -v).collect();
    let slope = dot(g0, &d);
    let mut t = 1.0 / max_abs(g0).max(1.0);
    for _ in 0..60 {
        let (f, g) = probe.along(x, t, &d);
        if f <= f0 + c1 * t * slope {
            return Some(LineSearchResult { t, f, g });
        }
        t *= 0.5;
    }
    None
}

/// Runs up to `max_epochs` quasi-Newton iterations from `x0` and returns
/// the best iterate seen.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: &[f64],
    max_epochs: usize,
    config: &LbfgsConfig,
) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut probe = Probe {
        objective: &mut objective,
        evaluations: 0,
    };
    let mut x = x0.to_vec();
    let (mut f, mut g) = probe.at(&x);
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    let mut state = LbfgsState::new(config.memory);
    let mut report = LbfgsReport {
        x: x.clone(),
        f,
        iterations: 0,
        evaluations: 0,
        fallback_steps: 0,
        skipped_pairs: 0,
    };

    for _ in 0..max_epochs {
        if max_abs(&g) <= config.grad_tol {
            break;
        }
        let mut d = state.direction(&g);
        let slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 || !all_finite(&d) {
            state.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let t_init = if state.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };
        report.iterations += 1;
        let step = match strong_wolfe(&mut probe, &x, f, &g, &d, t_init, config) {
            Some(r) => Some((r, d)),
            None => {
                report.fallback_steps += 1;
                state.clear();
                backtrack(&mut probe, &x, f, &g, config.c1)
                    .map(|r| (r, g.iter().map(|v| -v).collect::<Vec<_>>()))
            }
        };
        let Some((ls, d)) = step else { break };

        let s: Vec<f64> = d.iter().map(|di| ls.t * di).collect();
        let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let x_new: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let stalled = max_abs(&s) <= 1e-300 || x_new == x;
        state.push(s, y);
        x = x_new;
        f = ls.f;
        g = ls.g;
        if f < report.f {
            report.f = f;
            report.x = x.clone();
        }
        if stalled {
            break;
        }
    }
    report.evaluations = probe.evaluations;
    report.skipped_pairs = state.skipped_pairs();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_quadratic(a: Vec<f64>) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
        move |x| {
            let f = x.iter().zip(&a).map(|(xi, ai)| (xi - ai).powi(2)).sum();
            let g = x.iter().zip(&a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            (f, g)
        }
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn quadratic_in_three_iterations() {
        let a = vec![1.5, -2.0, 0.25, 7.0];
        let r = lbfgs_minimize(shifted_quadratic(a.clone()), &[0.0; 4], 3, &LbfgsConfig::default())
            .unwrap();
        for (xi, ai) in r.x.iter().zip(&a) {
            assert!((xi - ai).abs() < 1e-8, "{:?}", r.x);
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let r = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], 100, &LbfgsConfig::default()).unwrap();
        assert!(r.f < 1e-6, "f = {} after {} iterations", r.f, r.iterations);
        assert!((r.x[0] - 1.0).abs() < 1e-2 && (r.x[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let a = vec![3.0, 4.0];
        let r = lbfgs_minimize(shifted_quadratic(a.clone()), &a, 10, &LbfgsConfig::default())
            .unwrap();
        assert_eq!(r.x, a);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let obj = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(matches!(
            lbfgs_minimize(obj, &[0.0], 5, &LbfgsConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn best_iterate_never_worse_than_start() {
        let obj = |x: &[f64]| ((x[0] * 3.0).sin() + 0.1 * x[0] * x[0], vec![3.0 * (x[0] * 3.0).cos() + 0.2 * x[0]]);
        for x0 in [-3.0, -0.5, 0.0, 1.1, 4.0] {
            let start = obj(&[x0]).0;
            let r = lbfgs_minimize(obj, &[x0], 10, &LbfgsConfig::default()).unwrap();
            assert!(r.f <= start);
        }
    }

    #[test]
    fn direction_without_history_is_steepest_descent() {
        let state = LbfgsState::new(5);
        assert_eq!(state.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn curvature_pairs_are_filtered() {
        let mut state = LbfgsState::new(2);
        assert!(!state.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(state.push(vec![1.0, 0.0], vec![2.0, 0.0]));
        assert!(state.push(vec![0.0, 1.0], vec![0.0, 1.0]));
        assert!(state.push(vec![1.0, 1.0], vec![1.0, 1.0]));
        assert_eq!(state.len(), 2);
        assert_eq!(state.skipped_pairs(), 1);
        assert!(state.pairs().all(|(s, y)| dot(s, y) > 0.0));
    }
}
