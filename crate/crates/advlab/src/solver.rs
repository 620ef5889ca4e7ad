//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Step structure: generalized Cauchy point along the projected
//! steepest-descent path (scaled-identity model) to identify active bounds,
//! a two-loop-recursion quasi-Newton direction on the free variables, then a
//! backtracking Armijo line search along the projected direction. Curvature
//! pairs with insufficient s'y are skipped.

use std::collections::VecDeque;

use crate::tensor::Scalar;

/// Componentwise bounds; infinities are allowed.
#[derive(Debug, Clone)]
pub struct BoxBounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> BoxBounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "lower must not exceed upper"
        );
        BoxBounds { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        BoxBounds {
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [T]) {
        for i in 0..x.len() {
            x[i] = x[i].max(self.lower[i]).min(self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Number of curvature pairs kept in the limited memory.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub pg_tolerance: T,
    /// Stop when the relative function decrease falls below this.
    pub f_rel_tolerance: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            memory: 15,
            max_iterations: 150,
            pg_tolerance: T::from_f64_lossy(1e-5),
            f_rel_tolerance: T::from_f64_lossy(1e-9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct SolverResult<T> {
    pub x_star: Vec<T>,
    pub f_star: T,
    pub status: SolverStatus,
    pub iterations: usize,
    pub evaluations: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
/// Relative s'y threshold below which a curvature pair is skipped.
const CURVATURE_SKIP: f64 = 1e-10;
/// Directional-derivative ratio above which the accepted step is refined by
/// one secant interpolation (exact on quadratics).
const REFINE_RATIO: f64 = 0.1;

/// Sets gradient components to zero where they point out of the box at an
/// active bound.
pub fn projected_gradient<T: Scalar>(x: &[T], grad: &[T], bounds: &BoxBounds<T>) -> Vec<T> {
    let mut pg = grad.to_vec();
    for i in 0..x.len() {
        if (x[i] <= bounds.lower[i] && grad[i] > T::zero())
            || (x[i] >= bounds.upper[i] && grad[i] < T::zero())
        {
            pg[i] = T::zero();
        }
    }
    pg
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

struct Memory<T> {
    pairs: VecDeque<(Vec<T>, Vec<T>, T)>, // (s, y, s'y)
    capacity: usize,
    gamma: T,
}

impl<T: Scalar> Memory<T> {
    fn new(capacity: usize) -> Self {
        Memory {
            pairs: VecDeque::new(),
            capacity,
            gamma: T::one(),
        }
    }

    fn push(&mut self, s: Vec<T>, y: Vec<T>) {
        let sy: T = s.iter().zip(&y).map(|(&a, &b)| a * b).sum();
        let sn: T = s.iter().map(|&a| a * a).sum::<T>().sqrt();
        let yn: T = y.iter().map(|&a| a * a).sum::<T>().sqrt();
        if sy <= T::from_f64_lossy(CURVATURE_SKIP) * sn * yn {
            return;
        }
        let yy: T = y.iter().map(|&a| a * a).sum();
        self.gamma = sy / yy;
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, sy));
    }

    /// Two-loop recursion: returns `H * g` with `H0 = gamma * I`.
    fn apply_inverse(&self, g: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, sy) in self.pairs.iter().rev() {
            let alpha = s.iter().zip(&q).map(|(&a, &b)| a * b).sum::<T>() / *sy;
            for i in 0..q.len() {
                q[i] -= alpha * y[i];
            }
            alphas.push(alpha);
        }
        for v in q.iter_mut() {
            *v *= self.gamma;
        }
        for ((s, y, sy), &alpha) in self.pairs.iter().zip(alphas.iter().rev()) {
            let beta = y.iter().zip(&q).map(|(&a, &b)| a * b).sum::<T>() / *sy;
            for i in 0..q.len() {
                q[i] += (alpha - beta) * s[i];
            }
        }
        q
    }
}

/// Generalized Cauchy point under the scaled-identity model `B = I/gamma`:
/// walks the breakpoints of the projected steepest-descent path and stops at
/// the first local minimizer of the quadratic model. Returns the point and
/// the mask of variables fixed at a bound there.
fn cauchy_point<T: Scalar>(
    x: &[T],
    g: &[T],
    bounds: &BoxBounds<T>,
    gamma: T,
) -> (Vec<T>, Vec<bool>) {
    let n = x.len();
    let inv_gamma = T::one() / gamma;
    // breakpoint along -g for each coordinate
    let mut breaks: Vec<(T, usize)> = Vec::new();
    let mut d = vec![T::zero(); n];
    let mut active = vec![false; n];
    for i in 0..n {
        if g[i] < T::zero() && bounds.upper[i].is_finite() {
            let t = (x[i] - bounds.upper[i]) / g[i];
            if t > T::zero() {
                breaks.push((t, i));
                d[i] = -g[i];
            } else {
                active[i] = true;
            }
        } else if g[i] > T::zero() && bounds.lower[i].is_finite() {
            let t = (x[i] - bounds.lower[i]) / g[i];
            if t > T::zero() {
                breaks.push((t, i));
                d[i] = -g[i];
            } else {
                active[i] = true;
            }
        } else if g[i] != T::zero() {
            d[i] = -g[i];
        } else {
            // zero gradient component: stays put, not counted active
        }
    }
    breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut xc = x.to_vec();
    let mut t_prev = T::zero();
    let mut next_break = 0usize;
    loop {
        // model derivatives along the current segment direction
        let f1: T = g.iter().zip(&d).map(|(&a, &b)| a * b).sum::<T>()
            + inv_gamma
                * (0..n)
                    .map(|i| (xc[i] - x[i]) * d[i])
                    .sum::<T>();
        let f2: T = inv_gamma * d.iter().map(|&v| v * v).sum::<T>();
        if f2 <= T::zero() || f1 >= T::zero() {
            break; // no further descent along the path
        }
        let dt_star = -f1 / f2;
        let t_next = if next_break < breaks.len() {
            breaks[next_break].0
        } else {
            T::infinity()
        };
        let seg = t_next - t_prev;
        if dt_star < seg {
            for i in 0..n {
                xc[i] = xc[i] + dt_star * d[i];
            }
            break;
        }
        // advance to the breakpoint, fix that variable at its bound
        for i in 0..n {
            xc[i] = xc[i] + seg * d[i];
        }
        if next_break >= breaks.len() {
            break;
        }
        let (_, j) = breaks[next_break];
        xc[j] = if g[j] < T::zero() {
            bounds.upper[j]
        } else {
            bounds.lower[j]
        };
        d[j] = T::zero();
        active[j] = true;
        t_prev = t_next;
        next_break += 1;
        // coalesce identical breakpoints
        while next_break < breaks.len() && breaks[next_break].0 == t_prev {
            let j2 = breaks[next_break].1;
            xc[j2] = if g[j2] < T::zero() {
                bounds.upper[j2]
            } else {
                bounds.lower[j2]
            };
            d[j2] = T::zero();
            active[j2] = true;
            next_break += 1;
        }
        if d.iter().all(|&v| v == T::zero()) {
            break;
        }
    }
    bounds.project(&mut xc);
    (xc, active)
}

/// Minimizes `obj` over the box from `x0` (projected into the box first).
pub fn minimize<T: Scalar, F>(
    mut obj: F,
    x0: &[T],
    bounds: &BoxBounds<T>,
    cfg: &SolverConfig<T>,
) -> SolverResult<T>
where
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    assert_eq!(x0.len(), bounds.len());
    let n = x0.len();
    let c1 = T::from_f64_lossy(ARMIJO_C1);

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = obj(&x);
    let mut evaluations = 1usize;
    let mut memory = Memory::new(cfg.memory.max(1));
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0usize;

    for iter in 0..cfg.max_iterations {
        iterations = iter;
        let pg = projected_gradient(&x, &g, bounds);
        if inf_norm(&pg) <= cfg.pg_tolerance {
            status = SolverStatus::Converged;
            break;
        }

        let (xc, active) = cauchy_point(&x, &g, bounds, memory.gamma);

        // quasi-Newton direction on the free variables
        let mut gbar = g.clone();
        for i in 0..n {
            if active[i] {
                gbar[i] = T::zero();
            }
        }
        let hg = memory.apply_inverse(&gbar);
        let mut p: Vec<T> = (0..n)
            .map(|i| if active[i] { xc[i] - x[i] } else { -hg[i] })
            .collect();

        let mut dir_deriv: T = g.iter().zip(&p).map(|(&a, &b)| a * b).sum();
        if dir_deriv >= T::zero() {
            // fall back to the Cauchy step, which is a descent direction
            p = (0..n).map(|i| xc[i] - x[i]).collect();
            dir_deriv = g.iter().zip(&p).map(|(&a, &b)| a * b).sum();
            if dir_deriv >= T::zero() {
                p = pg.iter().map(|&v| -v).collect();
                dir_deriv = g.iter().zip(&p).map(|(&a, &b)| a * b).sum();
            }
        }

        // backtracking Armijo with halving along the projected direction
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<T> = (0..n).map(|i| x[i] + alpha * p[i]).collect();
            bounds.project(&mut trial);
            let step: Vec<T> = (0..n).map(|i| trial[i] - x[i]).collect();
            let pred: T = g.iter().zip(&step).map(|(&a, &b)| a * b).sum();
            if pred >= T::zero() && step.iter().all(|&s| s == T::zero()) {
                break; // projection annihilated the step
            }
            let (ft, gt) = obj(&trial);
            evaluations += 1;
            if ft <= f + c1 * pred.min(T::zero()) {
                accepted = Some((alpha, trial, ft, gt));
                break;
            }
            alpha = alpha / T::from_f64_lossy(2.0);
        }

        let (alpha, mut x_new, mut f_new, mut g_new) = match accepted {
            Some(a) => a,
            None => {
                status = SolverStatus::LineSearchFailure;
                break;
            }
        };

        // One secant refinement of the step length when the directional
        // derivative at the accepted point is still large. Only valid when
        // the projection was inactive over the segment; exact on quadratics.
        let unprojected = (0..n).all(|i| x_new[i] == x[i] + alpha * p[i]);
        if unprojected {
            let d0 = dir_deriv;
            let d1: T = g_new.iter().zip(&p).map(|(&a, &b)| a * b).sum();
            if d1.abs() > T::from_f64_lossy(REFINE_RATIO) * d0.abs() && d1 != d0 {
                let alpha_star = alpha * d0 / (d0 - d1);
                if alpha_star > T::zero() && alpha_star.is_finite() {
                    let mut refined: Vec<T> =
                        (0..n).map(|i| x[i] + alpha_star * p[i]).collect();
                    bounds.project(&mut refined);
                    let (fr, gr) = obj(&refined);
                    evaluations += 1;
                    if fr < f_new {
                        x_new = refined;
                        f_new = fr;
                        g_new = gr;
                    }
                }
            }
        }

        let s: Vec<T> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<T> = (0..n).map(|i| g_new[i] - g[i]).collect();
        memory.push(s, y);

        let decrease = f - f_new;
        let scale = f.abs().max(f_new.abs()).max(T::one());
        x = x_new;
        f = f_new;
        g = g_new;
        iterations = iter + 1;

        // treat a vanishing relative decrease as convergence only once the
        // projected gradient is small too; otherwise keep iterating
        if decrease >= T::zero() && decrease <= cfg.f_rel_tolerance * scale {
            let pg = projected_gradient(&x, &g, bounds);
            if inf_norm(&pg) <= cfg.pg_tolerance {
                status = SolverStatus::Converged;
                break;
            }
        }
    }

    SolverResult {
        x_star: x,
        f_star: f,
        status,
        iterations,
        evaluations,
    }
}
