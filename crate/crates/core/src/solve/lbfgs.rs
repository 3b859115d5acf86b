//! Limited-memory BFGS minimization with a strong Wolfe line search.
//!
//! Trial points where the function is undefined (`None`, or a non-finite
//! value) are treated as `+inf` and shrink the step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIters,
    LineSearchFailure,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::GradTol => "grad_tol",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub memory: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Function value at every accepted iterate, starting point included.
    pub values: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    a: f64,
    f: f64,
    /// Directional derivative, absent when `f` is not finite.
    d: Option<f64>,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Search<'a, F> {
    fg: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
}

const MAX_TRIALS: usize = 60;

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Search<'_, F> {
    fn probe(&mut self, a: f64) -> Point {
        let x: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + a * d).collect();
        match (self.fg)(&x) {
            Some((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let d = dot(&g, self.dir);
                Point { a, f, d: Some(d), x, g }
            }
            _ => Point { a, f: f64::INFINITY, d: None, x, g: Vec::new() },
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.c1 * p.a * self.d0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.d.is_some_and(|d| d.abs() <= -self.c2 * self.d0)
    }

    /// Returns an accepted point. A point meeting only sufficient decrease
    /// is returned when the bracket collapses.
    fn run(&mut self, a_init: f64) -> Option<Point> {
        let mut prev = Point { a: 0.0, f: self.f0, d: Some(self.d0), x: self.x.to_vec(), g: Vec::new() };
        let mut a = a_init;
        for i in 0..MAX_TRIALS {
            let p = self.probe(a);
            if !self.armijo(&p) || (i > 0 && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.d.unwrap() >= 0.0 {
                return self.zoom(p, prev);
            }
            prev = p;
            a *= 2.0;
        }
        (prev.a > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        for _ in 0..MAX_TRIALS {
            let (l, h) = (lo.a.min(hi.a), lo.a.max(hi.a));
            let w = h - l;
            if w <= 1e-16 * h.max(1e-300) {
                break;
            }
            let mut t = interpolate(&lo, &hi).unwrap_or(0.5 * (lo.a + hi.a));
            if !(t > l + 0.1 * w && t < h - 0.1 * w) {
                t = 0.5 * (lo.a + hi.a);
            }
            let p = self.probe(t);
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.d.unwrap() * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        (lo.a > 0.0 && lo.f < self.f0).then_some(lo)
    }
}

/// Minimizer of the cubic (or quadratic, without a slope at `q`) through
/// the two bracket points.
fn interpolate(p: &Point, q: &Point) -> Option<f64> {
    let dp = p.d?;
    if !q.f.is_finite() {
        return None;
    }
    let h = q.a - p.a;
    match q.d {
        Some(dq) => {
            let d1 = dp + dq - 3.0 * (p.f - q.f) / (p.a - q.a);
            let disc = d1 * d1 - dp * dq;
            if disc < 0.0 {
                return None;
            }
            let d2 = h.signum() * disc.sqrt();
            let t = q.a - h * (dq + d2 - d1) / (dq - dp + 2.0 * d2);
            t.is_finite().then_some(t)
        }
        None => {
            let c = (q.f - p.f - dp * h) / (h * h);
            (c > 0.0).then(|| p.a - dp / (2.0 * c))
        }
    }
}

/// Minimize from `x0`. `fg` returns the value and gradient, or `None` where
/// the function is undefined; it must be defined at `x0`.
pub fn minimize<F>(mut fg: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut f, mut g) = fg(&x0)?;
    if !f.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut values = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let gn = norm(&g);
        if gn < opts.grad_tol {
            termination = Termination::GradTol;
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            let dir = direction(&g, &memory);
            let d0 = dot(&dir, &g);
            if !(d0 < 0.0) {
                continue;
            }
            let a_init = if memory.is_empty() { 1.0f64.min(1.0 / gn) } else { 1.0 };
            let mut search = Search { fg: &mut fg, x: &x, dir: &dir, f0: f, d0, c1: opts.c1, c2: opts.c2 };
            if let Some(p) = search.run(a_init) {
                accepted = Some(p);
                break;
            }
        }
        let Some(p) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = p.x;
        f = p.f;
        g = p.g;
        values.push(f);
        iterations += 1;
    }
    if termination == Termination::MaxIters && norm(&g) < opts.grad_tol {
        termination = Termination::GradTol;
    }
    Some(Minimum { x, value: f, gradient: g, iterations, termination, values })
}

/// Two-loop recursion: `-H g`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alpha.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alpha.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
