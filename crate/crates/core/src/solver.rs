//! Truncated-Newton solver for L2-regularized logistic regression.
//!
//! Minimizes `½‖w‖² + C Σ_i ln(1 + exp(−y_i wᵀx_i))` over a small dense
//! parameter space; callers remap sparse features to local ids first.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Loss weight `C`.
    pub c: f64,
    /// Stop once `‖∇f(w)‖ ≤ tol · ‖∇f(0)‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_iter: 100,
        }
    }
}

/// Local CSR problem; labels are ±1.
pub(crate) struct Problem {
    pub dim: usize,
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub weights: Vec<f64>,
    /// Objective before the first step and after every accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `ln(1 + e^{−m})` without overflow.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Problem {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()]
            .iter()
            .zip(&self.values[r])
            .map(|(&j, &v)| (j as usize, v))
    }

    fn margins(&self, w: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.y[i] * self.row(i).map(|(j, v)| v * w[j]).sum::<f64>();
        }
    }

    #[cfg(test)]
    pub fn objective(&self, c: f64, w: &[f64]) -> f64 {
        let mut m = vec![0.0; self.n()];
        self.margins(w, &mut m);
        self.objective_from_margins(c, w, &m)
    }

    fn objective_from_margins(&self, c: f64, w: &[f64], m: &[f64]) -> f64 {
        0.5 * dot(w, w) + c * m.iter().map(|&mi| log1p_exp_neg(mi)).sum::<f64>()
    }

    #[cfg(test)]
    pub fn gradient(&self, c: f64, w: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.n()];
        self.margins(w, &mut m);
        self.gradient_from_margins(c, w, &m)
    }

    fn gradient_from_margins(&self, c: f64, w: &[f64], m: &[f64]) -> Vec<f64> {
        let mut g = w.to_vec();
        for (i, &mi) in m.iter().enumerate() {
            let coef = c * (sigmoid(mi) - 1.0) * self.y[i];
            for (j, v) in self.row(i) {
                g[j] += coef * v;
            }
        }
        g
    }

    /// `(I + C Xᵀ D X) v` with `D = σ(m)(1 − σ(m))`.
    fn hessian_vec(&self, c: f64, d: &[f64], v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        for (i, &di) in d.iter().enumerate() {
            let xv: f64 = self.row(i).map(|(j, x)| x * v[j]).sum();
            let coef = c * di * xv;
            for (j, x) in self.row(i) {
                out[j] += coef * x;
            }
        }
    }

    fn conjugate_gradient(&self, c: f64, d: &[f64], g: &[f64], gnorm: f64) -> Vec<f64> {
        let n = g.len();
        let mut s = vec![0.0; n];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut p = r.clone();
        let mut hp = vec![0.0; n];
        let mut rr = dot(&r, &r);
        let target = 0.1 * gnorm;
        for _ in 0..n.clamp(1, 250) {
            if rr.sqrt() <= target {
                break;
            }
            self.hessian_vec(c, d, &p, &mut hp);
            let alpha = rr / dot(&p, &hp);
            for j in 0..n {
                s[j] += alpha * p[j];
                r[j] -= alpha * hp[j];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for j in 0..n {
                p[j] = r[j] + beta * p[j];
            }
            rr = rr_new;
        }
        s
    }
}

pub(crate) fn solve(p: &Problem, params: &SolverParams) -> SolveOutcome {
    let c = params.c;
    let mut w = vec![0.0; p.dim];
    let mut m = vec![0.0; p.n()];
    let mut f = p.objective_from_margins(c, &w, &m);
    let mut g = p.gradient_from_margins(c, &w, &m);
    let g0 = dot(&g, &g).sqrt();
    let mut objective = vec![f];
    let mut iterations = 0;
    let mut converged = g0 == 0.0;
    let mut m_trial = vec![0.0; p.n()];
    while !converged && iterations < params.max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= params.tol * g0 {
            converged = true;
            break;
        }
        let d: Vec<f64> = m
            .iter()
            .map(|&mi| {
                let s = sigmoid(mi);
                s * (1.0 - s)
            })
            .collect();
        let s = p.conjugate_gradient(c, &d, &g, gnorm);
        let gs = dot(&g, &s);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = w.iter().zip(&s).map(|(wi, si)| wi + step * si).collect();
            p.margins(&trial, &mut m_trial);
            let f_trial = p.objective_from_margins(c, &trial, &m_trial);
            if f_trial <= f + 1e-4 * step * gs {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, f_trial)) = accepted else {
            break;
        };
        iterations += 1;
        w = trial;
        std::mem::swap(&mut m, &mut m_trial);
        f = f_trial;
        g = p.gradient_from_margins(c, &w, &m);
        objective.push(f);
    }
    if !converged {
        converged = dot(&g, &g).sqrt() <= params.tol * g0;
    }
    SolveOutcome {
        weights: w,
        objective,
        iterations,
        converged,
    }
}
