//! Least squares over the probability simplex.
//!
//! Solves `min ||y - X w||^2` subject to `w >= 0`, `sum(w) = 1` with
//! accelerated projected gradient (FISTA with adaptive restart) started from
//! uniform weights. Every few iterations the current support is handed to a
//! primal active-set routine that solves the face problem exactly; when that
//! point satisfies the optimality conditions the solve stops there. Iteration
//! count and the final Frank-Wolfe gap are reported so callers can detect a
//! solve that ran out of iterations.
//!
//! The problem is rescaled by the largest absolute entry of `[X y]` before
//! solving, so tolerances are scale-free and weights are invariant under a
//! common rescaling of the data.

use nalgebra::{DMatrix, DVector};

/// Outcome of a simplex least-squares solve.
#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Frank-Wolfe duality gap `g.w - min_j g_j` on the rescaled problem.
    pub gap: f64,
    pub converged: bool,
}

const POLISH_EVERY: usize = 25;

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Renormalise away accumulated rounding.
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        w = vec![1.0 / n as f64; n];
    }
    w
}

struct Quadratic {
    x: DMatrix<f64>,
    y: DVector<f64>,
    q: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quadratic {
    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.q * w - &self.b
    }

    /// `0.5 w'Qw - b'w`; differs from the scaled residual sum of squares by a constant.
    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.q * w)) - self.b.dot(w)
    }

    fn gap(&self, w: &DVector<f64>) -> f64 {
        let g = self.grad(w);
        let min = g.iter().copied().fold(f64::INFINITY, f64::min);
        (g.dot(w) - min).max(0.0)
    }

    /// Least squares on the affine face `{w : w_j = 0 off support, sum(w) = 1}`.
    ///
    /// Works on `X` directly rather than the normal equations, so the
    /// conditioning is that of the donor columns and not its square. Rank
    /// deficient faces get the minimum-norm solution.
    fn solve_face(&self, support: &[usize]) -> Option<DVector<f64>> {
        let n = self.b.len();
        let mut w = DVector::<f64>::zeros(n);
        let (&anchor, rest) = support.split_first()?;
        w[anchor] = 1.0;
        if rest.is_empty() {
            return Some(w);
        }
        let base = self.x.column(anchor);
        let a = DMatrix::from_fn(self.x.nrows(), rest.len(), |i, c| self.x[(i, rest[c])] - base[i]);
        let r = &self.y - base;
        let z = min_norm_solve(&a, &r)?;
        for (c, &j) in rest.iter().enumerate() {
            w[j] = z[c];
            w[anchor] -= z[c];
        }
        Some(w)
    }

    /// Primal active-set method started from the feasible point `start`.
    fn active_set(&self, start: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
        let n = self.b.len();
        let mut w = start.clone();
        let mut support: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
        for _ in 0..(4 * n + 10) {
            let v = self.solve_face(&support)?;
            let blocking = support
                .iter()
                .filter(|&&j| v[j] < 0.0)
                .map(|&j| (j, w[j] / (w[j] - v[j])))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            match blocking {
                None => {
                    w = v;
                    let g = self.grad(&w);
                    let (jmin, gmin) = g
                        .iter()
                        .copied()
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (j, x)| if x < acc.1 { (j, x) } else { acc });
                    if (g.dot(&w) - gmin) <= tol {
                        return Some(w);
                    }
                    if support.contains(&jmin) {
                        return None;
                    }
                    support.push(jmin);
                    support.sort_unstable();
                }
                Some((j_block, alpha)) => {
                    let alpha = alpha.clamp(0.0, 1.0);
                    w = &w + (&v - &w) * alpha;
                    w[j_block] = 0.0;
                    support.retain(|&j| j != j_block && w[j] > 0.0);
                    for j in 0..n {
                        if !support.contains(&j) {
                            w[j] = 0.0;
                        }
                    }
                    if support.is_empty() {
                        return None;
                    }
                    let s = w.sum();
                    w /= s;
                }
            }
        }
        None
    }
}

/// Minimum-norm least-squares solution of `a z = r`.
///
/// Uses faer's SVD: nalgebra's bidiagonal SVD occasionally returns a
/// factorisation that does not recompose the input.
fn min_norm_solve(a: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, k) = a.shape();
    let svd = faer::Mat::<f64>::from_fn(m, k, |i, j| a[(i, j)]).thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = f64::EPSILON * (m.max(k) as f64) * smax;
    let mut z = DVector::<f64>::zeros(k);
    for i in 0..s.nrows() {
        if s[i] <= cutoff {
            continue;
        }
        let c = (0..m).map(|row| u[(row, i)] * r[row]).sum::<f64>() / s[i];
        for j in 0..k {
            z[j] += v[(j, i)] * c;
        }
    }
    z.iter().all(|x| x.is_finite()).then_some(z)
}

/// Minimises `||y - X w||^2` over the simplex.
///
/// `x` has one column per donor and one row per matched quantity.
pub fn simplex_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> SimplexSolution {
    let n = x.ncols();
    let uniform = DVector::from_element(n, 1.0 / n as f64);
    let scale = x.amax().max(y.amax());
    if n == 1 || scale == 0.0 || !scale.is_finite() {
        return SimplexSolution {
            weights: uniform.iter().copied().collect(),
            iterations: 0,
            gap: 0.0,
            converged: true,
        };
    }
    let xs = x / scale;
    let ys = y / scale;
    let quad = Quadratic {
        q: xs.transpose() * &xs,
        b: xs.transpose() * &ys,
        x: xs,
        y: ys,
    };
    let lipschitz = quad.q.clone().symmetric_eigenvalues().max();
    if lipschitz <= 0.0 {
        return SimplexSolution {
            weights: uniform.iter().copied().collect(),
            iterations: 0,
            gap: 0.0,
            converged: true,
        };
    }
    let step = 1.0 / lipschitz;

    let mut w = uniform.clone();
    let mut z = w.clone();
    let mut t = 1.0_f64;
    let mut f_w = quad.value(&w);

    for it in 0..=max_iter {
        if it % POLISH_EVERY == 0 {
            if let Some(p) = quad.active_set(&w, tol) {
                if quad.value(&p) <= f_w + 1e-14 * (1.0 + f_w.abs()) {
                    let gap = quad.gap(&p);
                    return SimplexSolution {
                        weights: p.iter().copied().collect(),
                        iterations: it,
                        gap,
                        converged: true,
                    };
                }
            }
        }
        let gap = quad.gap(&w);
        if gap <= tol {
            return SimplexSolution {
                weights: w.iter().copied().collect(),
                iterations: it,
                gap,
                converged: true,
            };
        }
        if it == max_iter {
            return SimplexSolution {
                weights: w.iter().copied().collect(),
                iterations: it,
                gap,
                converged: false,
            };
        }
        let trial = &z - quad.grad(&z) * step;
        let w_next = DVector::from_vec(project_simplex(trial.as_slice()));
        let f_next = quad.value(&w_next);
        if f_next > f_w {
            // Restart momentum from the last accepted point.
            t = 1.0;
            z = w.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &w_next + (&w_next - &w) * ((t - 1.0) / t_next);
        w = w_next;
        f_w = f_next;
        t = t_next;
    }
    unreachable!("loop returns at max_iter")
}
