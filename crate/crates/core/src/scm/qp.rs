//! Weighted least squares on the probability simplex.
//!
//! Minimizes `Σ_k v_k (x1_k - (X0 w)_k)² + Σ_j q_j w_j` over
//! `{w ≥ 0, Σ w = 1}` by accelerated projected gradient from the uniform
//! point, with adaptive restart. Convergence is certified by the
//! Frank–Wolfe duality gap, which bounds the distance to the optimal
//! objective. Every few iterations the active set is polished by solving
//! the equality-constrained KKT system on the current support.

use super::VWeights;
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, LuFactorization};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative stopping tolerance on the duality gap.
    pub tolerance: f64,
    /// Attempt an active-set polish every this many iterations (0 disables).
    pub polish_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tolerance: 1e-12,
            polish_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub weights: Vec<T>,
    pub objective: T,
    /// Frank–Wolfe gap at the returned point (upper bound on suboptimality).
    pub gap: T,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex<T: Scalar>(y: &[T]) -> Vec<T> {
    let mut u: Vec<T> = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        css = css + uj;
        let cand = (css - T::one()) / T::cst((j + 1) as f64);
        if uj - cand > T::zero() {
            theta = cand;
        }
    }
    y.iter().map(|&yi| (yi - theta).max(T::zero())).collect()
}

struct SimplexQp<'a, T> {
    x1: &'a [T],
    x0: &'a DenseMatrix<T>,
    v: &'a [T],
    linear: Vec<T>,
    scale: T,
}

impl<'a, T: Scalar> SimplexQp<'a, T> {
    fn residual(&self, w: &[T]) -> Vec<T> {
        self.x0
            .rows_iter()
            .zip(self.x1)
            .map(|(row, &target)| row.iter().zip(w).fold(-target, |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    fn objective(&self, w: &[T]) -> T {
        let fit: T = self
            .residual(w)
            .iter()
            .zip(self.v)
            .map(|(&r, &vk)| vk * r * r)
            .sum();
        fit + self.linear.iter().zip(w).map(|(&q, &wj)| q * wj).sum::<T>()
    }

    fn gradient(&self, w: &[T]) -> Vec<T> {
        let r = self.residual(w);
        let two = T::cst(2.0);
        (0..self.x0.ncols())
            .map(|j| {
                let s: T = (0..self.x0.nrows())
                    .map(|k| self.v[k] * *self.x0.get(k, j) * r[k])
                    .sum();
                two * s + self.linear[j]
            })
            .collect()
    }

    fn gap(&self, w: &[T], grad: &[T]) -> T {
        let dot: T = grad.iter().zip(w).map(|(&g, &x)| g * x).sum();
        let min = grad.iter().cloned().fold(T::infinity(), T::min);
        (dot - min).max(T::zero())
    }

    fn converged(&self, gap: T, f: T, tol: T) -> bool {
        gap <= tol * f.abs() + T::cst(1e-3) * tol * self.scale
    }

    /// `H x` with `H = X0' diag(v) X0`.
    fn hessian_mul(&self, x: &[T]) -> Vec<T> {
        let xw: Vec<T> = self
            .x0
            .rows_iter()
            .zip(self.v)
            .map(|(row, &vk)| vk * row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>())
            .collect();
        (0..self.x0.ncols())
            .map(|j| (0..self.x0.nrows()).map(|k| *self.x0.get(k, j) * xw[k]).sum())
            .collect()
    }

    /// Lipschitz constant of the gradient, estimated by power iteration.
    fn lipschitz(&self) -> T {
        let n = self.x0.ncols();
        let mut x = vec![T::one() / T::cst((n as f64).sqrt()); n];
        let mut lambda = T::zero();
        for _ in 0..60 {
            let y = self.hessian_mul(&x);
            let norm = y.iter().map(|&a| a * a).sum::<T>().sqrt();
            if norm <= T::min_positive_value() {
                break;
            }
            lambda = norm;
            x = y.into_iter().map(|a| a / norm).collect();
        }
        T::cst(2.2) * lambda + T::min_positive_value().sqrt()
    }

    /// Equality-constrained minimizer on `support`: solves
    /// `[2H  -1; 1' 0] [w; μ] = [2b - q; 1]`. `None` when the system is
    /// singular.
    fn face_minimizer(&self, support: &[usize]) -> Option<Vec<T>> {
        let s = support.len();
        let two = T::cst(2.0);
        let mut kkt = DenseMatrix::from_elem(s + 1, s + 1, T::zero());
        let mut rhs = vec![T::zero(); s + 1];
        for (a, &ja) in support.iter().enumerate() {
            for (b, &jb) in support.iter().enumerate() {
                let h: T = (0..self.x0.nrows())
                    .map(|k| self.v[k] * *self.x0.get(k, ja) * *self.x0.get(k, jb))
                    .sum();
                kkt.set(a, b, two * h);
            }
            kkt.set(a, s, -T::one());
            kkt.set(s, a, T::one());
            let bj: T = (0..self.x0.nrows())
                .map(|k| self.v[k] * *self.x0.get(k, ja) * self.x1[k])
                .sum();
            rhs[a] = two * bj - self.linear[ja];
        }
        rhs[s] = T::one();
        let lu = LuFactorization::new(&kkt).ok()?;
        if lu.is_singular() {
            return None;
        }
        let sol = lu.solve(&rhs).ok()?;
        sol.iter().all(|x| x.is_finite()).then(|| sol[..s].to_vec())
    }

    /// A direction `d` on `support` with `X0 d = 0` (rows with `v > 0`) and
    /// `Σ d = 0`, if the columns are dependent in that sense.
    fn null_direction(&self, support: &[usize]) -> Option<Vec<T>> {
        let s = support.len();
        let rows: Vec<usize> = (0..self.x0.nrows()).filter(|&k| self.v[k] > T::zero()).collect();
        let mut m: Vec<Vec<T>> = rows
            .iter()
            .map(|&k| {
                let sv = self.v[k].sqrt();
                support.iter().map(|&j| sv * *self.x0.get(k, j)).collect()
            })
            .chain(std::iter::once(vec![T::one(); s]))
            .collect();
        let big = m.iter().flatten().fold(T::zero(), |acc, x| acc.max(x.abs()));
        let eps = big * T::cst(1e-11);
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..s {
            if r == m.len() {
                break;
            }
            let p = (r..m.len()).max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
            if m[p][c].abs() <= eps {
                continue;
            }
            m.swap(r, p);
            let piv = m[r][c];
            for x in m[r].iter_mut() {
                *x = *x / piv;
            }
            for i in 0..m.len() {
                if i != r {
                    let f = m[i][c];
                    if f != T::zero() {
                        for j in 0..s {
                            let v = m[r][j];
                            m[i][j] = m[i][j] - f * v;
                        }
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        let free = (0..s).find(|c| !pivots.contains(c))?;
        let mut d = vec![T::zero(); s];
        d[free] = T::one();
        for (row, &c) in pivots.iter().enumerate() {
            d[c] = -m[row][free];
        }
        Some(d)
    }

    /// Primal active-set refinement from the feasible point `w`. Dependent
    /// supports are first thinned along null directions (the fit term is
    /// unchanged there) until the face problem is nonsingular.
    fn polish(&self, w: &[T], tol: T) -> Option<(Vec<T>, T, T)> {
        let n = w.len();
        let mut x = w.to_vec();
        let mut support: Vec<usize> = (0..n).filter(|&j| x[j] > T::zero()).collect();
        for _ in 0..(4 * n + 8) {
            let u = match self.face_minimizer(&support) {
                Some(u) => u,
                None => {
                    let mut d = self.null_direction(&support)?;
                    let slope: T = support.iter().zip(&d).map(|(&j, &dj)| self.linear[j] * dj).sum();
                    if slope > T::zero() {
                        d.iter_mut().for_each(|v| *v = -*v);
                    }
                    let (mut alpha, mut hit) = (T::infinity(), None);
                    for (a, &j) in support.iter().enumerate() {
                        if d[a] < T::zero() {
                            let ratio = x[j] / -d[a];
                            if ratio < alpha {
                                alpha = ratio;
                                hit = Some(a);
                            }
                        }
                    }
                    let hit = hit?;
                    for (a, &j) in support.iter().enumerate() {
                        x[j] = (x[j] + alpha * d[a]).max(T::zero());
                    }
                    x[support[hit]] = T::zero();
                    support.remove(hit);
                    continue;
                }
            };
            if u.iter().all(|&ui| ui >= T::zero()) {
                let mut cand = vec![T::zero(); n];
                for (a, &j) in support.iter().enumerate() {
                    cand[j] = u[a];
                }
                let total: T = cand.iter().cloned().sum();
                cand.iter_mut().for_each(|c| *c = *c / total);
                let g = self.gradient(&cand);
                let f = self.objective(&cand);
                let gap = self.gap(&cand, &g);
                if self.converged(gap, f, tol) {
                    return Some((cand, f, gap));
                }
                // Bring in the coordinate with the most negative reduced cost.
                let level: T = support.iter().map(|&j| g[j] * cand[j]).sum();
                let entering = (0..n)
                    .filter(|j| !support.contains(j))
                    .min_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap_or(std::cmp::Ordering::Equal))?;
                if g[entering] >= level {
                    return None;
                }
                x = cand;
                support.push(entering);
                support.sort_unstable();
            } else {
                // Step toward the face minimizer until a weight reaches zero.
                let (mut alpha, mut hit) = (T::one(), 0);
                for (a, &j) in support.iter().enumerate() {
                    if u[a] < x[j] {
                        let ratio = x[j] / (x[j] - u[a]);
                        if ratio < alpha {
                            alpha = ratio;
                            hit = a;
                        }
                    }
                }
                for (a, &j) in support.iter().enumerate() {
                    x[j] = (x[j] + alpha * (u[a] - x[j])).max(T::zero());
                }
                x[support[hit]] = T::zero();
                support.remove(hit);
            }
            if support.is_empty() {
                return None;
            }
        }
        None
    }

    fn solve(&self, opts: &SolverOptions) -> Result<QpSolution<T>> {
        let n = self.x0.ncols();
        let tol = T::cst(opts.tolerance);
        let mut lip = self.lipschitz();
        let mut x = vec![T::one() / T::cst(n as f64); n];
        let mut fx = self.objective(&x);
        let mut y = x.clone();
        let mut t = T::one();
        let mut gap = self.gap(&x, &self.gradient(&x));
        if n == 1 || self.converged(gap, fx, tol) {
            return Ok(QpSolution { weights: x, objective: fx, gap, iterations: 0 });
        }
        for it in 1..=opts.max_iter {
            let g = self.gradient(&y);
            let step: Vec<T> = y.iter().zip(&g).map(|(&yi, &gi)| yi - gi / lip).collect();
            let cand = project_to_simplex(&step);
            let fc = self.objective(&cand);
            if fc > fx {
                if y == x {
                    // Plain gradient step failed to descend: the curvature
                    // estimate is too small.
                    lip = lip * T::cst(2.0);
                } else {
                    y = x.clone();
                    t = T::one();
                }
                continue;
            }
            let t_next = (T::one() + (T::one() + T::cst(4.0) * t * t).sqrt()) / T::cst(2.0);
            let beta = (t - T::one()) / t_next;
            y = cand
                .iter()
                .zip(&x)
                .map(|(&c, &xo)| c + beta * (c - xo))
                .collect();
            x = cand;
            fx = fc;
            t = t_next;

            gap = self.gap(&x, &self.gradient(&x));
            if self.converged(gap, fx, tol) {
                return Ok(QpSolution { weights: x, objective: fx, gap, iterations: it });
            }
            if opts.polish_every > 0 && it % opts.polish_every == 0 {
                if let Some((w, f, g)) = self.polish(&x, tol) {
                    return Ok(QpSolution { weights: w, objective: f, gap: g, iterations: it });
                }
            }
        }
        if let Some((w, f, g)) = self.polish(&x, tol) {
            return Ok(QpSolution { weights: w, objective: f, gap: g, iterations: opts.max_iter });
        }
        Err(Error::SolverDiverged {
            iterations: opts.max_iter,
            gap: gap.to_f64_lossy(),
        })
    }
}

fn check_inputs<T: Scalar>(x1: &[T], x0: &DenseMatrix<T>, v: &VWeights<T>) -> Result<()> {
    if x0.ncols() == 0 {
        return Err(Error::DimensionMismatch("no donors".into()));
    }
    if x0.nrows() != x1.len() || v.values.len() != x1.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} target predictors, {} donor predictor rows, {} V weights",
            x1.len(),
            x0.nrows(),
            v.values.len()
        )));
    }
    let finite = x1.iter().chain(v.values.iter()).all(|x| x.is_finite())
        && x0.rows_iter().flatten().all(|x| x.is_finite());
    if !finite {
        return Err(Error::DimensionMismatch("non-finite predictor or V value".into()));
    }
    Ok(())
}

fn scale_of<T: Scalar>(x1: &[T], x0: &DenseMatrix<T>, v: &[T], linear: &[T]) -> T {
    let target: T = x1.iter().zip(v).map(|(&x, &vk)| vk * x * x).sum();
    let donor = (0..x0.ncols())
        .map(|j| (0..x0.nrows()).map(|k| v[k] * *x0.get(k, j) * *x0.get(k, j)).sum::<T>())
        .fold(T::zero(), T::max);
    let lin = linear.iter().map(|q| q.abs()).fold(T::zero(), T::max);
    target + donor + lin
}

/// `Δ_j = Σ_k v_k (x1_k - X0_kj)²`, the V-weighted distance from the target
/// to each donor.
pub fn pairwise_discrepancy<T: Scalar>(x1: &[T], x0: &DenseMatrix<T>, v: &[T]) -> Vec<T> {
    (0..x0.ncols())
        .map(|j| {
            (0..x0.nrows())
                .map(|k| {
                    let d = x1[k] - *x0.get(k, j);
                    v[k] * d * d
                })
                .sum()
        })
        .collect()
}

/// Standard synthetic-control weights for fixed predictor importance `v`.
pub fn fit_weights<T: Scalar>(
    x1: &[T],
    x0: &DenseMatrix<T>,
    v: &VWeights<T>,
    opts: &SolverOptions,
) -> Result<QpSolution<T>> {
    fit_penalized(x1, x0, v, T::zero(), opts)
}

/// Penalized weights: adds `λ Σ_j w_j Δ_j` to the fit objective.
pub fn fit_penalized<T: Scalar>(
    x1: &[T],
    x0: &DenseMatrix<T>,
    v: &VWeights<T>,
    lambda: T,
    opts: &SolverOptions,
) -> Result<QpSolution<T>> {
    check_inputs(x1, x0, v)?;
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidConfig("penalty must be finite and nonnegative".into()));
    }
    let linear: Vec<T> = if lambda > T::zero() {
        pairwise_discrepancy(x1, x0, &v.values)
            .into_iter()
            .map(|d| lambda * d)
            .collect()
    } else {
        vec![T::zero(); x0.ncols()]
    };
    let scale = scale_of(x1, x0, &v.values, &linear);
    SimplexQp {
        x1,
        x0,
        v: &v.values,
        linear,
        scale,
    }
    .solve(opts)
}

/// Objective of the penalized problem at `w` (used by tests and reports).
pub fn penalized_objective<T: Scalar>(
    x1: &[T],
    x0: &DenseMatrix<T>,
    v: &[T],
    lambda: T,
    w: &[T],
) -> T {
    let fit: T = x0
        .rows_iter()
        .zip(x1)
        .zip(v)
        .map(|((row, &target), &vk)| {
            let r = row.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() - target;
            vk * r * r
        })
        .sum();
    let pen: T = pairwise_discrepancy(x1, x0, v)
        .iter()
        .zip(w)
        .map(|(&d, &wj)| d * wj)
        .sum();
    fit + lambda * pen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(k: usize) -> VWeights<f64> {
        VWeights::uniform((0..k).map(|i| format!("x{i}")).collect())
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_to_simplex(&[0.3, -2.0, 1.4, 0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
    }

    #[test]
    fn exact_match_donor_gets_all_weight() {
        let x0 = DenseMatrix::from_rows(vec![
            vec![1.0, 4.0, 2.0, 0.0],
            vec![3.0, 1.0, 5.0, 2.0],
            vec![0.0, 2.0, 7.0, 1.0],
        ])
        .unwrap();
        let x1 = x0.column(2);
        let sol = fit_weights(&x1, &x0, &uniform(3), &SolverOptions::default()).unwrap();
        assert!((sol.weights[2] - 1.0).abs() < 1e-9, "{:?}", sol.weights);
        assert!(sol.objective <= 1e-12);
    }

    #[test]
    fn single_donor_is_a_point() {
        let x0 = DenseMatrix::from_rows(vec![vec![100.0], vec![-3.0]]).unwrap();
        let sol = fit_weights(&[0.0, 0.0], &x0, &uniform(2), &SolverOptions::default()).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
    }

    #[test]
    fn midpoint_of_two_vertices() {
        let x0 = DenseMatrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let sol = fit_weights(&[0.5, 0.5], &x0, &uniform(2), &SolverOptions::default()).unwrap();
        for (w, e) in sol.weights.iter().zip([0.0, 0.5, 0.5]) {
            assert!((w - e).abs() < 1e-9, "{:?}", sol.weights);
        }
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let x0 = DenseMatrix::from_rows(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            fit_weights(&[0.5, 0.5], &x0, &uniform(2), &SolverOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
        let empty = DenseMatrix::<f64>::from_elem(1, 0, 0.0);
        assert!(matches!(
            fit_weights(&[0.5], &empty, &uniform(1), &SolverOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let x0 = DenseMatrix::from_rows(vec![vec![0.0, 1.0, 0.3], vec![0.0, 0.2, 1.0]]).unwrap();
        let opts = SolverOptions { max_iter: 1, tolerance: 1e-300, polish_every: 0 };
        assert!(matches!(
            fit_weights(&[0.9, 0.9], &x0, &uniform(2), &opts),
            Err(Error::SolverDiverged { iterations: 1, .. })
        ));
    }

    #[test]
    fn huge_penalty_picks_nearest_donor() {
        // Δ = (1.0, 0.25, 1.25) for the target at the origin.
        let x0 = DenseMatrix::from_rows(vec![vec![1.0, 0.5, -1.0], vec![1.0, 0.5, 1.5]]).unwrap();
        let v = uniform(2);
        let delta = pairwise_discrepancy(&[0.0, 0.0], &x0, &v.values);
        assert_eq!(delta, vec![1.0, 0.25, 1.625]);
        let sol = fit_penalized(&[0.0, 0.0], &x0, &v, 1e9, &SolverOptions::default()).unwrap();
        assert!((sol.weights[1] - 1.0).abs() < 1e-9, "{:?}", sol.weights);
    }

    #[test]
    fn zero_penalty_matches_plain_fit() {
        let x0 = DenseMatrix::from_rows(vec![
            vec![0.2, 0.9, 0.4, 0.7],
            vec![0.8, 0.1, 0.5, 0.3],
        ])
        .unwrap();
        let v = VWeights::new(vec!["a".into(), "b".into()], vec![0.3, 0.7]).unwrap();
        let opts = SolverOptions::default();
        let a = fit_weights(&[0.55, 0.45f64], &x0, &v, &opts).unwrap();
        let b = fit_penalized(&[0.55, 0.45], &x0, &v, 0.0, &opts).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn generic_over_f32() {
        let x0 = DenseMatrix::from_rows(vec![vec![0.0f32, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let v = VWeights::<f32>::uniform(vec!["a".into(), "b".into()]);
        let opts = SolverOptions { tolerance: 1e-6, ..Default::default() };
        let sol = fit_weights(&[0.5f32, 0.5], &x0, &v, &opts).unwrap();
        assert!((sol.weights[1] - 0.5).abs() < 1e-4);
    }
}
