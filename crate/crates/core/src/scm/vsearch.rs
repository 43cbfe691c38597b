//! Data-driven choice of predictor importance V: minimize the pre-period
//! outcome RMSPE of the induced synthetic path over the simplex of V,
//! parametrized by softmax and searched with multi-start Nelder–Mead.

use super::qp::{fit_weights, SolverOptions};
use super::{rmspe, Design, VSearchOptions, VWeights};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Scalar;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult<T> {
    pub point: Vec<T>,
    pub value: T,
    pub iterations: usize,
}

/// Derivative-free minimization with the standard reflection, expansion,
/// contraction and shrink coefficients (1, 2, ½, ½).
pub fn nelder_mead<T: Scalar>(
    f: impl Fn(&[T]) -> T,
    start: &[T],
    step: T,
    max_iter: usize,
    tolerance: T,
) -> NelderMeadResult<T> {
    let n = start.len();
    if n == 0 {
        return NelderMeadResult { point: vec![], value: f(&[]), iterations: 0 };
    }
    let half = T::cst(0.5);
    let two = T::cst(2.0);
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] = p[i] + step;
        let fp = f(&p);
        simplex.push((p, fp));
    }
    let order = |s: &mut Vec<(Vec<T>, T)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    let mut iterations = 0;
    while iterations < max_iter {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(&a, &b)| (a - b).abs()))
            .fold(T::zero(), T::max);
        if !best.is_finite() || (spread <= tolerance * (best.abs() + tolerance) && size <= tolerance.sqrt()) {
            break;
        }
        iterations += 1;
        let centroid: Vec<T> = (0..n)
            .map(|i| simplex[..n].iter().map(|(p, _)| p[i]).sum::<T>() / T::cst(n as f64))
            .collect();
        let toward = |coef: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };
        let reflected = toward(T::one());
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = toward(two);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = toward(half);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = toward(-half);
                let fc = f(&c);
                (c, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let p: Vec<T> = entry
                        .0
                        .iter()
                        .zip(&best_point)
                        .map(|(&x, &b)| b + half * (x - b))
                        .collect();
                    let fp = f(&p);
                    *entry = (p, fp);
                }
            }
        }
    }
    order(&mut simplex);
    let (point, value) = simplex.swap_remove(0);
    NelderMeadResult { point, value, iterations }
}

/// Softmax over `z` extended with a trailing zero logit.
fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let logits: Vec<T> = z.iter().cloned().chain(std::iter::once(T::zero())).collect();
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exp.iter().cloned().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic starting logits: uniform V, then one start emphasizing each
/// predictor, then Halton points in `[-3, 3]^(k-1)`.
fn start_points<T: Scalar>(k: usize, starts: usize) -> Vec<Vec<T>> {
    let dim = k - 1;
    (0..starts.max(1))
        .map(|s| {
            if s == 0 {
                vec![T::zero(); dim]
            } else if s <= k {
                let focus = s - 1;
                if focus < dim {
                    (0..dim).map(|i| if i == focus { T::cst(3.0) } else { T::zero() }).collect()
                } else {
                    vec![T::cst(-3.0); dim]
                }
            } else {
                (0..dim)
                    .map(|i| T::cst(6.0 * (radical_inverse(s, PRIMES[i % PRIMES.len()]) - 0.5)))
                    .collect()
            }
        })
        .collect()
}

/// Chooses V for `target` on `donors` and returns it with the induced weights.
pub fn optimize_v<T: Scalar, S: AsRef<str>>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[S],
    opts: &VSearchOptions,
    solver: &SolverOptions,
) -> Result<(VWeights<T>, Vec<T>)> {
    let donors: Vec<String> = donors.iter().map(|d| d.as_ref().to_string()).collect();
    let design = Design::build(panel, target, &donors, opts.standardize)?;
    if design.from_outcomes {
        let v = VWeights::uniform(design.names.clone());
        let sol = fit_weights(&design.x1, &design.x0, &v, solver)?;
        return Ok((v, sol.weights));
    }
    optimize_v_with_design(panel, target, &donors, &design, opts, solver)
}

pub(crate) fn optimize_v_with_design<T: Scalar>(
    panel: &PanelDataset<T>,
    target: &str,
    donors: &[String],
    design: &Design<T>,
    opts: &VSearchOptions,
    solver: &SolverOptions,
) -> Result<(VWeights<T>, Vec<T>)> {
    let k = design.names.len();
    if k == 1 {
        let v = VWeights::new(design.names.clone(), vec![T::one()])?;
        let sol = fit_weights(&design.x1, &design.x0, &v, solver)?;
        return Ok((v, sol.weights));
    }
    let actual = panel.outcome_of(target)?;
    let idx = donors
        .iter()
        .map(|d| panel.unit_index(d))
        .collect::<Result<Vec<_>>>()?;
    let pre: Vec<usize> = (0..panel.pre_len()).collect();
    let evaluate = |z: &[T]| -> Result<(VWeights<T>, Vec<T>, T)> {
        let v = VWeights { names: design.names.clone(), values: softmax(z) };
        let sol = fit_weights(&design.x1, &design.x0, &v, solver)?;
        let path: Vec<T> = (0..panel.num_periods())
            .map(|t| idx.iter().zip(&sol.weights).map(|(&j, &w)| w * panel.outcome_row(j)[t]).sum())
            .collect();
        let err = rmspe(actual, &path, &pre)?;
        Ok((v, sol.weights, err))
    };
    let objective = |z: &[T]| evaluate(z).map_or(T::infinity(), |(_, _, e)| e);
    let run = |(s, z0): (usize, Vec<T>)| {
        let r = nelder_mead(objective, &z0, T::one(), opts.max_iter, T::cst(opts.tolerance));
        (r.value, s, r.point)
    };
    let starts: Vec<(usize, Vec<T>)> = start_points::<T>(k, opts.starts).into_iter().enumerate().collect();
    let results: Vec<(T, usize, Vec<T>)> = if opts.parallel {
        starts.into_par_iter().map(run).collect()
    } else {
        starts.into_iter().map(run).collect()
    };
    let best = results
        .into_iter()
        .filter(|r| r.0.is_finite())
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        })
        .ok_or(Error::SolverDiverged { iterations: solver.max_iter, gap: f64::NAN })?;
    let (v, w, _) = evaluate(&best.2)?;
    Ok((v, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let r = nelder_mead(
            |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            1.0,
            2000,
            1e-14,
        );
        assert!((r.point[0] - 1.0).abs() < 1e-5 && (r.point[1] + 2.0).abs() < 1e-5, "{:?}", r);
    }

    #[test]
    fn softmax_is_normalized() {
        let v = softmax(&[0.0f64, 3.0, -700.0]);
        assert_eq!(v.len(), 4);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn start_points_deterministic_and_distinct() {
        let a = start_points::<f64>(4, 10);
        assert_eq!(a, start_points::<f64>(4, 10));
        assert_eq!(a.len(), 10);
        for i in 0..a.len() {
            for j in 0..i {
                assert_ne!(a[i], a[j]);
            }
        }
    }
}
