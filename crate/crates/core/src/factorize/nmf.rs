use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{ActivityMatrix, Factors};
use crate::error::{Error, Result};

/// Denominator guard for the multiplicative updates.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    pub k: usize,
    /// Stop once the relative objective improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            k: 3,
            tol: 1e-5,
            max_iter: 500,
            seed: 42,
        }
    }
}

/// `A ≈ W L` with `W` (N x k) holding per-user preferences and `L` (k x M)
/// the latent lifestyles. Rows of `L` are scaled to unit sum (the scale moves
/// into `W`) and components are ordered by descending column norm of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub w: Array2<f64>,
    pub l: Array2<f64>,
    pub k: usize,
    /// `0.5 * ||A - W L||_F^2` at initialisation and after every iteration.
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub row_keys: Vec<String>,
    pub col_labels: Vec<String>,
}

impl FactorModel {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.l)
    }

    /// `||A - W L||_F / ||A||_F`, zero for an all-zero `A`.
    pub fn relative_error(&self, a: &ActivityMatrix) -> f64 {
        let norm = super::frobenius_norm(&a.values);
        if norm == 0.0 {
            return 0.0;
        }
        super::frobenius_norm(&(&a.values - &self.reconstruction())) / norm
    }
}

impl Factors for FactorModel {
    fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    fn row_keys(&self) -> &[String] {
        &self.row_keys
    }
}

fn half_sq_error(a: &Array2<f64>, w: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let wl = w.dot(l);
    0.5 * Zip::from(a)
        .and(&wl)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// Lee-Seung multiplicative updates for the Frobenius objective.
pub fn nmf(a: &ActivityMatrix, cfg: &NmfConfig) -> Result<FactorModel> {
    let (n, m) = a.values.dim();
    if cfg.k == 0 || cfg.k > n.min(m) {
        return Err(Error::invalid(format!(
            "k must be in 1..={} for a {n}x{m} matrix, got {}",
            n.min(m),
            cfg.k
        )));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::invalid(format!("tol must be >= 0, got {}", cfg.tol)));
    }
    let k = cfg.k;
    let av = &a.values;

    let mut rng = crate::rng::stream(cfg.seed, "nmf-init");
    let scale = (av.mean().unwrap_or(0.0) / k as f64).sqrt();
    // uniform on (0, 1]
    let mut w = Array2::from_shape_simple_fn((n, k), || (1.0 - rng.random::<f64>()) * scale);
    let mut l = Array2::from_shape_simple_fn((k, m), || (1.0 - rng.random::<f64>()) * scale);

    let mut trace = vec![half_sq_error(av, &w, &l)];
    let mut iterations = 0;
    let mut converged = trace[0] == 0.0;
    while !converged && iterations < cfg.max_iter {
        // L <- L * (W^T A) / (W^T W L)
        let wt_a = w.t().dot(av);
        let wt_w_l = w.t().dot(&w).dot(&l);
        Zip::from(&mut l)
            .and(&wt_a)
            .and(&wt_w_l)
            .for_each(|x, &num, &den| *x *= num / (den + EPS));

        // W <- W * (A L^T) / (W L L^T)
        let a_lt = av.dot(&l.t());
        let w_l_lt = w.dot(&l.dot(&l.t()));
        Zip::from(&mut w)
            .and(&a_lt)
            .and(&w_l_lt)
            .for_each(|x, &num, &den| *x *= num / (den + EPS));

        iterations += 1;
        let obj = half_sq_error(av, &w, &l);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if obj == 0.0 || (prev - obj) / prev < cfg.tol {
            converged = true;
        }
    }

    let (w, l) = canonical_order(w, l);
    Ok(FactorModel {
        w,
        l,
        k,
        objective_trace: trace,
        seed: cfg.seed,
        tol: cfg.tol,
        iterations,
        converged,
        row_keys: a.row_keys.clone(),
        col_labels: a.col_labels.clone(),
    })
}

/// Unit-sum rows of `L`, components sorted by descending `W` column norm
/// (ties keep the solver's order).
fn canonical_order(mut w: Array2<f64>, mut l: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    for (j, mut row) in l.axis_iter_mut(Axis(0)).enumerate() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
            w.column_mut(j).mapv_inplace(|x| x * s);
        }
    }
    let norms: Vec<f64> = w.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    (w.select(Axis(1), &order), l.select(Axis(0), &order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn matrix(values: Array2<f64>) -> ActivityMatrix {
        ActivityMatrix::from_values(values).unwrap()
    }

    #[test]
    fn zero_matrix_converges_immediately() {
        let a = matrix(Array2::zeros((4, 3)));
        let model = nmf(
            &a,
            &NmfConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.objective_trace, vec![0.0]);
        assert_eq!(model.iterations, 0);
        assert!(model.w.iter().chain(model.l.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn rank_one_is_exact() {
        // outer([1, 2], [3, 0, 1])
        let a = matrix(array![[3.0, 0.0, 1.0], [6.0, 0.0, 2.0]]);
        let cfg = NmfConfig {
            k: 1,
            tol: 0.0,
            max_iter: 2000,
            seed: 3,
        };
        let model = nmf(&a, &cfg).unwrap();
        assert!(
            model.relative_error(&a) <= 1e-6,
            "{}",
            model.relative_error(&a)
        );
        // L is a unit-sum profile proportional to [3, 0, 1]
        assert!((model.l[[0, 0]] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_rank() {
        let a = matrix(Array2::ones((3, 2)));
        for k in [0, 3] {
            assert!(nmf(
                &a,
                &NmfConfig {
                    k,
                    ..Default::default()
                }
            )
            .is_err());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = matrix(Array2::from_shape_fn((6, 5), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64
        }));
        let cfg = NmfConfig {
            k: 2,
            ..Default::default()
        };
        let m1 = nmf(&a, &cfg).unwrap();
        let m2 = nmf(&a, &cfg).unwrap();
        assert_eq!(m1, m2);
        let other = nmf(&a, &NmfConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(m1.w, other.w);
    }
}
