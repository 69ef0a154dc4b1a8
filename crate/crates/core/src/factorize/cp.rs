use std::str::FromStr;

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{leading_left_singular_vectors, pinv_psd};
use super::matrix::Factors;
use super::tensor::{
    as_user_time_rows, contract_user_time, khatri_rao, mode_unfold, ActivityTensor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpInit {
    Random,
    #[default]
    SingularVector,
}

impl FromStr for CpInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CpInit::Random),
            "svd" | "singular_vector" | "nvecs" => Ok(CpInit::SingularVector),
            other => Err(Error::invalid(format!("unknown CP init {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpConfig {
    pub k: usize,
    /// Stop once the error improvement between sweeps drops below this.
    pub tol: f64,
    /// Compare the improvement relative to the previous error instead.
    pub relative_tol: bool,
    pub max_iter: usize,
    pub init: CpInit,
    pub seed: u64,
}

impl Default for CpConfig {
    fn default() -> Self {
        CpConfig {
            k: 12,
            tol: 1e-5,
            relative_tol: false,
            max_iter: 500,
            init: CpInit::SingularVector,
            seed: 42,
        }
    }
}

/// `T ≈ Σ_j W[:, j] ∘ L_M[j, :] ∘ L_P[j, :]`. Rows of `L_M` and `L_P` have
/// unit norm with the scale carried by `W`; components are ordered by
/// descending `W` column norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFactorModel {
    pub w: Array2<f64>,
    pub l_m: Array2<f64>,
    pub l_p: Array2<f64>,
    pub k: usize,
    /// `||T - T_hat||_F` at initialisation and after every sweep.
    pub fit_trace: Vec<f64>,
    pub tensor_norm: f64,
    pub seed: u64,
    pub init: CpInit,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub users: Vec<String>,
    pub times: Vec<String>,
    pub categories: Vec<String>,
}

impl TensorFactorModel {
    pub fn final_error(&self) -> f64 {
        *self.fit_trace.last().unwrap_or(&0.0)
    }

    pub fn relative_error(&self) -> f64 {
        if self.tensor_norm == 0.0 {
            0.0
        } else {
            self.final_error() / self.tensor_norm
        }
    }

    /// `1 - ||T - T_hat||_F / ||T||_F`.
    pub fn fit(&self) -> f64 {
        1.0 - self.relative_error()
    }
}

impl Factors for TensorFactorModel {
    fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    fn row_keys(&self) -> &[String] {
        &self.users
    }
}

/// Factors kept in column form: each is `dim x k`.
struct Columns {
    w: Array2<f64>,
    m: Array2<f64>,
    p: Array2<f64>,
}

fn gram(a: &Array2<f64>) -> Array2<f64> {
    a.t().dot(a)
}

/// `||T - T_hat||_F`, accumulated over blocks of users.
fn residual_norm(tensor: &ArrayTensorRef<'_>, f: &Columns) -> Result<f64> {
    let (n, m, _) = tensor.dim;
    let rows = tensor.rows;
    const BLOCK: usize = 512;
    let lp_t = f.p.t();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let kr = khatri_rao(f.w.slice(s![start..end, ..]), f.m.view())?;
        let approx = kr.dot(&lp_t);
        let block = rows.slice(s![start * m..end * m, ..]);
        total += Zip::from(&block)
            .and(&approx)
            .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y));
        start = end;
    }
    Ok(total.sqrt())
}

struct ArrayTensorRef<'a> {
    rows: ndarray::ArrayView2<'a, f64>,
    dim: (usize, usize, usize),
}

/// CP decomposition by alternating least squares. Each sweep solves, in
/// order, for `L_P` given `W` and `L_M`, for `W` given `L_M` and `L_P`, and
/// for `L_M` given `W` and `L_P`, through the Khatri-Rao normal equations.
/// The factors are unconstrained.
pub fn cp_als(t: &ActivityTensor, cfg: &CpConfig) -> Result<TensorFactorModel> {
    let (n, m, p) = t.dim();
    let max_k = n.min(m).min(p);
    if cfg.k < 2 || cfg.k > max_k {
        return Err(Error::invalid(format!(
            "k must be in 2..={max_k} for a {n}x{m}x{p} tensor, got {}",
            cfg.k
        )));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::invalid(format!("tol must be >= 0, got {}", cfg.tol)));
    }
    let k = cfg.k;
    let values = t.values.as_standard_layout();
    let tensor = ArrayTensorRef {
        rows: as_user_time_rows(values.view()),
        dim: (n, m, p),
    };
    let tensor_norm = super::frobenius_norm(&values);

    let model = |f: Columns, trace: Vec<f64>, iterations: usize, converged: bool| {
        let (w, l_m, l_p) = canonical_order(f);
        TensorFactorModel {
            w,
            l_m,
            l_p,
            k,
            fit_trace: trace,
            tensor_norm,
            seed: cfg.seed,
            init: cfg.init,
            tol: cfg.tol,
            iterations,
            converged,
            users: t.users.clone(),
            times: t.times.clone(),
            categories: t.categories.clone(),
        }
    };

    if tensor_norm == 0.0 {
        let f = Columns {
            w: Array2::zeros((n, k)),
            m: Array2::zeros((m, k)),
            p: Array2::zeros((p, k)),
        };
        return Ok(model(f, vec![0.0], 0, true));
    }

    let mut f = initialise(&values.view(), cfg)?;
    let mut trace = vec![residual_norm(&tensor, &f)?];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        // L_P: X_(2) (W ⊙ L_M) (W^T W * L_M^T L_M)^+
        let kr_wm = khatri_rao(f.w.view(), f.m.view())?;
        let mttkrp = tensor.rows.t().dot(&kr_wm);
        f.p = mttkrp.dot(&pinv_psd(&(gram(&f.w) * gram(&f.m))));

        // W: X_(0) (L_M ⊙ L_P) (...)^+; T L_P is shared with the L_M step.
        let rows_p = tensor.rows.dot(&f.p);
        let mttkrp = contract_user_time(&rows_p, n, m, &f.m, false);
        f.w = mttkrp.dot(&pinv_psd(&(gram(&f.m) * gram(&f.p))));

        // L_M: X_(1) (W ⊙ L_P) (...)^+
        let mttkrp = contract_user_time(&rows_p, n, m, &f.w, true);
        f.m = mttkrp.dot(&pinv_psd(&(gram(&f.w) * gram(&f.p))));

        iterations += 1;
        let err = residual_norm(&tensor, &f)?;
        let prev = *trace.last().unwrap();
        trace.push(err);
        let improvement = prev - err;
        let improvement = if cfg.relative_tol && prev > 0.0 {
            improvement / prev
        } else {
            improvement
        };
        if err == 0.0 || improvement < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(model(f, trace, iterations, converged))
}

fn initialise(values: &ndarray::ArrayView3<'_, f64>, cfg: &CpConfig) -> Result<Columns> {
    let (n, m, p) = values.dim();
    let k = cfg.k;
    match cfg.init {
        CpInit::Random => {
            let mut rng = crate::rng::stream(cfg.seed, "cp-init");
            let mut draw =
                |rows: usize| Array2::from_shape_simple_fn((rows, k), || rng.random::<f64>());
            let w = draw(n);
            let mm = draw(m);
            let pp = draw(p);
            Ok(Columns { w, m: mm, p: pp })
        }
        CpInit::SingularVector => {
            let mut f = [
                Array2::zeros((0, 0)),
                Array2::zeros((0, 0)),
                Array2::zeros((0, 0)),
            ];
            for (mode, slot) in f.iter_mut().enumerate() {
                let unfolded = mode_unfold(values, mode)?;
                *slot = leading_left_singular_vectors(unfolded.view(), k).mapv(f64::abs);
            }
            let [w, mm, pp] = f;
            Ok(Columns { w, m: mm, p: pp })
        }
    }
}

/// Unit-norm `L_M`/`L_P` rows with non-negative sums, scale and sign moved
/// into `W`, components sorted by descending `W` column norm.
fn canonical_order(f: Columns) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let Columns { mut w, m, p } = f;
    let mut l_m = m.reversed_axes().as_standard_layout().to_owned();
    let mut l_p = p.reversed_axes().as_standard_layout().to_owned();
    for j in 0..w.ncols() {
        for l in [&mut l_m, &mut l_p] {
            let mut row = l.row_mut(j);
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                let sign = if row.sum() < 0.0 { -1.0 } else { 1.0 };
                row.mapv_inplace(|x| x * sign / norm);
                w.column_mut(j).mapv_inplace(|x| x * sign * norm);
            }
        }
    }
    let norms: Vec<f64> = w.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    (
        w.select(Axis(1), &order),
        l_m.select(Axis(0), &order),
        l_p.select(Axis(0), &order),
    )
}
