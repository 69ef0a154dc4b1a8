use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{s, Array2, Array3, ArrayBase, ArrayView2, ArrayView3, Axis, Data, Ix3};

use crate::error::{Error, Result};

/// User x time x category tensor of check-in counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityTensor {
    pub values: Array3<f64>,
    pub users: Vec<String>,
    /// Hour-of-day or day-of-week labels.
    pub times: Vec<String>,
    pub categories: Vec<String>,
    /// Users with fewer check-ins than this were dropped when building.
    pub prune_h: Option<usize>,
}

impl ActivityTensor {
    pub fn new(
        values: Array3<f64>,
        users: Vec<String>,
        times: Vec<String>,
        categories: Vec<String>,
    ) -> Result<Self> {
        let (n, m, p) = values.dim();
        if users.len() != n || times.len() != m || categories.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "tensor is {n}x{m}x{p} but labels are {}x{}x{}",
                users.len(),
                times.len(),
                categories.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "tensor entries must be finite and >= 0, found {v}"
            )));
        }
        Ok(ActivityTensor {
            values,
            users,
            times,
            categories,
            prune_h: None,
        })
    }

    pub fn from_values(values: Array3<f64>) -> Result<Self> {
        let (n, m, p) = values.dim();
        ActivityTensor::new(
            values,
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..m).map(|i| format!("t{i}")).collect(),
            (0..p).map(|i| format!("c{i}")).collect(),
        )
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Sparse long-format CSV `user_id,time,category,count`. Labels are
    /// indexed in order of first appearance; repeated cells accumulate.
    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(source);
        let mut users = Labels::default();
        let mut times = Labels::default();
        let mut cats = Labels::default();
        let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 4 {
                return Err(Error::Malformed(format!("line {line}: expected 4 fields")));
            }
            let count: f64 = rec[3].trim().parse().map_err(|_| {
                Error::Malformed(format!("line {line}: count {:?} is not a number", &rec[3]))
            })?;
            cells.push((
                users.index(&rec[0]),
                times.index(&rec[1]),
                cats.index(&rec[2]),
                count,
            ));
        }
        let mut values = Array3::zeros((users.names.len(), times.names.len(), cats.names.len()));
        for (u, t, c, v) in cells {
            values[[u, t, c]] += v;
        }
        ActivityTensor::new(values, users.names, times.names, cats.names)
    }

    /// Writes the non-zero cells in long format.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["user_id", "time", "category", "count"])?;
        for ((n, m, p), v) in self.values.indexed_iter() {
            if *v != 0.0 {
                w.write_record([
                    self.users[n].as_str(),
                    self.times[m].as_str(),
                    self.categories[p].as_str(),
                    &v.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct Labels {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Labels {
    fn index(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

/// Column-wise Kronecker product: for `a` (I x K) and `b` (J x K), row
/// `i * J + j` of the result is `a[i, :] * b[j, :]`.
pub fn khatri_rao(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (i_rows, j_rows) = (a.nrows(), b.nrows());
    let mut out = Array2::zeros((i_rows * j_rows, a.ncols()));
    for i in 0..i_rows {
        let ai = a.row(i);
        let mut block = out.slice_mut(s![i * j_rows..(i + 1) * j_rows, ..]);
        for (mut orow, brow) in block.rows_mut().into_iter().zip(b.rows()) {
            ndarray::Zip::from(&mut orow)
                .and(&ai)
                .and(&brow)
                .for_each(|o, &x, &y| *o = x * y);
        }
    }
    Ok(out)
}

/// Mode-n matricisation of an `N x M x P` tensor, ordered so that a tensor
/// built from factors `W` (N x k), `L_M` (k x M), `L_P` (k x P) satisfies
///
/// * mode 0: `N x MP`, column `m * P + p`, equals `W (L_M^T ⊙ L_P^T)^T`
/// * mode 1: `M x NP`, column `n * P + p`, equals `L_M^T (W ⊙ L_P^T)^T`
/// * mode 2: `P x NM`, column `n * M + m`, equals `L_P^T (W ⊙ L_M^T)^T`
pub fn mode_unfold<S>(t: &ArrayBase<S, Ix3>, mode: usize) -> Result<Array2<f64>>
where
    S: Data<Elem = f64>,
{
    let (n, m, p) = t.dim();
    match mode {
        0 => Ok(t.to_shape((n, m * p)).map_err(shape_err)?.to_owned()),
        1 => {
            let moved = t.view().permuted_axes([1, 0, 2]);
            Ok(moved
                .as_standard_layout()
                .to_shape((m, n * p))
                .map_err(shape_err)?
                .to_owned())
        }
        2 => {
            let moved = t.view().permuted_axes([2, 0, 1]);
            Ok(moved
                .as_standard_layout()
                .to_shape((p, n * m))
                .map_err(shape_err)?
                .to_owned())
        }
        other => Err(Error::invalid(format!(
            "mode must be 0, 1 or 2, got {other}"
        ))),
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::DimensionMismatch(e.to_string())
}

/// Dense `sum_j W[:, j] ∘ L_M[j, :] ∘ L_P[j, :]`.
pub fn reconstruct(w: &Array2<f64>, l_m: &Array2<f64>, l_p: &Array2<f64>) -> Result<Array3<f64>> {
    let k = w.ncols();
    if l_m.nrows() != k || l_p.nrows() != k {
        return Err(Error::DimensionMismatch(format!(
            "factor ranks differ: {k}, {}, {}",
            l_m.nrows(),
            l_p.nrows()
        )));
    }
    let (n, m, p) = (w.nrows(), l_m.ncols(), l_p.ncols());
    let kr = khatri_rao(w.view(), l_m.t())?;
    let flat = kr.dot(l_p);
    flat.into_shape_with_order((n, m, p)).map_err(shape_err)
}

/// `T` viewed as an `(N*M) x P` matrix.
pub(crate) fn as_user_time_rows<'a>(t: ArrayView3<'a, f64>) -> ArrayView2<'a, f64> {
    let (n, m, p) = t.dim();
    t.into_shape_with_order((n * m, p))
        .expect("standard layout tensor")
}

/// Sums `rows[(n*M + m), j] * f[m or n, j]` over the collapsed axis:
/// `collapse_first` sums over `n` (giving M x k), otherwise over `m`
/// (giving N x k).
pub(crate) fn contract_user_time(
    rows: &Array2<f64>,
    n: usize,
    m: usize,
    factor: &Array2<f64>,
    collapse_first: bool,
) -> Array2<f64> {
    let k = rows.ncols();
    let cube = rows
        .view()
        .into_shape_with_order((n, m, k))
        .expect("contiguous");
    if collapse_first {
        // out[m, j] = sum_n cube[n, m, j] * factor[n, j]
        let mut out = Array2::zeros((m, k));
        for (ni, slab) in cube.axis_iter(Axis(0)).enumerate() {
            let f = factor.row(ni);
            for (mut o, r) in out.rows_mut().into_iter().zip(slab.rows()) {
                ndarray::Zip::from(&mut o)
                    .and(&r)
                    .and(&f)
                    .for_each(|o, &x, &y| *o += x * y);
            }
        }
        out
    } else {
        // out[n, j] = sum_m cube[n, m, j] * factor[m, j]
        let mut out = Array2::zeros((n, k));
        for (ni, slab) in cube.axis_iter(Axis(0)).enumerate() {
            let mut o = out.row_mut(ni);
            for (r, f) in slab.rows().into_iter().zip(factor.rows()) {
                ndarray::Zip::from(&mut o)
                    .and(&r)
                    .and(&f)
                    .for_each(|o, &x, &y| *o += x * y);
            }
        }
        out
    }
}
