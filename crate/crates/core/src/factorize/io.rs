//! Factor model directories: `W.csv`, `L.csv` (or `L_M.csv` and `L_P.csv`)
//! and `meta.json`.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cp::{CpInit, TensorFactorModel};
use super::matrix::write_labelled;
use super::nmf::FactorModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub k: usize,
    pub tol: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<CpInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<f64>,
    pub trace: Vec<f64>,
}

fn component_labels(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("component_{j}")).collect()
}

fn write_matrix(
    dir: &Path,
    name: &str,
    corner: &str,
    rows: &[String],
    cols: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_labelled(f, corner, rows, cols, values)
}

fn write_meta(dir: &Path, meta: &ModelMeta) -> Result<()> {
    let path = dir.join("meta.json");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}

pub fn write_factor_model(dir: &Path, model: &FactorModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let comps = component_labels(model.k);
    write_matrix(dir, "W.csv", "user_id", &model.row_keys, &comps, &model.w)?;
    write_matrix(
        dir,
        "L.csv",
        "component",
        &comps,
        &model.col_labels,
        &model.l,
    )?;
    write_meta(
        dir,
        &ModelMeta {
            kind: "nmf".into(),
            k: model.k,
            tol: model.tol,
            seed: model.seed,
            iterations: model.iterations,
            converged: model.converged,
            final_objective: model.final_objective(),
            init: None,
            fit: None,
            trace: model.objective_trace.clone(),
        },
    )
}

/// `minmax` additionally writes `L_M_minmax.csv` and `L_P_minmax.csv`.
pub fn write_tensor_model(dir: &Path, model: &TensorFactorModel, minmax: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let comps = component_labels(model.k);
    write_matrix(dir, "W.csv", "user_id", &model.users, &comps, &model.w)?;
    write_matrix(
        dir,
        "L_M.csv",
        "component",
        &comps,
        &model.times,
        &model.l_m,
    )?;
    write_matrix(
        dir,
        "L_P.csv",
        "component",
        &comps,
        &model.categories,
        &model.l_p,
    )?;
    if minmax {
        let nm = super::minmax_normalize(&model.l_m);
        let np = super::minmax_normalize(&model.l_p);
        write_matrix(
            dir,
            "L_M_minmax.csv",
            "component",
            &comps,
            &model.times,
            &nm,
        )?;
        write_matrix(
            dir,
            "L_P_minmax.csv",
            "component",
            &comps,
            &model.categories,
            &np,
        )?;
    }
    write_meta(
        dir,
        &ModelMeta {
            kind: "cp".into(),
            k: model.k,
            tol: model.tol,
            seed: model.seed,
            iterations: model.iterations,
            converged: model.converged,
            final_objective: model.final_error(),
            init: Some(model.init),
            fit: Some(model.fit()),
            trace: model.fit_trace.clone(),
        },
    )
}

pub fn read_meta(dir: &Path) -> Result<ModelMeta> {
    let path = dir.join("meta.json");
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_reader(f)?)
}
