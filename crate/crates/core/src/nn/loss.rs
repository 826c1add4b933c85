use ndarray::{Array2, ArrayView2};

use super::NnError;
use crate::grid::{Grid, GridDistribution};

fn check_layout(x: &ArrayView2<f64>, hw: usize) -> Result<usize, NnError> {
    if hw == 0 || !x.ncols().is_multiple_of(hw) {
        return Err(NnError::Shape(format!(
            "{} columns is not a whole number of {hw}-cell grids",
            x.ncols()
        )));
    }
    Ok(x.ncols() / hw)
}

fn softmax_in_place(chunk: &mut [f64]) {
    let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in chunk.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    chunk.iter_mut().for_each(|v| *v *= inv);
}

/// Softmax over every `hw`-cell chunk of every row of a
/// `(horizons, batch * hw)` logit matrix.
pub fn softmax_chunks(logits: ArrayView2<f64>, hw: usize) -> Result<Array2<f64>, NnError> {
    check_layout(&logits, hw)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("logits"));
    }
    let mut out = logits.as_standard_layout().into_owned();
    for chunk in out
        .as_slice_mut()
        .expect("standard layout")
        .chunks_mut(hw)
    {
        softmax_in_place(chunk);
    }
    Ok(out)
}

/// Per-horizon softmax of a single sample's `(horizons, side * side)` logits.
pub fn softmax_grid(grid: &Grid, logits: ArrayView2<f64>) -> Result<Vec<GridDistribution>, NnError> {
    if logits.ncols() != grid.len() {
        return Err(NnError::Shape(format!(
            "logit rows have {} cells, grid has {}",
            logits.ncols(),
            grid.len()
        )));
    }
    let probs = softmax_chunks(logits, grid.len())?;
    probs
        .rows()
        .into_iter()
        .map(|row| {
            GridDistribution::new(*grid, row.to_vec()).map_err(|e| NnError::Shape(e.to_string()))
        })
        .collect()
}

/// Mean cross entropy `-(1/T)(1/N) sum p ln q` between target and forecast
/// rasters laid out as `(horizons, batch * hw)`. Cells with zero target
/// mass contribute nothing.
pub fn cross_entropy_grids(forecast: ArrayView2<f64>, target: ArrayView2<f64>, hw: usize) -> Result<f64, NnError> {
    let batch = check_layout(&forecast, hw)?;
    if forecast.dim() != target.dim() {
        return Err(NnError::Shape("forecast/target shapes differ".into()));
    }
    let mut total = 0.0;
    for (q, p) in forecast.iter().zip(target.iter()) {
        if *p > 0.0 {
            total -= p * q.ln();
        }
    }
    Ok(total / (forecast.nrows() * batch) as f64)
}

/// Fused softmax and cross entropy on logits. Returns the loss, the
/// forecast probabilities, and the logit gradient `(q * sum(p) - p) / (T N)`.
pub fn softmax_cross_entropy(
    logits: ArrayView2<f64>,
    target: ArrayView2<f64>,
    hw: usize,
) -> Result<(f64, Array2<f64>, Array2<f64>), NnError> {
    let batch = check_layout(&logits, hw)?;
    if logits.dim() != target.dim() {
        return Err(NnError::Shape("logit/target shapes differ".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("logits"));
    }
    let norm = 1.0 / (logits.nrows() * batch) as f64;
    let z = logits.as_standard_layout().into_owned();
    let p = target.as_standard_layout().into_owned();
    let mut q = z.clone();
    let mut grad = Array2::zeros(z.dim());
    let mut loss = 0.0;
    let zs = z.as_slice().expect("standard layout");
    let ps = p.as_slice().expect("standard layout");
    let qs = q.as_slice_mut().expect("standard layout");
    let gs = grad.as_slice_mut().expect("standard layout");
    for (((zc, pc), qc), gc) in zs
        .chunks(hw)
        .zip(ps.chunks(hw))
        .zip(qs.chunks_mut(hw))
        .zip(gs.chunks_mut(hw))
    {
        let max = zc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = zc.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let mass: f64 = pc.iter().sum();
        for i in 0..hw {
            let log_q = zc[i] - log_norm;
            qc[i] = log_q.exp();
            if pc[i] > 0.0 {
                loss -= pc[i] * log_q;
            }
            gc[i] = (qc[i] * mass - pc[i]) * norm;
        }
    }
    Ok((loss * norm, q, grad))
}
