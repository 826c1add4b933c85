use ndarray::{s, Array2, ArrayView2, Axis};

use super::{LayerParams, LayerSpec, NnError};

fn shape_err(what: impl Into<String>) -> NnError {
    NnError::Shape(what.into())
}

/// Pre-activation output `x W^T + b` for a `(batch, fan_in)` input.
pub fn dense_forward(spec: &LayerSpec, params: &LayerParams, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
    let LayerSpec::Dense { fan_in, fan_out, .. } = *spec else {
        return Err(shape_err("dense_forward on a conv spec"));
    };
    if x.ncols() != fan_in || params.weights.dim() != (fan_out, fan_in) {
        return Err(shape_err(format!(
            "dense {fan_in}->{fan_out} got input width {}",
            x.ncols()
        )));
    }
    let mut y = x.dot(&params.weights.t());
    y += &params.bias;
    Ok(y)
}

/// Gradients of a dense layer given the upstream gradient of its
/// pre-activation output. Returns `(dx, dparams)`.
pub fn dense_backward(
    params: &LayerParams,
    x: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> Result<(Array2<f64>, LayerParams), NnError> {
    if dy.nrows() != x.nrows() || dy.ncols() != params.weights.nrows() {
        return Err(shape_err("dense_backward upstream gradient"));
    }
    let weights = dy.t().dot(&x);
    let bias = dy.sum_axis(Axis(0));
    let dx = dy.dot(&params.weights);
    Ok((dx, LayerParams { weights, bias }))
}

/// Im2col matrix kept from the forward pass of a convolution.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub cols: Array2<f64>,
}

fn im2col3(x: ArrayView2<f64>, side: usize) -> Array2<f64> {
    let (channels, n) = x.dim();
    let hw = side * side;
    let batch = n / hw;
    let mut cols = Array2::zeros((channels * 9, n));
    for c in 0..channels {
        let src_row = x.row(c);
        let src = src_row.as_slice().expect("contiguous input");
        for ky in 0..3 {
            for kx in 0..3 {
                let mut dst_row = cols.row_mut((c * 3 + ky) * 3 + kx);
                let dst = dst_row.as_slice_mut().expect("contiguous cols");
                let dx = kx as isize - 1;
                let (x0, x1) = (
                    (-dx).max(0) as usize,
                    (side as isize - dx.max(0)) as usize,
                );
                for b in 0..batch {
                    let base = b * hw;
                    for y in 0..side {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= side as isize {
                            continue;
                        }
                        let drow = base + y * side;
                        let srow = base + sy as usize * side;
                        let sx0 = (x0 as isize + dx) as usize;
                        let len = x1 - x0;
                        dst[drow + x0..drow + x0 + len].copy_from_slice(&src[srow + sx0..srow + sx0 + len]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im3(dcols: ArrayView2<f64>, channels: usize, side: usize) -> Array2<f64> {
    let n = dcols.ncols();
    let hw = side * side;
    let batch = n / hw;
    let mut dx = Array2::zeros((channels, n));
    for c in 0..channels {
        let mut dst_row = dx.row_mut(c);
        let dst = dst_row.as_slice_mut().expect("contiguous output");
        for ky in 0..3 {
            for kx in 0..3 {
                let src_row = dcols.row((c * 3 + ky) * 3 + kx);
                let src = src_row.as_slice().expect("contiguous cols");
                let dxo = kx as isize - 1;
                let (x0, x1) = (
                    (-dxo).max(0) as usize,
                    (side as isize - dxo.max(0)) as usize,
                );
                for b in 0..batch {
                    let base = b * hw;
                    for y in 0..side {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= side as isize {
                            continue;
                        }
                        let srow = base + y * side;
                        let drow = base + sy as usize * side;
                        let dx0 = (x0 as isize + dxo) as usize;
                        for i in 0..x1 - x0 {
                            dst[drow + dx0 + i] += src[srow + x0 + i];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Same-padded cross-correlation with a per-output-channel bias.
///
/// `x` is `(in_channels, batch * side * side)`; the result is the
/// pre-activation `(out_channels, batch * side * side)`.
pub fn conv2d_same_forward(
    spec: &LayerSpec,
    params: &LayerParams,
    x: ArrayView2<f64>,
    side: usize,
) -> Result<(Array2<f64>, ConvCache), NnError> {
    let LayerSpec::Conv {
        kernel,
        in_channels,
        out_channels,
        ..
    } = *spec
    else {
        return Err(shape_err("conv forward on a dense spec"));
    };
    if x.nrows() != in_channels || side == 0 || !x.ncols().is_multiple_of(side * side) {
        return Err(shape_err(format!(
            "conv expects {in_channels} channels of {side}x{side} rasters, got {:?}",
            x.dim()
        )));
    }
    if params.weights.dim() != spec.weight_shape() || params.bias.len() != out_channels {
        return Err(shape_err("conv parameters"));
    }
    let cols = match kernel {
        1 => x.as_standard_layout().into_owned(),
        3 => im2col3(x.as_standard_layout().view(), side),
        k => return Err(NnError::InvalidSpec(format!("kernel {k}"))),
    };
    let mut y = params.weights.dot(&cols);
    y += &params.bias.view().insert_axis(Axis(1));
    Ok((y, ConvCache { cols }))
}

/// Returns `(dx, dparams)` from the upstream gradient of the pre-activation.
pub fn conv2d_same_backward(
    spec: &LayerSpec,
    params: &LayerParams,
    cache: &ConvCache,
    dy: ArrayView2<f64>,
    side: usize,
) -> Result<(Array2<f64>, LayerParams), NnError> {
    let LayerSpec::Conv {
        kernel,
        in_channels,
        out_channels,
        ..
    } = *spec
    else {
        return Err(shape_err("conv backward on a dense spec"));
    };
    if dy.nrows() != out_channels || dy.ncols() != cache.cols.ncols() {
        return Err(shape_err("conv upstream gradient"));
    }
    let weights = dy.dot(&cache.cols.t());
    let bias = dy.sum_axis(Axis(1));
    let dcols = params.weights.t().dot(&dy);
    let dx = if kernel == 1 {
        dcols
    } else {
        col2im3(dcols.view(), in_channels, side)
    };
    Ok((dx, LayerParams { weights, bias }))
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Passes `dy` where the pre-activation was strictly positive.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    ndarray::Zip::from(&mut out)
        .and(pre)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
    out
}

/// Reshapes dense `(batch, channels * hw)` output into convolution layout
/// `(channels, batch * hw)`.
pub fn dense_to_grid(x: ArrayView2<f64>, channels: usize, hw: usize) -> Array2<f64> {
    let batch = x.nrows();
    let mut out = Array2::zeros((channels, batch * hw));
    for b in 0..batch {
        for c in 0..channels {
            out.slice_mut(s![c, b * hw..(b + 1) * hw])
                .assign(&x.slice(s![b, c * hw..(c + 1) * hw]));
        }
    }
    out
}

/// Inverse of [`dense_to_grid`].
pub fn grid_to_dense(x: ArrayView2<f64>, hw: usize) -> Array2<f64> {
    let channels = x.nrows();
    let batch = x.ncols() / hw;
    let mut out = Array2::zeros((batch, channels * hw));
    for b in 0..batch {
        for c in 0..channels {
            out.slice_mut(s![b, c * hw..(c + 1) * hw])
                .assign(&x.slice(s![c, b * hw..(b + 1) * hw]));
        }
    }
    out
}
