use super::Tensor;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolWindow {
    /// Square window without padding.
    Window { size: usize, stride: usize },
    /// Output of the given size; windows cover the input as evenly as possible.
    Adaptive { height: usize, width: usize },
}

fn ranges(window: PoolWindow, n: usize, axis_out: impl Fn(PoolWindow) -> usize) -> Result<Vec<(usize, usize)>> {
    match window {
        PoolWindow::Window { size, stride } => {
            if size == 0 || stride == 0 {
                return Err(dim_err!("pool2d: window size and stride must be positive"));
            }
            if size > n {
                return Err(dim_err!("pool2d: window {size} larger than input extent {n}"));
            }
            Ok((0..(n - size) / stride + 1).map(|o| (o * stride, o * stride + size)).collect())
        }
        PoolWindow::Adaptive { .. } => {
            let out = axis_out(window);
            if out == 0 || out > n {
                return Err(dim_err!("pool2d: adaptive output {out} must be in 1..={n}"));
            }
            Ok((0..out).map(|o| (o * n / out, ((o + 1) * n).div_ceil(out))).collect())
        }
    }
}

/// Windowed max or mean over the two trailing axes. Max routes gradient to
/// the first maximal element in row-major order; mean spreads it uniformly.
pub fn pool2d<T: Scalar>(x: &Tensor<T>, mode: PoolMode, window: PoolWindow) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("pool2d")?;
    let rows = ranges(window, h, |w| match w {
        PoolWindow::Adaptive { height, .. } => height,
        _ => unreachable!(),
    })?;
    let cols = ranges(window, w, |w| match w {
        PoolWindow::Adaptive { width, .. } => width,
        _ => unreachable!(),
    })?;
    let (ho, wo) = (rows.len(), cols.len());
    let planes = b * c;
    let mut out = vec![T::zero(); planes * ho * wo];
    // For max: the argmax input offset of each output.
    let mut arg = vec![0usize; if mode == PoolMode::Max { out.len() } else { 0 }];
    {
        let xd = x.data();
        for p in 0..planes {
            let xi = &xd[p * h * w..][..h * w];
            for (oy, &(y0, y1)) in rows.iter().enumerate() {
                for (ox, &(x0, x1)) in cols.iter().enumerate() {
                    let o = (p * ho + oy) * wo + ox;
                    match mode {
                        PoolMode::Max => {
                            let mut best = y0 * w + x0;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    if xi[y * w + xx] > xi[best] {
                                        best = y * w + xx;
                                    }
                                }
                            }
                            out[o] = xi[best];
                            arg[o] = p * h * w + best;
                        }
                        PoolMode::Avg => {
                            let mut acc = T::zero();
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    acc += xi[y * w + xx];
                                }
                            }
                            out[o] = acc / T::c(((y1 - y0) * (x1 - x0)) as f64);
                        }
                    }
                }
            }
        }
    }
    let n = x.numel();
    Ok(Tensor::from_op(vec![b, c, ho, wo], out, &[x], move || {
        Box::new(move |g: &[T]| {
            let mut gi = vec![T::zero(); n];
            match mode {
                PoolMode::Max => {
                    for (&a, &gv) in arg.iter().zip(g) {
                        gi[a] += gv;
                    }
                }
                PoolMode::Avg => {
                    for p in 0..planes {
                        for (oy, &(y0, y1)) in rows.iter().enumerate() {
                            for (ox, &(x0, x1)) in cols.iter().enumerate() {
                                let share = g[(p * ho + oy) * wo + ox] / T::c(((y1 - y0) * (x1 - x0)) as f64);
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        gi[p * h * w + y * w + xx] += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gi)]
        })
    }))
}
