use super::Tensor;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Scalar;

/// Interpolation taps along one axis: (low index, high index, high weight).
fn taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<(usize, usize, T)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, T::c(src - i0 as f64))
        })
        .collect()
}

/// Bilinear resize of the two trailing axes with half-pixel centers
/// (align-corners off) and edge clamping.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(dim_err!("bilinear_resize: output size {out_h}x{out_w} must be positive"));
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let planes = b * c;
    let mut out = vec![T::zero(); planes * out_h * out_w];
    {
        let xd = x.data();
        for p in 0..planes {
            let xi = &xd[p * h * w..][..h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = xi[y0 * w + x0] * (T::one() - fx) + xi[y0 * w + x1] * fx;
                    let bot = xi[y1 * w + x0] * (T::one() - fx) + xi[y1 * w + x1] * fx;
                    out[(p * out_h + oy) * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
    }
    let n = x.numel();
    Ok(Tensor::from_op(vec![b, c, out_h, out_w], out, &[x], move || {
        Box::new(move |g: &[T]| {
            let mut gi = vec![T::zero(); n];
            for p in 0..planes {
                let gp = &mut gi[p * h * w..][..h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = g[(p * out_h + oy) * out_w + ox];
                        let (gt, gb) = (gv * (T::one() - fy), gv * fy);
                        gp[y0 * w + x0] += gt * (T::one() - fx);
                        gp[y0 * w + x1] += gt * fx;
                        gp[y1 * w + x0] += gb * (T::one() - fx);
                        gp[y1 * w + x1] += gb * fx;
                    }
                }
            }
            vec![Some(gi)]
        })
    }))
}

/// Integer-factor bilinear upsampling; factor 1 is the identity.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(arg_err!("bilinear_upsample: factor must be at least 1, got {factor}"));
    }
    let [_, _, h, w] = x.dims4("bilinear_upsample")?;
    bilinear_resize(x, h * factor, w * factor)
}

/// Samples `src` (B×C×H×W) at pixel coordinates `u` (column) and `v` (row),
/// both B×1×Ho×Wo, by bilinear interpolation. Coordinates are clamped to the
/// image, so out-of-view samples repeat the border; the coordinate gradient
/// is zero where clamping is active.
pub fn sample_bilinear<T: Scalar>(src: &Tensor<T>, u: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = src.dims4("sample_bilinear source")?;
    let [bu, cu, ho, wo] = u.dims4("sample_bilinear u")?;
    if bu != b || cu != 1 || v.shape() != u.shape() {
        return Err(dim_err!(
            "sample_bilinear: coordinates must be {b}x1xHxW and equal, got u {:?} v {:?}",
            u.shape(),
            v.shape()
        ));
    }
    let npix = ho * wo;
    // Per output pixel: corner offsets, fractional parts and clamp flags.
    struct Tap<T> {
        i00: usize,
        i01: usize,
        i10: usize,
        i11: usize,
        fx: T,
        fy: T,
        free_x: bool,
        free_y: bool,
    }
    let mut table = Vec::with_capacity(b * npix);
    {
        let (ud, vd) = (u.data(), v.data());
        let (wmax, hmax) = (T::c((w - 1) as f64), T::c((h - 1) as f64));
        for i in 0..b * npix {
            let (uu, vv) = (ud[i], vd[i]);
            let free_x = uu >= T::zero() && uu <= wmax;
            let free_y = vv >= T::zero() && vv <= hmax;
            let uc = uu.max(T::zero()).min(wmax);
            let vc = vv.max(T::zero()).min(hmax);
            let x0 = uc.floor().to_usize().unwrap_or(0).min(w - 1);
            let y0 = vc.floor().to_usize().unwrap_or(0).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            table.push(Tap {
                i00: y0 * w + x0,
                i01: y0 * w + x1,
                i10: y1 * w + x0,
                i11: y1 * w + x1,
                fx: uc - T::c(x0 as f64),
                fy: vc - T::c(y0 as f64),
                free_x,
                free_y,
            });
        }
    }
    let mut out = vec![T::zero(); b * c * npix];
    {
        let sd = src.data();
        for bi in 0..b {
            for ch in 0..c {
                let plane = &sd[(bi * c + ch) * h * w..][..h * w];
                let o = &mut out[(bi * c + ch) * npix..][..npix];
                for (k, t) in table[bi * npix..][..npix].iter().enumerate() {
                    let top = plane[t.i00] + (plane[t.i01] - plane[t.i00]) * t.fx;
                    let bot = plane[t.i10] + (plane[t.i11] - plane[t.i10]) * t.fx;
                    o[k] = top + (bot - top) * t.fy;
                }
            }
        }
    }
    let (sc, uc, vc) = (src.clone(), u.clone(), v.clone());
    Ok(Tensor::from_op(vec![b, c, ho, wo], out, &[src, u, v], move || {
        Box::new(move |g: &[T]| {
            let sd = sc.data();
            let mut gs = sc.requires_grad().then(|| vec![T::zero(); sc.numel()]);
            let need_coords = uc.requires_grad() || vc.requires_grad();
            let mut gu = vec![T::zero(); if need_coords { b * npix } else { 0 }];
            let mut gv = vec![T::zero(); if need_coords { b * npix } else { 0 }];
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * h * w;
                    let plane = &sd[base..][..h * w];
                    let go = &g[(bi * c + ch) * npix..][..npix];
                    for (k, t) in table[bi * npix..][..npix].iter().enumerate() {
                        let gk = go[k];
                        if let Some(gs) = gs.as_mut() {
                            let (one_x, one_y) = (T::one() - t.fx, T::one() - t.fy);
                            gs[base + t.i00] += gk * one_x * one_y;
                            gs[base + t.i01] += gk * t.fx * one_y;
                            gs[base + t.i10] += gk * one_x * t.fy;
                            gs[base + t.i11] += gk * t.fx * t.fy;
                        }
                        if need_coords {
                            let (a, bb, cc, d) = (plane[t.i00], plane[t.i01], plane[t.i10], plane[t.i11]);
                            if t.free_x && t.i01 != t.i00 {
                                gu[bi * npix + k] += gk * ((bb - a) * (T::one() - t.fy) + (d - cc) * t.fy);
                            }
                            if t.free_y && t.i10 != t.i00 {
                                let top = a + (bb - a) * t.fx;
                                let bot = cc + (d - cc) * t.fx;
                                gv[bi * npix + k] += gk * (bot - top);
                            }
                        }
                    }
                }
            }
            vec![gs, need_coords.then_some(gu), need_coords.then_some(gv)]
        })
    }))
}
