use super::Tensor;
use crate::error::{dim_err, Result};
use crate::profile;
use crate::scalar::Scalar;

/// Geometry of a 2-D convolution. Zero padding on all four sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, dilation: 1, groups: 1, padding: 0 }
    }
}

impl Conv2dSpec {
    /// Stride 1, padding that keeps the spatial size for kernel `k` and `dilation`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Conv2dSpec { stride: 1, dilation, groups: 1, padding: (k - 1) * dilation / 2 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn output_size(&self, n: usize, k: usize) -> Option<usize> {
        let span = (k - 1) * self.dilation + 1;
        let padded = n + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    /// Output index range `o` with `0 <= o*stride + off - pad < n`.
    fn valid(&self, nout: usize, off: usize, n: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let shift = off as isize - self.spec.padding as isize;
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi = (n as isize - 1 - shift).div_euclid(s) + 1;
        let hi = hi.clamp(0, nout as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    /// Visits every (output run, input run) pair touched by tap (ky, kx):
    /// `f(out_offset, in_offset, len)` within one plane, input step = stride.
    fn for_each_run(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let d = self.spec.dilation;
        let p = self.spec.padding;
        let s = self.spec.stride;
        let (oy0, oy1) = self.valid(self.ho, ky * d, self.h);
        let (ox0, ox1) = self.valid(self.wo, kx * d, self.w);
        if ox1 <= ox0 {
            return;
        }
        let len = ox1 - ox0;
        for oy in oy0..oy1 {
            let iy = oy * s + ky * d - p;
            let ix = ox0 * s + kx * d - p;
            f(oy * self.wo + ox0, iy * self.w + ix, len);
        }
    }
}

/// Cross-correlation of `x` (B×Cin×H×W) with `w` (Cout×Cin/groups×k×k),
/// optional bias of length Cout.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let [b, cin, h, wd] = x.dims4("conv2d input")?;
    let [cout, cin_g, k, k2] = w.dims4("conv2d weight")?;
    if k != k2 {
        return Err(dim_err!("conv2d: kernel must be square, got {k}x{k2}"));
    }
    if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
        return Err(dim_err!("conv2d: stride, dilation and groups must be positive, got {spec:?}"));
    }
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(dim_err!(
            "conv2d: in-channels {cin} and out-channels {cout} must be divisible by groups {}",
            spec.groups
        ));
    }
    if cin_g != cin / spec.groups {
        return Err(dim_err!(
            "conv2d: weight axis 1 is {cin_g} but input channels {cin} / groups {} = {}",
            spec.groups,
            cin / spec.groups
        ));
    }
    if let Some(bias) = bias {
        if bias.numel() != cout {
            return Err(dim_err!("conv2d: bias has {} entries for {cout} output channels", bias.numel()));
        }
    }
    let (Some(ho), Some(wo)) = (spec.output_size(h, k), spec.output_size(wd, k)) else {
        return Err(dim_err!(
            "conv2d: effective kernel {} exceeds padded input {}x{}",
            (k - 1) * spec.dilation + 1,
            h + 2 * spec.padding,
            wd + 2 * spec.padding
        ));
    };
    let g = Geometry { b, cin, h, w: wd, cout, k, ho, wo, cin_g, cout_g: cout / spec.groups, spec };
    profile::record_macs((b * cout * ho * wo * cin_g * k * k) as u64);

    let mut out = vec![T::zero(); b * cout * ho * wo];
    {
        let xd = x.data();
        let wdata = w.data();
        let bd = bias.map(|t| t.data());
        forward(&g, &xd, &wdata, bd.as_deref().map(|v| v.as_slice()), &mut out);
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), bias.cloned());
    let mut inputs = vec![x, w];
    if let Some(bias) = bias {
        inputs.push(bias);
    }
    Ok(Tensor::from_op(vec![b, cout, ho, wo], out, &inputs, move || {
        Box::new(move |gout: &[T]| {
            let xd = xc.data();
            let wdata = wc.data();
            let gx = xc.requires_grad().then(|| grad_input(&g, &wdata, gout));
            let gw = wc.requires_grad().then(|| grad_weight(&g, &xd, gout));
            let mut grads = vec![gx, gw];
            if let Some(bc) = &bc {
                grads.push(bc.requires_grad().then(|| grad_bias(&g, gout)));
            }
            grads
        })
    }))
}

fn forward<T: Scalar>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    let s = g.spec.stride;
    for bi in 0..g.b {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let o = &mut out[(bi * g.cout + oc) * plane_out..][..plane_out];
            if let Some(bias) = bias {
                o.fill(bias[oc]);
            }
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let xi = &x[(bi * g.cin + ic) * plane_in..][..plane_in];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((oc * g.cin_g + icl) * g.k + ky) * g.k + kx];
                        g.for_each_run(ky, kx, |oo, io, len| {
                            let orow = &mut o[oo..oo + len];
                            if s == 1 {
                                for (ov, &iv) in orow.iter_mut().zip(&xi[io..io + len]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for (j, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xi[io + j * s];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

fn grad_input<T: Scalar>(g: &Geometry, w: &[T], gout: &[T]) -> Vec<T> {
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    let s = g.spec.stride;
    let mut gx = vec![T::zero(); g.b * g.cin * plane_in];
    for bi in 0..g.b {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let go = &gout[(bi * g.cout + oc) * plane_out..][..plane_out];
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let gi = &mut gx[(bi * g.cin + ic) * plane_in..][..plane_in];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((oc * g.cin_g + icl) * g.k + ky) * g.k + kx];
                        g.for_each_run(ky, kx, |oo, io, len| {
                            let grow = &go[oo..oo + len];
                            if s == 1 {
                                for (iv, &gv) in gi[io..io + len].iter_mut().zip(grow) {
                                    *iv += wv * gv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    gi[io + j * s] += wv * gv;
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    gx
}

fn grad_weight<T: Scalar>(g: &Geometry, x: &[T], gout: &[T]) -> Vec<T> {
    let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
    let s = g.spec.stride;
    let mut gw = vec![T::zero(); g.cout * g.cin_g * g.k * g.k];
    for bi in 0..g.b {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let go = &gout[(bi * g.cout + oc) * plane_out..][..plane_out];
            for icl in 0..g.cin_g {
                let ic = grp * g.cin_g + icl;
                let xi = &x[(bi * g.cin + ic) * plane_in..][..plane_in];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let mut acc = T::zero();
                        g.for_each_run(ky, kx, |oo, io, len| {
                            let grow = &go[oo..oo + len];
                            if s == 1 {
                                for (&gv, &iv) in grow.iter().zip(&xi[io..io + len]) {
                                    acc += gv * iv;
                                }
                            } else {
                                for (j, &gv) in grow.iter().enumerate() {
                                    acc += gv * xi[io + j * s];
                                }
                            }
                        });
                        gw[((oc * g.cin_g + icl) * g.k + ky) * g.k + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

fn grad_bias<T: Scalar>(g: &Geometry, gout: &[T]) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let mut gb = vec![T::zero(); g.cout];
    for bi in 0..g.b {
        for (oc, acc) in gb.iter_mut().enumerate() {
            *acc += gout[(bi * g.cout + oc) * plane_out..][..plane_out].iter().copied().sum::<T>();
        }
    }
    gb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    /// Direct summation over the definition, independent of the run logic.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Vec<f64> {
        let [b, cin, h, wd] = x.dims4("x").unwrap();
        let [cout, cin_g, k, _] = w.dims4("w").unwrap();
        let ho = spec.output_size(h, k).unwrap();
        let wo = spec.output_size(wd, k).unwrap();
        let (xd, wdat) = (x.data(), w.data());
        let cout_g = cout / spec.groups;
        let mut out = vec![0.0; b * cout * ho * wo];
        for bi in 0..b {
            for oc in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for icl in 0..cin_g {
                            let ic = (oc / cout_g) * cin_g + icl;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += wdat[((oc * cin_g + icl) * k + ky) * k + kx]
                                        * xd[((bi * cin + ic) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((bi * cout + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_on_ones() {
        let y = conv2d(&t(&[1, 1, 3, 3], vec![1.0; 9]), &t(&[1, 1, 3, 3], vec![1.0; 9]), None, Conv2dSpec::default()).unwrap();
        assert_eq!(y.to_vec(), vec![9.0]);
    }

    #[test]
    fn dilated_impulse_spreads_kernel() {
        let mut x = vec![0.0; 25];
        x[12] = 1.0;
        let kernel: Vec<f64> = (1..=9).map(f64::from).collect();
        let spec = Conv2dSpec { dilation: 2, padding: 2, ..Default::default() };
        let y = conv2d(&t(&[1, 1, 5, 5], x), &t(&[1, 1, 3, 3], kernel.clone()), None, spec).unwrap();
        let y = y.to_vec();
        // Cross-correlation flips the kernel around the impulse.
        let mut expect = vec![0.0; 25];
        for ky in 0..3 {
            for kx in 0..3 {
                let (oy, ox) = (2 + 2 - 2 * ky, 2 + 2 - 2 * kx);
                expect[oy * 5 + ox] = kernel[ky * 3 + kx];
            }
        }
        assert_eq!(y, expect);
    }

    #[test]
    fn depthwise_unit_kernel_is_identity() {
        let xv: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = t(&[2, 3, 4, 5], xv.clone());
        let w = t(&[3, 1, 1, 1], vec![1.0; 3]);
        let y = conv2d(&x, &w, None, Conv2dSpec::default().with_groups(3)).unwrap();
        assert_eq!(y.to_vec(), xv);
    }

    #[test]
    fn matches_naive_for_assorted_geometry() {
        let specs = [
            (Conv2dSpec { stride: 2, dilation: 1, groups: 1, padding: 1 }, 4, 6, 3),
            (Conv2dSpec { stride: 1, dilation: 3, groups: 2, padding: 3 }, 4, 4, 3),
            (Conv2dSpec { stride: 3, dilation: 2, groups: 4, padding: 0 }, 4, 8, 3),
            (Conv2dSpec { stride: 1, dilation: 1, groups: 1, padding: 0 }, 3, 5, 1),
        ];
        for (spec, cin, cout, k) in specs {
            let xv: Vec<f64> = (0..2 * cin * 9 * 11).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            let wv: Vec<f64> = (0..cout * cin / spec.groups * k * k).map(|i| ((i * 104729) % 37) as f64 / 18.0 - 1.0).collect();
            let x = t(&[2, cin, 9, 11], xv);
            let w = t(&[cout, cin / spec.groups, k, k], wv);
            let fast = conv2d(&x, &w, None, spec).unwrap().to_vec();
            let slow = naive(&x, &w, spec);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_errors_name_axes() {
        let x = t(&[1, 3, 4, 4], vec![0.0; 48]);
        let w = t(&[4, 3, 3, 3], vec![0.0; 108]);
        let err = conv2d(&x, &w, None, Conv2dSpec::default().with_groups(2)).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
        let big = t(&[1, 3, 5, 5], vec![0.0; 75]);
        assert!(conv2d(&x, &big, None, Conv2dSpec::default()).is_err());
    }
}
