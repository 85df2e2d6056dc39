use crate::profile;
use crate::scalar::Scalar;

/// Precomputed bit reversal and twiddles for one power-of-two length.
pub(crate) struct Plan<T> {
    n: usize,
    rev: Vec<usize>,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> Plan<T> {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let angle = |k: usize| 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        Plan {
            n,
            rev,
            cos: (0..n / 2).map(|k| T::c(angle(k).cos())).collect(),
            sin: (0..n / 2).map(|k| T::c(angle(k).sin())).collect(),
        }
    }

    /// Unnormalized in-place transform; `inverse` flips the exponent sign.
    pub(crate) fn run(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = if inverse { self.sin[k * step] } else { -self.sin[k * step] };
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }
}

/// Row-column 2-D transform of every h×w plane in `re`/`im`, unnormalized.
pub(crate) fn fft2_in_place<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    let plane = h * w;
    let planes = re.len() / plane;
    let (row_plan, col_plan) = (Plan::<T>::new(w), Plan::<T>::new(h));
    let (mut cr, mut ci) = (vec![T::zero(); h], vec![T::zero(); h]);
    for p in 0..planes {
        let (pr, pi) = (&mut re[p * plane..][..plane], &mut im[p * plane..][..plane]);
        for y in 0..h {
            row_plan.run(&mut pr[y * w..][..w], &mut pi[y * w..][..w], inverse);
        }
        for x in 0..w {
            for y in 0..h {
                cr[y] = pr[y * w + x];
                ci[y] = pi[y * w + x];
            }
            col_plan.run(&mut cr, &mut ci, inverse);
            for y in 0..h {
                pr[y * w + x] = cr[y];
                pi[y * w + x] = ci[y];
            }
        }
    }
    let log_n = plane.trailing_zeros() as u64;
    profile::record_fft(planes as u64 * 5 * plane as u64 * log_n);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_and_two() {
        let p = Plan::<f64>::new(1);
        let (mut r, mut i) = (vec![3.0], vec![1.0]);
        p.run(&mut r, &mut i, false);
        assert_eq!((r[0], i[0]), (3.0, 1.0));
        let p = Plan::<f64>::new(2);
        let (mut r, mut i) = (vec![1.0, 2.0], vec![0.0, 0.0]);
        p.run(&mut r, &mut i, false);
        assert_eq!(r, vec![3.0, -1.0]);
    }

    #[test]
    fn one_dimensional_matches_direct_sum() {
        let n = 8;
        let x: Vec<f64> = (0..n).map(|k| ((k * k) as f64 * 0.37).sin()).collect();
        let (mut r, mut i) = (x.clone(), vec![0.0; n]);
        Plan::new(n).run(&mut r, &mut i, false);
        for k in 0..n {
            let (mut er, mut ei) = (0.0, 0.0);
            for (m, &xm) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * m) as f64 / n as f64;
                er += xm * a.cos();
                ei += xm * a.sin();
            }
            assert!((r[k] - er).abs() < 1e-12 && (i[k] - ei).abs() < 1e-12);
        }
    }
}
