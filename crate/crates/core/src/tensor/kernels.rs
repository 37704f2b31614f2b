//! Raw numeric kernels shared by the recorded (differentiable) ops and the
//! inference-only forward paths.

use crate::scalar::Scalar;

pub use crate::matrix::matmul_into;

/// Output spatial extent of a cross-correlation along one axis.
#[inline]
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> isize {
    let padded = input as isize + 2 * pad as isize - k as isize;
    if padded < 0 {
        -1
    } else {
        padded / stride as isize + 1
    }
}

/// Range [lo, hi) of output coordinates whose input coordinate
/// out·stride + k_off − pad lands inside [0, limit).
#[inline]
fn valid_out_range(limit: usize, k_off: usize, stride: usize, pad: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi = if limit + pad > k_off {
        (((limit - 1 + pad - k_off) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlation forward: x is C×H×W, w is O×C×k×k, bias is length O.
/// Writes an O×OH×OW buffer. Border handling is hoisted out of the inner
/// loops via precomputed valid ranges.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: &[T],
    out: &mut [T],
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(wgt.len(), o * c * k * k);
    debug_assert_eq!(out.len(), o * oh * ow);
    for oc in 0..o {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for v in plane.iter_mut() {
            *v = bias[oc];
        }
        for ic in 0..c {
            let xplane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(h, ky, stride, pad, oh);
                for kx in 0..k {
                    let wv = wgt[((oc * c + ic) * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_out_range(w, kx, stride, pad, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let xrow = &xplane[iy * w..(iy + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        // ix = ox·stride + kx − pad is nonnegative across
                        // the valid range
                        let mut ix = ox_lo * stride + kx - pad;
                        for ov in orow[ox_lo..ox_hi].iter_mut() {
                            *ov = *ov + wv * xrow[ix];
                            ix += stride;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the cross-correlation. Accumulates into dx, dw, db.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_out: &[T],
    oh: usize,
    ow: usize,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    for oc in 0..o {
        let gplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] = db[oc] + gplane.iter().copied().sum();
        for ic in 0..c {
            let xplane = &x[ic * h * w..(ic + 1) * h * w];
            let dxplane = ic * h * w;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(h, ky, stride, pad, oh);
                for kx in 0..k {
                    let widx = ((oc * c + ic) * k + ky) * k + kx;
                    let wv = wgt[widx];
                    let (ox_lo, ox_hi) = valid_out_range(w, kx, stride, pad, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut wacc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let xrow = &xplane[iy * w..(iy + 1) * w];
                        let dxrow = &mut dx[dxplane + iy * w..dxplane + (iy + 1) * w];
                        let mut ix = ox_lo * stride + kx - pad;
                        for &gv in grow[ox_lo..ox_hi].iter() {
                            wacc = wacc + gv * xrow[ix];
                            dxrow[ix] = dxrow[ix] + gv * wv;
                            ix += stride;
                        }
                    }
                    dw[widx] = dw[widx] + wacc;
                }
            }
        }
    }
}

/// Nearest-neighbour upsample by an integer factor: C×H×W → C×fH×fW.
pub fn upsample_nearest_forward<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    out: &mut [T],
) {
    let (oh, ow) = (h * f, w * f);
    for ic in 0..c {
        for oy in 0..oh {
            let iy = oy / f;
            for ox in 0..ow {
                out[(ic * oh + oy) * ow + ox] = x[(ic * h + iy) * w + ox / f];
            }
        }
    }
}

pub fn upsample_nearest_backward<T: Scalar>(
    grad_out: &[T],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    dx: &mut [T],
) {
    let (oh, ow) = (h * f, w * f);
    for ic in 0..c {
        for oy in 0..oh {
            let iy = oy / f;
            for ox in 0..ow {
                let di = (ic * h + iy) * w + ox / f;
                dx[di] = dx[di] + grad_out[(ic * oh + oy) * ow + ox];
            }
        }
    }
}

/// Stable softplus log(1 + e^x).
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (T::one() + (-x).exp()).ln()
    } else {
        (T::one() + x.exp()).ln()
    }
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_out_len_cases() {
        assert_eq!(conv_out_len(4, 3, 1, 1), 4);
        assert_eq!(conv_out_len(64, 3, 2, 1), 32);
        assert_eq!(conv_out_len(1, 3, 1, 0), -1);
    }

    #[test]
    fn upsample_shapes_values() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let mut out = [0.0; 16];
        upsample_nearest_forward(&x, 1, 2, 2, 2, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], 1.0);
        assert_eq!(out[5], 1.0);
        assert_eq!(out[15], 4.0);
    }

    #[test]
    fn softplus_stable_at_large_inputs() {
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0f64) < 1e-40);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}
