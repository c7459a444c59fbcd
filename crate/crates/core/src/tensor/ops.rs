//! Raw numeric kernels shared by the tape's forward and backward passes.

use super::{gemm, Real};

/// Unfolds one `[c, h, w]` image into `[c * k * k, h * w]` columns for a
/// stride-1 convolution with `pad` zero padding.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let out = &mut col[row * hw..(row + 1) * hw];
                for oh in 0..h {
                    let ih = oh as isize + ki as isize - pad as isize;
                    let dst = &mut out[oh * w..(oh + 1) * w];
                    if ih < 0 || ih >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let shift = kj as isize - pad as isize;
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = ow as isize + shift;
                        *d = if iw < 0 || iw >= w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image,
/// accumulating into `dx`.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * hw..(row + 1) * hw];
                for oh in 0..h {
                    let ih = oh as isize + ki as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let shift = kj as isize - pad as isize;
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    for ow in 0..w {
                        let iw = ow as isize + shift;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += src[oh * w + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution of a `[b, cin, h, w]` batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    b: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    let hw = h * w;
    let ckk = cin * k * k;
    let pad = k / 2;
    let mut out = vec![T::zero(); b * cout * hw];
    let mut col = vec![T::zero(); ckk * hw];
    for n in 0..b {
        im2col(&x[n * cin * hw..(n + 1) * cin * hw], cin, h, w, k, pad, &mut col);
        let y = &mut out[n * cout * hw..(n + 1) * cout * hw];
        for (co, row) in y.chunks_mut(hw).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm(false, false, cout, hw, ckk, T::one(), weight, &col, T::one(), y);
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    b: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let ckk = cin * k * k;
    let pad = k / 2;
    let mut dw = vec![T::zero(); cout * ckk];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| vec![T::zero(); b * cin * hw]);
    let mut col = vec![T::zero(); ckk * hw];
    let mut dcol = if need_dx { vec![T::zero(); ckk * hw] } else { Vec::new() };
    for n in 0..b {
        let dy_n = &dy[n * cout * hw..(n + 1) * cout * hw];
        for (co, row) in dy_n.chunks(hw).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
        im2col(&x[n * cin * hw..(n + 1) * cin * hw], cin, h, w, k, pad, &mut col);
        gemm(false, true, cout, ckk, hw, T::one(), dy_n, &col, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(true, false, ckk, hw, cout, T::one(), weight, dy_n, T::zero(), &mut dcol);
            col2im(&dcol, cin, h, w, k, pad, &mut dx[n * cin * hw..(n + 1) * cin * hw]);
        }
    }
    (dx, dw, db)
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute<T: Real>(x: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(x.len());
    if x.is_empty() {
        return (out, out_shape);
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        out.push(x[offset]);
        let mut d = rank;
        loop {
            if d == 0 {
                return (out, out_shape);
            }
            d -= 1;
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Inverse permutation of `axes`.
pub(crate) fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let (y, ys) = permute(&x, &shape, &[2, 0, 1]);
        assert_eq!(ys, vec![4, 2, 3]);
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(y[k * 6 + i * 3 + j], x[i * 12 + j * 4 + k]);
                }
            }
        }
        let (back, bs) = permute(&y, &ys, &invert_axes(&[2, 0, 1]));
        assert_eq!(bs, shape.to_vec());
        assert_eq!(back, x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (b, cin, cout, h, w, k) = (2, 2, 3, 4, 5, 3);
        let x: Vec<f64> = (0..b * cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let bias = vec![0.5, -1.0, 2.0];
        let y = conv2d_forward(&x, &wt, &bias, b, cin, cout, h, w, k);
        for n in 0..b {
            for co in 0..cout {
                for oh in 0..h {
                    for ow in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ih = oh as isize + ki as isize - 1;
                                    let iw = ow as isize + kj as isize - 1;
                                    if ih >= 0 && ih < h as isize && iw >= 0 && iw < w as isize {
                                        acc += wt[((co * cin + ci) * k + ki) * k + kj]
                                            * x[((n * cin + ci) * h + ih as usize) * w + iw as usize];
                                    }
                                }
                            }
                        }
                        assert_eq!(y[((n * cout + co) * h + oh) * w + ow], acc);
                    }
                }
            }
        }
    }
}
