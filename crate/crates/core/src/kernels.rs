//! Scalar kernels behind the tape ops. Inner loops run over contiguous
//! buffers so the compiler can vectorize them; accumulation order is fixed,
//! which keeps results bit-identical run to run.

use crate::tensor::Real;

/// c[m,n] = a[m,k] @ b[k,n]
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(T::ZERO);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] = aip.mul_add(b_row[j], c_row[j]);
            }
        }
    }
}

/// c[m,n] = a[m,k] @ b[n,k]^T
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for p in 0..k {
                acc = a_row[p].mul_add(b_row[p], acc);
            }
            c[i * n + j] = acc;
        }
    }
}

/// c[m,n] = a[k,m]^T @ b[k,n]
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(T::ZERO);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] = api.mul_add(b_row[j], c_row[j]);
            }
        }
    }
}

pub fn transpose<T: Real>(x: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
}

/// Unfolds `x` [cin, h, w] into columns [cin*kh*kw, oh*ow] for a stride-1
/// convolution with symmetric zero padding.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    cols: &mut [T],
) {
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    debug_assert_eq!(cols.len(), cin * kh * kw * oh * ow);
    cols.fill(T::ZERO);
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let dst_base = r * oh * ow;
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    // Valid ox range so that ix = ox + kx - pad stays in bounds.
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad - kx).min(ow);
                    let dst = dst_base + oy * ow;
                    for ox in ox_lo..ox_hi {
                        let ix = ox + kx - pad;
                        cols[dst + ox] = plane[src_row + ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    dx: &mut [T],
) {
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    debug_assert_eq!(cols.len(), cin * kh * kw * oh * ow);
    dx.fill(T::ZERO);
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ci * kh + ky) * kw + kx;
                let src_base = r * oh * ow;
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = (w + pad - kx).min(ow);
                    let src = src_base + oy * ow;
                    for ox in ox_lo..ox_hi {
                        let ix = ox + kx - pad;
                        plane[dst_row + ix] += cols[src + ox];
                    }
                }
            }
        }
    }
}

/// Row-wise softmax over the last axis of an [rows, n] buffer.
pub fn softmax_rows<T: Real>(x: &[T], rows: usize, n: usize, out: &mut [T]) {
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let yr = &mut out[r * n..(r + 1) * n];
        let mut mx = xr[0];
        for &v in xr.iter() {
            mx = mx.maximum(v);
        }
        let mut sum = T::ZERO;
        for j in 0..n {
            let e = (xr[j] - mx).exp();
            yr[j] = e;
            sum += e;
        }
        let inv = T::ONE / sum;
        for v in yr.iter_mut() {
            *v *= inv;
        }
    }
}

/// dx for softmax given output y and upstream dy: dx = y * (dy - sum(dy*y)).
pub fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], rows: usize, n: usize, dx: &mut [T]) {
    for r in 0..rows {
        let yr = &y[r * n..(r + 1) * n];
        let dyr = &dy[r * n..(r + 1) * n];
        let mut dot = T::ZERO;
        for j in 0..n {
            dot = yr[j].mul_add(dyr[j], dot);
        }
        let dxr = &mut dx[r * n..(r + 1) * n];
        for j in 0..n {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
}

pub fn log_softmax_rows<T: Real>(x: &[T], rows: usize, n: usize, out: &mut [T]) {
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let yr = &mut out[r * n..(r + 1) * n];
        let mut mx = xr[0];
        for &v in xr.iter() {
            mx = mx.maximum(v);
        }
        let mut sum = T::ZERO;
        for j in 0..n {
            sum += (xr[j] - mx).exp();
        }
        let lse = mx + sum.ln();
        for j in 0..n {
            yr[j] = xr[j] - lse;
        }
    }
}

/// dx for log-softmax given output y: dx = dy - exp(y) * sum(dy).
pub fn log_softmax_rows_backward<T: Real>(y: &[T], dy: &[T], rows: usize, n: usize, dx: &mut [T]) {
    for r in 0..rows {
        let yr = &y[r * n..(r + 1) * n];
        let dyr = &dy[r * n..(r + 1) * n];
        let mut s = T::ZERO;
        for &d in dyr.iter() {
            s += d;
        }
        let dxr = &mut dx[r * n..(r + 1) * n];
        for j in 0..n {
            dxr[j] = dyr[j] - yr[j].exp() * s;
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization (no affine): y = (x - mean) / sqrt(var + eps).
pub fn layer_norm_rows<T: Real>(x: &[T], rows: usize, n: usize, out: &mut [T]) {
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_n = T::ONE / T::from_f64(n as f64);
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let mut mean = T::ZERO;
        for &v in xr.iter() {
            mean += v;
        }
        mean *= inv_n;
        let mut var = T::ZERO;
        for &v in xr.iter() {
            let d = v - mean;
            var = d.mul_add(d, var);
        }
        var *= inv_n;
        let rstd = T::ONE / (var + eps).sqrt();
        let yr = &mut out[r * n..(r + 1) * n];
        for j in 0..n {
            yr[j] = (xr[j] - mean) * rstd;
        }
    }
}

/// dx = rstd * (dy - mean(dy) - y_hat * mean(dy ⊙ y_hat)), recomputing the
/// row statistics from the input.
pub fn layer_norm_rows_backward<T: Real>(x: &[T], dy: &[T], rows: usize, n: usize, dx: &mut [T]) {
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_n = T::ONE / T::from_f64(n as f64);
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let dyr = &dy[r * n..(r + 1) * n];
        let mut mean = T::ZERO;
        for &v in xr.iter() {
            mean += v;
        }
        mean *= inv_n;
        let mut var = T::ZERO;
        for &v in xr.iter() {
            let d = v - mean;
            var = d.mul_add(d, var);
        }
        var *= inv_n;
        let rstd = T::ONE / (var + eps).sqrt();
        let mut mean_dy = T::ZERO;
        let mut mean_dyy = T::ZERO;
        for j in 0..n {
            let yhat = (xr[j] - mean) * rstd;
            mean_dy += dyr[j];
            mean_dyy = dyr[j].mul_add(yhat, mean_dyy);
        }
        mean_dy *= inv_n;
        mean_dyy *= inv_n;
        let dxr = &mut dx[r * n..(r + 1) * n];
        for j in 0..n {
            let yhat = (xr[j] - mean) * rstd;
            dxr[j] = rstd * (dyr[j] - mean_dy - yhat * mean_dyy);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::ONE + three * a * x * x);
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * du
}

pub fn silu<T: Real>(x: T) -> T {
    x / (T::ONE + (-x).exp())
}

pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::ONE / (T::ONE + (-x).exp());
    s * (T::ONE + x * (T::ONE - s))
}

/// Nearest-neighbour 2x spatial upsample of a CHW image.
pub fn upsample_nearest_2x<T: Real>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..oh {
            let sy = y / 2;
            for xcol in 0..ow {
                dst[y * ow + xcol] = src[sy * w + xcol / 2];
            }
        }
    }
}

pub fn upsample_nearest_2x_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    dx.fill(T::ZERO);
    for ci in 0..c {
        let src = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for y in 0..oh {
            for xcol in 0..ow {
                dst[(y / 2) * w + xcol / 2] += src[y * ow + xcol];
            }
        }
    }
}

/// 2x average-pool downsample of a CHW image with even spatial dims.
pub fn downsample_avg_2x<T: Real>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..oh {
            for xcol in 0..ow {
                let s = src[2 * y * w + 2 * xcol]
                    + src[2 * y * w + 2 * xcol + 1]
                    + src[(2 * y + 1) * w + 2 * xcol]
                    + src[(2 * y + 1) * w + 2 * xcol + 1];
                dst[y * ow + xcol] = s * quarter;
            }
        }
    }
}

pub fn downsample_avg_2x_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    for ci in 0..c {
        let src = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for y in 0..oh {
            for xcol in 0..ow {
                let g = src[y * ow + xcol] * quarter;
                dst[2 * y * w + 2 * xcol] = g;
                dst[2 * y * w + 2 * xcol + 1] = g;
                dst[(2 * y + 1) * w + 2 * xcol] = g;
                dst[(2 * y + 1) * w + 2 * xcol + 1] = g;
            }
        }
    }
}
