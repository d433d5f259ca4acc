//! Numeric kernels behind the layers. All buffers are row-major, batch first.

use serde::{Deserialize, Serialize};

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, zero padding split evenly (extra on the far side).
    Same,
    /// No padding; output `(in - k) / stride + 1`.
    Valid,
}

/// Resolved 2-D sliding-window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geom {
    pub fn new(
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 || h == 0 || w == 0 {
            return None;
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let ph = ((ho - 1) * stride + kh).saturating_sub(h);
                let pw = ((wo - 1) * stride + kw).saturating_sub(w);
                (ho, wo, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return None;
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Some(Self {
            h,
            w,
            kh,
            kw,
            stride,
            ho,
            wo,
            pad_top,
            pad_left,
        })
    }

    #[inline]
    fn src(&self, oy: usize, ox: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + i) as isize - self.pad_top as isize;
        let x = (ox * self.stride + j) as isize - self.pad_left as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

/// `c = a · b + beta · c` where `a` is m×k and `b` is k×n, each optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to exactly the extent the strides address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], channels: usize, g: &Geom) -> Vec<f64> {
    let p = g.ho * g.wo;
    let mut cols = vec![0.0; channels * g.kh * g.kw * p];
    for c in 0..channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.src(oy, ox, i, j) {
                            cols[row + oy * g.wo + ox] = plane[y * g.w + xx];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, g: &Geom, dx: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..channels {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.src(oy, ox, i, j) {
                            plane[y * g.w + xx] += cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `x` is (B, C, H, W), `weight` is (O, C, kh, kw).
pub fn conv2d_forward(
    x: &[f64],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    g: &Geom,
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_len = in_ch * g.h * g.w;
    let p = g.ho * g.wo;
    let kk = in_ch * g.kh * g.kw;
    let mut out = vec![0.0; batch * out_ch * p];
    par::for_each_chunk_mut(&mut out, out_ch * p, |b, y| {
        let cols = im2col(&x[b * in_len..(b + 1) * in_len], in_ch, g);
        gemm(out_ch, kk, p, weight, false, &cols, false, 0.0, y);
        if let Some(bias) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    });
    out
}

/// Gradients of a convolution. Returns `(dx, dweight, dbias)`; `dx` only when requested,
/// weight/bias gradients only when `param_grads`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    g: &Geom,
    weight: &[f64],
    dy: &[f64],
    want_dx: bool,
    param_grads: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_len = in_ch * g.h * g.w;
    let p = g.ho * g.wo;
    let kk = in_ch * g.kh * g.kw;
    let per_sample = par::map_range(batch, |b| {
        let dyb = &dy[b * out_ch * p..(b + 1) * out_ch * p];
        let dw = param_grads.then(|| {
            let cols = im2col(&x[b * in_len..(b + 1) * in_len], in_ch, g);
            let mut dw = vec![0.0; out_ch * kk];
            gemm(out_ch, p, kk, dyb, false, &cols, true, 0.0, &mut dw);
            dw
        });
        let dx = want_dx.then(|| {
            let mut dcols = vec![0.0; kk * p];
            gemm(kk, out_ch, p, weight, true, dyb, false, 0.0, &mut dcols);
            let mut dx = vec![0.0; in_len];
            col2im(&dcols, in_ch, g, &mut dx);
            dx
        });
        (dx, dw)
    });
    let mut dx_all = want_dx.then(|| Vec::with_capacity(batch * in_len));
    let mut dw_all = param_grads.then(|| vec![0.0; out_ch * kk]);
    for (dx, dw) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
            all.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        }
    }
    let db = param_grads.then(|| {
        let mut db = vec![0.0; out_ch];
        for b in 0..batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let base = (b * out_ch + o) * p;
                *acc += dy[base..base + p].iter().sum::<f64>();
            }
        }
        db
    });
    (dx_all, dw_all, db)
}

/// Average pooling; padded positions are excluded from the divisor.
pub fn avg_pool_forward(x: &[f64], planes: usize, g: &Geom) -> Vec<f64> {
    let mut out = vec![0.0; planes * g.ho * g.wo];
    for c in 0..planes {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let (mut s, mut n) = (0.0, 0usize);
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        if let Some((y, xx)) = g.src(oy, ox, i, j) {
                            s += plane[y * g.w + xx];
                            n += 1;
                        }
                    }
                }
                out[(c * g.ho + oy) * g.wo + ox] = s / n as f64;
            }
        }
    }
    out
}

pub fn avg_pool_backward(dy: &[f64], planes: usize, g: &Geom) -> Vec<f64> {
    let mut dx = vec![0.0; planes * g.h * g.w];
    for c in 0..planes {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut n = 0usize;
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        if g.src(oy, ox, i, j).is_some() {
                            n += 1;
                        }
                    }
                }
                let share = dy[(c * g.ho + oy) * g.wo + ox] / n as f64;
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        if let Some((y, xx)) = g.src(oy, ox, i, j) {
                            plane[y * g.w + xx] += share;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Per-channel statistics over (batch, spatial) for a (B, C, S) buffer.
pub fn channel_moments(x: &[f64], batch: usize, ch: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * spatial) as f64;
    let mut mean = vec![0.0; ch];
    for b in 0..batch {
        for (c, acc) in mean.iter_mut().enumerate() {
            let base = (b * ch + c) * spatial;
            *acc += x[base..base + spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; ch];
    for b in 0..batch {
        for c in 0..ch {
            let base = (b * ch + c) * spatial;
            var[c] += x[base..base + spatial]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (v, e) in row.iter().zip(o.iter_mut()) {
            *e = (v - mx).exp();
            z += *e;
        }
        o.iter_mut().for_each(|e| *e /= z);
    }
    out
}
