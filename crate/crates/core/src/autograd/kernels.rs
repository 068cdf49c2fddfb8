//! Raw forward/backward kernels over flat NCHW buffers.
//!
//! Convolutions use `k×k` kernels (k odd) with stride 1 and zero padding
//! `k/2`, so spatial size is preserved.

use crate::parallel;
use crate::tensor::{gemm, Element};

/// Rows and columns of the output whose source pixel, displaced by
/// `(dy, dx)`, lies inside the image, plus the flat source offset.
struct Tap {
    rows: (usize, usize),
    cols: (usize, usize),
    shift: isize,
}

fn tap(h: usize, w: usize, dy: isize, dx: isize) -> Tap {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize) as usize;
    Tap {
        rows: (clamp(-dy, h), clamp(h as isize - dy, h)),
        cols: (clamp(-dx, w), clamp(w as isize - dx, w)),
        shift: dy * w as isize + dx,
    }
}

fn kernel_offsets(k: usize) -> Vec<(isize, isize)> {
    let p = (k / 2) as isize;
    (0..k as isize)
        .flat_map(|ki| (0..k as isize).map(move |kj| (ki - p, kj - p)))
        .collect()
}

/// Unfolds one `[c, h, w]` image into `[c·k·k, h·w]` columns.
pub(crate) fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    unfold(x, c, h, w, &kernel_offsets(k), cols);
}

/// Row `ci·taps + t` of `cols` is channel `ci` displaced by `offsets[t]`,
/// zero where the source falls outside the image.
fn unfold<T: Element>(x: &[T], c: usize, h: usize, w: usize, offsets: &[(isize, isize)], cols: &mut [T]) {
    unfold_rows(x, c, h, w, offsets, 0..h, cols);
}

/// [`unfold`] restricted to output rows `band`; `cols` is
/// `[c·taps, band.len()·w]`.
fn unfold_rows<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    offsets: &[(isize, isize)],
    band: std::ops::Range<usize>,
    cols: &mut [T],
) {
    let hw = h * w;
    let len = band.len() * w;
    let zero = T::zero();
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for (t, &(dy, dx)) in offsets.iter().enumerate() {
            let row = ci * offsets.len() + t;
            let dst = &mut cols[row * len..(row + 1) * len];
            let t = tap(h, w, dy, dx);
            let (r0, r1) = (t.rows.0.max(band.start), t.rows.1.min(band.end));
            if r0 >= r1 || t.cols.0 >= t.cols.1 {
                dst.fill(zero);
                continue;
            }
            // one shifted copy of the band, then blank what wrapped around
            let base = band.start * w;
            let a = ((r0 * w) as isize).max(-t.shift) as usize;
            let b = ((r1 * w) as isize).min(hw as isize - t.shift) as usize;
            dst[..a - base].fill(zero);
            dst[b - base..].fill(zero);
            let src0 = (a as isize + t.shift) as usize;
            dst[a - base..b - base].copy_from_slice(&plane[src0..src0 + (b - a)]);
            if t.cols != (0, w) {
                for line in dst[(r0 - band.start) * w..(r1 - band.start) * w].chunks_exact_mut(w) {
                    line[..t.cols.0].fill(zero);
                    line[t.cols.1..].fill(zero);
                }
            }
        }
    }
}

/// Target size of one unfolded block, so it stays cache resident while the
/// product streams over it.
const BAND_BYTES: usize = 256 * 1024;

/// Output rows per block for an unfold with `rows` rows per pixel.
/// Blocks never go below `MIN_BAND_COLS` columns, where the product itself
/// would lose efficiency.
fn band_rows<T>(rows: usize, h: usize, w: usize) -> usize {
    let fit = BAND_BYTES / (rows * w * std::mem::size_of::<T>()).max(1);
    fit.max(MIN_BAND_COLS.div_ceil(w)).clamp(1, h)
}

const MIN_BAND_COLS: usize = 512;

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub(crate) fn col2im<T: Element>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for (t, &(dy, dx)) in kernel_offsets(k).iter().enumerate() {
            let row = ci * k * k + t;
            let src = &cols[row * hw..(row + 1) * hw];
            let t = tap(h, w, dy, dx);
            let (c0, c1) = t.cols;
            if c0 >= c1 {
                continue;
            }
            for oy in t.rows.0..t.rows.1 {
                let from = oy * w + c0;
                let to = (from as isize + t.shift) as usize;
                for (d, &s) in plane[to..to + (c1 - c0)].iter_mut().zip(&src[from..from + (c1 - c0)]) {
                    *d += s;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], hw: usize) {
    for (plane, &b) in out.chunks_mut(hw).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

/// Bias plus an optional ReLU, applied in one pass.
#[inline]
fn activate<T: Element>(v: T, bias: T, relu: bool) -> T {
    let y = v + bias;
    if relu && !(y > T::zero()) {
        T::zero()
    } else {
        y
    }
}

fn add_bias_act<T: Element>(out: &mut [T], bias: &[T], hw: usize, relu: bool) {
    if !relu {
        return add_bias(out, bias, hw);
    }
    for (plane, &b) in out.chunks_mut(hw).zip(bias) {
        plane.iter_mut().for_each(|v| *v = activate(*v, b, true));
    }
}

fn bias_grad<T: Element>(dout: &[T], c: usize, hw: usize) -> Vec<T> {
    (0..c)
        .map(|ci| dout[ci * hw..(ci + 1) * hw].iter().copied().sum())
        .collect()
}

/// Sums per-sample contributions in index order.
fn reduce_in_order<T: Element>(parts: impl Iterator<Item = Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// `weight` is `[c_out, c_in, k, k]`. With `relu` the output is rectified.
pub(crate) fn conv2d_forward<T: Element>(x: &[T], weight: &[T], bias: &[T], d: ConvDims, relu: bool) -> Vec<T> {
    let hw = d.hw();
    let ckk = d.c_in * d.k * d.k;
    let mut out = vec![T::zero(); d.n * d.c_out * hw];
    parallel::for_each_chunk_mut(&mut out, d.c_out * hw, |n, out_n| {
        let x_n = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        if d.k == 1 {
            gemm(d.c_out, ckk, hw, weight, false, x_n, false, out_n, false);
            add_bias_act(out_n, bias, hw, relu);
            return;
        }
        let offsets = kernel_offsets(d.k);
        let rows = band_rows::<T>(ckk, d.h, d.w);
        let mut cols = vec![T::zero(); ckk * rows * d.w];
        if rows == d.h {
            unfold(x_n, d.c_in, d.h, d.w, &offsets, &mut cols);
            gemm(d.c_out, ckk, hw, weight, false, &cols, false, out_n, false);
            add_bias_act(out_n, bias, hw, relu);
            return;
        }
        let mut part = vec![T::zero(); d.c_out * rows * d.w];
        for y0 in (0..d.h).step_by(rows) {
            let y1 = (y0 + rows).min(d.h);
            let len = (y1 - y0) * d.w;
            unfold_rows(x_n, d.c_in, d.h, d.w, &offsets, y0..y1, &mut cols[..ckk * len]);
            gemm(d.c_out, ckk, len, weight, false, &cols[..ckk * len], false, &mut part[..d.c_out * len], false);
            for (o, src) in part[..d.c_out * len].chunks_exact(len).enumerate() {
                let dst = &mut out_n[o * hw + y0 * d.w..o * hw + y1 * d.w];
                for (v, &p) in dst.iter_mut().zip(src) {
                    *v = activate(p, bias[o], relu);
                }
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    d: ConvDims,
    need: [bool; 3],
) -> ConvGrads<T> {
    let hw = d.hw();
    let ckk = d.c_in * d.k * d.k;
    let [need_x, need_w, need_b] = need;
    let per_sample = parallel::map_indexed(d.n, |n| {
        let x_n = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        let dout_n = &dout[n * d.c_out * hw..(n + 1) * d.c_out * hw];
        let owned_cols;
        let cols: &[T] = if d.k == 1 {
            x_n
        } else if need_w {
            let mut c = vec![T::zero(); ckk * hw];
            im2col(x_n, d.c_in, d.h, d.w, d.k, &mut c);
            owned_cols = c;
            &owned_cols
        } else {
            &[]
        };
        let dw = need_w.then(|| {
            let mut dw = vec![T::zero(); d.c_out * ckk];
            gemm(d.c_out, hw, ckk, dout_n, false, cols, true, &mut dw, false);
            dw
        });
        let dx = need_x.then(|| {
            if d.k == 1 {
                let mut dx = vec![T::zero(); d.c_in * hw];
                gemm(ckk, d.c_out, hw, weight, true, dout_n, false, &mut dx, false);
                dx
            } else {
                let mut dcols = vec![T::zero(); ckk * hw];
                gemm(ckk, d.c_out, hw, weight, true, dout_n, false, &mut dcols, false);
                let mut dx = vec![T::zero(); d.c_in * hw];
                col2im(&dcols, d.c_in, d.h, d.w, d.k, &mut dx);
                dx
            }
        });
        let db = need_b.then(|| bias_grad(dout_n, d.c_out, hw));
        (dx, dw, db)
    });
    let mut dx_all = need_x.then(|| Vec::with_capacity(d.n * d.c_in * hw));
    let mut dws = Vec::new();
    let mut dbs = Vec::new();
    for (dx, dw, db) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        dws.extend(dw);
        dbs.extend(db);
    }
    ConvGrads {
        dx: dx_all,
        dw: need_w.then(|| reduce_in_order(dws.into_iter(), d.c_out * ckk)),
        db: need_b.then(|| reduce_in_order(dbs.into_iter(), d.c_out)),
    }
}

/// Transposed convolution; `weight` is `[c_in, c_out, k, k]` and the map is
/// the adjoint of `conv2d` with that kernel read as `[c_in ← c_out]`.
pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    d: ConvDims,
) -> Vec<T> {
    let hw = d.hw();
    let okk = d.c_out * d.k * d.k;
    let mut out = vec![T::zero(); d.n * d.c_out * hw];
    parallel::for_each_chunk_mut(&mut out, d.c_out * hw, |n, out_n| {
        let x_n = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        let mut cols = vec![T::zero(); okk * hw];
        gemm(okk, d.c_in, hw, weight, true, x_n, false, &mut cols, false);
        col2im(&cols, d.c_out, d.h, d.w, d.k, out_n);
        add_bias(out_n, bias, hw);
    });
    out
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    d: ConvDims,
    need: [bool; 3],
) -> ConvGrads<T> {
    let hw = d.hw();
    let okk = d.c_out * d.k * d.k;
    let [need_x, need_w, need_b] = need;
    let per_sample = parallel::map_indexed(d.n, |n| {
        let x_n = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        let dout_n = &dout[n * d.c_out * hw..(n + 1) * d.c_out * hw];
        let mut dcols = vec![T::zero(); okk * hw];
        if need_x || need_w {
            im2col(dout_n, d.c_out, d.h, d.w, d.k, &mut dcols);
        }
        let dx = need_x.then(|| {
            let mut dx = vec![T::zero(); d.c_in * hw];
            gemm(d.c_in, okk, hw, weight, false, &dcols, false, &mut dx, false);
            dx
        });
        let dw = need_w.then(|| {
            let mut dw = vec![T::zero(); d.c_in * okk];
            gemm(d.c_in, hw, okk, x_n, false, &dcols, true, &mut dw, false);
            dw
        });
        let db = need_b.then(|| bias_grad(dout_n, d.c_out, hw));
        (dx, dw, db)
    });
    let mut dx_all = need_x.then(|| Vec::with_capacity(d.n * d.c_in * hw));
    let mut dws = Vec::new();
    let mut dbs = Vec::new();
    for (dx, dw, db) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        dws.extend(dw);
        dbs.extend(db);
    }
    ConvGrads {
        dx: dx_all,
        dw: need_w.then(|| reduce_in_order(dws.into_iter(), d.c_in * okk)),
        db: need_b.then(|| reduce_in_order(dbs.into_iter(), d.c_out)),
    }
}

/// Nearest 2× up-sampling followed by a same-padded 3×3 convolution.
/// Each output parity `(a, b)` only ever sees two distinct low-resolution
/// rows and columns, so the product is evaluated as four 2×2
/// convolutions on the input grid. `d` holds the low-resolution size.
pub(crate) fn upsample_conv3_forward<T: Element>(x: &[T], weight: &[T], bias: &[T], d: ConvDims, relu: bool) -> Vec<T> {
    debug_assert_eq!(d.k, 3);
    let (h, w, hw) = (d.h, d.w, d.hw());
    let (oh, ow) = (2 * h, 2 * w);
    // even outputs read rows (y-1, y) with taps (0 | 1+2); odd ones read
    // (y, y+1) with taps (0+1 | 2); columns likewise
    let fold = |v: [T; 3], parity: usize| if parity == 0 { [v[0], v[1] + v[2]] } else { [v[0] + v[1], v[2]] };
    let offsets = |parity: usize| if parity == 0 { [-1isize, 0] } else { [0, 1] };
    let pairs = d.c_out * d.c_in;
    let mut folded = vec![vec![T::zero(); pairs * 4]; 4];
    for (pi, kern) in weight.chunks_exact(9).enumerate().take(pairs) {
        for a in 0..2 {
            let col = |c: usize| fold([kern[c], kern[3 + c], kern[6 + c]], a);
            let (c0, c1, c2) = (col(0), col(1), col(2));
            for (ty, row) in [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]]].into_iter().enumerate() {
                for b in 0..2 {
                    let [l, r] = fold(row, b);
                    let dst = &mut folded[a * 2 + b][pi * 4 + ty * 2..pi * 4 + ty * 2 + 2];
                    dst[0] = l;
                    dst[1] = r;
                }
            }
        }
    }
    let phases: Vec<(usize, usize, Vec<(isize, isize)>, Vec<T>)> = folded
        .into_iter()
        .enumerate()
        .map(|(ph, f)| {
            let (a, b) = (ph / 2, ph % 2);
            let offs = offsets(a).iter().flat_map(|&dy| offsets(b).map(|dx| (dy, dx))).collect();
            (a, b, offs, f)
        })
        .collect();
    let mut out = vec![T::zero(); d.n * d.c_out * oh * ow];
    parallel::for_each_chunk_mut(&mut out, d.c_out * oh * ow, |n, out_n| {
        let x_n = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        let ck = d.c_in * 4;
        let rows = band_rows::<T>(ck, h, w);
        let mut cols = vec![T::zero(); ck * rows * w];
        let mut part = vec![T::zero(); d.c_out * rows * w];
        for (a, b, offsets, folded) in &phases {
            for y0 in (0..h).step_by(rows) {
                let y1 = (y0 + rows).min(h);
                let len = (y1 - y0) * w;
                unfold_rows(x_n, d.c_in, h, w, offsets, y0..y1, &mut cols[..ck * len]);
                gemm(d.c_out, ck, len, folded, false, &cols[..ck * len], false, &mut part[..d.c_out * len], false);
                for (o, plane) in part[..d.c_out * len].chunks_exact(len).enumerate() {
                    let dst = &mut out_n[o * oh * ow..(o + 1) * oh * ow];
                    for (y, line) in (y0..y1).zip(plane.chunks_exact(w)) {
                        let row = &mut dst[(2 * y + a) * ow..(2 * y + a + 1) * ow];
                        for (xx, &v) in line.iter().enumerate() {
                            row[2 * xx + b] = activate(v, bias[o], relu);
                        }
                    }
                }
            }
        }
    });
    out
}

/// 2×2 max-pool with stride 2 over `planes` images of `h×w`. Returns the
/// pooled values and, per output, the flat input index of the maximum
/// (first in row-major order on ties).
pub(crate) fn maxpool2_forward<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = base + 2 * oy * w + 2 * ox;
                let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Values of [`maxpool2_forward`] without the index bookkeeping.
pub(crate) fn maxpool2_values<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for plane in x.chunks_exact(h * w).take(planes) {
        for pair in plane.chunks_exact(2 * w).take(oh) {
            let (top, bottom) = pair.split_at(w);
            for ox in 0..ow {
                let a = if top[2 * ox + 1] > top[2 * ox] { top[2 * ox + 1] } else { top[2 * ox] };
                let b = if bottom[2 * ox + 1] > bottom[2 * ox] { bottom[2 * ox + 1] } else { bottom[2 * ox] };
                out.push(if b > a { b } else { a });
            }
        }
    }
    out
}

/// Nearest-neighbour 2× up-sampling.
pub(crate) fn upsample2_forward<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            let src = &x[p * h * w + (y / 2) * w..p * h * w + (y / 2 + 1) * w];
            let dst = &mut out[p * oh * ow + y * ow..p * oh * ow + (y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Element>(dout: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            let src = &dout[p * oh * ow + y * ow..p * oh * ow + (y + 1) * ow];
            let dst = &mut dx[p * h * w + (y / 2) * w..p * h * w + (y / 2 + 1) * w];
            for (xo, &g) in src.iter().enumerate() {
                dst[xo / 2] += g;
            }
        }
    }
    dx
}

/// Row-wise numerically stable softmax over rows of length `l`.
pub(crate) fn softmax_rows<T: Element>(x: &[T], l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(l).zip(out.chunks_mut(l)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / sum);
    }
    out
}

pub(crate) fn softmax_rows_backward<T: Element>(y: &[T], dy: &[T], l: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, gr), dr) in y.chunks(l).zip(dy.chunks(l)).zip(dx.chunks_mut(l)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (g - dot);
        }
    }
    dx
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalisation over rows of length `e`. Returns output, the
/// normalised rows and the per-row reciprocal standard deviation.
pub(crate) fn layer_norm_forward<T: Element>(x: &[T], gain: &[T], shift: &[T], e: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_e = T::one() / T::from_f64(e as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / e);
    for ((row, o), xh) in x.chunks(e).zip(out.chunks_mut(e)).zip(xhat.chunks_mut(e)) {
        let mean = row.iter().copied().sum::<T>() * inv_e;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_e;
        let r = T::one() / (var + eps).sqrt();
        for i in 0..e {
            xh[i] = (row[i] - mean) * r;
            o[i] = xh[i] * gain[i] + shift[i];
        }
        rstd.push(r);
    }
    (out, xhat, rstd)
}

pub(crate) fn layer_norm_backward<T: Element>(
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    dy: &[T],
    e: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_e = T::one() / T::from_f64(e as f64);
    let mut dx = vec![T::zero(); xhat.len()];
    let mut dg = vec![T::zero(); e];
    let mut db = vec![T::zero(); e];
    for (((xh, g), d), &r) in xhat.chunks(e).zip(dy.chunks(e)).zip(dx.chunks_mut(e)).zip(rstd) {
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for i in 0..e {
            let dxh = g[i] * gain[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
            dg[i] += g[i] * xh[i];
            db[i] += g[i];
        }
        mean_dxh = mean_dxh * inv_e;
        mean_dxh_xh = mean_dxh_xh * inv_e;
        for i in 0..e {
            d[i] = r * (g[i] * gain[i] - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
    (dx, dg, db)
}

/// Swaps the last two axes of `batch` matrices of `rows×cols`.
pub(crate) fn transpose_last2<T: Element>(x: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let src = &x[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
