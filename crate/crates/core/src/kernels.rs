//! Batched forward/backward kernels behind the graph ops.
//!
//! Every image tensor is `N×H×W×C`. Per-sample work is split across the
//! current rayon pool; each output element is produced by exactly one task,
//! and reductions across samples run sequentially in sample order, so the
//! results do not depend on the worker count.

use rayon::prelude::*;

use crate::tensor::{gemm, Layout, Real};

/// Output extent and leading pad for "same" padding with ceil output size.
/// Odd total padding puts the extra row/column at the bottom/right.
pub(crate) fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = (out - 1) * stride + kernel;
    let total = needed.saturating_sub(input);
    (out, total / 2)
}

const DIRECT_MAX_COUT: usize = 8;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: (usize, usize)) -> ConvGeom {
        let (n, h, w, cin) = (input[0], input[1], input[2], input[3]);
        let (kh, kw, cout) = (kernel[0], kernel[1], kernel[3]);
        let (ho, pad_top) = same_padding(h, kh, stride.0);
        let (wo, pad_left) = same_padding(w, kw, stride.1);
        ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            sh: stride.0,
            sw: stride.1,
            ho,
            wo,
            pad_top,
            pad_left,
        }
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1
    }

    /// Few output channels make im2col + GEMM mostly overhead; those
    /// stride-1 layers use direct loops instead.
    fn direct(&self) -> bool {
        (1..=DIRECT_MAX_COUT).contains(&self.cout)
            && self.cin.is_multiple_of(LANES)
            && self.sh == 1
            && self.sw == 1
            && !self.pointwise()
    }

    fn kdim(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_rows(&self) -> usize {
        self.ho * self.wo
    }

    fn src(&self, o: usize, k: usize, pad: usize, stride: usize, limit: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < limit)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let kdim = self.kdim();
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * kdim..][..kdim];
                for ky in 0..self.kh {
                    let iy = self.src(oy, ky, self.pad_top, self.sh, self.h);
                    for kx in 0..self.kw {
                        let dst = &mut row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        match (iy, self.src(ox, kx, self.pad_left, self.sw, self.w)) {
                            (Some(iy), Some(ix)) => {
                                dst.copy_from_slice(&x[(iy * self.w + ix) * self.cin..][..self.cin])
                            }
                            _ => dst.fill(T::ZERO),
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let kdim = self.kdim();
        dx.fill(T::ZERO);
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * kdim..][..kdim];
                for ky in 0..self.kh {
                    let Some(iy) = self.src(oy, ky, self.pad_top, self.sh, self.h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        let Some(ix) = self.src(ox, kx, self.pad_left, self.sw, self.w) else {
                            continue;
                        };
                        let src = &row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        let dst = &mut dx[(iy * self.w + ix) * self.cin..][..self.cin];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Input channels are consumed in blocks of this many lanes by the direct
/// loops.
const LANES: usize = 8;
/// Independent accumulators per reduction, to hide add latency.
const CHAINS: usize = 4;

/// Calls `$f::<T, C>` with `C = g.cout` as a constant.
macro_rules! by_cout {
    ($g:expr, $f:ident($($arg:expr),*)) => {
        match $g.cout {
            1 => $f::<T, 1>($($arg),*),
            2 => $f::<T, 2>($($arg),*),
            3 => $f::<T, 3>($($arg),*),
            4 => $f::<T, 4>($($arg),*),
            5 => $f::<T, 5>($($arg),*),
            6 => $f::<T, 6>($($arg),*),
            7 => $f::<T, 7>($($arg),*),
            8 => $f::<T, 8>($($arg),*),
            _ => unreachable!("direct convolution with {} output channels", $g.cout),
        }
    };
}

/// In-bounds taps `lo..hi` along one axis for output index `o`, and the
/// input index that tap `lo` reads. Consecutive taps read consecutive input
/// pixels, so a kernel row maps onto one contiguous NHWC run.
#[inline(always)]
fn tap_range(o: usize, stride: usize, pad: usize, k: usize, limit: usize) -> (usize, usize, usize) {
    let start = o * stride;
    let lo = pad.saturating_sub(start).min(k);
    let hi = k.min((limit + pad).saturating_sub(start)).max(lo);
    (lo, hi, (start + lo).saturating_sub(pad))
}

/// One sample. Partial sums are kept per accumulator lane and output channel
/// and folded once per output pixel.
#[inline(always)]
fn direct_forward<T: Real, const C: usize>(g: &ConvGeom, x: &[T], kernel: &[T], bias: &[T], out: &mut [T]) {
    let cin = g.cin;
    for oy in 0..g.ho {
        let (ky0, ky1, iy0) = tap_range(oy, g.sh, g.pad_top, g.kh, g.h);
        for ox in 0..g.wo {
            let (kx0, kx1, ix0) = tap_range(ox, g.sw, g.pad_left, g.kw, g.w);
            let run = (kx1 - kx0) * cin;
            let mut acc = [[T::ZERO; C]; LANES];
            for ky in ky0..ky1 {
                let xs = &x[((iy0 + ky - ky0) * g.w + ix0) * cin..][..run];
                let ks = &kernel[(ky * g.kw + kx0) * cin * C..][..run * C];
                if C >= 4 {
                    // Wide enough to vectorize across output channels.
                    for (xb, kb) in xs.chunks_exact(CHAINS).zip(ks.chunks_exact(CHAINS * C)) {
                        for j in 0..CHAINS {
                            for c in 0..C {
                                acc[j][c] += xb[j] * kb[j * C + c];
                            }
                        }
                    }
                } else {
                    // Vectorize across input channels instead.
                    for (xb, kb) in xs.chunks_exact(LANES).zip(ks.chunks_exact(LANES * C)) {
                        for l in 0..LANES {
                            for c in 0..C {
                                acc[l][c] += xb[l] * kb[l * C + c];
                            }
                        }
                    }
                }
            }
            let dst = &mut out[(oy * g.wo + ox) * C..][..C];
            for c in 0..C {
                let mut v = bias[c];
                for lane in &acc {
                    v += lane[c];
                }
                dst[c] = v;
            }
        }
    }
}

/// One sample; `kernel_t` is laid out `kh×cout×kw×cin` (see
/// [`transpose_taps`]), so each output channel's weights for one kernel row
/// line up with a contiguous run of input pixels.
#[inline(always)]
fn direct_backward_input<T: Real, const C: usize>(g: &ConvGeom, dout: &[T], kernel_t: &[T], dx: &mut [T]) {
    let cin = g.cin;
    let krow = g.kw * cin;
    dx.fill(T::ZERO);
    for oy in 0..g.ho {
        let (ky0, ky1, iy0) = tap_range(oy, g.sh, g.pad_top, g.kh, g.h);
        for ox in 0..g.wo {
            let (kx0, kx1, ix0) = tap_range(ox, g.sw, g.pad_left, g.kw, g.w);
            let run = (kx1 - kx0) * cin;
            let d = &dout[(oy * g.wo + ox) * C..][..C];
            for ky in ky0..ky1 {
                let dst = &mut dx[((iy0 + ky - ky0) * g.w + ix0) * cin..][..run];
                let kts = &kernel_t[ky * C * krow..][..C * krow];
                for (b, block) in dst.chunks_exact_mut(LANES).enumerate() {
                    let mut v = [T::ZERO; LANES];
                    v.copy_from_slice(block);
                    for c in 0..C {
                        let k = &kts[c * krow + kx0 * cin + b * LANES..][..LANES];
                        for l in 0..LANES {
                            v[l] += d[c] * k[l];
                        }
                    }
                    block.copy_from_slice(&v);
                }
            }
        }
    }
}

/// Adds one sample's kernel gradient to `dk`, stride 1. Each tap and block
/// of input channels is accumulated over all output pixels in registers.
#[inline(always)]
fn direct_backward_params<T: Real, const C: usize>(g: &ConvGeom, x: &[T], dout: &[T], dk: &mut [T]) {
    let cin = g.cin;
    for ky in 0..g.kh {
        // Outputs whose tap `ky` lands inside the input.
        let oy0 = g.pad_top.saturating_sub(ky);
        let oy1 = g.ho.min((g.h + g.pad_top).saturating_sub(ky)).max(oy0);
        for kx in 0..g.kw {
            let ox0 = g.pad_left.saturating_sub(kx);
            let ox1 = g.wo.min((g.w + g.pad_left).saturating_sub(kx)).max(ox0);
            let tap = &mut dk[(ky * g.kw + kx) * cin * C..][..cin * C];
            for (b, block) in tap.chunks_exact_mut(LANES * C).enumerate() {
                let mut acc = [[T::ZERO; C]; LANES];
                for oy in oy0..oy1 {
                    let iy = oy + ky - g.pad_top;
                    for ox in ox0..ox1 {
                        let ix = ox + kx - g.pad_left;
                        let xs = &x[(iy * g.w + ix) * cin + b * LANES..][..LANES];
                        let d = &dout[(oy * g.wo + ox) * C..][..C];
                        for l in 0..LANES {
                            for c in 0..C {
                                acc[l][c] += xs[l] * d[c];
                            }
                        }
                    }
                }
                for l in 0..LANES {
                    for c in 0..C {
                        block[l * C + c] += acc[l][c];
                    }
                }
            }
        }
    }
}

/// Reorders a `kh×kw×cin×cout` kernel to `kh×cout×kw×cin`.
fn transpose_taps<T: Real>(g: &ConvGeom, kernel: &[T]) -> Vec<T> {
    let (kw, cin, cout) = (g.kw, g.cin, g.cout);
    let mut out = vec![T::ZERO; kernel.len()];
    for ky in 0..g.kh {
        for kx in 0..kw {
            for ci in 0..cin {
                for co in 0..cout {
                    out[((ky * cout + co) * kw + kx) * cin + ci] = kernel[((ky * kw + kx) * cin + ci) * cout + co];
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let rows = g.out_rows();
    let mut out = vec![T::ZERO; g.n * rows * g.cout];
    out.par_chunks_mut(rows * g.cout)
        .zip(x.par_chunks(g.in_len()))
        .for_each(|(out, x)| {
            if g.direct() {
                by_cout!(g, direct_forward(g, x, kernel, bias, out));
                return;
            }
            for row in out.chunks_mut(g.cout) {
                row.copy_from_slice(bias);
            }
            if g.pointwise() {
                gemm(
                    rows,
                    g.cin,
                    g.cout,
                    T::ONE,
                    x,
                    Layout::Normal,
                    kernel,
                    Layout::Normal,
                    T::ONE,
                    out,
                );
            } else {
                let mut cols = vec![T::ZERO; rows * g.kdim()];
                g.im2col(x, &mut cols);
                gemm(
                    rows,
                    g.kdim(),
                    g.cout,
                    T::ONE,
                    &cols,
                    Layout::Normal,
                    kernel,
                    Layout::Normal,
                    T::ONE,
                    out,
                );
            }
        });
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(g: &ConvGeom, dout: &[T], kernel: &[T]) -> Vec<T> {
    let rows = g.out_rows();
    let mut dx = vec![T::ZERO; g.n * g.in_len()];
    let kernel_t = if g.direct() {
        transpose_taps(g, kernel)
    } else {
        Vec::new()
    };
    dx.par_chunks_mut(g.in_len())
        .zip(dout.par_chunks(rows * g.cout))
        .for_each(|(dx, dout)| {
            if g.direct() {
                by_cout!(g, direct_backward_input(g, dout, &kernel_t, dx));
            } else if g.pointwise() {
                gemm(
                    rows,
                    g.cout,
                    g.cin,
                    T::ONE,
                    dout,
                    Layout::Normal,
                    kernel,
                    Layout::Transposed,
                    T::ZERO,
                    dx,
                );
            } else {
                let mut dcols = vec![T::ZERO; rows * g.kdim()];
                gemm(
                    rows,
                    g.cout,
                    g.kdim(),
                    T::ONE,
                    dout,
                    Layout::Normal,
                    kernel,
                    Layout::Transposed,
                    T::ZERO,
                    &mut dcols,
                );
                g.col2im(&dcols, dx);
            }
        });
    dx
}

/// Kernel and bias gradients, accumulated over samples in order.
pub(crate) fn conv2d_backward_params<T: Real>(g: &ConvGeom, x: &[T], dout: &[T]) -> (Vec<T>, Vec<T>) {
    let rows = g.out_rows();
    let mut dk = vec![T::ZERO; g.kdim() * g.cout];
    if g.direct() {
        for (x, dout) in x.chunks(g.in_len()).zip(dout.chunks(rows * g.cout)) {
            by_cout!(g, direct_backward_params(g, x, dout, &mut dk));
        }
        return (dk, column_sums(dout, g.cout));
    }
    let mut cols = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; rows * g.kdim()]
    };
    for (x, dout) in x.chunks(g.in_len()).zip(dout.chunks(rows * g.cout)) {
        let a = if g.pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        gemm(
            g.kdim(),
            rows,
            g.cout,
            T::ONE,
            a,
            Layout::Transposed,
            dout,
            Layout::Normal,
            T::ONE,
            &mut dk,
        );
    }
    (dk, column_sums(dout, g.cout))
}

pub(crate) fn column_sums<T: Real>(rows: &[T], width: usize) -> Vec<T> {
    let mut sums = vec![T::ZERO; width];
    for row in rows.chunks(width) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

/// `x (N×n) · W (n×m) + b`.
pub(crate) fn dense_forward<T: Real>(n_batch: usize, n: usize, m: usize, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(n_batch * m);
    for _ in 0..n_batch {
        out.extend_from_slice(b);
    }
    gemm(
        n_batch,
        n,
        m,
        T::ONE,
        x,
        Layout::Normal,
        w,
        Layout::Normal,
        T::ONE,
        &mut out,
    );
    out
}

pub(crate) fn dense_backward_input<T: Real>(n_batch: usize, n: usize, m: usize, dout: &[T], w: &[T]) -> Vec<T> {
    let mut dx = vec![T::ZERO; n_batch * n];
    gemm(
        n_batch,
        m,
        n,
        T::ONE,
        dout,
        Layout::Normal,
        w,
        Layout::Transposed,
        T::ZERO,
        &mut dx,
    );
    dx
}

pub(crate) fn dense_backward_weights<T: Real>(n_batch: usize, n: usize, m: usize, x: &[T], dout: &[T]) -> Vec<T> {
    let mut dw = vec![T::ZERO; n * m];
    gemm(
        n,
        n_batch,
        m,
        T::ONE,
        x,
        Layout::Transposed,
        dout,
        Layout::Normal,
        T::ZERO,
        &mut dw,
    );
    dw
}

/// Source row/column for nearest-neighbour upsampling: `floor(i·in/out)`.
pub(crate) fn nearest_index(i: usize, input: usize, output: usize) -> usize {
    i * input / output
}

pub(crate) fn resize_forward<T: Real>(shape: &[usize], target: (usize, usize), x: &[T]) -> Vec<T> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (th, tw) = target;
    let mut out = vec![T::ZERO; n * th * tw * c];
    out.par_chunks_mut(th * tw * c)
        .zip(x.par_chunks(h * w * c))
        .for_each(|(out, x)| {
            for i in 0..th {
                let si = nearest_index(i, h, th);
                for j in 0..tw {
                    let sj = nearest_index(j, w, tw);
                    out[(i * tw + j) * c..][..c].copy_from_slice(&x[(si * w + sj) * c..][..c]);
                }
            }
        });
    out
}

pub(crate) fn resize_backward<T: Real>(shape: &[usize], target: (usize, usize), dout: &[T]) -> Vec<T> {
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (th, tw) = target;
    let mut dx = vec![T::ZERO; n * h * w * c];
    dx.par_chunks_mut(h * w * c)
        .zip(dout.par_chunks(th * tw * c))
        .for_each(|(dx, dout)| {
            for i in 0..th {
                let si = nearest_index(i, h, th);
                for j in 0..tw {
                    let sj = nearest_index(j, w, tw);
                    let dst = &mut dx[(si * w + sj) * c..][..c];
                    for (d, &g) in dst.iter_mut().zip(&dout[(i * tw + j) * c..][..c]) {
                        *d += g;
                    }
                }
            }
        });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_matches_layer_ladders() {
        assert_eq!(same_padding(30, 3, 2), (15, 0));
        assert_eq!(same_padding(15, 3, 2), (8, 1));
        assert_eq!(same_padding(8, 3, 2), (4, 0));
        assert_eq!(same_padding(20, 3, 2), (10, 0));
        assert_eq!(same_padding(10, 3, 2), (5, 0));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(40, 3, 1), (40, 1));
        assert_eq!(same_padding(12, 1, 1), (12, 0));
    }

    #[test]
    fn nearest_index_floors() {
        let rows: Vec<_> = (0..15).map(|i| nearest_index(i, 8, 15)).collect();
        assert_eq!(rows, [0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7]);
        assert_eq!(nearest_index(19, 10, 20), 9);
    }

    /// Straightforward loops over output pixels, taps and channels.
    fn naive(g: &ConvGeom, x: &[f64], k: &[f64], dout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut out = vec![0.0; g.n * g.ho * g.wo * g.cout];
        let mut dx = vec![0.0; x.len()];
        let mut dk = vec![0.0; k.len()];
        for n in 0..g.n {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let iy = (oy * g.sh + ky) as isize - g.pad_top as isize;
                            let ix = (ox * g.sw + kx) as isize - g.pad_left as isize;
                            if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                continue;
                            }
                            let xi = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                            for ci in 0..g.cin {
                                for co in 0..g.cout {
                                    let ki = ((ky * g.kw + kx) * g.cin + ci) * g.cout + co;
                                    let oi = ((n * g.ho + oy) * g.wo + ox) * g.cout + co;
                                    out[oi] += x[xi + ci] * k[ki];
                                    dx[xi + ci] += dout[oi] * k[ki];
                                    dk[ki] += dout[oi] * x[xi + ci];
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, dx, dk)
    }

    #[test]
    fn direct_and_gemm_paths_match_naive_loops() {
        let cases: [([usize; 4], [usize; 4], (usize, usize)); 7] = [
            ([2, 5, 7, 8], [3, 3, 8, 1], (1, 1)),
            ([2, 6, 4, 16], [3, 3, 16, 8], (1, 1)),
            ([1, 1, 1, 8], [3, 3, 8, 3], (1, 1)),
            ([2, 2, 3, 8], [3, 3, 8, 8], (1, 1)),
            ([2, 7, 5, 4], [3, 3, 4, 8], (2, 2)),
            ([2, 6, 6, 8], [3, 3, 8, 16], (1, 1)),
            ([3, 4, 5, 6], [1, 1, 6, 5], (1, 1)),
        ];
        for (input, kernel, stride) in cases {
            let g = ConvGeom::new(&input, &kernel, stride);
            let val = |i: usize, salt: usize| (((i * 7919 + salt) % 1013) as f64 / 1013.0) - 0.5;
            let x: Vec<f64> = (0..input.iter().product()).map(|i| val(i, 1)).collect();
            let k: Vec<f64> = (0..kernel.iter().product()).map(|i| val(i, 2)).collect();
            let dout: Vec<f64> = (0..g.n * g.ho * g.wo * g.cout).map(|i| val(i, 3)).collect();
            let (out, dx, dk) = naive(&g, &x, &k, &dout);
            let bias = vec![0.0; g.cout];
            let close = |a: &[f64], b: &[f64], what: &str| {
                for (i, (p, q)) in a.iter().zip(b).enumerate() {
                    assert!((p - q).abs() < 1e-12, "{what} {input:?} {kernel:?} [{i}]: {p} vs {q}");
                }
            };
            close(&conv2d_forward(&g, &x, &k, &bias), &out, "forward");
            close(&conv2d_backward_input(&g, &dout, &k), &dx, "input gradient");
            close(&conv2d_backward_params(&g, &x, &dout).0, &dk, "kernel gradient");
        }
    }
}
