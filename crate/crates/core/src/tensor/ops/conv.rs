//! Temporal and grouped convolutions.
//!
//! Layouts are batch-first and time-last. All kernels are cross-correlations
//! (no kernel flip), matching common deep-learning convention.

use crate::error::{shape_err, Result};
use crate::tensor::ops::gemm::{gemm, MatMut, MatRef};
use crate::tensor::{Element, Tensor};

/// Kernels at least this long are applied as a Toeplitz matrix product.
const TOEPLITZ_MIN_TAPS: usize = 48;

#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Left and right zero padding that keeps the output length equal to the
/// input length: `(K-1)/2` on the left, the remainder on the right.
pub fn same_padding(kernel_len: usize) -> (usize, usize) {
    let total = kernel_len.saturating_sub(1);
    (total / 2, total - total / 2)
}

/// Valid kernel taps `k_lo..k_hi` for output sample `t`.
#[inline]
fn tap_range(t: usize, t_len: usize, k_len: usize, left: usize) -> (usize, usize) {
    let k_lo = left.saturating_sub(t);
    let k_hi = k_len.min(t_len + left - t);
    (k_lo, k_hi.max(k_lo))
}

/// Rows of length `t_len`; row `r` uses kernel `(r / rows_per_channel) % channels`.
struct RowPlan {
    t_len: usize,
    k_len: usize,
    rows_per_channel: usize,
    channels: usize,
}

impl RowPlan {
    #[inline]
    fn kernel_of(&self, row: usize) -> usize {
        (row / self.rows_per_channel) % self.channels
    }

    /// Row sets sharing kernel `c` as `(first_row, count, row_step)`.
    fn panels(&self, n_rows: usize, c: usize) -> Vec<(usize, usize, usize)> {
        let period = self.rows_per_channel * self.channels;
        let blocks = n_rows / period;
        if self.rows_per_channel == 1 {
            vec![(c, blocks, self.channels)]
        } else {
            (0..blocks)
                .map(|q| {
                    (
                        q * period + c * self.rows_per_channel,
                        self.rows_per_channel,
                        1,
                    )
                })
                .collect()
        }
    }

    /// `H[s, t] = h[s + left - t]`, so that a row times `H` is the convolution.
    fn toeplitz<T: Element>(&self, h: &[T]) -> Vec<T> {
        let (n, (left, _)) = (self.t_len, same_padding(self.k_len));
        let mut m = vec![T::zero(); n * n];
        for s in 0..n {
            for t in 0..n {
                if let Some(k) = (s + left).checked_sub(t).filter(|&k| k < self.k_len) {
                    m[s * n + t] = h[k];
                }
            }
        }
        m
    }

    /// Output samples `t_lo..t_hi` that tap `k` reaches, reading input from
    /// `s_lo` onwards; `None` when the tap only ever sees padding.
    #[inline]
    fn shift(&self, k: usize) -> Option<(usize, usize, usize)> {
        let (left, _) = same_padding(self.k_len);
        let t_lo = left.saturating_sub(k);
        let t_hi = (self.t_len + left).saturating_sub(k).min(self.t_len);
        (t_lo < t_hi).then(|| (t_lo, t_hi, t_lo + k - left))
    }

    fn use_toeplitz(&self) -> bool {
        self.k_len >= TOEPLITZ_MIN_TAPS
    }

    fn forward<T: Element>(&self, x: &[T], kernels: &[T], bias: Option<&[T]>) -> Vec<T> {
        if self.use_toeplitz() {
            return self.forward_toeplitz(x, kernels, bias);
        }
        let mut out = vec![T::zero(); x.len()];
        for (row, (xr, yr)) in x
            .chunks_exact(self.t_len)
            .zip(out.chunks_exact_mut(self.t_len))
            .enumerate()
        {
            let c = self.kernel_of(row);
            let h = &kernels[c * self.k_len..(c + 1) * self.k_len];
            yr.fill(bias.map_or(T::zero(), |b| b[c]));
            for (k, &hk) in h.iter().enumerate() {
                if let Some((t_lo, t_hi, s_lo)) = self.shift(k) {
                    axpy(hk, &xr[s_lo..s_lo + (t_hi - t_lo)], &mut yr[t_lo..t_hi]);
                }
            }
        }
        out
    }

    fn forward_toeplitz<T: Element>(&self, x: &[T], kernels: &[T], bias: Option<&[T]>) -> Vec<T> {
        let n = self.t_len;
        let n_rows = x.len() / n;
        let mut out = vec![T::zero(); x.len()];
        for c in 0..self.channels {
            let h = self.toeplitz(&kernels[c * self.k_len..(c + 1) * self.k_len]);
            let b = bias.map_or(T::zero(), |b| b[c]);
            for (first, count, step) in self.panels(n_rows, c) {
                let a = MatRef {
                    data: &x[first * n..],
                    rows: count,
                    cols: n,
                    rs: step * n,
                    cs: 1,
                };
                let dst = MatMut {
                    data: &mut out[first * n..],
                    rows: count,
                    cols: n,
                    rs: step * n,
                    cs: 1,
                };
                gemm(T::one(), a, MatRef::rows(&h, n, n), T::zero(), dst);
                if b != T::zero() {
                    for r in 0..count {
                        let row = (first + r * step) * n;
                        out[row..row + n].iter_mut().for_each(|v| *v += b);
                    }
                }
            }
        }
        out
    }

    fn backward<T: Element>(
        &self,
        x: &[T],
        kernels: &[T],
        g: &[T],
        need_x: bool,
        need_k: bool,
        need_b: bool,
    ) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
        if self.use_toeplitz() {
            return self.backward_toeplitz(x, kernels, g, need_x, need_k, need_b);
        }
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gk = need_k.then(|| vec![T::zero(); kernels.len()]);
        let mut gb = need_b.then(|| vec![T::zero(); self.channels]);
        for (row, (xr, gr)) in x
            .chunks_exact(self.t_len)
            .zip(g.chunks_exact(self.t_len))
            .enumerate()
        {
            let c = self.kernel_of(row);
            let h = &kernels[c * self.k_len..(c + 1) * self.k_len];
            if let Some(gb) = gb.as_mut() {
                gb[c] += gr.iter().copied().sum::<T>();
            }
            for k in 0..self.k_len {
                let Some((t_lo, t_hi, s_lo)) = self.shift(k) else {
                    continue;
                };
                let s_hi = s_lo + (t_hi - t_lo);
                if let Some(gx) = gx.as_mut() {
                    let gxr = &mut gx[row * self.t_len..(row + 1) * self.t_len];
                    axpy(h[k], &gr[t_lo..t_hi], &mut gxr[s_lo..s_hi]);
                }
                if let Some(gk) = gk.as_mut() {
                    gk[c * self.k_len + k] += dot(&gr[t_lo..t_hi], &xr[s_lo..s_hi]);
                }
            }
        }
        (gx, gk, gb)
    }

    fn backward_toeplitz<T: Element>(
        &self,
        x: &[T],
        kernels: &[T],
        g: &[T],
        need_x: bool,
        need_k: bool,
        need_b: bool,
    ) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
        let n = self.t_len;
        let n_rows = x.len() / n;
        let (left, _) = same_padding(self.k_len);
        let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
        let mut gk = need_k.then(|| vec![T::zero(); kernels.len()]);
        let mut gb = need_b.then(|| vec![T::zero(); self.channels]);
        let mut corr = vec![T::zero(); n * n];
        for c in 0..self.channels {
            let panels = self.panels(n_rows, c);
            let view = |data, count, step: usize| MatRef {
                data,
                rows: count,
                cols: n,
                rs: step * n,
                cs: 1,
            };
            if let Some(gb) = gb.as_mut() {
                for &(first, count, step) in &panels {
                    for r in 0..count {
                        let row = (first + r * step) * n;
                        gb[c] += g[row..row + n].iter().copied().sum::<T>();
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                let h = self.toeplitz(&kernels[c * self.k_len..(c + 1) * self.k_len]);
                for &(first, count, step) in &panels {
                    let dst = MatMut {
                        data: &mut gx[first * n..],
                        rows: count,
                        cols: n,
                        rs: step * n,
                        cs: 1,
                    };
                    gemm(
                        T::one(),
                        view(&g[first * n..], count, step),
                        MatRef::rows(&h, n, n).t(),
                        T::zero(),
                        dst,
                    );
                }
            }
            if let Some(gk) = gk.as_mut() {
                // corr[s, t] = sum over rows of x[s] * g[t]; tap k collects s - t = k - left.
                corr.fill(T::zero());
                for &(first, count, step) in &panels {
                    let xa = view(&x[first * n..], count, step).t();
                    let gv = view(&g[first * n..], count, step);
                    gemm(T::one(), xa, gv, T::one(), MatMut::rows(&mut corr, n, n));
                }
                let gh = &mut gk[c * self.k_len..(c + 1) * self.k_len];
                for t in 0..n {
                    let (k_lo, k_hi) = tap_range(t, n, self.k_len, left);
                    for k in k_lo..k_hi {
                        gh[k] += corr[(t + k - left) * n + t];
                    }
                }
            }
        }
        (gx, gk, gb)
    }
}

/// One temporal kernel shared by every channel: `input [C, N, T]`,
/// `kernel [K]`, optional scalar `bias`. Output keeps shape `[C, N, T]`
/// through zero "same" padding, so `K` may exceed `T`.
pub fn conv_temporal<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(shape_err!(
            "conv_temporal expects [C, N, T], got {:?}",
            input.shape()
        ));
    }
    if kernel.rank() != 1 {
        return Err(shape_err!(
            "temporal kernel must be 1-D, got {:?}",
            kernel.shape()
        ));
    }
    if let Some(b) = bias {
        if b.numel() != 1 {
            return Err(shape_err!(
                "conv_temporal bias must be a scalar, got {:?}",
                b.shape()
            ));
        }
    }
    let plan = RowPlan {
        t_len: input.shape()[2],
        k_len: kernel.numel(),
        rows_per_channel: 1,
        channels: 1,
    };
    run_rows("conv_temporal", input, kernel, bias, plan)
}

/// Depthwise temporal convolution: `input [B, C, ..., T]` where channel `c`
/// is filtered by row `c` of `kernels [C, K]` with "same" padding.
pub fn conv_depthwise_temporal<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if input.rank() < 3 {
        return Err(shape_err!(
            "conv_depthwise_temporal expects [B, C, ..., T], got {:?}",
            input.shape()
        ));
    }
    let channels = input.shape()[1];
    if kernels.rank() != 2 || kernels.shape()[0] != channels {
        return Err(shape_err!(
            "kernels {:?} do not match {channels} channels",
            kernels.shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(shape_err!(
                "bias {:?} does not match {channels} channels",
                b.shape()
            ));
        }
    }
    let t_len = *input.shape().last().expect("rank >= 3");
    let plan = RowPlan {
        t_len,
        k_len: kernels.shape()[1],
        rows_per_channel: input.shape()[2..].iter().product::<usize>() / t_len,
        channels,
    };
    run_rows("conv_depthwise_temporal", input, kernels, bias, plan)
}

fn run_rows<T: Element>(
    name: &'static str,
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    plan: RowPlan,
) -> Result<Tensor<T>> {
    if plan.k_len == 0 {
        return Err(shape_err!("empty temporal kernel"));
    }
    let out = plan.forward(input.data(), kernels.data(), bias.map(|b| b.data()));
    let mut parents = vec![input.clone(), kernels.clone()];
    parents.extend(bias.cloned());
    Ok(Tensor::from_op(
        name,
        input.shape().to_vec(),
        out,
        parents,
        Box::new(move |p, _, g, needs| {
            let need_b = needs.get(2).copied().unwrap_or(false);
            let (gx, gk, gb) =
                plan.backward(p[0].data(), p[1].data(), g, needs[0], needs[1], need_b);
            let mut grads = vec![gx, gk];
            if p.len() == 3 {
                grads.push(gb);
            }
            grads
        }),
    ))
}

/// Per-axis stride of a grouped convolution over `(H, W, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride3 {
    pub h: usize,
    pub w: usize,
    pub t: usize,
}

impl Stride3 {
    pub const UNIT: Stride3 = Stride3 { h: 1, w: 1, t: 1 };

    pub fn new(h: usize, w: usize, t: usize) -> Self {
        Stride3 { h, w, t }
    }
}

#[derive(Clone, Copy)]
struct GroupedGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    cpg: usize,
    opg: usize,
    in_hwt: [usize; 3],
    k_hwt: [usize; 3],
    out_hwt: [usize; 3],
    stride: Stride3,
}

impl GroupedGeom {
    #[inline]
    fn x_row(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        (((b * self.cin + c) * self.in_hwt[0] + y) * self.in_hwt[1] + x) * self.in_hwt[2]
    }

    #[inline]
    fn out_row(&self, b: usize, o: usize, i: usize, j: usize) -> usize {
        (((b * self.cout + o) * self.out_hwt[0] + i) * self.out_hwt[1] + j) * self.out_hwt[2]
    }

    #[inline]
    fn w_at(&self, o: usize, ci: usize, a: usize, bb: usize, ct: usize) -> usize {
        (((o * self.cpg + ci) * self.k_hwt[0] + a) * self.k_hwt[1] + bb) * self.k_hwt[2] + ct
    }

    /// Taps per output channel when the kernel has unit temporal extent.
    fn taps(&self) -> usize {
        self.cpg * self.k_hwt[0] * self.k_hwt[1]
    }

    /// Whether the matrix-product path applies: unit temporal kernel and
    /// stride, and enough work per product to amortise gathering.
    fn use_gemm(&self) -> bool {
        self.k_hwt[2] == 1 && self.stride.t == 1 && self.opg * self.taps() >= 16
    }

    /// Calls `f(batch, group, i, j, patch)` with the input rows under output
    /// position `(i, j)` of group `group`, gathered as a `[taps, T]` matrix.
    fn for_each_patch<T: Element>(
        &self,
        x: &[T],
        mut f: impl FnMut(usize, usize, usize, usize, &[T]),
    ) {
        let t = self.in_hwt[2];
        let [kh, kw, _] = self.k_hwt;
        let [oh, ow, _] = self.out_hwt;
        let mut patch = vec![T::zero(); self.taps() * t];
        for b in 0..self.batch {
            for g in 0..self.cin / self.cpg {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut rows = patch.chunks_exact_mut(t);
                        for ci in 0..self.cpg {
                            for a in 0..kh {
                                for bb in 0..kw {
                                    let src = self.x_row(
                                        b,
                                        g * self.cpg + ci,
                                        i * self.stride.h + a,
                                        j * self.stride.w + bb,
                                    );
                                    rows.next()
                                        .expect("tap row")
                                        .copy_from_slice(&x[src..src + t]);
                                }
                            }
                        }
                        f(b, g, i, j, &patch);
                    }
                }
            }
        }
    }

    /// Output rows of group `g` at position `(i, j)` as a matrix view origin and row step.
    fn out_block(&self, b: usize, g: usize, i: usize, j: usize) -> (usize, usize) {
        let [oh, ow, t] = self.out_hwt;
        (self.out_row(b, g * self.opg, i, j), oh * ow * t)
    }

    fn forward_gemm<T: Element>(&self, x: &[T], w: &[T], out: &mut [T]) {
        let (taps, t) = (self.taps(), self.in_hwt[2]);
        self.for_each_patch(x, |b, g, i, j, patch| {
            let (origin, step) = self.out_block(b, g, i, j);
            let wg = MatRef::rows(
                &w[g * self.opg * taps..(g + 1) * self.opg * taps],
                self.opg,
                taps,
            );
            let dst = MatMut {
                data: &mut out[origin..],
                rows: self.opg,
                cols: t,
                rs: step,
                cs: 1,
            };
            gemm(T::one(), wg, MatRef::rows(patch, taps, t), T::one(), dst);
        });
    }

    fn backward_gemm<T: Element>(
        &self,
        x: &[T],
        w: &[T],
        g: &[T],
        gx: Option<&mut Vec<T>>,
        gw: Option<&mut Vec<T>>,
    ) {
        let (taps, t) = (self.taps(), self.in_hwt[2]);
        let [kh, kw, _] = self.k_hwt;
        if let Some(gw) = gw {
            self.for_each_patch(x, |b, grp, i, j, patch| {
                let (origin, step) = self.out_block(b, grp, i, j);
                let gv = MatRef {
                    data: &g[origin..],
                    rows: self.opg,
                    cols: t,
                    rs: step,
                    cs: 1,
                };
                let dst = MatMut::rows(
                    &mut gw[grp * self.opg * taps..(grp + 1) * self.opg * taps],
                    self.opg,
                    taps,
                );
                gemm(
                    T::one(),
                    gv,
                    MatRef::rows(patch, taps, t).t(),
                    T::one(),
                    dst,
                );
            });
        }
        if let Some(gx) = gx {
            let mut gpatch = vec![T::zero(); taps * t];
            let [oh, ow, _] = self.out_hwt;
            for b in 0..self.batch {
                for grp in 0..self.cin / self.cpg {
                    let wg = MatRef::rows(
                        &w[grp * self.opg * taps..(grp + 1) * self.opg * taps],
                        self.opg,
                        taps,
                    );
                    for i in 0..oh {
                        for j in 0..ow {
                            let (origin, step) = self.out_block(b, grp, i, j);
                            let gv = MatRef {
                                data: &g[origin..],
                                rows: self.opg,
                                cols: t,
                                rs: step,
                                cs: 1,
                            };
                            gemm(
                                T::one(),
                                wg.t(),
                                gv,
                                T::zero(),
                                MatMut::rows(&mut gpatch, taps, t),
                            );
                            let mut rows = gpatch.chunks_exact(t);
                            for ci in 0..self.cpg {
                                for a in 0..kh {
                                    for bb in 0..kw {
                                        let dst = self.x_row(
                                            b,
                                            grp * self.cpg + ci,
                                            i * self.stride.h + a,
                                            j * self.stride.w + bb,
                                        );
                                        let src = rows.next().expect("tap row");
                                        gx[dst..dst + t]
                                            .iter_mut()
                                            .zip(src)
                                            .for_each(|(d, s)| *d += *s);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Calls `f(out_row, x_row, w_index, ct)` for every kernel tap of every
    /// output row.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [kh, kw, kt] = self.k_hwt;
        let [oh, ow, _] = self.out_hwt;
        for b in 0..self.batch {
            for o in 0..self.cout {
                let group = o / self.opg;
                for i in 0..oh {
                    for j in 0..ow {
                        let orow = self.out_row(b, o, i, j);
                        for ci in 0..self.cpg {
                            let c = group * self.cpg + ci;
                            for a in 0..kh {
                                for bb in 0..kw {
                                    let xrow = self.x_row(
                                        b,
                                        c,
                                        i * self.stride.h + a,
                                        j * self.stride.w + bb,
                                    );
                                    for ct in 0..kt {
                                        f(orow, xrow, self.w_at(o, ci, a, bb, ct), ct);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 3-D cross-correlation without padding.
///
/// `input [B, Cin, H, W, T]`, `kernels [Cout, Cin/G, kh, kw, kt]`, optional
/// `bias [Cout]`. Output channel `o` belongs to group `o / (Cout/G)` and reads
/// only that group's input channels. Each output extent is
/// `(extent - k) / stride + 1`.
pub fn conv_grouped<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: Stride3,
    groups: usize,
) -> Result<Tensor<T>> {
    if input.rank() != 5 || kernels.rank() != 5 {
        return Err(shape_err!(
            "conv_grouped expects 5-D input and kernels, got {:?} and {:?}",
            input.shape(),
            kernels.shape()
        ));
    }
    let (batch, cin) = (input.shape()[0], input.shape()[1]);
    let cout = kernels.shape()[0];
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(shape_err!(
            "{groups} groups must divide Cin={cin} and Cout={cout}"
        ));
    }
    if kernels.shape()[1] != cin / groups {
        return Err(shape_err!(
            "kernels {:?} need {} input channels per group",
            kernels.shape(),
            cin / groups
        ));
    }
    if stride.h == 0 || stride.w == 0 || stride.t == 0 {
        return Err(shape_err!("stride must be positive: {stride:?}"));
    }
    let in_hwt = [input.shape()[2], input.shape()[3], input.shape()[4]];
    let k_hwt = [kernels.shape()[2], kernels.shape()[3], kernels.shape()[4]];
    let strides = [stride.h, stride.w, stride.t];
    let mut out_hwt = [0; 3];
    for d in 0..3 {
        if k_hwt[d] > in_hwt[d] {
            return Err(shape_err!(
                "kernel {:?} larger than input extent {:?}",
                k_hwt,
                in_hwt
            ));
        }
        out_hwt[d] = (in_hwt[d] - k_hwt[d]) / strides[d] + 1;
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!(
                "bias {:?} does not match Cout={cout}",
                b.shape()
            ));
        }
    }
    let geom = GroupedGeom {
        batch,
        cin,
        cout,
        cpg: cin / groups,
        opg: cout / groups,
        in_hwt,
        k_hwt,
        out_hwt,
        stride,
    };
    let t_out = out_hwt[2];
    let n_out = batch * cout * out_hwt.iter().product::<usize>();
    let mut out = vec![T::zero(); n_out];
    if let Some(b) = bias {
        for (row, chunk) in out.chunks_exact_mut(t_out).enumerate() {
            let o = (row / (out_hwt[0] * out_hwt[1])) % cout;
            chunk.fill(b.data()[o]);
        }
    }
    let (x, w) = (input.data(), kernels.data());
    let st = stride.t;
    if geom.use_gemm() {
        geom.forward_gemm(x, w, &mut out);
    } else {
        geom.for_each_tap(|orow, xrow, wi, ct| {
            let dst = &mut out[orow..orow + t_out];
            if st == 1 {
                axpy(w[wi], &x[xrow + ct..xrow + ct + t_out], dst);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d += w[wi] * x[xrow + t * st + ct];
                }
            }
        });
    }

    let mut parents = vec![input.clone(), kernels.clone()];
    parents.extend(bias.cloned());
    let mut shape = vec![batch, cout];
    shape.extend_from_slice(&out_hwt);
    Ok(Tensor::from_op(
        "conv_grouped",
        shape,
        out,
        parents,
        Box::new(move |p, _, g, needs| {
            let (x, w) = (p[0].data(), p[1].data());
            let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
            let mut gw = needs[1].then(|| vec![T::zero(); w.len()]);
            if geom.use_gemm() {
                geom.backward_gemm(x, w, g, gx.as_mut(), gw.as_mut());
            } else {
                geom.for_each_tap(|orow, xrow, wi, ct| {
                    let gr = &g[orow..orow + t_out];
                    if let Some(gx) = gx.as_mut() {
                        if st == 1 {
                            axpy(w[wi], gr, &mut gx[xrow + ct..xrow + ct + t_out]);
                        } else {
                            for (t, &gt) in gr.iter().enumerate() {
                                gx[xrow + t * st + ct] += w[wi] * gt;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[wi] += if st == 1 {
                            dot(gr, &x[xrow + ct..xrow + ct + t_out])
                        } else {
                            gr.iter()
                                .enumerate()
                                .map(|(t, &gt)| gt * x[xrow + t * st + ct])
                                .sum()
                        };
                    }
                });
            }
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut gb = vec![T::zero(); geom.cout];
                    for (row, chunk) in g.chunks_exact(t_out).enumerate() {
                        let o = (row / (geom.out_hwt[0] * geom.out_hwt[1])) % geom.cout;
                        gb[o] += chunk.iter().copied().sum::<T>();
                    }
                    gb
                }));
            }
            grads
        }),
    ))
}

/// Adds `bias[c]` to every element of channel `c` of `input [B, C, ...]`.
pub fn add_channel_bias<T: Element>(input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() < 2 || bias.shape() != [input.shape()[1]] {
        return Err(shape_err!(
            "bias {:?} does not match channels of {:?}",
            bias.shape(),
            input.shape()
        ));
    }
    let channels = input.shape()[1];
    let inner: usize = input.shape()[2..].iter().product();
    let mut out = input.to_vec();
    for (row, chunk) in out.chunks_exact_mut(inner).enumerate() {
        let b = bias.data()[row % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(Tensor::from_op(
        "add_channel_bias",
        input.shape().to_vec(),
        out,
        vec![input.clone(), bias.clone()],
        Box::new(move |_, _, g, needs| {
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); channels];
                for (row, chunk) in g.chunks_exact(inner).enumerate() {
                    gb[row % channels] += chunk.iter().copied().sum::<T>();
                }
                gb
            });
            vec![needs[0].then(|| g.to_vec()), gb]
        }),
    ))
}
