use super::gemm::{sgemm, View};
use super::{join_name, missing_cache, Ctx, Layer, Param, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

/// Target im2col buffer size in floats; bounds scratch memory per call.
const COL_CHUNK: usize = 1 << 20;

/// 2-D convolution over NCHW input with square kernel, symmetric zero
/// padding and grouped channels. Weight layout `[out, in/groups, k, k]`.
pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    cache: Option<Tensor>,
}

#[derive(Clone, Copy)]
struct Window {
    kernel: usize,
    stride: usize,
    padding: usize,
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Window {
    /// Rows `(c, ky, kx)`, columns output positions of rows `oy0..oy1`.
    fn im2col(&self, x: &[f32], channels: usize, g: &Geometry, oy0: usize, oy1: usize, col: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let nc = (oy1 - oy0) * g.wo;
        for c in 0..channels {
            let plane = &x[c * g.h * g.w..][..g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * nc..][..nc];
                    for (r, oy) in (oy0..oy1).enumerate() {
                        let dst = &mut row[r * g.wo..][..g.wo];
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], channels: usize, g: &Geometry, oy0: usize, oy1: usize, dx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let nc = (oy1 - oy0) * g.wo;
        for c in 0..channels {
            let plane = &mut dx[c * g.h * g.w..][..g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * nc..][..nc];
                    for (r, oy) in (oy0..oy1).enumerate() {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &row[r * g.wo..][..g.wo];
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn pad_plane(&self, plane: &[f32], g: &Geometry, padded: &mut Vec<f32>) -> usize {
        let p = self.padding;
        let wp = g.w + 2 * p;
        padded.clear();
        padded.resize((g.h + 2 * p) * wp, 0.0);
        for y in 0..g.h {
            padded[(y + p) * wp + p..][..g.w].copy_from_slice(&plane[y * g.w..][..g.w]);
        }
        wp
    }
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        assert!(kernel >= 1 && stride >= 1);
        let weight = Param::new(Tensor::zeros(&[out_channels, in_channels / groups, kernel, kernel]));
        Conv2d {
            weight,
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]))),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            cache: None,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> Option<&mut Param> {
        self.bias.as_mut()
    }

    pub fn weight_shape(&self) -> &[usize] {
        self.weight.value.shape()
    }

    fn window(&self) -> Window {
        Window {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        if x.rank() != 4 || x.shape()[1] != self.in_channels {
            return Err(Error::Contract(format!(
                "conv expects (N, {}, H, W), got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let (n, _, h, w) = x.dims4();
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Contract(format!(
                "input {h}x{w} too small for kernel {}",
                self.kernel
            )));
        }
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        Ok(Geometry { n, h, w, ho, wo })
    }

    fn rows_per_chunk(&self, wo: usize) -> usize {
        let k = (self.in_channels / self.groups) * self.kernel * self.kernel;
        (COL_CHUNK / (k * wo).max(1)).max(1)
    }

    fn forward_gemm(&self, x: &Tensor, g: &Geometry, out: &mut [f32]) {
        let win = self.window();
        let cig = self.in_channels / self.groups;
        let cog = self.out_channels / self.groups;
        let kdim = cig * self.kernel * self.kernel;
        let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
        let weight = self.weight.value.data();
        let rows = self.rows_per_chunk(g.wo);
        let mut col = Vec::new();
        for n in 0..g.n {
            for grp in 0..self.groups {
                let xg = &x.data()[(n * self.in_channels + grp * cig) * hw_in..][..cig * hw_in];
                let wg = &weight[grp * cog * kdim..][..cog * kdim];
                let yg = &mut out[(n * self.out_channels + grp * cog) * hw_out..][..cog * hw_out];
                if self.is_pointwise() {
                    sgemm(cog, kdim, hw_out, View::row_major(wg, kdim), View::row_major(xg, hw_in), yg, hw_out, 0.0);
                    continue;
                }
                let mut oy0 = 0;
                while oy0 < g.ho {
                    let oy1 = (oy0 + rows).min(g.ho);
                    let nc = (oy1 - oy0) * g.wo;
                    col.resize(kdim * nc, 0.0);
                    win.im2col(xg, cig, g, oy0, oy1, &mut col);
                    sgemm(
                        cog,
                        kdim,
                        nc,
                        View::row_major(wg, kdim),
                        View::row_major(&col, nc),
                        &mut yg[oy0 * g.wo..],
                        hw_out,
                        0.0,
                    );
                    oy0 = oy1;
                }
            }
        }
    }

    fn forward_depthwise(&self, x: &Tensor, g: &Geometry, out: &mut [f32]) {
        let win = self.window();
        let (k, s) = (self.kernel, self.stride);
        let weight = self.weight.value.data();
        let mut padded = Vec::new();
        for n in 0..g.n {
            for c in 0..self.in_channels {
                let plane = &x.data()[(n * self.in_channels + c) * g.h * g.w..][..g.h * g.w];
                let wp = win.pad_plane(plane, g, &mut padded);
                let wc = &weight[c * k * k..][..k * k];
                let y = &mut out[(n * self.out_channels + c) * g.ho * g.wo..][..g.ho * g.wo];
                y.fill(0.0);
                for oy in 0..g.ho {
                    let out_row = &mut y[oy * g.wo..][..g.wo];
                    for ky in 0..k {
                        let in_row = &padded[(oy * s + ky) * wp..][..wp];
                        for kx in 0..k {
                            let wv = wc[ky * k + kx];
                            if s == 1 {
                                for (o, i) in out_row.iter_mut().zip(&in_row[kx..kx + g.wo]) {
                                    *o += wv * i;
                                }
                            } else {
                                for (ox, o) in out_row.iter_mut().enumerate() {
                                    *o += wv * in_row[ox * s + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_depthwise(&mut self, x: &Tensor, g: &Geometry, dy: &Tensor, dx: &mut [f32]) {
        let win = self.window();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let weight = self.weight.value.data().to_vec();
        let mut dw = self.weight.grad_mut();
        let mut padded = Vec::new();
        let mut dpad = Vec::new();
        for n in 0..g.n {
            for c in 0..self.in_channels {
                let plane = &x.data()[(n * self.in_channels + c) * g.h * g.w..][..g.h * g.w];
                let wp = win.pad_plane(plane, g, &mut padded);
                dpad.clear();
                dpad.resize(padded.len(), 0.0);
                let wc = &weight[c * k * k..][..k * k];
                let gy = &dy.data()[(n * self.out_channels + c) * g.ho * g.wo..][..g.ho * g.wo];
                let mut dwc = vec![0.0f32; k * k];
                for oy in 0..g.ho {
                    let g_row = &gy[oy * g.wo..][..g.wo];
                    for ky in 0..k {
                        let base = (oy * s + ky) * wp;
                        for kx in 0..k {
                            let wv = wc[ky * k + kx];
                            let mut acc = 0.0f32;
                            if s == 1 {
                                let in_row = &padded[base + kx..][..g.wo];
                                let d_row = &mut dpad[base + kx..][..g.wo];
                                for ((gv, iv), dv) in g_row.iter().zip(in_row).zip(d_row) {
                                    acc += gv * iv;
                                    *dv += wv * gv;
                                }
                            } else {
                                for (ox, gv) in g_row.iter().enumerate() {
                                    let idx = base + ox * s + kx;
                                    acc += gv * padded[idx];
                                    dpad[idx] += wv * gv;
                                }
                            }
                            dwc[ky * k + kx] += acc;
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    for (d, v) in dw[c * k * k..][..k * k].iter_mut().zip(&dwc) {
                        *d += v;
                    }
                }
                let dplane = &mut dx[(n * self.in_channels + c) * g.h * g.w..][..g.h * g.w];
                for y in 0..g.h {
                    dplane[y * g.w..][..g.w].copy_from_slice(&dpad[(y + p) * wp + p..][..g.w]);
                }
            }
        }
    }

    fn backward_gemm(&mut self, x: &Tensor, g: &Geometry, dy: &Tensor, dx: &mut [f32]) {
        let win = self.window();
        let cig = self.in_channels / self.groups;
        let cog = self.out_channels / self.groups;
        let kdim = cig * self.kernel * self.kernel;
        let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
        let rows = self.rows_per_chunk(g.wo);
        let pointwise = self.is_pointwise();
        let weight = self.weight.value.data().to_vec();
        let mut dw = self.weight.grad_mut();
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for n in 0..g.n {
            for grp in 0..self.groups {
                let xg = &x.data()[(n * self.in_channels + grp * cig) * hw_in..][..cig * hw_in];
                let wg = &weight[grp * cog * kdim..][..cog * kdim];
                let gyg = &dy.data()[(n * self.out_channels + grp * cog) * hw_out..][..cog * hw_out];
                let dxg = &mut dx[(n * self.in_channels + grp * cig) * hw_in..][..cig * hw_in];
                if pointwise {
                    if let Some(dw) = dw.as_deref_mut() {
                        let dwg = &mut dw[grp * cog * kdim..][..cog * kdim];
                        sgemm(cog, hw_out, kdim, View::row_major(gyg, hw_out), View::transposed(xg, hw_in), dwg, kdim, 1.0);
                    }
                    sgemm(kdim, cog, hw_in, View::transposed(wg, kdim), View::row_major(gyg, hw_out), dxg, hw_in, 0.0);
                    continue;
                }
                let mut oy0 = 0;
                while oy0 < g.ho {
                    let oy1 = (oy0 + rows).min(g.ho);
                    let nc = (oy1 - oy0) * g.wo;
                    let gy_chunk = View {
                        data: &gyg[oy0 * g.wo..],
                        rs: hw_out,
                        cs: 1,
                    };
                    if let Some(dw) = dw.as_deref_mut() {
                        col.resize(kdim * nc, 0.0);
                        win.im2col(xg, cig, g, oy0, oy1, &mut col);
                        let dwg = &mut dw[grp * cog * kdim..][..cog * kdim];
                        sgemm(cog, nc, kdim, gy_chunk, View::transposed(&col, nc), dwg, kdim, 1.0);
                    }
                    dcol.resize(kdim * nc, 0.0);
                    sgemm(kdim, cog, nc, View::transposed(wg, kdim), gy_chunk, &mut dcol, nc, 0.0);
                    win.col2im(&dcol, cig, g, oy0, oy1, dxg);
                    oy0 = oy1;
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let g = self.geometry(&x)?;
        let mut out = Tensor::zeros(&[g.n, self.out_channels, g.ho, g.wo]);
        if self.is_depthwise() {
            self.forward_depthwise(&x, &g, out.data_mut());
        } else {
            self.forward_gemm(&x, &g, out.data_mut());
        }
        if let Some(b) = &self.bias {
            let hw = g.ho * g.wo;
            for (i, plane) in out.data_mut().chunks_mut(hw.max(1)).enumerate() {
                let bv = b.value.data()[i % self.out_channels];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        self.cache = ctx.is_train().then_some(x);
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        let g = self.geometry(&x)?;
        if grad.shape() != [g.n, self.out_channels, g.ho, g.wo] {
            return Err(Error::Contract(format!(
                "conv backward: gradient shape {:?} does not match output",
                grad.shape()
            )));
        }
        if let Some(db) = self.bias.as_mut().and_then(|b| b.grad_mut()) {
            let hw = g.ho * g.wo;
            for (i, plane) in grad.data().chunks(hw.max(1)).enumerate() {
                db[i % self.out_channels] += plane.iter().sum::<f32>();
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        if self.is_depthwise() {
            self.backward_depthwise(&x, &g, &grad, dx.data_mut());
        } else {
            self.backward_gemm(&x, &g, &grad, dx.data_mut());
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join_name(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join_name(prefix, "bias"), Slot::Param(b));
        }
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        f(&join_name(prefix, "weight"), SlotRef::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join_name(prefix, "bias"), SlotRef::Param(b));
        }
    }
}
