//! Convolution kernels via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Geometry of a strided, zero-padded 2-D cross-correlation over an NHWC
/// input of spatial size `h x w` with `c` channels, producing `oh x ow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds every receptive field into a row: `[n*oh*ow, kh*kw*c]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for n in 0..g.n {
        let img = &x[n * g.h * g.w * g.c..(n + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.c;
                        let off = (ky * g.kw + kx) * g.c;
                        dst[off..off + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters and sums rows back into an NHWC buffer.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.c];
    let mut row = 0;
    for n in 0..g.n {
        let img = &mut x[n * g.h * g.w * g.c..(n + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src_row = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.c;
                        let off = (ky * g.kw + kx) * g.c;
                        for (d, &s) in img[dst..dst + g.c].iter_mut().zip(&src_row[off..off + g.c]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// Stride-1 convolution without im2col. The input is zero-padded once and
/// flattened to rows of `c` values; kernel tap `(ky, kx)` then reads the
/// same rows shifted by `ky * wp + kx`, so each tap is a single GEMM over
/// every image at once. Outputs are computed on the padded grid and the
/// rows that land in the margin are dropped.
struct Shifted {
    g: ConvGeom,
    hp: usize,
    wp: usize,
    /// Rows covered by every tap without running off the end.
    m: usize,
}

impl Shifted {
    fn new(g: &ConvGeom) -> Self {
        let (hp, wp) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
        let m = g.n * hp * wp - ((g.kh - 1) * wp + g.kw - 1);
        Shifted { g: *g, hp, wp, m }
    }

    fn rows(&self) -> usize {
        self.g.n * self.hp * self.wp
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.g.kh * self.g.kw).map(move |t| (t, (t / self.g.kw) * self.wp + t % self.g.kw))
    }

    /// Padded-grid row of each output pixel, in NHW order.
    fn valid_rows(&self) -> impl Iterator<Item = usize> + '_ {
        let g = self.g;
        (0..g.n).flat_map(move |n| {
            (0..g.oh).flat_map(move |y| (0..g.ow).map(move |x| (n * self.hp + y) * self.wp + x))
        })
    }

    fn pad<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let g = self.g;
        let mut out = vec![T::zero(); self.rows() * g.c];
        for n in 0..g.n {
            for y in 0..g.h {
                let src = ((n * g.h + y) * g.w) * g.c;
                let dst = ((n * self.hp + y + g.pad) * self.wp + g.pad) * g.c;
                out[dst..dst + g.w * g.c].copy_from_slice(&x[src..src + g.w * g.c]);
            }
        }
        out
    }

    /// Inverse of [`Shifted::pad`]: keeps the interior, drops the margin.
    fn crop<T: Scalar>(&self, xp: &[T]) -> Vec<T> {
        let g = self.g;
        let mut out = Vec::with_capacity(g.n * g.h * g.w * g.c);
        for n in 0..g.n {
            for y in 0..g.h {
                let src = ((n * self.hp + y + g.pad) * self.wp + g.pad) * g.c;
                out.extend_from_slice(&xp[src..src + g.w * g.c]);
            }
        }
        out
    }
}

fn conv_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeom, usize)> {
    let [n, h, w, cin] = input.dims4()?;
    let [kh, kw, kcin, cout] = kernel.dims4().map_err(|_| {
        Error::dim(format!(
            "conv2d kernel must be [Kh,Kw,Cin,Cout], got {:?}",
            kernel.shape()
        ))
    })?;
    if kcin != cin {
        return Err(Error::dim(format!(
            "conv2d channel mismatch: input axis 3 (Cin) is {} but kernel axis 2 (Cin) is {}",
            cin, kcin
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(format!(
            "conv2d kernel must be odd-sized, got {}x{}",
            kh, kw
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv2d stride must be >= 1"));
    }
    let span_h = h + 2 * padding;
    let span_w = w + 2 * padding;
    if span_h < kh || span_w < kw {
        return Err(Error::config(format!(
            "conv2d kernel {}x{} larger than padded input {}x{}",
            kh, kw, span_h, span_w
        )));
    }
    if (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
        return Err(Error::config(format!(
            "conv2d output size is not integral for input {}x{}, kernel {}x{}, stride {}, padding {}",
            h, w, kh, kw, stride, padding
        )));
    }
    let g = ConvGeom {
        n,
        h,
        w,
        c: cin,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (span_h - kh) / stride + 1,
        ow: (span_w - kw) / stride + 1,
    };
    Ok((g, cout))
}

/// Cross-correlation of an NHWC input with a `[Kh,Kw,Cin,Cout]` kernel plus a
/// per-output-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, cout) = conv_geom(input, kernel, stride, padding)?;
    if bias.shape() != [cout] {
        return Err(Error::dim(format!(
            "conv2d bias must be [{}], got {:?}",
            cout,
            bias.shape()
        )));
    }
    let rows = g.rows();
    let patch = g.patch_len();
    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    let kmat = MatRef::new(kernel.data(), patch, cout);
    if g.is_pointwise() {
        gemm(MatRef::new(input.data(), rows, patch), kmat, &mut out, true);
    } else if g.stride == 1 {
        let sh = Shifted::new(&g);
        let xp = sh.pad(input.data());
        let mut yp = vec![T::zero(); sh.rows() * cout];
        for (tap, off) in sh.taps() {
            let a = MatRef::new(&xp[off * g.c..(off + sh.m) * g.c], sh.m, g.c);
            let k = MatRef::new(&kernel.data()[tap * g.c * cout..(tap + 1) * g.c * cout], g.c, cout);
            gemm(a, k, &mut yp[..sh.m * cout], true);
        }
        for (i, r) in sh.valid_rows().enumerate() {
            for (o, &v) in out[i * cout..(i + 1) * cout].iter_mut().zip(&yp[r * cout..(r + 1) * cout]) {
                *o += v;
            }
        }
    } else {
        let cols = im2col(input.data(), &g);
        gemm(MatRef::new(&cols, rows, patch), kmat, &mut out, true);
    }
    Tensor::new(&[g.n, g.oh, g.ow, cout], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (g, cout) = conv_geom(input, kernel, stride, padding)?;
    if grad_out.shape() != [g.n, g.oh, g.ow, cout] {
        return Err(Error::dim(format!(
            "conv2d upstream gradient shape {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.oh,
            g.ow,
            cout
        )));
    }
    let rows = g.rows();
    let patch = g.patch_len();
    let dy = MatRef::new(grad_out.data(), rows, cout);

    let mut dbias = vec![T::zero(); cout];
    for r in grad_out.data().chunks_exact(cout) {
        for (b, &v) in dbias.iter_mut().zip(r) {
            *b += v;
        }
    }

    let mut dk = vec![T::zero(); patch * cout];
    if g.stride == 1 && !g.is_pointwise() {
        let sh = Shifted::new(&g);
        let xp = sh.pad(input.data());
        let mut dyp = vec![T::zero(); sh.rows() * cout];
        for (i, r) in sh.valid_rows().enumerate() {
            dyp[r * cout..(r + 1) * cout].copy_from_slice(&grad_out.data()[i * cout..(i + 1) * cout]);
        }
        let dy_m = MatRef::new(&dyp[..sh.m * cout], sh.m, cout);
        let mut dxp = vec![T::zero(); sh.rows() * g.c];
        for (tap, off) in sh.taps() {
            let tap_len = g.c * cout;
            let a = MatRef::new(&xp[off * g.c..(off + sh.m) * g.c], sh.m, g.c);
            gemm(a.t(), dy_m, &mut dk[tap * tap_len..(tap + 1) * tap_len], false);
            let k = MatRef::new(&kernel.data()[tap * tap_len..(tap + 1) * tap_len], g.c, cout);
            gemm(dy_m, k.t(), &mut dxp[off * g.c..(off + sh.m) * g.c], true);
        }
        return Ok((
            Tensor::new(input.shape(), sh.crop(&dxp))?,
            Tensor::new(kernel.shape(), dk)?,
            Tensor::new(&[cout], dbias)?,
        ));
    }
    let mut dcols = vec![T::zero(); rows * patch];
    let kmat = MatRef::new(kernel.data(), patch, cout);
    gemm(dy, kmat.t(), &mut dcols, false);
    let dx = if g.is_pointwise() {
        gemm(MatRef::new(input.data(), rows, patch).t(), dy, &mut dk, false);
        dcols
    } else {
        let cols = im2col(input.data(), &g);
        gemm(MatRef::new(&cols, rows, patch).t(), dy, &mut dk, false);
        col2im(&dcols, &g)
    };
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(kernel.shape(), dk)?,
        Tensor::new(&[cout], dbias)?,
    ))
}

fn transpose_geom<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<(ConvGeom, usize)> {
    let [n, h, w, cin] = input.dims4()?;
    let [kh, kw, cout, kcin] = kernel.dims4().map_err(|_| {
        Error::dim(format!(
            "conv_transpose2d kernel must be [Kh,Kw,Cout,Cin], got {:?}",
            kernel.shape()
        ))
    })?;
    if kcin != cin {
        return Err(Error::dim(format!(
            "conv_transpose2d channel mismatch: input axis 3 (Cin) is {} but kernel axis 3 (Cin) is {}",
            cin, kcin
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv_transpose2d stride must be >= 1"));
    }
    // Geometry of the forward convolution this operator is the adjoint of.
    let g = ConvGeom {
        n,
        h: (h - 1) * stride + kh,
        w: (w - 1) * stride + kw,
        c: cout,
        kh,
        kw,
        stride,
        pad: 0,
        oh: h,
        ow: w,
    };
    Ok((g, cin))
}

/// Transposed convolution: the adjoint of a stride-`stride`, unpadded
/// [`conv2d`] with the same kernel memory. Output spatial size is
/// `(H-1)*stride + Kh`, i.e. `H*stride` when the kernel equals the stride.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (g, cin) = transpose_geom(input, kernel, stride)?;
    let rows = g.rows();
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); rows * patch];
    gemm(
        MatRef::new(input.data(), rows, cin),
        MatRef::new(kernel.data(), patch, cin).t(),
        &mut cols,
        false,
    );
    Tensor::new(&[g.n, g.h, g.w, g.c], col2im(&cols, &g))
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (g, cin) = transpose_geom(input, kernel, stride)?;
    if grad_out.shape() != [g.n, g.h, g.w, g.c] {
        return Err(Error::dim(format!(
            "conv_transpose2d upstream gradient shape {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.h,
            g.w,
            g.c
        )));
    }
    let rows = g.rows();
    let patch = g.patch_len();
    let cols = im2col(grad_out.data(), &g);
    let cols = MatRef::new(&cols, rows, patch);
    let mut dx = vec![T::zero(); rows * cin];
    gemm(cols, MatRef::new(kernel.data(), patch, cin), &mut dx, false);
    let mut dk = vec![T::zero(); patch * cin];
    gemm(cols.t(), MatRef::new(input.data(), rows, cin), &mut dk, false);
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(kernel.shape(), dk)?,
    ))
}
