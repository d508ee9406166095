//! Primitive neural operations: convolution, activations, pixel shuffling,
//! residual blocks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{ConvShape, ParamSource};
use crate::tensor::{Element, Tensor};

/// Output channels handed to one GEMM call. Fixed so the reduction order
/// never depends on the thread count.
const GEMM_ROW_CHUNK: usize = 16;

/// Convolution parameters. Kernel layout is `(C_out, C_in, k_h, k_w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec<T: Element = f32> {
    kernel: Tensor<T>,
    bias: Option<Vec<T>>,
    stride: usize,
    padding: (usize, usize),
    kernel64: Vec<f64>,
}

impl<T: Element> ConvSpec<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Vec<T>>, stride: usize, padding: (usize, usize)) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if let Some(b) = &bias {
            if b.len() != kernel.batch() {
                return Err(Error::invalid(
                    "conv2d",
                    format!(
                        "bias length {} does not match {} output channels",
                        b.len(),
                        kernel.batch()
                    ),
                ));
            }
        }
        let kernel64 = kernel.to_f64_vec();
        Ok(ConvSpec {
            kernel,
            bias,
            stride,
            padding,
            kernel64,
        })
    }

    /// Stride 1, "same" padding for odd kernels.
    pub fn same(kernel: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self> {
        let (kh, kw) = kernel.spatial();
        Self::new(kernel, bias, 1, (kh / 2, kw / 2))
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }
    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }
    pub fn c_out(&self) -> usize {
        self.kernel.batch()
    }
    pub fn c_in(&self) -> usize {
        self.kernel.channels()
    }
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel.spatial();
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("input {h}×{w} with padding {ph}×{pw} is smaller than kernel {kh}×{kw}"),
            ));
        }
        Ok(((h + 2 * ph - kh) / self.stride + 1, (w + 2 * pw - kw) / self.stride + 1))
    }

    pub fn cast<U: Element>(&self) -> ConvSpec<U> {
        ConvSpec {
            kernel: self.kernel.cast(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::from_f64(v.to_f64())).collect()),
            stride: self.stride,
            padding: self.padding,
            kernel64: self.kernel64.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.c_in() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x.shape(),
                right: self.kernel.shape(),
            });
        }
        Ok(())
    }
}

/// Lays out receptive fields as columns: row `(ci, ky, kx)`, column `(oy, ox)`.
fn im2col<T: Element>(
    plane_stack: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (ph, pw): (usize, usize),
    (ho, wo): (usize, usize),
    col: &mut [f64],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &plane_stack[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ci * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - ph as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pw as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize].to_f64()
                        };
                    }
                }
            }
        }
    }
}

/// `acc (m×n) = a (m×k) · b (k×n)`, row-major, split over fixed row chunks.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], acc: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(acc.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    acc.par_chunks_mut(GEMM_ROW_CHUNK * n)
        .enumerate()
        .for_each(|(chunk, out)| {
            let row0 = chunk * GEMM_ROW_CHUNK;
            let rows = out.len() / n;
            let a_rows = &a[row0 * k..(row0 + rows) * k];
            // SAFETY: slices bound every access; strides describe dense
            // row-major matrices of the stated sizes.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    a_rows.as_ptr(),
                    k as isize,
                    1,
                    b.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d<T: Element>(x: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    spec.check_input(x)?;
    let [n, c, h, w] = x.shape();
    let (kh, kw) = spec.kernel.spatial();
    let (ho, wo) = spec.output_size(h, w)?;
    let c_out = spec.c_out();
    let k = c * kh * kw;
    let p = ho * wo;
    let pointwise = kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == (0, 0);

    let mut out = Vec::with_capacity(n * c_out * p);
    let mut col = vec![0.0f64; k * p];
    let mut acc = vec![0.0f64; c_out * p];
    for ni in 0..n {
        let input = &x.data()[ni * c * h * w..(ni + 1) * c * h * w];
        if pointwise {
            for (d, s) in col.iter_mut().zip(input) {
                *d = s.to_f64();
            }
        } else {
            im2col(
                input,
                (c, h, w),
                (kh, kw),
                spec.stride,
                spec.padding,
                (ho, wo),
                &mut col,
            );
        }
        gemm(c_out, k, p, &spec.kernel64, &col, &mut acc);
        for co in 0..c_out {
            let b = spec.bias.as_ref().map_or(0.0, |b| b[co].to_f64());
            out.extend(acc[co * p..(co + 1) * p].iter().map(|&v| T::from_f64(v + b)));
        }
    }
    Tensor::from_vec([n, c_out, ho, wo], out)
}

/// Gradients of [`conv2d`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Element> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

/// Backward pass of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Element>(x: &Tensor<T>, spec: &ConvSpec<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    spec.check_input(x)?;
    let [n, c, h, w] = x.shape();
    let (kh, kw) = spec.kernel.spatial();
    let (ho, wo) = spec.output_size(h, w)?;
    let c_out = spec.c_out();
    upstream.expect_shape("conv2d_backward", [n, c_out, ho, wo])?;
    let (ph, pw) = spec.padding;
    let s = spec.stride;

    let mut gx = vec![0.0f64; x.len()];
    let mut gk = vec![0.0f64; spec.kernel.len()];
    let mut gb = vec![0.0f64; c_out];
    let xd = x.to_f64_vec();
    let ud = upstream.to_f64_vec();
    for ni in 0..n {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = ud[((ni * c_out + co) * ho + oy) * wo + ox];
                    if g == 0.0 {
                        continue;
                    }
                    gb[co] += g;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * s + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * s + kx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                let ki = ((co * c + ci) * kh + ky) * kw + kx;
                                gk[ki] += g * xd[xi];
                                gx[xi] += g * spec.kernel64[ki];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(x.shape(), gx.into_iter().map(T::from_f64).collect())?,
        kernel: Tensor::from_vec(spec.kernel.shape(), gk.into_iter().map(T::from_f64).collect())?,
        bias: spec.bias.as_ref().map(|_| gb.into_iter().map(T::from_f64).collect()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

/// Logistic function in `f64`, numerically stable for large `|v|`.
#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Elementwise activation. Sigmoid results are kept strictly inside
/// `(0, 1)` at the storage precision.
pub fn activate<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v.to_f64() > 0.0 { v } else { T::ZERO }),
        Activation::Tanh => x.map(|v| T::from_f64(v.to_f64().tanh())),
        Activation::Sigmoid => x.map(|v| {
            let s = T::from_f64(sigmoid(v.to_f64()));
            if s.to_f64() <= 0.0 {
                T::from_f64(T::SMALLEST_POSITIVE)
            } else if s.to_f64() >= 1.0 {
                T::from_f64(T::BELOW_ONE)
            } else {
                s
            }
        }),
    }
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    activate(x, Activation::Relu)
}

/// `(N, C, H, W) → (N, C·r², H/r, W/r)`; output channel `c·r² + dy·r + dx`
/// holds input pixel `(y·r + dy, x·r + dx)` of channel `c`.
pub fn pixel_shuffle_down<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::invalid(
            "pixel_shuffle_down",
            format!("spatial size {h}×{w} is not divisible by factor {r}"),
        ));
    }
    let (ho, wo) = (h / r, w / r);
    Ok(Tensor::from_fn([n, c * r * r, ho, wo], |ni, co, y, xo| {
        let ci = co / (r * r);
        let sub = co % (r * r);
        x.at(ni, ci, y * r + sub / r, xo * r + sub % r)
    }))
}

/// Exact inverse of [`pixel_shuffle_down`].
pub fn pixel_shuffle_up<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::invalid(
            "pixel_shuffle_up",
            format!("{c} channels are not divisible by factor² = {}", r * r),
        ));
    }
    Ok(Tensor::from_fn([n, c / (r * r), h * r, w * r], |ni, co, y, xo| {
        let sub = (y % r) * r + xo % r;
        x.at(ni, co * r * r + sub, y / r, xo / r)
    }))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Element>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, h * factor, w * factor], |ni, ci, y, xo| {
        x.at(ni, ci, y / factor, xo / factor)
    })
}

/// `Conv3 → ReLU → Conv3`, added onto the input.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

impl ResBlock {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, channels: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: src.conv(&format!("{prefix}/conv1"), ConvShape::same(channels, channels, 3))?,
            conv2: src.conv(&format!("{prefix}/conv2"), ConvShape::same(channels, channels, 3))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = relu(&conv2d(x, &self.conv1)?);
        conv2d(&h, &self.conv2)?.add(x)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }
}

/// A cascade of [`ResBlock`]s.
#[derive(Clone, Debug)]
pub struct ResStack {
    pub blocks: Vec<ResBlock>,
}

impl ResStack {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, channels: usize, n: usize) -> Result<Self> {
        let blocks = (0..n)
            .map(|i| ResBlock::new(src, &format!("{prefix}/resb{i}"), channels))
            .collect::<Result<_>>()?;
        Ok(ResStack { blocks })
    }

    pub fn channels(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.conv1.c_in())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if let Some(c) = self.channels() {
            x.expect_channels("resb_stack", c)?;
        }
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(ResBlock::param_count).sum()
    }
}

/// Densely connected `Conv3 + ReLU` layers, a `Conv1` local fusion and a
/// local residual connection.
#[derive(Clone, Debug)]
pub struct ResidualDenseBlock {
    pub layers: Vec<ConvSpec>,
    pub fusion: ConvSpec,
}

impl ResidualDenseBlock {
    pub fn new(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels: usize,
        growth: usize,
        n_layers: usize,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| {
                src.conv(
                    &format!("{prefix}/conv{i}"),
                    ConvShape::same(channels + i * growth, growth, 3),
                )
            })
            .collect::<Result<_>>()?;
        let fusion = src.conv(
            &format!("{prefix}/fusion"),
            ConvShape::same(channels + n_layers * growth, channels, 1),
        )?;
        Ok(ResidualDenseBlock { layers, fusion })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_channels("residual_dense_block", self.fusion.c_out())?;
        let mut dense = x.clone();
        for layer in &self.layers {
            let h = relu(&conv2d(&dense, layer)?);
            dense = Tensor::cat(&[&dense, &h])?;
        }
        conv2d(&dense, &self.fusion)?.add(x)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvSpec::param_count).sum::<usize>() + self.fusion.param_count()
    }
}
