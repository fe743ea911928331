//! 2-D cross-correlation via im2col and `f64` GEMM.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{dims4, Tensor};

/// A convolution layer: kernel, optional bias, stride and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out_ch, in_ch, kH, kW)`
    pub weight: Tensor,
    /// `(out_ch)`
    pub bias: Option<Tensor>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

pub type ConvParams = Conv2d;

impl Conv2d {
    /// Kernel drawn from a fan-in scaled normal (`std = sqrt(2 / fan_in)`),
    /// bias zero.
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv stride must be at least 1"));
        }
        let fan_in = in_ch * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let w = (0..out_ch * fan_in)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        Ok(Self {
            weight: Tensor::param(w, &[out_ch, in_ch, kernel, kernel])?,
            bias: if bias {
                Some(Tensor::param(vec![0.0; out_ch], &[out_ch])?)
            } else {
                None
            },
            stride: (stride, stride),
            padding: (padding, padding),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

/// Output extent of one spatial axis, or `None` if the window does not fit.
pub fn conv_out_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Unfolds one image `(cin, h, w)` into a `(K, P)` matrix.
    fn im2col(&self, img: &[f32], cols: &mut [f64]) {
        let p = self.p();
        if self.is_pointwise() {
            cols.iter_mut().zip(img).for_each(|(c, &v)| *c = v as f64);
            return;
        }
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.ho {
                        let y = (oy * self.sh + i) as isize - self.ph as isize;
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if y < 0 || y >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &img[(c * self.h + y as usize) * self.w..][..self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let x = (ox * self.sw + j) as isize - self.pw as isize;
                            *d = if x < 0 || x >= self.w as isize {
                                0.0
                            } else {
                                src[x as usize] as f64
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatters a `(K, P)` column gradient back onto an image gradient.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.p();
        if self.is_pointwise() {
            img.iter_mut().zip(cols).for_each(|(d, &v)| *d += v);
            return;
        }
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.ho {
                        let y = (oy * self.sh + i) as isize - self.ph as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut img[(c * self.h + y as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let x = (ox * self.sw + j) as isize - self.pw as isize;
                            if x >= 0 && (x as usize) < self.w {
                                dst[x as usize] += cols[row + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C (m×n) = A (m×k) · B (k×n)`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: extents and strides describe in-bounds views of the slices above.
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `input (B, Cin, H, W)` with `weight (Cout, Cin, kH, kW)`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let (b, cin, h, w) = dims4(input, "conv2d")?;
    let (cout, wcin, kh, kw) = dims4(weight, "conv2d")?;
    if wcin != cin {
        return Err(Error::shape("conv2d", input.shape(), weight.shape()));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::shape("conv2d bias", bias.shape(), &[cout]));
        }
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(Error::invalid("conv stride must be at least 1"));
    }
    let (Some(ho), Some(wo)) = (
        conv_out_extent(h, kh, stride.0, padding.0),
        conv_out_extent(w, kw, stride.1, padding.1),
    ) else {
        return Err(Error::shape("conv2d (kernel larger than padded input)", input.shape(), weight.shape()));
    };
    let geo = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        ho,
        wo,
    };
    let (k, p) = (geo.k(), geo.p());
    let w64: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
    let bias_vals: Option<Vec<f32>> = bias.map(|t| t.to_vec());

    let mut out = vec![0.0f32; b * cout * p];
    out.par_chunks_mut(cout * p)
        .zip(input.data().par_chunks(cin * h * w))
        .for_each(|(out_b, img)| {
            let mut cols = vec![0.0f64; k * p];
            geo.im2col(img, &mut cols);
            let mut acc = vec![0.0f64; cout * p];
            gemm(cout, k, p, &w64, (k as isize, 1), &cols, (p as isize, 1), &mut acc);
            for o in 0..cout {
                let bo = bias_vals.as_ref().map_or(0.0, |bv| bv[o] as f64);
                for (d, &v) in out_b[o * p..(o + 1) * p].iter_mut().zip(&acc[o * p..(o + 1) * p]) {
                    *d = (v + bo) as f32;
                }
            }
        });

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(bias) = bias {
        inputs.push(bias.clone());
    }
    let has_bias = bias.is_some();
    let (xc, wc) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        out,
        vec![b, cout, ho, wo],
        "conv2d",
        inputs,
        Box::new(move |g, _| {
            let need_x = xc.requires_grad();
            let need_w = wc.requires_grad();
            let w64: Vec<f64> = wc.data().iter().map(|&v| v as f64).collect();
            // Per-image partials, reduced in batch order for determinism.
            let partials: Vec<(Vec<f32>, Vec<f64>, Vec<f64>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let g64: Vec<f64> = g[bi * cout * p..(bi + 1) * cout * p]
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    let gb: Vec<f64> = if has_bias {
                        (0..cout).map(|o| g64[o * p..(o + 1) * p].iter().sum()).collect()
                    } else {
                        Vec::new()
                    };
                    let mut gw = Vec::new();
                    let mut gx = Vec::new();
                    if need_w || need_x {
                        let mut cols = vec![0.0f64; k * p];
                        if need_w {
                            geo.im2col(&xc.data()[bi * cin * h * w..(bi + 1) * cin * h * w], &mut cols);
                            gw = vec![0.0f64; cout * k];
                            // gW = G (cout×p) · colsᵀ (p×k)
                            gemm(cout, p, k, &g64, (p as isize, 1), &cols, (1, p as isize), &mut gw);
                        }
                        if need_x {
                            // gcols = Wᵀ (k×cout) · G (cout×p)
                            gemm(k, cout, p, &w64, (1, k as isize), &g64, (p as isize, 1), &mut cols);
                            let mut img = vec![0.0f64; cin * h * w];
                            geo.col2im(&cols, &mut img);
                            gx = img.into_iter().map(|v| v as f32).collect();
                        }
                    }
                    (gx, gw, gb)
                })
                .collect();
            let mut grad_x = need_x.then(|| Vec::with_capacity(b * cin * h * w));
            let mut grad_w = need_w.then(|| vec![0.0f64; cout * k]);
            let mut grad_b = has_bias.then(|| vec![0.0f64; cout]);
            for (gx, gw, gb) in partials {
                if let Some(acc) = grad_x.as_mut() {
                    acc.extend_from_slice(&gx);
                }
                if let Some(acc) = grad_w.as_mut() {
                    acc.iter_mut().zip(&gw).for_each(|(a, v)| *a += v);
                }
                if let Some(acc) = grad_b.as_mut() {
                    acc.iter_mut().zip(&gb).for_each(|(a, v)| *a += v);
                }
            }
            let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
            let mut grads = vec![grad_x, grad_w.map(to32)];
            if has_bias {
                grads.push(grad_b.map(to32));
            }
            grads
        }),
    ))
}
