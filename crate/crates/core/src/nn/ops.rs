//! Differentiable tensor operations that candle either lacks or runs slowly on CPU.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor};

use crate::error::Result;

type CResult<T> = candle_core::Result<T>;

fn contiguous<'a>(s: &'a CpuStorage, l: &Layout) -> CResult<&'a [f32]> {
    let CpuStorage::F32(v) = s else {
        bail!("expected f32 storage")
    };
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => bail!("expected contiguous layout"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geom {
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn out(&self, i: usize) -> usize {
        (i + 2 * self.pad - self.k) / self.stride + 1
    }
}

fn im2col(x: &[f32], c: usize, h: usize, w: usize, g: Geom, ho: usize, wo: usize, cols: &mut [f32]) {
    let (k, hw) = (g.k, ho * wo);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..][..w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], c: usize, h: usize, w: usize, g: Geom, ho: usize, wo: usize, x: &mut [f32]) {
    let (k, hw) = (g.k, ho * wo);
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * h + iy as usize) * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a * b + beta * c` with explicit strides, row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every caller passes slices covering the m*k, k*n and m*n extents
    // implied by the strides.
    unsafe {
        matrixmultiply::sgemm(
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

struct Conv(Geom);

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "conv2d-im2col"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let x = contiguous(s1, l1)?;
        let wt = contiguous(s2, l2)?;
        let (b, c, h, w) = l1.shape().dims4()?;
        let (co, ci, k, k2) = l2.shape().dims4()?;
        if c != ci || k != k2 || k != self.0.k {
            bail!("conv2d: input {:?} incompatible with kernel {:?}", l1.shape(), l2.shape());
        }
        let g = self.0;
        if h + 2 * g.pad < k || w + 2 * g.pad < k {
            bail!("conv2d: input {h}x{w} smaller than kernel {k}");
        }
        let (ho, wo) = (g.out(h), g.out(w));
        let (kk, hw) = (c * k * k, ho * wo);
        let mut cols = vec![0f32; kk * hw];
        let mut out = vec![0f32; b * co * hw];
        for bi in 0..b {
            im2col(&x[bi * c * h * w..][..c * h * w], c, h, w, g, ho, wo, &mut cols);
            let o = &mut out[bi * co * hw..][..co * hw];
            gemm(co, kk, hw, wt, kk as isize, 1, &cols, hw as isize, 1, 0.0, o);
        }
        Ok((CpuStorage::F32(out), Shape::from((b, co, ho, wo))))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let g = grad.contiguous()?;
        let dx = g.apply_op2_no_bwd(&w.contiguous()?, &ConvGradInput(self.0, x.dims4()?))?;
        let dw = x
            .contiguous()?
            .apply_op2_no_bwd(&g, &ConvGradWeight(self.0, w.dims4()?))?;
        Ok((Some(dx), Some(dw)))
    }
}

struct ConvGradInput(Geom, (usize, usize, usize, usize));

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let gy = contiguous(s1, l1)?;
        let wt = contiguous(s2, l2)?;
        let (b, c, h, w) = self.1;
        let (co, _, k, _) = l2.shape().dims4()?;
        let (_, _, ho, wo) = l1.shape().dims4()?;
        let (kk, hw) = (c * k * k, ho * wo);
        let mut cols = vec![0f32; kk * hw];
        let mut dx = vec![0f32; b * c * h * w];
        for bi in 0..b {
            let gyb = &gy[bi * co * hw..][..co * hw];
            gemm(kk, co, hw, wt, 1, kk as isize, gyb, hw as isize, 1, 0.0, &mut cols);
            col2im(&cols, c, h, w, self.0, ho, wo, &mut dx[bi * c * h * w..][..c * h * w]);
        }
        Ok((CpuStorage::F32(dx), Shape::from(self.1)))
    }
}

struct ConvGradWeight(Geom, (usize, usize, usize, usize));

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "conv2d-grad-weight"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let x = contiguous(s1, l1)?;
        let gy = contiguous(s2, l2)?;
        let (b, c, h, w) = l1.shape().dims4()?;
        let (co, _, k, _) = self.1;
        let (_, _, ho, wo) = l2.shape().dims4()?;
        let (kk, hw) = (c * k * k, ho * wo);
        let mut cols = vec![0f32; kk * hw];
        let mut dw = vec![0f32; co * kk];
        for bi in 0..b {
            im2col(&x[bi * c * h * w..][..c * h * w], c, h, w, self.0, ho, wo, &mut cols);
            let gyb = &gy[bi * co * hw..][..co * hw];
            gemm(co, hw, kk, gyb, hw as isize, 1, &cols, 1, hw as isize, 1.0, &mut dw);
        }
        Ok((CpuStorage::F32(dw), Shape::from(self.1)))
    }
}

/// Zero-padded 2-D convolution of `x` (B, C, H, W) with `w` (Co, C, K, K).
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (_, _, k, _) = w.dims4()?;
    let op = Conv(Geom { k, stride, pad });
    Ok(x.contiguous()?.apply_op2(&w.contiguous()?, op)?)
}

/// Forward value of `target`, gradient of `source`. Used for straight-through
/// rounding and clamping so the forward pass is exactly the target.
struct StraightThrough;

impl CustomOp2 for StraightThrough {
    fn name(&self) -> &'static str {
        "straight-through"
    }

    fn cpu_fwd(
        &self,
        _s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        if l1.shape() != l2.shape() {
            bail!("straight-through: shape mismatch {:?} vs {:?}", l1.shape(), l2.shape());
        }
        let t = contiguous(s2, l2)?;
        Ok((CpuStorage::F32(t.to_vec()), l2.shape().clone()))
    }

    fn bwd(
        &self,
        _source: &Tensor,
        _target: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        Ok((Some(grad.clone()), None))
    }
}

pub fn straight_through(source: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(source.contiguous()?.apply_op2(&target.detach().contiguous()?, StraightThrough)?)
}

/// Continuous CDFs evaluated in f64 with gradients given by the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cdf {
    StdNormal,
    StdLogistic,
}

impl Cdf {
    fn cdf(self, x: f64) -> f64 {
        match self {
            Cdf::StdNormal => 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2),
            Cdf::StdLogistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + libm::exp(-x))
                } else {
                    let e = libm::exp(x);
                    e / (1.0 + e)
                }
            }
        }
    }

    fn pdf(self, x: f64) -> f64 {
        match self {
            Cdf::StdNormal => libm::exp(-0.5 * x * x) / (2.0 * std::f64::consts::PI).sqrt(),
            Cdf::StdLogistic => {
                let e = libm::exp(-x.abs());
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }
}

struct CdfOp(Cdf, bool);

impl CustomOp1 for CdfOp {
    fn name(&self) -> &'static str {
        if self.1 {
            "density"
        } else {
            "cdf"
        }
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let x = contiguous(s, l)?;
        let f = |v: &f32| {
            let v = *v as f64;
            (if self.1 { self.0.pdf(v) } else { self.0.cdf(v) }) as f32
        };
        Ok((CpuStorage::F32(x.iter().map(f).collect()), l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        if self.1 {
            bail!("density has no gradient");
        }
        let d = arg.contiguous()?.apply_op1_no_bwd(&CdfOp(self.0, true))?;
        Ok(Some(grad.mul(&d)?))
    }
}

/// Standard normal CDF, accurate deep in the lower tail.
pub fn normal_cdf(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(CdfOp(Cdf::StdNormal, false))?)
}

/// Standard logistic CDF (the sigmoid).
pub fn logistic_cdf(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(CdfOp(Cdf::StdLogistic, false))?)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + ((x.abs()?.neg()?.exp()? + 1.0)?.log()?))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// (B, C·r², H, W) to (B, C, H·r, W·r); channel `c·r² + i·r + j` lands at offset
/// `(i, j)` of each output block.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c % (r * r) != 0 {
        return Err(crate::error::shape_err!("pixel_shuffle: {c} channels not divisible by {}", r * r));
    }
    let co = c / (r * r);
    Ok(x.reshape((b, co, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, co, h * r, w * r))?)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, r, w, r))?
        .contiguous()?
        .reshape((b, c, h * r, w * r))?)
}

/// Non-overlapping 2×2 average pooling.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(crate::error::shape_err!("avg_pool2: odd spatial dims {h}x{w}"));
    }
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.mean(5)?.mean(3)?)
}

/// Log-softmax over dim 1 of an NCHW tensor.
pub fn log_softmax_channels(x: &Tensor) -> Result<Tensor> {
    let lse = x.log_sum_exp(1)?.unsqueeze(1)?;
    Ok(x.broadcast_sub(&lse)?)
}
