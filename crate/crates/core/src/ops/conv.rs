//! 2-D cross-correlation with zero padding, lowered to GEMM via im2col.

use crate::error::{FcnaError, Result};
use crate::ops::par_batches;
use crate::tensor::{shape_str, Scalar, Tensor};

/// Kernel, stride and padding along one spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AxisGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeometry {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry { kernel: (kernel, kernel), stride: (stride, stride), pad: (pad, pad) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(FcnaError::InvalidGeometry(format!("kernel and stride must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn rows(&self) -> AxisGeometry {
        AxisGeometry { kernel: self.kernel.0, stride: self.stride.0, pad: self.pad.0 }
    }

    pub fn cols(&self) -> AxisGeometry {
        AxisGeometry { kernel: self.kernel.1, stride: self.stride.1, pad: self.pad.1 }
    }

    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn out_dims(&self, in_hw: (usize, usize), layer: &str) -> Result<(usize, usize)> {
        Ok((conv_out_extent(in_hw.0, self.rows(), layer)?, conv_out_extent(in_hw.1, self.cols(), layer)?))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }
}

/// Number of valid filter placements along one axis:
/// `floor((in + 2·pad − kernel) / stride) + 1`.
pub fn conv_out_extent(in_extent: usize, axis: AxisGeometry, layer: &str) -> Result<usize> {
    if axis.kernel == 0 || axis.stride == 0 {
        return Err(FcnaError::InvalidGeometry(format!("layer {layer}: kernel and stride must be >= 1")));
    }
    let padded = in_extent + 2 * axis.pad;
    if padded < axis.kernel {
        return Err(FcnaError::LayerInputTooSmall {
            layer: layer.to_string(),
            extent: in_extent,
            kernel: axis.kernel,
            pad: axis.pad,
        });
    }
    Ok((padded - axis.kernel) / axis.stride + 1)
}

struct Dims {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
}

impl Dims {
    fn patch_len(&self, g: &ConvGeometry) -> usize {
        self.in_c * g.kernel.0 * g.kernel.1
    }
}

fn check_shapes<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, g: &ConvGeometry) -> Result<Dims> {
    g.validate()?;
    let (batch, in_c, in_h, in_w) = input.dims4()?;
    let (out_c, f_c, kh, kw) = filters.dims4().map_err(|_| {
        FcnaError::shape("conv2d filters", "rank 4 (filters x channels x kh x kw)", shape_str(filters.shape()))
    })?;
    if f_c != in_c || (kh, kw) != g.kernel {
        return Err(FcnaError::shape(
            "conv2d",
            format!("filters ?x{in_c}x{}x{} for input {}", g.kernel.0, g.kernel.1, shape_str(input.shape())),
            shape_str(filters.shape()),
        ));
    }
    let (out_h, out_w) = g.out_dims((in_h, in_w), "conv2d")?;
    Ok(Dims { batch, in_c, in_h, in_w, out_c, out_h, out_w })
}

/// Unfolds one sample (`c × h × w`) into a `(c·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Scalar>(x: &[T], d: &Dims, g: &ConvGeometry, col: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let p = d.out_h * d.out_w;
    for c in 0..d.in_c {
        let plane = &x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..d.out_h {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * d.out_w..(oy + 1) * d.out_w];
                    if iy < 0 || iy >= d.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix >= d.in_w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `c × h × w` sample.
fn col2im<T: Scalar>(col: &[T], d: &Dims, g: &ConvGeometry, x: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let p = d.out_h * d.out_w;
    for c in 0..d.in_c {
        let plane = &mut x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..d.out_h {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= d.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.in_w..(iy as usize + 1) * d.in_w];
                    for ox in 0..d.out_w {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && ix < d.in_w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * d.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation: `out[n,f,y,x] = bias[f] + Σ filters[f,c,i,j]·pad(input)[n,c,y·sh+i,x·sw+j]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let d = check_shapes(input, filters, g)?;
    if bias.len() != d.out_c {
        return Err(FcnaError::shape("conv2d bias", d.out_c, shape_str(bias.shape())));
    }
    let k = d.patch_len(g);
    let p = d.out_h * d.out_w;
    let in_stride = d.in_c * d.in_h * d.in_w;
    let mut out = Tensor::zeros(&[d.batch, d.out_c, d.out_h, d.out_w]);
    let pointwise = g.is_pointwise();
    par_batches(out.data_mut(), d.out_c * p, |n, y| {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        for (f, row) in y.chunks_mut(p).enumerate() {
            row.fill(bias.data()[f]);
        }
        if pointwise {
            T::gemm(d.out_c, k, p, filters.data(), (k as isize, 1), x, (p as isize, 1), T::one(), y, (p as isize, 1));
        } else {
            let mut col = vec![T::zero(); k * p];
            im2col(x, &d, g, &mut col);
            T::gemm(
                d.out_c,
                k,
                p,
                filters.data(),
                (k as isize, 1),
                &col,
                (p as isize, 1),
                T::one(),
                y,
                (p as isize, 1),
            );
        }
    });
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar = f32> {
    pub input: Option<Tensor<T>>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Reverse-mode derivatives of [`conv2d_forward`] with respect to input,
/// filters and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let grads = conv2d_backward_opt(input, filters, grad_out, g, true)?;
    Ok((grads.input.expect("input gradient requested"), grads.filters, grads.bias))
}

/// As [`conv2d_backward`], skipping the input gradient when `want_input` is false.
pub(crate) fn conv2d_backward_opt<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let d = check_shapes(input, filters, g)?;
    let expected = [d.batch, d.out_c, d.out_h, d.out_w];
    if grad_out.shape() != expected {
        return Err(FcnaError::shape("conv2d_backward grad_out", shape_str(&expected), shape_str(grad_out.shape())));
    }
    let k = d.patch_len(g);
    let p = d.out_h * d.out_w;
    let in_stride = d.in_c * d.in_h * d.in_w;
    let out_stride = d.out_c * p;
    let pointwise = g.is_pointwise();

    // Per-sample filter and bias gradients, reduced below in sample order.
    let per_sample = d.out_c * k + d.out_c;
    let mut partial = vec![T::zero(); d.batch * per_sample];
    let mut grad_input = if want_input { Some(Tensor::zeros(input.shape())) } else { None };

    par_batches(&mut partial, per_sample, |n, acc| {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        let gy = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
        let (gw, gb) = acc.split_at_mut(d.out_c * k);
        if pointwise {
            T::gemm(d.out_c, p, k, gy, (p as isize, 1), x, (1, p as isize), T::zero(), gw, (k as isize, 1));
        } else {
            let mut col = vec![T::zero(); k * p];
            im2col(x, &d, g, &mut col);
            T::gemm(d.out_c, p, k, gy, (p as isize, 1), &col, (1, p as isize), T::zero(), gw, (k as isize, 1));
        }
        for (f, b) in gb.iter_mut().enumerate() {
            *b = gy[f * p..(f + 1) * p].iter().copied().sum();
        }
    });

    if let Some(gi) = grad_input.as_mut() {
        par_batches(gi.data_mut(), in_stride, |n, gx| {
            let gy = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
            if pointwise {
                T::gemm(
                    k,
                    d.out_c,
                    p,
                    filters.data(),
                    (1, k as isize),
                    gy,
                    (p as isize, 1),
                    T::zero(),
                    gx,
                    (p as isize, 1),
                );
            } else {
                let mut gcol = vec![T::zero(); k * p];
                T::gemm(
                    k,
                    d.out_c,
                    p,
                    filters.data(),
                    (1, k as isize),
                    gy,
                    (p as isize, 1),
                    T::zero(),
                    &mut gcol,
                    (p as isize, 1),
                );
                col2im(&gcol, &d, g, gx);
            }
        });
    }

    let mut gw = Tensor::zeros(filters.shape());
    let mut gb = Tensor::zeros(&[d.out_c]);
    for sample in partial.chunks(per_sample) {
        let (sw, sb) = sample.split_at(d.out_c * k);
        for (a, &b) in gw.data_mut().iter_mut().zip(sw) {
            *a = *a + b;
        }
        for (a, &b) in gb.data_mut().iter_mut().zip(sb) {
            *a = *a + b;
        }
    }
    Ok(ConvGrads { input: grad_input, filters: gw, bias: gb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Six-nested-loop reference used as the oracle for the GEMM path.
    fn naive_conv(input: &Tensor<f64>, filters: &Tensor<f64>, bias: &Tensor<f64>, g: &ConvGeometry) -> Tensor<f64> {
        let (n, c, h, w) = input.dims4().unwrap();
        let (f, _, kh, kw) = filters.dims4().unwrap();
        let oh = (h + 2 * g.pad.0 - kh) / g.stride.0 + 1;
        let ow = (w + 2 * g.pad.1 - kw) / g.stride.1 + 1;
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for b in 0..n {
            for o in 0..f {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias.data()[o];
                        for ch in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * g.stride.0 + i) as isize - g.pad.0 as isize;
                                    let ix = (x * g.stride.1 + j) as isize - g.pad.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc +=
                                            filters.get(&[o, ch, i, j]) * input.get(&[b, ch, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, o, y, x], acc);
                    }
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn brute_force_placements(n: usize, a: AxisGeometry) -> usize {
        // Count top-left offsets (in padded coordinates) reachable by stride
        // where the whole window fits.
        let padded = n + 2 * a.pad;
        (0..padded).step_by(a.stride).filter(|&start| start + a.kernel <= padded).count()
    }

    #[test]
    fn out_extent_examples() {
        let ax = |kernel, stride, pad| AxisGeometry { kernel, stride, pad };
        assert_eq!(conv_out_extent(224, ax(11, 4, 0), "conv1").unwrap(), 54);
        assert_eq!(conv_out_extent(7, ax(7, 1, 0), "c").unwrap(), 1);
        let err = conv_out_extent(2, ax(5, 1, 1), "conv2").unwrap_err();
        assert!(err.to_string().contains("conv2"), "{err}");
    }

    #[test]
    fn out_extent_matches_placement_count() {
        for n in 1..=64 {
            for kernel in 1..=11 {
                for stride in 1..=4 {
                    for pad in 0..=2 {
                        let a = AxisGeometry { kernel, stride, pad };
                        match conv_out_extent(n, a, "x") {
                            Ok(v) => assert_eq!(v, brute_force_placements(n, a), "{n} {a:?}"),
                            Err(_) => assert_eq!(brute_force_placements(n, a), 0),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, &ConvGeometry::square(3, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 1, 5, 4], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, &ConvGeometry::square(1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 3, 8, 8], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let g = ConvGeometry::square(3, 2, 1);
        let fast = conv2d_forward(&x.cast::<f32>(), &w.cast(), &b.cast(), &g).unwrap();
        let slow = naive_conv(&x, &w, &b, &g);
        assert!(fast.cast::<f64>().max_abs_diff(&slow) < 1e-5);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let b = Tensor::<f32>::zeros(&[4]);
        let err = conv2d_forward(&x, &w, &b, &ConvGeometry::square(3, 1, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x3x8x8") && msg.contains("4x2x3x3"), "{msg}");
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 2, 6, 6], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let g = ConvGeometry::square(3, 1, 1);
        let gy = Tensor::zeros(&[2, 3, 6, 6]);
        let (gx, gw, gb) = conv2d_backward(&x, &w, &gy, &g).unwrap();
        assert!(gx.data().iter().chain(gw.data()).chain(gb.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![3.0f64]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![-2.0f64]).unwrap();
        let gy = Tensor::new(vec![1, 1, 1, 1], vec![0.5f64]).unwrap();
        let (gx, gw, gb) = conv2d_backward(&x, &w, &gy, &ConvGeometry::square(1, 1, 0)).unwrap();
        assert_eq!(gw.data(), &[1.5]);
        assert_eq!(gx.data(), &[-1.0]);
        assert_eq!(gb.data(), &[0.5]);
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let gy = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_backward(&x, &w, &gy, &ConvGeometry::square(3, 1, 0)).is_err());
    }
}
