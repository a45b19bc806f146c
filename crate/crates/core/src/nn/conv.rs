//! Grouped 2-D convolution: im2col + GEMM, plus a direct-loop reference.
//!
//! Tensors are `[N, C, H, W]`; for speech features `H` is frequency and `W` is time.

use rand::Rng;

use super::{Ctx, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Fill, MatView, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(frequency, time)`
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

/// `floor((input + 2 * pad - kernel) / stride) + 1`, or `None` when the kernel
/// does not fit.
pub fn output_len(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        let geom = ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        };
        if in_channels == 0
            || out_channels == 0
            || groups == 0
            || kernel.0 == 0
            || kernel.1 == 0
            || stride.0 == 0
            || stride.1 == 0
        {
            return Err(Error::invalid(format!("degenerate convolution {geom:?}")));
        }
        if !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::invalid(format!(
                "channels {in_channels}->{out_channels} not divisible into {groups} groups"
            )));
        }
        Ok(geom)
    }

    /// Stride-1 "same" 3x3 convolution.
    pub fn same3x3(in_channels: usize, out_channels: usize, groups: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, (3, 3), (1, 1), (1, 1), groups)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, (1, 1), (1, 1), (0, 0), 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }

    pub fn num_weights(&self) -> usize {
        self.out_channels * self.fan_in()
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            output_len(h, self.padding.0, self.kernel.0, self.stride.0),
            output_len(w, self.padding.1, self.kernel.1, self.stride.1),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::invalid(format!(
                "input {h}x{w} too small for kernel {:?} with padding {:?}",
                self.kernel, self.padding
            ))),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }

    fn check_input(&self, x: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: s.to_vec(),
                right: vec![0, self.in_channels, 0, 0],
            });
        }
        Ok((s[0], s[2], s[3]))
    }
}

struct Plan {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
    rows: usize,
}

impl Plan {
    fn new<F: Scalar>(x: &Tensor<F>, geom: &ConvGeometry) -> Result<Self> {
        let (n, h, w) = geom.check_input(x)?;
        let (ho, wo) = geom.output_extent(h, w)?;
        Ok(Plan {
            n,
            h,
            w,
            ho,
            wo,
            cin_g: geom.in_channels / geom.groups,
            cout_g: geom.out_channels / geom.groups,
            rows: geom.fan_in(),
        })
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold `[channels, h, w]` into `[channels * kh * kw, ho * wo]`.
fn im2col<F: Scalar>(x: &[F], channels: usize, p: &Plan, geom: &ConvGeometry, cols: &mut [F]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let positions = p.positions();
    for c in 0..channels {
        let plane = &x[c * p.h * p.w..][..p.h * p.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * positions..][..positions];
                for oh in 0..p.ho {
                    let out_row = &mut dst[oh * p.wo..][..p.wo];
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= p.h as isize {
                        out_row.fill(F::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * p.w..][..p.w];
                    for (ow, slot) in out_row.iter_mut().enumerate() {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        *slot = if iw >= 0 && iw < p.w as isize {
                            src[iw as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[channels, h, w]`.
fn col2im_add<F: Scalar>(cols: &[F], channels: usize, p: &Plan, geom: &ConvGeometry, dx: &mut [F]) {
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let positions = p.positions();
    for c in 0..channels {
        let plane = &mut dx[c * p.h * p.w..][..p.h * p.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * positions..][..positions];
                for oh in 0..p.ho {
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * p.w..][..p.w];
                    for (ow, &v) in src[oh * p.wo..][..p.wo].iter().enumerate() {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        if iw >= 0 && iw < p.w as isize {
                            dst[iw as usize] = dst[iw as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<F: Scalar>(w: &Tensor<F>, geom: &ConvGeometry) -> Result<()> {
    if w.shape() != geom.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            left: w.shape().to_vec(),
            right: geom.weight_shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, geom: &ConvGeometry) -> Result<Tensor<F>> {
    let p = Plan::new(x, geom)?;
    check_weight(w, geom)?;
    let positions = p.positions();
    let mut out = vec![F::zero(); p.n * geom.out_channels * positions];
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); p.rows * positions]
    };
    let in_plane = p.h * p.w;
    for n in 0..p.n {
        for g in 0..geom.groups {
            let xs = &x.data()[(n * geom.in_channels + g * p.cin_g) * in_plane..][..p.cin_g * in_plane];
            let b = if geom.is_pointwise() {
                MatView::row_major(xs, p.rows, positions)
            } else {
                im2col(xs, p.cin_g, &p, geom, &mut cols);
                MatView::row_major(&cols, p.rows, positions)
            };
            let wg = MatView::row_major(&w.data()[g * p.cout_g * p.rows..][..p.cout_g * p.rows], p.cout_g, p.rows);
            let dst = &mut out[(n * geom.out_channels + g * p.cout_g) * positions..][..p.cout_g * positions];
            gemm(F::one(), wg, b, F::zero(), dst);
        }
    }
    Ok(Tensor::from_parts(
        vec![p.n, geom.out_channels, p.ho, p.wo],
        out,
    ))
}

/// Returns `(d input, d weight)` for the requested operands.
pub(crate) fn backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    geom: &ConvGeometry,
    gy: &Tensor<F>,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<F>>, Option<Tensor<F>>) {
    let p = Plan::new(x, geom).expect("geometry validated in forward");
    let positions = p.positions();
    let in_plane = p.h * p.w;
    let mut dx = need_dx.then(|| vec![F::zero(); x.numel()]);
    let mut dw = need_dw.then(|| vec![F::zero(); w.numel()]);
    let mut cols = vec![F::zero(); p.rows * positions];
    let mut dcols = vec![F::zero(); if need_dx { p.rows * positions } else { 0 }];
    for n in 0..p.n {
        for g in 0..geom.groups {
            let x_off = (n * geom.in_channels + g * p.cin_g) * in_plane;
            let gys = &gy.data()[(n * geom.out_channels + g * p.cout_g) * positions..][..p.cout_g * positions];
            let gy_view = MatView::row_major(gys, p.cout_g, positions);
            let w_off = g * p.cout_g * p.rows;
            if let Some(dw) = dw.as_mut() {
                let xs = &x.data()[x_off..][..p.cin_g * in_plane];
                let cols_t = if geom.is_pointwise() {
                    MatView::transposed(xs, p.rows, positions)
                } else {
                    im2col(xs, p.cin_g, &p, geom, &mut cols);
                    MatView::transposed(&cols, p.rows, positions)
                };
                gemm(F::one(), gy_view, cols_t, F::one(), &mut dw[w_off..][..p.cout_g * p.rows]);
            }
            if let Some(dx) = dx.as_mut() {
                let wt = MatView::transposed(&w.data()[w_off..][..p.cout_g * p.rows], p.cout_g, p.rows);
                let dxs = &mut dx[x_off..][..p.cin_g * in_plane];
                if geom.is_pointwise() {
                    gemm(F::one(), wt, gy_view, F::one(), dxs);
                } else {
                    gemm(F::one(), wt, gy_view, F::zero(), &mut dcols);
                    col2im_add(&dcols, p.cin_g, &p, geom, dxs);
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
    )
}

/// Straightforward nested-loop grouped cross-correlation. Slow; kept as the
/// reference the im2col path is tested against.
pub fn conv2d_direct<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, geom: &ConvGeometry) -> Result<Tensor<F>> {
    let p = Plan::new(x, geom)?;
    check_weight(w, geom)?;
    let (kh, kw) = geom.kernel;
    let mut out = vec![F::zero(); p.n * geom.out_channels * p.ho * p.wo];
    for n in 0..p.n {
        for co in 0..geom.out_channels {
            let g = co / p.cout_g;
            for oh in 0..p.ho {
                for ow in 0..p.wo {
                    let mut acc = F::zero();
                    for ci in 0..p.cin_g {
                        let c = g * p.cin_g + ci;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * geom.stride.0 + ki) as isize - geom.padding.0 as isize;
                                let iw = (ow * geom.stride.1 + kj) as isize - geom.padding.1 as isize;
                                if ih < 0 || iw < 0 || ih >= p.h as isize || iw >= p.w as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * geom.in_channels + c) * p.h + ih as usize) * p.w + iw as usize];
                                let wv = w.data()[((co * p.cin_g + ci) * kh + ki) * kw + kj];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((n * geom.out_channels + co) * p.ho + oh) * p.wo + ow] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![p.n, geom.out_channels, p.ho, p.wo], out))
}

/// Convolution layer without bias (every convolution here feeds a batch norm).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub geom: ConvGeometry,
    pub weight: ParamId,
}

impl Conv2d {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        geom: ConvGeometry,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::create(
            &geom.weight_shape(),
            Fill::HeUniform {
                fan_in: geom.fan_in(),
            },
            rng,
        )?;
        let weight = store.add_param(format!("{name}.weight"), w);
        Ok(Conv2d { geom, weight })
    }

    pub fn forward<F: Scalar>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        ctx.tape.conv2d(x, w, self.geom)
    }
}
