//! Raw numeric kernels behind the graph primitives: im2col convolution
//! (forward plus both backward products) and thin GEMM wrappers. Everything
//! here is cross-correlation with the usual machine-learning convention (no
//! kernel flip).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Resolved geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn resolve(
        x_shape: &[usize],
        k_shape: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<ConvGeom> {
        if x_shape.len() != 4 || k_shape.len() != 4 {
            return Err(Error::invalid(
                "conv2d",
                format!("expected 4-D input and kernel, got {x_shape:?} and {k_shape:?}"),
            ));
        }
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (cout, kcin, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if cin != kcin {
            return Err(Error::ShapeMismatch {
                op: "conv2d (input channels vs kernel channels)",
                left: x_shape.to_vec(),
                right: k_shape.to_vec(),
            });
        }
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if sh == 0 || sw == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        if kh == 0 || kw == 0 || cout == 0 {
            return Err(Error::invalid("conv2d", "kernel extents must be >= 1"));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * ph,
                    w + 2 * pw
                ),
            ));
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }

    fn ckk(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Unfold the padded input into a `[cin*kh*kw, n*oh*ow]` matrix.
fn im2col<P: Scalar>(x: &[P], g: &ConvGeom) -> Vec<P> {
    let cols_w = g.cols();
    let mut cols = vec![P::ZERO; g.ckk() * cols_w];
    for ci in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (ci * g.kh + u) * g.kw + v;
                let row_base = row * cols_w;
                for n in 0..g.n {
                    let x_base = (n * g.cin + ci) * g.h * g.w;
                    for oh in 0..g.oh {
                        let ih = (oh * g.sh + u) as isize - g.ph as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * g.w;
                        let col_base = row_base + (n * g.oh + oh) * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.sw + v) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                cols[col_base + ow] = x[x_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a `[cin*kh*kw, n*oh*ow]` matrix back onto input positions, adding
/// overlapping contributions.
fn col2im<P: Scalar>(dcols: &[P], g: &ConvGeom) -> Vec<P> {
    let cols_w = g.cols();
    let mut dx = vec![P::ZERO; g.n * g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (ci * g.kh + u) * g.kw + v;
                let row_base = row * cols_w;
                for n in 0..g.n {
                    let x_base = (n * g.cin + ci) * g.h * g.w;
                    for oh in 0..g.oh {
                        let ih = (oh * g.sh + u) as isize - g.ph as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * g.w;
                        let col_base = row_base + (n * g.oh + oh) * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.sw + v) as isize - g.pw as isize;
                            if iw >= 0 && iw < g.w as isize {
                                let idx = x_row + iw as usize;
                                dx[idx] = dx[idx].add(dcols[col_base + ow]);
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// NCHW -> `[cout, n*oh*ow]`.
fn to_mat<P: Scalar>(out: &[P], g: &ConvGeom) -> Vec<P> {
    let cols_w = g.cols();
    let mut mat = vec![P::ZERO; g.cout * cols_w];
    for n in 0..g.n {
        for co in 0..g.cout {
            let src = ((n * g.cout + co) * g.oh) * g.ow;
            let dst = co * cols_w + n * g.oh * g.ow;
            mat[dst..dst + g.oh * g.ow].copy_from_slice(&out[src..src + g.oh * g.ow]);
        }
    }
    mat
}

/// `[cout, n*oh*ow]` -> NCHW.
fn from_mat<P: Scalar>(mat: &[P], g: &ConvGeom) -> Vec<P> {
    let cols_w = g.cols();
    let mut out = vec![P::ZERO; g.n * g.cout * g.oh * g.ow];
    for n in 0..g.n {
        for co in 0..g.cout {
            let dst = ((n * g.cout + co) * g.oh) * g.ow;
            let src = co * cols_w + n * g.oh * g.ow;
            out[dst..dst + g.oh * g.ow].copy_from_slice(&mat[src..src + g.oh * g.ow]);
        }
    }
    out
}

/// Forward cross-correlation: `out[n,co,oh,ow] = sum x[n,ci,ih,iw] * k[co,ci,u,v]`.
pub(crate) fn conv_forward<P: Scalar>(x: &[P], k: &[P], g: &ConvGeom) -> Vec<P> {
    let cols = im2col(x, g);
    let (m, kk, nn) = (g.cout, g.ckk(), g.cols());
    let mut out_mat = vec![P::ZERO; m * nn];
    P::gemm(
        m,
        kk,
        nn,
        P::ONE,
        k,
        kk as isize,
        1,
        &cols,
        nn as isize,
        1,
        P::ZERO,
        &mut out_mat,
        nn as isize,
        1,
    );
    from_mat(&out_mat, g)
}

/// Gradient with respect to the kernel.
pub(crate) fn conv_grad_kernel<P: Scalar>(x: &[P], dout: &[P], g: &ConvGeom) -> Vec<P> {
    let cols = im2col(x, g);
    let dout_mat = to_mat(dout, g);
    let (m, kk, nn) = (g.cout, g.cols(), g.ckk());
    let mut dk = vec![P::ZERO; m * nn];
    // dK[cout, ckk] = dout_mat[cout, cols] * cols^T[cols, ckk]
    P::gemm(
        m,
        kk,
        nn,
        P::ONE,
        &dout_mat,
        kk as isize,
        1,
        &cols,
        1,
        kk as isize,
        P::ZERO,
        &mut dk,
        nn as isize,
        1,
    );
    dk
}

/// Gradient with respect to the input.
pub(crate) fn conv_grad_input<P: Scalar>(k: &[P], dout: &[P], g: &ConvGeom) -> Vec<P> {
    let dout_mat = to_mat(dout, g);
    let (m, kk, nn) = (g.ckk(), g.cout, g.cols());
    let mut dcols = vec![P::ZERO; m * nn];
    // dcols[ckk, cols] = K^T[ckk, cout] * dout_mat[cout, cols]
    P::gemm(
        m,
        kk,
        nn,
        P::ONE,
        k,
        1,
        m as isize,
        &dout_mat,
        nn as isize,
        1,
        P::ZERO,
        &mut dcols,
        nn as isize,
        1,
    );
    col2im(&dcols, g)
}

/// `out[n,o] = sum_f x[n,f] * w[o,f]`.
pub(crate) fn matmul_nt<P: Scalar>(x: &[P], n: usize, f: usize, w: &[P], o: usize) -> Vec<P> {
    let mut out = vec![P::ZERO; n * o];
    P::gemm(
        n,
        f,
        o,
        P::ONE,
        x,
        f as isize,
        1,
        w,
        1,
        f as isize,
        P::ZERO,
        &mut out,
        o as isize,
        1,
    );
    out
}

/// `out[n,f] = sum_o a[n,o] * b[o,f]`.
pub(crate) fn matmul_nn<P: Scalar>(a: &[P], n: usize, o: usize, b: &[P], f: usize) -> Vec<P> {
    let mut out = vec![P::ZERO; n * f];
    P::gemm(
        n,
        o,
        f,
        P::ONE,
        a,
        o as isize,
        1,
        b,
        f as isize,
        1,
        P::ZERO,
        &mut out,
        f as isize,
        1,
    );
    out
}

/// `out[o,f] = sum_n a[n,o] * x[n,f]` (i.e. a^T * x).
pub(crate) fn matmul_tn<P: Scalar>(a: &[P], n: usize, o: usize, x: &[P], f: usize) -> Vec<P> {
    let mut out = vec![P::ZERO; o * f];
    P::gemm(
        o,
        n,
        f,
        P::ONE,
        a,
        1,
        o as isize,
        x,
        f as isize,
        1,
        P::ZERO,
        &mut out,
        f as isize,
        1,
    );
    out
}
