//! Complex batch normalization by covariance whitening.
//!
//! Per channel the zero-centered data is multiplied by the inverse square
//! root of the 2x2 real/imaginary covariance matrix `V`, so the two principal
//! components come out decorrelated with unit variance. The inverse square
//! root uses the closed form for symmetric positive-definite 2x2 matrices:
//! with `s = sqrt(det V_e)` and `t = sqrt(trace V_e + 2s)`,
//!
//! `V_e^{-1/2} = [[V_ii + e + s, -V_ri], [-V_ri, V_rr + e + s]] / (s * t)`
//!
//! where `V_e = V + e*I`. Training mode differentiates through the batch
//! statistics exactly (the whitening is composed from primitive graph ops);
//! eval mode whitens with running statistics folded into constant per-channel
//! affine coefficients. Covariance uses population normalization (divide by
//! the count, not count - 1). An optional learnable affine transform
//! (symmetric 2x2 `gamma`, complex `beta`) follows the whitening.

use std::cell::RefCell;
use std::f64::consts::FRAC_1_SQRT_2;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{CVar, Graph, Parameter, RVar};
use crate::layers::ForwardMode;
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

/// Per-channel symmetric 2x2 covariance, stored as three planes.
#[derive(Clone)]
pub struct Cov2x2<P: Scalar> {
    pub rr: RealTensor<P>,
    pub ri: RealTensor<P>,
    pub ii: RealTensor<P>,
}

pub struct ComplexBatchNorm<P: Scalar> {
    pub gamma_rr: Rc<Parameter<P>>,
    pub gamma_ri: Rc<Parameter<P>>,
    pub gamma_ii: Rc<Parameter<P>>,
    pub beta: Rc<Parameter<P>>,
    running_mean: RefCell<ComplexTensor<P>>,
    running_cov: RefCell<Cov2x2<P>>,
    pub momentum: f64,
    pub epsilon: f64,
    pub affine: bool,
    channels: usize,
}

impl<P: Scalar> ComplexBatchNorm<P> {
    /// `gamma` starts at `diag(1/sqrt(2))` so a standard complex signal keeps
    /// unit total power; `beta` starts at zero.
    pub fn new(name: &str, channels: usize, momentum: f64, epsilon: f64, affine: bool) -> Self {
        let half = P::from_f64(0.5);
        ComplexBatchNorm {
            gamma_rr: Parameter::real(
                format!("{name}.gamma_rr"),
                RealTensor::full(&[channels], P::from_f64(FRAC_1_SQRT_2)),
                affine,
            ),
            gamma_ri: Parameter::real(
                format!("{name}.gamma_ri"),
                RealTensor::zeros(&[channels]),
                affine,
            ),
            gamma_ii: Parameter::real(
                format!("{name}.gamma_ii"),
                RealTensor::full(&[channels], P::from_f64(FRAC_1_SQRT_2)),
                affine,
            ),
            beta: Parameter::complex(
                format!("{name}.beta"),
                ComplexTensor::zeros(&[channels]),
                affine,
            ),
            running_mean: RefCell::new(ComplexTensor::zeros(&[channels])),
            running_cov: RefCell::new(Cov2x2 {
                rr: RealTensor::full(&[channels], half),
                ri: RealTensor::zeros(&[channels]),
                ii: RealTensor::full(&[channels], half),
            }),
            momentum,
            epsilon,
            affine,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn running_state(&self) -> (ComplexTensor<P>, Cov2x2<P>) {
        (
            self.running_mean.borrow().clone(),
            self.running_cov.borrow().clone(),
        )
    }

    pub fn set_running_state(&self, mean: ComplexTensor<P>, cov: Cov2x2<P>) {
        *self.running_mean.borrow_mut() = mean;
        *self.running_cov.borrow_mut() = cov;
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter<P>>> {
        vec![
            Rc::clone(&self.gamma_rr),
            Rc::clone(&self.gamma_ri),
            Rc::clone(&self.gamma_ii),
            Rc::clone(&self.beta),
        ]
    }

    pub fn forward(&self, g: &mut Graph<P>, x: CVar, mode: ForwardMode) -> Result<CVar> {
        match mode {
            ForwardMode::Train { update_running } => self.forward_train(g, x, update_running),
            ForwardMode::Eval => self.forward_eval(g, x),
        }
    }

    fn check_input(&self, g: &Graph<P>, x: CVar) -> Result<usize> {
        let shape = g.value(x.re).shape().to_vec();
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(Error::invalid(
                "complex_batchnorm",
                format!("expected channel extent {} in {:?}", self.channels, shape),
            ));
        }
        Ok(shape.iter().product::<usize>() / self.channels)
    }

    fn forward_train(&self, g: &mut Graph<P>, x: CVar, update_running: bool) -> Result<CVar> {
        let population = self.check_input(g, x)?;
        if population < 2 {
            return Err(Error::invalid(
                "complex_batchnorm",
                format!("training needs a per-channel population >= 2, got {population}"),
            ));
        }
        let eps = P::from_f64(self.epsilon);

        let mean_re = g.channel_mean(x.re)?;
        let mean_im = g.channel_mean(x.im)?;
        let neg_mean_re = g.scalar_mul(mean_re, P::ONE.neg());
        let neg_mean_im = g.scalar_mul(mean_im, P::ONE.neg());
        let xc_re = g.add_channel(x.re, neg_mean_re)?;
        let xc_im = g.add_channel(x.im, neg_mean_im)?;

        let sq_re = g.mul(xc_re, xc_re)?;
        let sq_im = g.mul(xc_im, xc_im)?;
        let cross = g.mul(xc_re, xc_im)?;
        let vrr = g.channel_mean(sq_re)?;
        let vii = g.channel_mean(sq_im)?;
        let vri = g.channel_mean(cross)?;

        if update_running {
            self.update_running(
                g.cvalue(CVar {
                    re: mean_re,
                    im: mean_im,
                }),
                Cov2x2 {
                    rr: g.value(vrr).clone(),
                    ri: g.value(vri).clone(),
                    ii: g.value(vii).clone(),
                },
            );
        }

        let vrr_e = g.scalar_add(vrr, eps);
        let vii_e = g.scalar_add(vii, eps);

        // Closed-form inverse square root of V + eps*I.
        let prod = g.mul(vrr_e, vii_e)?;
        let vri_sq = g.mul(vri, vri)?;
        let det = g.sub(prod, vri_sq)?;
        let s = g.sqrt(det);
        let trace = g.add(vrr_e, vii_e)?;
        let two_s = g.scalar_mul(s, P::from_f64(2.0));
        let t_arg = g.add(trace, two_s)?;
        let t = g.sqrt(t_arg);
        let st = g.mul(s, t)?;
        let inv_st = g.recip(st);
        let vii_s = g.add(vii_e, s)?;
        let vrr_s = g.add(vrr_e, s)?;
        let w_rr = g.mul(vii_s, inv_st)?;
        let w_ii = g.mul(vrr_s, inv_st)?;
        let neg_vri = g.scalar_mul(vri, P::ONE.neg());
        let w_ri = g.mul(neg_vri, inv_st)?;

        let white_re = {
            let a = g.mul_channel(xc_re, w_rr)?;
            let b = g.mul_channel(xc_im, w_ri)?;
            g.add(a, b)?
        };
        let white_im = {
            let a = g.mul_channel(xc_re, w_ri)?;
            let b = g.mul_channel(xc_im, w_ii)?;
            g.add(a, b)?
        };

        self.apply_affine(g, white_re, white_im)
    }

    fn apply_affine(&self, g: &mut Graph<P>, re: RVar, im: RVar) -> Result<CVar> {
        if !self.affine {
            return Ok(CVar { re, im });
        }
        let grr = g.real_param(&self.gamma_rr);
        let gri = g.real_param(&self.gamma_ri);
        let gii = g.real_param(&self.gamma_ii);
        let beta = g.complex_param(&self.beta);
        let out_re = {
            let a = g.mul_channel(re, grr)?;
            let b = g.mul_channel(im, gri)?;
            let ab = g.add(a, b)?;
            g.add_channel(ab, beta.re)?
        };
        let out_im = {
            let a = g.mul_channel(re, gri)?;
            let b = g.mul_channel(im, gii)?;
            let ab = g.add(a, b)?;
            g.add_channel(ab, beta.im)?
        };
        Ok(CVar {
            re: out_re,
            im: out_im,
        })
    }

    fn update_running(&self, batch_mean: ComplexTensor<P>, batch_cov: Cov2x2<P>) {
        let m = self.momentum;
        let blend = |old: &RealTensor<P>, new: &RealTensor<P>| {
            old.zip_map(new, "bn_running", |o, n| {
                P::from_f64((1.0 - m) * o.to_f64() + m * n.to_f64())
            })
            .expect("running stats keep their shape")
        };
        {
            let mut mean = self.running_mean.borrow_mut();
            let re = blend(mean.re(), batch_mean.re());
            let im = blend(mean.im(), batch_mean.im());
            *mean = ComplexTensor::new(re, im).expect("same shape");
        }
        {
            let mut cov = self.running_cov.borrow_mut();
            *cov = Cov2x2 {
                rr: blend(&cov.rr, &batch_cov.rr),
                ri: blend(&cov.ri, &batch_cov.ri),
                ii: blend(&cov.ii, &batch_cov.ii),
            };
        }
    }

    /// Eval-mode whitening: fold running statistics and the affine transform
    /// into constant per-channel coefficients
    /// `out = M x + c` with `M = Gamma * V_e^{-1/2}` and `c = beta - M mu`.
    fn forward_eval(&self, g: &mut Graph<P>, x: CVar) -> Result<CVar> {
        self.check_input(g, x)?;
        let c = self.channels;
        let mean = self.running_mean.borrow();
        let cov = self.running_cov.borrow();
        let (mut m_rr, mut m_ri, mut m_ir, mut m_ii) = (
            vec![P::ZERO; c],
            vec![P::ZERO; c],
            vec![P::ZERO; c],
            vec![P::ZERO; c],
        );
        let (mut c_re, mut c_im) = (vec![P::ZERO; c], vec![P::ZERO; c]);
        let gamma_rr = self.gamma_rr.value_real();
        let gamma_ri = self.gamma_ri.value_real();
        let gamma_ii = self.gamma_ii.value_real();
        let beta = self.beta.value_complex();
        for ch in 0..c {
            let vrr = cov.rr.data()[ch].to_f64() + self.epsilon;
            let vri = cov.ri.data()[ch].to_f64();
            let vii = cov.ii.data()[ch].to_f64() + self.epsilon;
            let s = (vrr * vii - vri * vri).sqrt();
            let t = (vrr + vii + 2.0 * s).sqrt();
            let denom = s * t;
            let w_rr = (vii + s) / denom;
            let w_ii = (vrr + s) / denom;
            let w_ri = -vri / denom;
            let (grr, gri, gii) = if self.affine {
                (
                    gamma_rr.data()[ch].to_f64(),
                    gamma_ri.data()[ch].to_f64(),
                    gamma_ii.data()[ch].to_f64(),
                )
            } else {
                (1.0, 0.0, 1.0)
            };
            let (brr, bri) = if self.affine {
                (beta.re().data()[ch].to_f64(), beta.im().data()[ch].to_f64())
            } else {
                (0.0, 0.0)
            };
            let mrr = grr * w_rr + gri * w_ri;
            let mri = grr * w_ri + gri * w_ii;
            let mir = gri * w_rr + gii * w_ri;
            let mii = gri * w_ri + gii * w_ii;
            let mu_re = mean.re().data()[ch].to_f64();
            let mu_im = mean.im().data()[ch].to_f64();
            m_rr[ch] = P::from_f64(mrr);
            m_ri[ch] = P::from_f64(mri);
            m_ir[ch] = P::from_f64(mir);
            m_ii[ch] = P::from_f64(mii);
            c_re[ch] = P::from_f64(brr - mrr * mu_re - mri * mu_im);
            c_im[ch] = P::from_f64(bri - mir * mu_re - mii * mu_im);
        }
        let m_rr = g.constant(RealTensor::new(vec![c], m_rr)?);
        let m_ri = g.constant(RealTensor::new(vec![c], m_ri)?);
        let m_ir = g.constant(RealTensor::new(vec![c], m_ir)?);
        let m_ii = g.constant(RealTensor::new(vec![c], m_ii)?);
        let c_re = g.constant(RealTensor::new(vec![c], c_re)?);
        let c_im = g.constant(RealTensor::new(vec![c], c_im)?);
        let out_re = {
            let a = g.mul_channel(x.re, m_rr)?;
            let b = g.mul_channel(x.im, m_ri)?;
            let ab = g.add(a, b)?;
            g.add_channel(ab, c_re)?
        };
        let out_im = {
            let a = g.mul_channel(x.re, m_ir)?;
            let b = g.mul_channel(x.im, m_ii)?;
            let ab = g.add(a, b)?;
            g.add_channel(ab, c_im)?
        };
        Ok(CVar {
            re: out_re,
            im: out_im,
        })
    }
}
