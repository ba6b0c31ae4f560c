//! Complex fully connected layer: the same `(A + Bj)(x + yj)` expansion as
//! the convolution, with a matrix product in place of the correlation.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{CVar, Graph, Parameter};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

pub struct ComplexLinear<P: Scalar> {
    /// Complex weight of shape `[out, in]`.
    pub weight: Rc<Parameter<P>>,
    /// Complex bias of shape `[out]`.
    pub bias: Rc<Parameter<P>>,
}

impl<P: Scalar> ComplexLinear<P> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let std = (1.0 / (2.0 * in_features as f64)).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let count = out_features * in_features;
        let re: Vec<P> = (0..count).map(|_| P::from_f64(normal.sample(rng))).collect();
        let im: Vec<P> = (0..count).map(|_| P::from_f64(normal.sample(rng))).collect();
        ComplexLinear {
            weight: Parameter::complex(
                format!("{name}.weight"),
                ComplexTensor::from_planes(vec![out_features, in_features], re, im)
                    .expect("sized planes"),
                true,
            ),
            bias: Parameter::complex(
                format!("{name}.bias"),
                ComplexTensor::zeros(&[out_features]),
                true,
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph<P>, x: CVar) -> Result<CVar> {
        let w = g.complex_param(&self.weight);
        let b = g.complex_param(&self.bias);
        let xa = g.matmul_nt(x.re, w.re)?;
        let yb = g.matmul_nt(x.im, w.im)?;
        let ya = g.matmul_nt(x.im, w.re)?;
        let xb = g.matmul_nt(x.re, w.im)?;
        let re = g.sub(xa, yb)?;
        let im = g.add(ya, xb)?;
        let re = g.add_channel(re, b.re)?;
        let im = g.add_channel(im, b.im)?;
        Ok(CVar { re, im })
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter<P>>> {
        vec![Rc::clone(&self.weight), Rc::clone(&self.bias)]
    }
}
