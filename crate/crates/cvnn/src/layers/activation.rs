//! Split complex activations: the real scalar function is applied
//! independently to the real and imaginary planes, e.g.
//! `CRelu(z) = Relu(Re z) + j Relu(Im z)`. The family covers ReLU, Tanh, ELU
//! (alpha = 1) and PReLU with one learnable slope per channel shared by both
//! planes.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CVar, Graph, Parameter, RVar};
use crate::scalar::Scalar;
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    CRelu,
    CTanh,
    CElu,
    CPrelu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::CRelu,
        ActivationKind::CTanh,
        ActivationKind::CElu,
        ActivationKind::CPrelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::CRelu => "crelu",
            ActivationKind::CTanh => "ctanh",
            ActivationKind::CElu => "celu",
            ActivationKind::CPrelu => "cprelu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "crelu" => Ok(ActivationKind::CRelu),
            "ctanh" => Ok(ActivationKind::CTanh),
            "celu" => Ok(ActivationKind::CElu),
            "cprelu" => Ok(ActivationKind::CPrelu),
            other => Err(Error::invalid(
                "activation",
                format!("unknown activation '{other}' (crelu|ctanh|celu|cprelu)"),
            )),
        }
    }
}

pub struct Activation<P: Scalar> {
    pub kind: ActivationKind,
    /// Per-channel PReLU slope, present only for `CPrelu`. Initialized 0.25.
    pub slope: Option<Rc<Parameter<P>>>,
}

impl<P: Scalar> Activation<P> {
    pub fn new(name: &str, kind: ActivationKind, channels: usize) -> Self {
        let slope = match kind {
            ActivationKind::CPrelu => Some(Parameter::real(
                format!("{name}.slope"),
                RealTensor::full(&[channels], P::from_f64(0.25)),
                true,
            )),
            _ => None,
        };
        Activation { kind, slope }
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter<P>>> {
        self.slope.iter().map(Rc::clone).collect()
    }

    fn apply_plane(&self, g: &mut Graph<P>, x: RVar) -> Result<RVar> {
        Ok(match self.kind {
            ActivationKind::CRelu => g.relu(x),
            ActivationKind::CTanh => g.tanh(x),
            ActivationKind::CElu => g.elu(x),
            ActivationKind::CPrelu => {
                // prelu(x) = relu(x) + slope * (x - relu(x))
                let slope = self.slope.as_ref().expect("cprelu has a slope");
                let s = g.real_param(slope);
                let pos = g.relu(x);
                let neg = g.sub(x, pos)?;
                let scaled = g.mul_channel(neg, s)?;
                g.add(pos, scaled)?
            }
        })
    }

    pub fn forward(&self, g: &mut Graph<P>, x: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.apply_plane(g, x.re)?,
            im: self.apply_plane(g, x.im)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ComplexTensor;

    fn run(kind: ActivationKind, re: &[f64], im: &[f64]) -> ComplexTensor<f64> {
        let shape = vec![1, re.len()];
        let act = Activation::<f64>::new("act", kind, re.len());
        let x = ComplexTensor::from_planes(shape, re.to_vec(), im.to_vec()).unwrap();
        let mut g = Graph::new();
        let xv = g.complex_constant(&x);
        let out = act.forward(&mut g, xv).unwrap();
        g.cvalue(out)
    }

    #[test]
    fn crelu_zeroes_negative_parts() {
        let y = run(ActivationKind::CRelu, &[-1.0, -3.0], &[-2.0, 2.0]);
        assert_eq!(y.re().data(), &[0.0, 0.0]);
        assert_eq!(y.im().data(), &[0.0, 2.0]);
    }

    #[test]
    fn ctanh_fixes_origin_and_celu_matches_scalar() {
        let y = run(ActivationKind::CTanh, &[0.0], &[0.0]);
        assert_eq!(y.re().data(), &[0.0]);
        assert_eq!(y.im().data(), &[0.0]);

        let y = run(ActivationKind::CElu, &[-1.0], &[1.0]);
        assert!((y.re().data()[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(y.im().data(), &[1.0]);
    }

    #[test]
    fn cprelu_scales_negative_side_per_channel() {
        let act = Activation::<f64>::new("act", ActivationKind::CPrelu, 2);
        act.slope.as_ref().unwrap().set_plane(0, &[0.5, 0.1]);
        let x = ComplexTensor::from_planes(
            vec![1, 2],
            vec![-2.0, 4.0],
            vec![1.0, -10.0],
        )
        .unwrap();
        let mut g = Graph::new();
        let xv = g.complex_constant(&x);
        let out = act.forward(&mut g, xv).unwrap();
        let y = g.cvalue(out);
        assert_eq!(y.re().data(), &[-1.0, 4.0]);
        assert_eq!(y.im().data(), &[1.0, -1.0]);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        use crate::graph::grad_check;
        use rand::{Rng, SeedableRng};
        use std::rc::Rc;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for kind in ActivationKind::ALL {
            let (n, c) = (3, 4);
            // Bounded away from the kink at zero by much more than 10x step.
            let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mag = 0.2 + rng.random::<f64>();
                if rng.random::<f64>() < 0.5 {
                    mag
                } else {
                    -mag
                }
            };
            let re: Vec<f64> = (0..n * c).map(|_| sample(&mut rng)).collect();
            let im: Vec<f64> = (0..n * c).map(|_| sample(&mut rng)).collect();
            let input = Parameter::complex(
                "input",
                ComplexTensor::from_planes(vec![n, c], re, im).unwrap(),
                true,
            );
            let act = Activation::<f64>::new("act", kind, c);
            let wr: Vec<f64> = (0..n * c).map(|_| rng.random::<f64>() - 0.5).collect();
            let wi: Vec<f64> = (0..n * c).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut params = vec![Rc::clone(&input)];
            params.extend(act.parameters());
            let report = grad_check(
                move |g| {
                    let x = g.complex_param(&input);
                    let y = act.forward(g, x)?;
                    let lr = g.dot_const(y.re, RealTensor::new(vec![n, c], wr.clone())?)?;
                    let li = g.dot_const(y.im, RealTensor::new(vec![n, c], wi.clone())?)?;
                    g.add(lr, li)
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.passed(),
                "{}: max rel err {}",
                kind.name(),
                report.max_rel_err()
            );
        }
    }
}
