//! Complex 2-D convolution.
//!
//! With kernel `W = A + Bj` and input `I = x + yj`, the complex convolution
//! expands into four real convolutions:
//!
//! `W * I = (A*x - B*y) + (A*y + B*x)j`
//!
//! so one complex convolution costs exactly four real cross-correlations.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{CVar, Graph, Parameter};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

pub struct ComplexConv2d<P: Scalar> {
    pub kernel: Rc<Parameter<P>>,
    pub bias: Rc<Parameter<P>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<P: Scalar> ComplexConv2d<P> {
    /// Kernel planes drawn from N(0, 1/(2*fan_in)) so that E|W|^2 = 1/fan_in,
    /// the complex analogue of He initialization. Biases start at zero.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let (kh, kw) = kernel;
        let fan_in = in_ch * kh * kw;
        let std = (1.0 / (2.0 * fan_in as f64)).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let count = out_ch * in_ch * kh * kw;
        let re: Vec<P> = (0..count).map(|_| P::from_f64(normal.sample(rng))).collect();
        let im: Vec<P> = (0..count).map(|_| P::from_f64(normal.sample(rng))).collect();
        let kernel_value =
            ComplexTensor::from_planes(vec![out_ch, in_ch, kh, kw], re, im).expect("sized planes");
        ComplexConv2d {
            kernel: Parameter::complex(format!("{name}.kernel"), kernel_value, true),
            bias: Parameter::complex(
                format!("{name}.bias"),
                ComplexTensor::zeros(&[out_ch]),
                true,
            ),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph<P>, x: CVar) -> Result<CVar> {
        let k = g.complex_param(&self.kernel);
        let b = g.complex_param(&self.bias);
        let ax = g.conv2d(x.re, k.re, self.stride, self.padding)?;
        let by = g.conv2d(x.im, k.im, self.stride, self.padding)?;
        let ay = g.conv2d(x.im, k.re, self.stride, self.padding)?;
        let bx = g.conv2d(x.re, k.im, self.stride, self.padding)?;
        let re = g.sub(ax, by)?;
        let im = g.add(ay, bx)?;
        let re = g.add_channel(re, b.re)?;
        let im = g.add_channel(im, b.im)?;
        Ok(CVar { re, im })
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter<P>>> {
        vec![Rc::clone(&self.kernel), Rc::clone(&self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor;

    fn conv_with_kernel(
        kernel: ComplexTensor<f64>,
        bias_len: usize,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> ComplexConv2d<f64> {
        ComplexConv2d {
            kernel: Parameter::complex("k", kernel, true),
            bias: Parameter::complex("b", ComplexTensor::zeros(&[bias_len]), true),
            stride,
            padding,
        }
    }

    fn forward(conv: &ComplexConv2d<f64>, x: &ComplexTensor<f64>) -> ComplexTensor<f64> {
        let mut g = Graph::new();
        let xv = g.complex_constant(x);
        let out = conv.forward(&mut g, xv).unwrap();
        g.cvalue(out)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let kernel =
            ComplexTensor::from_planes(vec![1, 1, 1, 1], vec![1.0], vec![0.0]).unwrap();
        let conv = conv_with_kernel(kernel, 1, (1, 1), (0, 0));
        let x = ComplexTensor::from_planes(
            vec![1, 1, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![-1.0, 0.5, 0.0, 2.0],
        )
        .unwrap();
        let y = forward(&conv, &x);
        assert_eq!(y.re().data(), x.re().data());
        assert_eq!(y.im().data(), x.im().data());
    }

    #[test]
    fn j_kernel_rotates_by_ninety_degrees() {
        // W = 0 + 1j turns x + yj into -y + xj.
        let kernel =
            ComplexTensor::from_planes(vec![1, 1, 1, 1], vec![0.0], vec![1.0]).unwrap();
        let conv = conv_with_kernel(kernel, 1, (1, 1), (0, 0));
        let x = ComplexTensor::from_planes(vec![1, 1, 1, 2], vec![3.0, -1.0], vec![4.0, 2.0])
            .unwrap();
        let y = forward(&conv, &x);
        assert_eq!(y.re().data(), &[-4.0, -2.0]);
        assert_eq!(y.im().data(), &[3.0, -1.0]);
    }

    #[test]
    fn single_window_matches_scalar_complex_mac() {
        // 2x2 input [[1+1j, 2+0j], [0-1j, 1+2j]], kernel all ones (1+1j).
        let x = ComplexTensor::from_planes(
            vec![1, 1, 2, 2],
            vec![1.0, 2.0, 0.0, 1.0],
            vec![1.0, 0.0, -1.0, 2.0],
        )
        .unwrap();
        let kernel = ComplexTensor::from_planes(
            vec![1, 1, 2, 2],
            vec![1.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        // Oracle: sum over (1+1j)(each element).
        let (mut exp_re, mut exp_im) = (0.0, 0.0);
        for (&a, &b) in x.re().data().iter().zip(x.im().data()) {
            exp_re += a - b;
            exp_im += a + b;
        }
        let conv = conv_with_kernel(kernel, 1, (1, 1), (0, 0));
        let y = forward(&conv, &x);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.re().data()[0] - exp_re).abs() < 1e-12);
        assert!((y.im().data()[0] - exp_im).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let kernel = ComplexTensor::zeros(&[2, 3, 1, 1]);
        let conv = conv_with_kernel(kernel, 2, (1, 1), (0, 0));
        let x = ComplexTensor::zeros(&[1, 2, 4, 4]);
        let mut g = Graph::new();
        let xv = g.complex_constant(&x);
        assert!(conv.forward(&mut g, xv).is_err());
    }

    #[test]
    fn bias_is_added_per_channel() {
        let kernel =
            ComplexTensor::from_planes(vec![1, 1, 1, 1], vec![1.0], vec![0.0]).unwrap();
        let conv = ComplexConv2d {
            kernel: Parameter::complex("k", kernel, true),
            bias: Parameter::complex(
                "b",
                ComplexTensor::from_planes(vec![1], vec![10.0], vec![-5.0]).unwrap(),
                true,
            ),
            stride: (1, 1),
            padding: (0, 0),
        };
        let x = ComplexTensor::from_planes(vec![1, 1, 1, 1], vec![1.0], vec![2.0]).unwrap();
        let y = forward(&conv, &x);
        assert_eq!(y.re().data(), &[11.0]);
        assert_eq!(y.im().data(), &[-3.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        use crate::graph::grad_check;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let conv = ComplexConv2d::<f64>::new("conv", 2, 2, (3, 3), (1, 1), (1, 1), &mut rng);
        // Treat the input as a parameter so its gradient is checked too.
        let n = 1 * 2 * 4 * 4;
        let re: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let input = Parameter::complex(
            "input",
            ComplexTensor::from_planes(vec![1, 2, 4, 4], re, im).unwrap(),
            true,
        );
        let wr: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let wi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let params = vec![
            Rc::clone(&input),
            Rc::clone(&conv.kernel),
            Rc::clone(&conv.bias),
        ];
        let report = grad_check(
            move |g| {
                let x = g.complex_param(&input);
                let y = conv.forward(g, x)?;
                let lr = g.dot_const(
                    y.re,
                    RealTensor::new(vec![1, 2, 4, 4], wr.clone()).unwrap(),
                )?;
                let li = g.dot_const(
                    y.im,
                    RealTensor::new(vec![1, 2, 4, 4], wi.clone()).unwrap(),
                )?;
                g.add(lr, li)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }
}
