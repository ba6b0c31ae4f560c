//! Finite-difference verification harness covering every layer operation and
//! a CVnet5-micro end-to-end graph. The CLI `gradcheck` command and the
//! acceptance suite both run these checks; `sabotage` wires a deliberately
//! wrong backward rule into the named op as a negative control.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{grad_check, GradCheckReport, Graph, Parameter, RVar};
use crate::layers::{
    Activation, ActivationKind, ComplexBatchNorm, ComplexConv2d, ComplexLinear, ComplexMaxPool,
    ForwardMode, PoolVariant,
};
use crate::models::{cvnet5_spec, Model};
use crate::tensor::{ComplexTensor, RealTensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradient scale factor injected by `sabotage`.
const SABOTAGE_FACTOR: f64 = 1.01;

/// Every op name the layer suite covers, in report order.
pub const LAYER_OPS: [&str; 12] = [
    "conv2d",
    "batchnorm",
    "crelu",
    "ctanh",
    "celu",
    "cprelu",
    "pool_real_split",
    "pool_amplitude",
    "pool_area",
    "linear",
    "amplitude",
    "softmax_xent",
];

pub const MODEL_OP: &str = "cvnet5_micro";

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Values bounded away from activation kinks at zero by a wide margin.
fn sample_away_from_zero(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let mag = 0.2 + rng.random::<f64>();
            if rng.random::<f64>() < 0.5 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn complex_input(
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
) -> Rc<Parameter<f64>> {
    let count: usize = shape.iter().product();
    let re = sample_away_from_zero(rng, count);
    let im = sample_away_from_zero(rng, count);
    Parameter::complex(
        name,
        ComplexTensor::from_planes(shape.to_vec(), re, im).expect("sized planes"),
        true,
    )
}

fn random_weights(rng: &mut ChaCha8Rng, shape: &[usize]) -> RealTensor<f64> {
    let count: usize = shape.iter().product();
    let data: Vec<f64> = (0..count).map(|_| rng.random::<f64>() - 0.5).collect();
    RealTensor::new(shape.to_vec(), data).expect("sized data")
}

fn maybe_sabotage(
    g: &mut Graph<f64>,
    active: bool,
    out: RVar,
) -> RVar {
    if active {
        g.faulty_identity(out, SABOTAGE_FACTOR)
    } else {
        out
    }
}

fn check_conv(sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let conv = ComplexConv2d::<f64>::new("conv", 2, 3, (3, 3), (1, 1), (1, 1), &mut rng);
    let input = complex_input(&mut rng, "input", &[2, 2, 5, 5]);
    let out_shape = vec![2, 3, 5, 5];
    let wr = random_weights(&mut rng, &out_shape);
    let wi = random_weights(&mut rng, &out_shape);
    let mut params = vec![Rc::clone(&input)];
    params.extend(conv.parameters());
    let report = grad_check(
        move |g| {
            let x = g.complex_param(&input);
            let y = conv.forward(g, x)?;
            let re = maybe_sabotage(g, sabotage, y.re);
            let lr = g.dot_const(re, wr.clone())?;
            let li = g.dot_const(y.im, wi.clone())?;
            g.add(lr, li)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: "conv2d",
        report,
    })
}

fn check_batchnorm(sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let bn = ComplexBatchNorm::<f64>::new("bn", 3, 0.1, 1e-5, true);
    let input = complex_input(&mut rng, "input", &[2, 3, 3, 3]);
    let shape = vec![2, 3, 3, 3];
    let wr = random_weights(&mut rng, &shape);
    let wi = random_weights(&mut rng, &shape);
    let mut params = vec![Rc::clone(&input)];
    params.extend(bn.parameters());
    let report = grad_check(
        move |g| {
            let x = g.complex_param(&input);
            let y = bn.forward(g, x, ForwardMode::Train { update_running: false })?;
            let re = maybe_sabotage(g, sabotage, y.re);
            let lr = g.dot_const(re, wr.clone())?;
            let li = g.dot_const(y.im, wi.clone())?;
            g.add(lr, li)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: "batchnorm",
        report,
    })
}

fn check_activation(kind: ActivationKind, sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(107 + kind as u64);
    let act = Activation::<f64>::new("act", kind, 4);
    let input = complex_input(&mut rng, "input", &[3, 4]);
    let shape = vec![3, 4];
    let wr = random_weights(&mut rng, &shape);
    let wi = random_weights(&mut rng, &shape);
    let mut params = vec![Rc::clone(&input)];
    params.extend(act.parameters());
    let report = grad_check(
        move |g| {
            let x = g.complex_param(&input);
            let y = act.forward(g, x)?;
            let re = maybe_sabotage(g, sabotage, y.re);
            let lr = g.dot_const(re, wr.clone())?;
            let li = g.dot_const(y.im, wi.clone())?;
            g.add(lr, li)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: match kind {
            ActivationKind::CRelu => "crelu",
            ActivationKind::CTanh => "ctanh",
            ActivationKind::CElu => "celu",
            ActivationKind::CPrelu => "cprelu",
        },
        report,
    })
}

fn check_pool(variant: PoolVariant, sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(113 + variant as u64);
    let pool = ComplexMaxPool::new(variant, (2, 2), (2, 2));
    let input = complex_input(&mut rng, "input", &[2, 2, 4, 4]);
    let shape = vec![2, 2, 2, 2];
    let wr = random_weights(&mut rng, &shape);
    let wi = random_weights(&mut rng, &shape);
    let params = vec![Rc::clone(&input)];
    let report = grad_check(
        move |g| {
            let x = g.complex_param(&input);
            let y = pool.forward(g, x)?;
            let re = maybe_sabotage(g, sabotage, y.re);
            let lr = g.dot_const(re, wr.clone())?;
            let li = g.dot_const(y.im, wi.clone())?;
            g.add(lr, li)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: match variant {
            PoolVariant::RealSplit => "pool_real_split",
            PoolVariant::Amplitude => "pool_amplitude",
            PoolVariant::Area => "pool_area",
        },
        report,
    })
}

fn check_linear(sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(127);
    let layer = ComplexLinear::<f64>::new("fc", 5, 3, &mut rng);
    let input = complex_input(&mut rng, "input", &[3, 5]);
    let shape = vec![3, 3];
    let wr = random_weights(&mut rng, &shape);
    let wi = random_weights(&mut rng, &shape);
    let mut params = vec![Rc::clone(&input)];
    params.extend(layer.parameters());
    let report = grad_check(
        move |g| {
            let x = g.complex_param(&input);
            let y = layer.forward(g, x)?;
            let re = maybe_sabotage(g, sabotage, y.re);
            let lr = g.dot_const(re, wr.clone())?;
            let li = g.dot_const(y.im, wi.clone())?;
            g.add(lr, li)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: "linear",
        report,
    })
}

fn check_amplitude(sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(131);
    let input = complex_input(&mut rng, "input", &[3, 4]);
    let w = random_weights(&mut rng, &[3, 4]);
    let params = vec![Rc::clone(&input)];
    let report = grad_check(
        move |g| {
            let z = g.complex_param(&input);
            let a = crate::layers::amplitude_layer(g, z)?;
            let a = maybe_sabotage(g, sabotage, a);
            g.dot_const(a, w.clone())
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: "amplitude",
        report,
    })
}

fn check_softmax(sabotage: bool) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(137);
    let logits = Parameter::real("logits", random_weights(&mut rng, &[4, 3]), true);
    let labels = vec![0usize, 2, 1, 1];
    let params = vec![Rc::clone(&logits)];
    let report = grad_check(
        move |g| {
            let x = g.real_param(&logits);
            let x = maybe_sabotage(g, sabotage, x);
            crate::layers::softmax_cross_entropy(g, x, &labels)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: "softmax_xent",
        report,
    })
}

/// Run every layer-op check. `sabotage` corrupts the named op's backward rule.
pub fn layer_checks(sabotage: Option<&str>) -> Result<Vec<OpCheck>> {
    let hit = |name: &str| sabotage == Some(name);
    let mut checks = Vec::new();
    checks.push(check_conv(hit("conv2d"))?);
    checks.push(check_batchnorm(hit("batchnorm"))?);
    for kind in ActivationKind::ALL {
        checks.push(check_activation(kind, hit(kind.name()))?);
    }
    for variant in PoolVariant::ALL {
        let name = match variant {
            PoolVariant::RealSplit => "pool_real_split",
            PoolVariant::Amplitude => "pool_amplitude",
            PoolVariant::Area => "pool_area",
        };
        checks.push(check_pool(variant, hit(name))?);
    }
    checks.push(check_linear(hit("linear"))?);
    checks.push(check_amplitude(hit("amplitude"))?);
    checks.push(check_softmax(hit("softmax_xent"))?);
    Ok(checks)
}

/// End-to-end finite-difference check over every parameter of a CVnet5-micro
/// graph (width 1/16, 32x32 input, 2-sample batch, cross-entropy loss).
pub fn model_check(sabotage: bool) -> Result<OpCheck> {
    let spec = cvnet5_spec(3, ActivationKind::CRelu, PoolVariant::Area, 1.0 / 16.0, 32);
    let model: Model<f64> = Model::build(spec, 40)?;
    let mut rng = ChaCha8Rng::seed_from_u64(139);
    let count = 2 * 32 * 32;
    let re: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let im: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let batch = ComplexTensor::from_planes(vec![2, 1, 32, 32], re, im)?;
    let labels = vec![0usize, 2];
    let params = model.parameters();
    let report = grad_check(
        move |g| {
            let logits = model.forward(g, &batch, ForwardMode::Train { update_running: false })?;
            let logits = maybe_sabotage(g, sabotage, logits);
            crate::layers::softmax_cross_entropy(g, logits, &labels)
        },
        &params,
        STEP,
        TOLERANCE,
    )?;
    Ok(OpCheck {
        name: MODEL_OP,
        report,
    })
}
