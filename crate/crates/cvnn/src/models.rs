//! Declarative model construction: CVGG-Net (a VGG16-like plan of 13 complex
//! convolutional blocks, 5 complex max-pooling layers, and 3 complex fully
//! connected layers), the small CVnet5 baseline (5 conv blocks), scaled
//! "micro" variants via a width multiplier, and the amplitude-only ablation
//! that turns either network into a real-valued twin of identical topology.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CVar, Graph, Parameter, RVar};
use crate::layers::{
    Activation, ActivationKind, ComplexBatchNorm, ComplexConv2d, ComplexLinear, ComplexMaxPool,
    ForwardMode, PoolVariant,
};
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

/// VGG16 convolution plan; pooling follows each group.
const CVGG_CHANNELS: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256],
    &[512, 512, 512],
    &[512, 512, 512],
];

/// CVnet5 plan: five conv blocks, each followed by one pooling layer.
const CVNET5_CHANNELS: [usize; 5] = [16, 32, 64, 128, 128];

/// Hidden width of the first two CVGG fully connected layers before scaling.
const CVGG_FC_WIDTH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpec {
    Conv { out_channels: usize },
    Pool { variant: PoolVariant },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub blocks: Vec<BlockSpec>,
    pub fc_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: ActivationKind,
    pub input_size: usize,
    pub width_multiplier: f64,
    pub amplitude_only: bool,
}

fn scaled(channels: usize, multiplier: f64) -> usize {
    ((channels as f64 * multiplier).ceil() as usize).max(1)
}

impl ModelSpec {
    pub fn conv_block_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, BlockSpec::Conv { .. }))
            .count()
    }

    pub fn pool_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, BlockSpec::Pool { .. }))
            .count()
    }

    pub fn fc_count(&self) -> usize {
        self.fc_widths.len()
    }

    pub fn conv_channels(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                BlockSpec::Conv { out_channels } => Some(*out_channels),
                BlockSpec::Pool { .. } => None,
            })
            .collect()
    }

    pub fn with_pool_variant(&self, variant: PoolVariant) -> ModelSpec {
        let mut spec = self.clone();
        for block in spec.blocks.iter_mut() {
            if let BlockSpec::Pool { variant: v } = block {
                *v = variant;
            }
        }
        spec
    }

    pub fn with_activation(&self, activation: ActivationKind) -> ModelSpec {
        let mut spec = self.clone();
        spec.activation = activation;
        spec
    }

    pub fn pool_variant(&self) -> Option<PoolVariant> {
        self.blocks.iter().find_map(|b| match b {
            BlockSpec::Pool { variant } => Some(*variant),
            BlockSpec::Conv { .. } => None,
        })
    }

    fn validate(&self) -> Result<()> {
        let pools = self.pool_count();
        if self.num_classes == 0 {
            return Err(Error::invalid("model_spec", "num_classes must be >= 1"));
        }
        if self.width_multiplier <= 0.0 {
            return Err(Error::invalid(
                "model_spec",
                "width_multiplier must be positive",
            ));
        }
        let divisor = 1usize << pools;
        if self.input_size == 0 || self.input_size % divisor != 0 {
            return Err(Error::invalid(
                "model_spec",
                format!(
                    "input_size {} must be divisible by {} ({} poolings of 2x)",
                    self.input_size, divisor, pools
                ),
            ));
        }
        match self.name.as_str() {
            "cvgg" => {
                if self.conv_block_count() != 13 || pools != 5 || self.fc_count() != 3 {
                    return Err(Error::invalid(
                        "model_spec",
                        "cvgg requires 13 conv blocks, 5 pools, 3 fully connected layers",
                    ));
                }
            }
            "cvnet5" => {
                if self.conv_block_count() != 5 || pools != 5 {
                    return Err(Error::invalid(
                        "model_spec",
                        "cvnet5 requires 5 conv blocks and 5 pools",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Spec for CVGG-Net: 13 conv blocks in the VGG16 channel plan, pooling after
/// each group, then FC(4096m) -> FC(4096m) -> FC(num_classes), an amplitude
/// evaluation layer, and the softmax head.
pub fn cvggnet_spec(
    num_classes: usize,
    activation: ActivationKind,
    pool_variant: PoolVariant,
    width_multiplier: f64,
    input_size: usize,
) -> ModelSpec {
    let mut blocks = Vec::new();
    for group in CVGG_CHANNELS {
        for &ch in group {
            blocks.push(BlockSpec::Conv {
                out_channels: scaled(ch, width_multiplier),
            });
        }
        blocks.push(BlockSpec::Pool {
            variant: pool_variant,
        });
    }
    ModelSpec {
        name: "cvgg".to_string(),
        blocks,
        fc_widths: vec![
            scaled(CVGG_FC_WIDTH, width_multiplier),
            scaled(CVGG_FC_WIDTH, width_multiplier),
            num_classes,
        ],
        num_classes,
        activation,
        input_size,
        width_multiplier,
        amplitude_only: false,
    }
}

/// Spec for CVnet5: five conv blocks (16, 32, 64, 128, 128 scaled), one pool
/// after each, one fully connected layer to the class logits.
pub fn cvnet5_spec(
    num_classes: usize,
    activation: ActivationKind,
    pool_variant: PoolVariant,
    width_multiplier: f64,
    input_size: usize,
) -> ModelSpec {
    let mut blocks = Vec::new();
    for &ch in CVNET5_CHANNELS.iter() {
        blocks.push(BlockSpec::Conv {
            out_channels: scaled(ch, width_multiplier),
        });
        blocks.push(BlockSpec::Pool {
            variant: pool_variant,
        });
    }
    ModelSpec {
        name: "cvnet5".to_string(),
        blocks,
        fc_widths: vec![num_classes],
        num_classes,
        activation,
        input_size,
        width_multiplier,
        amplitude_only: false,
    }
}

struct ConvBlock<P: Scalar> {
    conv: ComplexConv2d<P>,
    bn: ComplexBatchNorm<P>,
    act: Activation<P>,
}

enum Stage<P: Scalar> {
    Block(ConvBlock<P>),
    Pool(ComplexMaxPool),
}

pub struct Model<P: Scalar> {
    pub spec: ModelSpec,
    stages: Vec<Stage<P>>,
    fcs: Vec<(ComplexLinear<P>, Option<Activation<P>>)>,
    flat_features: usize,
}

impl<P: Scalar> Model<P> {
    /// Deterministic construction: all weight draws come from `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model<P>> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut channels = 1usize;
        let mut spatial = spec.input_size;
        let mut block_idx = 0usize;
        for block in &spec.blocks {
            match block {
                BlockSpec::Conv { out_channels } => {
                    let name = format!("block{block_idx}");
                    let conv = ComplexConv2d::new(
                        &format!("{name}.conv"),
                        channels,
                        *out_channels,
                        (3, 3),
                        (1, 1),
                        (1, 1),
                        &mut rng,
                    );
                    let bn = ComplexBatchNorm::new(
                        &format!("{name}.bn"),
                        *out_channels,
                        0.1,
                        1e-5,
                        true,
                    );
                    let act = Activation::new(
                        &format!("{name}.act"),
                        spec.activation,
                        *out_channels,
                    );
                    stages.push(Stage::Block(ConvBlock { conv, bn, act }));
                    channels = *out_channels;
                    block_idx += 1;
                }
                BlockSpec::Pool { variant } => {
                    stages.push(Stage::Pool(ComplexMaxPool::new(*variant, (2, 2), (2, 2))));
                    spatial /= 2;
                }
            }
        }
        let flat_features = channels * spatial * spatial;
        let mut fcs = Vec::new();
        let mut in_features = flat_features;
        let count = spec.fc_widths.len();
        for (i, &width) in spec.fc_widths.iter().enumerate() {
            let fc = ComplexLinear::new(&format!("fc{i}"), in_features, width, &mut rng);
            let act = if i + 1 < count {
                Some(Activation::new(
                    &format!("fc{i}.act"),
                    spec.activation,
                    width,
                ))
            } else {
                None
            };
            fcs.push((fc, act));
            in_features = width;
        }
        let model = Model {
            spec,
            stages,
            fcs,
            flat_features,
        };
        if model.spec.amplitude_only {
            model.freeze_to_real();
        }
        Ok(model)
    }

    /// Forward from an input batch `[N, 1, size, size]` to real logits
    /// `[N, num_classes]`. In amplitude-only mode the input is first replaced
    /// by `|z| + 0j`.
    pub fn forward(
        &self,
        g: &mut Graph<P>,
        batch: &ComplexTensor<P>,
        mode: ForwardMode,
    ) -> Result<RVar> {
        let transformed;
        let input = if self.spec.amplitude_only {
            transformed = ComplexTensor::new(
                batch.modulus(),
                RealTensor::zeros(batch.shape()),
            )?;
            &transformed
        } else {
            batch
        };
        let x = g.complex_constant(input);
        self.forward_var(g, x, mode)
    }

    /// Forward from an already inserted complex variable (used by gradient
    /// checks where the input itself is a parameter). No amplitude-only input
    /// transform is applied here.
    pub fn forward_var(&self, g: &mut Graph<P>, x: CVar, mode: ForwardMode) -> Result<RVar> {
        let shape = g.value(x.re).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.spec.input_size
            || shape[3] != self.spec.input_size
        {
            return Err(Error::invalid(
                "model_forward",
                format!(
                    "expected input [N, 1, {0}, {0}], got {shape:?}",
                    self.spec.input_size
                ),
            ));
        }
        let mut cur = x;
        for stage in &self.stages {
            cur = match stage {
                Stage::Block(block) => {
                    let y = block.conv.forward(g, cur)?;
                    let y = block.bn.forward(g, y, mode)?;
                    block.act.forward(g, y)?
                }
                Stage::Pool(pool) => pool.forward(g, cur)?,
            };
        }
        let batch = shape[0];
        let flat = CVar {
            re: g.reshape(cur.re, &[batch, self.flat_features])?,
            im: g.reshape(cur.im, &[batch, self.flat_features])?,
        };
        let mut cur = flat;
        for (fc, act) in &self.fcs {
            cur = fc.forward(g, cur)?;
            if let Some(act) = act {
                cur = act.forward(g, cur)?;
            }
        }
        crate::layers::amplitude_layer(g, cur)
    }

    pub fn parameters(&self) -> Vec<Rc<Parameter<P>>> {
        let mut params = Vec::new();
        for stage in &self.stages {
            if let Stage::Block(block) = stage {
                params.extend(block.conv.parameters());
                params.extend(block.bn.parameters());
                params.extend(block.act.parameters());
            }
        }
        for (fc, act) in &self.fcs {
            params.extend(fc.parameters());
            if let Some(act) = act {
                params.extend(act.parameters());
            }
        }
        params
    }

    /// Batch-norm layers paired with their parameter-name prefix, for
    /// checkpointing running statistics.
    pub fn bn_layers(&self) -> Vec<(String, &ComplexBatchNorm<P>)> {
        let mut out = Vec::new();
        let mut block_idx = 0usize;
        for stage in &self.stages {
            if let Stage::Block(block) = stage {
                out.push((format!("block{block_idx}.bn"), &block.bn));
                block_idx += 1;
            }
        }
        out
    }

    pub fn trainable_real_count(&self) -> usize {
        self.parameters()
            .iter()
            .map(|p| p.trainable_real_count())
            .sum()
    }

    /// Clamp every imaginary weight plane to zero permanently and freeze the
    /// cross term of each batch-norm gamma, making the computation exactly a
    /// real-valued network of identical topology.
    fn freeze_to_real(&self) {
        for p in self.parameters() {
            p.freeze_im();
        }
        for stage in &self.stages {
            if let Stage::Block(block) = stage {
                let gamma_ri = &block.bn.gamma_ri;
                let zeros = vec![P::ZERO; gamma_ri.plane_len()];
                gamma_ri.set_plane(0, &zeros);
                gamma_ri.set_trainable(false);
            }
        }
    }
}

pub fn build_cvggnet<P: Scalar>(
    num_classes: usize,
    activation: ActivationKind,
    pool_variant: PoolVariant,
    width_multiplier: f64,
    input_size: usize,
    seed: u64,
) -> Result<Model<P>> {
    Model::build(
        cvggnet_spec(num_classes, activation, pool_variant, width_multiplier, input_size),
        seed,
    )
}

pub fn build_cvnet5<P: Scalar>(
    num_classes: usize,
    activation: ActivationKind,
    pool_variant: PoolVariant,
    width_multiplier: f64,
    input_size: usize,
    seed: u64,
) -> Result<Model<P>> {
    Model::build(
        cvnet5_spec(num_classes, activation, pool_variant, width_multiplier, input_size),
        seed,
    )
}

/// The controlled ablation standing in for real-valued baselines: input
/// samples become `|z| + 0j` and every imaginary weight part is clamped to
/// zero and excluded from optimization.
pub fn amplitude_only_mode<P: Scalar>(model: Model<P>) -> Model<P> {
    let mut model = model;
    model.spec.amplitude_only = true;
    model.freeze_to_real();
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn cvgg_census_matches_figure_counts() {
        let spec = cvggnet_spec(5, ActivationKind::CRelu, PoolVariant::Area, 1.0, 224);
        assert_eq!(spec.conv_block_count(), 13);
        assert_eq!(spec.pool_count(), 5);
        assert_eq!(spec.fc_count(), 3);
        assert_eq!(spec.fc_widths, vec![4096, 4096, 5]);
    }

    #[test]
    fn cvgg_sixteenth_width_plan() {
        let spec = cvggnet_spec(3, ActivationKind::CRelu, PoolVariant::Area, 1.0 / 16.0, 32);
        assert_eq!(
            spec.conv_channels(),
            vec![4, 4, 8, 8, 16, 16, 16, 32, 32, 32, 32, 32, 32]
        );
        assert_eq!(spec.fc_widths, vec![256, 256, 3]);
    }

    #[test]
    fn cvgg_micro_forward_shape() {
        let model = build_cvggnet::<f64>(
            3,
            ActivationKind::CRelu,
            PoolVariant::Area,
            1.0 / 16.0,
            32,
            42,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let count = 2 * 32 * 32;
        let re: Vec<f64> = (0..count).map(|_| rng.random::<f64>() - 0.5).collect();
        let im: Vec<f64> = (0..count).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = ComplexTensor::from_planes(vec![2, 1, 32, 32], re, im).unwrap();
        let mut g = Graph::new();
        let logits = model
            .forward(&mut g, &x, ForwardMode::Train { update_running: false })
            .unwrap();
        assert_eq!(g.value(logits).shape(), &[2, 3]);
        assert!(g.value(logits).all_finite());
    }

    #[test]
    fn cvnet5_census_and_shape() {
        let spec = cvnet5_spec(4, ActivationKind::CRelu, PoolVariant::Area, 1.0, 32);
        assert_eq!(spec.conv_block_count(), 5);
        assert_eq!(spec.pool_count(), 5);
        assert_eq!(spec.fc_count(), 1);
        assert_eq!(spec.conv_channels(), vec![16, 32, 64, 128, 128]);

        let model = Model::<f64>::build(spec, 7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let count = 4 * 32 * 32;
        let re: Vec<f64> = (0..count).map(|_| rng.random::<f64>() - 0.5).collect();
        let im: Vec<f64> = (0..count).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = ComplexTensor::from_planes(vec![4, 1, 32, 32], re, im).unwrap();
        let mut g = Graph::new();
        let logits = model
            .forward(&mut g, &x, ForwardMode::Train { update_running: false })
            .unwrap();
        assert_eq!(g.value(logits).shape(), &[4, 4]);
        assert!(g.value(logits).all_finite());
    }

    #[test]
    fn pool_variant_does_not_change_parameter_count() {
        let count = |variant| {
            let model = build_cvnet5::<f64>(3, ActivationKind::CRelu, variant, 0.25, 32, 3)
                .unwrap();
            model.parameters().iter().map(|p| p.real_count()).sum::<usize>()
        };
        assert_eq!(count(PoolVariant::Amplitude), count(PoolVariant::Area));
        assert_eq!(count(PoolVariant::RealSplit), count(PoolVariant::Area));
    }

    #[test]
    fn indivisible_input_size_rejected() {
        assert!(build_cvnet5::<f64>(3, ActivationKind::CRelu, PoolVariant::Area, 1.0, 33, 0)
            .is_err());
        assert!(build_cvggnet::<f64>(3, ActivationKind::CRelu, PoolVariant::Area, 1.0, 48, 0)
            .is_err());
    }

    fn phase_pair(seed: u64) -> (ComplexTensor<f64>, ComplexTensor<f64>) {
        // Two inputs with identical modulus planes and different phases.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let count = 32 * 32;
        let (mut re1, mut im1, mut re2, mut im2) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..count {
            let m = rng.random::<f64>() + 0.5;
            let t1 = rng.random::<f64>() * std::f64::consts::TAU;
            let t2 = rng.random::<f64>() * std::f64::consts::TAU;
            re1.push(m * t1.cos());
            im1.push(m * t1.sin());
            re2.push(m * t2.cos());
            im2.push(m * t2.sin());
        }
        (
            ComplexTensor::from_planes(vec![1, 1, 32, 32], re1, im1).unwrap(),
            ComplexTensor::from_planes(vec![1, 1, 32, 32], re2, im2).unwrap(),
        )
    }

    #[test]
    fn amplitude_only_is_exactly_phase_blind() {
        let model = build_cvnet5::<f64>(3, ActivationKind::CRelu, PoolVariant::Area, 0.125, 32, 5)
            .unwrap();
        let model = amplitude_only_mode(model);
        let (a, b) = phase_pair(11);
        let run = |x: &ComplexTensor<f64>| {
            let mut g = Graph::new();
            let logits = model.forward(&mut g, x, ForwardMode::Eval).unwrap();
            g.value(logits).to_vec()
        };
        let (la, lb) = (run(&a), run(&b));
        assert_eq!(la, lb, "amplitude-only outputs must be identical");
    }

    #[test]
    fn full_complex_model_is_phase_sensitive() {
        let model = build_cvnet5::<f64>(3, ActivationKind::CRelu, PoolVariant::Area, 0.125, 32, 5)
            .unwrap();
        let (a, b) = phase_pair(11);
        let run = |x: &ComplexTensor<f64>| {
            let mut g = Graph::new();
            let logits = model.forward(&mut g, x, ForwardMode::Eval).unwrap();
            g.value(logits).to_vec()
        };
        assert_ne!(run(&a), run(&b), "complex model should see phase");
    }

    #[test]
    fn amplitude_only_freezes_expected_coordinate_count() {
        let model = build_cvnet5::<f64>(3, ActivationKind::CRelu, PoolVariant::Area, 0.25, 32, 9)
            .unwrap();
        let full = model.trainable_real_count();
        let complex_coords: usize = model
            .parameters()
            .iter()
            .filter(|p| p.kind() == crate::graph::ParamKind::Complex)
            .map(|p| p.plane_len())
            .sum();
        let gamma_ri: usize = model
            .bn_layers()
            .iter()
            .map(|(_, bn)| bn.gamma_ri.plane_len())
            .sum();
        let ablated = amplitude_only_mode(model);
        let reduced = ablated.trainable_real_count();
        // Every complex parameter loses its imaginary half and every BN loses
        // its cross-term gamma; the surviving count is half up to the two
        // remaining gamma diagonals per channel.
        assert_eq!(full - reduced, complex_coords + gamma_ri);
        let ratio = reduced as f64 / full as f64;
        assert!((0.5..0.51).contains(&ratio), "ratio {ratio}");
    }
}
