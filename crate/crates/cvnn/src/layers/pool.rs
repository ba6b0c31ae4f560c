//! The three complex max-pooling variants.
//!
//! - `RealSplit`: independent real-valued max over the re and im planes
//!   (two index maps); can synthesize values present in no input element.
//! - `Amplitude`: keeps the complex element with the largest modulus
//!   `f1 = sqrt(x^2 + y^2)`.
//! - `Area`: keeps the complex element with the largest `f2 = |x * y|`,
//!   which tends to retain elements where both parts are present.
//!
//! Windows tile the valid region with no padding; partial windows are
//! discarded. Ties resolve to the first index in row-major scan order, and
//! the full gradient routes to the selected element.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CVar, Graph};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolVariant {
    RealSplit,
    Amplitude,
    Area,
}

impl PoolVariant {
    pub const ALL: [PoolVariant; 3] = [
        PoolVariant::RealSplit,
        PoolVariant::Amplitude,
        PoolVariant::Area,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolVariant::RealSplit => "real-split",
            PoolVariant::Amplitude => "amplitude",
            PoolVariant::Area => "area",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real-split" | "real_split" => Ok(PoolVariant::RealSplit),
            "amplitude" => Ok(PoolVariant::Amplitude),
            "area" => Ok(PoolVariant::Area),
            other => Err(Error::invalid(
                "pool",
                format!("unknown pooling variant '{other}' (real-split|amplitude|area)"),
            )),
        }
    }
}

/// Flat input indices chosen per output element. `im` is present only for
/// `RealSplit`, whose planes select independently.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    pub re: Vec<usize>,
    pub im: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ComplexMaxPool {
    pub variant: PoolVariant,
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl ComplexMaxPool {
    pub fn new(variant: PoolVariant, window: (usize, usize), stride: (usize, usize)) -> Self {
        ComplexMaxPool {
            variant,
            window,
            stride,
        }
    }

    fn out_dims(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
        if shape.len() != 4 {
            return Err(Error::invalid(
                "complex_maxpool",
                format!("expected 4-D input, got {shape:?}"),
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        let (wh, ww) = self.window;
        let (sh, sw) = self.stride;
        if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
            return Err(Error::invalid(
                "complex_maxpool",
                "window and stride must be >= 1",
            ));
        }
        if wh > h || ww > w {
            return Err(Error::invalid(
                "complex_maxpool",
                format!("window {wh}x{ww} exceeds input extent {h}x{w}"),
            ));
        }
        Ok((
            shape[0],
            shape[1],
            (h - wh) / sh + 1,
            (w - ww) / sw + 1,
        ))
    }

    /// Pure selection: evaluate the variant's score over each window and keep
    /// the argmax (first index wins ties). Returns the pooled tensor and the
    /// flat index maps used for backward routing.
    pub fn select<P: Scalar>(
        &self,
        input: &ComplexTensor<P>,
    ) -> Result<(ComplexTensor<P>, PoolIndices)> {
        let (n, c, oh, ow) = self.out_dims(input.shape())?;
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let (wh, ww) = self.window;
        let (sh, sw) = self.stride;
        let re = input.re().data();
        let im = input.im().data();
        let out_count = n * c * oh * ow;

        let mut idx_re = Vec::with_capacity(out_count);
        let mut idx_im = if self.variant == PoolVariant::RealSplit {
            Some(Vec::with_capacity(out_count))
        } else {
            None
        };

        for ni in 0..n {
            for ci in 0..c {
                let plane = (ni * c + ci) * h * w;
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let (h0, w0) = (ohi * sh, owi * sw);
                        match self.variant {
                            PoolVariant::RealSplit => {
                                let mut best_re = plane + h0 * w + w0;
                                let mut best_im = best_re;
                                for u in 0..wh {
                                    for v in 0..ww {
                                        let idx = plane + (h0 + u) * w + (w0 + v);
                                        if re[idx] > re[best_re] {
                                            best_re = idx;
                                        }
                                        if im[idx] > im[best_im] {
                                            best_im = idx;
                                        }
                                    }
                                }
                                idx_re.push(best_re);
                                idx_im.as_mut().expect("real-split").push(best_im);
                            }
                            PoolVariant::Amplitude | PoolVariant::Area => {
                                let score = |idx: usize| -> P {
                                    let (x, y) = (re[idx], im[idx]);
                                    match self.variant {
                                        // Comparing f1^2 keeps the argmax and ties of f1.
                                        PoolVariant::Amplitude => x.mul(x).add(y.mul(y)),
                                        PoolVariant::Area => x.mul(y).abs(),
                                        PoolVariant::RealSplit => unreachable!(),
                                    }
                                };
                                let mut best = plane + h0 * w + w0;
                                let mut best_score = score(best);
                                for u in 0..wh {
                                    for v in 0..ww {
                                        let idx = plane + (h0 + u) * w + (w0 + v);
                                        let s = score(idx);
                                        if s > best_score {
                                            best = idx;
                                            best_score = s;
                                        }
                                    }
                                }
                                idx_re.push(best);
                            }
                        }
                    }
                }
            }
        }

        let out_shape = vec![n, c, oh, ow];
        let out_re: Vec<P> = idx_re.iter().map(|&i| re[i]).collect();
        let out_im: Vec<P> = match &idx_im {
            Some(map) => map.iter().map(|&i| im[i]).collect(),
            None => idx_re.iter().map(|&i| im[i]).collect(),
        };
        Ok((
            ComplexTensor::from_planes(out_shape, out_re, out_im)?,
            PoolIndices {
                re: idx_re,
                im: idx_im,
            },
        ))
    }

    pub fn forward<P: Scalar>(&self, g: &mut Graph<P>, x: CVar) -> Result<CVar> {
        let input = g.cvalue(x);
        let (pooled, indices) = self.select(&input)?;
        let out_shape = pooled.shape().to_vec();
        let re_map = Arc::new(indices.re);
        let im_map = match indices.im {
            Some(map) => Arc::new(map),
            None => Arc::clone(&re_map),
        };
        Ok(CVar {
            re: g.gather(x.re, re_map, out_shape.clone())?,
            im: g.gather(x.im, im_map, out_shape)?,
        })
    }
}


/// Free-function form of the selection used by oracle-style tests.
pub fn pool_select<P: Scalar>(
    input: &ComplexTensor<P>,
    variant: PoolVariant,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(ComplexTensor<P>, PoolIndices)> {
    ComplexMaxPool::new(variant, window, stride).select(input)
}
