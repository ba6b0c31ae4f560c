//! Shape-checked N-dimensional tensors in split real/imaginary representation.
//!
//! A [`ComplexTensor`] stores a complex array `x + yj` as two equally shaped
//! real planes, which keeps every layer's arithmetic in the real domain.
//! Tensors are immutable after construction (storage is shared via `Arc`), so
//! all operations are pure functions that are safe to call concurrently on
//! shared inputs. Layout is row-major; 4-D tensors use NCHW axis order.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Real-valued tensor: one plane of scalars plus a shape.
#[derive(Clone, Debug)]
pub struct RealTensor<P: Scalar> {
    shape: Vec<usize>,
    data: Arc<[P]>,
}

impl<P: Scalar> RealTensor<P> {
    pub fn new(shape: Vec<usize>, data: Vec<P>) -> Result<Self> {
        if element_count(&shape) != data.len() {
            return Err(Error::invalid(
                "RealTensor::new",
                format!(
                    "shape {:?} wants {} elements, got {}",
                    shape,
                    element_count(&shape),
                    data.len()
                ),
            ));
        }
        Ok(RealTensor {
            shape,
            data: data.into(),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        RealTensor {
            shape: shape.to_vec(),
            data: vec![P::ZERO; element_count(shape)].into(),
        }
    }

    pub fn full(shape: &[usize], value: P) -> Self {
        RealTensor {
            shape: shape.to_vec(),
            data: vec![value; element_count(shape)].into(),
        }
    }

    pub fn scalar(value: P) -> Self {
        RealTensor {
            shape: vec![1],
            data: vec![value].into(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<P> {
        self.data.to_vec()
    }

    /// The single element of a scalar-shaped tensor.
    pub fn item(&self) -> Result<P> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::invalid(
                "RealTensor::item",
                format!("expected one element, shape is {:?}", self.shape),
            ))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(P) -> P) -> Self {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect::<Vec<_>>().into(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(P, P) -> P) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data: Vec<P> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(RealTensor {
            shape: self.shape.clone(),
            data: data.into(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a.sub(b))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a.mul(b))
    }

    pub fn scale(&self, c: P) -> Self {
        self.map(|v| v.mul(c))
    }

    pub fn add_scalar(&self, c: P) -> Self {
        self.map(|v| v.add(c))
    }

    /// Reinterpret under a new shape with the same element count. Shares storage.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if element_count(shape) != self.len() {
            return Err(Error::invalid(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                    self.shape,
                    self.len(),
                    shape,
                    element_count(shape)
                ),
            ));
        }
        Ok(RealTensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Rectangular sub-block; `bounds` has one half-open range per axis.
    pub fn slice(&self, bounds: &[Range<usize>]) -> Result<Self> {
        if bounds.len() != self.ndim() {
            return Err(Error::invalid(
                "slice",
                format!("{} ranges for {} axes", bounds.len(), self.ndim()),
            ));
        }
        for (axis, r) in bounds.iter().enumerate() {
            if r.start > r.end || r.end > self.shape[axis] {
                return Err(Error::invalid(
                    "slice",
                    format!(
                        "range {}..{} out of bounds for axis {} of extent {}",
                        r.start, r.end, axis, self.shape[axis]
                    ),
                ));
            }
        }
        let out_shape: Vec<usize> = bounds.iter().map(|r| r.end - r.start).collect();
        let mut out = Vec::with_capacity(element_count(&out_shape));
        let strides = strides_of(&self.shape);
        let mut index = vec![0usize; self.ndim()];
        copy_block(
            &self.data,
            &strides,
            bounds,
            0,
            0,
            &mut index,
            &mut out,
        );
        RealTensor::new(out_shape, out)
    }

    /// Zero padding, `pads[axis] = (before, after)`.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Self> {
        if pads.len() != self.ndim() {
            return Err(Error::invalid(
                "pad",
                format!("{} pad pairs for {} axes", pads.len(), self.ndim()),
            ));
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(pads)
            .map(|(&e, &(b, a))| e + b + a)
            .collect();
        let mut out = vec![P::ZERO; element_count(&out_shape)];
        let in_strides = strides_of(&self.shape);
        let out_strides = strides_of(&out_shape);
        // Walk every input element once, mapping it to its shifted position.
        let n = self.len();
        if n > 0 {
            let mut index = vec![0usize; self.ndim()];
            for flat in 0..n {
                let mut rem = flat;
                let mut dst = 0usize;
                for axis in 0..self.ndim() {
                    let coord = rem / in_strides[axis];
                    rem %= in_strides[axis];
                    index[axis] = coord;
                    dst += (coord + pads[axis].0) * out_strides[axis];
                }
                out[dst] = self.data[flat];
            }
        }
        RealTensor::new(out_shape, out)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&self, other: &Self, axis: usize) -> Result<Self> {
        if self.ndim() != other.ndim() || axis >= self.ndim() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for d in 0..self.ndim() {
            if d != axis && self.shape[d] != other.shape[d] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape.clone(),
                    right: other.shape.clone(),
                });
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] += other.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let self_block: usize = self.shape[axis..].iter().product();
        let other_block: usize = other.shape[axis..].iter().product();
        let mut out = Vec::with_capacity(self.len() + other.len());
        for o in 0..outer {
            out.extend_from_slice(&self.data[o * self_block..(o + 1) * self_block]);
            out.extend_from_slice(&other.data[o * other_block..(o + 1) * other_block]);
        }
        RealTensor::new(out_shape, out)
    }
}

fn copy_block<P: Scalar>(
    data: &[P],
    strides: &[usize],
    bounds: &[Range<usize>],
    axis: usize,
    offset: usize,
    index: &mut [usize],
    out: &mut Vec<P>,
) {
    if axis == bounds.len() {
        out.push(data[offset]);
        return;
    }
    for coord in bounds[axis].clone() {
        copy_block(
            data,
            strides,
            bounds,
            axis + 1,
            offset + coord * strides[axis],
            index,
            out,
        );
    }
}

/// Complex tensor `x + yj` stored as two equally shaped real planes.
#[derive(Clone, Debug)]
pub struct ComplexTensor<P: Scalar> {
    re: RealTensor<P>,
    im: RealTensor<P>,
}

impl<P: Scalar> ComplexTensor<P> {
    pub fn new(re: RealTensor<P>, im: RealTensor<P>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "ComplexTensor::new",
                left: re.shape().to_vec(),
                right: im.shape().to_vec(),
            });
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn from_planes(shape: Vec<usize>, re: Vec<P>, im: Vec<P>) -> Result<Self> {
        let re = RealTensor::new(shape.clone(), re)?;
        let im = RealTensor::new(shape, im)?;
        ComplexTensor::new(re, im)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            re: RealTensor::zeros(shape),
            im: RealTensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn ndim(&self) -> usize {
        self.re.ndim()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &RealTensor<P> {
        &self.re
    }

    pub fn im(&self) -> &RealTensor<P> {
        &self.im
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.zip_map(&other.re, "elementwise_add", |a, b| a.add(b))?,
            im: self.im.zip_map(&other.im, "elementwise_add", |a, b| a.add(b))?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.zip_map(&other.re, "elementwise_sub", |a, b| a.sub(b))?,
            im: self.im.zip_map(&other.im, "elementwise_sub", |a, b| a.sub(b))?,
        })
    }

    /// Element-wise complex product `(ac - bd) + (ad + bc)j`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise_mul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let n = self.len();
        let (ar, ai) = (self.re.data(), self.im.data());
        let (br, bi) = (other.re.data(), other.im.data());
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        for i in 0..n {
            re.push(ar[i].mul(br[i]).sub(ai[i].mul(bi[i])));
            im.push(ar[i].mul(bi[i]).add(ai[i].mul(br[i])));
        }
        ComplexTensor::from_planes(self.shape().to_vec(), re, im)
    }

    /// Element-wise modulus `sqrt(re^2 + im^2)` (the vector length `f1`).
    pub fn modulus(&self) -> RealTensor<P> {
        let data: Vec<P> = self
            .re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&x, &y)| x.mul(x).add(y.mul(y)).sqrt())
            .collect();
        RealTensor::new(self.shape().to_vec(), data).expect("same shape")
    }

    /// Element-wise `|re * im|` (the rectangle-area score `f2` used by area
    /// pooling; the triangle area would carry a factor 1/2, which never
    /// changes an argmax).
    pub fn area_score(&self) -> RealTensor<P> {
        let data: Vec<P> = self
            .re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&x, &y)| x.mul(y).abs())
            .collect();
        RealTensor::new(self.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale_real(&self, c: P) -> Self {
        ComplexTensor {
            re: self.re.scale(c),
            im: self.im.scale(c),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn slice(&self, bounds: &[Range<usize>]) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.slice(bounds)?,
            im: self.im.slice(bounds)?,
        })
    }

    /// Zero padding with `0 + 0j` fill.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.pad(pads)?,
            im: self.im.pad(pads)?,
        })
    }

    pub fn concat(&self, other: &Self, axis: usize) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.concat(&other.re, axis)?,
            im: self.im.concat(&other.im, axis)?,
        })
    }

    /// Largest modulus over the tensor (0 for empty tensors).
    pub fn max_modulus(&self) -> P {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&x, &y)| x.mul(x).add(y.mul(y)))
            .fold(P::ZERO, |acc, v| acc.max(v))
            .sqrt()
    }

    /// Convert the precision of every element.
    pub fn cast<Q: Scalar>(&self) -> ComplexTensor<Q> {
        let re: Vec<Q> = self.re.data().iter().map(|&v| Q::from_f64(v.to_f64())).collect();
        let im: Vec<Q> = self.im.data().iter().map(|&v| Q::from_f64(v.to_f64())).collect();
        ComplexTensor::from_planes(self.shape().to_vec(), re, im).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ct(shape: &[usize], re: &[f64], im: &[f64]) -> ComplexTensor<f64> {
        ComplexTensor::from_planes(shape.to_vec(), re.to_vec(), im.to_vec()).unwrap()
    }

    #[test]
    fn complex_product_matches_scalar_arithmetic() {
        // (1+2j)(3+4j) = -5+10j
        let a = ct(&[1], &[1.0], &[2.0]);
        let b = ct(&[1], &[3.0], &[4.0]);
        let p = a.mul(&b).unwrap();
        assert_eq!(p.re().data(), &[-5.0]);
        assert_eq!(p.im().data(), &[10.0]);
    }

    #[test]
    fn multiplicative_identity() {
        let a = ct(&[2], &[0.5, -3.0], &[1.5, 2.0]);
        let one = ct(&[2], &[1.0, 1.0], &[0.0, 0.0]);
        let p = a.mul(&one).unwrap();
        assert_eq!(p.re().data(), a.re().data());
        assert_eq!(p.im().data(), a.im().data());
    }

    #[test]
    fn additive_inverse() {
        let a = ct(&[1], &[2.0], &[1.0]);
        let b = ct(&[1], &[-2.0], &[-1.0]);
        let s = a.add(&b).unwrap();
        assert_eq!(s.re().data(), &[0.0]);
        assert_eq!(s.im().data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = ComplexTensor::<f64>::zeros(&[2, 3]);
        let b = ComplexTensor::<f64>::zeros(&[3, 2]);
        let err = a.mul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn modulus_cases() {
        let a = ct(&[3], &[3.0, 0.0, 1.0], &[4.0, 0.0, 1.0]);
        let m = a.modulus();
        assert_eq!(m.data()[0], 5.0);
        assert_eq!(m.data()[1], 0.0);
        assert!((m.data()[2] - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn area_score_cases() {
        let a = ct(&[3], &[3.0, 2.0, -3.0], &[0.0, 2.0, 2.0]);
        let s = a.area_score();
        assert_eq!(s.data(), &[0.0, 4.0, 6.0]);
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let t = RealTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn pad_fills_zeros() {
        let t = ct(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        let p = t.pad(&[(0, 0), (0, 0), (1, 1), (1, 1)]).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        let zeros = p.re().data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 12);
        // centered content
        assert_eq!(p.re().data()[5], 1.0);
        assert_eq!(p.re().data()[10], 4.0);
    }

    #[test]
    fn concat_along_channel() {
        let a = ComplexTensor::<f64>::zeros(&[2, 3, 4, 4]);
        let b = ComplexTensor::<f64>::zeros(&[2, 3, 4, 4]);
        let c = a.concat(&b, 1).unwrap();
        assert_eq!(c.shape(), &[2, 6, 4, 4]);
    }

    #[test]
    fn slice_bounds_checked() {
        let t = RealTensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let s = t.slice(&[0..2, 1..3]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 4.0, 5.0]);
        assert!(t.slice(&[0..2, 1..4]).is_err());
    }

    #[test]
    fn zero_sized_tensors_are_legal() {
        let t = ComplexTensor::<f64>::zeros(&[0, 3]);
        assert_eq!(t.len(), 0);
        let u = t.add(&t).unwrap();
        assert_eq!(u.shape(), &[0, 3]);
    }
}
