//! Slice preprocessing: normalize by the maximum modulus (phase untouched),
//! then center-crop or center-pad each spatial axis to the target extent.
//! Odd remainders put the extra row/column at the bottom/right.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::SliceRecord;

pub fn preprocess<P: Scalar>(record: &SliceRecord<P>, target: usize) -> Result<SliceRecord<P>> {
    if target == 0 {
        return Err(Error::invalid("preprocess", "target must be >= 1"));
    }
    let shape = record.image.shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::invalid(
            "preprocess",
            format!("expected [1, H, W] image, got {shape:?}"),
        ));
    }

    let max = record.image.max_modulus();
    let mut image = if max > P::ZERO {
        record.image.scale_real(P::ONE.div(max))
    } else {
        record.image.clone()
    };

    for axis in 1..=2 {
        let extent = image.shape()[axis];
        if extent > target {
            let start = (extent - target) / 2;
            let mut bounds: Vec<std::ops::Range<usize>> =
                image.shape().iter().map(|&e| 0..e).collect();
            bounds[axis] = start..start + target;
            image = image.slice(&bounds)?;
        } else if extent < target {
            let before = (target - extent) / 2;
            let after = target - extent - before;
            let mut pads = vec![(0, 0); 3];
            pads[axis] = (before, after);
            image = image.pad(&pads)?;
        }
    }

    Ok(SliceRecord {
        image,
        label: record.label,
        id: record.id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ComplexTensor;

    fn record(h: usize, w: usize, re: Vec<f64>, im: Vec<f64>) -> SliceRecord<f64> {
        SliceRecord {
            image: ComplexTensor::from_planes(vec![1, h, w], re, im).unwrap(),
            label: 1,
            id: "t".to_string(),
        }
    }

    #[test]
    fn target_sized_unit_modulus_slice_is_unchanged() {
        // Max modulus is exactly 1 (3/5, 4/5 pair), so normalization divides
        // by 1 and the slice passes through bit-identically.
        let r = record(2, 2, vec![0.6, 0.1, 0.0, 0.2], vec![0.8, 0.0, 0.3, 0.1]);
        let out = preprocess(&r, 2).unwrap();
        assert_eq!(out.image.re().data(), r.image.re().data());
        assert_eq!(out.image.im().data(), r.image.im().data());
    }

    #[test]
    fn padding_centers_with_extra_at_bottom_right() {
        let r = record(2, 2, vec![2.0; 4], vec![0.0; 4]);
        let out = preprocess(&r, 4).unwrap();
        assert_eq!(out.image.shape(), &[1, 4, 4]);
        // content occupies rows 1..3, cols 1..3 (before = (4-2)/2 = 1)
        let re = out.image.re().data();
        for (i, &v) in re.iter().enumerate() {
            let (row, col) = (i / 4, i % 4);
            let inside = (1..3).contains(&row) && (1..3).contains(&col);
            assert_eq!(v, if inside { 1.0 } else { 0.0 }, "index {i}");
        }
        // odd remainder goes to the bottom/right
        let odd = preprocess(&r, 5).unwrap();
        assert_eq!(odd.image.shape(), &[1, 5, 5]);
        let re = odd.image.re().data();
        assert_eq!(re[5 + 1], 1.0); // row 1, col 1
        assert_eq!(re[4 * 5 + 4], 0.0); // bottom-right stays padding
    }

    #[test]
    fn cropping_removes_extra_from_bottom_right() {
        let r = record(
            3,
            3,
            (1..=9).map(|v| v as f64).collect(),
            vec![0.0; 9],
        );
        let out = preprocess(&r, 2).unwrap();
        assert_eq!(out.image.shape(), &[1, 2, 2]);
        // normalization (by the slice max, 9) runs before the crop;
        // start = (3-2)/2 = 0 keeps rows 0..2, cols 0..2.
        let re = out.image.re().data();
        assert_eq!(re[0], 1.0 / 9.0);
        assert_eq!(re[3], 5.0 / 9.0);
    }

    #[test]
    fn zero_slice_is_left_unnormalized() {
        let r = record(2, 2, vec![0.0; 4], vec![0.0; 4]);
        let out = preprocess(&r, 2).unwrap();
        assert_eq!(out.image.re().data(), &[0.0; 4]);
    }

    #[test]
    fn max_modulus_is_one_after_preprocessing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let count = 6 * 5;
            let re: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * 9.0 - 4.5).collect();
            let im: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * 9.0 - 4.5).collect();
            let r = record(6, 5, re, im);
            let out = preprocess(&r, 8).unwrap();
            // Exact up to floating-point rounding of the modulus.
            assert!((out.image.max_modulus() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocess_is_idempotent_for_exact_scales() {
        // Max modulus 2.0 divides exactly, so a second pass normalizes by
        // exactly 1 and must be bit-identical.
        let r = record(1, 2, vec![2.0, 0.5], vec![0.0, 0.25]);
        let once = preprocess(&r, 4).unwrap();
        let twice = preprocess(&once, 4).unwrap();
        assert_eq!(once.image.re().data(), twice.image.re().data());
        assert_eq!(once.image.im().data(), twice.image.im().data());
    }
}
