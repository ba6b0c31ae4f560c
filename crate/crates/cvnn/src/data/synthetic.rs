//! Synthetic phase-encoded dataset.
//!
//! Each sample is `z[u,v] = m[u,v] * exp(j((k_c*u + l_c*v)/size + phi))` where
//! the modulus `m` is Rayleigh-distributed speckle with a common scale for all
//! classes (so `|z|` carries no class information unless
//! `amplitude_discriminable` is set, in which case the scale varies per
//! class), `(k_c, l_c)` is a class-specific integer frequency pair with
//! pairwise distinct directions, and `phi ~ Normal(0, noise_sigma^2)` per
//! pixel. Deterministic under the seed; 70/30 train/test split per class.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

use super::manifest::{write_manifest, DatasetManifest, Split};
use super::{write_cvsl, SliceRecord};

#[derive(Clone, Debug)]
pub struct PhaseDatasetOptions {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub size: usize,
    pub amplitude_discriminable: bool,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhaseDatasetOptions {
    fn default() -> Self {
        PhaseDatasetOptions {
            num_classes: 3,
            samples_per_class: 200,
            size: 32,
            amplitude_discriminable: false,
            noise_sigma: 0.3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSummary {
    pub train_records: usize,
    pub test_records: usize,
    pub class_frequencies: Vec<(u32, u32)>,
}

/// Class frequency pairs `(k, l)` with pairwise distinct directions,
/// enumerated deterministically. Rejects class counts the size cannot host.
pub fn class_frequencies(num_classes: usize, size: usize) -> Result<Vec<(u32, u32)>> {
    let limit = (size / 4).max(1) as u32;
    let mut candidates: Vec<(u32, u32)> = Vec::new();
    for k in 1..=limit {
        for l in 1..=limit {
            candidates.push((k, l));
        }
    }
    candidates.sort_by_key(|&(k, l)| (k + l, k, l));
    let gcd = |mut a: u32, mut b: u32| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut directions: Vec<(u32, u32)> = Vec::new();
    let mut picked = Vec::new();
    for (k, l) in candidates {
        let g = gcd(k, l);
        let dir = (k / g, l / g);
        if !directions.contains(&dir) {
            directions.push(dir);
            picked.push((k, l));
        }
    }
    if num_classes > picked.len() {
        return Err(Error::invalid(
            "generate_phase_dataset",
            format!(
                "{} classes exceed the {} distinct frequency directions available at size {}",
                num_classes,
                picked.len(),
                size
            ),
        ));
    }
    picked.truncate(num_classes);
    Ok(picked)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate one sample in f64 and store as f32.
fn render_sample(
    class: usize,
    index: usize,
    freq: (u32, u32),
    opts: &PhaseDatasetOptions,
) -> SliceRecord<f32> {
    let stream = splitmix64(
        opts.seed ^ splitmix64((class as u64) << 32 | index as u64),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let noise = Normal::new(0.0, opts.noise_sigma.max(0.0)).expect("sigma >= 0");
    let scale = if opts.amplitude_discriminable {
        1.0 + 0.5 * class as f64
    } else {
        1.0
    };
    let size = opts.size;
    let (k, l) = (freq.0 as f64, freq.1 as f64);
    let mut re = Vec::with_capacity(size * size);
    let mut im = Vec::with_capacity(size * size);
    for u in 0..size {
        for v in 0..size {
            // Rayleigh speckle modulus.
            let uniform: f64 = rng.random();
            let m = scale * (-2.0 * (1.0 - uniform).ln()).sqrt();
            let phi = if opts.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let theta = (k * u as f64 + l * v as f64) / size as f64 + phi;
            re.push((m * theta.cos()) as f32);
            im.push((m * theta.sin()) as f32);
        }
    }
    SliceRecord {
        image: ComplexTensor::from_planes(vec![1, size, size], re, im).expect("sized planes"),
        label: class,
        id: format!("c{class}_{index:04}"),
    }
}

/// Write CVSL files plus `train.manifest` / `test.manifest` under `out_dir`.
pub fn generate_phase_dataset(
    opts: &PhaseDatasetOptions,
    out_dir: &Path,
) -> Result<DatasetSummary> {
    if opts.num_classes < 2 {
        return Err(Error::invalid(
            "generate_phase_dataset",
            "num_classes must be >= 2",
        ));
    }
    if opts.size < 8 {
        return Err(Error::invalid("generate_phase_dataset", "size must be >= 8"));
    }
    if opts.samples_per_class == 0 {
        return Err(Error::invalid(
            "generate_phase_dataset",
            "samples_per_class must be >= 1",
        ));
    }
    let freqs = class_frequencies(opts.num_classes, opts.size)?;
    let train_per_class = opts.samples_per_class * 7 / 10;

    for split in ["train", "test"] {
        fs::create_dir_all(out_dir.join(split)).map_err(|e| Error::io(out_dir.join(split), e))?;
    }

    let mut train_records = Vec::new();
    let mut test_records = Vec::new();
    for class in 0..opts.num_classes {
        for index in 0..opts.samples_per_class {
            let record = render_sample(class, index, freqs[class], opts);
            let split = if index < train_per_class { "train" } else { "test" };
            let rel = PathBuf::from(split).join(format!("{}.cvsl", record.id));
            write_cvsl(&out_dir.join(&rel), &record)?;
            if index < train_per_class {
                train_records.push((rel, class));
            } else {
                test_records.push((rel, class));
            }
        }
    }

    let train = DatasetManifest::new(train_records, Split::Train)?;
    let test = DatasetManifest::new(test_records, Split::Test)?;
    write_manifest(&out_dir.join(Split::Train.manifest_name()), &train)?;
    write_manifest(&out_dir.join(Split::Test.manifest_name()), &test)?;
    Ok(DatasetSummary {
        train_records: train.records.len(),
        test_records: test.records.len(),
        class_frequencies: freqs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_directions_are_distinct() {
        let freqs = class_frequencies(5, 32).unwrap();
        assert_eq!(freqs.len(), 5);
        for i in 0..freqs.len() {
            for j in i + 1..freqs.len() {
                let (a, b) = (freqs[i], freqs[j]);
                // cross product nonzero <=> directions differ
                assert_ne!(a.0 * b.1, a.1 * b.0, "{a:?} vs {b:?}");
            }
        }
        assert!(class_frequencies(100, 8).is_err());
    }

    #[test]
    fn split_arithmetic_matches_70_30() {
        let dir = tempfile::tempdir().unwrap();
        let opts = PhaseDatasetOptions {
            num_classes: 3,
            samples_per_class: 20,
            size: 8,
            ..Default::default()
        };
        let summary = generate_phase_dataset(&opts, dir.path()).unwrap();
        assert_eq!(summary.train_records, 42);
        assert_eq!(summary.test_records, 18);
    }

    #[test]
    fn zero_noise_gives_identical_phase_planes_within_a_class() {
        let opts = PhaseDatasetOptions {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let freqs = class_frequencies(opts.num_classes, opts.size).unwrap();
        let a = render_sample(1, 0, freqs[1], &opts);
        let b = render_sample(1, 7, freqs[1], &opts);
        for i in 0..a.image.len() {
            let pa = (a.image.im().data()[i] as f64).atan2(a.image.re().data()[i] as f64);
            let pb = (b.image.im().data()[i] as f64).atan2(b.image.re().data()[i] as f64);
            // Moduli differ (independent speckle) but phases agree.
            assert!((pa - pb).abs() < 1e-5, "pixel {i}: {pa} vs {pb}");
        }
    }

    #[test]
    fn amplitude_blind_classes_share_mean_modulus() {
        let opts = PhaseDatasetOptions {
            num_classes: 3,
            samples_per_class: 50,
            size: 32,
            amplitude_discriminable: false,
            noise_sigma: 0.3,
            seed: 11,
        };
        let freqs = class_frequencies(3, 32).unwrap();
        let mut means = Vec::new();
        for class in 0..3 {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for index in 0..opts.samples_per_class {
                let rec = render_sample(class, index, freqs[class], &opts);
                for v in rec.image.modulus().data() {
                    sum += *v as f64;
                }
                count += rec.image.len();
            }
            means.push(sum / count as f64);
        }
        let avg = means.iter().sum::<f64>() / 3.0;
        for m in &means {
            assert!(
                (m - avg).abs() / avg < 0.02,
                "per-class mean modulus {means:?}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let opts = PhaseDatasetOptions {
            samples_per_class: 4,
            size: 8,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_phase_dataset(&opts, d1.path()).unwrap();
        generate_phase_dataset(&opts, d2.path()).unwrap();
        let file = "train/c0_0000.cvsl";
        assert_eq!(
            std::fs::read(d1.path().join(file)).unwrap(),
            std::fs::read(d2.path().join(file)).unwrap()
        );
    }
}
