//! On-disk formats and dataset plumbing: the CVSL complex-slice binary
//! format, tab-separated manifests, preprocessing (normalize, center
//! crop/pad), the synthetic phase-encoded dataset generator, and checkpoint
//! persistence.

mod checkpoint;
mod cvsl;
mod manifest;
mod preprocess;
mod synthetic;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use cvsl::{read_cvsl, write_cvsl, SliceRecord};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, Split};
pub use preprocess::preprocess;
pub use synthetic::{
    class_frequencies, generate_phase_dataset, DatasetSummary, PhaseDatasetOptions,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ComplexTensor;

/// In-memory dataset: equally sized complex slices plus integer labels.
pub struct Dataset<P: Scalar> {
    pub images: Vec<ComplexTensor<P>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<P: Scalar> Dataset<P> {
    pub fn new(
        images: Vec<ComplexTensor<P>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} images but {} labels", images.len(), labels.len()),
            ));
        }
        if let Some(first) = images.first() {
            for img in &images {
                if img.shape() != first.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "dataset",
                        left: first.shape().to_vec(),
                        right: img.shape().to_vec(),
                    });
                }
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(
                "dataset",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stack the given records into an NCHW batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(ComplexTensor<P>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::invalid("dataset", "empty batch"));
        }
        let shape = self.images[indices[0]].shape();
        let (h, w) = (shape[1], shape[2]);
        let per = h * w;
        let mut re = Vec::with_capacity(indices.len() * per);
        let mut im = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            re.extend_from_slice(self.images[i].re().data());
            im.extend_from_slice(self.images[i].im().data());
            labels.push(self.labels[i]);
        }
        Ok((
            ComplexTensor::from_planes(vec![indices.len(), 1, h, w], re, im)?,
            labels,
        ))
    }
}

/// Read a manifest and load every record, preprocessing to `target` pixels.
pub fn load_dataset<P: Scalar>(
    base_dir: &Path,
    manifest: &DatasetManifest,
    target: usize,
) -> Result<Dataset<P>> {
    let mut images = Vec::with_capacity(manifest.records.len());
    let mut labels = Vec::with_capacity(manifest.records.len());
    for (rel, label) in &manifest.records {
        let record: SliceRecord<P> = read_cvsl(&base_dir.join(rel))?;
        let record = preprocess(&record, target)?;
        images.push(record.image);
        labels.push(*label);
    }
    Dataset::new(images, labels, manifest.class_names.len())
}
