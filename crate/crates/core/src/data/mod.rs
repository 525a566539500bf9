//! Art-free training data, the training loop and the recognition evaluators.

mod eval;
mod manifest;
mod shapes;
mod textures;
mod train;

pub use eval::{cross_net_agreement, evaluate, Agreement, Classifier, Evaluation};
pub use manifest::{load_manifest, load_manifest_with_classes, write_manifest, MANIFEST_FILE};
pub use shapes::{
    coverage, generate_heldout, generate_shapes, heldout_image, ColorMode, Placement, ShapeClass, ShapesSpec,
};
pub use textures::{texture, TextureKind};
pub use train::{train, EpochMetrics, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `C x H x W`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<LabeledImage>, classes: Vec<String>) -> Result<Self> {
        let k = classes.len();
        if let Some(bad) = images.iter().find(|im| im.label >= k) {
            return Err(Error::OutOfRange(format!(
                "image {} has label {} with {k} classes",
                bad.id, bad.label
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.image.shape();
            if let Some(bad) = images.iter().find(|im| im.image.shape() != shape) {
                return Err(Error::shape(
                    "dataset",
                    format!("image {} has shape {:?}, expected {shape:?}", bad.id, bad.image.shape()),
                ));
            }
        }
        Ok(Self { images, classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|im| im.image.shape())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|im| im.label).collect()
    }

    /// Stacks the selected images into an `N x C x H x W` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        stack(indices.iter().map(|&i| &self.images[i].image))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        self.images.iter().for_each(|im| h[im.label] += 1);
        h
    }
}

/// Stacks equally-shaped `C x H x W` images into one batch.
pub fn stack<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    let mut n = 0;
    for im in images {
        match &shape {
            None => shape = Some(im.shape().to_vec()),
            Some(s) if s.as_slice() != im.shape() => {
                return Err(Error::shape("stack", format!("{s:?} vs {:?}", im.shape())))
            }
            _ => {}
        }
        data.extend_from_slice(im.data());
        n += 1;
    }
    let shape = shape.ok_or(Error::Empty("batch"))?;
    let mut full = vec![n];
    full.extend(shape);
    Tensor::new(full, data)
}
