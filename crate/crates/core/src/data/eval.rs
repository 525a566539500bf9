use serde::{Deserialize, Serialize};

use super::{stack, Dataset};
use crate::error::{Error, Result};
use crate::net::RecognitionNet;
use crate::tensor::Tensor;

/// Anything that assigns a top-1 class to a batch of images.
pub trait Classifier {
    fn class_names(&self) -> &[String];
    fn classify(&self, batch: &Tensor) -> Result<Vec<usize>>;
}

impl Classifier for RecognitionNet {
    fn class_names(&self) -> &[String] {
        RecognitionNet::class_names(self)
    }

    fn classify(&self, batch: &Tensor) -> Result<Vec<usize>> {
        self.predict(batch)
    }
}

const EVAL_BATCH: usize = 128;

fn classify_all<C: Classifier + ?Sized>(c: &C, images: &[&Tensor]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        out.extend(c.classify(&stack(chunk.iter().copied())?)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate<C: Classifier + ?Sized>(classifier: &C, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let k = classifier.class_names().len();
    if data.classes.len() != k {
        return Err(Error::ClassSetMismatch(
            data.classes.clone(),
            classifier.class_names().to_vec(),
        ));
    }
    let images: Vec<&Tensor> = data.images.iter().map(|im| &im.image).collect();
    let predicted = classify_all(classifier, &images)?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (im, &p) in data.images.iter().zip(&predicted) {
        confusion[im.label][p] += 1;
    }
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: trace as f64 / data.len() as f64,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub rate: f64,
    /// `(top-1 of A, top-1 of B)` per image.
    pub pairs: Vec<(usize, usize)>,
}

/// Fraction of images on which two classifiers with the same class set
/// agree on the top-1 class.
pub fn cross_net_agreement<A, B>(a: &A, b: &B, images: &[&Tensor]) -> Result<Agreement>
where
    A: Classifier + ?Sized,
    B: Classifier + ?Sized,
{
    if a.class_names() != b.class_names() {
        return Err(Error::ClassSetMismatch(
            a.class_names().to_vec(),
            b.class_names().to_vec(),
        ));
    }
    if images.is_empty() {
        return Err(Error::Empty("agreement images"));
    }
    let pa = classify_all(a, images)?;
    let pb = classify_all(b, images)?;
    let pairs: Vec<(usize, usize)> = pa.into_iter().zip(pb).collect();
    let same = pairs.iter().filter(|(x, y)| x == y).count();
    Ok(Agreement {
        rate: same as f64 / pairs.len() as f64,
        pairs,
    })
}
