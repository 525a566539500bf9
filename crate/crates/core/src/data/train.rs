use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{evaluate, Dataset};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::net::RecognitionNet;
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of the data held out for validation.
    pub validation_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 0,
            validation_split: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning_rate must be > 0, momentum in [0, 1)".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::Config("validation_split must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the training split before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub train_size: usize,
    pub validation_size: usize,
}

impl TrainReport {
    pub fn final_validation_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.validation_accuracy)
    }
}

fn mean_loss(net: &RecognitionNet, data: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(128) {
        let mut tape = Tape::<f32>::new();
        let b = net.bind(&mut tape, false);
        let x = tape.constant(data.batch(chunk)?);
        let acts = net.forward_on(&mut tape, &b, x)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.images[i].label).collect();
        let (loss, _) = tape.softmax_cross_entropy(*acts.last().expect("layers"), &labels)?;
        total += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Minibatch SGD with momentum on softmax cross-entropy.
///
/// The split and the per-epoch shuffles derive from `cfg.seed`; with the same
/// net, data and config the final parameters are bit-identical.
pub fn train(net: &RecognitionNet, data: &Dataset, cfg: &TrainConfig) -> Result<(RecognitionNet, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let [c, h, w] = net.input_shape();
    if data.image_shape() != Some(&[c, h, w][..]) {
        return Err(Error::shape(
            "train",
            format!("data images {:?} vs net input {:?}", data.image_shape(), [c, h, w]),
        ));
    }
    if data.classes.len() != net.num_classes() {
        return Err(Error::ClassSetMismatch(
            data.classes.clone(),
            net.class_names().to_vec(),
        ));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeds::rng(cfg.seed, seeds::TRAIN_SPLIT));
    let n_val = ((data.len() as f64 * cfg.validation_split).round() as usize)
        .clamp(usize::from(data.len() > 1), data.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_set = data.subset(val_idx);

    let mut net = net.clone();
    let initial_loss = mean_loss(&net, data, &train_idx)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut velocity: Vec<Option<(Vec<f32>, Vec<f32>)>> = net
        .params()
        .iter()
        .map(|p| {
            p.as_ref()
                .map(|p| (vec![0.0; p.weight.numel()], vec![0.0; p.bias.numel()]))
        })
        .collect();
    let (lr, mu) = (cfg.learning_rate as f32, cfg.momentum as f32);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut seeds::stream(cfg.seed, seeds::TRAIN_SHUFFLE, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in train_idx.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| data.images[i].label).collect();
            let mut tape = Tape::<f32>::new();
            let binding = net.bind(&mut tape, true);
            let x = tape.constant(data.batch(batch)?);
            let step = net
                .forward_on(&mut tape, &binding, x)
                .and_then(|acts| tape.softmax_cross_entropy(*acts.last().expect("layers"), &labels));
            let (loss, probs) = step.map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch },
                other => other,
            })?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss_value * batch.len() as f64;
            let k = net.num_classes();
            for (row, &label) in probs.data().chunks_exact(k).zip(&labels) {
                let top = row
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                correct += usize::from(top == label);
            }
            tape.backward(loss)?;

            let grads: Vec<(usize, Vec<f32>, Vec<f32>)> = binding
                .param_vars()
                .map(|(i, w, b)| {
                    (
                        i,
                        tape.grad(w).expect("weight grad").to_vec(),
                        tape.grad(b).expect("bias grad").to_vec(),
                    )
                })
                .collect();
            let params = net.params_mut();
            for (i, gw, gb) in grads {
                let p = params[i].as_mut().expect("param layer");
                let (vw, vb) = velocity[i].as_mut().expect("param layer");
                let mut wdata = p.weight.data().to_vec();
                let mut bdata = p.bias.data().to_vec();
                for ((w, v), g) in wdata.iter_mut().zip(vw.iter_mut()).zip(&gw) {
                    *v = mu * *v - lr * g;
                    *w += *v;
                }
                for ((b, v), g) in bdata.iter_mut().zip(vb.iter_mut()).zip(&gb) {
                    *v = mu * *v - lr * g;
                    *b += *v;
                }
                let wshape = p.weight.shape().to_vec();
                let bshape = p.bias.shape().to_vec();
                p.weight = crate::Tensor::new(wshape, wdata).map_err(|_| Error::Divergence { epoch })?;
                p.bias = crate::Tensor::new(bshape, bdata).map_err(|_| Error::Divergence { epoch })?;
            }
        }
        let validation_accuracy = if val_set.is_empty() {
            0.0
        } else {
            evaluate(&net, &val_set)?.accuracy
        };
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            validation_accuracy,
        });
    }
    let validation_size = val_set.len();
    Ok((
        net,
        TrainReport {
            initial_loss,
            epochs,
            train_size: train_idx.len(),
            validation_size,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_shapes, ShapesSpec};
    use crate::net::small_net_8;

    fn tiny() -> (RecognitionNet, Dataset) {
        let spec = ShapesSpec {
            size: 16,
            ..Default::default()
        };
        let data = generate_shapes(&spec, 4, 5).unwrap();
        let net = RecognitionNet::build(small_net_8(8), spec.image_shape(), 8, 5).unwrap();
        (net, data)
    }

    #[test]
    fn single_batch_overfits() {
        let spec = ShapesSpec {
            size: 16,
            ..Default::default()
        };
        let all = generate_shapes(&spec, 2, 9).unwrap();
        let data = all.subset(&(0..9).collect::<Vec<_>>());
        let net = RecognitionNet::build(small_net_8(8), spec.image_shape(), 8, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 0.01,
            validation_split: 0.1,
            ..Default::default()
        };
        let (_, report) = train(&net, &data, &cfg).unwrap();
        assert_eq!(report.train_size, 8);
        assert_eq!(report.epochs.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (net, data) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let (a, ra) = train(&net, &data, &cfg).unwrap();
        let (b, rb) = train(&net, &data, &cfg).unwrap();
        assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
        assert_eq!(ra, rb);
        assert!(ra.epochs[1].train_loss < ra.initial_loss);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (net, data) = tiny();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e30,
            ..Default::default()
        };
        assert!(matches!(train(&net, &data, &cfg), Err(Error::Divergence { epoch: 0 })));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (net, data) = tiny();
        let bad = TrainConfig {
            validation_split: 1.0,
            ..Default::default()
        };
        assert!(train(&net, &data, &bad).is_err());
        let empty = Dataset::new(vec![], data.classes.clone()).unwrap();
        assert!(matches!(
            train(&net, &empty, &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
