//! Full-batch Adam training with validation-loss model selection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::hetgraph::{Dataset, HeteroGraph, NodeId};
use crate::model::{forward, loss, ModelInputs, ModelParams};

/// Moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. `weight_decay` is added to the gradient
/// as `wd · θ` before the moments are updated.
///
/// ```
/// use shgnn::autodiff::Tensor;
/// use shgnn::train::{adam_step, AdamState};
///
/// let mut x = vec![Tensor::scalar(0.0)];
/// let mut state = AdamState::new(&x);
/// for _ in 0..100 {
///     let g = 2.0 * (x[0].item() - 5.0);
///     adam_step(&mut x, &[Tensor::scalar(g)], &mut state, 0.1, 0.0).unwrap();
/// }
/// assert!((x[0].item() - 5.0).abs() < 0.5);
/// ```
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        for (mi, (&gi, &pi)) in m.iter_mut().zip(g.iter().zip(p.data())) {
            *mi = b1 * *mi + (1.0 - b1) * (gi + weight_decay * pi);
        }
        let v = state.v[k].data_mut();
        for (vi, (&gi, &pi)) in v.iter_mut().zip(g.iter().zip(p.data())) {
            let gi = gi + weight_decay * pi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        if lr == 0.0 {
            continue;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        for (pi, (&mi, &vi)) in p.data_mut().iter_mut().zip(m.iter().zip(v)) {
            *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// One line of the training log. Epoch 0 is the untrained model; epoch `e`
/// is evaluated after `e` updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub inputs: ModelInputs,
    /// Parameters of the best epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Index of the largest entry per row; ties go to the lower index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `nodes` whose argmax matches their label.
pub fn accuracy(g: &HeteroGraph, embeddings: &Tensor, nodes: &[NodeId]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(embeddings);
    let hits = nodes
        .iter()
        .filter(|&&v| g.label(v) == Some(pred[g.local_index(v)]))
        .count();
    hits as f64 / nodes.len() as f64
}

/// Trains on the training split, selecting the epoch with the lowest
/// validation loss (training loss when there is no validation split).
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let inputs = ModelInputs::prepare(&dataset.graph, config)?;
    let params = ModelParams::init(&inputs, config.seed);
    fit_from(dataset, config, inputs, params)
}

/// [`fit`] starting from given inputs and parameters.
pub fn fit_from(dataset: &Dataset, config: &TrainConfig, inputs: ModelInputs, mut params: ModelParams) -> Result<TrainOutcome> {
    config.validate()?;
    let g = &dataset.graph;
    let splits = &dataset.splits;
    if splits.train.is_empty() {
        return Err(Error::Validation("the training split is empty".into()));
    }
    let mut adam = AdamState::new(&params.values);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    // name and norm of the largest gradient of the latest update
    let mut largest = ("none".to_string(), 0.0);

    for epoch in 0..=config.epochs {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let out = forward(&mut tape, &inputs, &params, &vars, false)?;
        let train_loss = loss(&mut tape, g, out.embeddings, &splits.train)?;
        let val_loss = if splits.validation.is_empty() {
            None
        } else {
            Some(loss(&mut tape, g, out.embeddings, &splits.validation)?)
        };
        let emb = tape.value(out.embeddings);
        let entry = EpochLog {
            epoch,
            train_loss: tape.value(train_loss).item(),
            train_acc: accuracy(g, emb, &splits.train),
            val_loss: val_loss.map(|v| tape.value(v).item()),
            val_acc: val_loss.map(|_| accuracy(g, emb, &splits.validation)),
        };
        let score = entry.val_loss.unwrap_or(entry.train_loss);
        if !entry.train_loss.is_finite() || !score.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: entry.train_loss,
                param: largest.0,
                grad_norm: largest.1,
            });
        }
        log::debug!(
            "epoch {epoch}: train loss {:.6} acc {:.3}, val loss {:?}",
            entry.train_loss,
            entry.train_acc,
            entry.val_loss
        );
        log.push(entry);

        if best.as_ref().map_or(true, |b| score < b.0) {
            best = Some((score, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = true;
                break;
            }
        }
        if epoch == config.epochs {
            break;
        }

        let grads = tape.backward(train_loss)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(&params.values)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        largest = ("none".to_string(), 0.0);
        for (name, gr) in params.names.iter().zip(&grads) {
            let norm = gr.norm();
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: log[epoch].train_loss,
                    param: name.clone(),
                    grad_norm: norm,
                });
            }
            if norm > largest.1 {
                largest = (name.clone(), norm);
            }
        }
        adam_step(&mut params.values, &grads, &mut adam, config.learning_rate, config.weight_decay)?;
    }

    let (_, best_epoch, params) = best.expect("at least one epoch is evaluated");
    Ok(TrainOutcome {
        inputs,
        params,
        best_epoch,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_normalized() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![3.0, -0.5])], &mut s, 0.01, 0.0).unwrap();
        let d = p[0].data();
        assert!((d[0] + 0.01).abs() < 1e-9);
        assert!((d[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut s, 0.01, 0.0).is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        let t = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(argmax_rows(&t), [0, 1]);
    }
}
