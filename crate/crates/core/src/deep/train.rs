use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{cox_loss, loss_and_gradients, DeepError, Gradients, MlpSurvModel, Result};
use crate::dataset::SurvivalLabel;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on weights (not biases), added to the gradient.
    pub weight_decay: f64,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    /// Epochs without a new best validation loss before stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::clinical()
    }
}

impl TrainConfig {
    pub fn clinical() -> Self {
        Self { learning_rate: 1e-3, epochs: 500, weight_decay: 1e-4, hidden_dims: vec![32], seed: 0, early_stop_patience: 50 }
    }

    pub fn imaging() -> Self {
        Self { hidden_dims: vec![64], ..Self::clinical() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DeepError::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(DeepError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(DeepError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

struct Moments {
    m: Gradients,
    v: Gradients,
}

impl Moments {
    fn zeros(model: &MlpSurvModel) -> Self {
        let z = Gradients {
            weights: model.layers.iter().map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols())).collect(),
            biases: model.layers.iter().map(|l| DVector::zeros(l.bias.len())).collect(),
        };
        Self { m: z.clone(), v: z }
    }
}

fn adam_step(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: i32) {
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..param.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
    }
}

fn validation_loss(model: &MlpSurvModel, x: &DMatrix<f64>, labels: &[SurvivalLabel], epoch: usize) -> Result<f64> {
    let scores = model.forward(x)?;
    let (loss, _) = cox_loss(&scores, labels)?;
    if !loss.is_finite() {
        return Err(DeepError::DivergedLoss { epoch });
    }
    Ok(loss)
}

/// Full-batch training with Adam on the Cox loss.
///
/// Returns the trained model and the training loss recorded before each
/// update. When the validation set has at least one event, the snapshot
/// with the lowest validation loss is returned and training stops after
/// `early_stop_patience` epochs without improvement.
pub fn train(
    model: &MlpSurvModel,
    x: &DMatrix<f64>,
    labels: &[SurvivalLabel],
    x_val: &DMatrix<f64>,
    labels_val: &[SurvivalLabel],
    config: &TrainConfig,
) -> Result<(MlpSurvModel, Vec<f64>)> {
    config.validate()?;
    if !labels.iter().any(|l| l.event) {
        return Err(DeepError::NoEvents);
    }
    if x_val.nrows() != labels_val.len() {
        return Err(DeepError::DimensionMismatch { expected: labels_val.len(), found: x_val.nrows() });
    }
    let use_val = labels_val.iter().any(|l| l.event);

    let mut current = model.clone();
    let mut moments = Moments::zeros(model);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, MlpSurvModel)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        let (loss, mut grads) = loss_and_gradients(&current, x, labels).map_err(|e| match e {
            DeepError::Cox(_) => DeepError::DivergedLoss { epoch },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(DeepError::DivergedLoss { epoch });
        }
        history.push(loss);

        if use_val {
            let vl = validation_loss(&current, x_val, labels_val, epoch)?;
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, current.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    break;
                }
            }
        }

        let t = epoch as i32 + 1;
        for (k, layer) in current.layers.iter_mut().enumerate() {
            let gw = &mut grads.weights[k];
            if config.weight_decay > 0.0 {
                *gw += &layer.weights * config.weight_decay;
            }
            adam_step(
                layer.weights.as_mut_slice(),
                gw.as_slice(),
                moments.m.weights[k].as_mut_slice(),
                moments.v.weights[k].as_mut_slice(),
                config.learning_rate,
                t,
            );
            adam_step(
                layer.bias.as_mut_slice(),
                grads.biases[k].as_slice(),
                moments.m.biases[k].as_mut_slice(),
                moments.v.biases[k].as_mut_slice(),
                config.learning_rate,
                t,
            );
        }
        if current.layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
            return Err(DeepError::DivergedLoss { epoch });
        }
    }

    if use_val {
        let vl = validation_loss(&current, x_val, labels_val, history.len())?;
        match best {
            Some((b, snapshot)) if b <= vl => return Ok((snapshot, history)),
            _ => return Ok((current, history)),
        }
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::{init_model, Modality};
    use crate::metrics::c_index;
    use crate::rng;

    fn signal_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<SurvivalLabel>) {
        let mut r = rng::seeded(seed);
        let mut x = DMatrix::zeros(n, 3);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..3 {
                x[(i, j)] = rng::standard_normal(&mut r);
            }
            let rate = 0.1 * (3.0 * x[(i, 0)]).exp();
            let t = -rng::open_unit(&mut r).ln() / rate;
            let c = -rng::open_unit(&mut r).ln() / 0.02;
            labels.push(SurvivalLabel { event: t <= c, time_days: t.min(c) });
        }
        (x, labels)
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let (x, labels) = signal_data(40, 1);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, hidden_dims: vec![4], ..TrainConfig::default() };
        let m = init_model(3, &cfg, Modality::Clinical).unwrap();
        let empty = DMatrix::zeros(0, 3);
        let (trained, hist) = train(&m, &x, &labels, &empty, &[], &cfg).unwrap();
        assert_eq!(trained, m);
        assert!(hist.iter().all(|&h| h == hist[0]));
    }

    #[test]
    fn learns_strong_signal_and_is_reproducible() {
        let (x, labels) = signal_data(500, 2);
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 200, hidden_dims: vec![8], seed: 4, ..TrainConfig::default() };
        let m = init_model(3, &cfg, Modality::Clinical).unwrap();
        let empty = DMatrix::zeros(0, 3);
        let (trained, hist) = train(&m, &x, &labels, &empty, &[], &cfg).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let c = c_index(&trained.forward(&x).unwrap(), &labels).unwrap();
        let oracle: Vec<f64> = x.column(0).iter().copied().collect();
        assert!(c > 0.85, "c = {c}, oracle = {}", c_index(&oracle, &labels).unwrap());
        let imp = trained.feature_importance();
        assert!(imp[0] > imp[1] && imp[0] > imp[2]);
        let (again, _) = train(&m, &x, &labels, &empty, &[], &cfg).unwrap();
        assert_eq!(trained, again);
    }

    #[test]
    fn early_stopping_returns_a_snapshot() {
        let (x, labels) = signal_data(200, 3);
        let (xv, lv) = signal_data(60, 4);
        let cfg = TrainConfig { learning_rate: 5e-2, epochs: 300, hidden_dims: vec![16], early_stop_patience: 5, ..TrainConfig::default() };
        let m = init_model(3, &cfg, Modality::Clinical).unwrap();
        let (_, hist) = train(&m, &x, &labels, &xv, &lv, &cfg).unwrap();
        assert!(hist.len() <= 300);
        assert!(hist.iter().all(|h| h.is_finite()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, _) = signal_data(10, 5);
        let censored = vec![SurvivalLabel::censored(1.0); 10];
        let cfg = TrainConfig { hidden_dims: vec![2], ..TrainConfig::default() };
        let m = init_model(3, &cfg, Modality::Clinical).unwrap();
        let empty = DMatrix::zeros(0, 3);
        assert!(matches!(train(&m, &x, &censored, &empty, &[], &cfg), Err(DeepError::NoEvents)));
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(matches!(train(&m, &x, &censored, &empty, &[], &bad), Err(DeepError::InvalidConfig(_))));
    }
}
