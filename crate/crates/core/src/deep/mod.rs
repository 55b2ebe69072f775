//! Per-modality deep survival heads: an MLP with ReLU hidden layers and a
//! sigmoid output unit, trained on the negative Cox partial log-likelihood.

mod train;

pub use train::{train, TrainConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cox::{loglik_eta_gradient, CoxError, TieMethod};
use crate::dataset::{Dataset, DatasetError, SurvivalLabel};
use crate::metrics::{self, sigmoid};
use crate::rng;

#[derive(Debug, Error)]
pub enum DeepError {
    #[error("input dimension must be at least 1")]
    InvalidDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no observed events")]
    NoEvents,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("variable {0} is constant")]
    ConstantVariable(usize),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T, E = DeepError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[serde(rename = "clin")]
    Clinical,
    #[serde(rename = "img")]
    Imaging,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Clinical => "clin",
            Modality::Imaging => "img",
        }
    }
}

/// Dense layer computing `W a + b`, with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSurvModel {
    /// Input width, hidden widths, then 1.
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
    pub modality: Modality,
}

/// Parameter gradients laid out like [`MlpSurvModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Builds a network `input_dim → hidden… → 1`. Weights are drawn from
/// `U(−1/√fan_in, 1/√fan_in)` in layer order, row-major; biases start at 0.
pub fn init_model(input_dim: usize, config: &TrainConfig, modality: Modality) -> Result<MlpSurvModel> {
    if input_dim == 0 || config.hidden_dims.contains(&0) {
        return Err(DeepError::InvalidDimension);
    }
    let mut dims = vec![input_dim];
    dims.extend(&config.hidden_dims);
    dims.push(1);
    let mut r = rng::seeded(config.seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weights = DMatrix::zeros(fan_out, fan_in);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    weights[(i, j)] = bound * (2.0 * rng::open_unit(&mut r) - 1.0);
                }
            }
            Layer { weights, bias: DVector::zeros(fan_out) }
        })
        .collect();
    Ok(MlpSurvModel { layer_dims: dims, layers, seed: config.seed, modality })
}

struct Activations {
    /// Layer inputs, `a[0] = X`; each is `n × width`.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<DMatrix<f64>>,
}

fn affine(a: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = a * layer.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += layer.bias.transpose();
    }
    z
}

impl MlpSurvModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn propagate(&self, x: &DMatrix<f64>) -> Result<Activations> {
        if x.ncols() != self.input_dim() {
            return Err(DeepError::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = affine(&inputs[k], layer);
            if k + 1 < self.layers.len() {
                inputs.push(z.map(|v| v.max(0.0)));
            }
            pre.push(z);
        }
        Ok(Activations { inputs, pre })
    }

    /// Output-unit values before the sigmoid.
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let acts = self.propagate(x)?;
        Ok(acts.pre.last().map(|z| z.iter().copied().collect()).unwrap_or_default())
    }

    /// Risk scores in `(0, 1)`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// L2 norm of each input's first-layer weight column.
    pub fn feature_importance(&self) -> Vec<f64> {
        let w = &self.layers[0].weights;
        (0..w.ncols()).map(|k| w.column(k).norm()).collect()
    }
}

/// Negative Efron partial log-likelihood of `scores`, divided by the number
/// of events, and its gradient with respect to each score.
pub fn cox_loss(scores: &[f64], labels: &[SurvivalLabel]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(DeepError::DimensionMismatch { expected: labels.len(), found: scores.len() });
    }
    let n_events = labels.iter().filter(|l| l.event).count();
    if n_events == 0 {
        return Err(DeepError::NoEvents);
    }
    let (ll, grad) = loglik_eta_gradient(scores, labels, TieMethod::Efron)?;
    let scale = n_events as f64;
    Ok((-ll / scale, grad.into_iter().map(|g| -g / scale).collect()))
}

/// Cox loss of the network on `(x, labels)` and its exact gradient with
/// respect to every weight and bias. No weight decay is included.
pub fn loss_and_gradients(model: &MlpSurvModel, x: &DMatrix<f64>, labels: &[SurvivalLabel]) -> Result<(f64, Gradients)> {
    if x.nrows() != labels.len() {
        return Err(DeepError::DimensionMismatch { expected: labels.len(), found: x.nrows() });
    }
    let acts = model.propagate(x)?;
    let logits = acts.pre.last().expect("at least one layer");
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let (loss, d_scores) = cox_loss(&scores, labels)?;

    let n_layers = model.layers.len();
    let mut gw = vec![DMatrix::zeros(0, 0); n_layers];
    let mut gb = vec![DVector::zeros(0); n_layers];
    // dL/dz for the output unit, n × 1
    let mut delta = DMatrix::from_iterator(scores.len(), 1, scores.iter().zip(&d_scores).map(|(s, g)| g * s * (1.0 - s)));
    for k in (0..n_layers).rev() {
        gw[k] = delta.transpose() * &acts.inputs[k];
        gb[k] = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
        if k > 0 {
            let mut back = &delta * &model.layers[k].weights;
            back.zip_apply(&acts.pre[k - 1], |d, z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    Ok((loss, Gradients { weights: gw, biases: gb }))
}

/// Concordance of a single variable used alone as a risk ranking, reported
/// as `max(c, 1 − c)`.
pub fn univariate_ability(values: &[f64], labels: &[SurvivalLabel], variable_index: usize) -> Result<f64> {
    let first = values.first().copied();
    if values.iter().all(|v| Some(*v) == first) {
        return Err(DeepError::ConstantVariable(variable_index));
    }
    let c = metrics::c_index(values, labels)?;
    Ok(c.max(1.0 - c))
}

/// [`univariate_ability`] for one column of the clinical design matrix.
pub fn predictive_ability(ds: &Dataset, variable_index: usize) -> Result<f64> {
    let x = ds.clinical_matrix()?;
    if variable_index >= x.ncols() {
        return Err(DeepError::DimensionMismatch { expected: x.ncols(), found: variable_index });
    }
    let column: Vec<f64> = x.column(variable_index).iter().copied().collect();
    univariate_ability(&column, &ds.labels(), variable_index)
}
