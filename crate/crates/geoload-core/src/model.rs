//! The representation generator (GCN layers + mean pooling), the dense
//! forecaster, their joint training loop with early stopping, and model
//! persistence.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, NormStats, Sample};
use crate::error::{Error, Result};
use crate::graph::{normalize, AdjacencyMatrix, NeighborRule, NormalizedPropagation};
use crate::nn::{mse_loss, Activation, DenseLayer, Mlp, Parametrized};

/// One graph-convolutional layer: H' = sigma(S H W).
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// d_{l-1} x d_l
    pub weight: Array2<f64>,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| rng.random_range(-bound..bound));
        GcnLayer { weight, activation }
    }
}

/// Apply the GCN layers to node features and mean-pool node rows.
/// Zeroed-out nodes still count in the pooling denominator, so masked
/// subgraphs keep the output scale of the full graph.
pub fn gcn_forward(
    layers: &[GcnLayer],
    node_features: &Array2<f64>,
    propagation: &NormalizedPropagation,
) -> Result<Array1<f64>> {
    Ok(gcn_forward_trace(layers, node_features, propagation)?.pooled)
}

struct GcnTrace {
    /// Per layer: S * H_{l-1} (the propagated input) and the pre-activation.
    propagated: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    pooled: Array1<f64>,
}

fn gcn_forward_trace(
    layers: &[GcnLayer],
    node_features: &Array2<f64>,
    propagation: &NormalizedPropagation,
) -> Result<GcnTrace> {
    let n = propagation.n();
    if node_features.nrows() != n {
        return Err(Error::Shape(format!(
            "node features have {} rows, propagation matrix is {n}x{n}",
            node_features.nrows()
        )));
    }
    let mut h = node_features.clone();
    let mut propagated = Vec::with_capacity(layers.len());
    let mut preacts = Vec::with_capacity(layers.len());
    let mut outputs = Vec::with_capacity(layers.len());
    for layer in layers {
        if h.ncols() != layer.weight.nrows() {
            return Err(Error::Shape(format!(
                "gcn layer expects {} input features, got {}",
                layer.weight.nrows(),
                h.ncols()
            )));
        }
        let prop = propagation.entries().dot(&h);
        let z = prop.dot(&layer.weight);
        let out = z.mapv(|v| layer.activation.apply(v));
        propagated.push(prop);
        preacts.push(z);
        outputs.push(out.clone());
        h = out;
    }
    let pooled = h.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(0));
    Ok(GcnTrace { propagated, preacts, outputs, pooled })
}

/// Anything the shared trainer can fit with per-sample MSE.
pub trait TrainableModel: Parametrized + Clone {
    fn predict_sample(&self, sample: &Sample) -> Result<f64>;
    /// MSE loss and flat gradient (same ordering as `get_params`).
    fn sample_loss_and_grad(&self, sample: &Sample) -> Result<(f64, Vec<f64>)>;
}

/// Generator g (GCN + mean pooling) composed with forecaster f, trained
/// jointly. With no GCN layers the model degenerates to f(X_O).
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedModel {
    pub gcn_layers: Vec<GcnLayer>,
    pub forecaster: Mlp,
    pub adjacency: AdjacencyMatrix,
    pub propagation: NormalizedPropagation,
    pub node_feat_dim: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl IntegratedModel {
    /// `gcn_dims` empty gives the None-MF degenerate composition.
    pub fn init(
        adjacency: AdjacencyMatrix,
        node_feat_dim: usize,
        exo_dim: usize,
        gcn_dims: &[usize],
        dense_hidden: &[usize],
        seed: u64,
        config_hash: String,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gcn_layers = Vec::new();
        let mut prev = node_feat_dim;
        for (idx, &d) in gcn_dims.iter().enumerate() {
            let activation =
                if idx + 1 == gcn_dims.len() { Activation::Identity } else { Activation::Relu };
            gcn_layers.push(GcnLayer::init(prev, d, activation, &mut rng));
            prev = d;
        }
        let rep_dim = gcn_dims.last().copied().unwrap_or(0);
        let forecaster = Mlp::init(rep_dim + exo_dim, dense_hidden, &mut rng);
        let propagation = normalize(&adjacency);
        IntegratedModel {
            gcn_layers,
            forecaster,
            adjacency,
            propagation,
            node_feat_dim,
            seed,
            config_hash,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n()
    }

    pub fn representation_dim(&self) -> usize {
        self.gcn_layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    /// Forecast in z-scored space with an alternative propagation matrix
    /// and node features (used for masked subgraphs).
    pub fn predict_with(
        &self,
        node_features: &Array2<f64>,
        propagation: &NormalizedPropagation,
        exo: &Array1<f64>,
    ) -> Result<f64> {
        let input = if self.gcn_layers.is_empty() {
            exo.clone()
        } else {
            let rep = gcn_forward(&self.gcn_layers, node_features, propagation)?;
            ndarray::concatenate![Axis(0), rep, exo.view()]
        };
        let out = self.forecaster.forward(&input)?;
        if !out.is_finite() {
            return Err(Error::Numeric(format!("non-finite forecast {out}")));
        }
        Ok(out)
    }

    /// Forecast on the training graph, z-scored space.
    pub fn predict(&self, sample: &Sample) -> Result<f64> {
        self.predict_with(&sample.node_features, &self.propagation, &sample.exo)
    }

    fn num_gcn_params(&self) -> usize {
        self.gcn_layers.iter().map(|l| l.weight.len()).sum()
    }

    /// Smallest |pre-activation| over every relu unit touched by this
    /// sample; gradient checks reject samples where this is tiny.
    pub fn min_abs_relu_preactivation(&self, sample: &Sample) -> Result<f64> {
        let mut min = f64::INFINITY;
        let input = if self.gcn_layers.is_empty() {
            sample.exo.clone()
        } else {
            let trace = gcn_forward_trace(&self.gcn_layers, &sample.node_features, &self.propagation)?;
            for (layer, z) in self.gcn_layers.iter().zip(&trace.preacts) {
                if layer.activation == Activation::Relu {
                    for v in z {
                        min = min.min(v.abs());
                    }
                }
            }
            ndarray::concatenate![Axis(0), trace.pooled.view(), sample.exo.view()]
        };
        Ok(min.min(self.forecaster.min_abs_relu_preactivation(&input)?))
    }
}

impl Parametrized for IntegratedModel {
    fn num_params(&self) -> usize {
        self.num_gcn_params() + self.forecaster.num_params()
    }

    fn get_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for layer in &self.gcn_layers {
            flat.extend(layer.weight.iter());
        }
        flat.extend(self.forecaster.get_params());
        flat
    }

    fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for layer in &mut self.gcn_layers {
            for w in layer.weight.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
        }
        self.forecaster.set_params(&flat[offset..]);
    }
}

impl TrainableModel for IntegratedModel {
    fn predict_sample(&self, sample: &Sample) -> Result<f64> {
        self.predict(sample)
    }

    fn sample_loss_and_grad(&self, sample: &Sample) -> Result<(f64, Vec<f64>)> {
        if self.gcn_layers.is_empty() {
            let (loss, grads) = self.forecaster.loss_and_grad(&sample.exo, sample.target)?;
            return Ok((loss, grads));
        }
        let trace = gcn_forward_trace(&self.gcn_layers, &sample.node_features, &self.propagation)?;
        let input = ndarray::concatenate![Axis(0), trace.pooled.view(), sample.exo.view()];
        let prediction = self.forecaster.forward(&input)?;
        let (loss, dloss) = mse_loss(prediction, sample.target);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at {} (prediction {prediction})",
                sample.timestamp
            )));
        }
        let (_, dense_grads, dinput) = self.forecaster.backward(&input, dloss)?;

        // chain dL/dR_G back through mean pooling and the GCN stack
        let rep_dim = self.representation_dim();
        let n = self.n_nodes() as f64;
        let drep = dinput.slice(ndarray::s![..rep_dim]).to_owned();
        let mut dh = Array2::from_shape_fn((self.n_nodes(), rep_dim), |(_, j)| drep[j] / n);
        let mut gcn_grads: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); self.gcn_layers.len()];
        for (idx, layer) in self.gcn_layers.iter().enumerate().rev() {
            let dz = &dh * &trace.preacts[idx].mapv(|v| layer.activation.derivative(v));
            gcn_grads[idx] = trace.propagated[idx].t().dot(&dz);
            if idx > 0 {
                dh = self.propagation.entries().t().dot(&dz).dot(&layer.weight.t());
            }
        }
        let _ = &trace.outputs;

        let mut flat = Vec::with_capacity(self.num_params());
        for g in &gcn_grads {
            flat.extend(g.iter());
        }
        for (dw, db) in &dense_grads {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        Ok((loss, flat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Early-stop after this many epochs without validation improvement.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig { learning_rate: 3e-3, max_epochs: 200, patience: 10, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Best validation loss seen so far (including this epoch).
    pub best_val_loss: f64,
}

pub fn mean_loss<M: TrainableModel>(model: &M, samples: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    for sample in samples {
        let prediction = model.predict_sample(sample)?;
        sum += mse_loss(prediction, sample.target).0;
    }
    Ok(sum / samples.len() as f64)
}

/// Mini-batch gradient descent with early stopping. Restores the
/// parameters of the best validation epoch. On divergence the last good
/// checkpoint is restored before the error is returned.
pub fn train<M: TrainableModel>(
    model: &mut M,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainerConfig,
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("train and validation splits must be nonempty".into()));
    }
    if cfg.patience == 0 || cfg.learning_rate < 0.0 || cfg.batch_size == 0 {
        return Err(Error::Config("trainer needs patience >= 1, lr >= 0, batch_size >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best_params = model.get_params();
    let mut best_val = f64::INFINITY;
    let mut epochs_since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = vec![0.0; model.num_params()];
            for &idx in batch {
                let (loss, g) = match model.sample_loss_and_grad(&train_set[idx]) {
                    Ok(v) => v,
                    Err(e) => {
                        model.set_params(&best_params);
                        return Err(e);
                    }
                };
                train_loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                *g *= scale;
            }
            crate::nn::sgd_step(model, &grads, cfg.learning_rate);
        }
        let train_loss = train_loss_sum / train_set.len() as f64;
        let val_loss = match mean_loss(model, val_set) {
            Ok(v) if v.is_finite() => v,
            _ => {
                model.set_params(&best_params);
                return Err(Error::Numeric(format!(
                    "validation loss diverged at epoch {epoch}; restored best checkpoint"
                )));
            }
        };
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.get_params();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, best_val_loss: best_val });
        if epochs_since_best >= cfg.patience {
            break;
        }
    }
    model.set_params(&best_params);
    Ok(history)
}

/// Versioned on-disk model format: shapes, flat parameters, the graph the
/// model was trained on, and the feature schema for compatibility checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub graph_rule: NeighborRule,
    pub schema: FeatureSchema,
    pub schema_hash: String,
    pub stats: NormStats,
    pub adjacency: Vec<Vec<u8>>,
    pub node_feat_dim: usize,
    pub gcn_shapes: Vec<(usize, usize)>,
    pub gcn_activations: Vec<Activation>,
    pub dense_shapes: Vec<(usize, usize)>,
    pub dense_activations: Vec<Activation>,
    pub params: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(
    path: &Path,
    model: &IntegratedModel,
    rule: NeighborRule,
    schema: &FeatureSchema,
    stats: &NormStats,
) -> Result<()> {
    let adjacency = (0..model.n_nodes())
        .map(|i| (0..model.n_nodes()).map(|j| model.adjacency.entries()[[i, j]] as u8).collect())
        .collect();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        seed: model.seed,
        config_hash: model.config_hash.clone(),
        graph_rule: rule,
        schema: schema.clone(),
        schema_hash: schema.hash(),
        stats: stats.clone(),
        adjacency,
        node_feat_dim: model.node_feat_dim,
        gcn_shapes: model.gcn_layers.iter().map(|l| l.weight.dim()).collect(),
        gcn_activations: model.gcn_layers.iter().map(|l| l.activation).collect(),
        dense_shapes: model.forecaster.layers.iter().map(|l| l.weight.dim()).collect(),
        dense_activations: model.forecaster.layers.iter().map(|l| l.activation).collect(),
        params: model.get_params(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(IntegratedModel, ModelFile)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    let n = file.adjacency.len();
    let mut entries = Array2::zeros((n, n));
    for (i, row) in file.adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Validation("ragged adjacency in model file".into()));
        }
        for (j, v) in row.iter().enumerate() {
            entries[[i, j]] = *v as f64;
        }
    }
    let adjacency = AdjacencyMatrix::from_entries(entries)?;
    let propagation = normalize(&adjacency);

    let gcn_layers: Vec<GcnLayer> = file
        .gcn_shapes
        .iter()
        .zip(&file.gcn_activations)
        .map(|(&(r, c), &activation)| GcnLayer { weight: Array2::zeros((r, c)), activation })
        .collect();
    let dense_layers: Vec<DenseLayer> = file
        .dense_shapes
        .iter()
        .zip(&file.dense_activations)
        .map(|(&(r, c), &activation)| DenseLayer {
            weight: Array2::zeros((r, c)),
            bias: Array1::zeros(r),
            activation,
        })
        .collect();
    let mut model = IntegratedModel {
        gcn_layers,
        forecaster: Mlp { layers: dense_layers },
        adjacency,
        propagation,
        node_feat_dim: file.node_feat_dim,
        seed: file.seed,
        config_hash: file.config_hash.clone(),
    };
    if file.params.len() != model.num_params() {
        return Err(Error::Validation(format!(
            "model file has {} parameters, shapes imply {}",
            file.params.len(),
            model.num_params()
        )));
    }
    model.set_params(&file.params);
    Ok((model, file))
}
