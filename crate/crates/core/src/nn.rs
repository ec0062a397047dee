//! Dense feed-forward Q-network with manual backpropagation.
//!
//! Two outputs, one per action. The last hidden layer doubles as the
//! feature embedding used for proximity sampling and intrinsic scoring.
//! Training uses the DQN flavor of RMSprop: squared-gradient decay 0.95
//! with an additive denominator floor of 0.01.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PreprocessStats;
use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub width: usize,
    #[serde(default)]
    pub dropout: Option<f64>,
}

/// Architecture description: input width plus hidden layers; the two-unit
/// linear output layer is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<HiddenSpec>,
}

impl Arch {
    /// One hidden layer of 20 ReLU units.
    pub fn default_for(input_dim: usize) -> Arch {
        Arch {
            input_dim,
            hidden: vec![HiddenSpec {
                width: 20,
                dropout: None,
            }],
        }
    }

    /// Deeper variant: 500 and 100 ReLU units with dropout 0.9 each,
    /// followed by the 20-unit embedding layer.
    pub fn deep_for(input_dim: usize) -> Arch {
        Arch {
            input_dim,
            hidden: vec![
                HiddenSpec {
                    width: 500,
                    dropout: Some(0.9),
                },
                HiddenSpec {
                    width: 100,
                    dropout: Some(0.9),
                },
                HiddenSpec {
                    width: 20,
                    dropout: None,
                },
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer required".into()));
        }
        for h in &self.hidden {
            if h.width == 0 {
                return Err(Error::Config("hidden layer width must be positive".into()));
            }
            if let Some(rate) = h.dropout {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} not in [0,1)")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major: `weights[out][in]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub activation: Activation,
    pub dropout: Option<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.biases.len()
    }
    fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
    pub arch: Arch,
    /// Index of the last hidden layer whose activations form the embedding.
    pub embedding_layer_index: usize,
    /// Bumped on every weight mutation; guards stale forward caches.
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations recorded by a forward pass, sufficient for backprop.
pub struct ForwardCache {
    /// Input to each layer (index 0 is the observation).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Vec<f64>>,
    /// Inverted-dropout masks (already scaled by 1/(1-rate)); None = no dropout.
    masks: Vec<Option<Vec<f64>>>,
    pub output: [f64; N_ACTIONS],
    version: u64,
}

impl ForwardCache {
    /// Activations of the embedding layer (post-activation, post-dropout).
    pub fn embedding(&self, net: &QNetwork) -> Vec<f64> {
        self.inputs[net.embedding_layer_index + 1].clone()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &QNetwork) -> Gradients {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| vec![vec![0.0; l.in_dim()]; l.out_dim()])
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (va, vb) in ra.iter_mut().zip(rb) {
                    *va += vb;
                }
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (va, vb) in a.iter_mut().zip(b) {
                *va += vb;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.weights.iter_mut() {
            for row in layer.iter_mut() {
                for v in row.iter_mut() {
                    *v *= factor;
                }
            }
        }
        for layer in self.biases.iter_mut() {
            for v in layer.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Initialize a network with uniform Glorot-range weights and zero biases.
pub fn init_network(arch: &Arch, seed: u64) -> Result<QNetwork> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![arch.input_dim];
    dims.extend(arch.hidden.iter().map(|h| h.width));
    dims.push(N_ACTIONS);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for li in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[li], dims[li + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect())
            .collect();
        let is_output = li == dims.len() - 2;
        layers.push(Layer {
            weights,
            biases: vec![0.0; fan_out],
            activation: if is_output {
                Activation::Linear
            } else {
                Activation::Relu
            },
            dropout: if is_output {
                None
            } else {
                arch.hidden[li].dropout
            },
        });
    }
    Ok(QNetwork {
        layers,
        arch: arch.clone(),
        embedding_layer_index: dims.len() - 3,
        version: 0,
    })
}

impl QNetwork {
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.embedding_layer_index].out_dim()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: s.len(),
            });
        }
        Ok(())
    }

    /// Forward pass. In train mode, inverted dropout masks are sampled from
    /// `rng` (required iff any layer has dropout).
    pub fn forward(
        &self,
        s: &[f64],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        self.check_input(s)?;
        let mut inputs = vec![s.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let x = inputs.last().unwrap();
            let mut z = layer.biases.clone();
            for (o, row) in layer.weights.iter().enumerate() {
                let mut acc = 0.0;
                for (w, xv) in row.iter().zip(x) {
                    acc += w * xv;
                }
                z[o] += acc;
            }
            let mut a: Vec<f64> = match layer.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Linear => z.clone(),
            };
            let mask = match (layer.dropout, mode) {
                (Some(rate), Mode::Train) => {
                    let rng = rng
                        .as_deref_mut()
                        .expect("train-mode forward with dropout requires an rng");
                    let keep = 1.0 - rate;
                    let m: Vec<f64> = (0..a.len())
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    for (av, mv) in a.iter_mut().zip(&m) {
                        *av *= mv;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre_activations.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        let out = inputs.last().unwrap();
        Ok(ForwardCache {
            output: [out[0], out[1]],
            inputs,
            pre_activations,
            masks,
            version: self.version,
        })
    }

    /// Eval-mode Q-values.
    pub fn q_values(&self, s: &[f64]) -> Result<[f64; N_ACTIONS]> {
        Ok(self.forward(s, Mode::Eval, None)?.output)
    }

    /// Last-hidden-layer activations in eval mode.
    pub fn embed(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        let mut x = s.to_vec();
        for layer in &self.layers[..=self.embedding_layer_index] {
            let mut z = layer.biases.clone();
            for (o, row) in layer.weights.iter().enumerate() {
                let mut acc = 0.0;
                for (w, xv) in row.iter().zip(&x) {
                    acc += w * xv;
                }
                z[o] += acc;
            }
            x = match layer.activation {
                Activation::Relu => z.into_iter().map(|v| v.max(0.0)).collect(),
                Activation::Linear => z,
            };
        }
        Ok(x)
    }

    /// Gradients of (y - Q(s, a))^2 for the chosen action given
    /// `target_error = y - Q(s, a)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        action: usize,
        target_error: f64,
    ) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        assert!(action < N_ACTIONS);
        let mut grads = Gradients::zeros_like(self);

        // dL/dq_a for L = (y - q_a)^2.
        let mut delta = vec![0.0; N_ACTIONS];
        delta[action] = -2.0 * target_error;

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            // Through dropout (mask includes the inverted scaling), then the
            // activation derivative on the pre-activation values.
            if let Some(mask) = &cache.masks[li] {
                for (d, m) in delta.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            if layer.activation == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&cache.pre_activations[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[li];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[li][o] = *d;
                for (i, x) in input.iter().enumerate() {
                    grads.weights[li][o][i] = d * x;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.in_dim()];
                for (o, d) in delta.iter().enumerate() {
                    for (i, w) in layer.weights[o].iter().enumerate() {
                        prev[i] += d * w;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Replace this network's weights with `src`'s (target-network sync).
    pub fn copy_weights_from(&mut self, src: &QNetwork) {
        self.layers = src.layers.clone();
        self.version += 1;
    }

    /// Zero all weights and biases (initial target network state).
    pub fn zero_weights(&mut self) {
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                row.iter_mut().for_each(|w| *w = 0.0);
            }
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        self.version += 1;
    }
}

/// Deep copy, independent of the source.
pub fn copy_weights(src: &QNetwork) -> QNetwork {
    src.clone()
}

/// DQN-style RMSprop state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub decay: f64,
    pub floor: f64,
    acc_weights: Vec<Vec<Vec<f64>>>,
    acc_biases: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(net: &QNetwork) -> OptimizerState {
        let zeros = Gradients::zeros_like(net);
        OptimizerState {
            learning_rate: 0.00025,
            decay: 0.95,
            floor: 0.01,
            acc_weights: zeros.weights,
            acc_biases: zeros.biases,
        }
    }
}

/// One RMSprop update: acc <- 0.95 acc + 0.05 g^2; w <- w - lr g / sqrt(acc + 0.01).
pub fn rmsprop_step(net: &mut QNetwork, state: &mut OptimizerState, grads: &Gradients) {
    let (lr, decay, floor) = (state.learning_rate, state.decay, state.floor);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        for (o, row) in layer.weights.iter_mut().enumerate() {
            for (i, w) in row.iter_mut().enumerate() {
                let g = grads.weights[li][o][i];
                let acc = &mut state.acc_weights[li][o][i];
                *acc = decay * *acc + (1.0 - decay) * g * g;
                *w -= lr * g / (*acc + floor).sqrt();
            }
        }
        for (o, b) in layer.biases.iter_mut().enumerate() {
            let g = grads.biases[li][o];
            let acc = &mut state.acc_biases[li][o];
            *acc = decay * *acc + (1.0 - decay) * g * g;
            *b -= lr * g / (*acc + floor).sqrt();
        }
    }
    net.version += 1;
}

// Model persistence: JSON with row-major weight arrays.

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    width: usize,
    activation: Activation,
    dropout: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightRecord {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_dim: usize,
    arch: Vec<LayerRecord>,
    embedding_layer_index: usize,
    weights: Vec<WeightRecord>,
    preprocess: PreprocessStats,
}

pub fn save_model(path: &Path, net: &QNetwork, preprocess: &PreprocessStats) -> Result<()> {
    let file = ModelFile {
        format_version: 1,
        input_dim: net.input_dim(),
        arch: net
            .layers
            .iter()
            .map(|l| LayerRecord {
                width: l.out_dim(),
                activation: l.activation,
                dropout: l.dropout,
            })
            .collect(),
        embedding_layer_index: net.embedding_layer_index,
        weights: net
            .layers
            .iter()
            .map(|l| WeightRecord {
                w: l.weights.clone(),
                b: l.biases.clone(),
            })
            .collect(),
        preprocess: preprocess.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(QNetwork, PreprocessStats)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.format_version != 1 {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    if file.arch.len() != file.weights.len() {
        return Err(Error::ModelFormat(
            "field 'weights' does not match field 'arch'".into(),
        ));
    }
    let mut layers = Vec::with_capacity(file.arch.len());
    let mut in_dim = file.input_dim;
    for (rec, wr) in file.arch.iter().zip(&file.weights) {
        if wr.b.len() != rec.width
            || wr.w.len() != rec.width
            || wr.w.iter().any(|row| row.len() != in_dim)
        {
            return Err(Error::ModelFormat(format!(
                "field 'weights' has wrong shape for a {}x{} layer",
                rec.width, in_dim
            )));
        }
        layers.push(Layer {
            weights: wr.w.clone(),
            biases: wr.b.clone(),
            activation: rec.activation,
            dropout: rec.dropout,
        });
        in_dim = rec.width;
    }
    if file.embedding_layer_index + 1 >= layers.len() {
        return Err(Error::ModelFormat(
            "field 'embedding_layer_index' out of range".into(),
        ));
    }
    let arch = Arch {
        input_dim: file.input_dim,
        hidden: file.arch[..file.arch.len() - 1]
            .iter()
            .map(|r| HiddenSpec {
                width: r.width,
                dropout: r.dropout,
            })
            .collect(),
    };
    Ok((
        QNetwork {
            layers,
            arch,
            embedding_layer_index: file.embedding_layer_index,
            version: 0,
        },
        file.preprocess,
    ))
}
