use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::InputMode;
use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        #[serde(rename = "in")]
        input: usize,
        #[serde(rename = "out")]
        output: usize,
        act: Activation,
    },
    EmbedBag { vocab: usize, dim: usize },
    Dropout { p: f64 },
}

/// Layer stack ending in softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut width: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { input, output, .. } => {
                    if input == 0 || output == 0 {
                        return Err(Error::invalid(format!("layer {i}: dense dimensions must be positive")));
                    }
                    if let Some(w) = width {
                        if w != input {
                            return Err(Error::invalid(format!("layer {i}: expects {input} inputs, previous layer emits {w}")));
                        }
                    }
                    width = Some(output);
                }
                LayerSpec::EmbedBag { vocab, dim } => {
                    if i != 0 {
                        return Err(Error::invalid(format!("layer {i}: embed_bag must be the first layer")));
                    }
                    if vocab == 0 || dim == 0 {
                        return Err(Error::invalid("embed_bag vocab and dim must be positive"));
                    }
                    width = Some(dim);
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::invalid(format!("layer {i}: dropout p={p} outside [0,1)")));
                    }
                    if width.is_none() {
                        return Err(Error::invalid("dropout cannot be the first layer"));
                    }
                }
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { output, .. }) if *output >= 2 => Ok(()),
            _ => Err(Error::invalid("the final layer must be dense with at least 2 outputs")),
        }
    }

    pub fn input_mode(&self) -> InputMode {
        match self.layers.first() {
            Some(LayerSpec::EmbedBag { .. }) => InputMode::Sparse,
            _ => InputMode::Dense,
        }
    }

    /// Dense input width, or vocabulary size for sparse models.
    pub fn input_width(&self) -> usize {
        match self.layers.first() {
            Some(LayerSpec::EmbedBag { vocab, .. }) => *vocab,
            Some(LayerSpec::Dense { input, .. }) => *input,
            _ => 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { output, .. }) => *output,
            _ => 0,
        }
    }

    /// Width of the representation feeding the output layer.
    pub fn penultimate_width(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { input, .. }) => *input,
            _ => 0,
        }
    }

    pub fn layout(&self) -> Layout {
        let mut shapes = Vec::new();
        for (i, layer) in self.param_ordinals() {
            match *layer {
                LayerSpec::Dense { input, output, .. } => {
                    shapes.push((weight_id(i), vec![output, input]));
                    shapes.push((bias_id(i), vec![output]));
                }
                LayerSpec::EmbedBag { vocab, dim } => shapes.push((embedding_id(i), vec![vocab, dim])),
                LayerSpec::Dropout { .. } => {}
            }
        }
        Layout::from_shapes(shapes)
    }

    /// Uniform Glorot initialization from `seed`; biases start at zero.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        self.validate()?;
        let layout = Arc::new(self.layout());
        let mut params = ParamVector::zeros(layout);
        let mut rng = rng_from_seed(seed);
        for (i, layer) in self.param_ordinals() {
            let (id, fan_in, fan_out) = match *layer {
                LayerSpec::Dense { input, output, .. } => (weight_id(i), input, output),
                LayerSpec::EmbedBag { vocab, dim } => (embedding_id(i), vocab, dim),
                LayerSpec::Dropout { .. } => continue,
            };
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params.segment_mut(&id).expect("segment from own layout") {
                *w = rng.random_range(-s..=s);
            }
        }
        Ok(params)
    }

    /// Layers paired with their ordinal among parameterized layers; segment
    /// ids use this ordinal so inserting dropout keeps the layout unchanged.
    pub fn param_ordinals(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        let mut next = 0;
        self.layers.iter().map(move |l| {
            let ord = next;
            if !matches!(l, LayerSpec::Dropout { .. }) {
                next += 1;
            }
            (ord, l)
        })
    }

    /// Return a copy with every dropout layer set to `p`, inserting one after
    /// each hidden dense layer when the stack has none.
    pub fn with_dropout(&self, p: f64) -> ModelSpec {
        let has_dropout = self.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { .. }));
        let last = self.layers.len() - 1;
        let mut layers = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dropout { .. } => layers.push(LayerSpec::Dropout { p }),
                other => {
                    layers.push(other.clone());
                    if !has_dropout && i != last && !matches!(other, LayerSpec::EmbedBag { .. }) {
                        layers.push(LayerSpec::Dropout { p });
                    }
                }
            }
        }
        ModelSpec { layers, seed: self.seed }
    }

    /// Id of the embedding segment, if the model has one.
    pub fn embedding_segment(&self) -> Option<String> {
        match self.layers.first() {
            Some(LayerSpec::EmbedBag { .. }) => Some(embedding_id(0)),
            _ => None,
        }
    }
}

pub fn weight_id(layer: usize) -> String {
    format!("{layer}.weight")
}

pub fn bias_id(layer: usize) -> String {
    format!("{layer}.bias")
}

pub fn embedding_id(layer: usize) -> String {
    format!("{layer}.embedding")
}
