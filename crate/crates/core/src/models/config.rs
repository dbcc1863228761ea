use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_out, BatchNorm1d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Scalar, Sequential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// How the last feature map becomes a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePooling {
    /// Mean over spatial positions; output width is the channel count.
    Global,
    /// Keeps every position; output width depends on the input size.
    #[default]
    Flatten,
}

/// Max pooling applied to the input of the convolution it is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub pool: Option<PoolSpec>,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
            activation: Activation::Relu,
            pool: None,
        }
    }

    pub fn pooled(mut self, kernel: usize, stride: usize) -> Self {
        self.pool = Some(PoolSpec { kernel, stride });
        self
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "conv{index}: channels, kernel and stride must be positive"
            )));
        }
        if let Some(p) = self.pool {
            if p.kernel == 0 || p.stride == 0 {
                return Err(Error::Config(format!(
                    "conv{index}: pooling kernel and stride must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// The five AlexNet-family convolutions: C64-C192-C384-C256-C256.
pub fn alexnet_convs() -> Vec<ConvSpec> {
    vec![
        ConvSpec::new(64, 11, 4, 2),
        ConvSpec::new(192, 5, 1, 2).pooled(3, 2),
        ConvSpec::new(384, 3, 1, 1).pooled(3, 2),
        ConvSpec::new(256, 3, 1, 1),
        ConvSpec::new(256, 3, 1, 1),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayEncoderConfig {
    pub convs: Vec<ConvSpec>,
    /// Hidden and output widths of the projection MLP.
    pub proj_dims: Vec<usize>,
    /// Hidden and output widths of the predictor MLP on the query branch.
    pub predictor_dims: Option<Vec<usize>>,
    pub input_size: usize,
    /// Batch normalization after each hidden layer of the projection and
    /// predictor heads.
    #[serde(default)]
    pub head_batch_norm: bool,
}

impl PlayEncoderConfig {
    pub const LATENT_DIM: usize = 128;

    /// Encoder pretrained up to conv layer `depth` (3, 4 or 5) with an
    /// F384-F128 projection and predictor.
    pub fn standard(depth: usize, input_size: usize) -> Self {
        let mut convs = alexnet_convs();
        convs.truncate(depth);
        Self {
            convs,
            proj_dims: vec![384, Self::LATENT_DIM],
            predictor_dims: Some(vec![384, Self::LATENT_DIM]),
            input_size,
            head_batch_norm: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().map_or(3, |c| c.out_channels)
    }

    pub fn latent_dim(&self) -> usize {
        *self.proj_dims.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(Error::Config("encoder needs at least one convolution".into()));
        }
        for (i, c) in self.convs.iter().enumerate() {
            c.validate(i + 1)?;
        }
        if self.proj_dims.is_empty() || self.proj_dims.contains(&0) {
            return Err(Error::Config(
                "projection head widths must be non-empty and positive".into(),
            ));
        }
        if let Some(p) = &self.predictor_dims {
            if p.is_empty() || p.contains(&0) {
                return Err(Error::Config("predictor widths must be non-empty and positive".into()));
            }
            if p.last() != self.proj_dims.last() {
                return Err(Error::Config(
                    "predictor output must match the projection output".into(),
                ));
            }
        }
        spatial_sizes(&self.convs, self.input_size)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub convs: Vec<ConvSpec>,
    pub action_dim: usize,
    pub input_size: usize,
    #[serde(default)]
    pub pooling: FeaturePooling,
    /// Standardize each feature vector before the action head.
    #[serde(default = "default_true")]
    pub feature_norm: bool,
}

fn default_true() -> bool {
    true
}

impl PolicyConfig {
    /// C64-C192-C384-C256-C256 followed by a linear map to a 3-vector.
    pub fn standard(input_size: usize) -> Self {
        Self {
            convs: alexnet_convs(),
            action_dim: 3,
            input_size,
            pooling: FeaturePooling::default(),
            feature_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(Error::Config("policy needs at least one convolution".into()));
        }
        for (i, c) in self.convs.iter().enumerate() {
            c.validate(i + 1)?;
        }
        if self.action_dim != 3 {
            return Err(Error::Config(format!(
                "policy output must be a 3-vector, got {}",
                self.action_dim
            )));
        }
        spatial_sizes(&self.convs, self.input_size)?;
        Ok(())
    }

    /// Width of the vector fed to the action head.
    pub fn feature_dim(&self) -> Result<usize> {
        let channels = self.convs.last().map_or(3, |c| c.out_channels);
        Ok(match self.pooling {
            FeaturePooling::Global => channels,
            FeaturePooling::Flatten => {
                let side = *spatial_sizes(&self.convs, self.input_size)?
                    .last()
                    .unwrap_or(&self.input_size);
                channels * side * side
            }
        })
    }
}

/// Spatial side after each convolution for a square input of side `input`.
pub fn spatial_sizes(convs: &[ConvSpec], input: usize) -> Result<Vec<usize>> {
    let mut size = input;
    let mut out = Vec::with_capacity(convs.len());
    for (i, c) in convs.iter().enumerate() {
        if let Some(p) = c.pool {
            size = conv_out(size, p.kernel, p.stride, 0).ok_or_else(|| too_small(i + 1, input))?;
        }
        size = conv_out(size, c.kernel, c.stride, c.padding).ok_or_else(|| too_small(i + 1, input))?;
        if size == 0 {
            return Err(too_small(i + 1, input));
        }
        out.push(size);
    }
    Ok(out)
}

fn too_small(layer: usize, input: usize) -> Error {
    Error::Shape(format!(
        "{input}px input is below the receptive footprint of conv{layer}"
    ))
}

pub(crate) fn build_backbone<T: Scalar>(convs: &[ConvSpec], pooling: FeaturePooling) -> Sequential<T> {
    let mut seq = Sequential::new();
    let mut in_ch = 3;
    for (i, c) in convs.iter().enumerate() {
        if let Some(p) = c.pool {
            seq.push(Layer::MaxPool(MaxPool2d::new(p.kernel, p.stride)));
        }
        let name = format!("conv{}", i + 1);
        seq.push(Layer::Conv(Conv2d::new(
            &name,
            in_ch,
            c.out_channels,
            c.kernel,
            c.stride,
            c.padding,
        )));
        if c.activation == Activation::Relu {
            seq.push(Layer::relu());
        }
        in_ch = c.out_channels;
    }
    seq.push(match pooling {
        FeaturePooling::Global => Layer::GlobalAvgPool(GlobalAvgPool::default()),
        FeaturePooling::Flatten => Layer::Flatten(Flatten::default()),
    });
    seq
}

/// Linear layers with ReLU between them, named by position as in a
/// PyTorch `Sequential`: `prefix.0`, `prefix.2`, ... or, with batch norm,
/// `prefix.0`, `prefix.1` (norm), `prefix.3`, ...
pub(crate) fn build_mlp<T: Scalar>(prefix: &str, input: usize, dims: &[usize]) -> Sequential<T> {
    build_mlp_with(prefix, input, dims, false)
}

pub(crate) fn build_mlp_with<T: Scalar>(prefix: &str, input: usize, dims: &[usize], batch_norm: bool) -> Sequential<T> {
    let mut seq = Sequential::new();
    let mut width = input;
    let mut index = 0;
    for (i, &d) in dims.iter().enumerate() {
        seq.push(Layer::Linear(Linear::new(&format!("{prefix}.{index}"), width, d)));
        index += 1;
        if i + 1 < dims.len() {
            if batch_norm {
                seq.push(Layer::BatchNorm(BatchNorm1d::new(&format!("{prefix}.{index}"), d)));
                index += 1;
            }
            seq.push(Layer::relu());
            index += 1;
        }
        width = d;
    }
    seq
}
