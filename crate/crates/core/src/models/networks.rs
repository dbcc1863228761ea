use crate::dataset::{stack_nchw, Frame};
use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Param, RowNorm, Scalar, Sequential, Tensor};

use super::bundle::{CheckpointMeta, WeightBundle};
use super::config::{
    build_backbone, build_mlp_with, spatial_sizes, ConvSpec, FeaturePooling, PlayEncoderConfig, PolicyConfig,
};

/// Per-channel input statistics (ImageNet RGB), the convention of the
/// classification weights the "-I" modes start from.
pub const INPUT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Frames → standardized `[3, B, H, W]` tensor, `(x − mean) / std` per channel.
pub fn frames_to_tensor<T: Scalar>(frames: &[&Frame]) -> Result<Tensor<T>> {
    let (h, w, mut data) = stack_nchw(frames)?;
    let plane = (h * w).max(1);
    for (i, chunk) in data.chunks_mut(plane).enumerate() {
        let c = i % 3;
        chunk.iter_mut().for_each(|v| *v = (*v - INPUT_MEAN[c]) / INPUT_STD[c]);
    }
    let data: Vec<T> = data.into_iter().map(T::from_f32_lossless).collect();
    Ok(Tensor::from_nchw(frames.len(), 3, h, w, &data))
}

fn check_input<T: Scalar>(x: &Tensor<T>, convs: &[ConvSpec]) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::Shape(format!(
            "expected a [3, batch, height, width] input, got {s:?}"
        )));
    }
    if s[2] != s[3] {
        return Err(Error::Shape(format!("expected square frames, got {}x{}", s[2], s[3])));
    }
    spatial_sizes(convs, s[2])?;
    Ok(())
}

/// Convolutional play encoder with projection head and optional predictor.
///
/// `features` yields the pooled vector `v`; `project` adds the projection
/// head; `query` adds the predictor on top when present.
#[derive(Debug, Clone)]
pub struct PlayEncoder<T> {
    pub config: PlayEncoderConfig,
    pub backbone: Sequential<T>,
    pub proj: Sequential<T>,
    pub pred: Option<Sequential<T>>,
}

impl<T: Scalar> PlayEncoder<T> {
    pub fn new(config: PlayEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut backbone = build_backbone(&config.convs, FeaturePooling::Global);
        let bn = config.head_batch_norm;
        let mut proj = build_mlp_with("proj", config.feature_dim(), &config.proj_dims, bn);
        let mut pred = config
            .predictor_dims
            .as_ref()
            .map(|dims| build_mlp_with("pred", config.latent_dim(), dims, bn));
        backbone.init(seed);
        proj.init(seed);
        if let Some(p) = &mut pred {
            p.init(seed);
        }
        Ok(Self {
            config,
            backbone,
            proj,
            pred,
        })
    }

    /// Same weights, predictor removed; used for the momentum (key) branch.
    pub fn without_predictor(&self) -> Self {
        Self {
            config: PlayEncoderConfig {
                predictor_dims: None,
                ..self.config.clone()
            },
            backbone: self.backbone.clone(),
            proj: self.proj.clone(),
            pred: None,
        }
    }

    pub fn features(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        check_input(&x, &self.config.convs)?;
        Ok(self.backbone.forward(x))
    }

    pub fn project(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let v = self.features(x)?;
        Ok(self.proj.forward(v))
    }

    pub fn query(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let z = self.project(x)?;
        Ok(match &mut self.pred {
            Some(p) => p.forward(z),
            None => z,
        })
    }

    /// Backpropagates a gradient w.r.t. the output of the last `query` call.
    pub fn backward_query(&mut self, dy: Tensor<T>) {
        let dz = match &mut self.pred {
            Some(p) => p.backward(dy, true).expect("input gradient requested"),
            None => dy,
        };
        self.backward_projection(dz);
    }

    /// Backpropagates a gradient w.r.t. the output of the last `project` call.
    pub fn backward_projection(&mut self, dz: Tensor<T>) {
        let dv = self.proj.backward(dz, true).expect("input gradient requested");
        self.backbone.backward(dv, false);
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.backbone
            .params()
            .chain(self.proj.params())
            .chain(self.pred.iter().flat_map(|p| p.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.backbone
            .params_mut()
            .chain(self.proj.params_mut())
            .chain(self.pred.iter_mut().flat_map(|p| p.params_mut()))
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().map(|p| p.name.clone()).collect()
    }

    pub fn to_bundle(&self, meta: CheckpointMeta) -> WeightBundle<T> {
        WeightBundle::from_params(self.params(), meta)
    }

    pub fn load_bundle(&mut self, bundle: &WeightBundle<T>) -> Result<()> {
        bundle.load_into(self.params_mut())
    }
}

/// Behavior-cloning policy: convolutions, pooling or flattening, linear action head.
#[derive(Debug, Clone)]
pub struct Policy<T> {
    pub config: PolicyConfig,
    pub backbone: Sequential<T>,
    pub head: Sequential<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut backbone = build_backbone(&config.convs, config.pooling);
        let mut head = Sequential::new();
        if config.feature_norm {
            head.push(Layer::RowNorm(RowNorm::default()));
        }
        head.push(Layer::Linear(Linear::new(
            "head.0",
            config.feature_dim()?,
            config.action_dim,
        )));
        backbone.init(seed);
        // The action head starts at zero so every init mode begins from the
        // zero action regardless of the scale of its features.
        head.params_mut()
            .for_each(|p| p.value.iter_mut().for_each(|v| *v = T::zero()));
        Ok(Self { config, backbone, head })
    }

    pub fn conv_count(&self) -> usize {
        self.config.convs.len()
    }

    /// `[3, B, H, W]` → `[B, 3]`.
    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        check_input(&x, &self.config.convs)?;
        let v = self.backbone.forward(x);
        Ok(self.head.forward(v))
    }

    pub fn backward(&mut self, dy: Tensor<T>) {
        let dv = self.head.backward(dy, true).expect("input gradient requested");
        self.backbone.backward(dv, false);
    }

    pub fn predict_frames(&mut self, frames: &[&Frame]) -> Result<Vec<[f32; 3]>> {
        let x = frames_to_tensor::<T>(frames)?;
        let y = self.forward(x)?;
        Ok((0..frames.len())
            .map(|b| {
                let r = y.row(b);
                [r[0].to_f32_lossy(), r[1].to_f32_lossy(), r[2].to_f32_lossy()]
            })
            .collect())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.backbone.params().chain(self.head.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.backbone.params_mut().chain(self.head.params_mut())
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().map(|p| p.name.clone()).collect()
    }

    pub fn to_bundle(&self, meta: CheckpointMeta) -> WeightBundle<T> {
        WeightBundle::from_params(self.params(), meta)
    }

    pub fn load_bundle(&mut self, bundle: &WeightBundle<T>) -> Result<()> {
        bundle.load_into(self.params_mut())
    }
}
