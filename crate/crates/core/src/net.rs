//! The progressive context network and the named profiles.
//!
//! One network step maps `(x̂, m, z)` at the resolution of the scale being
//! coded to a DMOL parameter map `p` and an updated context `z′`:
//!
//! ```text
//! concat(x̂, m, z) → conv3×3 → relu → R × resblock ─┬→ conv1×1 → p  (Q = 10K)
//!                                                  └→ conv3×3 → z′ (C)
//! ```
//!
//! Level `i` codes scale `i − 1` given scale `i`; it has its own weights
//! (prefix `s{i}`) unless sharing is enabled (prefix `shared`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dmol;
use crate::error::{Error, Result};
use crate::grouping::GroupingMethod;
use crate::tensor::{Ops, ParamStore, Scalar, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Network width `C`.
    pub channels: usize,
    /// Mixture components `K`.
    pub mixtures: usize,
    pub resblocks: usize,
    pub scales: usize,
    pub grouping: GroupingMethod,
    pub share_weights: bool,
}

impl NetConfig {
    pub fn new(channels: usize, mixtures: usize, resblocks: usize, scales: usize, grouping: GroupingMethod) -> Self {
        NetConfig {
            channels,
            mixtures,
            resblocks,
            scales,
            grouping,
            share_weights: false,
        }
    }

    /// `Q`, the width of the parameter map.
    pub fn params_per_pixel(&self) -> usize {
        dmol::params_per_pixel(self.mixtures)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.mixtures == 0 || self.resblocks == 0 || self.scales == 0 {
            return Err(Error::InvalidArgument(format!("degenerate network config {self:?}")));
        }
        if self.scales > 8 || self.channels > 4096 || self.mixtures > 256 {
            return Err(Error::InvalidArgument(format!("network config out of range {self:?}")));
        }
        Ok(())
    }

    pub fn prefix(&self, level: usize) -> String {
        if self.share_weights {
            "shared".into()
        } else {
            format!("s{level}")
        }
    }

    /// Every parameter with its shape, in initialization order.
    pub fn parameter_shapes(&self) -> Vec<(String, Shape)> {
        let (c, q) = (self.channels, self.params_per_pixel());
        let levels: Vec<usize> = if self.share_weights {
            vec![1]
        } else {
            (1..=self.scales).collect()
        };
        let mut out = Vec::new();
        let mut conv = |name: String, o: usize, i: usize, k: usize| {
            out.push((format!("{name}.w"), Shape::new(o, i, k, k)));
            out.push((format!("{name}.b"), Shape::new(1, o, 1, 1)));
        };
        for level in levels {
            let p = self.prefix(level);
            conv(format!("{p}.in"), c, 4 + c, 3);
            for r in 0..self.resblocks {
                conv(format!("{p}.res{r}.a"), c, c, 3);
                conv(format!("{p}.res{r}.b"), c, c, 3);
            }
            conv(format!("{p}.head_p"), q, c, 1);
            conv(format!("{p}.head_z"), c, c, 3);
            let has_ctx = if self.share_weights { self.scales > 1 } else { level < self.scales };
            if has_ctx {
                conv(format!("{p}.ctx"), c, c, 1);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, s)| s.numel()).sum()
    }
}

/// Trained or freshly initialized weights together with their configuration.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub config: NetConfig,
    /// Seed the weights were initialized from.
    pub seed: u64,
    pub params: ParamStore<f32>,
}

impl ModelWeights {
    /// Uniform `±sqrt(1/(in·k²))` weights and zero biases from a seeded stream.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(shape)
            } else {
                let bound = (1.0 / (shape.c * shape.h * shape.w) as f64).sqrt();
                let data = (0..shape.numel())
                    .map(|_| rng.gen_range(-bound..bound) as f32)
                    .collect();
                Tensor::from_vec(shape, data)?
            };
            params.insert(name, t);
        }
        Ok(ModelWeights { config, seed, params })
    }

    /// All weights and biases zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            params.insert(name, Tensor::zeros(shape));
        }
        Ok(ModelWeights { config, seed: 0, params })
    }

    /// Checks every expected tensor is present with the right shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.parameter_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let t = self
                .params
                .get(&name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(())
    }
}

fn conv<T: Scalar, O: Ops<T>>(ops: &mut O, name: &str, x: &O::V, pad: usize) -> Result<O::V> {
    let w = ops.param(&format!("{name}.w"))?;
    let b = ops.param(&format!("{name}.b"))?;
    ops.conv2d(x, &w, &b, pad)
}

/// `x + conv(relu(conv(x)))`.
pub fn resblock<T: Scalar, O: Ops<T>>(ops: &mut O, name: &str, x: &O::V) -> Result<O::V> {
    let h = conv(ops, &format!("{name}.a"), x, 1)?;
    let h = ops.relu(&h)?;
    let h = conv(ops, &format!("{name}.b"), &h, 1)?;
    ops.add(x, &h)
}

pub struct StepOutput<V> {
    /// `(N, Q, H, W)` DMOL parameters.
    pub p: V,
    /// `(N, C, H, W)` context for the next step.
    pub z: V,
}

/// One network step of level `level`. `x_hat` holds normalized values,
/// `mask` is 1 where values are known.
pub fn forward_step<T: Scalar, O: Ops<T>>(
    ops: &mut O,
    config: &NetConfig,
    level: usize,
    x_hat: &O::V,
    mask: &O::V,
    z: &O::V,
) -> Result<StepOutput<O::V>> {
    let (sx, sm, sz) = (ops.value(x_hat).shape(), ops.value(mask).shape(), ops.value(z).shape());
    if sx.c != 3 || sm.c != 1 || sz.c != config.channels {
        return Err(Error::shape("forward_step", (sx, sm), sz));
    }
    let prefix = config.prefix(level);
    let input = ops.concat(&[x_hat, mask, z])?;
    let h = conv(ops, &format!("{prefix}.in"), &input, 1)?;
    let mut h = ops.relu(&h)?;
    for r in 0..config.resblocks {
        h = resblock(ops, &format!("{prefix}.res{r}"), &h)?;
    }
    let p = conv(ops, &format!("{prefix}.head_p"), &h, 0)?;
    let z = conv(ops, &format!("{prefix}.head_z"), &h, 1)?;
    Ok(StepOutput { p, z })
}

/// Initial context of level `level` at `height×width`: zeros at the coarsest
/// level, otherwise the coarser level's final context upsampled and passed
/// through a 1×1 convolution.
pub fn init_scale_context<T: Scalar, O: Ops<T>>(
    ops: &mut O,
    config: &NetConfig,
    level: usize,
    coarser: Option<&O::V>,
    batch: usize,
    height: usize,
    width: usize,
) -> Result<O::V> {
    let Some(z) = coarser else {
        return Ok(ops.constant(Tensor::zeros(Shape::new(batch, config.channels, height, width))));
    };
    let up = ops.upsample2x(z)?;
    let s = ops.value(&up).shape();
    if (s.n, s.h, s.w) != (batch, height, width) {
        return Err(Error::shape("init_scale_context", s, (batch, height, width)));
    }
    conv(ops, &format!("{}.ctx", config.prefix(level)), &up, 0)
}

/// Named presets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub name: String,
    /// Header id; 255 marks a custom profile.
    pub id: u8,
    pub scales: usize,
    pub grouping: GroupingMethod,
    pub channels: usize,
    pub mixtures: usize,
    pub resblocks: usize,
    pub patch: usize,
}

pub const CUSTOM_PROFILE_ID: u8 = 255;

impl Profile {
    pub fn normal() -> Self {
        Profile {
            name: "normal".into(),
            id: 0,
            scales: 3,
            grouping: GroupingMethod::FixedA,
            channels: 64,
            mixtures: 5,
            resblocks: 4,
            patch: 496,
        }
    }

    pub fn big() -> Self {
        Profile {
            name: "big".into(),
            id: 1,
            grouping: GroupingMethod::FixedB,
            ..Self::normal()
        }
    }

    pub fn extra() -> Self {
        Profile {
            name: "extra".into(),
            id: 2,
            scales: 4,
            grouping: GroupingMethod::FixedB,
            channels: 128,
            mixtures: 10,
            resblocks: 4,
            patch: 256,
        }
    }

    pub fn presets() -> [Profile; 3] {
        [Self::normal(), Self::big(), Self::extra()]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::presets()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }

    pub fn by_id(id: u8) -> Option<Self> {
        Self::presets().into_iter().find(|p| p.id == id)
    }

    /// A custom profile; names of presets are rejected.
    pub fn custom(name: &str, config: &NetConfig, patch: usize) -> Result<Self> {
        if Self::by_name(name).is_ok() {
            return Err(Error::InvalidArgument(format!("`{name}` is a preset name")));
        }
        Ok(Profile {
            name: name.into(),
            id: CUSTOM_PROFILE_ID,
            scales: config.scales,
            grouping: config.grouping,
            channels: config.channels,
            mixtures: config.mixtures,
            resblocks: config.resblocks,
            patch,
        })
    }

    /// The profile matching a checkpoint's configuration, preset if possible.
    pub fn for_config(config: &NetConfig, patch: usize) -> Profile {
        Self::presets()
            .into_iter()
            .find(|p| p.matches(config) && p.patch == patch)
            .unwrap_or_else(|| Profile {
                name: "custom".into(),
                id: CUSTOM_PROFILE_ID,
                scales: config.scales,
                grouping: config.grouping,
                channels: config.channels,
                mixtures: config.mixtures,
                resblocks: config.resblocks,
                patch,
            })
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig::new(self.channels, self.mixtures, self.resblocks, self.scales, self.grouping)
    }

    /// Whether a checkpoint can serve this profile (grouping may differ).
    pub fn matches(&self, config: &NetConfig) -> bool {
        (self.scales, self.channels, self.mixtures, self.resblocks)
            == (config.scales, config.channels, config.mixtures, config.resblocks)
    }

    pub fn check(&self, config: &NetConfig) -> Result<()> {
        if self.matches(config) {
            Ok(())
        } else {
            Err(Error::ProfileMismatch(format!(
                "profile {} wants M={} C={} K={} R={}, checkpoint has M={} C={} K={} R={}",
                self.name,
                self.scales,
                self.channels,
                self.mixtures,
                self.resblocks,
                config.scales,
                config.channels,
                config.mixtures,
                config.resblocks
            )))
        }
    }
}
