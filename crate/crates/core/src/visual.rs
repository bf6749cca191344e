//! Convolutional pyramid encoder. Scale `n` halves the resolution of scale
//! `n - 1` with a stride-2 3×3 convolution, followed by stride-1 3×3
//! convolutions, each with a ReLU.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{BoundParams, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Number of scales `N`.
    pub scales: usize,
    /// Output widths `C_1..C_N`.
    pub channels: Vec<usize>,
    pub blocks_per_scale: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            scales: 5,
            channels: vec![16, 32, 64, 96, 128],
            blocks_per_scale: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.scales >= 2, "backbone needs at least 2 scales, got {}", self.scales);
        ensure!(
            self.channels.len() == self.scales,
            "backbone lists {} channel widths for {} scales",
            self.channels.len(),
            self.scales
        );
        ensure!(
            self.channels.iter().all(|&c| c > 0),
            "backbone channel widths must be positive: {:?}",
            self.channels
        );
        ensure!(self.blocks_per_scale >= 1, "blocks_per_scale must be at least 1");
        Ok(())
    }

    /// Width of `I_N`.
    pub fn top_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    /// Checks that both image sides are divisible by `2^N`.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << self.scales;
        ensure!(
            height > 0 && width > 0 && height.is_multiple_of(m) && width.is_multiple_of(m),
            "image {height}x{width} is not divisible by 2^{} = {m} in both dimensions",
            self.scales
        );
        Ok(())
    }
}

/// Maps `I_1..I_N`; `I_n` is `C_n × H/2^n × W/2^n`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub maps: Vec<Var>,
}

impl FeaturePyramid {
    /// Scale `n`, 1-based.
    pub fn scale(&self, n: usize) -> Var {
        self.maps[n - 1]
    }

    pub fn top(&self) -> Var {
        *self.maps.last().expect("pyramid is never empty")
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct VisualModule {
    config: BackboneConfig,
    /// `(kernel, bias)` per block, grouped by scale.
    blocks: Vec<Vec<(ParamId, ParamId)>>,
}

impl VisualModule {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.scales);
        let mut c_in = 3;
        for (n, &c_out) in config.channels.iter().enumerate() {
            let mut scale = Vec::new();
            for b in 0..config.blocks_per_scale {
                let fan_in = c_in * 9;
                let w = store.init(format!("{prefix}.s{}.b{b}.w", n + 1), &[c_out, c_in, 3, 3], fan_in, rng)?;
                let bias = store.zeros(format!("{prefix}.s{}.b{b}.b", n + 1), &[c_out])?;
                scale.push((w, bias));
                c_in = c_out;
            }
            blocks.push(scale);
        }
        Ok(VisualModule {
            config: config.clone(),
            blocks,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Encodes a `3×H×W` image into its feature pyramid.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, image: Var) -> Result<FeaturePyramid> {
        let s = g.shape(image).to_vec();
        ensure!(s.len() == 3 && s[0] == 3, "image must be 3×H×W, got {s:?}");
        self.config.check_input(s[1], s[2])?;
        let mut x = image;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for scale in &self.blocks {
            for (b, &(w, bias)) in scale.iter().enumerate() {
                let stride = if b == 0 { 2 } else { 1 };
                let y = g.conv2d(x, p[w], p[bias], stride, 1)?;
                x = g.relu(y);
            }
            maps.push(x);
        }
        Ok(FeaturePyramid { maps })
    }
}
