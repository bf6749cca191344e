//! Skip-connected decoder from `R_N` to a full-resolution score map, and the
//! 1×1 head used for low-resolution training.

use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::mask::Mask;
use crate::numeric::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::visual::FeaturePyramid;

/// Concatenates `R_n` with the skip `I_n` (if any), applies a padded 3×3
/// convolution and ReLU, then doubles the resolution.
pub fn um_stage(g: &mut Graph, r: Var, skip: Option<Var>, kernel: Var, bias: Var) -> Result<Var> {
    let x = match skip {
        Some(i_n) => {
            let (sr, si) = (g.shape(r), g.shape(i_n));
            ensure!(
                sr.len() == 3 && si.len() == 3 && sr[1..] == si[1..],
                "decoder input {sr:?} and skip {si:?} differ in spatial size"
            );
            g.concat(0, &[r, i_n])?
        }
        None => r,
    };
    let y = g.conv2d(x, kernel, bias, 1, 1)?;
    let y = g.relu(y);
    g.upsample2x(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleConfig {
    /// `C_1..C_N` of the pyramid.
    pub visual_channels: Vec<usize>,
    /// Channels of `R_N`.
    pub input_channels: usize,
    /// Output width of each stage; its length is the stage count.
    pub widths: Vec<usize>,
    pub no_skip: bool,
}

impl UpsampleConfig {
    /// Widths halving from `input_channels`, never below 1.
    pub fn halving_widths(input_channels: usize, stages: usize) -> Vec<usize> {
        (0..stages)
            .map(|i| (input_channels >> (i + 1)).max(1))
            .collect()
    }

    pub fn scales(&self) -> usize {
        self.visual_channels.len()
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Bilinear ×2 steps after the head.
    pub fn final_upsamples(&self) -> usize {
        self.scales() - self.stages()
    }
}

#[derive(Debug, Clone)]
pub struct UpsampleModule {
    config: UpsampleConfig,
    stages: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

impl UpsampleModule {
    pub fn new(store: &mut ParamStore, prefix: &str, config: UpsampleConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = config.scales();
        ensure!(n >= 1, "decoder needs a pyramid");
        ensure!(
            config.stages() < n,
            "decoder has {} stages but only {} are possible for N = {n}",
            config.stages(),
            n - 1
        );
        ensure!(config.widths.iter().all(|&w| w > 0), "decoder widths must be positive");
        let mut stages = Vec::with_capacity(config.stages());
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.widths.iter().enumerate() {
            let scale = n - i;
            let skip = if config.no_skip { 0 } else { config.visual_channels[scale - 1] };
            let fan_in = (c_in + skip) * 9;
            let w = store.init(format!("{prefix}.stage{scale}.w"), &[c_out, c_in + skip, 3, 3], fan_in, rng)?;
            let b = store.zeros(format!("{prefix}.stage{scale}.b"), &[c_out])?;
            stages.push((w, b));
            c_in = c_out;
        }
        let hw = store.init(format!("{prefix}.head.w"), &[1, c_in, 1, 1], c_in, rng)?;
        let hb = store.zeros(format!("{prefix}.head.b"), &[1])?;
        Ok(UpsampleModule {
            config,
            stages,
            head: (hw, hb),
        })
    }

    pub fn config(&self) -> &UpsampleConfig {
        &self.config
    }

    /// Pre-sigmoid scores at full input resolution, `1×H×W`.
    pub fn logits(&self, g: &mut Graph, p: &BoundParams, r_n: Var, pyramid: &FeaturePyramid) -> Result<Var> {
        let n = self.config.scales();
        ensure!(
            pyramid.len() == n,
            "pyramid has {} scales, decoder expects {n}",
            pyramid.len()
        );
        ensure!(
            g.shape(r_n)[1..] == g.shape(pyramid.top())[1..],
            "R_N {:?} does not match the spatial size of I_N {:?}",
            g.shape(r_n),
            g.shape(pyramid.top())
        );
        let mut r = r_n;
        for (i, &(w, b)) in self.stages.iter().enumerate() {
            let skip = (!self.config.no_skip).then(|| pyramid.scale(n - i));
            r = um_stage(g, r, skip, p[w], p[b])?;
        }
        let mut y = g.conv2d(r, p[self.head.0], p[self.head.1], 1, 0)?;
        for _ in 0..self.config.final_upsamples() {
            y = g.upsample2x(y)?;
        }
        Ok(y)
    }

    /// Probabilities in `(0, 1)` at full input resolution.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, r_n: Var, pyramid: &FeaturePyramid) -> Result<Var> {
        let z = self.logits(g, p, r_n, pyramid)?;
        Ok(g.sigmoid(z))
    }
}

/// 1×1 convolution to one channel directly on `R_N`, bypassing the decoder.
#[derive(Debug, Clone)]
pub struct LowResHead {
    w: ParamId,
    b: ParamId,
}

impl LowResHead {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(LowResHead {
            w: store.init(format!("{prefix}.w"), &[1, channels, 1, 1], channels, rng)?,
            b: store.zeros(format!("{prefix}.b"), &[1])?,
        })
    }

    pub fn logits(&self, g: &mut Graph, p: &BoundParams, r_n: Var) -> Result<Var> {
        g.conv2d(r_n, p[self.w], p[self.b], 1, 0)
    }
}

/// Pixel is set iff `hm >= theta`. Accepts `1×H×W` or `H×W` maps.
pub fn binarize(hm: &Tensor, theta: f64) -> Result<Mask> {
    ensure!((0.0..=1.0).contains(&theta), "threshold {theta} is outside [0, 1]");
    let s = hm.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => return Err(crate::error::contract!("heatmap must be 1×H×W or H×W, got {s:?}")),
    };
    Ok(Mask::from_bits(h, w, hm.data().iter().map(|&v| v >= theta).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_widths_floor_at_one() {
        assert_eq!(UpsampleConfig::halving_widths(32, 2), vec![16, 8]);
        assert_eq!(UpsampleConfig::halving_widths(4, 4), vec![2, 1, 1, 1]);
    }

    #[test]
    fn binarize_range() {
        let hm = Tensor::new(&[1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        assert!(binarize(&hm, 1.0 + 1e-9).is_err());
        assert!(binarize(&hm, -0.1).is_err());
        assert_eq!(binarize(&hm, 1.0).unwrap().bits(), &[false, false, true]);
    }
}
