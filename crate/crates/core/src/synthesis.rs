//! Spatial-coordinate encoding, dynamic-filter responses, per-word fusion and
//! the multimodal SRU that aggregates the fused maps into `R_N`.

use rand_chacha::ChaCha8Rng;

use crate::error::{contract, ensure, Result};
use crate::language::LanguageOutput;
use crate::numeric::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::recurrent::{msru_scan, CellKind, RecurrentStack, StackSpec};

/// Full LOC width: x, y, x², y², xy, 1/w, 1/h, 1.
pub const LOC_CHANNELS: usize = 8;

/// The 8-channel coordinate map for an `h×w` grid, with centre coordinates
/// `x_j = -1 + 2(j + 0.5)/w` and `y_i = -1 + 2(i + 0.5)/h`.
pub fn make_loc(h: usize, w: usize) -> Result<Tensor> {
    make_loc_prefix(h, w, LOC_CHANNELS)
}

/// The first `channels` planes of [`make_loc`].
pub fn make_loc_prefix(h: usize, w: usize, channels: usize) -> Result<Tensor> {
    ensure!(h >= 1 && w >= 1, "LOC grid must be at least 1x1, got {h}x{w}");
    ensure!(
        channels <= LOC_CHANNELS,
        "LOC has at most {LOC_CHANNELS} channels, asked for {channels}"
    );
    let plane = h * w;
    let mut data = vec![0.0; channels * plane];
    for i in 0..h {
        let y = -1.0 + 2.0 * (i as f64 + 0.5) / h as f64;
        for j in 0..w {
            let x = -1.0 + 2.0 * (j as f64 + 0.5) / w as f64;
            let values = [x, y, x * x, y * y, x * y, 1.0 / w as f64, 1.0 / h as f64, 1.0];
            for (c, v) in values.iter().take(channels).enumerate() {
                data[c * plane + i * w + j] = *v;
            }
        }
    }
    Tensor::new(&[channels, h, w], data)
}

/// `F_t[k] = f_{k,t} · concat(I_N, loc)` at every site: a 1×1 convolution with
/// the dynamic filters `filters[K, C']`. Pass `loc = None` to convolve `I_N`
/// alone.
pub fn filter_responses(g: &mut Graph, i_n: Var, loc: Option<Var>, filters: Var) -> Result<Var> {
    let s = g.shape(i_n).to_vec();
    ensure!(s.len() == 3, "visual features must be C×h×w, got {s:?}");
    let (h, w) = (s[1], s[2]);
    let x = match loc {
        Some(l) => g.concat(0, &[i_n, l])?,
        None => i_n,
    };
    let width = g.shape(x)[0];
    let fs = g.shape(filters).to_vec();
    ensure!(
        fs.len() == 2 && fs[1] == width,
        "dynamic filters of shape {fs:?} do not match feature width {width}"
    );
    let cols = g.reshape(x, &[width, h * w])?;
    let resp = g.matmul(filters, cols)?;
    g.reshape(resp, &[fs[0], h, w])
}

/// `M_t = ReLU(Conv1×1([I_N | F_t | LOC | tile(r_t)]))`. `f_t` and `r_t` are
/// optional so the ablations can drop their blocks.
pub fn merge_step(
    g: &mut Graph,
    i_n: Var,
    f_t: Option<Var>,
    loc: Var,
    r_t: Option<Var>,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    let s = g.shape(i_n).to_vec();
    ensure!(s.len() == 3, "visual features must be C×h×w, got {s:?}");
    let (h, w) = (s[1], s[2]);
    let mut parts = vec![i_n];
    if let Some(f) = f_t {
        parts.push(f);
    }
    parts.push(loc);
    if let Some(r) = r_t {
        let d = g.shape(r)[0];
        let tiled = g.broadcast_cols(r, h * w)?;
        parts.push(g.reshape(tiled, &[d, h, w])?);
    }
    for &v in &parts[1..] {
        let vs = g.shape(v);
        ensure!(
            vs.len() == 3 && vs[1] == h && vs[2] == w,
            "fusion input of shape {vs:?} does not match spatial size {h}x{w}"
        );
    }
    let x = g.concat(0, &parts)?;
    let width = g.shape(x)[0];
    let ks = g.shape(kernel).to_vec();
    ensure!(
        ks.len() == 4 && ks[1] == width && ks[2] == 1 && ks[3] == 1,
        "fusion kernel {ks:?} does not accept a {width}-channel concatenation"
    );
    let y = g.conv2d(x, kernel, bias, 1, 0)?;
    Ok(g.relu(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// `C_N`.
    pub visual_channels: usize,
    /// `K`.
    pub filters: usize,
    /// `C_loc`.
    pub loc_channels: usize,
    /// Width of `r_t`.
    pub r_width: usize,
    /// `C_m`, number of 1×1 fusion kernels.
    pub fusion_channels: usize,
    pub msru_width: usize,
    pub msru_layers: usize,
    /// Drop `F_t` from the fusion.
    pub no_filters: bool,
    /// Drop the tiled `r_t` from the fusion.
    pub no_rt_concat: bool,
    /// Whether dynamic filters see LOC as well as `I_N`.
    pub loc_in_filters: bool,
}

impl SynthesisConfig {
    pub fn filter_len(&self) -> usize {
        self.visual_channels + if self.loc_in_filters { self.loc_channels } else { 0 }
    }

    /// Channel width of the fusion input.
    pub fn fusion_width(&self) -> usize {
        self.visual_channels
            + if self.no_filters { 0 } else { self.filters }
            + self.loc_channels
            + if self.no_rt_concat { 0 } else { self.r_width }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisModule {
    config: SynthesisConfig,
    fusion_w: ParamId,
    fusion_b: ParamId,
    msru: RecurrentStack,
}

impl SynthesisModule {
    pub fn new(store: &mut ParamStore, prefix: &str, config: SynthesisConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        ensure!(config.fusion_channels >= 1, "fusion needs at least one kernel");
        let width = config.fusion_width();
        let fusion_w = store.init(
            format!("{prefix}.fusion.w"),
            &[config.fusion_channels, width, 1, 1],
            width,
            rng,
        )?;
        let fusion_b = store.zeros(format!("{prefix}.fusion.b"), &[config.fusion_channels])?;
        let msru = RecurrentStack::new(
            store,
            &format!("{prefix}.msru"),
            StackSpec {
                kind: CellKind::Sru,
                input_size: config.fusion_channels,
                hidden: config.msru_width,
                layers: config.msru_layers,
            },
            rng,
        )?;
        Ok(SynthesisModule {
            config,
            fusion_w,
            fusion_b,
            msru,
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    /// Builds `M_1..M_T` and runs the multimodal SRU over them, returning
    /// `R_N` of shape `msru_width × h × w`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, i_n: Var, loc: Var, lang: &LanguageOutput) -> Result<Var> {
        let cfg = &self.config;
        ensure!(!lang.r.is_empty(), "synthesis needs at least one word");
        ensure!(
            lang.r.len() == lang.filters.len(),
            "language output has {} features but {} filter banks",
            lang.r.len(),
            lang.filters.len()
        );
        ensure!(
            g.shape(i_n)[0] == cfg.visual_channels,
            "I_N has {} channels, synthesis expects {}",
            g.shape(i_n)[0],
            cfg.visual_channels
        );
        ensure!(
            g.shape(loc)[0] == cfg.loc_channels,
            "LOC has {} channels, synthesis expects {}",
            g.shape(loc)[0],
            cfg.loc_channels
        );
        let mut maps = Vec::with_capacity(lang.r.len());
        for (&r_t, &filters) in lang.r.iter().zip(&lang.filters) {
            let f_t = if cfg.no_filters {
                None
            } else {
                let l = cfg.loc_in_filters.then_some(loc);
                Some(filter_responses(g, i_n, l, filters)?)
            };
            let r = if cfg.no_rt_concat {
                None
            } else {
                if g.shape(r_t)[0] != cfg.r_width {
                    return Err(contract!(
                        "r_t has width {}, synthesis expects {}",
                        g.shape(r_t)[0],
                        cfg.r_width
                    ));
                }
                Some(r_t)
            };
            maps.push(merge_step(g, i_n, f_t, loc, r, p[self.fusion_w], p[self.fusion_b])?);
        }
        msru_scan(g, p, &self.msru, &maps)
    }
}
