//! Model configuration and the assembled network: visual pyramid, language
//! module, synthesis with the multimodal SRU, and either the low-resolution
//! head or the upsampling decoder.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{contract, ensure, DmnError, Result};
use crate::language::{tokenize, LanguageConfig, LanguageModule, Vocabulary};
use crate::numeric::{AdamConfig, BoundParams, Checkpoint, Graph, ParamStore, PlateauConfig, Tensor, Var};
use crate::synthesis::{make_loc_prefix, SynthesisConfig, SynthesisModule, LOC_CHANNELS};
use crate::upsample::{LowResHead, UpsampleConfig, UpsampleModule};
use crate::visual::{BackboneConfig, FeaturePyramid, VisualModule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Scores straight from `R_N` at `1/2^N` resolution.
    LowRes,
    /// Scores from the decoder at input resolution.
    HighRes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Segment from `I_N` alone; no language or synthesis.
    pub only_vm: bool,
    /// `r_t = h_t` instead of `[e_t; h_t]`.
    pub r_is_h: bool,
    pub no_skip: bool,
    pub no_filters: bool,
    pub no_rt_concat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmnConfig {
    pub backbone: BackboneConfig,
    /// `d_e`.
    pub embedding_size: usize,
    /// `d_h`.
    pub hidden_size: usize,
    pub language_layers: usize,
    /// `K`.
    pub filters: usize,
    pub loc_channels: usize,
    /// Dynamic filters convolve `[I_N, LOC]` when set, `I_N` alone otherwise.
    pub loc_in_filters: bool,
    /// `C_m`.
    pub fusion_channels: usize,
    pub msru_layers: usize,
    pub msru_width: usize,
    /// Decoder stage widths; `None` halves from `msru_width`.
    pub decoder_widths: Option<Vec<usize>>,
    /// Decoder stage count; `None` means `N - 1`.
    pub um_stages: Option<usize>,
    #[serde(default)]
    pub ablation: Ablation,
    pub stage: Stage,
    /// Train every module in the high-resolution stage, not just the decoder.
    pub end_to_end: bool,
    pub optimizer: AdamConfig,
    pub scheduler: PlateauConfig,
    pub epochs: usize,
    pub pos_weight: f64,
    pub seed: u64,
}

impl Default for DmnConfig {
    fn default() -> Self {
        DmnConfig {
            backbone: BackboneConfig::default(),
            embedding_size: 64,
            hidden_size: 64,
            language_layers: 2,
            filters: 10,
            loc_channels: LOC_CHANNELS,
            loc_in_filters: true,
            fusion_channels: 64,
            msru_layers: 1,
            msru_width: 64,
            decoder_widths: None,
            um_stages: None,
            ablation: Ablation::default(),
            stage: Stage::LowRes,
            end_to_end: false,
            optimizer: AdamConfig::default(),
            scheduler: PlateauConfig::default(),
            epochs: 10,
            pos_weight: 1.0,
            seed: 0,
        }
    }
}

/// Fields that change how training runs but not the network itself.
const TRAINING_FIELDS: [&str; 7] = ["stage", "end_to_end", "optimizer", "scheduler", "epochs", "pos_weight", "seed"];

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

impl DmnConfig {
    /// Three scales, 32-wide everything; trains on 32×32 scenes in under a
    /// minute. One conv per scale: with fan-in init, deeper stacks shrink the
    /// colour signal to near zero by I_N.
    pub fn tiny() -> Self {
        DmnConfig {
            backbone: BackboneConfig {
                scales: 3,
                channels: vec![8, 16, 32],
                blocks_per_scale: 1,
            },
            embedding_size: 32,
            hidden_size: 32,
            language_layers: 1,
            filters: 4,
            fusion_channels: 32,
            msru_layers: 1,
            msru_width: 32,
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            end_to_end: true,
            epochs: 20,
            ..DmnConfig::default()
        }
    }

    /// Published language and synthesis sizes on top of the desk backbone.
    pub fn full_scale() -> Self {
        DmnConfig {
            embedding_size: 1000,
            hidden_size: 1000,
            language_layers: 2,
            filters: 10,
            fusion_channels: 1000,
            msru_layers: 3,
            msru_width: 1000,
            ..DmnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        ensure!(
            self.embedding_size > 0 && self.hidden_size > 0,
            "embedding and hidden sizes must be positive"
        );
        ensure!(self.language_layers >= 1, "language_layers must be at least 1");
        ensure!(self.filters >= 1, "filters must be at least 1");
        ensure!(
            self.loc_channels <= LOC_CHANNELS,
            "loc_channels must be at most {LOC_CHANNELS}"
        );
        ensure!(self.fusion_channels >= 1, "fusion_channels must be at least 1");
        ensure!(
            self.msru_layers >= 1 && self.msru_width >= 1,
            "mSRU needs at least one layer of positive width"
        );
        let stages = self.decoder_stages();
        ensure!(
            stages < self.backbone.scales,
            "um_stages = {stages} but at most {} decoder stages exist for N = {}",
            self.backbone.scales - 1,
            self.backbone.scales
        );
        if let Some(w) = &self.decoder_widths {
            ensure!(
                w.len() == stages,
                "decoder_widths lists {} widths for {stages} stages",
                w.len()
            );
        }
        ensure!(
            self.pos_weight.is_finite() && self.pos_weight > 0.0,
            "pos_weight must be positive"
        );
        ensure!(self.optimizer.lr >= 0.0, "learning rate must be non-negative");
        Ok(())
    }

    pub fn decoder_stages(&self) -> usize {
        match (&self.um_stages, &self.decoder_widths) {
            (Some(s), _) => *s,
            (None, Some(w)) => w.len(),
            (None, None) => self.backbone.scales - 1,
        }
    }

    /// `floor(log2 N)`, the alternative decoder depth.
    pub fn log2_stages(&self) -> usize {
        self.backbone.scales.ilog2() as usize
    }

    /// Channels of `R_N`.
    pub fn rn_channels(&self) -> usize {
        if self.ablation.only_vm {
            self.backbone.top_channels()
        } else {
            self.msru_width
        }
    }

    fn decoder_widths_resolved(&self) -> Vec<usize> {
        self.decoder_widths
            .clone()
            .unwrap_or_else(|| UpsampleConfig::halving_widths(self.rn_channels(), self.decoder_stages()))
    }

    /// Dotted names of architecture fields that differ between two configs.
    pub fn architecture_diff(&self, other: &DmnConfig) -> Vec<String> {
        let strip = |c: &DmnConfig| {
            let mut v = serde_json::to_value(c).expect("config serializes");
            if let Value::Object(map) = &mut v {
                for f in TRAINING_FIELDS {
                    map.remove(f);
                }
            }
            let mut flat = BTreeMap::new();
            flatten("", &v, &mut flat);
            flat
        };
        let (a, b) = (strip(self), strip(other));
        let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        keys.into_iter()
            .filter(|k| a.get(*k) != b.get(*k))
            .cloned()
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DmnConfig =
            serde_json::from_str(text).map_err(|e| contract!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub pyramid: FeaturePyramid,
    pub r_n: Var,
    /// Pre-sigmoid scores at the requested stage's resolution.
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Dmn {
    config: DmnConfig,
    vocab: Vocabulary,
    store: ParamStore,
    vm: VisualModule,
    lm: Option<LanguageModule>,
    sm: Option<SynthesisModule>,
    low_head: LowResHead,
    um: UpsampleModule,
    threshold: Option<f64>,
}

impl Dmn {
    /// Builds a freshly initialised model; weights depend only on `(config, vocab)`.
    pub fn new(config: DmnConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let vm = VisualModule::new(&mut store, "vm", &config.backbone, &mut rng)?;
        let c_n = config.backbone.top_channels();
        let (lm, sm) = if config.ablation.only_vm {
            (None, None)
        } else {
            let filter_len = c_n + if config.loc_in_filters { config.loc_channels } else { 0 };
            let lang = LanguageConfig {
                vocab_size: vocab.len(),
                embedding: config.embedding_size,
                hidden: config.hidden_size,
                layers: config.language_layers,
                filters: config.filters,
                filter_len,
                r_is_h: config.ablation.r_is_h,
            };
            let r_width = lang.r_width();
            let lm = LanguageModule::new(&mut store, "lm", lang, &mut rng)?;
            let syn = SynthesisConfig {
                visual_channels: c_n,
                filters: config.filters,
                loc_channels: config.loc_channels,
                r_width,
                fusion_channels: config.fusion_channels,
                msru_width: config.msru_width,
                msru_layers: config.msru_layers,
                no_filters: config.ablation.no_filters,
                no_rt_concat: config.ablation.no_rt_concat,
                loc_in_filters: config.loc_in_filters,
            };
            let sm = SynthesisModule::new(&mut store, "sm", syn, &mut rng)?;
            (Some(lm), Some(sm))
        };
        let low_head = LowResHead::new(&mut store, "low", config.rn_channels(), &mut rng)?;
        let um = UpsampleModule::new(
            &mut store,
            "um",
            UpsampleConfig {
                visual_channels: config.backbone.channels.clone(),
                input_channels: config.rn_channels(),
                widths: config.decoder_widths_resolved(),
                no_skip: config.ablation.no_skip,
            },
            &mut rng,
        )?;
        Ok(Dmn {
            config,
            vocab,
            store,
            vm,
            lm,
            sm,
            low_head,
            um,
            threshold: None,
        })
    }

    pub fn config(&self) -> &DmnConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, theta: Option<f64>) {
        self.threshold = theta;
    }

    /// Switches the training stage; the architecture is unchanged.
    pub fn set_stage(&mut self, stage: Stage) {
        self.config.stage = stage;
    }

    pub fn tokenize(&self, query: &str) -> Result<Vec<usize>> {
        tokenize(query, &self.vocab)
    }

    /// Downsampling factor of the output at `stage`.
    pub fn output_factor(&self, stage: Stage) -> usize {
        match stage {
            Stage::LowRes => 1 << self.config.backbone.scales,
            Stage::HighRes => 1,
        }
    }

    /// Runs the network on graph `g` with parameters bound as `p`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, image: Var, ids: &[usize], stage: Stage) -> Result<ForwardOutput> {
        let pyramid = self.vm.forward(g, p, image)?;
        let i_n = pyramid.top();
        let r_n = match (&self.lm, &self.sm) {
            (Some(lm), Some(sm)) => {
                let lang = lm.forward(g, p, ids)?;
                let s = g.shape(i_n).to_vec();
                let loc = g.constant(make_loc_prefix(s[1], s[2], self.config.loc_channels)?);
                sm.forward(g, p, i_n, loc, &lang)?
            }
            _ => i_n,
        };
        let logits = match stage {
            Stage::LowRes => self.low_head.logits(g, p, r_n)?,
            Stage::HighRes => self.um.logits(g, p, r_n, &pyramid)?,
        };
        Ok(ForwardOutput { pyramid, r_n, logits })
    }

    /// Probability map for one image (`3×H×W` in `[0, 1]`) and token ids.
    pub fn heatmap_ids(&self, image: &Tensor, ids: &[usize], stage: Stage) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind_constants(&mut g);
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, &p, x, ids, stage)?;
        let prob = g.sigmoid(out.logits);
        Ok(g.value(prob).clone())
    }

    pub fn heatmap(&self, image: &Tensor, query: &str, stage: Stage) -> Result<Tensor> {
        let ids = self.tokenize(query)?;
        self.heatmap_ids(image, &ids, stage)
    }

    /// Checkpoint carrying the weights plus config, vocabulary and threshold.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "vocab": self.vocab.tokens(),
            "threshold": self.threshold,
        });
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: DmnConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| contract!("checkpoint config is unreadable: {e}"))?;
        Self::from_checkpoint_with(ckpt, config)
    }

    /// Loads checkpoint weights into a model built from `config`, which must
    /// agree with the checkpoint on every architecture field.
    pub fn from_checkpoint_with(ckpt: &Checkpoint, config: DmnConfig) -> Result<Self> {
        let stored: DmnConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| contract!("checkpoint config is unreadable: {e}"))?;
        let diff = stored.architecture_diff(&config);
        if !diff.is_empty() {
            return Err(DmnError::Contract(format!(
                "config does not match checkpoint in: {}",
                diff.join(", ")
            )));
        }
        let tokens: Vec<String> = serde_json::from_value(ckpt.meta["vocab"].clone())
            .map_err(|e| contract!("checkpoint vocabulary is unreadable: {e}"))?;
        let vocab = Vocabulary::from_tokens(tokens)?;
        let mut model = Dmn::new(config, vocab)?;
        ckpt.restore_into(&mut model.store)?;
        model.threshold = ckpt.meta["threshold"].as_f64();
        Ok(model)
    }
}
