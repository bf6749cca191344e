//! SRU and LSTM recurrences, stacked scans, and the multimodal SRU that runs
//! one shared SRU over every spatial location of a sequence of feature maps.
//!
//! Sequences are lists of `[d, n]` matrices: column `j` of step `t` belongs to
//! independent sequence `j`. Language scans use `n = 1`; the multimodal SRU
//! uses one column per pixel, which makes it the 1×1-convolutional form of the
//! SRU.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numeric::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Sru,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSpec {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden: usize,
    pub layers: usize,
}

/// Trainable parameter count of a stack, including the input projection an
/// SRU stack needs when `input_size != hidden`.
pub fn param_count(spec: &StackSpec) -> usize {
    let h = spec.hidden;
    match spec.kind {
        CellKind::Sru => {
            let projection = if spec.input_size != h {
                spec.input_size * h + h
            } else {
                0
            };
            projection + spec.layers * (3 * h * h + 2 * h)
        }
        CellKind::Lstm => (0..spec.layers)
            .map(|l| {
                let d_in = if l == 0 { spec.input_size } else { h };
                4 * (d_in + h) * h + 4 * h
            })
            .sum(),
    }
}

/// Graph handles for one SRU layer.
#[derive(Debug, Clone, Copy)]
pub struct SruVars {
    /// Candidate transform `W`.
    pub w: Var,
    pub w_forget: Var,
    pub b_forget: Var,
    /// Reset (highway) gate.
    pub w_reset: Var,
    pub b_reset: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `[4h, d_in + h]`, gate blocks ordered input, forget, candidate, output.
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone)]
pub struct SruLayer {
    pub size: usize,
    w: ParamId,
    w_forget: ParamId,
    b_forget: ParamId,
    w_reset: ParamId,
    b_reset: ParamId,
}

impl SruLayer {
    /// The highway term `(1 - ρ) ⊙ x` needs `d_in == d_h`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        ensure!(
            d_in == d_h,
            "SRU layer {prefix}: input size {d_in} must equal hidden size {d_h} (project the input first)"
        );
        Ok(SruLayer {
            size: d_h,
            w: store.init(format!("{prefix}.w"), &[d_h, d_in], d_in, rng)?,
            w_forget: store.init(format!("{prefix}.w_forget"), &[d_h, d_in], d_in, rng)?,
            b_forget: store.zeros(format!("{prefix}.b_forget"), &[d_h])?,
            w_reset: store.init(format!("{prefix}.w_reset"), &[d_h, d_in], d_in, rng)?,
            b_reset: store.zeros(format!("{prefix}.b_reset"), &[d_h])?,
        })
    }

    pub fn vars(&self, p: &BoundParams) -> SruVars {
        SruVars {
            w: p[self.w],
            w_forget: p[self.w_forget],
            b_forget: p[self.b_forget],
            w_reset: p[self.w_reset],
            b_reset: p[self.b_reset],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub d_in: usize,
    pub hidden: usize,
    w: ParamId,
    b: ParamId,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(LstmLayer {
            d_in,
            hidden,
            w: store.init(format!("{prefix}.w"), &[4 * hidden, d_in + hidden], d_in + hidden, rng)?,
            b: store.zeros(format!("{prefix}.b"), &[4 * hidden])?,
        })
    }

    pub fn vars(&self, p: &BoundParams) -> LstmVars {
        LstmVars {
            w: p[self.w],
            b: p[self.b],
        }
    }
}

/// One SRU step:
/// `x̃ = W x`, `f = σ(W_f x + b_f)`, `ρ = σ(W_r x + b_r)`,
/// `c = f ⊙ c_prev + (1 - f) ⊙ x̃`, `h = ρ ⊙ σ(c) + (1 - ρ) ⊙ x`.
pub fn sru_step(g: &mut Graph, x: Var, c_prev: Var, w: &SruVars) -> Result<(Var, Var)> {
    let candidate = g.matmul(w.w, x)?;
    let f = g.affine(x, w.w_forget, w.b_forget)?;
    let f = g.sigmoid(f);
    let rho = g.affine(x, w.w_reset, w.b_reset)?;
    let rho = g.sigmoid(rho);
    sru_combine(g, x, c_prev, candidate, f, rho)
}

fn sru_combine(
    g: &mut Graph,
    x: Var,
    c_prev: Var,
    candidate: Var,
    f: Var,
    rho: Var,
) -> Result<(Var, Var)> {
    ensure!(
        g.shape(c_prev) == g.shape(candidate),
        "SRU state shape {:?} does not match step output {:?}",
        g.shape(c_prev),
        g.shape(candidate)
    );
    ensure!(
        g.shape(x) == g.shape(candidate),
        "SRU highway needs input {:?} shaped like the hidden state {:?}",
        g.shape(x),
        g.shape(candidate)
    );
    let keep = g.mul(f, c_prev)?;
    let one_minus_f = g.one_minus(f);
    let write = g.mul(one_minus_f, candidate)?;
    let c = g.add(keep, write)?;
    let sc = g.sigmoid(c);
    let gated = g.mul(rho, sc)?;
    let one_minus_rho = g.one_minus(rho);
    let highway = g.mul(one_minus_rho, x)?;
    let h = g.add(gated, highway)?;
    Ok((c, h))
}

/// Runs one SRU layer over a sequence from a zero state. The three input
/// transforms depend only on the inputs, so they are computed for all steps
/// in a single matrix product each.
pub fn sru_layer_scan(g: &mut Graph, xs: &[Var], w: &SruVars) -> Result<Vec<Var>> {
    ensure!(!xs.is_empty(), "recurrent scan over an empty sequence");
    let shape = g.shape(xs[0]).to_vec();
    ensure!(shape.len() == 2, "sequence steps must be [d, n], got {shape:?}");
    for &x in xs {
        ensure!(
            g.shape(x) == shape.as_slice(),
            "sequence step shape {:?} differs from {shape:?}",
            g.shape(x)
        );
    }
    let n = shape[1];
    let all = if xs.len() == 1 { xs[0] } else { g.concat(1, xs)? };
    let candidates = g.matmul(w.w, all)?;
    let forget = g.affine(all, w.w_forget, w.b_forget)?;
    let forget = g.sigmoid(forget);
    let reset = g.affine(all, w.w_reset, w.b_reset)?;
    let reset = g.sigmoid(reset);
    let d_h = g.shape(candidates)[0];
    let mut c = g.constant(Tensor::zeros(&[d_h, n]));
    let mut out = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        let (cand, f, rho) = if xs.len() == 1 {
            (candidates, forget, reset)
        } else {
            (
                g.narrow(candidates, 1, t * n, n)?,
                g.narrow(forget, 1, t * n, n)?,
                g.narrow(reset, 1, t * n, n)?,
            )
        };
        let (c_next, h) = sru_combine(g, x, c, cand, f, rho)?;
        c = c_next;
        out.push(h);
    }
    Ok(out)
}

/// One LSTM step with sigmoid gates and tanh candidate/output. Returns `(h, c)`.
pub fn lstm_step(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, w: &LstmVars) -> Result<(Var, Var)> {
    let hidden = g.shape(h_prev)[0];
    let xh = g.concat(0, &[x, h_prev])?;
    let z = g.affine(xh, w.w, w.b)?;
    let i = g.narrow(z, 0, 0, hidden)?;
    let f = g.narrow(z, 0, hidden, hidden)?;
    let cand = g.narrow(z, 0, 2 * hidden, hidden)?;
    let o = g.narrow(z, 0, 3 * hidden, hidden)?;
    let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
    let cand = g.tanh(cand);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

pub fn lstm_layer_scan(g: &mut Graph, xs: &[Var], w: &LstmVars) -> Result<Vec<Var>> {
    ensure!(!xs.is_empty(), "recurrent scan over an empty sequence");
    let shape = g.shape(xs[0]).to_vec();
    ensure!(shape.len() == 2, "sequence steps must be [d, n], got {shape:?}");
    let hidden = g.shape(w.w)[0] / 4;
    let mut h = g.constant(Tensor::zeros(&[hidden, shape[1]]));
    let mut c = g.constant(Tensor::zeros(&[hidden, shape[1]]));
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        ensure!(
            g.shape(x) == shape.as_slice(),
            "sequence step shape {:?} differs from {shape:?}",
            g.shape(x)
        );
        let (h_next, c_next) = lstm_step(g, x, h, c, w)?;
        h = h_next;
        c = c_next;
        out.push(h);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Layers {
    Sru(Vec<SruLayer>),
    Lstm(Vec<LstmLayer>),
}

/// A stack of recurrent layers of one kind; layer `l` consumes layer `l - 1`'s
/// hidden sequence.
#[derive(Debug, Clone)]
pub struct RecurrentStack {
    spec: StackSpec,
    projection: Option<(ParamId, ParamId)>,
    layers: Layers,
}

impl RecurrentStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        spec: StackSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        ensure!(spec.layers >= 1, "recurrent stack {prefix} needs at least one layer");
        ensure!(
            spec.input_size > 0 && spec.hidden > 0,
            "recurrent stack {prefix} sizes must be positive"
        );
        let h = spec.hidden;
        let (projection, layers) = match spec.kind {
            CellKind::Sru => {
                let projection = if spec.input_size != h {
                    Some((
                        store.init(format!("{prefix}.proj.w"), &[h, spec.input_size], spec.input_size, rng)?,
                        store.zeros(format!("{prefix}.proj.b"), &[h])?,
                    ))
                } else {
                    None
                };
                let layers = (0..spec.layers)
                    .map(|l| SruLayer::new(store, &format!("{prefix}.sru{l}"), h, h, rng))
                    .collect::<Result<_>>()?;
                (projection, Layers::Sru(layers))
            }
            CellKind::Lstm => {
                let layers = (0..spec.layers)
                    .map(|l| {
                        let d_in = if l == 0 { spec.input_size } else { h };
                        LstmLayer::new(store, &format!("{prefix}.lstm{l}"), d_in, h, rng)
                    })
                    .collect::<Result<_>>()?;
                (None, Layers::Lstm(layers))
            }
        };
        Ok(RecurrentStack {
            spec,
            projection,
            layers,
        })
    }

    pub fn spec(&self) -> &StackSpec {
        &self.spec
    }

    pub fn hidden(&self) -> usize {
        self.spec.hidden
    }

    pub fn sru_layers(&self) -> &[SruLayer] {
        match &self.layers {
            Layers::Sru(l) => l,
            Layers::Lstm(_) => &[],
        }
    }

    /// Top-layer hidden sequence for steps `xs` (each `[input_size, n]`), zero initial states.
    pub fn scan(&self, g: &mut Graph, p: &BoundParams, xs: &[Var]) -> Result<Vec<Var>> {
        ensure!(!xs.is_empty(), "recurrent scan over an empty sequence");
        for &x in xs {
            ensure!(
                g.shape(x).len() == 2 && g.shape(x)[0] == self.spec.input_size,
                "sequence step {:?} does not match stack input size {}",
                g.shape(x),
                self.spec.input_size
            );
        }
        let mut seq: Vec<Var> = match self.projection {
            Some((w, b)) => {
                let n = g.shape(xs[0])[1];
                let all = if xs.len() == 1 { xs[0] } else { g.concat(1, xs)? };
                let proj = g.affine(all, p[w], p[b])?;
                if xs.len() == 1 {
                    vec![proj]
                } else {
                    (0..xs.len())
                        .map(|t| g.narrow(proj, 1, t * n, n))
                        .collect::<Result<_>>()?
                }
            }
            None => xs.to_vec(),
        };
        match &self.layers {
            Layers::Sru(layers) => {
                for layer in layers {
                    seq = sru_layer_scan(g, &seq, &layer.vars(p))?;
                }
            }
            Layers::Lstm(layers) => {
                for layer in layers {
                    seq = lstm_layer_scan(g, &seq, &layer.vars(p))?;
                }
            }
        }
        Ok(seq)
    }
}

/// Multimodal SRU: every spatial location of the maps `M_t` (each `C×H×W`) is
/// an independent sequence through one shared stack. Returns the final
/// top-layer hidden state per location as a `d_h×H×W` map.
pub fn msru_scan(g: &mut Graph, p: &BoundParams, stack: &RecurrentStack, maps: &[Var]) -> Result<Var> {
    ensure!(!maps.is_empty(), "multimodal SRU over an empty sequence");
    let shape = g.shape(maps[0]).to_vec();
    ensure!(shape.len() == 3, "multimodal SRU inputs must be C×H×W, got {shape:?}");
    for (t, &m) in maps.iter().enumerate() {
        ensure!(
            g.shape(m) == shape.as_slice(),
            "multimodal SRU step {t} has shape {:?}, expected {shape:?}",
            g.shape(m)
        );
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let cols = maps
        .iter()
        .map(|&m| g.reshape(m, &[c, h * w]))
        .collect::<Result<Vec<_>>>()?;
    let hidden = stack.scan(g, p, &cols)?;
    let last = *hidden.last().expect("non-empty");
    g.reshape(last, &[stack.hidden(), h, w])
}
