//! Wall-clock comparison of SRU and LSTM scans at identical shapes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::numeric::{Graph, ParamStore, Tensor, Var};
use crate::recurrent::{param_count, CellKind, RecurrentStack, StackSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub d: usize,
    pub t: usize,
    pub reps: usize,
    pub layers: usize,
    pub sru_median_s: f64,
    pub lstm_median_s: f64,
    pub sru_params: usize,
    pub lstm_params: usize,
}

impl BenchReport {
    /// LSTM time over SRU time.
    pub fn speedup(&self) -> f64 {
        self.lstm_median_s / self.sru_median_s
    }

    pub fn param_ratio(&self) -> f64 {
        self.lstm_params as f64 / self.sru_params as f64
    }

    pub fn to_text(&self) -> String {
        format!(
            "d={} T={} layers={} reps={}\n\
             sru   median {:.3} ms  params {}\n\
             lstm  median {:.3} ms  params {}\n\
             lstm/sru time {:.2}x  params {:.3}x\n",
            self.d,
            self.t,
            self.layers,
            self.reps,
            self.sru_median_s * 1e3,
            self.sru_params,
            self.lstm_median_s * 1e3,
            self.lstm_params,
            self.speedup(),
            self.param_ratio()
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "cell,d,T,layers,reps,median_seconds,params\n\
             sru,{d},{t},{l},{r},{:.9},{}\n\
             lstm,{d},{t},{l},{r},{:.9},{}\n",
            self.sru_median_s,
            self.sru_params,
            self.lstm_median_s,
            self.lstm_params,
            d = self.d,
            t = self.t,
            l = self.layers,
            r = self.reps
        )
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One forward and backward pass over the whole sequence.
pub fn scan_forward_backward(store: &ParamStore, stack: &RecurrentStack, seq: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xs: Vec<Var> = seq.iter().map(|x| g.constant(x.clone())).collect();
    let hs = stack.scan(&mut g, &p, &xs)?;
    let last = *hs.last().expect("non-empty sequence");
    let loss = g.sum(last);
    let grads = g.backward(loss)?;
    Ok(grads.get(p.vars()[0]).map_or(0.0, |v| v[0]))
}

/// Median forward+backward time of one-layer SRU and LSTM scans with input
/// and hidden width `d` over `t` steps.
pub fn bench_recurrent(d: usize, t: usize, reps: usize) -> Result<BenchReport> {
    ensure!(reps >= 10, "benchmark needs at least 10 repetitions, got {reps}");
    ensure!(d >= 1 && t >= 1, "benchmark sizes must be positive");
    let layers = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let spec = |kind| StackSpec {
        kind,
        input_size: d,
        hidden: d,
        layers,
    };
    let mut sru_store = ParamStore::new();
    let sru = RecurrentStack::new(&mut sru_store, "sru", spec(CellKind::Sru), &mut rng)?;
    let mut lstm_store = ParamStore::new();
    let lstm = RecurrentStack::new(&mut lstm_store, "lstm", spec(CellKind::Lstm), &mut rng)?;
    let seq: Vec<Tensor> = (0..t)
        .map(|_| Tensor::new(&[d, 1], (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;

    // One untimed pass each to warm allocations.
    std::hint::black_box(scan_forward_backward(&sru_store, &sru, &seq)?);
    std::hint::black_box(scan_forward_backward(&lstm_store, &lstm, &seq)?);

    let mut sru_times = Vec::with_capacity(reps);
    let mut lstm_times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        std::hint::black_box(scan_forward_backward(&sru_store, &sru, &seq)?);
        sru_times.push(start.elapsed().as_secs_f64());
        let start = Instant::now();
        std::hint::black_box(scan_forward_backward(&lstm_store, &lstm, &seq)?);
        lstm_times.push(start.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        d,
        t,
        reps,
        layers,
        sru_median_s: median(&mut sru_times),
        lstm_median_s: median(&mut lstm_times),
        sru_params: param_count(&spec(CellKind::Sru)),
        lstm_params: param_count(&spec(CellKind::Lstm)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn too_few_reps_rejected() {
        assert!(bench_recurrent(4, 2, 9).is_err());
    }
}
