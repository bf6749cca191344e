//! Fixtures shared by the criterion benches.

use dmn_core::data::{generate_dataset, Example, SceneSpec};
use dmn_core::recurrent::{CellKind, RecurrentStack, StackSpec};
use dmn_core::train::build_vocab;
use dmn_core::{Dmn, DmnConfig, ParamStore, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A one-layer stack of width `d` and a `t`-step input sequence.
pub struct ScanFixture {
    pub store: ParamStore,
    pub stack: RecurrentStack,
    pub seq: Vec<Tensor>,
}

pub fn scan_fixture(kind: CellKind, d: usize, t: usize) -> Result<ScanFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let spec = StackSpec {
        kind,
        input_size: d,
        hidden: d,
        layers: 1,
    };
    let stack = RecurrentStack::new(&mut store, "rnn", spec, &mut rng)?;
    let seq = (0..t)
        .map(|_| Tensor::new(&[d, 1], (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Result<_>>()?;
    Ok(ScanFixture { store, stack, seq })
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// The tiny model with a handful of 32×32 scenes.
pub fn tiny_model(count: usize) -> Result<(Dmn, Vec<Example>)> {
    let data = generate_dataset(11, count, &SceneSpec::for_size(32, 32))?;
    let model = Dmn::new(DmnConfig::tiny(), build_vocab(&data))?;
    Ok((model, data))
}
