use crate::error::{ensure, Result};
use crate::numeric::Tensor;

/// Binary `H×W` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        ensure!(
            bits.len() == height * width,
            "mask of {height}x{width} needs {} pixels, got {}",
            height * width,
            bits.len()
        );
        Ok(Mask { height, width, bits })
    }

    pub(crate) fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        debug_assert_eq!(bits.len(), height * width);
        Mask { height, width, bits }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask::from_bits(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `(intersection, union)` pixel counts.
    pub fn overlap(&self, other: &Mask) -> Result<(u64, u64)> {
        ensure!(
            self.height == other.height && self.width == other.width,
            "mask sizes differ: {}x{} vs {}x{}",
            self.height,
            self.width,
            other.height,
            other.width
        );
        let (mut i, mut u) = (0, 0);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            i += (a && b) as u64;
            u += (a || b) as u64;
        }
        Ok((i, u))
    }

    /// Nearest-neighbour downsampling by `factor`, sampling the pixel whose
    /// centre is closest to each output cell centre.
    pub fn downsample(&self, factor: usize) -> Result<Mask> {
        ensure!(factor >= 1, "downsampling factor must be positive");
        ensure!(
            self.height.is_multiple_of(factor) && self.width.is_multiple_of(factor),
            "mask {}x{} is not divisible by {factor}",
            self.height,
            self.width
        );
        let (h, w) = (self.height / factor, self.width / factor);
        let off = factor / 2;
        let bits = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| self.get(y * factor + off, x * factor + off))
            .collect();
        Ok(Mask::from_bits(h, w, bits))
    }

    /// `1×H×W` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[1, self.height, self.width], data).expect("consistent size")
    }
}
