use rand::Rng;

use super::layers::ConvSpec;
use super::real::Real;
use crate::error::{Error, Result};
use crate::formats::NamedArray;
use crate::rng::{self, Purpose};

/// Feature width of the encoder output and the attention blocks.
pub const WIDTH: usize = 64;
pub const MLP_HIDDEN: usize = 128;
pub const HEADS: usize = 4;
pub const WINDOW: usize = 4;
/// Total spatial downsampling of the encoder.
pub const STRIDE: usize = 8;

pub const ENC: [(&str, ConvSpec); 3] = [
    ("enc1", ConvSpec { in_ch: 3, out_ch: 16, k: 3, stride: 2, pad: 1 }),
    ("enc2", ConvSpec { in_ch: 16, out_ch: 32, k: 3, stride: 2, pad: 1 }),
    ("enc3", ConvSpec { in_ch: 32, out_ch: WIDTH, k: 3, stride: 2, pad: 1 }),
];
pub const RES_CONV: ConvSpec = ConvSpec { in_ch: WIDTH, out_ch: WIDTH, k: 3, stride: 1, pad: 1 };
pub const PROJ: ConvSpec = ConvSpec { in_ch: WIDTH, out_ch: WIDTH, k: 1, stride: 1, pad: 0 };
pub const FC1: ConvSpec = ConvSpec { in_ch: WIDTH, out_ch: MLP_HIDDEN, k: 1, stride: 1, pad: 0 };
pub const FC2: ConvSpec = ConvSpec { in_ch: MLP_HIDDEN, out_ch: WIDTH, k: 1, stride: 1, pad: 0 };
pub const FUSE: ConvSpec = ConvSpec { in_ch: 4 * WIDTH, out_ch: WIDTH, k: 1, stride: 1, pad: 0 };
pub const HEAD: ConvSpec = ConvSpec { in_ch: WIDTH, out_ch: 3, k: 1, stride: 1, pad: 0 };

pub const BLOCKS: [&str; 2] = ["block1", "block2"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    He(usize),
    Zero,
    One,
}

fn layout() -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let conv = |name: &str, s: ConvSpec, out: &mut Vec<_>| {
        out.push((format!("{name}.weight"), s.weight_dims(), Init::He(s.in_ch * s.k * s.k)));
        out.push((format!("{name}.bias"), vec![s.out_ch], Init::Zero));
    };
    for (name, s) in ENC {
        conv(name, s, &mut out);
    }
    conv("res.conv_a", RES_CONV, &mut out);
    conv("res.conv_b", RES_CONV, &mut out);
    for b in BLOCKS {
        out.push((format!("{b}.ln1.weight"), vec![WIDTH], Init::One));
        out.push((format!("{b}.ln1.bias"), vec![WIDTH], Init::Zero));
        for p in ["q", "k", "v", "out"] {
            conv(&format!("{b}.attn.{p}"), PROJ, &mut out);
        }
        out.push((format!("{b}.ln2.weight"), vec![WIDTH], Init::One));
        out.push((format!("{b}.ln2.bias"), vec![WIDTH], Init::Zero));
        conv(&format!("{b}.mlp.fc1"), FC1, &mut out);
        conv(&format!("{b}.mlp.fc2"), FC2, &mut out);
    }
    conv("sppf.fuse", FUSE, &mut out);
    conv("head", HEAD, &mut out);
    out
}

/// All detector parameters as named arrays in a fixed order. Gradients and
/// optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    arrays: Vec<NamedArray>,
}

impl WeightSet {
    pub fn zeros() -> Self {
        Self {
            arrays: layout()
                .into_iter()
                .map(|(name, dims, _)| {
                    let n = dims.iter().product();
                    NamedArray::new(name, dims, vec![0.0; n])
                })
                .collect(),
        }
    }

    /// Uniform He initialization from the seed; norm scales 1, shifts and
    /// biases 0.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0, Purpose::WeightInit);
        let arrays = layout()
            .into_iter()
            .map(|(name, dims, init)| {
                let n: usize = dims.iter().product();
                let data = match init {
                    Init::Zero => vec![0.0; n],
                    Init::One => vec![1.0; n],
                    Init::He(fan_in) => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                };
                NamedArray::new(name, dims, data)
            })
            .collect();
        Self { arrays }
    }

    /// Validate names, shapes and finiteness against the architecture.
    pub fn from_arrays(arrays: Vec<NamedArray>) -> Result<Self> {
        let expected = layout();
        if arrays.len() != expected.len() {
            return Err(Error::Shape(format!(
                "weight set has {} arrays, expected {}",
                arrays.len(),
                expected.len()
            )));
        }
        let mut ordered = Vec::with_capacity(expected.len());
        for (name, dims, _) in expected {
            let a = arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Shape(format!("missing array {name}")))?;
            if a.dims != dims || a.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected {dims:?}", a.dims)));
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{name} contains non-finite values")));
            }
            ordered.push(a.clone());
        }
        Ok(Self { arrays: ordered })
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [NamedArray] {
        &mut self.arrays
    }

    pub fn into_arrays(self) -> Vec<NamedArray> {
        self.arrays
    }

    fn index(&self, name: &str) -> usize {
        self.arrays
            .iter()
            .position(|a| a.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.arrays[self.index(name)].data
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let i = self.index(name);
        &mut self.arrays[i].data
    }

    /// Add `values` into the named array.
    pub fn accumulate(&mut self, name: &str, values: &[f64]) {
        let dst = self.get_mut(name);
        debug_assert_eq!(dst.len(), values.len());
        for (d, v) in dst.iter_mut().zip(values) {
            *d += v;
        }
    }

    pub fn num_params(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.arrays.iter().flat_map(|a| a.data.iter().copied())
    }

    pub fn add_scaled(&mut self, other: &WeightSet, k: f64) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.arrays {
            a.data.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn max_abs_diff(&self, other: &WeightSet) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Hash of every parameter bit pattern; ties a forward cache to the
    /// weights that produced it.
    pub fn fingerprint(&self) -> u64 {
        const K: u64 = 0x9e37_79b9_7f4a_7c15;
        let mut h = 0u64;
        for a in &self.arrays {
            for b in a.name.bytes() {
                h = (h.rotate_left(5) ^ b as u64).wrapping_mul(K);
            }
            for v in &a.data {
                h = (h.rotate_left(5) ^ v.to_bits()).wrapping_mul(K);
            }
        }
        h
    }
}

/// Named parameter lookup for the forward pass.
pub trait Params<T> {
    fn param(&self, name: &str) -> &[T];
}

impl Params<f64> for WeightSet {
    fn param(&self, name: &str) -> &[f64] {
        self.get(name)
    }
}

/// Copy of a weight set in another scalar type, with the same order.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    names: Vec<String>,
    pub data: Vec<Vec<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn from_weights(w: &WeightSet) -> Self {
        Self {
            names: w.arrays.iter().map(|a| a.name.clone()).collect(),
            data: w
                .arrays
                .iter()
                .map(|a| a.data.iter().map(|&v| T::from_f64(v)).collect())
                .collect(),
        }
    }

    pub fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

impl<T: Real> Params<T> for ParamSet<T> {
    fn param(&self, name: &str) -> &[T] {
        &self.data[self.index(name)]
    }
}
