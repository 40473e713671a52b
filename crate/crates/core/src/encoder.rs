//! Fully convolutional U-Net mapping an instance tensor to the selection
//! bias `P`.
//!
//! Input is `[3, H, W]`: obstacles, one-hot start, one-hot goal. Each
//! contracting level is conv3×3 + ReLU followed by 2×2 max pooling; the
//! expanding levels upsample, concatenate the matching skip and apply
//! conv3×3 + ReLU. A 1×1 head and `out_scale · sigmoid` produce a
//! non-negative `[H, W]` map. Maps whose sides are not multiples of
//! `2^depth` are zero-padded at the bottom/right and the output cropped.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{read_tensors, write_tensors, Graph, Padding, Tensor, TensorError, Var};
use crate::gridmap::PlanInstance;

pub const ARCH_FORMAT_VERSION: &str = "arch v1";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("map {height}x{width} is smaller than the {min}x{min} minimum of a depth-{depth} encoder")]
    DimensionUnderflow {
        height: usize,
        width: usize,
        depth: usize,
        min: usize,
    },
    #[error("expected a [3, H, W] instance tensor, got {0:?}")]
    InputShape(Vec<usize>),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("architecture mismatch: expected {expected}, checkpoint has {found}")]
    ArchMismatch { expected: String, found: String },
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for EncoderError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::CorruptCheckpoint(m) => EncoderError::CorruptCheckpoint(m),
            TensorError::Io(io) => EncoderError::Io(io),
            other => EncoderError::Tensor(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub depth: usize,
    pub base: usize,
    pub out_scale: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            depth: 3,
            base: 16,
            out_scale: 10.0,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.depth < 1 || self.depth > 8 {
            return Err(EncoderError::InvalidArch(format!("depth {} not in 1..=8", self.depth)));
        }
        if self.base < 4 {
            return Err(EncoderError::InvalidArch(format!("base {} < 4", self.base)));
        }
        if !(self.out_scale > 0.0) || !self.out_scale.is_finite() {
            return Err(EncoderError::InvalidArch(format!("out_scale {}", self.out_scale)));
        }
        Ok(())
    }

    /// Side length every input is padded to a multiple of.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base << level
    }

    /// `(name, shape)` of every parameter in checkpoint order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, c_in: usize, c_out: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![c_out, c_in, k, k]));
            out.push((format!("{name}.bias"), vec![c_out]));
        };
        let mut c_in = 3;
        for level in 0..self.depth {
            conv(format!("enc{level}"), c_in, self.channels(level), 3);
            c_in = self.channels(level);
        }
        conv("bottleneck".into(), c_in, self.channels(self.depth), 3);
        let mut below = self.channels(self.depth);
        for level in (0..self.depth).rev() {
            let c = self.channels(level);
            conv(format!("dec{level}"), below + c, c, 3);
            below = c;
        }
        conv("head".into(), below, 1, 1);
        out
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{ARCH_FORMAT_VERSION}: depth={} base={} out_scale={}",
            self.depth, self.base, self.out_scale
        )
    }
}

impl FromStr for Arch {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EncoderError::CorruptCheckpoint(format!("bad arch line {s:?}"));
        let rest = s
            .trim()
            .strip_prefix(ARCH_FORMAT_VERSION)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(bad)?;
        let (mut depth, mut base, mut out_scale) = (None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "depth" => depth = Some(v.parse().map_err(|_| bad())?),
                "base" => base = Some(v.parse().map_err(|_| bad())?),
                "out_scale" => out_scale = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(Arch {
            depth: depth.ok_or_else(bad)?,
            base: base.ok_or_else(bad)?,
            out_scale: out_scale.ok_or_else(bad)?,
        })
    }
}

/// `[3, H, W]`: obstacle map, one-hot start, one-hot goal.
pub fn instance_tensor(instance: &PlanInstance) -> Tensor {
    let map = instance.map();
    let n = map.len();
    let mut data = Vec::with_capacity(3 * n);
    data.extend(map.occupancy().iter().map(|&o| f64::from(o)));
    let mut start = vec![0.0; n];
    start[instance.start_index()] = 1.0;
    let mut goal = vec![0.0; n];
    goal[instance.goal_index()] = 1.0;
    data.extend(start);
    data.extend(goal);
    Tensor::new(vec![3, map.height(), map.width()], data).expect("3 planes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    arch: Arch,
    params: Vec<(String, Tensor)>,
}

/// A recorded forward pass.
#[derive(Debug, Clone)]
pub struct RecordedForward {
    pub p: Var,
    /// One leaf per parameter, in [`EncoderModel::params`] order.
    pub params: Vec<Var>,
}

impl EncoderModel {
    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(arch: Arch, seed: u64) -> Result<Self, EncoderError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 4 {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                    Tensor::from_fn(&shape, |_| normal.sample(&mut rng))
                } else {
                    Tensor::zeros(&shape)
                };
                (name, t)
            })
            .collect();
        Ok(Self { arch, params })
    }

    /// Zeroes the 1×1 head so that `P ≡ out_scale / 2`.
    pub fn zero_head(&mut self) {
        for (name, t) in &mut self.params {
            if name.starts_with("head.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Prediction factor for one instance tensor, no gradient recording.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, EncoderError> {
        let mut g = Graph::new();
        let rec = self.build(&mut g, x, false)?;
        Ok(g.value(rec.p).clone())
    }

    pub fn predict(&self, instance: &PlanInstance) -> Result<Tensor, EncoderError> {
        self.forward(&instance_tensor(instance))
    }

    /// Records the forward pass with every parameter as a graph leaf.
    pub fn forward_recorded(&self, graph: &mut Graph, x: &Tensor) -> Result<RecordedForward, EncoderError> {
        self.build(graph, x, true)
    }

    fn build(&self, g: &mut Graph, x: &Tensor, trainable: bool) -> Result<RecordedForward, EncoderError> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let p = self.forward_with(g, x, &params)?;
        Ok(RecordedForward { p, params })
    }

    /// The forward pass with caller-supplied parameter nodes, in
    /// [`EncoderModel::params`] order. Only the architecture of `self` is
    /// used.
    pub fn forward_with(&self, g: &mut Graph, x: &Tensor, params: &[Var]) -> Result<Var, EncoderError> {
        let [3, h, w] = x.shape()[..] else {
            return Err(EncoderError::InputShape(x.shape().to_vec()));
        };
        let m = self.arch.multiple();
        if h < m || w < m {
            return Err(EncoderError::DimensionUnderflow {
                height: h,
                width: w,
                depth: self.arch.depth,
                min: m,
            });
        }
        if params.len() != self.params.len() {
            return Err(EncoderError::ArchMismatch {
                expected: self.arch.to_string(),
                found: format!("{} parameter nodes", params.len()),
            });
        }
        let mut next = params.iter().copied();
        let mut conv = |g: &mut Graph, input: Var, relu: bool| -> Result<Var, EncoderError> {
            let (k, b) = (next.next().expect("weight"), next.next().expect("bias"));
            let y = g.conv2d(input, k, Padding::Same)?;
            let y = g.channel_bias(y, b)?;
            Ok(if relu { g.relu(y) } else { y })
        };

        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let input = g.constant(x.clone());
        let mut cur = if (ph, pw) == (h, w) { input } else { g.pad_to(input, ph, pw)? };
        let mut skips = Vec::with_capacity(self.arch.depth);
        for _ in 0..self.arch.depth {
            let y = conv(g, cur, true)?;
            skips.push(y);
            cur = g.maxpool2(y)?;
        }
        cur = conv(g, cur, true)?;
        for skip in skips.into_iter().rev() {
            let up = g.upsample2(cur)?;
            let joined = g.concat_channels(&[up, skip])?;
            cur = conv(g, joined, true)?;
        }
        let logits = conv(g, cur, false)?;
        let s = g.sigmoid(logits);
        let s = g.scale(s, self.arch.out_scale);
        let s = if (ph, pw) == (h, w) { s } else { g.crop_to(s, h, w)? };
        Ok(g.reshape(s, &[h, w])?)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".arch");
        PathBuf::from(s)
    }

    /// Writes the tensors to `path` and the architecture line to
    /// `<path>.arch`.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut out = BufWriter::new(File::create(path)?);
        write_tensors(&mut out, self.params.iter().map(|(n, t)| (n.as_str(), t)))?;
        out.flush()?;
        std::fs::write(Self::sidecar_path(path), format!("{}\n", self.arch))?;
        Ok(())
    }

    /// Loads a checkpoint, taking the architecture from its sidecar.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let line = std::fs::read_to_string(Self::sidecar_path(path))?;
        let arch: Arch = line.parse()?;
        arch.validate()
            .map_err(|e| EncoderError::CorruptCheckpoint(e.to_string()))?;
        let tensors = read_tensors(&mut BufReader::new(File::open(path)?))?;
        Self::from_tensors(arch, tensors)
    }

    /// Loads a checkpoint that must match `expected`.
    pub fn load_expecting(path: &Path, expected: &Arch) -> Result<Self, EncoderError> {
        let model = Self::load(path)?;
        if model.arch != *expected {
            return Err(EncoderError::ArchMismatch {
                expected: expected.to_string(),
                found: model.arch.to_string(),
            });
        }
        Ok(model)
    }

    pub fn from_tensors(arch: Arch, tensors: Vec<(String, Tensor)>) -> Result<Self, EncoderError> {
        let shapes = arch.parameter_shapes();
        let matches = shapes.len() == tensors.len()
            && shapes
                .iter()
                .zip(&tensors)
                .all(|((n, s), (m, t))| n == m && s.as_slice() == t.shape());
        if !matches {
            return Err(EncoderError::ArchMismatch {
                expected: arch.to_string(),
                found: format!("{} tensors not matching that layout", tensors.len()),
            });
        }
        Ok(Self { arch, params: tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::{Coord, GridMap};

    fn small() -> Arch {
        Arch {
            depth: 2,
            base: 4,
            out_scale: 10.0,
        }
    }

    #[test]
    fn arch_line_round_trip() {
        let a = Arch {
            depth: 2,
            base: 8,
            out_scale: 2.5,
        };
        assert_eq!(a.to_string(), "arch v1: depth=2 base=8 out_scale=2.5");
        assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
        assert!("arch v2: depth=2".parse::<Arch>().is_err());
    }

    #[test]
    fn default_is_small_enough() {
        let m = EncoderModel::init(Arch::default(), 0).unwrap();
        assert!(m.parameter_count() < 1_000_000);
    }

    #[test]
    fn invalid_arch() {
        for a in [
            Arch { depth: 0, ..small() },
            Arch { base: 3, ..small() },
            Arch { out_scale: 0.0, ..small() },
        ] {
            assert!(matches!(EncoderModel::init(a, 1), Err(EncoderError::InvalidArch(_))));
        }
    }

    #[test]
    fn zero_head_gives_half_scale() {
        let mut m = EncoderModel::init(small(), 3).unwrap();
        m.zero_head();
        let inst = PlanInstance::new(GridMap::empty(12, 9).unwrap(), Coord::new(0, 0), Coord::new(8, 11)).unwrap();
        let p = m.predict(&inst).unwrap();
        assert_eq!(p.shape(), [9, 12]);
        assert!(p.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn underflow_and_shape_errors() {
        let m = EncoderModel::init(small(), 3).unwrap();
        assert!(matches!(
            m.forward(&Tensor::zeros(&[3, 3, 8])),
            Err(EncoderError::DimensionUnderflow { .. })
        ));
        assert!(matches!(m.forward(&Tensor::zeros(&[2, 8, 8])), Err(EncoderError::InputShape(_))));
    }

    #[test]
    fn instance_tensor_planes() {
        let map = GridMap::from_rows(&["..#", "..."]).unwrap();
        let inst = PlanInstance::new(map, Coord::new(0, 0), Coord::new(1, 2)).unwrap();
        let x = instance_tensor(&inst);
        assert_eq!(x.shape(), [3, 2, 3]);
        assert_eq!(&x.data()[..6], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.data()[6], 1.0);
        assert_eq!(x.data()[12 + 5], 1.0);
        assert_eq!(x.data()[6..12].iter().sum::<f64>(), 1.0);
    }
}
