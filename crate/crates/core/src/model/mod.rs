//! The effect-profiling network.
//!
//! Two learnable frame transforms (initialized to the real and imaginary DFT
//! rows) feed two dense stacks that share weights across frames. Each stack
//! has seven hidden layers shaped as an hourglass, with encoder outputs added
//! onto the mirrored decoder outputs, and a linear head back to the feature
//! width. The knob vector is appended to the input of every dense layer. The
//! two heads are joined and resynthesized by overlap-add, and the raw input
//! is optionally added to the result.

mod checkpoint;
mod dft;

pub use checkpoint::{stored_hash, Checkpoint, CheckpointManifest, TensorInfo, CHECKPOINT_FORMAT};
pub use dft::{dft_weights, inverse_dft_weights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AudioClip;
use crate::error::{invalid, shape_err, Result};
use crate::gradcore::{NodeId, ParamId, ParamStore, Real, Tape};

/// Slope of the leaky rectifier on hidden layers.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Number of hidden dense layers per branch.
pub const HIDDEN_LAYERS: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub chunk_size: usize,
    pub frame_size: usize,
    pub hop: usize,
    pub hidden_widths: Vec<usize>,
    pub knob_count: usize,
    pub freeze_transforms: bool,
    pub final_skip: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            chunk_size: 4096,
            frame_size: 512,
            hop: 256,
            hidden_widths: vec![512, 256, 128, 64, 128, 256, 512],
            knob_count: 4,
            freeze_transforms: false,
            final_skip: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks.
    pub fn tiny(knob_count: usize) -> Self {
        Self {
            chunk_size: 64,
            frame_size: 16,
            hop: 8,
            hidden_widths: vec![16, 8, 4, 2, 4, 8, 16],
            knob_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 4 || self.frame_size % 2 != 0 {
            return invalid(format!(
                "frame size {} must be even and at least 4",
                self.frame_size
            ));
        }
        if self.chunk_size < self.frame_size {
            return invalid(format!(
                "chunk size {} is smaller than frame size {}",
                self.chunk_size, self.frame_size
            ));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return invalid(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_size
            ));
        }
        if (self.chunk_size - self.frame_size) % self.hop != 0 {
            return invalid(format!(
                "hop {} does not divide chunk - frame = {}",
                self.hop,
                self.chunk_size - self.frame_size
            ));
        }
        let w = &self.hidden_widths;
        if w.len() != HIDDEN_LAYERS {
            return invalid(format!(
                "expected {HIDDEN_LAYERS} hidden widths, got {}",
                w.len()
            ));
        }
        if w.iter().any(|&v| v == 0) || (0..3).any(|i| w[i] != w[HIDDEN_LAYERS - 1 - i]) {
            return invalid(format!("hidden widths {w:?} are not a symmetric hourglass"));
        }
        Ok(())
    }

    /// Features per frame produced by each analysis transform.
    pub fn bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn frames(&self) -> usize {
        (self.chunk_size - self.frame_size) / self.hop + 1
    }

    /// (fan_in, fan_out) of each dense layer in one branch, head last.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let k = self.knob_count;
        let mut shapes = Vec::with_capacity(HIDDEN_LAYERS + 1);
        let mut width = self.bins();
        for &w in &self.hidden_widths {
            shapes.push((width + k, w));
            width = w;
        }
        shapes.push((width + k, self.bins()));
        shapes
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let transforms = 2 * self.bins() * self.frame_size + self.frame_size * 2 * self.bins();
        let dense: usize = self
            .dense_shapes()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum();
        transforms + 2 * dense
    }
}

/// Parameter ids of one dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Where each tensor lives in the parameter store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub analysis_a: ParamId,
    pub analysis_b: ParamId,
    pub branch_a: Vec<DenseIds>,
    pub branch_b: Vec<DenseIds>,
    pub synthesis: ParamId,
}

/// Configuration plus parameter layout; everything except the values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub layout: Layout,
}

impl Architecture {
    /// Records one forward pass on `tape` and returns the `1 × chunk` output
    /// node. The tape must have been created over a store with this layout.
    pub fn graph<T: Real>(&self, tape: &mut Tape<'_, T>, x: &[T], knobs: &[T]) -> Result<NodeId> {
        let cfg = &self.config;
        if x.len() != cfg.chunk_size {
            return shape_err(format!(
                "model expects {} samples, got {}",
                cfg.chunk_size,
                x.len()
            ));
        }
        if knobs.len() != cfg.knob_count {
            return shape_err(format!(
                "model expects {} knobs, got {}",
                cfg.knob_count,
                knobs.len()
            ));
        }
        let input = tape.constant(crate::gradcore::Tensor2::row_vector(x.to_vec()));
        let fa = tape.framed_transform(input, self.layout.analysis_a, cfg.hop)?;
        let fb = tape.framed_transform(input, self.layout.analysis_b, cfg.hop)?;
        let oa = branch(tape, fa, &self.layout.branch_a, knobs)?;
        let ob = branch(tape, fb, &self.layout.branch_b, knobs)?;
        let feats = tape.concat_cols(oa, ob)?;
        let y = tape.overlap_add(feats, self.layout.synthesis, cfg.hop)?;
        if cfg.final_skip {
            tape.add(y, input)
        } else {
            Ok(y)
        }
    }
}

fn branch<T: Real>(
    tape: &mut Tape<'_, T>,
    features: NodeId,
    layers: &[DenseIds],
    knobs: &[T],
) -> Result<NodeId> {
    let slope = T::lit(LEAKY_SLOPE);
    let mut outs: Vec<NodeId> = Vec::with_capacity(HIDDEN_LAYERS);
    let mut h = features;
    for (i, l) in layers[..HIDDEN_LAYERS].iter().enumerate() {
        let inp = tape.append_cols(h, knobs);
        let z = tape.dense(inp, l.weight, l.bias)?;
        let mut a = tape.leaky_relu(z, slope);
        if i > HIDDEN_LAYERS / 2 {
            a = tape.add(a, outs[HIDDEN_LAYERS - 1 - i])?;
        }
        outs.push(a);
        h = a;
    }
    let head = &layers[HIDDEN_LAYERS];
    let inp = tape.append_cols(h, knobs);
    tape.dense(inp, head.weight, head.bias)
}

/// Architecture and parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh model: DFT transforms, seeded uniform dense layers in
    /// `±1/√fan_in`. Values are drawn in `f64` so every precision gets the
    /// same starting point.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.frame_size;
        let frozen = config.freeze_transforms;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let (cos, sin) = dft_weights::<T>(n)?;
        let analysis_a = params.push("analysis_a", cos, frozen);
        let analysis_b = params.push("analysis_b", sin, frozen);
        let mut dense = |params: &mut ParamStore<T>, prefix: &str| -> Vec<DenseIds> {
            config
                .dense_shapes()
                .into_iter()
                .enumerate()
                .map(|(i, (fan_in, fan_out))| {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut draw = |rows, cols| {
                        crate::gradcore::Tensor2::from_fn(rows, cols, |_, _| {
                            T::lit(rng.gen_range(-bound..bound))
                        })
                    };
                    let name = if i == HIDDEN_LAYERS {
                        format!("{prefix}.head")
                    } else {
                        format!("{prefix}.{i}")
                    };
                    let w = draw(fan_out, fan_in);
                    let b = draw(1, fan_out);
                    DenseIds {
                        weight: params.push(format!("{name}.weight"), w, false),
                        bias: params.push(format!("{name}.bias"), b, false),
                    }
                })
                .collect()
        };
        let branch_a = dense(&mut params, "fc_a");
        let branch_b = dense(&mut params, "fc_b");
        let synthesis = params.push("synthesis", inverse_dft_weights::<T>(n)?, frozen);
        Ok(Self {
            arch: Architecture {
                config: config.clone(),
                layout: Layout {
                    analysis_a,
                    analysis_b,
                    branch_a,
                    branch_b,
                    synthesis,
                },
            },
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Ids of the three transform tensors.
    pub fn transform_ids(&self) -> [ParamId; 3] {
        let l = &self.arch.layout;
        [l.analysis_a, l.analysis_b, l.synthesis]
    }

    /// Zeroes every dense weight and bias, leaving the transforms intact.
    /// With the final skip on, the model then reproduces its input.
    pub fn zero_dense(&mut self) {
        let transforms = self.transform_ids();
        for (id, p) in self.params.iter_mut() {
            if !transforms.contains(&id) {
                p.value.fill(T::zero());
            }
        }
    }

    /// Runs one chunk.
    pub fn forward(&self, x: &[T], knobs: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new(&self.params);
        let y = self.arch.graph(&mut tape, x, knobs)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}

impl Model<f32> {
    /// Processes a clip chunk by chunk (stride = chunk size); a tail shorter
    /// than one chunk is dropped.
    pub fn forward_long(&self, x: &AudioClip, knobs: &[f32]) -> Result<AudioClip> {
        let c = self.config().chunk_size;
        if x.len() < c {
            return invalid(format!(
                "clip of {} samples is shorter than one {c}-sample chunk",
                x.len()
            ));
        }
        let mut out = Vec::with_capacity(x.len() / c * c);
        for chunk in x.samples.chunks_exact(c) {
            out.extend(self.forward(chunk, knobs)?);
        }
        Ok(AudioClip::new(out, x.sample_rate))
    }
}
