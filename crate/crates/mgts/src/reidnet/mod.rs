//! The mask-guided two-stream re-ID model.
//!
//! Two stream encoders with identical architecture but independent
//! parameters process the masked-foreground and original patches. Their
//! feature maps are concatenated along the channel axis (foreground stream
//! first), re-weighted by a squeeze-and-excitation block, pooled and
//! projected to a unit-norm descriptor. Single-stream ablation variants keep
//! the SE block over c channels so only the visual component varies.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, TrainCfg, TrainLog};

use crate::diffcore::{Param, Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::geometry::{ExpandRatio, Grid};
use crate::masking::{
    background_patch, box_mask, original_patch, separate_foreground, Image, InstanceMask,
};
use crate::geometry::{resize, Box};
use crate::rng::Rng;

/// Visual-component variant: which patches feed which streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Two streams: expanded masked foreground + expanded original.
    TwoStreamOfe,
    /// Single stream on the tight original patch.
    SingleO,
    /// Single stream on the tight masked foreground.
    SingleF,
    /// Single stream on the tight background-only patch.
    SingleB,
    /// Single stream on the expanded original patch.
    SingleOe,
    /// Single stream on the expanded background-only patch.
    SingleBe,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::TwoStreamOfe => "O+F+E",
            Variant::SingleO => "O",
            Variant::SingleF => "F",
            Variant::SingleB => "B",
            Variant::SingleOe => "O+E",
            Variant::SingleBe => "B+E",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "O+F+E" | "two_stream_OFE" => Ok(Variant::TwoStreamOfe),
            "O" | "single_O" => Ok(Variant::SingleO),
            "F" | "single_F" => Ok(Variant::SingleF),
            "B" | "single_B" => Ok(Variant::SingleB),
            "O+E" | "single_OE" => Ok(Variant::SingleOe),
            "B+E" | "single_BE" => Ok(Variant::SingleBe),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    /// The six ablation rows, in table order.
    pub fn all() -> [Variant; 6] {
        [
            Variant::SingleO,
            Variant::SingleF,
            Variant::SingleB,
            Variant::SingleOe,
            Variant::SingleBe,
            Variant::TwoStreamOfe,
        ]
    }

    pub fn is_two_stream(&self) -> bool {
        matches!(self, Variant::TwoStreamOfe)
    }
}

/// How the foreground mask is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Ground-truth instance mask via majority vote.
    Instance,
    /// Tight bounding box as a weak mask.
    BoxMask,
}

/// Model architecture configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCfg {
    pub variant: Variant,
    /// Channel plan after the 3 input channels, one entry per encoder block.
    pub channel_plan: Vec<usize>,
    /// Descriptor dimension d.
    pub embed_dim: usize,
    /// SE reduction ratio r.
    pub se_reduction: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            variant: Variant::TwoStreamOfe,
            channel_plan: vec![8, 16],
            embed_dim: 32,
            se_reduction: 4,
            input_h: 32,
            input_w: 16,
        }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.channel_plan.is_empty() {
            return Err(Error::Config("channel_plan must be non-empty".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be >= 2".into()));
        }
        let se_channels = self.se_channels();
        if self.se_reduction == 0 || !se_channels.is_multiple_of(self.se_reduction) {
            return Err(Error::Config(format!(
                "se_reduction {} must divide the SE channel count {}",
                self.se_reduction, se_channels
            )));
        }
        if self.input_h < 4 || self.input_w < 4 {
            return Err(Error::Config("input size must be at least 4x4".into()));
        }
        Ok(())
    }

    /// Channels entering the SE block: 2c for two-stream, c for single.
    pub fn se_channels(&self) -> usize {
        let c = *self.channel_plan.last().unwrap();
        if self.variant.is_two_stream() {
            2 * c
        } else {
            c
        }
    }

    pub fn stream_channels(&self) -> usize {
        *self.channel_plan.last().unwrap()
    }

    /// Stable digest of the architecture, stored in checkpoints.
    pub fn digest(&self) -> u64 {
        let s = format!(
            "{}|{:?}|{}|{}|{}x{}",
            self.variant.label(),
            self.channel_plan,
            self.embed_dim,
            self.se_reduction,
            self.input_h,
            self.input_w
        );
        fnv1a(s.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One encoder block: avg_pool_2x -> pointwise channel mix -> ReLU.
#[derive(Debug, Clone)]
struct EncoderBlock {
    mix: Param,  // [c_out, c_in]
    bias: Param, // [c_out]
}

/// Stack of encoder blocks; F-Net and O-Net share this shape but never
/// their parameter values.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
}

#[derive(Debug, Clone)]
pub struct SeBlock {
    w1: Param, // [k, n] with k = n / r
    b1: Param, // [k]
    w2: Param, // [n, k]
    b2: Param, // [n]
}

/// The full model. `proj_t` stores the projection matrix transposed, shape
/// [d, n], so the forward pass is a plain matmul on the pooled column.
#[derive(Debug, Clone)]
pub struct MgtsModel {
    pub cfg: ModelCfg,
    f_net: Encoder,
    o_net: Encoder,
    se: SeBlock,
    proj_t: Param,
}

fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.range(-a, a)).collect(),
    )
    .unwrap()
}

fn encoder_init(rng: &mut Rng, plan: &[usize]) -> Encoder {
    let mut blocks = Vec::new();
    let mut c_in = 3usize;
    for &c_out in plan {
        blocks.push(EncoderBlock {
            mix: Param::new(uniform_init(rng, c_out, c_in, c_in, c_out)),
            bias: Param::new(Tensor::zeros(vec![c_out])),
        });
        c_in = c_out;
    }
    Encoder { blocks }
}

impl MgtsModel {
    pub fn new(cfg: ModelCfg, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(Rng::subseed(seed, 0x30DE1));
        let f_net = encoder_init(&mut rng, &cfg.channel_plan);
        let o_net = encoder_init(&mut rng, &cfg.channel_plan);
        let n = cfg.se_channels();
        let k = n / cfg.se_reduction;
        let se = SeBlock {
            w1: Param::new(uniform_init(&mut rng, k, n, n, k)),
            b1: Param::new(Tensor::zeros(vec![k])),
            w2: Param::new(uniform_init(&mut rng, n, k, k, n)),
            b2: Param::new(Tensor::zeros(vec![n])),
        };
        let proj_t = Param::new(uniform_init(&mut rng, cfg.embed_dim, n, n, cfg.embed_dim));
        Ok(MgtsModel {
            cfg,
            f_net,
            o_net,
            se,
            proj_t,
        })
    }

    /// Stable (name, param) listing used by SGD and checkpointing.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (tag, enc) in [("f", &self.f_net), ("o", &self.o_net)] {
            for (i, b) in enc.blocks.iter().enumerate() {
                out.push((format!("{tag}_net.block{i}.mix"), &b.mix));
                out.push((format!("{tag}_net.block{i}.bias"), &b.bias));
            }
        }
        out.push(("se.w1".into(), &self.se.w1));
        out.push(("se.b1".into(), &self.se.b1));
        out.push(("se.w2".into(), &self.se.w2));
        out.push(("se.b2".into(), &self.se.b2));
        out.push(("proj_t".into(), &self.proj_t));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for enc in [&mut self.f_net, &mut self.o_net] {
            for b in enc.blocks.iter_mut() {
                out.push(&mut b.mix);
                out.push(&mut b.bias);
            }
        }
        out.push(&mut self.se.w1);
        out.push(&mut self.se.b1);
        out.push(&mut self.se.w2);
        out.push(&mut self.se.b2);
        out.push(&mut self.proj_t);
        out
    }

    pub(crate) fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let names: Vec<String> = self.named_params().iter().map(|(n, _)| n.clone()).collect();
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
        let slot = &mut self.params_mut()[idx];
        if slot.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' shape {:?} vs stored {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }
}

/// A recorded forward pass: the tape plus handles for backward.
pub struct ForwardPass {
    pub tape: Tape,
    pub descriptor: VarId,
    pub se_weights: VarId,
    param_vars: Vec<VarId>,
}

impl ForwardPass {
    pub fn descriptor_values(&self) -> Vec<f64> {
        self.tape.data(self.descriptor).to_vec()
    }

    pub fn se_weight_values(&self) -> Vec<f64> {
        self.tape.data(self.se_weights).to_vec()
    }
}

/// Model input after masking, cropping and resizing.
#[derive(Debug, Clone)]
pub enum ModelInput {
    Two { masked: Tensor, original: Tensor },
    One(Tensor),
}

fn grid_to_tensor(g: &Grid) -> Tensor {
    Tensor::new(vec![g.channels, g.height, g.width], g.data.clone()).unwrap()
}

/// Crop/mask/resize a ground-truth or detected box into model input,
/// according to the model's variant.
pub fn prepare_input(
    img: &Image,
    mask: &InstanceMask,
    bbox: &Box,
    gamma: ExpandRatio,
    cfg: &ModelCfg,
    mask_mode: MaskMode,
) -> Result<ModelInput> {
    let tight = ExpandRatio::new(1.0)?;
    let rs = |g: &Grid| -> Result<Tensor> {
        Ok(grid_to_tensor(&resize(g, cfg.input_h, cfg.input_w)?))
    };
    let fg = |gamma: ExpandRatio| -> Result<Grid> {
        Ok(match mask_mode {
            MaskMode::Instance => separate_foreground(bbox, gamma, img, mask)?.patch,
            MaskMode::BoxMask => box_mask(bbox, gamma, img)?.patch,
        })
    };
    match cfg.variant {
        Variant::TwoStreamOfe => Ok(ModelInput::Two {
            masked: rs(&fg(gamma)?)?,
            original: rs(&original_patch(bbox, gamma, img)?)?,
        }),
        Variant::SingleO => Ok(ModelInput::One(rs(&original_patch(bbox, tight, img)?)?)),
        Variant::SingleOe => Ok(ModelInput::One(rs(&original_patch(bbox, gamma, img)?)?)),
        Variant::SingleF => Ok(ModelInput::One(rs(&fg(tight)?)?)),
        Variant::SingleB => Ok(ModelInput::One(rs(
            &background_patch(bbox, tight, img, mask)?.patch
        )?)),
        Variant::SingleBe => Ok(ModelInput::One(rs(
            &background_patch(bbox, gamma, img, mask)?.patch
        )?)),
    }
}

fn encode(tape: &mut Tape, enc: &Encoder, input: VarId, param_vars: &mut Vec<VarId>) -> Result<VarId> {
    let mut x = input;
    for block in &enc.blocks {
        let pooled = tape.avg_pool_2x(x)?;
        let s = tape.shape(pooled).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mixv = tape.leaf(&block.mix.value, true);
        let biasv = tape.leaf(&block.bias.value, true);
        param_vars.push(mixv);
        param_vars.push(biasv);
        let flat = tape.reshape(pooled, vec![c, h * w])?;
        let mixed = tape.matmul(mixv, flat)?;
        let c_out = block.mix.value.shape()[0];
        let cube = tape.reshape(mixed, vec![c_out, h, w])?;
        let biased = tape.channel_bias(cube, biasv)?;
        x = tape.relu(biased);
    }
    Ok(x)
}

fn seblock(
    tape: &mut Tape,
    se: &SeBlock,
    f: VarId,
    param_vars: &mut Vec<VarId>,
) -> Result<(VarId, VarId)> {
    let n = tape.shape(f)[0];
    let w1 = tape.leaf(&se.w1.value, true);
    let b1 = tape.leaf(&se.b1.value, true);
    let w2 = tape.leaf(&se.w2.value, true);
    let b2 = tape.leaf(&se.b2.value, true);
    param_vars.extend([w1, b1, w2, b2]);
    let k = se.w1.value.shape()[0];

    let gap = tape.global_average_pool(f)?;
    let col = tape.reshape(gap, vec![n, 1])?;
    let h1 = tape.matmul(w1, col)?;
    let b1c = tape.reshape(b1, vec![k, 1])?;
    let h1b = tape.add(h1, b1c)?;
    let h1a = tape.relu(h1b);
    let h2 = tape.matmul(w2, h1a)?;
    let b2c = tape.reshape(b2, vec![n, 1])?;
    let h2b = tape.add(h2, b2c)?;
    let logits = tape.reshape(h2b, vec![n])?;
    let weights = tape.sigmoid(logits);
    let scaled = tape.channel_scale(f, weights)?;
    Ok((scaled, weights))
}

impl MgtsModel {
    /// Run the model on a prepared input, recording the tape.
    pub fn forward(&self, input: &ModelInput) -> Result<ForwardPass> {
        let mut tape = Tape::new();
        let mut param_vars = Vec::new();
        // leaf registration order must match params_mut(): encoders first
        let features = match (self.cfg.variant.is_two_stream(), input) {
            (true, ModelInput::Two { masked, original }) => {
                let mv = tape.leaf(masked, false);
                let ov = tape.leaf(original, false);
                let ff = encode(&mut tape, &self.f_net, mv, &mut param_vars)?;
                let fo = encode(&mut tape, &self.o_net, ov, &mut param_vars)?;
                tape.concat_channels(ff, fo)?
            }
            (false, ModelInput::One(patch)) => {
                let pv = tape.leaf(patch, false);
                // single-stream variants use the F-net slot; the O-net
                // params still exist but are unused and receive no grads
                encode(&mut tape, &self.f_net, pv, &mut param_vars)?
            }
            _ => {
                return Err(Error::Contract(
                    "input kind does not match model variant".into(),
                ))
            }
        };
        let (scaled, weights) = seblock(&mut tape, &self.se, features, &mut param_vars)?;
        let pooled = tape.global_average_pool(scaled)?;
        let n = self.cfg.se_channels();
        let col = tape.reshape(pooled, vec![n, 1])?;
        let projv = tape.leaf(&self.proj_t.value, true);
        param_vars.push(projv);
        let proj = tape.matmul(projv, col)?;
        let vecd = tape.reshape(proj, vec![self.cfg.embed_dim])?;
        let descriptor = tape.l2_normalize(vecd)?;
        Ok(ForwardPass {
            tape,
            descriptor,
            se_weights: weights,
            param_vars,
        })
    }

    /// Convenience forward for frozen evaluation: (descriptor, se weights).
    pub fn descriptor(&self, input: &ModelInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let pass = self.forward(input)?;
        Ok((pass.descriptor_values(), pass.se_weight_values()))
    }

    /// Backward from a loss gradient w.r.t. the descriptor; accumulates
    /// parameter gradients into the model.
    pub fn backward(&mut self, mut pass: ForwardPass, descriptor_grad: &[f64]) -> Result<()> {
        pass.tape.backward_seeded(pass.descriptor, descriptor_grad)?;
        // param_vars holds leaves in registration order; map back to slots.
        // Single-stream passes register only f_net + se + proj leaves, so
        // walk the slots in the same order used during forward.
        let mut slots = self.params_mut();
        let per_enc = slots.len() - 5; // both encoders
        let enc_each = per_enc / 2;
        let mut vi = 0usize;
        let take = |slot: &mut Param, tape: &Tape, vars: &[VarId], vi: &mut usize| {
            slot.accumulate(tape, vars[*vi]);
            *vi += 1;
        };
        if pass.param_vars.len() == slots.len() {
            for slot in slots.iter_mut() {
                take(slot, &pass.tape, &pass.param_vars, &mut vi);
            }
        } else {
            // f_net block params only
            for slot in slots.iter_mut().take(enc_each) {
                take(slot, &pass.tape, &pass.param_vars, &mut vi);
            }
            for slot in slots.iter_mut().skip(per_enc) {
                take(slot, &pass.tape, &pass.param_vars, &mut vi);
            }
        }
        Ok(())
    }
}
