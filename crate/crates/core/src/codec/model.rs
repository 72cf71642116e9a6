use lvp_tensor::{Float, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{quantize, CodeGrid, CodecConfig, Quantized};
use crate::data::VideoClip;
use crate::nn::{Conv, ConvTranspose, ResBlock};
use crate::params::{Bound, ParamId, ParamSet};
use crate::{Error, Result};

/// Encoder, codebook and decoder.
///
/// Encoder: 3×3 conv, then per stage a 4×4 stride-2 conv and relu, residual
/// blocks, relu and a 1×1 projection to N_z. The decoder mirrors it with
/// transposed convolutions and ends in a linear 3×3 conv (the last layer
/// G_L). Frozen decode paths clamp their output to [−1, 1].
#[derive(Clone, Debug)]
pub struct Codec {
    pub config: CodecConfig,
    pub params: ParamSet<f32>,
    layout: Layout,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_in: Conv,
    enc_down: Vec<Conv>,
    enc_res: Vec<ResBlock>,
    enc_out: Conv,
    codebook: ParamId,
    dec_in: Conv,
    dec_res: Vec<ResBlock>,
    dec_up: Vec<ConvTranspose>,
    dec_out: Conv,
}

impl Codec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Codec> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let w = &config.widths;
        let top = *w.last().expect("validated");
        let (k, nz) = (config.codebook_size, config.code_dim);

        let enc_in = Conv::new(&mut ps, "enc.in", (config.channels, w[0], 3), 1, 1, &mut rng);
        let enc_down = (0..config.stages())
            .map(|s| Conv::new(&mut ps, &format!("enc.down{s}"), (w[s], w[s + 1], 4), 2, 1, &mut rng))
            .collect();
        let enc_res = (0..config.res_blocks)
            .map(|i| ResBlock::new(&mut ps, &format!("enc.res{i}"), top, &mut rng))
            .collect();
        let enc_out = Conv::new(&mut ps, "enc.out", (top, nz, 1), 1, 0, &mut rng);
        let bound = 1.0 / k as f64;
        let codebook = ps.add("codebook", Tensor::uniform(&[k, nz], -bound, bound, &mut rng));
        let dec_in = Conv::new(&mut ps, "dec.in", (nz, top, 3), 1, 1, &mut rng);
        let dec_res = (0..config.res_blocks)
            .map(|i| ResBlock::new(&mut ps, &format!("dec.res{i}"), top, &mut rng))
            .collect();
        let dec_up = (0..config.stages())
            .rev()
            .map(|s| ConvTranspose::new(&mut ps, &format!("dec.up{s}"), (w[s + 1], w[s], 4), 2, 1, &mut rng))
            .collect();
        let dec_out = Conv::new(&mut ps, "dec.out", (w[0], config.channels, 3), 1, 1, &mut rng);
        let layout = Layout {
            enc_in,
            enc_down,
            enc_res,
            enc_out,
            codebook,
            dec_in,
            dec_res,
            dec_up,
            dec_out,
        };
        Ok(Codec {
            config,
            params: ps,
            layout,
        })
    }

    pub fn codebook_id(&self) -> ParamId {
        self.layout.codebook
    }

    /// Weight of the decoder's last layer G_L.
    pub fn last_layer_id(&self) -> ParamId {
        self.layout.dec_out.weight
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        self.params.get(self.layout.codebook)
    }

    pub fn codebook_mut(&mut self) -> &mut Tensor<f32> {
        self.params.get_mut(self.layout.codebook)
    }

    pub fn is_encoder_param(&self, name: &str) -> bool {
        name.starts_with("enc.")
    }

    pub fn is_decoder_param(&self, name: &str) -> bool {
        name.starts_with("dec.")
    }

    fn check_frames(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1..] != [c.channels, c.height, c.width] {
            return Err(Error::config(format!(
                "codec expects frames [B, {}, {}, {}], got {shape:?}",
                c.channels, c.height, c.width
            )));
        }
        Ok(())
    }

    /// z_e: `[B, C, H, W]` → `[B, N_z, H/f, W/f]`.
    pub fn encode_graph<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<Var> {
        self.check_frames(t.shape(x))?;
        let l = &self.layout;
        let mut h = l.enc_in.forward(t, b, x)?;
        for conv in &l.enc_down {
            let c = conv.forward(t, b, h)?;
            h = t.relu(c);
        }
        for block in &l.enc_res {
            h = block.forward(t, b, h)?;
        }
        let h = t.relu(h);
        l.enc_out.forward(t, b, h)
    }

    /// `[B, N_z, H/f, W/f]` → `[B, C, H, W]`, unclamped.
    pub fn decode_graph<T: Float>(&self, t: &mut Tape<T>, b: &Bound, z: Var) -> Result<Var> {
        let (gh, gw) = self.config.grid();
        let s = t.shape(z);
        if s.len() != 4 || s[1..] != [self.config.code_dim, gh, gw] {
            return Err(Error::config(format!(
                "decoder expects [B, {}, {gh}, {gw}], got {s:?}",
                self.config.code_dim
            )));
        }
        let l = &self.layout;
        let mut h = l.dec_in.forward(t, b, z)?;
        for block in &l.dec_res {
            h = block.forward(t, b, h)?;
        }
        for up in &l.dec_up {
            let r = t.relu(h);
            h = up.forward(t, b, r)?;
        }
        let h = t.relu(h);
        l.dec_out.forward(t, b, h)
    }

    /// Encode, quantize and decode in one graph.
    pub fn autoencode_graph<T: Float>(&self, t: &mut Tape<T>, b: &Bound, x: Var) -> Result<(Quantized, Var)> {
        let z_e = self.encode_graph(t, b, x)?;
        let q = quantize(t, z_e, b[self.layout.codebook])?;
        let x_hat = self.decode_graph(t, b, q.z_q)?;
        Ok((q, x_hat))
    }

    fn frozen_tape(&self) -> (Tape<f32>, Bound) {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        (tape, b)
    }

    /// Encoder feature map for a single frame `[N_ch, H, W]`.
    pub fn encode(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        let c = &self.config;
        if frame.shape() != [c.channels, c.height, c.width] {
            return Err(Error::config(format!(
                "codec expects a [{}, {}, {}] frame, got {:?}",
                c.channels,
                c.height,
                c.width,
                frame.shape()
            )));
        }
        let (mut t, b) = self.frozen_tape();
        let x = t.constant(frame.clone().reshaped(&[1, c.channels, c.height, c.width])?);
        let z = self.encode_graph(&mut t, &b, x)?;
        let (gh, gw) = c.grid();
        Ok(t.value(z).clone().reshaped(&[c.code_dim, gh, gw])?)
    }

    /// Code grids for a batch of frames `[B, C, H, W]`.
    pub fn quantize_frames(&self, frames: &Tensor<f32>) -> Result<Vec<CodeGrid>> {
        self.check_frames(frames.shape())?;
        let (mut t, b) = self.frozen_tape();
        let x = t.constant(frames.clone());
        let z = self.encode_graph(&mut t, &b, x)?;
        let q = quantize(&mut t, z, b[self.layout.codebook])?;
        let (gh, gw) = self.config.grid();
        q.codes
            .chunks(gh * gw)
            .map(|c| CodeGrid::new(gh, gw, c.to_vec()))
            .collect()
    }

    /// Decodes code grids to frames `[B, C, H, W]`.
    pub fn decode_codes(&self, grids: &[CodeGrid]) -> Result<Tensor<f32>> {
        let (gh, gw) = self.config.grid();
        let (k, nz) = (self.config.codebook_size, self.config.code_dim);
        let mut ids = Vec::with_capacity(grids.len() * gh * gw);
        for g in grids {
            if (g.height, g.width) != (gh, gw) {
                return Err(Error::config(format!(
                    "code grid {}x{} does not match the codec's {gh}x{gw}",
                    g.height, g.width
                )));
            }
            if let Some(&bad) = g.codes.iter().find(|&&c| c >= k) {
                return Err(Error::config(format!("code {bad} outside a codebook of {k}")));
            }
            ids.extend_from_slice(&g.codes);
        }
        let (mut t, b) = self.frozen_tape();
        let rows = t.gather_rows(b[self.layout.codebook], &ids)?;
        let grid = t.reshape(rows, &[grids.len(), gh, gw, nz])?;
        let z = t.permute(grid, &[0, 3, 1, 2])?;
        let y = self.decode_graph(&mut t, &b, z)?;
        Ok(clamp_unit(t.value(y)))
    }

    /// Reconstruction of a batch through the quantizer.
    pub fn reconstruct(&self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (mut t, b) = self.frozen_tape();
        let x = t.constant(frames.clone());
        let (_, y) = self.autoencode_graph(&mut t, &b, x)?;
        Ok(clamp_unit(t.value(y)))
    }

    /// Per-frame codes of a clip. Parameters are only read.
    pub fn encode_video(&self, clip: &VideoClip) -> Result<Vec<CodeGrid>> {
        self.quantize_frames(clip.frames())
    }

    /// Rebuilds a codec from a configuration and named tensors.
    pub fn from_tensors(config: CodecConfig, named: Vec<(String, Tensor<f32>)>) -> Result<Codec> {
        let mut codec = Codec::new(config, 0)?;
        codec.params.load(named)?;
        Ok(codec)
    }
}

fn clamp_unit(t: &Tensor<f32>) -> Tensor<f32> {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    out
}
