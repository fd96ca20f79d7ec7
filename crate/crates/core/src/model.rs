//! The dual-band autoencoder.
//!
//! A high-band encoder stack feeds a core-band encoder stack that ends with
//! the decimating layers. Each stack's output goes through its own skip
//! autoencoder, which collapses channels to a single code signal that is
//! quantized independently. The core-band decoder sees only the core-band
//! code; the high-band decoder starts from the same core-band features,
//! upsamples them back to full rate, and joins the decoded high-band code
//! by channel concatenation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{upsample_interp, AudioSignal, BandSplitConfig};
use crate::error::{Error, Result};
use crate::nn::{Bound, ConvLayer, ParamId, ParamSet, Scalar, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::quantizer::{hard_quantize, Band, Codebook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub overlap: usize,
    /// Layers in the high-band encoder stack (M).
    pub hb_layers: usize,
    /// Layers in the core-band encoder stack (N).
    pub cb_layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub ds_factor: usize,
    pub us_factor: usize,
    pub codebook_cb: usize,
    pub codebook_hb: usize,
    pub band_split: BandSplitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            frame_length: 16_384,
            overlap: 32,
            hb_layers: 3,
            cb_layers: 3,
            channels: 50,
            kernel_size: 15,
            ds_factor: 2,
            us_factor: 2,
            codebook_cb: 32,
            codebook_hb: 8,
            band_split: BandSplitConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.ds_factor != self.us_factor {
            return fail(format!(
                "decimation factor {} differs from upsampling factor {}",
                self.ds_factor, self.us_factor
            ));
        }
        if !self.ds_factor.is_power_of_two() {
            return fail(format!("factor {} is not a power of two", self.ds_factor));
        }
        if self.stride_layers() > self.cb_layers {
            return fail(format!(
                "factor {} needs {} stride-2 layers but the core-band stack has {}",
                self.ds_factor,
                self.stride_layers(),
                self.cb_layers
            ));
        }
        if self.hb_layers == 0 || self.cb_layers == 0 || self.channels == 0 {
            return fail("layer counts and channel width must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return fail(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.frame_length % self.ds_factor != 0 || self.overlap % self.ds_factor != 0 {
            return fail(format!(
                "frame length {} and overlap {} must be multiples of {}",
                self.frame_length, self.overlap, self.ds_factor
            ));
        }
        if self.frame_length <= self.overlap {
            return fail(format!(
                "frame length {} must exceed overlap {}",
                self.frame_length, self.overlap
            ));
        }
        if self.codebook_cb < 2 || self.codebook_hb < 2 || self.codebook_cb > 65_535 || self.codebook_hb > 65_535 {
            return fail("codebook sizes must lie in 2..=65535".into());
        }
        if self.sample_rate == 0 || self.sample_rate % self.ds_factor as u32 != 0 {
            return fail(format!(
                "sample rate {} must be a positive multiple of {}",
                self.sample_rate, self.ds_factor
            ));
        }
        Ok(())
    }

    fn stride_layers(&self) -> usize {
        self.ds_factor.trailing_zeros() as usize
    }

    pub fn code_len(&self, band: Band) -> usize {
        match band {
            Band::Cb => self.frame_length / self.ds_factor,
            Band::Hb => self.frame_length,
        }
    }

    pub fn codebook_size(&self, band: Band) -> usize {
        match band {
            Band::Cb => self.codebook_cb,
            Band::Hb => self.codebook_hb,
        }
    }

    fn skip_channels(&self) -> usize {
        (self.channels / 2).max(1)
    }
}

/// How codes pass between encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantMode<T> {
    /// Soft assignment at temperature `alpha`.
    Soft(T),
    /// Nearest centroid.
    Hard,
    /// Identity; codes pass unquantized.
    Bypass,
}

/// Which code, if any, is replaced by zeros before decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub zero_cb: bool,
    pub zero_hb: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        zero_cb: false,
        zero_hb: false,
    };

    fn validate(self) -> Result<()> {
        if self.zero_cb && self.zero_hb {
            return Err(Error::Parameter(
                "zeroing both codes leaves nothing to decode".into(),
            ));
        }
        Ok(())
    }
}

/// Code values per band for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair<T> {
    pub z_cb: Vec<T>,
    pub z_hb: Vec<T>,
}

/// Band reconstructions for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPair<T> {
    /// Core band at the decimated rate.
    pub x_cb: Vec<T>,
    /// High band at full rate.
    pub x_hb: Vec<T>,
}

/// Hard code indices for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCodes {
    pub cb: Vec<u32>,
    pub hb: Vec<u32>,
}

/// Tape handles for one band's code path.
#[derive(Debug, Clone)]
pub struct BandCode {
    pub z: Var,
    pub quantized: Var,
    /// Soft assignment matrix, present in soft mode.
    pub assign: Option<Var>,
    /// Nearest-centroid indices, present in hard mode.
    pub indices: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub cb: BandCode,
    pub hb: BandCode,
    pub x_cb: Var,
    pub x_hb: Var,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    conv: ConvLayer,
    upsample: usize,
    joins_hb_code: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    enc_hb: Vec<ConvLayer>,
    enc_cb: Vec<ConvLayer>,
    skip_enc_cb: [ConvLayer; 2],
    skip_enc_hb: [ConvLayer; 2],
    skip_dec_cb: [ConvLayer; 2],
    skip_dec_hb: [ConvLayer; 2],
    dec_cb: Vec<ConvLayer>,
    dec_hb: Vec<DecoderLayer>,
    codebook_cb: ParamId,
    codebook_hb: ParamId,
}

/// Scale applied to the He-uniform weights of both decoder output layers.
const OUTPUT_INIT_GAIN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialised model. Codebooks start evenly spaced on
    /// [-1, 1] until they are fitted to data.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (m, n, c, k) = (
            config.hb_layers,
            config.cb_layers,
            config.channels,
            config.kernel_size,
        );
        let half = config.skip_channels();
        let mut layer = |params: &mut ParamSet<T>, name: String, cin, cout, stride| {
            ConvLayer::new(params, &name, k, cin, cout, stride, &mut rng)
        };

        let mut enc_hb = Vec::with_capacity(m);
        for l in 0..m {
            let cin = if l == 0 { 1 } else { c };
            enc_hb.push(layer(&mut params, format!("enc_hb.{l}"), cin, c, 1)?);
        }
        let first_stride = n - config.stride_layers();
        let mut enc_cb = Vec::with_capacity(n);
        for l in 0..n {
            let stride = if l >= first_stride { 2 } else { 1 };
            enc_cb.push(layer(&mut params, format!("enc_cb.{l}"), c, c, stride)?);
        }
        let mut skip = |params: &mut ParamSet<T>, name: &str, down: bool| -> Result<[ConvLayer; 2]> {
            let (a, b) = if down { ((c, half), (half, 1)) } else { ((1, half), (half, c)) };
            Ok([
                layer(params, format!("{name}.0"), a.0, a.1, 1)?,
                layer(params, format!("{name}.1"), b.0, b.1, 1)?,
            ])
        };
        let skip_enc_hb = skip(&mut params, "skip_enc_hb", true)?;
        let skip_enc_cb = skip(&mut params, "skip_enc_cb", true)?;
        let skip_dec_hb = skip(&mut params, "skip_dec_hb", false)?;
        let skip_dec_cb = skip(&mut params, "skip_dec_cb", false)?;

        let depth = m + n;
        let mut dec_cb = Vec::with_capacity(depth);
        for l in 0..depth {
            let cout = if l + 1 == depth { 1 } else { c };
            dec_cb.push(layer(&mut params, format!("dec_cb.{l}"), c, cout, 1)?);
        }
        // position l counts from the first decoder layer, which mirrors the
        // deepest encoder layer; the high-band code joins at the mirror of
        // the last high-band encoder layer
        let join = depth - m;
        let mut dec_hb = Vec::with_capacity(depth);
        for l in 0..depth {
            let cin = if l == join { 2 * c } else { c };
            let cout = if l + 1 == depth { 1 } else { c };
            dec_hb.push(DecoderLayer {
                conv: layer(&mut params, format!("dec_hb.{l}"), cin, cout, 1)?,
                upsample: if l < config.stride_layers() { 2 } else { 1 },
                joins_hb_code: l == join,
            });
        }

        // output layers start near silence so early steps are not spent
        // shrinking a loud random reconstruction
        for last in [dec_cb[depth - 1], dec_hb[depth - 1].conv] {
            let w = params.get_mut(last.weight);
            *w = w.map(|v| v * T::of(OUTPUT_INIT_GAIN));
        }

        let spread = |j: usize| {
            let v = (0..j)
                .map(|i| T::of(-1.0 + 2.0 * i as f64 / (j - 1) as f64))
                .collect();
            Tensor::column(v)
        };
        let codebook_cb = params.add("codebook.cb", spread(config.codebook_cb));
        let codebook_hb = params.add("codebook.hb", spread(config.codebook_hb));

        Ok(Self {
            config,
            params,
            layout: Layout {
                enc_hb,
                enc_cb,
                skip_enc_cb,
                skip_enc_hb,
                skip_dec_cb,
                skip_dec_hb,
                dec_cb,
                dec_hb,
                codebook_cb,
                codebook_hb,
            },
        })
    }

    /// Rebuilds a model around stored parameters, checking every name and
    /// shape against the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, have) in model.params.iter().zip(params.iter()) {
            if want.name != have.name || want.value.shape() != have.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match stored {} {:?}",
                    want.name,
                    want.value.shape(),
                    have.name,
                    have.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn codebook_id(&self, band: Band) -> ParamId {
        match band {
            Band::Cb => self.layout.codebook_cb,
            Band::Hb => self.layout.codebook_hb,
        }
    }

    pub fn centroids(&self, band: Band) -> &[T] {
        self.params.get(self.codebook_id(band)).data()
    }

    pub fn codebook(&self, band: Band) -> Result<Codebook> {
        Codebook::new(band, self.centroids(band).iter().map(|c| c.as_f64()).collect())
    }

    pub fn set_codebook(&mut self, codebook: &Codebook) -> Result<()> {
        let j = self.config.codebook_size(codebook.band);
        if codebook.len() != j {
            return Err(Error::Shape(format!(
                "{} band codebook has {} centroids, model uses {j}",
                codebook.band.name(),
                codebook.len()
            )));
        }
        let values = codebook.centroids().iter().map(|&c| T::of(c)).collect();
        *self.params.get_mut(self.codebook_id(codebook.band)) = Tensor::column(values);
        Ok(())
    }

    /// Restores ascending centroid order and returns the permutation applied
    /// (new position -> old position) so optimiser state can follow.
    pub fn sort_codebook(&mut self, band: Band) -> Vec<usize> {
        let id = self.codebook_id(band);
        let values = self.params.get(id).data().to_vec();
        let mut perm: Vec<usize> = (0..values.len()).collect();
        perm.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted = perm.iter().map(|&i| values[i]).collect();
        *self.params.get_mut(id) = Tensor::column(sorted);
        perm
    }

    fn check_frame(&self, len: usize) -> Result<()> {
        if len != self.config.frame_length {
            return Err(Error::Shape(format!(
                "frame has {len} samples, model expects {}",
                self.config.frame_length
            )));
        }
        Ok(())
    }

    fn check_codes(&self, cb: usize, hb: usize) -> Result<()> {
        let (want_cb, want_hb) = (self.config.code_len(Band::Cb), self.config.code_len(Band::Hb));
        if cb != want_cb || hb != want_hb {
            return Err(Error::Shape(format!(
                "codes of length ({cb}, {hb}), model expects ({want_cb}, {want_hb})"
            )));
        }
        Ok(())
    }

    fn stack(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        layers: &[ConvLayer],
        mut x: Var,
        activate_last: bool,
    ) -> Result<Var> {
        let slope = T::of(LEAKY_SLOPE);
        for (i, layer) in layers.iter().enumerate() {
            x = layer.forward(tape, bound, x)?;
            if activate_last || i + 1 < layers.len() {
                x = tape.leaky_relu(x, slope);
            }
        }
        Ok(x)
    }

    /// Runs both encoder stacks and skip encoders on a `T x 1` frame.
    /// Returns `(z_cb, z_hb)`.
    pub fn encode_on(&self, tape: &mut Tape<T>, bound: &Bound, frame: Var) -> Result<(Var, Var)> {
        let value = tape.value(frame);
        if value.cols() != 1 {
            return Err(Error::Shape("frames are single-channel".into()));
        }
        self.check_frame(value.rows())?;
        let l = &self.layout;
        let h_hb = self.stack(tape, bound, &l.enc_hb, frame, true)?;
        let h_cb = self.stack(tape, bound, &l.enc_cb, h_hb, true)?;
        let z_hb = self.stack(tape, bound, &l.skip_enc_hb, h_hb, false)?;
        let z_cb = self.stack(tape, bound, &l.skip_enc_cb, h_cb, false)?;
        Ok((z_cb, z_hb))
    }

    pub fn quantize_on(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        z: Var,
        band: Band,
        mode: QuantMode<T>,
    ) -> Result<BandCode> {
        let centroids = bound[self.codebook_id(band)];
        Ok(match mode {
            QuantMode::Soft(alpha) => {
                let assign = tape.soft_assign(z, centroids, alpha)?;
                BandCode {
                    z,
                    quantized: tape.mix(assign, centroids)?,
                    assign: Some(assign),
                    indices: None,
                }
            }
            QuantMode::Hard => {
                let (indices, values) = hard_quantize(tape.value(z).data(), self.centroids(band));
                BandCode {
                    z,
                    quantized: tape.constant(Tensor::column(values)),
                    assign: None,
                    indices: Some(indices),
                }
            }
            QuantMode::Bypass => BandCode {
                z,
                quantized: z,
                assign: None,
                indices: None,
            },
        })
    }

    /// Decodes quantized code columns into `(x_cb, x_hb)`.
    pub fn decode_on(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        zq_cb: Var,
        zq_hb: Var,
    ) -> Result<(Var, Var)> {
        let (cb, hb) = (tape.value(zq_cb), tape.value(zq_hb));
        if cb.cols() != 1 || hb.cols() != 1 {
            return Err(Error::Shape("codes are single-channel".into()));
        }
        self.check_codes(cb.rows(), hb.rows())?;
        let l = &self.layout;
        let g_cb = self.stack(tape, bound, &l.skip_dec_cb, zq_cb, true)?;
        let g_hb = self.stack(tape, bound, &l.skip_dec_hb, zq_hb, true)?;
        let x_cb = self.stack(tape, bound, &l.dec_cb, g_cb, false)?;

        let slope = T::of(LEAKY_SLOPE);
        let mut h = g_cb;
        for (i, layer) in l.dec_hb.iter().enumerate() {
            if layer.upsample > 1 {
                h = tape.upsample(h, layer.upsample)?;
            }
            if layer.joins_hb_code {
                h = tape.concat(h, g_hb)?;
            }
            h = layer.conv.forward(tape, bound, h)?;
            if i + 1 < l.dec_hb.len() {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok((x_cb, h))
    }

    /// Full encode, quantize and decode pass over one frame.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        frame: &[T],
        mode: QuantMode<T>,
    ) -> Result<Forward> {
        self.check_frame(frame.len())?;
        let x = tape.constant(Tensor::column(frame.to_vec()));
        let (z_cb, z_hb) = self.encode_on(tape, bound, x)?;
        let cb = self.quantize_on(tape, bound, z_cb, Band::Cb, mode)?;
        let hb = self.quantize_on(tape, bound, z_hb, Band::Hb, mode)?;
        let (x_cb, x_hb) = self.decode_on(tape, bound, cb.quantized, hb.quantized)?;
        Ok(Forward { cb, hb, x_cb, x_hb })
    }

    /// Unquantized codes for one frame.
    pub fn encode(&self, frame: &[T]) -> Result<EncodedPair<T>> {
        self.check_frame(frame.len())?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::column(frame.to_vec()));
        let (z_cb, z_hb) = self.encode_on(&mut tape, &bound, x)?;
        Ok(EncodedPair {
            z_cb: tape.value(z_cb).data().to_vec(),
            z_hb: tape.value(z_hb).data().to_vec(),
        })
    }

    /// Nearest-centroid indices for one frame.
    pub fn encode_indices(&self, frame: &[T]) -> Result<FrameCodes> {
        let z = self.encode(frame)?;
        Ok(FrameCodes {
            cb: hard_quantize(&z.z_cb, self.centroids(Band::Cb)).0,
            hb: hard_quantize(&z.z_hb, self.centroids(Band::Hb)).0,
        })
    }

    pub fn decode(&self, zq_cb: &[T], zq_hb: &[T]) -> Result<DecodedPair<T>> {
        self.decode_ablated(zq_cb, zq_hb, Ablation::NONE)
    }

    pub fn decode_ablated(&self, zq_cb: &[T], zq_hb: &[T], ablation: Ablation) -> Result<DecodedPair<T>> {
        ablation.validate()?;
        self.check_codes(zq_cb.len(), zq_hb.len())?;
        let code = |values: &[T], zero: bool| {
            if zero {
                vec![T::zero(); values.len()]
            } else {
                values.to_vec()
            }
        };
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let cb = tape.constant(Tensor::column(code(zq_cb, ablation.zero_cb)));
        let hb = tape.constant(Tensor::column(code(zq_hb, ablation.zero_hb)));
        let (x_cb, x_hb) = self.decode_on(&mut tape, &bound, cb, hb)?;
        Ok(DecodedPair {
            x_cb: tape.value(x_cb).data().to_vec(),
            x_hb: tape.value(x_hb).data().to_vec(),
        })
    }

    /// Looks up centroid values for hard indices.
    pub fn dequantize(&self, codes: &FrameCodes) -> Result<(Vec<T>, Vec<T>)> {
        let lookup = |idx: &[u32], band: Band| -> Result<Vec<T>> {
            let c = self.centroids(band);
            idx.iter()
                .map(|&i| {
                    c.get(i as usize).copied().ok_or(Error::CorruptCode {
                        index: i as usize,
                        symbols: c.len(),
                    })
                })
                .collect()
        };
        Ok((lookup(&codes.cb, Band::Cb)?, lookup(&codes.hb, Band::Hb)?))
    }

    pub fn decode_indices(&self, codes: &FrameCodes) -> Result<DecodedPair<T>> {
        let (cb, hb) = self.dequantize(codes)?;
        self.decode(&cb, &hb)
    }

    /// `x_hb + U(x_cb)` at full rate.
    pub fn reconstruct_full(&self, x_cb: &[f64], x_hb: &[f64]) -> Result<Vec<f64>> {
        reconstruct_full(&self.config, x_cb, x_hb)
    }
}

/// `x_hb + U(x_cb)` where `U` is the interpolating upsampler.
pub fn reconstruct_full(config: &ModelConfig, x_cb: &[f64], x_hb: &[f64]) -> Result<Vec<f64>> {
    if x_cb.len() * config.us_factor != x_hb.len() {
        return Err(Error::Shape(format!(
            "core band of {} samples does not match high band of {} at factor {}",
            x_cb.len(),
            x_hb.len(),
            config.us_factor
        )));
    }
    let cb_rate = config.sample_rate / config.us_factor as u32;
    let cb = AudioSignal::new(x_cb.to_vec(), cb_rate)?;
    let up = upsample_interp(&cb, config.us_factor, config.band_split.taps)?;
    Ok(up.samples().iter().zip(x_hb).map(|(u, h)| u + h).collect())
}
