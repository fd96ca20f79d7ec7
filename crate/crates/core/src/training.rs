//! Reconstruction and bitrate losses, the training loop, and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitstream::HuffmanTable;
use crate::data::{Dataset, Example, SplitDataset};
use crate::dsp::{log_mag_stft, snr_db, StftConfig};
use crate::entropy::{bitrate_loss, BitrateContext, CodeStats, RateMode, RateTargets};
use crate::error::{Error, Result};
use crate::model::{Ablation, DecodedPair, FrameCodes, Model, QuantMode};
use crate::nn::{Adam, AdamConfig, Scalar, Tape, Var};
use crate::quantizer::{init_centroids, AnnealSchedule, Band};

/// Loss wiring presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Equal band weights, one total-rate target.
    Bl1,
    /// High-band SNR weighted 2x, one total-rate target.
    Bl2,
    /// High-band SNR weighted 2x, per-band rate targets.
    P,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Bl1 => "bl1",
            Variant::Bl2 => "bl2",
            Variant::P => "p",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bl1" => Ok(Variant::Bl1),
            "bl2" => Ok(Variant::Bl2),
            "p" => Ok(Variant::P),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Resolved loss weights and rate targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_cb_snr: f64,
    pub lambda_hb_snr: f64,
    pub lambda_cb_stft: f64,
    pub lambda_hb_stft: f64,
    pub lambda_br: f64,
    pub mode: RateMode,
    pub targets: RateTargets,
    pub stft: StftConfig,
}

impl LossConfig {
    pub fn for_variant(variant: Variant, targets: RateTargets) -> Self {
        let (hb_snr, mode) = match variant {
            Variant::Bl1 => (1.0, RateMode::Total),
            Variant::Bl2 => (2.0, RateMode::Total),
            Variant::P => (2.0, RateMode::PerBand),
        };
        Self {
            lambda_cb_snr: 1.0,
            lambda_hb_snr: hb_snr,
            lambda_cb_stft: 15.0,
            lambda_hb_stft: 15.0,
            lambda_br: 6e-4,
            mode,
            targets,
            stft: StftConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_cb_snr,
            self.lambda_hb_snr,
            self.lambda_cb_stft,
            self.lambda_hb_stft,
            self.lambda_br,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {lambdas:?}")));
        }
        self.stft.validate()?;
        self.targets.validate(self.mode)
    }

    /// Whether measured rates sit within `tol` bits/s of the targets.
    pub fn rates_within(&self, rate_cb: f64, rate_hb: f64, tol: f64) -> bool {
        let near = |t: Option<f64>, r: f64| t.is_some_and(|t| (t - r).abs() <= tol);
        match self.mode {
            RateMode::PerBand => near(self.targets.cb, rate_cb) && near(self.targets.hb, rate_hb),
            RateMode::Total => near(self.targets.total, rate_cb + rate_hb),
        }
    }
}

/// Training settings as they appear in the `[training]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Per-band targets in bits/s, used by variant `p`.
    pub target_cb: Option<f64>,
    pub target_hb: Option<f64>,
    /// Total-rate target in bits/s, used by `bl1` and `bl2`.
    pub target_total: Option<f64>,
    /// Overrides for the variant's SNR weights.
    pub lambda_cb_snr: Option<f64>,
    pub lambda_hb_snr: Option<f64>,
    pub lambda_stft: f64,
    pub lambda_br: f64,
    pub stft: StftConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Allowed distance from the rate targets, bits/s.
    pub rate_tolerance: f64,
    pub anneal: AnnealSchedule,
    pub seed: u64,
    /// Training frames whose codes seed the centroid quantiles.
    pub warmup_frames: usize,
    /// Leading epochs trained without quantization or rate loss. The
    /// codebooks are refitted after each of them and annealing starts once
    /// they are over.
    pub pretrain_epochs: usize,
    /// Learning rate during pretraining; defaults to `learning_rate`. The
    /// optimiser state is reset when pretraining ends.
    pub pretrain_learning_rate: Option<f64>,
    /// Epochs at whose start the codebooks are refitted to the current
    /// encoder outputs and the optimiser state is reset. A code squeezed onto
    /// two evenly used centroids has no entropy gradient left; a refit
    /// spreads the centroids over it again.
    pub codebook_refit_epochs: Vec<usize>,
    /// Skip quantization entirely (capacity checks only).
    pub bypass_quantization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::P,
            target_cb: Some(34_000.0),
            target_hb: Some(6_000.0),
            target_total: None,
            lambda_cb_snr: None,
            lambda_hb_snr: None,
            lambda_stft: 15.0,
            lambda_br: 6e-4,
            stft: StftConfig::default(),
            learning_rate: 1e-4,
            batch_size: 8,
            max_epochs: 100,
            patience: 5,
            rate_tolerance: 1_500.0,
            anneal: AnnealSchedule::default(),
            seed: 0,
            warmup_frames: 16,
            pretrain_epochs: 0,
            pretrain_learning_rate: None,
            codebook_refit_epochs: Vec::new(),
            bypass_quantization: false,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> Result<LossConfig> {
        let targets = match self.variant {
            Variant::P => RateTargets {
                cb: self.target_cb,
                hb: self.target_hb,
                total: None,
            },
            Variant::Bl1 | Variant::Bl2 => RateTargets::total(self.target_total.unwrap_or(40_000.0)),
        };
        let mut loss = LossConfig::for_variant(self.variant, targets);
        if let Some(l) = self.lambda_cb_snr {
            loss.lambda_cb_snr = l;
        }
        if let Some(l) = self.lambda_hb_snr {
            loss.lambda_hb_snr = l;
        }
        loss.lambda_cb_stft = self.lambda_stft;
        loss.lambda_hb_stft = self.lambda_stft;
        loss.lambda_br = self.lambda_br;
        loss.stft = self.stft;
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss()?;
        self.anneal.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.pretrain_learning_rate.is_some_and(|lr| !(lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.rate_tolerance >= 0.0) {
            return Err(Error::Config("rate tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-band reconstruction terms: negative SNR in dB and log-STFT L1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ReconsTerms {
    pub snr_cb: f64,
    pub snr_hb: f64,
    pub stft_cb: f64,
    pub stft_hb: f64,
}

impl ReconsTerms {
    fn weighted(&self, l: &LossConfig) -> Self {
        Self {
            snr_cb: l.lambda_cb_snr * self.snr_cb,
            snr_hb: l.lambda_hb_snr * self.snr_hb,
            stft_cb: l.lambda_cb_stft * self.stft_cb,
            stft_hb: l.lambda_hb_stft * self.stft_hb,
        }
    }

    fn sum(&self) -> f64 {
        self.snr_cb + self.snr_hb + self.stft_cb + self.stft_hb
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        self.snr_cb += s * other.snr_cb;
        self.snr_hb += s * other.snr_hb;
        self.stft_cb += s * other.stft_cb;
        self.stft_hb += s * other.stft_hb;
    }
}

/// Loss breakdown; `total == recons + br` and `recons` is the sum of the
/// weighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub raw: ReconsTerms,
    pub weighted: ReconsTerms,
    pub recons: f64,
    pub br: f64,
    pub total: f64,
    pub bitrate_cb: f64,
    pub bitrate_hb: f64,
    pub entropy_cb: f64,
    pub entropy_hb: f64,
    pub alpha: f64,
}

impl LossReport {
    fn new(raw: ReconsTerms, loss: &LossConfig) -> Self {
        let weighted = raw.weighted(loss);
        let recons = weighted.sum();
        Self {
            raw,
            weighted,
            recons,
            total: recons,
            ..Self::default()
        }
    }

    fn with_rates(mut self, ctx: &BitrateContext, loss: &LossConfig, h_cb: f64, h_hb: f64) -> Result<Self> {
        self.entropy_cb = h_cb;
        self.entropy_hb = h_hb;
        self.bitrate_cb = ctx.rate_cb(h_cb);
        self.bitrate_hb = ctx.rate_hb(h_hb);
        self.br = bitrate_loss(loss.mode, self.bitrate_cb, self.bitrate_hb, &loss.targets, loss.lambda_br)?;
        self.total = total_loss(self.recons, self.br);
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recons.is_finite() && self.br.is_finite()
    }
}

pub fn total_loss(recons: f64, br: f64) -> f64 {
    recons + br
}

fn to_scalar<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&s| T::of(s as f64)).collect()
}

/// Builds the weighted reconstruction loss for one frame on `tape`. A band
/// whose reference is silent contributes no SNR term.
pub fn recons_on<T: Scalar>(
    tape: &mut Tape<T>,
    est_cb: Var,
    est_hb: Var,
    target_cb: &[T],
    target_hb: &[T],
    loss: &LossConfig,
) -> Result<(Var, ReconsTerms)> {
    let mut raw = ReconsTerms::default();
    let mut terms = Vec::with_capacity(4);
    let mut band = |tape: &mut Tape<T>, est: Var, target: &[T], l_snr: f64, l_stft: f64, name: &str| -> Result<(f64, f64)> {
        let mut snr = 0.0;
        if target.iter().any(|&v| v != T::zero()) {
            let v = tape.neg_snr_db(est, target)?;
            snr = tape.value(v).item().as_f64();
            terms.push((v, T::of(l_snr)));
        } else {
            log::warn!("silent {name} reference, skipping its SNR term");
        }
        let spec = log_mag_stft(target, &loss.stft)?;
        let v = tape.log_stft_l1(est, &spec, loss.stft)?;
        terms.push((v, T::of(l_stft)));
        Ok((snr, tape.value(v).item().as_f64()))
    };
    (raw.snr_cb, raw.stft_cb) = band(tape, est_cb, target_cb, loss.lambda_cb_snr, loss.lambda_cb_stft, "core-band")?;
    (raw.snr_hb, raw.stft_hb) = band(tape, est_hb, target_hb, loss.lambda_hb_snr, loss.lambda_hb_stft, "high-band")?;
    let var = tape.weighted_sum(&terms)?;
    Ok((var, raw))
}

/// Reconstruction loss for one frame without gradients.
pub fn recons_loss<T: Scalar>(
    x_cb: &[T],
    est_cb: &[T],
    x_hb: &[T],
    est_hb: &[T],
    loss: &LossConfig,
) -> Result<LossReport> {
    if x_cb.len() != est_cb.len() || x_hb.len() != est_hb.len() {
        return Err(Error::Shape("band estimates and references differ in length".into()));
    }
    let mut tape = Tape::new();
    let a = tape.constant(crate::nn::Tensor::column(est_cb.to_vec()));
    let b = tape.constant(crate::nn::Tensor::column(est_hb.to_vec()));
    let (_, raw) = recons_on(&mut tape, a, b, x_cb, x_hb, loss)?;
    Ok(LossReport::new(raw, loss))
}

/// Bitrate loss on the soft-assignment histogram of a batch. Returns the
/// loss node and the two soft entropies.
fn soft_rate_on<T: Scalar>(
    tape: &mut Tape<T>,
    assign_cb: &[Var],
    assign_hb: &[Var],
    ctx: &BitrateContext,
    loss: &LossConfig,
) -> Result<(Var, f64, f64)> {
    let p_cb = tape.mean_rows(assign_cb)?;
    let p_hb = tape.mean_rows(assign_hb)?;
    let h_cb = tape.entropy_bits(p_cb);
    let h_hb = tape.entropy_bits(p_hb);
    let k_cb = ctx.rate_cb(1.0);
    let k_hb = ctx.rate_hb(1.0);
    let lambda = T::of(loss.lambda_br);
    let br = match loss.mode {
        RateMode::PerBand => {
            let r_cb = tape.weighted_sum(&[(h_cb, T::of(k_cb))])?;
            let r_hb = tape.weighted_sum(&[(h_hb, T::of(k_hb))])?;
            let d_cb = tape.abs_diff(r_cb, T::of(loss.targets.cb.unwrap_or_default()))?;
            let d_hb = tape.abs_diff(r_hb, T::of(loss.targets.hb.unwrap_or_default()))?;
            tape.weighted_sum(&[(d_cb, lambda), (d_hb, lambda)])?
        }
        RateMode::Total => {
            let r = tape.weighted_sum(&[(h_cb, T::of(k_cb)), (h_hb, T::of(k_hb))])?;
            let d = tape.abs_diff(r, T::of(loss.targets.total.unwrap_or_default()))?;
            tape.weighted_sum(&[(d, lambda)])?
        }
    };
    let (h_cb, h_hb) = (tape.value(h_cb).item().as_f64(), tape.value(h_hb).item().as_f64());
    Ok((br, h_cb, h_hb))
}

pub fn bitrate_context(model: &ModelConfigRef) -> Result<BitrateContext> {
    BitrateContext::new(model.sample_rate, model.frame_length, model.overlap, model.ds_factor)
}

type ModelConfigRef = crate::model::ModelConfig;

/// Sets both codebooks to quantiles of the codes produced for up to
/// `frames` training frames spread across the set.
pub fn fit_codebooks<T: Scalar>(model: &mut Model<T>, data: &Dataset, frames: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = frames.clamp(1, data.len());
    let step = data.len() / n;
    let (mut cb, mut hb) = (Vec::new(), Vec::new());
    for ex in data.examples.iter().step_by(step.max(1)).take(n) {
        let z = model.encode(&to_scalar::<T>(&ex.input))?;
        cb.extend(z.z_cb.iter().map(|v| v.as_f64()));
        hb.extend(z.z_hb.iter().map(|v| v.as_f64()));
    }
    let cfg = model.config().clone();
    model.set_codebook(&init_centroids(Band::Cb, &cb, cfg.codebook_cb)?)?;
    model.set_codebook(&init_centroids(Band::Hb, &hb, cfg.codebook_hb)?)?;
    Ok(())
}

/// Hard-quantized loss over a dataset, as used for validation.
pub fn hard_loss<T: Scalar>(model: &Model<T>, data: &Dataset, loss: &LossConfig) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ctx = bitrate_context(model.config())?;
    let mut raw = ReconsTerms::default();
    let mut stats_cb = CodeStats::empty(model.config().codebook_cb);
    let mut stats_hb = CodeStats::empty(model.config().codebook_hb);
    let scale = 1.0 / data.len() as f64;
    for ex in &data.examples {
        let mut tape = Tape::new();
        let bound = model.params().bind_frozen(&mut tape);
        let fwd = model.forward_on(&mut tape, &bound, &to_scalar::<T>(&ex.input), QuantMode::Hard)?;
        let (_, terms) = recons_on(&mut tape, fwd.x_cb, fwd.x_hb, &to_scalar(&ex.cb), &to_scalar(&ex.hb), loss)?;
        raw.add_scaled(&terms, scale);
        stats_cb.add(fwd.cb.indices.as_deref().unwrap_or_default())?;
        stats_hb.add(fwd.hb.indices.as_deref().unwrap_or_default())?;
    }
    LossReport::new(raw, loss).with_rates(&ctx, loss, stats_cb.entropy_bits(), stats_hb.entropy_bits())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub train: LossReport,
    pub val: LossReport,
    pub improved: bool,
    pub within_rate_band: bool,
}

/// CSV header for the per-epoch training log; the rate columns depend on
/// whether targets are per band or total.
pub fn history_header(mode: RateMode) -> String {
    let rates = match mode {
        RateMode::PerBand => "bitrate_cb,bitrate_hb,target_cb,target_hb",
        RateMode::Total => "bitrate_cb,bitrate_hb,bitrate_total,target_total",
    };
    format!(
        "epoch,alpha,train_recons,train_br,train_total,val_snr_cb,val_snr_hb,val_stft_cb,val_stft_hb,\
         val_recons,val_br,val_total,{rates},entropy_cb,entropy_hb,improved"
    )
}

pub fn history_row(r: &EpochRecord, loss: &LossConfig) -> String {
    let v = &r.val;
    let rates = match loss.mode {
        RateMode::PerBand => format!(
            "{:.3},{:.3},{:.3},{:.3}",
            v.bitrate_cb,
            v.bitrate_hb,
            loss.targets.cb.unwrap_or_default(),
            loss.targets.hb.unwrap_or_default()
        ),
        RateMode::Total => format!(
            "{:.3},{:.3},{:.3},{:.3}",
            v.bitrate_cb,
            v.bitrate_hb,
            v.bitrate_cb + v.bitrate_hb,
            loss.targets.total.unwrap_or_default()
        ),
    };
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{rates},{:.6},{:.6},{}",
        r.epoch,
        r.alpha,
        r.train.recons,
        r.train.br,
        r.train.total,
        v.raw.snr_cb,
        v.raw.snr_hb,
        v.raw.stft_cb,
        v.raw.stft_hb,
        v.recons,
        v.br,
        v.total,
        v.entropy_cb,
        v.entropy_hb,
        u8::from(r.improved)
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the lowest validation loss seen, including the
    /// untrained starting point. Epochs whose rates sit within
    /// `rate_tolerance` of the targets are preferred over all others.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    /// Hard-quantized validation loss before the first update.
    pub initial_val: LossReport,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Trains with Adam on shuffled batches, annealing the soft-quantization
/// temperature once per epoch. After each epoch the model is validated with
/// hard quantization. Training stops once validation has not improved for
/// more than `patience` epochs while both rates sit inside the tolerance
/// band, or at `max_epochs`.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    data: &SplitDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss = cfg.loss()?;
    let ctx = bitrate_context(model.config())?;
    if !cfg.bypass_quantization {
        fit_codebooks(&mut model, &data.train, cfg.warmup_frames)?;
    }
    let initial_val = hard_loss(&model, &data.val, &loss)?;
    // epochs inside the rate band rank ahead of any epoch outside it
    let rank = |r: &LossReport| (!loss.rates_within(r.bitrate_cb, r.bitrate_hb, cfg.rate_tolerance), r.total);
    let mut best = (rank(&initial_val), model.params().clone(), None);

    let optimiser = |model: &Model<T>, lr: f64| {
        Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            model.params(),
        )
    };
    let pretrain_lr = cfg.pretrain_learning_rate.unwrap_or(cfg.learning_rate);
    let mut adam = if cfg.pretrain_epochs > 0 {
        optimiser(&model, pretrain_lr)?
    } else {
        optimiser(&model, cfg.learning_rate)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let pretraining = epoch < cfg.pretrain_epochs;
        if epoch > 0 && epoch == cfg.pretrain_epochs {
            adam = optimiser(&model, cfg.learning_rate)?;
        }
        let bypass = cfg.bypass_quantization || pretraining;
        if !bypass && epoch > cfg.pretrain_epochs && cfg.codebook_refit_epochs.contains(&epoch) {
            fit_codebooks(&mut model, &data.train, cfg.warmup_frames)?;
            adam = optimiser(&model, cfg.learning_rate)?;
        }
        let alpha = cfg.anneal.alpha(epoch.saturating_sub(cfg.pretrain_epochs));
        order.shuffle(&mut rng);
        let mut train_report = LossReport::default();
        let batches = order.chunks(cfg.batch_size).count() as f64;
        for batch in order.chunks(cfg.batch_size) {
            let examples: Vec<&Example> = batch.iter().map(|&i| &data.train.examples[i]).collect();
            let r = train_step(&mut model, &mut adam, &examples, alpha, &loss, &ctx, bypass)
                .map_err(|e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                    other => other,
                })?;
            accumulate(&mut train_report, &r, 1.0 / batches);
        }
        train_report.alpha = alpha;
        if pretraining && !cfg.bypass_quantization {
            fit_codebooks(&mut model, &data.train, cfg.warmup_frames)?;
        }

        let mut val = hard_loss(&model, &data.val, &loss)?;
        val.alpha = alpha;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {}", val.total),
            });
        }
        let improved = rank(&val) < best.0;
        if improved {
            best = (rank(&val), model.params().clone(), Some(epoch));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let within = loss.rates_within(val.bitrate_cb, val.bitrate_hb, cfg.rate_tolerance);
        let record = EpochRecord {
            epoch,
            alpha,
            train: train_report,
            val,
            improved,
            within_rate_band: within,
        };
        log::info!(
            "epoch {epoch}: alpha {alpha:.3} train {:.4} val {:.4} (recons {:.4}, br {:.4}) rates {:.0}/{:.0}",
            train_report.total,
            val.total,
            val.recons,
            val.br,
            val.bitrate_cb,
            val.bitrate_hb
        );
        on_epoch(&record);
        history.push(record);
        if since_best > cfg.patience && within {
            stopped_early = true;
            break;
        }
    }

    let (_, params, best_epoch) = best;
    let model = Model::from_params(model.config().clone(), params)?;
    Ok(TrainOutcome {
        model,
        history,
        initial_val,
        best_epoch,
        stopped_early,
    })
}

fn accumulate(acc: &mut LossReport, r: &LossReport, s: f64) {
    acc.raw.add_scaled(&r.raw, s);
    acc.weighted.add_scaled(&r.weighted, s);
    acc.recons += s * r.recons;
    acc.br += s * r.br;
    acc.total += s * r.total;
    acc.bitrate_cb += s * r.bitrate_cb;
    acc.bitrate_hb += s * r.bitrate_hb;
    acc.entropy_cb += s * r.entropy_cb;
    acc.entropy_hb += s * r.entropy_hb;
}

/// One optimiser update on a batch. Returns the batch loss before the
/// update.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    batch: &[&Example],
    alpha: f64,
    loss: &LossConfig,
    ctx: &BitrateContext,
    bypass: bool,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let mode = if bypass {
        QuantMode::Bypass
    } else {
        QuantMode::Soft(T::of(alpha))
    };
    let w = T::of(1.0 / batch.len() as f64);
    let mut recons = Vec::with_capacity(batch.len());
    let (mut assign_cb, mut assign_hb) = (Vec::new(), Vec::new());
    let mut raw = ReconsTerms::default();
    for ex in batch {
        let fwd = model.forward_on(&mut tape, &bound, &to_scalar::<T>(&ex.input), mode)?;
        let (r, terms) = recons_on(&mut tape, fwd.x_cb, fwd.x_hb, &to_scalar(&ex.cb), &to_scalar(&ex.hb), loss)?;
        raw.add_scaled(&terms, 1.0 / batch.len() as f64);
        recons.push((r, w));
        assign_cb.extend(fwd.cb.assign);
        assign_hb.extend(fwd.hb.assign);
    }
    let recons_var = tape.weighted_sum(&recons)?;
    let mut report = LossReport::new(raw, loss);
    let total = if bypass {
        recons_var
    } else {
        let (br, h_cb, h_hb) = soft_rate_on(&mut tape, &assign_cb, &assign_hb, ctx, loss)?;
        report = report.with_rates(ctx, loss, h_cb, h_hb)?;
        tape.weighted_sum(&[(recons_var, T::one()), (br, T::one())])?
    };
    let value = tape.value(total).item();
    if !value.is_finite() || !report.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("batch loss {value}"),
        });
    }
    let mut grads = tape.backward(total)?;
    let grads: Vec<_> = bound.vars().iter().map(|&v| grads.take(v)).collect();
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            epoch: 0,
            detail: "non-finite gradient".into(),
        });
    }
    adam.step(model.params_mut(), &grads)?;
    for band in Band::ALL {
        let perm = model.sort_codebook(band);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            adam.permute(model.codebook_id(band), &perm);
        }
    }
    Ok(report)
}

/// Hard-quantized pass for one frame: codes, then the decoded bands.
pub fn hard_pass<T: Scalar>(
    model: &Model<T>,
    frame: &[T],
    ablation: Ablation,
) -> Result<(FrameCodes, DecodedPair<T>)> {
    let codes = model.encode_indices(frame)?;
    let (cb, hb) = model.dequantize(&codes)?;
    let out = model.decode_ablated(&cb, &hb, ablation)?;
    Ok((codes, out))
}

/// Per-frame quality figures. SNRs are `None` when the reference is silent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub snr_cb: Option<f64>,
    pub snr_hb: Option<f64>,
    pub snr_full: Option<f64>,
    pub hb_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub frames: Vec<FrameMetrics>,
    pub mean_snr_cb: f64,
    pub mean_snr_hb: f64,
    pub mean_snr_full: f64,
    pub entropy_cb: f64,
    pub entropy_hb: f64,
    pub bitrate_cb: f64,
    pub bitrate_hb: f64,
    /// Rates of Huffman codes fitted to this set, with per-frame byte
    /// padding.
    pub huffman_rate_cb: f64,
    pub huffman_rate_hb: f64,
}

pub const METRICS_HEADER: &str = "frame,snr_cb,snr_hb,snr_full,hb_energy";

impl Metrics {
    pub fn frame_rows(&self) -> impl Iterator<Item = String> + '_ {
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        self.frames.iter().map(move |m| {
            format!("{},{},{},{},{:.6e}", m.frame, f(m.snr_cb), f(m.snr_hb), f(m.snr_full), m.hb_energy)
        })
    }

    pub fn summary_rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_snr_cb", self.mean_snr_cb),
            ("mean_snr_hb", self.mean_snr_hb),
            ("mean_snr_full", self.mean_snr_full),
            ("entropy_cb", self.entropy_cb),
            ("entropy_hb", self.entropy_hb),
            ("bitrate_cb", self.bitrate_cb),
            ("bitrate_hb", self.bitrate_hb),
            ("huffman_rate_cb", self.huffman_rate_cb),
            ("huffman_rate_hb", self.huffman_rate_hb),
        ]
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Hard-quantized metrics over a dataset. Full-band SNR excludes
/// `band_split.taps / 2` samples at each frame edge, where the
/// interpolation filter runs off the frame.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, ablation: Ablation) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = model.config();
    let ctx = bitrate_context(cfg)?;
    let margin = (cfg.band_split.taps / 2).min(cfg.frame_length / 4);
    let mut frames = Vec::with_capacity(data.len());
    let mut stats_cb = CodeStats::empty(cfg.codebook_cb);
    let mut stats_hb = CodeStats::empty(cfg.codebook_hb);
    let mut all_codes = Vec::with_capacity(data.len());
    for (i, ex) in data.examples.iter().enumerate() {
        let (codes, out) = hard_pass(model, &to_scalar::<T>(&ex.input), ablation)?;
        stats_cb.add(&codes.cb)?;
        stats_hb.add(&codes.hb)?;
        let x_cb: Vec<f64> = out.x_cb.iter().map(|v| v.as_f64()).collect();
        let x_hb: Vec<f64> = out.x_hb.iter().map(|v| v.as_f64()).collect();
        let full = model.reconstruct_full(&x_cb, &x_hb)?;
        let t = full.len();
        frames.push(FrameMetrics {
            frame: i,
            snr_cb: snr_db(&ex.cb, &x_cb).ok(),
            snr_hb: snr_db(&ex.hb, &x_hb).ok(),
            snr_full: snr_db(&ex.input[margin..t - margin], &full[margin..t - margin]).ok(),
            hb_energy: x_hb.iter().map(|v| v * v).sum(),
        });
        all_codes.push(codes);
    }
    let huffman_rate = |stats: &CodeStats, pick: fn(&FrameCodes) -> &[u32]| -> Result<f64> {
        let table = HuffmanTable::build(&stats.probabilities())?;
        let mut bytes = 0u64;
        for c in &all_codes {
            bytes += table.bit_length(pick(c))?.div_ceil(8);
        }
        Ok(8.0 * bytes as f64 * ctx.frame_rate / all_codes.len() as f64)
    };
    let (h_cb, h_hb) = (stats_cb.entropy_bits(), stats_hb.entropy_bits());
    Ok(Metrics {
        mean_snr_cb: mean(frames.iter().filter_map(|f| f.snr_cb)),
        mean_snr_hb: mean(frames.iter().filter_map(|f| f.snr_hb)),
        mean_snr_full: mean(frames.iter().filter_map(|f| f.snr_full)),
        entropy_cb: h_cb,
        entropy_hb: h_hb,
        bitrate_cb: ctx.rate_cb(h_cb),
        bitrate_hb: ctx.rate_hb(h_hb),
        huffman_rate_cb: huffman_rate(&stats_cb, |c| &c.cb)?,
        huffman_rate_hb: huffman_rate(&stats_hb, |c| &c.hb)?,
        frames,
    })
}
