//! `mbharp` command-line front end: corpus synthesis, training, coding and
//! analysis.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mbharp::bitstream::CodedFile;
use mbharp::checkpoint::{hex, Checkpoint};
use mbharp::codec;
use mbharp::config::RunConfig;
use mbharp::data::{write_corpus, Manifest, Split, SplitDataset, SynthConfig, MANIFEST_NAME};
use mbharp::dsp::{snr_db, split_bands, AudioSignal, StftConfig};
use mbharp::model::{Ablation, Model};
use mbharp::spectrogram::Spectrogram;
use mbharp::training::{self, history_header, history_row, Variant, METRICS_HEADER};
use mbharp::wav::{read_wav_at, write_wav_f32};

#[derive(Parser, Debug)]
#[command(name = "mbharp", version, about = "Multi-band neural audio codec")]
struct Cli {
    /// Run configuration (TOML with [model] and [training] tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training / corpus seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic 32 kHz corpus with a train/val/test manifest.
    SynthData(SynthArgs),
    /// Trains a model on a corpus and writes a checkpoint and history.
    Train(TrainArgs),
    /// Encodes a WAV file into a coded stream.
    Encode(EncodeArgs),
    /// Decodes a coded stream into a float-32 WAV file.
    Decode(DecodeArgs),
    /// Reports per-frame SNRs and bitrates on one corpus split.
    Eval(EvalArgs),
    /// Compares high-band reconstructions with one code zeroed.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct DataDir {
    /// Corpus directory.
    #[arg(long, env = "MBHARP_DATA_DIR", default_value = "data")]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; defaults to the data directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dir: DataDir,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Model frames per clip.
    #[arg(long, default_value_t = 4)]
    frames_per_clip: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    dir: DataDir,
    /// Output directory for the checkpoint, history and resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Core-band target in bits/s (variant p).
    #[arg(long)]
    target_cb: Option<f64>,
    /// High-band target in bits/s (variant p).
    #[arg(long)]
    target_hb: Option<f64>,
    /// Total target in bits/s (variants bl1 and bl2).
    #[arg(long)]
    target_total: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    dir: DataDir,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    split: Split,
    /// Directory for `metrics.csv` (per frame) and `summary.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AblateMode {
    #[value(name = "zero_cb")]
    ZeroCb,
    #[value(name = "zero_hb")]
    ZeroHb,
    None,
}

impl AblateMode {
    fn ablation(self) -> Ablation {
        Ablation {
            zero_cb: self == AblateMode::ZeroCb,
            zero_hb: self == AblateMode::ZeroHb,
        }
    }

    fn name(self) -> &'static str {
        match self {
            AblateMode::ZeroCb => "zero_cb",
            AblateMode::ZeroHb => "zero_hb",
            AblateMode::None => "none",
        }
    }
}

#[derive(Args, Debug)]
struct AblateArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    mode: AblateMode,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: mbharp::Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: mbharp::Error| e.to_string())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    match cli.command {
        Command::SynthData(a) => synth_data(&config, a),
        Command::Train(a) => train(config, a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn synth_data(config: &RunConfig, a: SynthArgs) -> Result<()> {
    config.model.validate()?;
    let dir = a.out.unwrap_or(a.dir.data);
    let cfg = SynthConfig::for_model(&config.model, a.frames_per_clip);
    let manifest = write_corpus(&dir, a.count, config.training.seed, &cfg)
        .with_context(|| format!("writing corpus to {}", dir.display()))?;
    println!("wrote {} clips to {}", manifest.entries.len(), dir.display());
    Ok(())
}

fn load_corpus(dir: &Path, config: &RunConfig) -> Result<SplitDataset> {
    let path = dir.join(MANIFEST_NAME);
    let manifest = Manifest::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SplitDataset::load(dir, &manifest, &config.model)?)
}

fn train(mut config: RunConfig, a: TrainArgs) -> Result<()> {
    let t = &mut config.training;
    if let Some(v) = a.variant {
        t.variant = v;
    }
    if a.target_cb.is_some() {
        t.target_cb = a.target_cb;
    }
    if a.target_hb.is_some() {
        t.target_hb = a.target_hb;
    }
    if a.target_total.is_some() {
        t.target_total = a.target_total;
    }
    if let Some(e) = a.epochs {
        t.max_epochs = e;
    }
    config.validate()?;
    let loss = config.training.loss()?;
    let data = load_corpus(&a.dir.data, &config)?;
    if data.train.is_empty() || data.val.is_empty() {
        bail!("corpus in {} has no training or validation frames", a.dir.data.display());
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.toml"), config.to_toml()?)?;
    let history_path = a.out.join("history.csv");
    let mut history = fs::File::create(&history_path)?;
    writeln!(history, "{}", history_header(loss.mode))?;
    let model = Model::<f32>::new(config.model.clone(), config.training.seed)?;
    let mut write_err = None;
    let outcome = training::train(model, &data, &config.training, |r| {
        if let Err(e) = writeln!(history, "{}", history_row(r, &loss)).and_then(|_| history.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing history");
    }
    let ck = Checkpoint::new(config, outcome.model)?;
    let hash = ck.save(&a.out.join("model.ckpt"))?;
    let best = outcome.best_epoch.map_or("initial".to_string(), |e| e.to_string());
    println!(
        "trained {} epochs (best: {best}, early stop: {}), checkpoint {}",
        outcome.history.len(),
        outcome.stopped_early,
        hex(&hash)
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, [u8; 32])> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn encode(a: EncodeArgs) -> Result<()> {
    let (ck, hash) = load_checkpoint(&a.checkpoint)?;
    let x = read_wav_at(&a.input, ck.config.model.sample_rate)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let file = codec::encode(&ck.model, &hash, &x)?;
    let bytes = file.serialize();
    fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    let seconds = x.len() as f64 / x.sample_rate() as f64;
    println!(
        "{} samples -> {} bytes ({:.1} bits/s)",
        x.len(),
        bytes.len(),
        8.0 * bytes.len() as f64 / seconds
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let (ck, hash) = load_checkpoint(&a.checkpoint)?;
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let file = CodedFile::parse(&bytes)?;
    let y = codec::decode(&ck.model, &hash, &file)?;
    write_wav_f32(&a.out, &y).with_context(|| format!("writing {}", a.out.display()))?;
    println!("decoded {} samples", y.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    let data = load_corpus(&a.dir.data, &ck.config)?;
    let metrics = training::evaluate(&ck.model, data.get(a.split), Ablation::NONE)
        .with_context(|| format!("evaluating the {} split", a.split))?;
    let mut summary = String::from("metric,value\n");
    for (name, v) in metrics.summary_rows() {
        println!("{name:>16}  {v:.4}");
        summary.push_str(&format!("{name},{v}\n"));
    }
    if let Some(out) = a.out {
        fs::create_dir_all(&out)?;
        let mut rows = String::from(METRICS_HEADER);
        rows.push('\n');
        for r in metrics.frame_rows() {
            rows.push_str(&r);
            rows.push('\n');
        }
        fs::write(out.join("metrics.csv"), rows)?;
        fs::write(out.join("summary.csv"), summary)?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let cfg = &ck.config.model;
    let x = read_wav_at(&a.input, cfg.sample_rate).with_context(|| format!("reading {}", a.input.display()))?;
    let reference = split_bands(&x, cfg.ds_factor, &cfg.band_split)?.hb;
    let normal = codec::reconstruct_hb(model, &x, Ablation::NONE)?;
    let ablated = codec::reconstruct_hb(model, &x, a.mode.ablation())?;
    let snr_normal = snr_db(reference.samples(), &normal)?;
    let snr_ablated = snr_db(reference.samples(), &ablated)?;
    let energy = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>();

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stft = StftConfig::default();
    let spec_n = Spectrogram::of(&normal, &stft)?;
    let spec_a = Spectrogram::of(&ablated, &stft)?;
    let (lo_n, hi_n) = spec_n.range();
    let (lo_a, hi_a) = spec_a.range();
    let (lo, hi) = (lo_n.min(lo_a), hi_n.max(hi_a));
    for (name, hb, spec) in [("normal", &normal, &spec_n), ("ablated", &ablated, &spec_a)] {
        write_wav_f32(&a.out.join(format!("hb_{name}.wav")), &AudioSignal::new(hb.clone(), cfg.sample_rate)?)?;
        fs::write(a.out.join(format!("spec_{name}.csv")), spec.to_csv())?;
        fs::write(a.out.join(format!("spec_{name}.pgm")), spec.to_pgm(lo, hi))?;
    }
    let delta = snr_ablated - snr_normal;
    let report = format!(
        "mode,snr_hb_normal_db,snr_hb_ablated_db,delta_db,hb_energy_normal,hb_energy_ablated\n{},{snr_normal},{snr_ablated},{delta},{},{}\n",
        a.mode.name(),
        energy(&normal),
        energy(&ablated)
    );
    fs::write(a.out.join("snr_delta.csv"), &report)?;
    println!(
        "{}: HB SNR {snr_normal:.3} dB -> {snr_ablated:.3} dB (delta {delta:.3} dB)",
        a.mode.name()
    );
    Ok(())
}
