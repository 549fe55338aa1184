//! `aeanet` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aeanet::imaging::{load_image, save_image, synth_generate, tile_and_stitch, Dataset, Image, ImagePair, PadMode, SynthConfig};
use aeanet::model::{relevance_heatmap, Checkpoint, Model, Variant};
use aeanet::properties::{run_suite, CheckOp, Expect, SuiteConfig};
use aeanet::trainer::{
    curve_csv, default_ablation_rows, evaluate, format_ablation_table, run_ablation, run_patch_sweep, train,
    train_per_pair, CurvePoint, Strategy, TrainConfig, TrainState,
};
use aeanet::{attention::NormMode, Error};

const CHECKPOINT_FILE: &str = "checkpoint.aean";

#[derive(Parser)]
#[command(name = "aeanet", version, about = "Augmented equivariant attention networks for image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset.
    GenData(GenDataArgs),
    /// Train a model (or one model per pair with --strategy self).
    Train(TrainArgs),
    /// Super-resolve images with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset's held-out images.
    Eval(EvalArgs),
    /// Run a randomized permutation property suite on an attention operator.
    Check(CheckArgs),
    /// Train every ablation variant with the same settings and compare.
    Ablate(AblateArgs),
    /// Evaluate one checkpoint at several inference patch sizes.
    Sweep(SweepArgs),
    /// Export relevance heatmaps for shared references.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

/// Training settings shared by `train` and `ablate`; flags override the file.
#[derive(Args)]
struct TrainSettings {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// aea, sr_only, ba_only, self_only, learned_query or none.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    refs: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
}

impl TrainSettings {
    fn resolve(&self) -> aeanet::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if let Some(v) = self.refs {
            cfg.model.refs = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.base_channels {
            cfg.model.base_channels = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint up to the configured step count.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainSettings,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// An image file, or a directory of .png/.pgm images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 96)]
    patch_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 96)]
    patch_size: usize,
    /// Also write metrics.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    op: CheckOp,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Defaults to the operator's known property.
    #[arg(long)]
    expect: Option<Expect>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = NormMode::Division)]
    norm: NormMode,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Also write ablation.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainSettings,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated patch sizes, each a multiple of 4.
    #[arg(long, value_delimiter = ',', default_value = "16,32,48,64,96")]
    sizes: Vec<usize>,
    /// Single size; appended to --sizes.
    #[arg(long)]
    patch_size: Option<usize>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Image files; each becomes one montage row.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reference indices (abstract pixels) to visualize.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    refs: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Dimension(_) | Error::Numeric(_) | Error::Degenerate(_) => 1,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("AEANET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("AEANET_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// `Ok(false)` means a validation failure (exit 1).
fn run(command: Command) -> aeanet::Result<bool> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Check(a) => check(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => sweep(a),
        Command::Heatmap(a) => heatmap(a),
    }
}

fn write_text(path: &Path, text: &str) -> aeanet::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn load_dataset(dir: &Path) -> aeanet::Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Usage(format!("dataset directory {} does not exist", dir.display())));
    }
    Dataset::load(dir)
}

fn load_model(path: &Path) -> aeanet::Result<Model<f32>> {
    Model::read_from(&Checkpoint::load(path)?)
}

fn gen_data(a: GenDataArgs) -> aeanet::Result<bool> {
    let pairs = synth_generate(&SynthConfig {
        count: a.count,
        seed: a.seed,
        size: a.size,
        noise_sigma: a.noise,
        ..Default::default()
    })?;
    let ds = Dataset::with_holdout(pairs);
    ds.save(&a.out)?;
    let (tr, te) = ds.train_test()?;
    println!("wrote {} pairs ({} train, {} test) to {}", ds.len(), tr.len(), te.len(), a.out.display());
    Ok(true)
}

fn print_point(prefix: &str, p: &CurvePoint) {
    if let Some(v) = p.val_delta_psnr {
        println!("{prefix}step {:>6}  loss {:.6}  val ΔPSNR {v:+.4} dB", p.step, p.loss);
    }
}

fn train_cmd(a: TrainArgs) -> aeanet::Result<bool> {
    let cfg = a.settings.resolve()?;
    let ds = load_dataset(&a.data)?;
    write_text(&a.out.join("train_config.txt"), &cfg.to_kv().render())?;
    match cfg.strategy {
        Strategy::Pooled => {
            let (tr, te) = ds.train_test()?;
            let resume = a
                .ckpt
                .as_ref()
                .map(|p| TrainState::from_checkpoint(&Checkpoint::load(p)?))
                .transpose()?;
            println!("training on {} images, validating on {}", tr.len(), te.len().min(cfg.val_images));
            let run = train(&tr, &te, &cfg, resume, |p| print_point("", p))?;
            run.state.to_checkpoint().save(a.out.join(CHECKPOINT_FILE))?;
            write_text(&a.out.join("loss.csv"), &curve_csv(&run.curve))?;
            println!("saved {}", a.out.join(CHECKPOINT_FILE).display());
            if let Some(msg) = run.diverged {
                eprintln!("training diverged at {msg}; saved the last good state");
                return Ok(false);
            }
        }
        Strategy::SelfTrain => {
            if a.ckpt.is_some() {
                return Err(Error::Usage("--ckpt resume is only supported for pooled training".into()));
            }
            let pairs: Vec<ImagePair> = ds.entries.into_iter().map(|(p, _)| p).collect();
            let runs = train_per_pair(&pairs, &cfg, |id, p| print_point(&format!("[{id}] "), p))?;
            let mut ok = true;
            for (id, run, test) in &runs {
                let dir = a.out.join(id);
                run.state.to_checkpoint().save(dir.join(CHECKPOINT_FILE))?;
                write_text(&dir.join("loss.csv"), &curve_csv(&run.curve))?;
                let agg = evaluate(&run.state.model, test, cfg.crop, PadMode::Reflect)?.aggregate();
                if let Some(agg) = agg {
                    println!("[{id}] held-out ΔPSNR {:+.4} dB  ΔSSIM {:+.5}", agg.delta_psnr, agg.delta_ssim);
                }
                if let Some(msg) = &run.diverged {
                    eprintln!("[{id}] training diverged at {msg}");
                    ok = false;
                }
            }
            println!("saved {} checkpoints under {}", runs.len(), a.out.display());
            return Ok(ok);
        }
    }
    Ok(true)
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "pgm"))
}

fn predict(a: PredictArgs) -> aeanet::Result<bool> {
    let model = load_model(&a.ckpt)?;
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .map_err(|e| Error::Io {
                path: a.input.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_image(p))
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::Usage(format!("no .png/.pgm images in {}", a.input.display())));
    }
    for path in inputs {
        let img = load_image(&path)?;
        let pred = tile_and_stitch(&img, |t| model.predict_image(t), a.patch_size, PadMode::Reflect)?;
        let name = path.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
        let dest = a.out.join(format!("{name}.png"));
        save_image(&pred, &dest)?;
        println!("{} -> {}", path.display(), dest.display());
    }
    Ok(true)
}

fn eval(a: EvalArgs) -> aeanet::Result<bool> {
    let model = load_model(&a.ckpt)?;
    let (_, test) = load_dataset(&a.data)?.train_test()?;
    if test.is_empty() {
        return Err(Error::Usage("dataset has no held-out images".into()));
    }
    let report = evaluate(&model, &test, a.patch_size, PadMode::Reflect)?;
    print!("{}", report.to_table());
    if let Some(out) = a.out {
        write_text(&out.join("metrics.csv"), &report.to_csv())?;
    }
    Ok(true)
}

fn check(a: CheckArgs) -> aeanet::Result<bool> {
    let expect = a.expect.unwrap_or(a.op.natural_expectation());
    let report = run_suite(
        a.op,
        expect,
        &SuiteConfig {
            trials: a.trials,
            seed: a.seed,
            tol: a.tol,
            norm: a.norm,
            ..Default::default()
        },
    )?;
    println!("{report}");
    Ok(report.passed)
}

fn ablate(a: AblateArgs) -> aeanet::Result<bool> {
    let cfg = a.settings.resolve()?;
    let (tr, te) = load_dataset(&a.data)?.train_test()?;
    let results = run_ablation(&tr, &te, &cfg, &default_ablation_rows(), |r| {
        println!("{}: ΔPSNR {:+.4} dB  ΔSSIM {:+.5}", r.label, r.delta_psnr, r.delta_ssim)
    })?;
    let table = format_ablation_table(&results);
    print!("\n{table}");
    if let Some(out) = a.out {
        write_text(&out.join("ablation.txt"), &table)?;
    }
    Ok(results.iter().all(|r| r.diverged.is_none()))
}

fn sweep(a: SweepArgs) -> aeanet::Result<bool> {
    let model = load_model(&a.ckpt)?;
    let (_, test) = load_dataset(&a.data)?.train_test()?;
    let mut sizes = a.sizes;
    sizes.extend(a.patch_size);
    let result = run_patch_sweep(&model, &test, &sizes)?;
    print!("{}", result.to_table());
    Ok(true)
}

/// Lays out `rows` of equally sized images left to right, top to bottom,
/// with a white 2-pixel gutter.
fn montage(rows: &[Vec<Image>]) -> aeanet::Result<Image> {
    const GAP: usize = 2;
    let (h, w) = (rows[0][0].shape()[0], rows[0][0].shape()[1]);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (mh, mw) = (rows.len() * (h + GAP) - GAP, cols * (w + GAP) - GAP);
    let mut data = vec![1.0; mh * mw];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.shape() != [h, w] {
                return Err(Error::Usage("heatmap inputs must share one size".into()));
            }
            for y in 0..h {
                let dst = (r * (h + GAP) + y) * mw + c * (w + GAP);
                data[dst..dst + w].copy_from_slice(&img.data()[y * w..(y + 1) * w]);
            }
        }
    }
    Image::new(&[mh, mw], data)
}

fn heatmap(a: HeatmapArgs) -> aeanet::Result<bool> {
    let model = load_model(&a.ckpt)?;
    let mut rows = Vec::new();
    for path in &a.input {
        let img = load_image(path)?;
        let maps = relevance_heatmap(&img, &model, &a.refs)?;
        let stem = path.file_stem().map_or("img".into(), |s| s.to_string_lossy().into_owned());
        for (map, j) in maps.iter().zip(&a.refs) {
            save_image(map, a.out.join(format!("{stem}_ref{j}.png")))?;
        }
        let mut row = vec![img];
        row.extend(maps);
        rows.push(row);
    }
    let dest = a.out.join("montage.png");
    save_image(&montage(&rows)?, &dest)?;
    println!("wrote {} heatmaps and {}", rows.len() * a.refs.len(), dest.display());
    Ok(true)
}
