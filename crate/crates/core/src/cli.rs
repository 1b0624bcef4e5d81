//! Command-line front end. Each subcommand is also callable as a function
//! taking parsed arguments, so tests can drive it without a process.
//!
//! Configuration is layered: preset defaults, then `--config` file keys
//! (`model.*`, `train.*`), then explicit flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{run_ablation, table4_grid};
use crate::checks::{run_case, CASES, GRAD_TOL};
use crate::config::{check_sections, format_kv, read_kv, ModelConfig, TrainConfig};
use crate::data::{degrade_sequence, load_frames, save_frames, save_png, synth_sequence, DegradationKind, Pattern};
use crate::error::{io_err, Error, Result};
use crate::metrics::{per_frame_psnr_curve, temporal_profile, ChannelMode};
use crate::model::TcNet;
use crate::train::{TrainData, Trainer, RUN_FILE};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "TCVSR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "tcvsr", version, about = "Temporally consistent video super-resolution")]
pub struct Cli {
    /// key=value file with model.* and train.* keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic translating HR sequence
    Synth(SynthArgs),
    /// Produce LR frames from an HR directory
    Degrade(DegradeArgs),
    /// Train a model and write a resumable checkpoint
    Train(TrainArgs),
    /// Super-resolve an LR directory with a checkpoint
    Infer(InferArgs),
    /// Score SR frames against ground truth
    Eval(EvalArgs),
    /// Train and score the twelve-model ablation grid
    Ablate(AblateArgs),
    /// Finite-difference gradient checks in f64
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value = "checkerboard")]
    pub pattern: String,
    /// Per-frame motion `dx,dy` in pixels; repeat to cycle through several
    #[arg(long, default_value = "2,0", allow_hyphen_values = true)]
    pub motion: Vec<String>,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Square frame size; overridden by --height/--width
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "bi")]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// C=16, two blocks per stack, one-core training settings
    Toy,
    /// The full-size published configuration
    Paper,
}

/// Model flags shared by train and ablate.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub resblocks: Option<usize>,
    #[arg(long)]
    pub cmb: Option<usize>,
    #[arg(long)]
    pub tsb: Option<usize>,
    #[arg(long)]
    pub patch3d: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub fusion: Option<String>,
}

/// Optimisation flags shared by train and ablate.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub lr_main: Option<f64>,
    #[arg(long)]
    pub lr_flow: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub clip_len: Option<usize>,
    #[arg(long)]
    pub freeze_flow: Option<u64>,
    #[arg(long)]
    pub flow_pretrain: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// HR frame directories (repeatable)
    #[arg(long, required = true)]
    pub hr: Vec<PathBuf>,
    /// Matching LR directories; degraded on the fly with --kind when absent
    #[arg(long)]
    pub lr: Vec<PathBuf>,
    #[arg(long, default_value = "bi")]
    pub kind: String,
    /// Continue from a checkpoint directory
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// rgb or y
    #[arg(long, default_value = "y")]
    pub channel: String,
    /// Also write the temporal profile of this row
    #[arg(long)]
    pub profile_row: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    /// HR training directories (repeatable)
    #[arg(long, required = true)]
    pub hr: Vec<PathBuf>,
    /// Held-out HR directory scored after training
    #[arg(long)]
    pub eval_hr: PathBuf,
    #[arg(long, default_value = "bi")]
    pub kind: String,
    /// Comma-separated model numbers (default: all twelve)
    #[arg(long)]
    pub rows: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Run only this case
    #[arg(long)]
    pub case: Option<String>,
}

/// Cap the rayon pool from `TCVSR_THREADS`. Results do not depend on the
/// thread count; only speed does.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool already built (e.g. by an earlier call in the same process) is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Shared global options.
#[derive(Clone, Debug, Default)]
pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Global {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }

    fn file_kv(&self) -> Result<BTreeMap<String, String>> {
        match &self.config {
            Some(p) => {
                let kv = read_kv(p)?;
                check_sections(&kv, &["model.", "train."])?;
                Ok(kv)
            }
            None => Ok(BTreeMap::new()),
        }
    }
}

fn put<T: ToString>(kv: &mut BTreeMap<String, String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.insert(key.to_string(), v.to_string());
    }
}

impl ModelFlags {
    fn kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        put(&mut kv, "model.variant", &self.variant);
        put(&mut kv, "model.channels", &self.channels);
        put(&mut kv, "model.resblocks", &self.resblocks);
        put(&mut kv, "model.cmb_blocks", &self.cmb);
        put(&mut kv, "model.tsb_blocks", &self.tsb);
        put(&mut kv, "model.patch3d", &self.patch3d);
        put(&mut kv, "model.scale", &self.scale);
        put(&mut kv, "model.fusion.mode", &self.fusion);
        kv
    }
}

impl TrainFlags {
    fn kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        put(&mut kv, "train.total_iters", &self.iters);
        put(&mut kv, "train.lr_main", &self.lr_main);
        put(&mut kv, "train.lr_flow", &self.lr_flow);
        put(&mut kv, "train.batch", &self.batch);
        put(&mut kv, "train.patch_lr", &self.patch);
        put(&mut kv, "train.clip_len", &self.clip_len);
        put(&mut kv, "train.freeze_flow_iters", &self.freeze_flow);
        put(&mut kv, "train.flow_pretrain_iters", &self.flow_pretrain);
        kv
    }
}

/// Resolve model and training configs: preset, then file, then flags.
pub fn resolve_configs(global: &Global, model: &ModelFlags, train: &TrainFlags) -> Result<(ModelConfig, TrainConfig)> {
    let (mut m, mut t) = match model.preset.unwrap_or(Preset::Toy) {
        Preset::Toy => (ModelConfig::toy(), TrainConfig::toy()),
        Preset::Paper => (ModelConfig::default(), TrainConfig::default()),
    };
    let file = global.file_kv()?;
    m.apply(&file)?;
    t.apply(&file)?;
    m.apply(&model.kv())?;
    t.apply(&train.kv())?;
    if let Some(seed) = global.seed {
        t.seed = seed;
    }
    if t.freeze_flow_iters > t.total_iters {
        // a short run from flags should not trip over the default freeze
        t.freeze_flow_iters = t.total_iters / 4;
    }
    m.validate()?;
    t.validate()?;
    Ok((m, t))
}

fn parse_motion(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Usage(format!("--motion expects dx,dy, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn cmd_synth(global: &Global, args: &SynthArgs) -> Result<PathBuf> {
    if args.frames == 0 {
        return Err(Error::Usage("--frames must be at least 1".into()));
    }
    let pattern = Pattern::parse(&args.pattern).map_err(|e| Error::Usage(e.to_string()))?;
    let motion = args.motion.iter().map(|m| parse_motion(m)).collect::<Result<Vec<_>>>()?;
    let h = args.height.unwrap_or(args.size);
    let w = args.width.unwrap_or(args.size);
    let seq = synth_sequence(pattern, &motion, args.frames, h, w, global.seed.unwrap_or(0))?;
    let out = global.out_dir()?;
    save_frames(&seq, &out)?;
    Ok(out)
}

pub fn cmd_degrade(global: &Global, args: &DegradeArgs) -> Result<PathBuf> {
    let kind = DegradationKind::parse(&args.kind).map_err(|e| Error::Usage(e.to_string()))?;
    let hr = load_frames(&args.input)?;
    let lr = degrade_sequence(&hr, kind, args.scale)?;
    let out = global.out_dir()?;
    save_frames(&lr, &out)?;
    Ok(out)
}

fn load_train_data(hr: &[PathBuf], lr: &[PathBuf], kind: &str, scale: usize) -> Result<TrainData> {
    let hr = hr.iter().map(|d| load_frames(d)).collect::<Result<Vec<_>>>()?;
    if lr.is_empty() {
        let kind = DegradationKind::parse(kind).map_err(|e| Error::Usage(e.to_string()))?;
        TrainData::from_hr(hr, kind, scale)
    } else {
        if lr.len() != hr.len() {
            return Err(Error::Usage(format!("{} --hr vs {} --lr directories", hr.len(), lr.len())));
        }
        let lr = lr.iter().map(|d| load_frames(d)).collect::<Result<Vec<_>>>()?;
        TrainData::new(hr, lr, scale)
    }
}

pub fn cmd_train(global: &Global, args: &TrainArgs) -> Result<PathBuf> {
    let out = global.out_dir()?;
    let mut trainer = match &args.resume {
        Some(dir) => {
            // the checkpoint's own config wins, except for flags given now
            let mut overrides = global.file_kv()?;
            overrides.retain(|k, _| k.starts_with("train."));
            overrides.extend(args.train.kv());
            if let Some(seed) = global.seed {
                overrides.insert("train.seed".into(), seed.to_string());
            }
            Trainer::load(dir, &overrides)?
        }
        None => {
            let (m, t) = resolve_configs(global, &args.model, &args.train)?;
            Trainer::new(TcNet::new(&m, t.seed)?, t)?
        }
    };
    let data = load_train_data(&args.hr, &args.lr, &args.kind, trainer.model.config().scale)?;
    let every = trainer.config.log_every.max(1);
    trainer.run(&data, |r, pre| {
        if r.iter % every == 0 {
            let tag = if pre { "flow" } else { "main" };
            eprintln!("{tag} iter {:>6}  loss {:.6}", r.iter, r.loss);
        }
    })?;
    trainer.save(&out)?;
    let manifest = trainer.manifest(vec![out.clone()]);
    let path = out.join(RUN_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| io_err(&path, e))?;
    Ok(out)
}

pub fn cmd_infer(global: &Global, args: &InferArgs) -> Result<PathBuf> {
    let model = TcNet::load(&args.checkpoint)?;
    let lr = load_frames(&args.input)?;
    let sr = model.upscale(&lr)?;
    let out = global.out_dir()?;
    save_frames(&sr, &out)?;
    Ok(out)
}

/// Writes `metrics.csv` and, with `--profile-row`, `profile_sr.png` and
/// `profile_gt.png`. Returns the report.
pub fn cmd_eval(global: &Global, args: &EvalArgs) -> Result<crate::metrics::MetricReport> {
    let mode = ChannelMode::parse(&args.channel).map_err(|e| Error::Usage(e.to_string()))?;
    let sr = load_frames(&args.sr)?;
    let gt = load_frames(&args.gt)?;
    let report = per_frame_psnr_curve(&sr, &gt, mode)?;
    let out = global.out_dir()?;
    report.write_csv(&out.join("metrics.csv"))?;
    if let Some(row) = args.profile_row {
        save_png(&temporal_profile(&sr, row)?, &out.join("profile_sr.png"))?;
        save_png(&temporal_profile(&gt, row)?, &out.join("profile_gt.png"))?;
    }
    Ok(report)
}

pub fn cmd_ablate(global: &Global, args: &AblateArgs) -> Result<PathBuf> {
    let (m, t) = resolve_configs(global, &args.model, &args.train)?;
    let data = load_train_data(&args.hr, &[], &args.kind, m.scale)?;
    let eval_hr = load_frames(&args.eval_hr)?;
    let kind = DegradationKind::parse(&args.kind).map_err(|e| Error::Usage(e.to_string()))?;
    let eval_lr = degrade_sequence(&eval_hr, kind, m.scale)?;
    let mut grid = table4_grid();
    if let Some(rows) = &args.rows {
        let want: Vec<usize> = rows
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Usage(format!("bad --rows entry {s:?}"))))
            .collect::<Result<_>>()?;
        if let Some(bad) = want.iter().find(|&&r| r == 0 || r > grid.len()) {
            return Err(Error::Usage(format!("model {bad} is not in the 12-row grid")));
        }
        grid.retain(|s| want.contains(&s.model));
    }
    let report = run_ablation(&m, &t, &data, (&eval_lr, &eval_hr), &grid, |r| {
        eprintln!(
            "model {:>2} {:<7} params {:>8} psnr {:.3} loss {:.4} -> {:.4}",
            r.spec.model,
            r.spec.variant.as_str(),
            r.params,
            r.psnr_db,
            r.loss_initial,
            r.loss_final
        );
    })?;
    let out = global.out_dir()?;
    report.write_csv(&out.join("ablation.csv"))?;
    let order: Vec<String> = report.psnr_ordering().iter().map(|m| format!("M{m}")).collect();
    println!("psnr ordering (best first): {}", order.join(" > "));
    let mut kv = BTreeMap::new();
    m.to_kv(&mut kv);
    t.to_kv(&mut kv);
    let path = out.join(RUN_FILE);
    fs::write(&path, format_kv(&kv)).map_err(|e| io_err(&path, e))?;
    Ok(out)
}

/// Prints one line per case; returns whether all passed.
pub fn cmd_gradcheck(global: &Global, args: &GradcheckArgs) -> Result<bool> {
    let cases: Vec<&str> = match &args.case {
        Some(c) => vec![c.as_str()],
        None => CASES.to_vec(),
    };
    let seed = global.seed.unwrap_or(0);
    let mut ok = true;
    for c in cases {
        let r = run_case(c, seed)?;
        let pass = r.passed();
        ok &= pass;
        println!(
            "{:<18} max_rel_err {:.3e}  entries {:>5}  {:>6.2}s  {}",
            r.name,
            r.report.max_rel_error,
            r.report.entries,
            r.seconds,
            if pass { "ok" } else { "FAIL" }
        );
    }
    println!("tolerance {GRAD_TOL:e}: {}", if ok { "all passed" } else { "FAILED" });
    Ok(ok)
}

/// Parse `args` and run. Usage and configuration errors exit with 2,
/// runtime failures with 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    init_threads()?;
    let g = Global {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let say = |p: PathBuf| {
        println!("wrote {}", p.display());
        true
    };
    Ok(match &cli.command {
        Command::Synth(a) => say(cmd_synth(&g, a)?),
        Command::Degrade(a) => say(cmd_degrade(&g, a)?),
        Command::Train(a) => say(cmd_train(&g, a)?),
        Command::Infer(a) => say(cmd_infer(&g, a)?),
        Command::Eval(a) => {
            let r = cmd_eval(&g, a)?;
            println!(
                "{} frames  psnr {:.4} dB  ssim {:.4}  psnr std {:.4}",
                r.rows.len(),
                r.mean_psnr(),
                r.mean_ssim(),
                r.psnr_std()
            );
            true
        }
        Command::Ablate(a) => say(cmd_ablate(&g, a)?),
        Command::Gradcheck(a) => cmd_gradcheck(&g, a)?,
    })
}
