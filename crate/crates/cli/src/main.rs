//! `srnkit` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use srnkit::config::RunConfig;
use srnkit::Execution;

#[derive(Parser, Debug)]
#[command(
    name = "srnkit",
    version,
    about = "Anchor, matching, inference and evaluation tools for two-step face detectors"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Worker threads for per-image work (1 runs sequentially).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-level anchor counts and scales.
    Anchors {
        /// Square input side; overrides the configured input size.
        #[arg(long)]
        input: Option<u32>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
    },
    /// Layer-by-layer output shapes of a stem variant.
    Shapes {
        /// resnet_original, root_resnet, new_resnet or all.
        #[arg(long, default_value = "all")]
        variant: String,
        #[arg(long, default_value_t = 1024)]
        input: u32,
    },
    /// Positive/negative/ignored anchor counts per image.
    MatchStats {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Step::Second)]
        step: Step,
    },
    /// Run the inference chain on score files or synthetic scores.
    Simulate {
        #[arg(long)]
        gt: PathBuf,
        /// Score file (single-image ground truth) or directory of per-image
        /// `.bin`/`.txt` score files. Synthetic scores when absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Output directory for detection files.
        #[arg(long)]
        out: PathBuf,
        /// Synthetic scores of exactly 1/0 with exact deltas.
        #[arg(long)]
        noiseless: bool,
        /// Allow more than the configured detections per image in the output.
        #[arg(long)]
        no_cap: bool,
    },
    /// Generate synthetic ground truth and aligned score files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        images: usize,
        /// Faces per image; overrides `scene.num_faces`.
        #[arg(long)]
        faces: Option<usize>,
        #[arg(long)]
        noiseless: bool,
        /// Write text score files instead of binary.
        #[arg(long)]
        text_scores: bool,
    },
    /// Augment one PPM image and its boxes.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Image key in the ground truth; optional when it holds one image.
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        out_image: PathBuf,
        /// Transformed boxes in ground-truth format.
        #[arg(long)]
        out_boxes: PathBuf,
        #[arg(long)]
        das_prob: Option<f64>,
        #[arg(long)]
        out_size: Option<u32>,
    },
    /// Greedy NMS over one detection file, or a multi-scale merge of several.
    Nms {
        /// Detection file; repeat once per test scale to merge.
        #[arg(long, required = true)]
        dets: Vec<PathBuf>,
        /// Scale factor of each `--dets` file, comma separated. Defaults to
        /// 1 for a single file and 0.5,1,1.5,2 for four files.
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        cap: Option<usize>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average precision per difficulty subset.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        /// Directory with easy.txt, medium.txt and hard.txt face lists.
        #[arg(long)]
        subset_lists: Option<PathBuf>,
        /// CSV of curve points.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iou: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Step {
    First,
    Second,
}

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(srnkit::Error),
}

impl From<srnkit::Error> for Failure {
    fn from(e: srnkit::Error) -> Self {
        Failure::Data(e)
    }
}

fn resolve_config(g: &GlobalArgs, cmd: Option<&Command>) -> Result<RunConfig, Failure> {
    let usage = |e: srnkit::Error| Failure::Usage(e.to_string());
    let mut cfg = RunConfig::default();
    if let Some(p) = &g.config {
        cfg.apply_file(p).map_err(usage)?;
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    match cmd {
        Some(Command::Anchors {
            input,
            width,
            height,
        }) => {
            if let Some(n) = input {
                cfg.pyramid.input_width = *n;
                cfg.pyramid.input_height = *n;
            }
            if let Some(w) = width {
                cfg.pyramid.input_width = *w;
            }
            if let Some(h) = height {
                cfg.pyramid.input_height = *h;
            }
        }
        Some(Command::Augment {
            das_prob, out_size, ..
        }) => {
            if let Some(p) = das_prob {
                cfg.augment.das_probability = *p;
            }
            if let Some(s) = out_size {
                cfg.augment.output_size = *s;
            }
        }
        Some(Command::Nms { iou, cap, .. }) => {
            if let Some(t) = iou {
                cfg.inference.nms_iou = *t;
            }
            if let Some(c) = cap {
                cfg.inference.max_detections = *c;
            }
        }
        Some(Command::Eval { iou: Some(t), .. }) => cfg.eval_iou = *t,
        Some(Command::Synth { faces: Some(n), .. }) => cfg.scene.num_faces = *n,
        _ => {}
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn locale_guard() -> Result<(), Failure> {
    if std::env::var("SRNKIT_LOCALE_GUARD").as_deref() != Ok("1") {
        return Ok(());
    }
    let sample = format!("{:.6} {}", 1234.5f64, 0.25f64);
    if sample != "1234.500000 0.25" {
        return Err(Failure::Data(srnkit::Error::Config(format!(
            "number formatting is locale dependent: got {sample:?}"
        ))));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    locale_guard()?;
    let cfg = resolve_config(&cli.global, cli.command.as_ref())?;
    if cli.global.print_config {
        print!("{}", cfg.to_config_string());
        return Ok(());
    }
    let Some(cmd) = cli.command else {
        return Err(Failure::Usage(
            "a subcommand is required (see --help)".into(),
        ));
    };
    let exec = match cli.global.jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    with_pool(cli.global.jobs, || commands::dispatch(cmd, &cfg, exec))
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 1 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T: Send>(_jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    f()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
