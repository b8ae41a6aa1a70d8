use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use txspot::evalproto::{Correction, EvalConfig, Protocol};
use txspot::image::Image;
use txspot::model::Model;
use txspot::pipeline::{annotate, evaluate, spot, SpotConfig};
use txspot::selfcheck::{self, Component};
use txspot::synthdata::{generate_dataset, Dataset, SceneSpec};
use txspot::tensor::set_corrupt_backward;
use txspot::training::curriculum::{curve_csv, run_curriculum, StageData, TrainConfig};
use txspot::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "txspot", version, about = "Joint scene-text detection and recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    E2e,
    Spotting,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus with exact box and word ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training curriculum and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Start from these weights; optimizer moments restart at zero.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a directory of annotated images.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "e2e")]
        protocol: ProtocolArg,
        /// One word per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Snap transcriptions to the nearest lexicon word within this
        /// edit distance.
        #[arg(long)]
        lexicon_correct: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<usize>>,
        #[arg(long)]
        top_n: Option<usize>,
        /// Drop detections with textness below this (default 0.5).
        #[arg(long)]
        score_min: Option<f64>,
    },
    /// Detect and read the words in one image.
    Spot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<usize>>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        score_min: Option<f64>,
        #[arg(long)]
        dump_attention: bool,
        /// Write a copy of the image with word boxes drawn.
        #[arg(long)]
        annotate: Option<PathBuf>,
        /// Include per-stage wall-clock timing (makes output
        /// nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value = "all")]
        component: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("json: {e}")))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

fn read_lexicon(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn spot_config(scales: Option<Vec<usize>>, top_n: Option<usize>, score_min: Option<f64>) -> SpotConfig {
    let mut cfg = SpotConfig::default();
    if let Some(s) = score_min {
        cfg.score_min = s as txspot::tensor::Float;
    }
    if let Some(s) = scales {
        cfg.scales = s;
    }
    if let Some(n) = top_n {
        cfg.proposals.top_n = n;
    }
    cfg
}

fn train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    if let Some(r) = resume {
        checkpoint::load_weights(&mut model, r)?;
    }
    let data = StageData::load(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = run_curriculum(&mut model, &cfg, &data, &mut rng, |_| {})?;
    checkpoint::save(&model, out)?;
    let csv = cfg.loss_csv.clone().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".losses.csv");
        PathBuf::from(p)
    });
    fs::write(&csv, curve_csv(&rows)).map_err(|e| Error::io(&csv, e))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        checkpoint: &'a Path,
        losses: &'a Path,
        iterations: usize,
        final_loss: Option<f64>,
    }
    print_json(&Summary {
        checkpoint: out,
        losses: &csv,
        iterations: rows.len(),
        #[allow(clippy::unnecessary_cast)]
        final_loss: rows.last().map(|r| r.report.total as f64),
    })
}

fn gradcheck(component: &str, seed: u64, corrupt: bool) -> Result<bool> {
    let components = Component::parse_list(component)?;
    set_corrupt_backward(corrupt);
    let mut reports = Vec::new();
    for c in components {
        let r = selfcheck::check(c, seed, selfcheck::default_options())?;
        for t in &r.tensors {
            log::info!("{:<8} {:<24} max rel error {:.3e} ({} checked)", c.name(), t.name, t.max_rel_error, t.checked);
        }
        reports.push(r);
    }
    let passed = reports.iter().all(|r| r.passed);
    #[derive(Serialize)]
    struct Out {
        passed: bool,
        components: Vec<selfcheck::ComponentReport>,
    }
    print_json(&Out { passed, components: reports })?;
    Ok(passed)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { spec, count, seed, out } => {
            let spec = SceneSpec::load(&spec)?;
            let manifest = generate_dataset(&spec, count, seed, &out)?;
            print_json(&manifest)?;
        }
        Command::Train { config, out, resume } => train(&config, &out, resume.as_deref())?,
        Command::Eval { ckpt, data, protocol, lexicon, lexicon_correct, scales, top_n, score_min } => {
            let model = checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let cfg = EvalConfig {
                protocol: match protocol {
                    ProtocolArg::E2e => Protocol::EndToEnd,
                    ProtocolArg::Spotting => Protocol::WordSpotting,
                },
                lexicon: lexicon.as_deref().map(read_lexicon).transpose()?,
                correction: lexicon_correct.map_or(Correction::Off, Correction::Nearest),
                ..EvalConfig::default()
            };
            print_json(&evaluate(&model, &ds, &spot_config(scales, top_n, score_min), &cfg)?)?;
        }
        Command::Spot { ckpt, image, scales, top_n, score_min, dump_attention, annotate: out, timing } => {
            let model = checkpoint::load(&ckpt)?;
            let img = Image::read_ppm(&image)?;
            let cfg = SpotConfig { dump_attention, ..spot_config(scales, top_n, score_min) };
            let result = spot(&model, &img, &cfg)?;
            if let Some(path) = out {
                annotate(&img, &result.words, [255, 0, 0]).write_ppm(&path)?;
            }
            if timing {
                print_json(&result)?;
            } else {
                #[derive(Serialize)]
                struct Words<'a> {
                    width: usize,
                    height: usize,
                    words: &'a [txspot::pipeline::SpotWord],
                }
                print_json(&Words { width: result.width, height: result.height, words: &result.words })?;
            }
        }
        Command::Gradcheck { component, seed, corrupt_backward } => return gradcheck(&component, seed, corrupt_backward),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("TXSPOT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
