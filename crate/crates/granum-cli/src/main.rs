//! `granum` — synthesize, train, generate, stitch, segment and measure
//! granular voxel assemblies from one command line.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
//! Failures print one machine-parsable line:
//! `error: stage=<subcommand> code=<code> msg=<message>`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use granum::error::Error;
use granum::mesh::MeshFormat;
use granum::nn::TrainMode;
use granum::stitch::Axis;

#[derive(Parser)]
#[command(name = "granum", version, about = "Granular assembly synthesis toolkit")]
struct Cli {
    /// JSON run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named parameter bundle applied before the config file.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 forces a fully serial run.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Desk scale: 16x32x32 blocks, widths [8,16,32,32], T=1000, 50 steps.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unconditional,
    Inpainting,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    TriList,
    GridXml,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Z,
    Y,
    X,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated integers, e.g. 16,32,32".into());
    }
    let mut out = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| format!("bad integer {p:?}"))?;
    }
    Ok(out)
}

fn parse_bounds(s: &str) -> Result<[f64; 6], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 6 {
        return Err("expected x0,y0,z0,x1,y1,z1".into());
    }
    let mut out = [0.0; 6];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| format!("bad number {p:?}"))?;
    }
    Ok(out)
}

#[derive(Args)]
struct TrainArgs {
    /// Archive of training blocks.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-step loss trajectory CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic deposition scenes and store training blocks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        target_phi: Option<f64>,
        #[arg(long, value_parser = parse_triple)]
        scene_dims: Option<[usize; 3]>,
        #[arg(long, value_parser = parse_triple)]
        block_dims: Option<[usize; 3]>,
        #[arg(long)]
        clearance: Option<usize>,
        #[arg(long)]
        max_grains: Option<usize>,
    },
    /// Voxelize a triangle mesh file into an archive.
    Voxelize {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        pitch: Option<f64>,
        /// Physical bounds x0,y0,z0,x1,y1,z1 in meters (mesh bbox if omitted).
        #[arg(long, value_parser = parse_bounds)]
        bounds: Option<[f64; 6]>,
        /// Cut the voxelization into config block_dims blocks.
        #[arg(long, default_value_t = false)]
        split: bool,
    },
    /// Train a noise predictor on an archive of binary blocks.
    Train(TrainArgs),
    /// Generate blocks unconditionally from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, value_parser = parse_triple)]
        dims: Option<[usize; 3]>,
        /// Inference steps override.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Stitch archived blocks into one large sample via seam inpainting.
    Stitch {
        #[arg(long)]
        data: PathBuf,
        /// 3-channel inpainting checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// How many blocks to stitch (default: all in the archive).
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long)]
        context: Option<usize>,
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Expected block depth along the axis (validated against the data).
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Watershed-segment a stored grid into labeled grains and hull meshes.
    Segment {
        #[arg(long)]
        data: PathBuf,
        /// Entry id (first entry if omitted).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        use_valleys: bool,
        #[arg(long)]
        erosion: Option<usize>,
        #[arg(long)]
        smoothing: Option<usize>,
    },
    /// Packing/shape dashboard for a stored grid (plus optional labels).
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: Option<String>,
        /// Directory holding labels.bin/labels.json from `segment`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// synth -> train -> sample -> stitch -> segment -> stats with one seed.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        stitch_blocks: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::UnsupportedValueKind { .. } => 2,
        Error::NonFiniteLoss { .. } | Error::NoSurface => 4,
        _ => 3,
    }
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth { .. } => "synth",
        Command::Voxelize { .. } => "voxelize",
        Command::Train(_) => "train",
        Command::Sample { .. } => "sample",
        Command::Stitch { .. } => "stitch",
        Command::Segment { .. } => "segment",
        Command::Stats { .. } => "stats",
        Command::Pipeline { .. } => "pipeline",
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    // Defaults (== desk preset), then the config file, then global flags.
    let mut cfg = match cli.preset {
        Some(Preset::Desk) | None => RunConfig::default(),
    };
    if let Some(path) = &cli.config {
        cfg = RunConfig::load(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.scene.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    // Per-command overrides that live in the config.
    match &cli.command {
        Command::Synth {
            target_phi,
            scene_dims,
            block_dims,
            clearance,
            max_grains,
            ..
        } => {
            if let Some(p) = target_phi {
                cfg.scene.target_phi = *p;
            }
            if let Some(d) = scene_dims {
                cfg.scene.dims = *d;
            }
            if let Some(b) = block_dims {
                cfg.block_dims = *b;
            }
            if let Some(c) = clearance {
                cfg.scene.clearance = *c;
            }
            if let Some(m) = max_grains {
                cfg.scene.max_grains = Some(*m);
            }
        }
        Command::Voxelize { pitch, .. } => {
            if let Some(p) = pitch {
                cfg.scene.pitch = *p;
            }
        }
        Command::Train(args) => {
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = args.lr {
                cfg.train.learning_rate = lr;
            }
        }
        Command::Sample { steps, .. } => {
            if let Some(s) = steps {
                cfg.sampler.steps = *s;
            }
        }
        Command::Stitch {
            overlap,
            context,
            axis,
            ..
        } => {
            if let Some(o) = overlap {
                cfg.seam.overlap = *o;
            }
            if let Some(c) = context {
                cfg.seam.context = *c;
            }
            if let Some(a) = axis {
                cfg.seam.axis = match a {
                    AxisArg::Z => Axis::Z,
                    AxisArg::Y => Axis::Y,
                    AxisArg::X => Axis::X,
                };
            }
        }
        Command::Segment {
            use_valleys,
            erosion,
            smoothing,
            ..
        } => {
            if *use_valleys {
                cfg.segmentation.use_valleys = true;
            }
            if let Some(e) = erosion {
                cfg.segmentation.erosion_steps = *e;
            }
            if let Some(s) = smoothing {
                cfg.segmentation.smoothing_iters = *s;
            }
        }
        Command::Pipeline {
            scenes,
            samples,
            stitch_blocks,
            epochs,
            ..
        } => {
            if let Some(n) = scenes {
                cfg.pipeline.scene_count = *n;
            }
            if let Some(n) = samples {
                cfg.pipeline.sample_count = *n;
            }
            if let Some(n) = stitch_blocks {
                cfg.pipeline.stitch_blocks = *n;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Stats { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> granum::Result<()> {
    match &cli.command {
        Command::Synth { out, count, .. } => commands::run_synth(cfg, out, *count),
        Command::Voxelize {
            mesh,
            out,
            format,
            bounds,
            split,
            ..
        } => {
            let fmt = format.map(|f| match f {
                FormatArg::TriList => MeshFormat::TriList,
                FormatArg::GridXml => MeshFormat::GridXmlSubset,
            });
            commands::run_voxelize(cfg, mesh, fmt, out, *bounds, *split)
        }
        Command::Train(args) => {
            let mode = match args.mode {
                ModeArg::Unconditional => TrainMode::Unconditional,
                ModeArg::Inpainting => TrainMode::Inpainting,
            };
            commands::run_train(cfg, &args.data, mode, &args.out, args.loss_csv.as_deref())
        }
        Command::Sample {
            checkpoint,
            out,
            batch,
            dims,
            ..
        } => commands::run_sample(cfg, checkpoint, out, *batch, *dims),
        Command::Stitch {
            data,
            checkpoint,
            out,
            blocks,
            depth,
            ..
        } => commands::run_stitch(cfg, data, checkpoint, out, *blocks, *depth),
        Command::Segment { data, id, out, .. } => {
            commands::run_segment(cfg, data, id.as_deref(), out)
        }
        Command::Stats {
            data,
            id,
            labels,
            out,
        } => commands::run_stats(cfg, data, id.as_deref(), labels.as_deref(), out),
        Command::Pipeline { out, .. } => commands::run_pipeline(cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    let cfg = match resolve_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: stage={stage} code=2 msg={e}");
            return ExitCode::from(2);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
        {
            eprintln!("error: stage={stage} code=2 msg=thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code_for(&e);
            eprintln!("error: stage={stage} code={code} msg={e}");
            ExitCode::from(code)
        }
    }
}
