use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use occpretrain::config::RunConfig;
use occpretrain::dataset;
use occpretrain::io;
use occpretrain::labels::{DynamicMode, OccupancyGrid, SemanticGrid};
use occpretrain::train::{ablate, AblationGrid, Benchmark, Checkpoint, Pipeline};
use occpretrain::Error;

#[derive(Parser)]
#[command(
    name = "occpretrain",
    version,
    about = "Occupancy pre-training on synthetic multi-camera scenes"
)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a benchmark dataset.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write fused occupancy and semantic grids for every sample.
    GenLabels {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        frames: usize,
        #[arg(long, default_value = "keep_all")]
        mode: DynamicMode,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Occupancy pre-training.
    Pretrain {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long, value_name = "FILE")]
        curve: Option<PathBuf>,
    },
    /// Semantic fine-tuning from a checkpoint or from scratch.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Run an ablation grid over several seeds.
    Ablate {
        #[arg(long)]
        grid: AblationGrid,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Existing dataset; synthesized from the config when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print an occupancy or semantic grid file.
    DumpGrid {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = DumpFormat::AsciiSlices)]
        format: DumpFormat,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("start").required(true).args(["init", "scratch"])))]
struct FinetuneArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    #[arg(long)]
    scratch: bool,
    #[arg(long, value_name = "R")]
    label_fraction: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    AsciiSlices,
    CsvPoints,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Config layers on top of `base`: config file, `--set`, then the seed
/// variable.
fn layer(cli: &Cli, mut base: RunConfig) -> Outcome<RunConfig> {
    if let Some(path) = &cli.config {
        base.apply_text(&io::read_text(path)?)?;
    }
    for kv in &cli.set {
        base.apply_override(kv)
            .map_err(|e| Failure::Usage(format!("--set {kv}: {e}")))?;
    }
    base.apply_env().map_err(|e| Failure::Usage(e.to_string()))?;
    base.validate()?;
    Ok(base)
}

/// Data generation settings must agree with the dataset on disk.
fn check_dataset(cfg: &RunConfig, data: &RunConfig) -> Outcome<()> {
    if cfg.bench != data.bench || cfg.rig != data.rig || cfg.lidar != data.lidar {
        return Err(Error::Contract("scene, rig or lidar settings differ from the dataset's".into()).into());
    }
    Ok(())
}

fn load(cli: &Cli, dir: &Path) -> Outcome<(RunConfig, Benchmark)> {
    let (data_cfg, bench) = dataset::read_dataset(dir)?;
    let cfg = layer(cli, data_cfg.clone())?;
    check_dataset(&cfg, &data_cfg)?;
    Ok((cfg, bench))
}

fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", e + 1);
    }
    s
}

fn ensure_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::File {
            path: dir.into(),
            source: e,
        }
        .into()
    })
}

enum Grid {
    Occupancy(OccupancyGrid),
    Semantic(SemanticGrid),
}

fn read_grid(path: &Path) -> Outcome<Grid> {
    let bytes = io::read_file(path)?;
    Ok(match bytes.get(..4) {
        Some(b"UOSG") => Grid::Semantic(io::decode_semantic(&bytes)?),
        _ => Grid::Occupancy(io::decode_occupancy(&bytes)?),
    })
}

/// Class (or 1) of an occupied cell, `None` when free.
type CellFn<'a> = Box<dyn Fn(usize, usize, usize) -> Option<u8> + 'a>;

fn dump(grid: &Grid, format: DumpFormat) -> String {
    let (spec, cell): (_, CellFn<'_>) = match grid {
        Grid::Occupancy(g) => (g.spec, Box::new(|d, h, w| g.get(d, h, w).then_some(1))),
        Grid::Semantic(g) => (g.spec, Box::new(|d, h, w| Some(g.get(d, h, w)).filter(|&c| c != 0))),
    };
    let semantic = matches!(grid, Grid::Semantic(_));
    let [dd, hh, ww] = spec.dims;
    let mut s = String::new();
    match format {
        DumpFormat::AsciiSlices => {
            for d in 0..dd {
                let _ = writeln!(s, "d={d}");
                for h in 0..hh {
                    for w in 0..ww {
                        s.push(match cell(d, h, w) {
                            None => '.',
                            Some(c) if semantic => char::from(b'0' + c),
                            Some(_) => '#',
                        });
                    }
                    s.push('\n');
                }
            }
        }
        DumpFormat::CsvPoints => {
            s.push_str(if semantic { "d,h,w,class\n" } else { "d,h,w\n" });
            for d in 0..dd {
                for h in 0..hh {
                    for w in 0..ww {
                        match cell(d, h, w) {
                            Some(c) if semantic => {
                                let _ = writeln!(s, "{d},{h},{w},{c}");
                            }
                            Some(_) => {
                                let _ = writeln!(s, "{d},{h},{w}");
                            }
                            None => {}
                        }
                    }
                }
            }
        }
    }
    s
}

fn run(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Synth { out } => {
            let cfg = layer(cli, RunConfig::default())?;
            let bench = Benchmark::synthesize(&cfg)?;
            dataset::write_dataset(out, &cfg, &bench)?;
            println!("wrote {} sequences to {}", bench.len(), out.display());
        }
        Command::GenLabels {
            data,
            frames,
            mode,
            out,
        } => {
            if *frames == 0 || frames % 2 == 0 {
                return Err(Failure::Usage(format!("--frames {frames}: must be odd and positive")));
            }
            let (cfg, bench) = load(cli, data)?;
            let labels = bench.labels(&cfg.grid, *frames, *mode)?;
            ensure_dir(out)?;
            let mut total = 0;
            for (i, l) in labels.iter().enumerate() {
                io::write_atomic(
                    &out.join(format!("seq_{i:04}.uoog")),
                    &io::encode_occupancy(&l.occupancy),
                )?;
                io::write_atomic(&out.join(format!("seq_{i:04}.uosg")), &io::encode_semantic(&l.semantic))?;
                total += l.occupancy.occupied_count();
            }
            println!("wrote {} label pairs, {total} occupied cells", labels.len());
        }
        Command::Pretrain { data, out, curve } => {
            let (cfg, bench) = load(cli, data)?;
            let pipe = Pipeline::new(&bench, &cfg)?;
            let (ck, losses) = pipe.pretrain(&cfg)?;
            ck.save(out)?;
            if let Some(path) = curve {
                io::write_atomic(path, curve_csv(&losses).as_bytes())?;
            }
            println!(
                "pretrained {} epochs, final loss {}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Finetune(a) => {
            if let Some(r) = a.label_fraction {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Failure::Usage(format!("--label-fraction {r}: must lie in (0, 1]")));
                }
            }
            let (mut cfg, bench) = load(cli, &a.data)?;
            if let Some(r) = a.label_fraction {
                cfg.train.label_fraction = r;
            }
            let init = match &a.init {
                Some(path) => Some(Checkpoint::load(path)?.strip_decoder()?),
                None => None,
            };
            let pipe = Pipeline::new(&bench, &cfg)?;
            let (ck, report) = pipe.finetune(init.as_ref(), &cfg)?;
            ck.save(&a.out)?;
            io::write_atomic(&a.report, report.to_csv().as_bytes())?;
            println!("miou {}", report.miou_or_zero());
        }
        Command::Eval {
            checkpoint,
            data,
            report,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let (data_cfg, bench) = dataset::read_dataset(data)?;
            let cfg = layer(cli, ck.config()?)?;
            check_dataset(&cfg, &data_cfg)?;
            let pipe = Pipeline::new(&bench, &cfg)?;
            let r = pipe.evaluate(&ck, &cfg)?;
            io::write_atomic(report, r.to_csv().as_bytes())?;
            println!("binary iou {}, miou {}", r.binary_iou, r.miou_or_zero());
        }
        Command::Ablate { grid, seeds, data, out } => {
            let (cfg, bench) = match data {
                Some(dir) => load(cli, dir)?,
                None => {
                    let cfg = layer(cli, RunConfig::default())?;
                    let bench = Benchmark::synthesize(&cfg)?;
                    (cfg, bench)
                }
            };
            let pipe = Pipeline::new(&bench, &cfg)?;
            let rows = ablate(&pipe, *grid, &cfg, seeds)?;
            ensure_dir(out)?;
            let path = out.join(format!("ablation_{}.csv", grid.as_str()));
            io::write_atomic(&path, occpretrain::train::ablate::to_csv(&rows).as_bytes())?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        Command::DumpGrid { file, format } => {
            print!("{}", dump(&read_grid(file)?, *format));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match run(&cli) {
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
