use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use voxelforge::netshape::{builtin_tables, parse_tables, verify_table};
use voxelforge::pipeline::dataset::{DatasetIndex, DatasetReport, RIRE_COUNTS};
use voxelforge::pipeline::{self, Manifest, PipelineError, RunOptions, Stage};
use voxelforge::synth::write_demo_dataset;
use voxelforge::Shape;

#[derive(Parser)]
#[command(name = "voxelforge", version, about = "MRI/CT volume preprocessing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Subjects processed in parallel (0 = one per core).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the manifest's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Recompute even when outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, or only the one given by --stage.
    Run {
        #[command(flatten)]
        args: PipelineArgs,
        /// Run only this stage; earlier outputs must already exist
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// MetaImage/NIfTI sources to NIfTI working copies.
    Convert(PipelineArgs),
    /// Rigid MI registration of MRI onto the CT grid.
    Register(PipelineArgs),
    /// CT table/background removal and slice trimming.
    Clean(PipelineArgs),
    /// Normalization, pad/crop and sample planning.
    Patch(PipelineArgs),
    /// Write training record files.
    Export(PipelineArgs),
    /// Compare predictions listed in the manifest with the prepared CT.
    Evaluate(PipelineArgs),
    /// Check the architecture shape tables layer by layer.
    VerifyShapes {
        /// JSON table description (defaults to the bundled tables).
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare modality counts of a dataset index with the published ones.
    DatasetVerify {
        /// Dataset index JSON (defaults to the bundled RIRE index).
        #[arg(long, conflicts_with = "manifest")]
        index: Option<PathBuf>,
        /// Take the index path from a manifest's `dataset_index`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write synthetic subjects and a manifest for trying the pipeline.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        /// Volume extent as DEPTHxHEIGHTxWIDTH.
        #[arg(long, default_value = "40x64x64", value_parser = parse_shape)]
        shape: Shape,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [d, h, w] if d > 0 && h > 0 && w > 0 => Ok(Shape::new(d, h, w)),
        _ => Err("expected three positive extents, e.g. 40x64x64".into()),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            let text = s.to_string();
            if !message.contains(&text) {
                message = format!("{message}: {text}");
            }
            source = s.source();
        }
        Failure {
            code: e.exit_code() as u8,
            message,
        }
    }
}

fn run_pipeline(args: PipelineArgs, stage: Option<Stage>) -> Result<(), Failure> {
    let mut manifest = Manifest::load(&args.manifest)?;
    if let Some(out) = args.output {
        manifest.output_dir = out;
    }
    let opts = RunOptions {
        jobs: args.jobs,
        stage,
        force: args.force,
    };
    let summary = pipeline::run(&manifest, &opts)?;
    for o in &summary.outcomes {
        let who = o.subject.as_deref().unwrap_or("all");
        println!(
            "{who:<12} {:<9} {}",
            o.stage.name(),
            if o.ran { "done" } else { "up to date" }
        );
    }
    info!("{} stage runs, {} up to date", summary.ran(), summary.skipped());
    Ok(())
}

fn verify_shapes(tables: Option<PathBuf>, json: bool) -> Result<(), Failure> {
    let tables = match tables {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Failure::io(&p, e))?;
            parse_tables(&text).map_err(|e| Failure::validation(e.to_string()))?
        }
        None => builtin_tables(),
    };
    let reports: Vec<_> = tables.iter().map(verify_table).collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
    } else {
        for r in &reports {
            let flagged = r.flagged().count();
            println!("{r}");
            println!(
                "  {}\n",
                if flagged == 0 {
                    "consistent".to_string()
                } else {
                    format!("{flagged} flagged row(s)")
                }
            );
        }
    }
    Ok(())
}

fn dataset_verify(index: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<(), Failure> {
    let path = match (index, manifest) {
        (Some(p), _) => Some(p),
        (None, Some(m)) => Some(
            Manifest::load(&m)?
                .dataset_index
                .ok_or_else(|| Failure::validation(format!("{} has no dataset_index", m.display())))?,
        ),
        (None, None) => None,
    };
    let idx = match &path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            serde_json::from_str::<DatasetIndex>(&text).map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?
        }
        None => DatasetIndex::bundled(),
    };
    idx.validate().map_err(Failure::validation)?;
    let report = DatasetReport::new(&idx, RIRE_COUNTS);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::validation("modality counts differ from the published table"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VOXELFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { args, stage } => run_pipeline(args, stage),
        Command::Convert(a) => run_pipeline(a, Some(Stage::Convert)),
        Command::Register(a) => run_pipeline(a, Some(Stage::Register)),
        Command::Clean(a) => run_pipeline(a, Some(Stage::Clean)),
        Command::Patch(a) => run_pipeline(a, Some(Stage::Patch)),
        Command::Export(a) => run_pipeline(a, Some(Stage::Export)),
        Command::Evaluate(a) => run_pipeline(a, Some(Stage::Evaluate)),
        Command::VerifyShapes { tables, json } => verify_shapes(tables, json),
        Command::DatasetVerify { index, manifest } => dataset_verify(index, manifest),
        Command::Synth {
            output,
            subjects,
            shape,
            seed,
        } => write_demo_dataset(&output, subjects, shape, seed)
            .map(|_| println!("wrote {subjects} subjects and {}", output.join("manifest.json").display()))
            .map_err(|e| Failure::io(&output, e)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
