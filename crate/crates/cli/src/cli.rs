//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dcstream::conv::ConvMode;
use dcstream::encoder::{init_weights, BlockKind};
use dcstream::masking::ChunkSpec;
use dcstream::streaming::average_latency;
use dcstream::Precision;

use crate::config::{LeftMs, RunConfig};
use crate::data::{features_for, load_transcripts, weights_for, SyntheticSpec};
use crate::decode::{decode_utterances, DecodeMode};
use crate::sweep::{run_sweep, write_csv, SweepGrid, SweepInputs};
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY_FAILURE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dcstream", version, about = "Streaming Conformer encoder harness")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    #[arg(long, global = true)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, global = true)]
    pub chunk_ms: Option<f64>,
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
    /// Milliseconds or "all".
    #[arg(long, global = true)]
    pub left_ctx_ms: Option<LeftMs>,
    #[arg(long, global = true)]
    pub conv_mode: Option<ConvMode>,
    #[arg(long, global = true)]
    pub block_kind: Option<BlockKind>,
    #[arg(long, global = true)]
    pub beam_size: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded random weights as a DCWT file.
    GenWeights {
        /// Leave out the CTC projection head.
        #[arg(long)]
        no_head: bool,
    },
    /// Run property suites; exit 1 if any property fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Streaming divergence / latency sweep to CSV.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![320.0, 640.0, 1280.0, 2560.0])]
        chunks: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5])]
        overlaps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values = ["1280"])]
        left: Vec<LeftMs>,
        /// Average divergence over this many weight seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        weight_seeds: u64,
        #[arg(long)]
        synthetic: Option<SyntheticSpec>,
    },
    /// CTC-decode a feature file, one `<logprob>\t<tokens>` line per utterance.
    Decode {
        #[arg(long, value_enum, default_value = "streaming")]
        mode: DecodeMode,
        #[arg(long)]
        synthetic: Option<SyntheticSpec>,
    },
    /// Analytic average latency per `chunk_ms:overlap` spec.
    Latency {
        #[arg(long = "spec", value_parser = parse_latency_spec)]
        specs: Vec<(f64, f64)>,
    },
}

fn parse_latency_spec(s: &str) -> Result<(f64, f64), String> {
    let (c, r) = s
        .split_once(':')
        .ok_or_else(|| format!("expected chunk_ms:overlap, got '{s}'"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("'{x}' is not a number"));
    Ok((num(c)?, num(r)?))
}

impl GlobalArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        take!(seed, precision, chunk_ms, overlap, left_ctx_ms, conv_mode, block_kind, beam_size);
        take!(out, weights, features, transcripts);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn open_output(cfg: &RunConfig) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    let cfg = cli.global.resolve()?;
    if cli.global.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(EXIT_OK);
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::GenWeights { no_head } => {
            let Some(path) = &cfg.out else {
                bail!("gen-weights needs --out <path>");
            };
            let mut weights = init_weights(&cfg.encoder(), cfg.seed)?;
            if no_head {
                weights.remove("head.w");
                weights.remove("head.b");
            }
            let bytes = weights.to_bytes();
            std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} tensors, {} bytes to {}", weights.len(), bytes.len(), path.display());
            Ok(EXIT_OK)
        }
        Command::Verify { suite } => {
            let weights = weights_for(&cfg)?;
            let checks = run_suite(suite, &cfg.encoder(), &weights, cfg.precision, cfg.seed);
            let mut out = open_output(&cfg)?;
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {} failed", checks.len(), failed)?;
            out.flush()?;
            Ok(if failed == 0 { EXIT_OK } else { EXIT_PROPERTY_FAILURE })
        }
        Command::Sweep {
            chunks,
            overlaps,
            left,
            weight_seeds,
            synthetic,
        } => {
            let grid = SweepGrid {
                chunk_ms: chunks,
                overlaps,
                left_ctx_ms: left,
            }
            .specs(cfg.frame_ms)?;
            let weights = if cfg.weights.is_some() {
                vec![weights_for(&cfg)?]
            } else {
                (0..weight_seeds.max(1))
                    .map(|i| init_weights(&cfg.encoder(), cfg.seed + i))
                    .collect::<dcstream::Result<Vec<_>>>()?
            };
            let utterances = features_for(&cfg, synthetic)?;
            let transcripts = cfg.transcripts.as_deref().map(load_transcripts).transpose()?;
            let enc = cfg.encoder();
            let inputs = SweepInputs {
                config: &enc,
                weights: &weights,
                utterances: &utterances,
                transcripts: transcripts.as_ref(),
                beam_size: cfg.beam_size,
            };
            let rows = match cfg.precision {
                Precision::Single => run_sweep::<f32>(&inputs, &grid)?,
                Precision::Double => run_sweep::<f64>(&inputs, &grid)?,
            };
            write_csv(&rows, open_output(&cfg)?)?;
            Ok(EXIT_OK)
        }
        Command::Decode { mode, synthetic } => {
            let weights = weights_for(&cfg)?;
            let utterances = features_for(&cfg, synthetic)?;
            let spec = cfg.chunk_spec()?;
            let enc = cfg.encoder();
            let hyps = match cfg.precision {
                Precision::Single => decode_utterances::<f32>(&enc, &weights, &utterances, mode, spec, cfg.beam_size)?,
                Precision::Double => decode_utterances::<f64>(&enc, &weights, &utterances, mode, spec, cfg.beam_size)?,
            };
            let mut out = open_output(&cfg)?;
            for h in &hyps {
                writeln!(out, "{}", h.to_line())?;
            }
            out.flush()?;
            Ok(EXIT_OK)
        }
        Command::Latency { specs } => {
            let specs = if specs.is_empty() {
                [320.0, 640.0, 1280.0, 2560.0]
                    .iter()
                    .flat_map(|&c| [0.0, 0.5, 0.75].map(|r| (c, r)))
                    .collect()
            } else {
                specs
            };
            let mut out = open_output(&cfg)?;
            writeln!(out, "chunk_ms\toverlap\tstride_frames\tavg_latency_ms")?;
            for (c, r) in specs {
                let spec = ChunkSpec::from_ms(c, r, None, cfg.frame_ms)?;
                writeln!(out, "{c}\t{r}\t{}\t{}", spec.stride(), average_latency(&spec))?;
            }
            out.flush()?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args`, runs the command and maps errors to exit code 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
