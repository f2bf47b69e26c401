use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mimdram_compiler::{compile, CompileOptions};

/// Compiles a kernel to bbop assembly with allocation directives.
#[derive(Parser)]
#[command(name = "mimdc", version)]
struct Args {
    /// Kernel source file.
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Split every loop into this many concurrently schedulable pieces.
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Mats in the computation subarray.
    #[arg(long, default_value_t = 128)]
    mats: usize,
    /// Columns (lanes) per mat.
    #[arg(long, default_value_t = 512)]
    columns: usize,
    /// Reject loops wider than the module instead of strip-mining them.
    #[arg(long)]
    no_strip: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mimdc: {}: {e}", args.input.display());
            return ExitCode::FAILURE;
        }
    };
    let opts = CompileOptions {
        columns_per_mat: args.columns,
        mats: args.mats,
        shards: args.shards,
        strip_mine: !args.no_strip,
    };
    let out = match compile(&text, &opts) {
        Ok(c) => c.assembly(),
        Err(e) => {
            eprintln!("mimdc: {}: {e}", args.input.display());
            return ExitCode::FAILURE;
        }
    };
    match args.output {
        Some(p) => match std::fs::write(&p, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("mimdc: {}: {e}", p.display());
                ExitCode::FAILURE
            }
        },
        None => {
            print!("{out}");
            ExitCode::SUCCESS
        }
    }
}
