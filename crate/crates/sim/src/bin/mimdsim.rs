use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimdram_compiler::CompileOptions;
use mimdram_core::config::KvConfig;
use mimdram_core::geometry::DramGeometry;
use mimdram_core::isa::{MatRange, Program};
use mimdram_core::Timing;
use mimdram_sim::kernels::{app_from_source, bundled_app, parse_kernel_spec, program_inputs};
use mimdram_sim::report::{AppReport, MixReport};
use mimdram_sim::workload::run_spread;
use mimdram_sim::{generate_mixes, run_mix, App, MixFile, Mode, Report, SimConfig, System, VfClass};

/// Multiprogrammed processing-using-DRAM simulator.
#[derive(Parser)]
#[command(name = "mimdsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs one or more programs together (`.bbop` assembly or kernel source).
    Run(RunArgs),
    /// Runs every mix in a mix file on each compared system.
    Mix(MixArgs),
    /// Writes seeded mix files, one per vectorization-factor class.
    GenMixes(GenArgs),
}

#[derive(Args)]
struct Machine {
    /// Microprogram engines per computation subarray.
    #[arg(long, default_value_t = 8)]
    engines: usize,
    /// Computation subarrays per bank available to the control unit.
    #[arg(long, default_value_t = 1)]
    subarrays: usize,
    /// Banks with a computation subarray.
    #[arg(long, default_value_t = 1)]
    banks: usize,
    /// `key = value` file with timing and geometry overrides.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Seed for generated input data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "mimdram")]
    mode: String,
    /// Report file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Command-level event trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Microprogram command listing per dispatched bbop.
    #[arg(long)]
    trace_uprog: Option<PathBuf>,
    /// Allocator pool transitions.
    #[arg(long)]
    alloc_trace: Option<PathBuf>,
    /// Hex dump of every mat after the run.
    #[arg(long)]
    dump_mats: Option<PathBuf>,
    /// Split kernel-source loops into this many pieces.
    #[arg(long, default_value_t = 1)]
    shards: usize,
    #[command(flatten)]
    machine: Machine,
}

#[derive(Args)]
struct MixArgs {
    file: PathBuf,
    #[arg(long, default_value = "simdram:1,mimdram", value_delimiter = ',')]
    compare: Vec<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    machine: Machine,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long, default_value = "mixes")]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    apps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

type Res<T> = std::result::Result<T, String>;

fn read(p: &Path) -> Res<String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn write(p: &Path, s: &str) -> Res<()> {
    std::fs::write(p, s).map_err(|e| format!("{}: {e}", p.display()))
}

fn sim_config(m: &Machine) -> Res<(SimConfig, usize)> {
    let mut cfg = SimConfig { engines: m.engines, ..Default::default() };
    if let Some(p) = &m.timings {
        let kv = KvConfig::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
        cfg.timing = Timing::from_config(&kv).map_err(|e| format!("{}: {e}", p.display()))?;
        cfg.geometry = DramGeometry::from_config(&kv).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok((cfg, (m.subarrays * m.banks).max(1)))
}

fn load_app(p: &Path, opts: &CompileOptions, seed: u64) -> Res<App> {
    // `name:vf[:bits]` names a bundled kernel when no such file exists
    if let Some(spec) = p.to_str().filter(|s| !p.exists() && parse_kernel_spec(s).is_ok()) {
        return bundled_app(spec, opts, seed).map(|(a, _)| a).map_err(|e| format!("{spec}: {e}"));
    }
    let text = read(p)?;
    let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("app").to_string();
    if p.extension().is_some_and(|e| e == "bbop") {
        let program = Program::parse(&text).map_err(|e| format!("{}: {e}", p.display()))?;
        let inputs = program_inputs(&program, seed);
        Ok(App { name, program, inputs })
    } else {
        app_from_source(&name, &text, opts, seed).map(|(a, _)| a).map_err(|e| format!("{}: {e}", p.display()))
    }
}

fn emit(report: &Report, path: &Path) -> Res<()> {
    let text = if path.extension().is_some_and(|e| e == "csv") { report.to_csv() } else { report.to_json() + "\n" };
    write(path, &text)
}

fn run(a: RunArgs) -> Res<()> {
    if a.inputs.is_empty() {
        return Err("no input programs".into());
    }
    let mode: Mode = a.mode.parse().map_err(|e| format!("{e}"))?;
    let (mut cfg, instances) = sim_config(&a.machine)?;
    cfg.trace = a.trace.is_some();
    cfg.trace_uprog = a.trace_uprog.is_some();
    cfg.alloc_trace = a.alloc_trace.is_some();
    let opts = CompileOptions {
        columns_per_mat: cfg.geometry.columns_per_mat,
        mats: cfg.geometry.total_mats(),
        shards: a.shards,
        strip_mine: true,
    };
    let apps = a
        .inputs
        .iter()
        .enumerate()
        .map(|(i, p)| load_app(p, &opts, a.machine.seed.wrapping_add(i as u64)))
        .collect::<Res<Vec<_>>>()?;
    let (stats, outs) = run_spread(&apps, mode, instances, &cfg).map_err(|e| e.to_string())?;
    let report =
        Report::new(apps.iter().zip(&stats).map(|(app, s)| AppReport::new(&app.name, mode.name(), s)).collect());
    let joined = |f: &dyn Fn(&mimdram_sim::InstanceOutcome) -> String| -> String {
        outs.iter()
            .enumerate()
            .map(|(i, o)| if outs.len() > 1 { format!("# subarray {i}\n{}", f(o)) } else { f(o) })
            .collect()
    };
    if let Some(p) = &a.trace {
        write(p, &joined(&|o| o.trace.clone()))?;
    }
    if let Some(p) = &a.trace_uprog {
        write(p, &joined(&|o| o.uprog_trace.clone()))?;
    }
    if let Some(p) = &a.alloc_trace {
        write(p, &joined(&|o| o.alloc_trace.clone()))?;
    }
    if let Some(p) = &a.dump_mats {
        let all = MatRange::new(0, cfg.geometry.total_mats() - 1).map_err(|e| e.to_string())?;
        write(p, &joined(&|o| o.dram.as_ref().map(|d| d.dump_hex(all)).unwrap_or_default()))?;
    }
    match &a.report {
        Some(p) => emit(&report, p),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn mix(a: MixArgs) -> Res<()> {
    let file = MixFile::parse(&read(&a.file)?).map_err(|e| format!("{}: {e}", a.file.display()))?;
    let systems = a.compare.iter().map(|s| s.parse::<System>().map_err(|e| e.to_string())).collect::<Res<Vec<_>>>()?;
    let (mut cfg, _) = sim_config(&a.machine)?;
    cfg.functional = false;
    let opts = CompileOptions {
        columns_per_mat: cfg.geometry.columns_per_mat,
        mats: cfg.geometry.total_mats(),
        ..Default::default()
    };
    let mut cache = BTreeMap::new();
    let mut report = Report::new(Vec::new());
    println!("mix,system,weighted_speedup,harmonic_speedup,max_slowdown");
    for m in &file.mixes {
        let r = run_mix(m, &systems, &cfg, &opts, &mut cache).map_err(|e| format!("{}: {e}", m.name))?;
        for (s, (stats, metrics)) in &r.shared {
            println!(
                "{},{},{},{},{}",
                m.name,
                s.name(),
                metrics.weighted_speedup,
                metrics.harmonic_speedup,
                metrics.max_slowdown
            );
            for (spec, st) in m.apps.iter().zip(stats) {
                report.runs.push(AppReport::new(&format!("{}/{spec}", m.name), &s.name(), st));
            }
            report.mixes.push(MixReport {
                mix: m.name.clone(),
                class: file.class.name().into(),
                system: s.name(),
                metrics: *metrics,
            });
        }
    }
    match &a.report {
        Some(p) => emit(&report, p),
        None => Ok(()),
    }
}

fn gen_mixes(a: GenArgs) -> Res<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    for c in VfClass::ALL {
        let f = generate_mixes(c, a.count, a.apps, a.seed);
        write(&a.out.join(format!("{}.toml", c.name())), &f.to_toml())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let r = match Cli::parse().cmd {
        Cmd::Run(a) => run(a),
        Cmd::Mix(a) => mix(a),
        Cmd::GenMixes(a) => gen_mixes(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mimdsim: {e}");
            ExitCode::FAILURE
        }
    }
}
