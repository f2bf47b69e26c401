//! Single-kernel runs, multiprogrammed mixes and mix generation.

use std::collections::BTreeMap;

use mimdram_compiler::{compute_max_vf, CompileOptions, KernelIr};
use mimdram_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{bundled_app, parse_kernel_spec, KERNELS};
use crate::machine::{run_instance, App, InstanceOutcome, Mode, SimConfig};
use crate::report::{mix_metrics, MixMetrics, RunStats};

pub const LOW_VF_LIMIT: usize = 16 * 1024;
pub const HIGH_VF_LIMIT: usize = 64 * 1024;

pub fn run_single(app: &App, mode: Mode, cfg: &SimConfig) -> Result<RunStats> {
    let out = run_instance(std::slice::from_ref(app), cfg, mode)?;
    Ok(RunStats::from_outcome(&out.apps[0]))
}

/// The machine a mix runs on: MIMDRAM, or `x` independent coarse-grained
/// SIMDRAM subarrays with apps assigned round-robin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum System {
    Mimdram,
    Simdram(usize),
}

impl System {
    pub fn name(self) -> String {
        match self {
            System::Mimdram => "mimdram".into(),
            System::Simdram(x) => format!("simdram:{x}"),
        }
    }
}

impl std::str::FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "mimdram" => Ok(System::Mimdram),
            None if s == "simdram" => Ok(System::Simdram(1)),
            Some(("simdram", x)) => match x.parse() {
                Ok(x) if x > 0 => Ok(System::Simdram(x)),
                _ => Err(Error::Unsupported(format!("bad instance count in `{s}`"))),
            },
            _ => Err(Error::Unsupported(format!("unknown system `{s}`"))),
        }
    }
}

/// Runs the apps together and returns per-app stats in input order, plus
/// each instance's outcome.
pub fn run_shared(apps: &[App], system: System, cfg: &SimConfig) -> Result<(Vec<RunStats>, Vec<InstanceOutcome>)> {
    match system {
        System::Mimdram => run_spread(apps, Mode::Mimdram, 1, cfg),
        System::Simdram(x) => run_spread(apps, Mode::Simdram, x, cfg),
    }
}

/// Runs app `i` on computation subarray `i % x`; subarrays run independently.
pub fn run_spread(
    apps: &[App],
    mode: Mode,
    x: usize,
    cfg: &SimConfig,
) -> Result<(Vec<RunStats>, Vec<InstanceOutcome>)> {
    let x = x.max(1);
    let mut stats = vec![RunStats::default(); apps.len()];
    let mut outs = Vec::new();
    for inst in 0..x.min(apps.len().max(1)) {
        let idx: Vec<usize> = (inst..apps.len()).step_by(x).collect();
        let group: Vec<App> = idx.iter().map(|&i| apps[i].clone()).collect();
        let out = run_instance(&group, cfg, mode)?;
        for (k, &i) in idx.iter().enumerate() {
            stats[i] = RunStats::from_outcome(&out.apps[k]);
        }
        outs.push(out);
    }
    Ok((stats, outs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VfClass {
    LowVf,
    MediumVf,
    HighVf,
}

impl VfClass {
    pub const ALL: [VfClass; 3] = [VfClass::LowVf, VfClass::MediumVf, VfClass::HighVf];

    pub fn name(self) -> &'static str {
        match self {
            VfClass::LowVf => "low_vf",
            VfClass::MediumVf => "medium_vf",
            VfClass::HighVf => "high_vf",
        }
    }

    /// Class of a mix from each app's maximum vectorization factor.
    pub fn classify(max_vfs: &[usize]) -> VfClass {
        if max_vfs.iter().any(|&v| v >= HIGH_VF_LIMIT) {
            VfClass::HighVf
        } else if max_vfs.iter().any(|&v| v >= LOW_VF_LIMIT) {
            VfClass::MediumVf
        } else {
            VfClass::LowVf
        }
    }
}

/// One mix: bundled kernel specs (`name:vf[:bits]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub name: String,
    pub apps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixFile {
    pub class: VfClass,
    pub mixes: Vec<MixSpec>,
}

impl MixFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: MixFile = toml::from_str(text).map_err(|e| Error::Unsupported(format!("mix file: {e}")))?;
        for m in &f.mixes {
            let vfs = m.apps.iter().map(|a| parse_kernel_spec(a).map(|s| s.1)).collect::<Result<Vec<_>>>()?;
            if VfClass::classify(&vfs) != f.class {
                return Err(Error::Unsupported(format!("mix `{}` is not {}", m.name, f.class.name())));
            }
        }
        Ok(f)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mix file serializes")
    }
}

/// `count` seeded mixes of `apps` kernels each for one class.
pub fn generate_mixes(class: VfClass, count: usize, apps: usize, seed: u64) -> MixFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9));
    let low = [512, 1000, 2048, 4000, 8192];
    let medium = [16 * 1024, 32 * 1024];
    let mixes = (0..count)
        .map(|m| {
            let mut vfs: Vec<usize> = (0..apps).map(|_| *low.choose(&mut rng).unwrap()).collect();
            match class {
                VfClass::LowVf => {}
                VfClass::MediumVf => {
                    for v in vfs.iter_mut().take(rng.gen_range(1..=2)) {
                        *v = *medium.choose(&mut rng).unwrap();
                    }
                }
                VfClass::HighVf => vfs[0] = HIGH_VF_LIMIT,
            }
            vfs.shuffle(&mut rng);
            let apps = vfs.iter().map(|v| format!("{}:{v}:8", KERNELS.choose(&mut rng).unwrap())).collect();
            MixSpec { name: format!("{}_{m:02}", class.name()), apps }
        })
        .collect();
    MixFile { class, mixes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub alone: Vec<f64>,
    pub shared: BTreeMap<System, (Vec<RunStats>, MixMetrics)>,
}

/// Compiles a mix, measuring each app alone in mimdram mode (memoized in
/// `alone_cache` by spec) and then shared on every system.
pub fn run_mix(
    mix: &MixSpec,
    systems: &[System],
    cfg: &SimConfig,
    opts: &CompileOptions,
    alone_cache: &mut BTreeMap<String, f64>,
) -> Result<MixResult> {
    let apps: Vec<App> = mix
        .apps
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            bundled_app(spec, opts, i as u64).map(|(mut a, _)| {
                a.name = format!("{spec}#{i}");
                a
            })
        })
        .collect::<Result<_>>()?;
    let mut alone = Vec::with_capacity(apps.len());
    for (spec, app) in mix.apps.iter().zip(&apps) {
        let t = match alone_cache.get(spec) {
            Some(&t) => t,
            None => {
                let t = run_single(app, Mode::Mimdram, cfg)?.wall_time;
                alone_cache.insert(spec.clone(), t);
                t
            }
        };
        alone.push(t);
    }
    let mut shared = BTreeMap::new();
    for &s in systems {
        let (stats, _) = run_shared(&apps, s, cfg)?;
        let times: Vec<f64> = stats.iter().map(|s| s.wall_time).collect();
        shared.insert(s, (stats, mix_metrics(&alone, &times)));
    }
    Ok(MixResult { alone, shared })
}

pub fn kernel_max_vf(ir: &KernelIr) -> usize {
    ir.loops.iter().map(compute_max_vf).max().unwrap_or(0)
}
