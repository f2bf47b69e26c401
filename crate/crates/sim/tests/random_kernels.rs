use mimdram_compiler::random::{random_kernel, KernelShape};
use mimdram_compiler::{interpret, CompileOptions};
use mimdram_sim::kernels::app_from_source;
use mimdram_sim::{run_instance, Mode, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn differential(seed: u64, opts: &CompileOptions, mode: Mode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = random_kernel(&mut rng, &KernelShape::default());
    let (app, ir) = app_from_source("rand", &src, opts, seed).unwrap_or_else(|e| panic!("{e}\n{src}"));
    let want = interpret(&ir, &app.inputs);
    let out =
        run_instance(std::slice::from_ref(&app), &SimConfig::default(), mode).unwrap_or_else(|e| panic!("{e}\n{src}"));
    let got = &out.apps[0];
    for (name, v) in &want.arrays {
        // arrays the kernel never touches are not placed in DRAM
        let got_v = got.arrays.get(name).or_else(|| app.inputs.get(name));
        assert_eq!(got_v, Some(v), "seed {seed} {mode:?} array {name}\n{src}");
    }
    for (name, v) in &want.scalars {
        assert_eq!(got.scalars.get(name), Some(v), "seed {seed} {mode:?} scalar {name}\n{src}");
    }
}

#[test]
fn random_kernels_match_interpreter() {
    for seed in 0..30 {
        differential(seed, &CompileOptions::default(), Mode::Mimdram);
    }
}

#[test]
fn random_kernels_match_in_simdram_mode() {
    for seed in 100..110 {
        differential(seed, &CompileOptions::default(), Mode::Simdram);
    }
}

#[test]
fn strip_mined_random_kernels_match_interpreter() {
    let opts = CompileOptions { mats: 2, shards: 2, ..Default::default() };
    for seed in 200..215 {
        differential(seed, &opts, Mode::Mimdram);
    }
}
