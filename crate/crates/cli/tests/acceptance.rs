//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failures are reported but do not fail the process unless
//! `MAPT_ACCEPTANCE_STRICT=1` is set. Outputs go to a temporary directory,
//! or to `MAPT_ACCEPTANCE_OUT` if set.

use std::path::Path;
use std::time::Instant;

use mapt_cli::experiments::{
    deterministic_replay, downstream_check, run_downstream, run_separation, separation_check, trpe_optimizes,
};
use mapt_core::verify::{self, Check};

const SEED: u64 = 0;
const SEEDS: [u64; 4] = [0, 1, 2, 3];
const OPEN_GRID_EPOCHS: usize = 500;
const SECRET_ROOM_EPOCHS: usize = 2000;
const FINETUNE_EPOCHS: usize = 100;

fn report(id: usize, started: Instant, result: Result<Check, String>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(c) => {
            let status = if c.passed { "PASS" } else { "FAIL" };
            println!("criterion {id:>2} {status}  {} ({secs:.1}s): {}", c.name, c.detail);
            c.passed
        }
        Err(e) => {
            println!("criterion {id:>2} FAIL  error after {secs:.1}s: {e}");
            false
        }
    }
}

fn run(out: &Path) -> usize {
    let mut passed = 0;
    let mut tally = |ok: bool| passed += usize::from(ok);
    let s = |r: mapt_core::Result<Check>| r.map_err(|e| e.to_string());
    let c = |r: mapt_cli::CliResult<Check>| r.map_err(|e| e.to_string());

    let t = Instant::now();
    let corpus = verify::random_corpus(120, SEED).expect("corpus");
    tally(report(1, t, s(verify::check_entropy_chain(&corpus))));
    let t = Instant::now();
    tally(report(2, t, s(verify::check_mixture_decomposition(&corpus))));
    let t = Instant::now();
    tally(report(3, t, s(verify::check_is_unbiasedness(SEED, 50, 10_000))));
    let t = Instant::now();
    tally(report(4, t, s(verify::check_surrogate_gradients(SEED, 100))));
    let t = Instant::now();
    tally(report(5, t, s(verify::check_concentration(SEED))));
    let t = Instant::now();
    let fixtures = verify::enumerable_fixtures(SEED, 60);
    tally(report(6, t, s(fixtures.and_then(|f| verify::check_single_trial_pessimism(&f)))));
    let t = Instant::now();
    tally(report(7, t, s(verify::check_pga_monotone(SEED, 200, 0.05))));

    let t = Instant::now();
    tally(report(8, t, c(trpe_optimizes(&out.join("c8"), SEEDS.to_vec(), OPEN_GRID_EPOCHS))));

    let t = Instant::now();
    let separation = run_separation(&out.join("c9"), SEEDS.to_vec(), SECRET_ROOM_EPOCHS);
    tally(report(
        9,
        t,
        separation
            .as_ref()
            .map(|s| separation_check(s, SECRET_ROOM_EPOCHS))
            .map_err(|e| e.to_string()),
    ));

    let t = Instant::now();
    let downstream = match &separation {
        Ok(s) => run_downstream(&out.join("c10"), &s.mixture_dir, SEEDS.to_vec(), FINETUNE_EPOCHS)
            .map(|d| downstream_check(&d, FINETUNE_EPOCHS))
            .map_err(|e| e.to_string()),
        Err(_) => Err("needs the mixture checkpoints of criterion 9".to_string()),
    };
    tally(report(10, t, downstream));

    let t = Instant::now();
    tally(report(11, t, c(deterministic_replay(&out.join("c11")))));
    passed
}

fn main() {
    let started = Instant::now();
    let tmp;
    let out = match std::env::var_os("MAPT_ACCEPTANCE_OUT") {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            tmp = tempfile::tempdir().expect("temporary directory");
            tmp.path().to_path_buf()
        }
    };
    let passed = run(&out);
    println!(
        "acceptance: {passed}/11 criteria passed in {:.0}s",
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("MAPT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < 11 {
        std::process::exit(1);
    }
}
