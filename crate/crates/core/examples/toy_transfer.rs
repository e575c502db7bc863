//! Trains the surrogates and a small generator end to end, then reports
//! protected and clean ASR per model.
//!
//! `cargo run --release --example toy_transfer -- <steps> [key=value ...]`

use std::time::Instant;

use advmakeup::config::RunConfig;
use advmakeup::evaluation::{evaluate_run, Protection};
use advmakeup::experiment::{test_data, train_fr_models, training_data};
use advmakeup::training::TrainState;

fn main() -> advmakeup::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut o = vec!["data.resolution=16".to_string()];
    o.extend(args.iter().skip(1).cloned());
    let cfg = RunConfig::default().with_overrides(&o)?;

    let t = Instant::now();
    let fr = train_fr_models(&cfg)?;
    println!("surrogates trained in {:.1}s", t.elapsed().as_secs_f64());

    let (sources, references) = test_data(&cfg);
    let mut state = TrainState::new(cfg.clone(), training_data(&cfg)?, fr)?;
    let t = Instant::now();
    let every = (steps / 10).max(1);
    for _ in 0..steps {
        let tr = state.step()?;
        if tr.step % every == 0 || tr.step == 1 {
            let r = tr.report.terms;
            println!(
                "step {:4} adv {:.3} make {:.3} gan {:.3} d {:.3} reg {:.3} idt {:.3} | h: gan {:.3} adv {:.3} make {:.3}",
                tr.step, r.g_adv, r.g_make, r.g_gan, r.d_gan, r.g_reg, r.idt, r.h_gan, r.h_adv, r.h_make
            );
        }
    }
    println!("{steps} steps in {:.1}s", t.elapsed().as_secs_f64());
    let ev = evaluate_run(
        &state.checkpoint,
        &Protection::Generator,
        &sources,
        &references,
        cfg.evaluation.far,
        None,
    )?;
    let r = &ev.report;
    for (id, m) in &r.models {
        println!(
            "{id} ({:?}): asr {:.1} clean {:.1} tau {:.3}",
            m.role, m.asr, m.asr_clean, m.tau
        );
    }
    println!(
        "fid {:.4} psnr {:.2} ssim {:.4}",
        r.fid, r.psnr_mean, r.ssim_mean
    );
    Ok(())
}
