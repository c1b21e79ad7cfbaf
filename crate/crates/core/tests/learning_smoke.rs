//! Manual learning/-timing probe (ignored by default; run with
//! `cargo test --release --test learning_smoke -- --ignored --nocapture`).

use ptbc_core::motion::{gen, MotionLibrary};
use ptbc_core::trainer::{train_base, PpoConfig, TrainerCfg};

#[test]
#[ignore]
fn base_training_learns_source_preset() {
    let model = ptbc_core::model::PtbModel::default();
    let clips = gen::preset("source", 1, &model).unwrap();
    let lib = MotionLibrary::new(clips, 100).unwrap();
    let cfg = TrainerCfg {
        ppo: PpoConfig {
            iterations: 500,
            eval_every: 20,
            eval_episodes: 6,
            target_succ: 90.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = train_base(&lib, &cfg, 7).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("== {} iterations in {:.1} s ({:.2} s/iter)", out.logs.len(), dt, dt / out.logs.len() as f64);
    for log in &out.logs {
        if log.iteration % 5 == 0 || log.eval_succ.is_some() {
            println!(
                "iter {:4} reward {:7.3} ep_len {:6.1} eps {:3} succ_rollout {:5.2} kl {:.4} lr {:.1e} eval_succ {:?}",
                log.iteration,
                log.mean_reward,
                log.mean_ep_len,
                log.episodes,
                if log.episodes > 0 { log.successes as f64 / log.episodes as f64 } else { 0.0 },
                log.measured_kl,
                log.lr,
                log.eval_succ
            );
        }
    }
    assert!(!out.aborted);
}
