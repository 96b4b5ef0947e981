use evdeblur::imaging::demo_moving_square;
use evdeblur::ivf::*;
use evdeblur::training::*;
use std::time::Instant;

fn main() {
    let steps: usize = std::env::var("STEPS").unwrap_or("100".into()).parse().unwrap();
    let lr: f64 = std::env::var("LR").unwrap_or("1e-3".into()).parse().unwrap();
    let sample = SampleSpec {
        scene: demo_moving_square(0.1, 1e-3),
        width: 32, height: 32, frames: 31,
        threshold_c: 0.1, log_eps: 1e-3,
        noise_level: 0.0, noise_seed: 0,
        referenced_count: 7,
    }.build().unwrap();
    println!("events: {}", sample.events.len());
    let mut params = IvfParams::<f32>::init(IvfConfig::default(), 12, 7).unwrap();
    println!("params: {}", params.store.numel());
    let cfg = TrainConfig {
        epochs_phase1: steps,
        lambda_switch_epoch: steps * 3 / 4,
        lr_initial: lr,
        lr_final: lr,
        lr_decay_start_epoch: steps,
        lr_decay_end_epoch: steps,
        hflip_augmentation: false,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train_phase1(&[sample], &mut params, &cfg).unwrap();
    let dt = t0.elapsed();
    for (i, r) in log.iter().enumerate() {
        if i % (steps / 10).max(1) == 0 || i == log.len() - 1 {
            println!("step {:4} l1 {:.6} motion {:.6}", r.step, r.loss_im, r.loss_motion);
        }
    }
    println!("{} steps in {:?} -> {:.3} s/step", log.len(), dt, dt.as_secs_f64() / log.len() as f64);
}
