use evdeblur::imaging::*;
use evdeblur::ivf::*;
use evdeblur::training::*;
use std::time::Instant;

fn textured_translation(vx: f64) -> SceneSpec {
    let mut primitives = vec![Primitive {
        shape: PrimitiveShape::Rectangle { width: 300.0, height: 300.0 },
        intensity: 0.45, x0: 16.0, y0: 16.0, vx, vy: 0.0,
    }];
    // co-moving texture patches of varied intensity
    let mut k = 0usize;
    for gy in 0..6 {
        for gx in 0..6 {
            k += 1;
            let ii = 0.08 + 0.84 * (((k * 37) % 23) as f64 / 22.0);
            primitives.push(Primitive {
                shape: if k % 3 == 0 {
                    PrimitiveShape::Disk { radius: 2.2 }
                } else {
                    PrimitiveShape::Rectangle { width: 3.4, height: 2.6 }
                },
                intensity: ii,
                x0: gx as f64 * 5.6 + ((k * 13) % 5) as f64 - 4.0,
                y0: gy as f64 * 5.4 + ((k * 7) % 5) as f64 - 2.0,
                vx, vy: 0.0,
            });
        }
    }
    SceneSpec { background: 0.9, primitives }
}

fn main() {
    let steps: usize = std::env::var("STEPS").unwrap_or("300".into()).parse().unwrap();
    let lr: f64 = std::env::var("LR").unwrap_or("1e-3".into()).parse().unwrap();
    let sample = SampleSpec {
        scene: textured_translation(6.0),
        width: 32, height: 32, frames: 31,
        threshold_c: 0.1, log_eps: 1e-3,
        noise_level: 0.0, noise_seed: 0,
        referenced_count: 7,
    }.build().unwrap();
    println!("events: {}", sample.events.len());
    let mut gt_res = 0.0f64;
    for gt in &sample.referenced {
        gt_res += gt.pixels().iter().zip(sample.blur.pixels()).map(|(a,b)| (a-b).abs()).sum::<f64>() / 1024.0;
    }
    println!("mean |gt - blur| = {:.5}", gt_res / 7.0);
    let mut params = IvfParams::<f32>::init(IvfConfig::default(), 12, 7).unwrap();
    let lr_final: f64 = std::env::var("LRF").unwrap_or(lr.to_string()).parse().unwrap();
    let switch: usize = std::env::var("SWITCH").unwrap_or((steps * 3 / 4).to_string()).parse().unwrap();
    let cfg = TrainConfig {
        epochs_phase1: steps,
        lambda_switch_epoch: switch,
        lr_initial: lr, lr_final,
        lr_decay_start_epoch: steps / 4, lr_decay_end_epoch: steps * 3 / 4,
        hflip_augmentation: false,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = train_phase1(&[sample], &mut params, &cfg).unwrap();
    for (i, r) in log.iter().enumerate() {
        if i % (steps / 20).max(1) == 0 || i == log.len() - 1 {
            println!("step {:4} l1 {:.6} motion {:.6}", r.step, r.loss_im, r.loss_motion);
        }
    }
    println!("{:.3} s/step", t0.elapsed().as_secs_f64() / log.len() as f64);
}
