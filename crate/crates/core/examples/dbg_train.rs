use evdeblur::imaging::*;
use evdeblur::ivf::*;
use evdeblur::training::*;

fn main() {
    let sample = SampleSpec {
        scene: SceneSpec {
            background: 0.2,
            primitives: vec![Primitive {
                shape: PrimitiveShape::Rectangle { width: 4.0, height: 4.0 },
                intensity: 0.55,
                x0: 3.0, y0: 4.0, vx: 2.0, vy: 0.0,
            }],
        },
        width: 8, height: 8, frames: 7,
        threshold_c: 0.2, log_eps: 1e-3,
        noise_level: 0.0, noise_seed: 0,
        referenced_count: 4,
    }.build().unwrap();
    let mut params = IvfParams::<f64>::init(IvfConfig::tiny(), 4, 11).unwrap();
    let cfg = TrainConfig {
        epochs_phase1: 200,
        lambda_switch_epoch: 150,
        lr_initial: 2e-3,
        lr_final: 2e-3,
        lr_decay_start_epoch: 200,
        lr_decay_end_epoch: 200,
        hflip_augmentation: false,
        ..TrainConfig::default()
    };
    let log = train_phase1(&[sample], &mut params, &cfg).unwrap();
    for (i, r) in log.iter().enumerate() {
        if i % 20 == 0 || i == log.len() - 1 {
            println!("step {:4} lr {:.1e} l1 {:.6} motion {:.6}", r.step, r.lr, r.loss_im, r.loss_motion);
        }
    }
}
