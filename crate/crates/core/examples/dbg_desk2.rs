use evdeblur::imaging::demo_moving_square;
use evdeblur::ivf::*;
use evdeblur::numerics::*;
use evdeblur::training::*;

fn main() {
    let sample = SampleSpec {
        scene: demo_moving_square(0.1, 1e-3),
        width: 32, height: 32, frames: 31,
        threshold_c: 0.1, log_eps: 1e-3,
        noise_level: 0.0, noise_seed: 0,
        referenced_count: 7,
    }.build().unwrap();
    let mut params = IvfParams::<f32>::init(IvfConfig::default(), 12, 7).unwrap();

    // How big is the ideal residual?
    let mut target_res = 0.0f64;
    for (gt, _t) in sample.referenced.iter().zip(&sample.referenced_times) {
        let d: f64 = gt.pixels().iter().zip(sample.blur.pixels()).map(|(a,b)| (a-b).abs()).sum();
        target_res += d / 1024.0;
    }
    println!("mean |gt - blur| = {:.5}", target_res / 7.0);

    let cfg = TrainConfig {
        epochs_phase1: 50,
        lambda_switch_epoch: 999,
        lr_initial: 1e-3, lr_final: 1e-3,
        lr_decay_start_epoch: 99, lr_decay_end_epoch: 99,
        hflip_augmentation: false,
        seed: 1,
        ..TrainConfig::default()
    };
    for round in 0..4 {
        let log = train_phase1(std::slice::from_ref(&sample), &mut params, &cfg).unwrap();
        // residual magnitude at t=0.5 after this round
        let session = QuerySession::new(&params, &sample.blur, &sample.events, 6).unwrap();
        let out = session.decode(0.5).unwrap();
        let res: f64 = out.pixels().iter().zip(sample.blur.pixels()).map(|(a,b)| (a-b).abs()).sum::<f64>() / 1024.0;
        println!("after {} steps: l1 {:.5}, mean|pred - blur| = {:.5}", (round+1)*50, log.last().unwrap().loss_im, res);
        // a few grad-ish magnitudes: weight drift from init
        let w = params.store.get("mlp.out.weight").unwrap();
        let wn: f64 = w.data().iter().map(|v| (v.abs()) as f64).sum::<f64>() / w.numel() as f64;
        let fc0 = params.store.get("mlp.fc0.weight").unwrap();
        let f0: f64 = fc0.data().iter().map(|v| (v.abs()) as f64).sum::<f64>() / fc0.numel() as f64;
        println!("  mean|mlp.out.w| = {wn:.5}, mean|mlp.fc0.w| = {f0:.5}");
    }
}
