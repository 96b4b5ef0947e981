use evdeblur::edi::*;
use evdeblur::events::simulate_events;
use evdeblur::imaging::*;

fn grad_sparsity(f: &Frame) -> f64 {
    let (w, h) = (f.width(), f.height());
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w { e += (f.at(x+1,y) - f.at(x,y)).abs().sqrt(); }
            if y + 1 < h { e += (f.at(x,y+1) - f.at(x,y)).abs().sqrt(); }
        }
    }
    e
}

fn main() {
    let (c, eps) = (0.1f64, 1e-3);
    let background = 0.2;
    let steps = 12.0;
    let scene = SceneSpec {
        background,
        primitives: vec![Primitive {
            shape: PrimitiveShape::Rectangle { width: 12.0, height: 12.0 },
            intensity: (background + eps) * (steps * c).exp() - eps,
            x0: 13.0, y0: 16.0, vx: 6.0, vy: 0.0,
        }],
    };
    let frames: Vec<Frame> = (0..31).map(|i| render_scene(&scene, i as f64 / 30.0, 32, 32)).collect();
    let seq = FrameSequence::new(frames).unwrap();
    let stream = simulate_events(&seq, c, eps, 0).unwrap();
    let blur = synthesize_blur(&seq);
    for &cc in &[0.04, 0.06, 0.08, 0.09, 0.1, 0.11, 0.125, 0.15, 0.2] {
        let k = 8;
        let mut energy = 0.0;
        for j in 0..k {
            let t = (j as f64 + 0.5) / k as f64;
            let recon = edi_deblur(&blur, &stream, t, cc, 128, eps).unwrap();
            energy += grad_sparsity(&recon);
        }
        println!("c={cc}: sharpness energy {:.4}", energy / k as f64);
    }
    // Mean of the 31 reconstructions vs blur (reblur invariant at true c)
    let mut acc = vec![0.0f64; 32*32];
    for i in 0..31 {
        let t = i as f64 / 30.0;
        let recon = edi_deblur(&blur, &stream, t, c, 256, eps).unwrap();
        for (a, &v) in acc.iter_mut().zip(recon.pixels()) { *a += v; }
    }
    let reblur = Frame::new(32, 32, 0.5, acc.iter().map(|v| v/31.0).collect()).unwrap();
    println!("reblur MSE at true c over 31 stamps: {:.3e}", mse(&blur, &reblur).unwrap());
}
