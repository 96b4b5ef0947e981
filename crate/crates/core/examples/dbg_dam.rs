use evdeblur::ivf::{dals_forward, IvfConfig, IvfParams};
use evdeblur::numerics::{Tape, Tensor};

fn main() {
    let cfg = IvfConfig::tiny();
    let mut params = IvfParams::<f64>::init(cfg.clone(), 4, 17).unwrap();
    for i in 1..=cfg.dals_blocks {
        for stream in ["b", "e"] {
            for j in 0..cfg.rdb_convs {
                let name = format!("dals{i}.{stream}.rdb.conv{j}.weight");
                let t = params.store.get_mut(&name).unwrap();
                *t = Tensor::zeros(t.shape());
            }
            let name = format!("dals{i}.{stream}.rdb.fuse.weight");
            let t = params.store.get_mut(&name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
    }
    let run = |block: usize, perturb: Option<(usize, usize)>| -> Tensor<f64> {
        let tape = Tape::new(false);
        let bound = params.store.bind(&tape);
        let base = Tensor::from_fn(&[4, 8, 8], |i| (i as f64 * 0.37).sin());
        let mut e_in = base.clone();
        if let Some((px, py)) = perturb {
            for c in 0..4 {
                e_in.data_mut()[(c * 8 + py) * 8 + px] += 1.0;
            }
        }
        let b = tape.constant(base);
        let e = tape.constant(e_in);
        let (nb, _) = dals_forward(b, e, block, &bound, &cfg).unwrap();
        nb.value()
    };
    for block in [1usize, 2] {
        let clean = run(block, None);
        let dirty = run(block, Some((2, 2)));
        let mut max_diff = 0.0f64;
        let mut touched = vec![];
        for c in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    let i = (c * 8 + y) * 8 + x;
                    let d = (clean.data()[i] - dirty.data()[i]).abs();
                    if d > max_diff { max_diff = d; }
                    if d > 1e-12 && c == 0 { touched.push((x, y)); }
                }
            }
        }
        println!("block {block}: max diff {max_diff:.3e}, touched {touched:?}");
    }
}
