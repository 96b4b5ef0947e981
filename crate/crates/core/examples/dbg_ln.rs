use evdeblur::error::Result;
use evdeblur::numerics::*;

fn loss<'t>(
    tape: &'t Tape<f64>,
    vars: &[Var<'t, f64>],
    which: usize,
    x: &Tensor<f64>,
    g: &Tensor<f64>,
    be: &Tensor<f64>,
    probe: &Tensor<f64>,
) -> Result<Var<'t, f64>> {
    let xv = if which == 0 { vars[0] } else { tape.constant(x.clone()) };
    let gv = if which == 1 { vars[0] } else { tape.constant(g.clone()) };
    let bv = if which == 2 { vars[0] } else { tape.constant(be.clone()) };
    let p = tape.constant(probe.clone());
    Ok(xv.layer_norm(gv, bv)?.mul(p)?.mean_all())
}

fn main() {
    let x = Tensor::from_fn(&[3, 6], |i| (i as f64 * 0.7).sin());
    let g = Tensor::from_fn(&[6], |i| 1.0 + 0.1 * i as f64);
    let be = Tensor::from_fn(&[6], |i| 0.05 * i as f64);
    let probe = Tensor::from_fn(&[3, 6], |i| ((i % 5) as f64 - 2.0) * 0.3);
    let inputs = [x.clone(), g.clone(), be.clone()];
    for (which, name) in [(0, "x"), (1, "gamma"), (2, "beta")] {
        let err = grad_check(
            |t, v| loss(t, v, which, &x, &g, &be, &probe),
            std::slice::from_ref(&inputs[which]),
            1e-6,
        )
        .unwrap();
        println!("wrt {name}: {err:.3e}");
    }
}
