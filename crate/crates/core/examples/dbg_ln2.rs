use evdeblur::numerics::*;

fn main() {
    let x = Tensor::from_fn(&[3, 6], |i| (i as f64 * 0.7).sin());
    let g = Tensor::from_fn(&[6], |i| 1.0 + 0.1 * i as f64);
    let be = Tensor::from_fn(&[6], |i| 0.05 * i as f64);
    let probe = Tensor::from_fn(&[3, 6], |i| ((i % 5) as f64 - 2.0) * 0.3);

    // Analytic
    let tape = Tape::new(true);
    let bv = tape.leaf(be.clone(), true);
    let xv = tape.constant(x.clone());
    let gv = tape.constant(g.clone());
    let p = tape.constant(probe.clone());
    let loss = xv.layer_norm(gv, bv).unwrap().mul(p).unwrap().mean_all();
    println!("loss = {}", loss.value().scalar_value().unwrap());
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(bv).unwrap().clone();

    // Numeric
    let eval = |beta: &Tensor<f64>| {
        let tape = Tape::new(false);
        let bv = tape.leaf(beta.clone(), true);
        let xv = tape.constant(x.clone());
        let gv = tape.constant(g.clone());
        let p = tape.constant(probe.clone());
        xv.layer_norm(gv, bv).unwrap().mul(p).unwrap().mean_all().value().scalar_value().unwrap()
    };
    let mut work = be.clone();
    for i in 0..6 {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + 1e-6;
        let plus = eval(&work);
        work.data_mut()[i] = orig - 1e-6;
        let minus = eval(&work);
        work.data_mut()[i] = orig;
        let fd = (plus - minus) / 2e-6;
        println!("beta[{i}]: analytic {:+.9e}  fd {:+.9e}", analytic.data()[i], fd);
    }
    // expected: sum over rows of probe / 18
    for i in 0..6 {
        let expect: f64 = (0..3).map(|r| probe.data()[r*6+i]).sum::<f64>() / 18.0;
        println!("beta[{i}] expect {:+.9e}", expect);
    }
}
