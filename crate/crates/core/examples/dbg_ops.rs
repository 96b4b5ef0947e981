use evdeblur::error::Result;
use evdeblur::numerics::tape::concat;
use evdeblur::numerics::*;

fn check(name: &str, f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>, inputs: &[Tensor<f64>]) {
    let err = grad_check(&f, inputs, 1e-6).unwrap();
    println!("{name:24} {err:.3e}");
}

fn main() {
    let a3 = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.61).sin());
    let b3 = Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.37).cos());
    let bt3 = Tensor::from_fn(&[2, 5, 4], |i| (i as f64 * 0.43).sin());
    check("bmm", |t, v| {
        let p = t.constant(Tensor::from_fn(&[2,3,5], |i| (i as f64*0.2).cos()));
        Ok(v[0].bmm(v[1])?.mul(p)?.mean_all())
    }, &[a3.clone(), b3]);
    check("bmm_nt", |t, v| {
        let p = t.constant(Tensor::from_fn(&[2,3,5], |i| (i as f64*0.2).cos()));
        Ok(v[0].bmm_nt(v[1])?.mul(p)?.mean_all())
    }, &[a3.clone(), bt3]);

    let x = Tensor::from_fn(&[3, 6], |i| (i as f64 * 0.7 + 0.11).sin());
    let g = Tensor::from_fn(&[6], |i| 1.0 + 0.1 * i as f64);
    let be = Tensor::from_fn(&[6], |i| 0.05 * i as f64);
    check("layer_norm", |t, v| {
        let p = t.constant(Tensor::from_fn(&[3,6], |i| ((i%5) as f64-2.0)*0.3));
        Ok(v[0].layer_norm(v[1], v[2])?.mul(p)?.mean_all())
    }, &[x.clone(), g, be]);

    check("softmax", |t, v| {
        let p = t.constant(Tensor::from_fn(&[3,6], |i| ((i%7) as f64-3.0)*0.2));
        Ok(v[0].softmax_lastdim().mul(p)?.mean_all())
    }, &[x.clone()]);

    check("gelu", |t, v| {
        let p = t.constant(Tensor::from_fn(&[3,6], |i| ((i%4) as f64-1.5)*0.4));
        Ok(v[0].gelu().mul(p)?.mean_all())
    }, &[x.clone()]);

    let c1 = Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.3).sin());
    let c2 = Tensor::from_fn(&[2, 3, 2], |i| (i as f64 * 0.9).cos());
    check("concat_axis2", |t, v| {
        let p = t.constant(Tensor::from_fn(&[2,3,6], |i| ((i%9) as f64-4.0)*0.1));
        Ok(concat(&[v[0], v[1]], 2)?.mul(p)?.mean_all())
    }, &[c1, c2]);

    check("scale", |_t, v| Ok(v[0].scale(-1.7).mul(v[0])?.mean_all()), &[x.clone()]);
    check("relu", |t, v| {
        let p = t.constant(Tensor::from_fn(&[3,6], |i| ((i%4) as f64-1.5)*0.4));
        Ok(v[0].relu().mul(p)?.mean_all())
    }, &[x.clone()]);
}
