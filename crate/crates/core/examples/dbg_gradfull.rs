use evdeblur::error::Result;
use evdeblur::ivf::*;
use evdeblur::numerics::tape::BoundParams;
use evdeblur::numerics::*;

fn loss_fn<'t>(
    tape: &'t Tape<f64>,
    vars: &[Var<'t, f64>],
    names: &[String],
    cfg: &IvfConfig,
    blur: &Tensor<f64>,
    events: &Tensor<f64>,
    target: &Tensor<f64>,
) -> Result<Var<'t, f64>> {
    let mut bound = BoundParams::new();
    for (name, var) in names.iter().zip(vars) {
        bound.insert(name.clone(), *var);
    }
    let b = tape.constant(blur.clone());
    let e = tape.constant(events.clone());
    let stage: usize = std::env::var("STAGE").unwrap().parse().unwrap();
    let out = match stage {
        // sfe only
        0 => sfe_forward(b, "sfe_img", &bound)?.1,
        // sfe + one dals block
        1 => {
            let (_, bf) = sfe_forward(b, "sfe_img", &bound)?;
            let (_, ef) = sfe_forward(e, "sfe_evt", &bound)?;
            dals_forward(bf, ef, 1, &bound, cfg)?.0
        }
        // full embed
        2 => embed_forward(b, e, &bound, cfg)?.0,
        // embed + decode
        _ => {
            let (f_db, _) = embed_forward(b, e, &bound, cfg)?;
            decode_forward(f_db, 0.37, b, &bound, cfg)?
        }
    };
    let probe = tape.constant(Tensor::from_fn(&out.shape(), |i| ((i % 17) as f64 - 8.0) * 0.05));
    // smooth squared loss against a probe pattern
    let d = out.mul(probe)?;
    let t = tape.constant(target.clone());
    let _ = t;
    Ok(d.mul(d)?.mean_all())
}

fn main() {
    let cfg = IvfConfig::tiny();
    let params = IvfParams::<f64>::init(cfg.clone(), 4, 99).unwrap();
    let names: Vec<String> = params.store.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Vec<Tensor<f64>> = params.store.iter().map(|(_, t)| t.clone()).collect();
    let blur = Tensor::from_fn(&[1, 8, 8], |i| ((i * 7) % 11) as f64 / 10.0);
    let events = Tensor::from_fn(&[4, 8, 8], |i| ((i * 3) % 5) as f64 - 2.0);
    let target = Tensor::from_fn(&[1, 8, 8], |i| ((i * 13) % 9) as f64 / 8.0);

    let t0 = std::time::Instant::now();
    let err = grad_check(
        |t, v| loss_fn(t, v, &names, &cfg, &blur, &events, &target),
        &tensors,
        1e-6,
    )
    .unwrap();
    println!(
        "full pipeline max rel grad error: {err:.3e} ({} params, {:?})",
        tensors.iter().map(|t| t.numel()).sum::<usize>(),
        t0.elapsed()
    );
}
