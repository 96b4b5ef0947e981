//! Implementations of the pipeline subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use evdeblur::edi;
use evdeblur::error::{Error, Result};
use evdeblur::events::{inject_noise, simulate_events, Event, EventStream};
use evdeblur::imaging::{
    psnr, read_pgm, ssim, synthesize_blur, write_pgm, FrameSequence, SceneSpec,
};
use evdeblur::ivf::{EerParams, IvfParams, QuerySession};
use evdeblur::training::{
    load_eer_checkpoint, load_ivf_checkpoint, save_eer_checkpoint, save_ivf_checkpoint,
    train_phase1, train_phase2, write_phase1_log, write_phase2_log, Sample, SampleSpec,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Number of referenced (supervised) timestamps in the blur sidecar.
const REFERENCED_K: usize = 7;

#[derive(Serialize, Deserialize)]
struct FramesMeta {
    width: usize,
    height: usize,
    frames: usize,
    timestamps: Vec<f64>,
    scene: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
pub struct BlurSidecar {
    pub window: usize,
    pub start_index: usize,
    pub frame_count: usize,
    /// Simulation-time span covered by the averaged frames.
    pub exposure: [f64; 2],
    /// Exposure-normalized timestamps of the frames inside the window.
    pub timestamps: Vec<f64>,
    /// Referenced frame indices, relative to the window start.
    pub referenced_indices: Vec<usize>,
    /// Exposure-normalized referenced timestamps.
    pub referenced_times: Vec<f64>,
}

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.pgm"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(
    config: &RunConfig,
    scene_path: &Path,
    out_events: &Path,
    out_frames_dir: &Path,
) -> Result<()> {
    let scene_text = fs::read_to_string(scene_path)?;
    let scene = SceneSpec::from_json(&scene_text)?;
    let n = config.frame_count();
    if n < 2 {
        return Err(Error::invalid("sim.fps must give at least 2 frames"));
    }
    fs::create_dir_all(out_frames_dir)?;
    let (w, h) = (config.sensor.width, config.sensor.height);
    let mut frames = Vec::with_capacity(n);
    let mut timestamps = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let frame = evdeblur::imaging::render_scene(&scene, t, w, h);
        write_pgm(&frame, frame_path(out_frames_dir, i))?;
        timestamps.push(t);
        frames.push(frame);
    }
    let meta = FramesMeta {
        width: w,
        height: h,
        frames: n,
        timestamps,
        scene: serde_json::from_str(&scene.to_json()).expect("scene serializes"),
    };
    write_json(&out_frames_dir.join("meta.json"), &meta)?;

    let seq = FrameSequence::new(frames)?;
    let mut stream = simulate_events(&seq, config.sim.threshold_c, config.sim.log_eps, 0)?;
    if config.sim.noise_level > 0.0 {
        stream = inject_noise(&stream, config.sim.noise_level, config.sim.seed)?;
    }
    stream.write_csv(out_events)?;
    println!(
        "simulated {} frames, {} events -> {}",
        n,
        stream.len(),
        out_events.display()
    );
    Ok(())
}

fn load_meta(frames_dir: &Path) -> Result<FramesMeta> {
    read_json(&frames_dir.join("meta.json"))
}

pub fn cmd_blur(frames_dir: &Path, window: usize, out: &Path) -> Result<()> {
    let meta = load_meta(frames_dir)?;
    if window == 0 || window > meta.frames {
        return Err(Error::invalid(format!(
            "window {window} exceeds available frames {}",
            meta.frames
        )));
    }
    let start = (meta.frames - window) / 2;
    let mut frames = Vec::with_capacity(window);
    for i in start..start + window {
        let f = read_pgm(frame_path(frames_dir, i))?.with_timestamp(meta.timestamps[i]);
        frames.push(f);
    }
    let blur = if window == 1 {
        frames[0].clone()
    } else {
        synthesize_blur(&FrameSequence::new(frames)?)
    };
    write_pgm(&blur, out)?;

    let t0 = meta.timestamps[start];
    let t1 = meta.timestamps[start + window - 1];
    let span = t1 - t0;
    let normalize = |t: f64| if span > 0.0 { (t - t0) / span } else { 0.0 };
    let timestamps: Vec<f64> = (start..start + window)
        .map(|i| normalize(meta.timestamps[i]))
        .collect();
    let k = REFERENCED_K.min(window);
    let referenced_indices: Vec<usize> = if k == 1 {
        vec![0]
    } else {
        (0..k)
            .map(|j| ((j * (window - 1)) as f64 / (k - 1) as f64).round() as usize)
            .collect()
    };
    let referenced_times: Vec<f64> = referenced_indices.iter().map(|&i| timestamps[i]).collect();
    let sidecar = BlurSidecar {
        window,
        start_index: start,
        frame_count: meta.frames,
        exposure: [t0, t1],
        timestamps,
        referenced_indices,
        referenced_times,
    };
    write_json(&out.with_extension("json"), &sidecar)?;
    println!("blurred {window} frames -> {}", out.display());
    Ok(())
}

/// Load an events CSV spanning the full simulation, cut it to the blur
/// exposure, and renormalize timestamps so the exposure is `[0, 1]`.
fn load_events_for_exposure(
    path: &Path,
    config: &RunConfig,
    exposure: [f64; 2],
) -> Result<EventStream> {
    let full = EventStream::read_csv(path, config.sensor.width, config.sensor.height, 0.0, 1.0)?;
    let [t0, t1] = exposure;
    if t0 == 0.0 && t1 == 1.0 {
        return Ok(full);
    }
    let window = full.slice(t0, t1)?;
    let span = t1 - t0;
    let remapped: Vec<Event> = window
        .events()
        .iter()
        .map(|e| Event {
            t: ((e.t - t0) / span).clamp(0.0, 1.0),
            ..*e
        })
        .collect();
    EventStream::new(window.width(), window.height(), 0.0, 1.0, remapped)
}

pub struct EdiArgs<'a> {
    pub blur: &'a Path,
    pub events: &'a Path,
    pub sidecar: Option<&'a Path>,
    pub t: Option<f64>,
    pub out: Option<&'a Path>,
    pub out_dir: Option<&'a Path>,
    pub threshold: Option<f64>,
    pub estimate_threshold: bool,
}

pub fn cmd_edi(config: &RunConfig, args: EdiArgs<'_>) -> Result<()> {
    let blur = read_pgm(args.blur)?;
    let sidecar: Option<BlurSidecar> = args.sidecar.map(read_json).transpose()?;
    let exposure = sidecar.as_ref().map(|s| s.exposure).unwrap_or([0.0, 1.0]);
    let stream = load_events_for_exposure(args.events, config, exposure)?;

    let mut c = args.threshold.unwrap_or(config.sim.threshold_c);
    if args.estimate_threshold {
        let grid: Vec<f64> = [0.5, 0.75, 1.0, 1.5, 2.0]
            .iter()
            .map(|m| m * config.sim.threshold_c)
            .collect();
        c = edi::estimate_threshold(&blur, &stream, &grid, 8, config.eval.edi_samples, config.sim.log_eps)?;
        println!("estimated threshold c = {c}");
    }

    let n = config.eval.edi_samples;
    let eps = config.sim.log_eps;
    match (args.t, args.out, args.out_dir) {
        (Some(t), Some(out), _) => {
            let recon = edi::edi_deblur(&blur, &stream, t, c, n, eps)?;
            write_pgm(&recon, out)?;
            println!("edi t={t} -> {}", out.display());
        }
        (None, _, Some(dir)) => {
            let sidecar = sidecar.ok_or_else(|| {
                Error::invalid("--out-dir reconstruction requires --sidecar for the timestamps")
            })?;
            fs::create_dir_all(dir)?;
            for (i, &t) in sidecar.timestamps.iter().enumerate() {
                let recon = edi::edi_deblur(&blur, &stream, t, c, n, eps)?;
                write_pgm(&recon, dir.join(format!("edi_{i:04}.pgm")))?;
            }
            println!("edi reconstructed {} frames -> {}", sidecar.timestamps.len(), dir.display());
        }
        _ => {
            return Err(Error::invalid(
                "edi needs either --t with --out, or --out-dir with --sidecar",
            ))
        }
    }
    Ok(())
}

fn build_samples(config: &RunConfig, scene_paths: &[PathBuf]) -> Result<Vec<Sample>> {
    if config.blur.window_frames != config.frame_count() {
        return Err(Error::invalid(
            "training expects blur.window_frames == round(sim.fps) so the exposure covers [0, 1]",
        ));
    }
    scene_paths
        .iter()
        .map(|p| {
            let scene = SceneSpec::from_json(&fs::read_to_string(p)?)?;
            SampleSpec {
                scene,
                width: config.sensor.width,
                height: config.sensor.height,
                frames: config.frame_count(),
                threshold_c: config.sim.threshold_c,
                log_eps: config.sim.log_eps,
                noise_level: config.sim.noise_level,
                noise_seed: config.sim.seed,
                referenced_count: REFERENCED_K,
            }
            .build()
        })
        .collect()
}

pub fn cmd_train(config: &RunConfig, scene_paths: &[PathBuf], out_dir: &Path) -> Result<()> {
    let samples = build_samples(config, scene_paths)?;
    fs::create_dir_all(out_dir)?;
    let event_channels = 2 * config.representation.segments;

    let mut ivf = IvfParams::<f32>::init(config.network.clone(), event_channels, config.train.seed)?;
    let log1 = train_phase1(&samples, &mut ivf, &config.train)?;
    save_ivf_checkpoint(&ivf, out_dir.join("ivf.ckpt"))?;
    write_phase1_log(&log1, out_dir.join("loss_phase1.csv"))?;
    if let (Some(first), Some(last)) = (log1.first(), log1.last()) {
        println!(
            "phase 1: {} steps, loss_im {:.6} -> {:.6}",
            log1.len(),
            first.loss_im,
            last.loss_im
        );
    }

    let mut eer = EerParams::<f32>::init(config.eer.clone(), config.train.seed.wrapping_add(1))?;
    let log2 = train_phase2(&samples, &ivf, &mut eer, &config.train)?;
    save_eer_checkpoint(&eer, out_dir.join("eer.ckpt"))?;
    write_phase2_log(&log2, out_dir.join("loss_phase2.csv"))?;
    if let (Some(first), Some(last)) = (log2.first(), log2.last()) {
        println!(
            "phase 2: {} steps, loss_texture {:.6} -> {:.6}",
            log2.len(),
            first.loss_texture,
            last.loss_texture
        );
    }
    println!("checkpoints -> {}", out_dir.display());
    Ok(())
}

pub struct QueryArgs<'a> {
    pub checkpoint: &'a Path,
    pub eer_checkpoint: Option<&'a Path>,
    pub blur: &'a Path,
    pub events: &'a Path,
    pub sidecar: Option<&'a Path>,
    pub t: f64,
    pub refine: bool,
    pub out: &'a Path,
}

pub fn cmd_query(config: &RunConfig, args: QueryArgs<'_>) -> Result<()> {
    let event_channels = 2 * config.representation.segments;
    let ivf = load_ivf_checkpoint(config.network.clone(), event_channels, args.checkpoint)?;
    let eer = match (args.refine, args.eer_checkpoint) {
        (false, _) => None,
        (true, Some(path)) => Some(load_eer_checkpoint(config.eer.clone(), path)?),
        (true, None) => return Err(Error::invalid("--refine requires --eer <checkpoint>")),
    };
    let blur = read_pgm(args.blur)?;
    let sidecar: Option<BlurSidecar> = args.sidecar.map(read_json).transpose()?;
    let exposure = sidecar.as_ref().map(|s| s.exposure).unwrap_or([0.0, 1.0]);
    let stream = load_events_for_exposure(args.events, config, exposure)?;
    let session = QuerySession::new(&ivf, &blur, &stream, config.representation.segments)?;
    let out = session.query(args.t, eer.as_ref())?;
    write_pgm(&out, args.out)?;
    println!("query t={} -> {}", args.t, args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PerFrameReport {
    t: f64,
    /// `null` encodes an infinite PSNR (bit-identical frames).
    psnr: Option<f64>,
    ssim: f64,
    referenced: bool,
}

#[derive(Serialize)]
struct MeanReport {
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct EvalReport {
    method: String,
    per_frame: Vec<PerFrameReport>,
    mean_referenced: MeanReport,
    mean_nonreferenced: MeanReport,
}

pub struct EvalArgs<'a> {
    pub frames_dir: &'a Path,
    pub blur: &'a Path,
    pub sidecar: &'a Path,
    pub events: &'a Path,
    pub method: String,
    pub checkpoint: Option<&'a Path>,
    pub eer_checkpoint: Option<&'a Path>,
    pub refine: bool,
    pub out: &'a Path,
}

pub fn cmd_eval(config: &RunConfig, args: EvalArgs<'_>) -> Result<()> {
    let meta = load_meta(args.frames_dir)?;
    let sidecar: BlurSidecar = read_json(args.sidecar)?;
    let blur = read_pgm(args.blur)?;
    let stream = load_events_for_exposure(args.events, config, sidecar.exposure)?;

    enum Method<'p> {
        Edi,
        Ivf {
            session: QuerySession<'p, f32>,
            eer: Option<EerParams<f32>>,
        },
    }
    // The session borrows the parameters, so they live out here.
    let ivf_params;
    let mut method = match args.method.as_str() {
        "edi" => Method::Edi,
        "ivf" => {
            let ckpt = args
                .checkpoint
                .ok_or_else(|| Error::invalid("--method ivf requires --checkpoint"))?;
            let event_channels = 2 * config.representation.segments;
            ivf_params = load_ivf_checkpoint(config.network.clone(), event_channels, ckpt)?;
            let eer = match (args.refine, args.eer_checkpoint) {
                (false, _) => None,
                (true, Some(p)) => Some(load_eer_checkpoint(config.eer.clone(), p)?),
                (true, None) => {
                    return Err(Error::invalid("--refine requires --eer <checkpoint>"))
                }
            };
            Method::Ivf {
                session: QuerySession::new(
                    &ivf_params,
                    &blur,
                    &stream,
                    config.representation.segments,
                )?,
                eer,
            }
        }
        other => return Err(Error::invalid(format!("unknown method '{other}'"))),
    };

    let wanted: Option<&[f64]> = config.eval.timestamps.as_deref();
    let mut per_frame = Vec::new();
    let mut sums = [(0.0f64, 0.0f64, 0usize); 2]; // (psnr, ssim, count) by referenced
    for (i, &t) in sidecar.timestamps.iter().enumerate() {
        if let Some(list) = wanted {
            if !list.iter().any(|&want| (want - t).abs() < 1e-9) {
                continue;
            }
        }
        let truth = read_pgm(frame_path(args.frames_dir, sidecar.start_index + i))?;
        let recon = match &mut method {
            Method::Edi => edi::edi_deblur(
                &blur,
                &stream,
                t,
                config.sim.threshold_c,
                config.eval.edi_samples,
                config.sim.log_eps,
            )?,
            Method::Ivf { session, eer } => session.query(t, eer.as_ref())?,
        };
        let p = psnr(&truth, &recon)?;
        let s = ssim(&truth, &recon)?;
        let referenced = sidecar.referenced_times.iter().any(|&r| r == t);
        let bucket = &mut sums[usize::from(referenced)];
        if p.is_finite() {
            bucket.0 += p;
            bucket.1 += s;
            bucket.2 += 1;
        }
        per_frame.push(PerFrameReport {
            t,
            psnr: p.is_finite().then_some(p),
            ssim: s,
            referenced,
        });
    }
    let mean = |idx: usize| {
        let (p, s, n) = sums[idx];
        if n == 0 {
            MeanReport { psnr: 0.0, ssim: 0.0 }
        } else {
            MeanReport {
                psnr: p / n as f64,
                ssim: s / n as f64,
            }
        }
    };
    let report = EvalReport {
        method: args.method.clone(),
        per_frame,
        mean_referenced: mean(1),
        mean_nonreferenced: mean(0),
    };
    write_json(args.out, &report)?;
    // Keep the meta read relevant: dimensions must agree.
    if meta.width != blur.width() || meta.height != blur.height() {
        return Err(Error::shape("frames metadata does not match the blur"));
    }
    println!(
        "eval[{}]: referenced {:.3} dB / {:.4}, non-referenced {:.3} dB / {:.4} -> {}",
        args.method,
        report.mean_referenced.psnr,
        report.mean_referenced.ssim,
        report.mean_nonreferenced.psnr,
        report.mean_nonreferenced.ssim,
        args.out.display()
    );
    Ok(())
}
