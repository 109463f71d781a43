//! The three subcommands: detect, selftest-noise, synth.

use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use oddspot_core::detect::{detect_prepared_timed, prepare_input, DetectionConfig};
use oddspot_core::features::{load_feature_map, write_feature_map};
use oddspot_core::image::MultiChannelImage;

use crate::args::{DetectArgs, Mode, SelftestArgs, SynthArgs};
use crate::io::{atomic_write, load_png, write_png_atomic};
use crate::overlay::{draw_circles, plan_circles};
use crate::report;
use crate::synth;
use crate::Failure;

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    atomic_write(path, &report::to_deterministic_json(value))
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

/// Base image for the overlay: the PNG itself in pixels mode, a flat gray
/// canvas of matching size in features mode.
fn overlay_base(mode: Mode, input: &MultiChannelImage) -> RgbImage {
    let (w, h) = (input.width() as u32, input.height() as u32);
    let mut base = RgbImage::from_pixel(w, h, image::Rgb([128, 128, 128]));
    if mode == Mode::Pixels {
        for y in 0..h {
            for x in 0..w {
                let px = [
                    input.get(x as usize, y as usize, 0).round() as u8,
                    input.get(x as usize, y as usize, 1).round() as u8,
                    input.get(x as usize, y as usize, 2).round() as u8,
                ];
                base.put_pixel(x, y, image::Rgb(px));
            }
        }
    }
    base
}

pub fn cmd_detect(args: &DetectArgs) -> Result<i32, Failure> {
    let t_load = Instant::now();
    let input = match args.mode {
        Mode::Pixels => load_png(&args.input)?,
        Mode::Features => load_feature_map(&args.input)
            .map_err(|e| Failure::input(e.to_string()))?,
    };
    let load_s = t_load.elapsed().as_secs_f64();

    let config = args.config(input.channels());
    config.validate().map_err(|e| Failure::flags(e.to_string()))?;

    let (working, basis) = prepare_input(&input, args.feature_mode(input.channels()))
        .map_err(|e| Failure::input(e.to_string()))?;
    let (records, stack, ggd, timings) = detect_prepared_timed(&working, &config)
        .map_err(|e| Failure::input(e.to_string()))?;

    ensure_dir(&args.out_dir)?;
    let t_write = Instant::now();
    let mut nfa_files = Vec::with_capacity(stack.maps.len());
    for map in &stack.maps {
        let name = format!(
            "nfa_s{}_c{}_r{}.fmap",
            map.scale, map.channel, map.kernel_radius
        );
        let grid =
            MultiChannelImage::from_planar(map.width, map.height, 1, map.log10_nfa.clone())
                .map_err(|e| Failure::input(e.to_string()))?;
        let path = args.out_dir.join(&name);
        let tmp = args.out_dir.join(format!(".tmp-{name}"));
        write_feature_map(&tmp, &grid).map_err(|e| Failure::input(e.to_string()))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
        nfa_files.push(name);
    }

    if let Some(basis) = &basis {
        write_json(&args.out_dir.join("basis.json"), &report::basis_value(basis))?;
    }

    let mut canvas = overlay_base(args.mode, &input);
    draw_circles(&mut canvas, &plan_circles(&records));
    write_png_atomic(&args.out_dir.join("overlay.png"), &canvas)?;

    let report_value = report::run_report(
        &config,
        &args.input.display().to_string(),
        args.seed,
        &ggd,
        &stack,
        &nfa_files,
        &records,
    );
    write_json(&args.out_dir.join("report.json"), &report_value)?;
    let write_s = t_write.elapsed().as_secs_f64();
    write_json(
        &args.out_dir.join("timings.json"),
        &report::timings_value(load_s, write_s, &timings),
    )?;

    println!(
        "{} detection(s) over {} tests; report: {}",
        records.len(),
        stack.n_tests,
        args.out_dir.join("report.json").display()
    );
    for r in &records {
        println!(
            "  scale {} channel {} kernel {} at ({}, {}): log10 NFA {:.3} [{}]",
            r.scale,
            r.channel,
            r.kernel_radius,
            r.x,
            r.y,
            r.log10_nfa,
            r.band.as_str()
        );
    }
    Ok(if args.fail_on_detect && !records.is_empty() {
        1
    } else {
        0
    })
}

/// Seeded standard-normal image, drawn in planar channel order.
fn noise_image(size: usize, rng: &mut ChaCha8Rng) -> MultiChannelImage {
    let data: Vec<f64> = (0..size * size * 3)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    MultiChannelImage::from_planar(size, size, 3, data).expect("valid noise image")
}

pub fn cmd_selftest_noise(args: &SelftestArgs) -> Result<i32, Failure> {
    if args.trials == 0 {
        return Err(Failure::flags("trials must be >= 1".into()));
    }
    let mut config = DetectionConfig::default_pixels();
    config.epsilon = args.epsilon;
    config.validate().map_err(|e| Failure::flags(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut per_trial = Vec::with_capacity(args.trials);
    for _ in 0..args.trials {
        let img = noise_image(args.size, &mut rng);
        let (records, _, _, _) = detect_prepared_timed(&img, &config)
            .map_err(|e| Failure::flags(e.to_string()))?;
        per_trial.push(records.len() as u64);
    }
    let total: u64 = per_trial.iter().sum();
    let budget = (5.0 * args.epsilon * args.trials as f64).ceil().max(1.0) as u64;
    let pass = total <= budget;

    ensure_dir(&args.out_dir)?;
    let report_value = json!({
        "budget": budget,
        "epsilon": args.epsilon,
        "nominal_expectation": args.epsilon * args.trials as f64,
        "pass": pass,
        "per_trial": per_trial,
        "schema": 1,
        "seed": args.seed,
        "size": args.size as u64,
        "total": total,
        "trials": args.trials as u64,
    });
    write_json(&args.out_dir.join("selftest_report.json"), &report_value)?;

    println!(
        "selftest-noise: {total} detection(s) over {} trials (budget {budget}): {}",
        args.trials,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32, Failure> {
    let (img, truth) = synth::generate(args.kind, args.seed, args.size)?;
    ensure_dir(&args.out_dir)?;
    let stem = format!("{}_s{}", args.kind.as_str(), args.seed);
    let png_path = args.out_dir.join(format!("{stem}.png"));
    let truth_path = args.out_dir.join(format!("{stem}_truth.json"));
    write_png_atomic(&png_path, &img)?;
    let mut truth = truth;
    truth["png"] = serde_json::Value::from(format!("{stem}.png"));
    write_json(&truth_path, &truth)?;
    println!("wrote {} and {}", png_path.display(), truth_path.display());
    Ok(0)
}
