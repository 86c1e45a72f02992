//! `vpnc`: extract viewports from 360 panoramas, compress them with a
//! trained model, and evaluate the results.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 checkpoint
//! mismatch, 4 corrupt bitstream.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use vpnc_core::codec::{CodecModel, ModelConfig};
use vpnc_core::coding::Bitstream;
use vpnc_core::error::{Error, Result};
use vpnc_core::geometry::{extract_plan, plan_coverage, ErpImage, FieldOfView};
use vpnc_core::harness::{
    evaluate_model, monotonicity_report, rd_csv, rd_svg, redundancy_map, redundancy_to_gray,
    save_gray_png, synthetic_erp, train, v_psnr, v_ssim, RdPoint, TrainOptions,
};
use vpnc_core::pipeline::{
    atomic_write, compress, decompress, latent_diagnostics, CompressOptions,
};
use vpnc_core::vpct::{cross_allowed, intra_allowed};

#[derive(Parser)]
#[command(name = "vpnc", version, about = "Viewport-based 360 panorama codec")]
struct Cli {
    /// Cap on worker threads. All kernels are deterministic; outputs are
    /// bit-identical for any cap.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Slice a 2:1 panorama into tangent-plane viewport PNGs plus plan.json
    Extract {
        /// Source equirectangular PNG (width must be twice the height)
        input: PathBuf,
        /// Square field of view per viewport, degrees
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        /// Square viewport side in pixels (default: half the panorama height)
        #[arg(long)]
        dims: Option<usize>,
        /// Directory for the viewport PNGs and the plan manifest
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Compress a panorama into a .vpnc stream
    Compress {
        /// Source equirectangular PNG
        input: PathBuf,
        /// Optional model config TOML; must match the checkpoint when given
        #[arg(long)]
        model: Option<PathBuf>,
        /// Trained model checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output .vpnc path
        #[arg(long)]
        out: PathBuf,
        /// Rate weight label recorded in the stream header
        #[arg(long, default_value_t = 0.013)]
        lambda: f64,
        /// Coverage field of view, degrees
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
    },
    /// Decode a .vpnc stream back into a panorama PNG
    Decompress {
        /// Input .vpnc stream
        input: PathBuf,
        /// Checkpoint matching the stream's embedded model hash
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output PNG path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint
    Train {
        /// Model architecture TOML
        #[arg(long)]
        config: PathBuf,
        /// Directory of equirectangular PNGs; omit to train on synthetic
        /// panoramas
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Number of synthetic panoramas when --dataset is omitted
        #[arg(long, default_value_t = 8)]
        synthetic: usize,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Rate-distortion weight
        #[arg(long, default_value_t = 0.013)]
        lambda: f64,
        /// Adam learning rate
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Training seed; the VPNC_SEED environment variable overrides it
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional line-delimited JSON training log
        #[arg(long)]
        log: Option<PathBuf>,
        /// Record a log entry every this many steps (0: final step only)
        #[arg(long = "log-every", default_value_t = 10)]
        log_every: usize,
    },
    /// Score a reconstruction or a stream against its source panorama
    Eval {
        /// Source panorama PNG
        #[arg(long)]
        reference: PathBuf,
        /// Reconstructed panorama PNG to score
        #[arg(long, conflicts_with = "stream")]
        reconstruction: Option<PathBuf>,
        /// .vpnc stream to decode and score (requires --checkpoint)
        #[arg(long, requires = "checkpoint")]
        stream: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for per-viewport latent redundancy maps (stream mode)
        #[arg(long = "redundancy-dir", requires = "stream")]
        redundancy_dir: Option<PathBuf>,
    },
    /// Evaluate trained checkpoints across rate points into CSV (and SVG)
    RdSweep {
        /// Repeatable LAMBDA=PATH pairs, one trained checkpoint per rate
        /// point
        #[arg(long = "checkpoint", value_name = "LAMBDA=PATH", required = true)]
        checkpoints: Vec<String>,
        /// Directory of evaluation panoramas; omit to use synthetic ones
        #[arg(long)]
        images: Option<PathBuf>,
        /// Number of synthetic evaluation panoramas when --images is omitted
        #[arg(long, default_value_t = 2)]
        synthetic: usize,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Optional rate-quality SVG plot
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Print an attention mask as a rows=queries grid of 0 / -inf
    MaskDump {
        /// Tokens per viewport
        #[arg(long)]
        n: usize,
        /// Print the cross-viewport mask for this viewport instead of the
        /// intra-viewport mask
        #[arg(long = "viewport-index")]
        viewport_index: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::invalid("--threads must be at least 1"));
    }
    match cli.cmd {
        Cmd::Extract { input, fov, dims, out_dir } => cmd_extract(&input, fov, dims, &out_dir),
        Cmd::Compress { input, model, checkpoint, out, lambda, fov } => {
            cmd_compress(&input, model.as_deref(), &checkpoint, &out, lambda, fov)
        }
        Cmd::Decompress { input, checkpoint, out } => cmd_decompress(&input, &checkpoint, &out),
        Cmd::Train { config, dataset, synthetic, out, steps, lambda, lr, seed, log, log_every } => {
            cmd_train(&config, dataset.as_deref(), synthetic, &out, steps, lambda, lr, seed, log.as_deref(), log_every)
        }
        Cmd::Eval { reference, reconstruction, stream, checkpoint, redundancy_dir } => cmd_eval(
            &reference,
            reconstruction.as_deref(),
            stream.as_deref(),
            checkpoint.as_deref(),
            redundancy_dir.as_deref(),
        ),
        Cmd::RdSweep { checkpoints, images, synthetic, out, svg } => {
            cmd_rd_sweep(&checkpoints, images.as_deref(), synthetic, &out, svg.as_deref())
        }
        Cmd::MaskDump { n, viewport_index } => cmd_mask_dump(n, viewport_index),
    }
}

fn cmd_extract(input: &Path, fov_deg: f64, dims: Option<usize>, out_dir: &Path) -> Result<()> {
    let erp = ErpImage::load_png(input)?;
    let side = dims.unwrap_or(erp.height / 2);
    let fov = FieldOfView::square(fov_deg)?;
    let plan = plan_coverage(fov, side, side)?;
    let viewports = extract_plan(&erp, &plan)?;
    std::fs::create_dir_all(out_dir)?;
    for (i, (vp, c)) in viewports.iter().zip(&plan.centers).enumerate() {
        let name = format!("vp_{i}_{}_{}.png", c.lon_deg, c.lat_deg);
        vp.save_png(&out_dir.join(name))?;
    }
    let manifest = serde_json::json!({
        "fov": { "h_deg": plan.fov.h_deg, "v_deg": plan.fov.v_deg },
        "dims": { "width": plan.viewport_width, "height": plan.viewport_height },
        "centers": plan
            .centers
            .iter()
            .map(|c| serde_json::json!({ "lon_deg": c.lon_deg, "lat_deg": c.lat_deg }))
            .collect::<Vec<_>>(),
    });
    let pretty = serde_json::to_string_pretty(&manifest).expect("plain JSON value serializes");
    atomic_write(&out_dir.join("plan.json"), pretty.as_bytes())?;
    println!("wrote {} viewports and plan.json to {}", viewports.len(), out_dir.display());
    Ok(())
}

/// Loads a checkpoint; when a config TOML is also given, the two must agree.
fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<CodecModel> {
    let model = CodecModel::load(checkpoint)?;
    if let Some(cfg_path) = config {
        let cfg = ModelConfig::from_toml(&std::fs::read_to_string(cfg_path)?)?;
        if cfg != model.config {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint {} was trained with a different architecture than {}",
                checkpoint.display(),
                cfg_path.display()
            )));
        }
    }
    Ok(model)
}

fn cmd_compress(
    input: &Path,
    config: Option<&Path>,
    checkpoint: &Path,
    out: &Path,
    lambda: f64,
    fov_deg: f64,
) -> Result<()> {
    let erp = ErpImage::load_png(input)?;
    let model = load_model(checkpoint, config)?;
    let opt = CompressOptions {
        fov: FieldOfView::square(fov_deg)?,
        viewport_width: model.config.viewport_width,
        viewport_height: model.config.viewport_height,
        lambda,
    };
    let bytes = compress(&erp, &model, &opt)?;
    atomic_write(out, &bytes)?;
    let parsed = Bitstream::from_bytes(&bytes)?;
    println!("bpi: {}", bytes.len() * 8);
    for (i, vp) in parsed.viewports.iter().enumerate() {
        println!(
            "viewport {i}: {} bits (hyper {}, latent {})",
            (vp.z.len() + vp.y.len()) * 8,
            vp.z.len() * 8,
            vp.y.len() * 8
        );
    }
    Ok(())
}

fn cmd_decompress(input: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let bytes = std::fs::read(input)?;
    let model = CodecModel::load(checkpoint)?;
    let decoded = decompress(&bytes, &model)?;
    decoded.erp.save_png(out)?;
    println!("wrote {} ({} viewports decoded)", out.display(), decoded.viewports.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &Path,
    dataset: Option<&Path>,
    synthetic: usize,
    out: &Path,
    steps: usize,
    lambda: f64,
    lr: f64,
    seed: u64,
    log: Option<&Path>,
    log_every: usize,
) -> Result<()> {
    let cfg = ModelConfig::from_toml(&std::fs::read_to_string(config)?)?;
    let seed = match std::env::var("VPNC_SEED") {
        Ok(s) => s
            .parse::<u64>()
            .map_err(|_| Error::invalid(format!("VPNC_SEED must be an integer, got '{s}'")))?,
        Err(_) => seed,
    };
    let plan = plan_coverage(
        FieldOfView::square(90.0)?,
        cfg.viewport_width,
        cfg.viewport_height,
    )?;
    let erps: Vec<ErpImage> = match dataset {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::invalid(format!("no PNG files in {}", dir.display())));
            }
            paths.iter().map(|p| ErpImage::load_png(p)).collect::<Result<_>>()?
        }
        None => {
            if synthetic == 0 {
                return Err(Error::invalid("--synthetic must be at least 1"));
            }
            let h = 2 * cfg.viewport_height;
            (0..synthetic).map(|i| synthetic_erp(2 * h, h, seed ^ (i as u64) << 32)).collect()
        }
    };
    let dataset_items: Vec<Vec<_>> =
        erps.iter().map(|e| extract_plan(e, &plan)).collect::<Result<_>>()?;
    let mut model = CodecModel::new(cfg, seed)?;
    let opt = TrainOptions { lambda, steps, learning_rate: lr, seed, log_every };
    let outcome = train(&mut model, &dataset_items, &opt)?;
    if let Some(log_path) = log {
        let mut lines = String::new();
        for rec in &outcome.records {
            lines.push_str(&serde_json::to_string(rec).expect("log record serializes"));
            lines.push('\n');
        }
        atomic_write(log_path, lines.as_bytes())?;
    }
    model.save(out)?;
    println!(
        "trained {steps} steps on {} panoramas, final loss {:.4}, wrote {}",
        erps.len(),
        outcome.final_loss,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    reference: &Path,
    reconstruction: Option<&Path>,
    stream: Option<&Path>,
    checkpoint: Option<&Path>,
    redundancy_dir: Option<&Path>,
) -> Result<()> {
    let source = ErpImage::load_png(reference)?;
    let (recon, stream_bytes) = match (reconstruction, stream) {
        (Some(path), None) => (ErpImage::load_png(path)?, None),
        (None, Some(path)) => {
            let bytes = std::fs::read(path)?;
            let model = CodecModel::load(checkpoint.expect("clap enforces --checkpoint"))?;
            let decoded = decompress(&bytes, &model)?;
            if let Some(dir) = redundancy_dir {
                std::fs::create_dir_all(dir)?;
                let maps = latent_diagnostics(&bytes, &model)?;
                for (i, (y_hat, mu, sigma)) in maps.iter().enumerate() {
                    let map = redundancy_map(y_hat, mu, sigma);
                    let gray = redundancy_to_gray(&map);
                    let (h, w) = (map.shape()[0], map.shape()[1]);
                    save_gray_png(&dir.join(format!("redundancy_vp{i}.png")), w, h, &gray)?;
                }
            }
            (decoded.erp, Some(bytes))
        }
        _ => {
            return Err(Error::invalid(
                "pass exactly one of --reconstruction or --stream",
            ))
        }
    };
    match v_psnr(&source, &recon)? {
        Some(db) => println!("v_psnr: {db:.4} dB"),
        None => println!("v_psnr: exact (zero error)"),
    }
    println!("v_ssim: {:.6}", v_ssim(&source, &recon)?);
    if let Some(bytes) = stream_bytes {
        println!("bpi: {}", bytes.len() * 8);
    }
    Ok(())
}

fn cmd_rd_sweep(
    checkpoints: &[String],
    images: Option<&Path>,
    synthetic: usize,
    out: &Path,
    svg: Option<&Path>,
) -> Result<()> {
    let mut pairs: Vec<(f64, PathBuf)> = Vec::new();
    for spec in checkpoints {
        let (lambda, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected LAMBDA=PATH, got '{spec}'")))?;
        let lambda: f64 = lambda
            .parse()
            .map_err(|_| Error::invalid(format!("bad lambda '{lambda}' in '{spec}'")))?;
        pairs.push((lambda, PathBuf::from(path)));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points: Vec<RdPoint> = Vec::new();
    let mut eval_erps: Vec<ErpImage> = Vec::new();
    for (lambda, path) in &pairs {
        if !path.exists() {
            println!("missing checkpoint for lambda {lambda}: {}", path.display());
            continue;
        }
        let model = CodecModel::load(path)?;
        if eval_erps.is_empty() {
            eval_erps = match images {
                Some(dir) => {
                    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "png"))
                        .collect();
                    paths.sort();
                    if paths.is_empty() {
                        return Err(Error::invalid(format!("no PNG files in {}", dir.display())));
                    }
                    paths.iter().map(|p| ErpImage::load_png(p)).collect::<Result<_>>()?
                }
                None => {
                    if synthetic == 0 {
                        return Err(Error::invalid("--synthetic must be at least 1"));
                    }
                    let h = 2 * model.config.viewport_height;
                    (0..synthetic).map(|i| synthetic_erp(2 * h, h, 700_000 + i as u64)).collect()
                }
            };
        }
        let m = evaluate_model(&model, &eval_erps, *lambda)?;
        points.push(RdPoint {
            model: model.config.kind.to_string(),
            vpct: model.config.use_vpct,
            lambda: *lambda,
            bpi: m.bpi,
            v_psnr: m.v_psnr,
            v_ssim: m.v_ssim,
        });
        println!("lambda {lambda}: bpi {:.0}, v_psnr {:.3}, v_ssim {:.4}", m.bpi, m.v_psnr, m.v_ssim);
    }
    atomic_write(out, rd_csv(&points).as_bytes())?;
    for note in monotonicity_report(&points) {
        println!("ordering violation: {note}");
    }
    if let Some(svg_path) = svg {
        atomic_write(svg_path, rd_svg(&points).as_bytes())?;
    }
    println!("wrote {} rows to {}", points.len(), out.display());
    Ok(())
}

fn cmd_mask_dump(n: usize, viewport_index: Option<usize>) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("--n must be at least 1"));
    }
    let cell = |allowed: bool| if allowed { "0" } else { "-inf" };
    match viewport_index {
        None => {
            for q in 0..n {
                let row: Vec<&str> = (0..n).map(|k| cell(intra_allowed(q, k))).collect();
                println!("{}", row.join(" "));
            }
        }
        Some(i) => {
            let keys = (i + 1) * n;
            for q in 0..n {
                let row: Vec<&str> = (0..keys).map(|k| cell(cross_allowed(q, k, n, i))).collect();
                println!("{}", row.join(" "));
            }
        }
    }
    Ok(())
}
