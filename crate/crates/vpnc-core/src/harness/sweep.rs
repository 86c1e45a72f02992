//! Rate-distortion sweeps and the paired cross-viewport experiment.
//!
//! Everything here measures *actual coded streams* (container bytes, real
//! decode, viewport-pooled metrics), not training-time estimates, so the
//! reported points are what a user of the CLI would observe.

use crate::codec::{CodecModel, ModelConfig, ModelKind, VpctConfig};
use crate::coding::Bitstream;
use crate::error::Result;
use crate::geometry::{extract_plan, plan_coverage, ErpImage, FieldOfView};
use crate::harness::metrics::{bpi, v_psnr, v_ssim};
use crate::harness::synth::synthetic_erp;
use crate::harness::train::{train, TrainOptions};
use crate::pipeline::{compress, decompress, CompressOptions};

/// One evaluated rate-quality point. `v_psnr` is infinite when every
/// evaluation viewport reconstructed exactly.
#[derive(Debug, Clone)]
pub struct RdPoint {
    pub model: String,
    pub vpct: bool,
    pub lambda: f64,
    pub bpi: f64,
    pub v_psnr: f64,
    pub v_ssim: f64,
}

/// Stream-level measurements of one model over an evaluation set.
#[derive(Debug, Clone)]
pub struct ArmMetrics {
    /// Mean coded bits per viewport position (hyper plus latent chunks).
    pub per_viewport_bits: Vec<f64>,
    pub bpi: f64,
    pub v_psnr: f64,
    pub v_ssim: f64,
}

/// Compresses and decodes every panorama, pooling stream sizes and
/// viewport quality. All panoramas must share one size.
pub fn evaluate_model(
    model: &CodecModel,
    erps: &[ErpImage],
    lambda: f64,
) -> Result<ArmMetrics> {
    assert!(!erps.is_empty(), "evaluation set is empty");
    let opt = CompressOptions {
        fov: FieldOfView::square(90.0)?,
        viewport_width: model.config.viewport_width,
        viewport_height: model.config.viewport_height,
        lambda,
    };
    let mut per_vp: Vec<f64> = Vec::new();
    let mut total_bpi = 0.0;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for erp in erps {
        let bytes = compress(erp, model, &opt)?;
        total_bpi += bpi(bytes.len());
        let parsed = Bitstream::from_bytes(&bytes)?;
        if per_vp.is_empty() {
            per_vp = vec![0.0; parsed.viewports.len()];
        }
        assert_eq!(per_vp.len(), parsed.viewports.len(), "all panoramas share one plan");
        for (slot, payload) in per_vp.iter_mut().zip(&parsed.viewports) {
            *slot += ((payload.z.len() + payload.y.len()) * 8) as f64;
        }
        let out = decompress(&bytes, model)?;
        psnr_sum += v_psnr(erp, &out.erp)?.unwrap_or(f64::INFINITY);
        ssim_sum += v_ssim(erp, &out.erp)?;
    }
    let n = erps.len() as f64;
    for slot in &mut per_vp {
        *slot /= n;
    }
    Ok(ArmMetrics {
        per_viewport_bits: per_vp,
        bpi: total_bpi / n,
        v_psnr: psnr_sum / n,
        v_ssim: ssim_sum / n,
    })
}

/// CSV with the fixed schema, rows sorted by lambda ascending (model and
/// attention flag break ties so grouped curves stay together).
pub fn rd_csv(points: &[RdPoint]) -> String {
    let mut rows: Vec<&RdPoint> = points.iter().collect();
    rows.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.vpct.cmp(&b.vpct))
    });
    let mut s = String::from("model,vpct,lambda,bpi,v_psnr,v_ssim\n");
    for p in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.model, p.vpct, p.lambda, p.bpi, p.v_psnr, p.v_ssim
        ));
    }
    s
}

/// Reports rows that break the expected ordering: within one curve,
/// larger lambda should not decrease bits or quality. Violations are
/// returned for the caller to surface, never silently dropped.
pub fn monotonicity_report(points: &[RdPoint]) -> Vec<String> {
    let mut notes = Vec::new();
    let mut curves: Vec<(String, bool)> = Vec::new();
    for p in points {
        let key = (p.model.clone(), p.vpct);
        if !curves.contains(&key) {
            curves.push(key);
        }
    }
    for (model, vpct) in curves {
        let mut on_curve: Vec<&RdPoint> =
            points.iter().filter(|p| p.model == model && p.vpct == vpct).collect();
        on_curve.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        for pair in on_curve.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            if hi.bpi < lo.bpi {
                notes.push(format!(
                    "{model} vpct={vpct}: bpi fell from {} to {} as lambda rose {} -> {}",
                    lo.bpi, hi.bpi, lo.lambda, hi.lambda
                ));
            }
            if hi.v_psnr < lo.v_psnr {
                notes.push(format!(
                    "{model} vpct={vpct}: v_psnr fell from {} to {} as lambda rose {} -> {}",
                    lo.v_psnr, hi.v_psnr, lo.lambda, hi.lambda
                ));
            }
        }
    }
    notes
}

/// Minimal standalone SVG: one rate-quality polyline per curve.
pub fn rd_svg(points: &[RdPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let finite: Vec<&RdPoint> = points.iter().filter(|p| p.v_psnr.is_finite()).collect();
    if finite.is_empty() {
        return format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\
             <text x=\"20\" y=\"40\">no finite points</text></svg>"
        );
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &finite {
        x0 = x0.min(p.bpi);
        x1 = x1.max(p.bpi);
        y0 = y0.min(p.v_psnr);
        y1 = y1.max(p.v_psnr);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut curves: Vec<(String, bool)> = Vec::new();
    for p in &finite {
        let key = (p.model.clone(), p.vpct);
        if !curves.contains(&key) {
            curves.push(key);
        }
    }
    let mut body = String::new();
    body.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\
         <text x=\"{}\" y=\"{}\" font-size=\"12\">bits per image</text>\
         <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">viewport PSNR (dB)</text>",
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0 - 40.0,
        H - 20.0,
        H / 2.0,
        H / 2.0,
    ));
    body.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"10\">{:.0}</text>\
         <text x=\"{}\" y=\"{}\" font-size=\"10\">{:.0}</text>\
         <text x=\"8\" y=\"{}\" font-size=\"10\">{:.2}</text>\
         <text x=\"8\" y=\"{M}\" font-size=\"10\">{:.2}</text>",
        H - M + 14.0,
        x0,
        W - M - 20.0,
        H - M + 14.0,
        x1,
        H - M,
        y0,
        y1,
    ));
    for (ci, (model, vpct)) in curves.iter().enumerate() {
        let color = palette[ci % palette.len()];
        let mut pts: Vec<&&RdPoint> =
            finite.iter().filter(|p| &p.model == model && p.vpct == *vpct).collect();
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let path: Vec<String> =
            pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.bpi), sy(p.v_psnr))).collect();
        body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        ));
        for p in &pts {
            body.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                sx(p.bpi),
                sy(p.v_psnr)
            ));
        }
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{model}{}</text>",
            W - M - 150.0,
            M + 16.0 * ci as f64,
            if *vpct { " + cross-view" } else { "" }
        ));
    }
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">{body}</svg>")
}

/// Model scaled so a paired training comparison finishes on one CPU core
/// in minutes while keeping every architectural pathway live.
pub fn desk_config(kind: ModelKind, use_vpct: bool) -> ModelConfig {
    ModelConfig {
        kind,
        use_vpct,
        channels: 12,
        latent_channels: 8,
        hyper_channels: 6,
        context_channels: 16,
        ref_dim: 8,
        viewport_width: 64,
        viewport_height: 64,
        max_viewports: 6,
        vpct: VpctConfig { embed_dim: 16, heads: 2, layers: 1, global_channels: 8, mlp_ratio: 2 },
    }
}

pub struct PairedOptions {
    /// Architecture shared by both arms; its attention flag is overridden.
    pub config: ModelConfig,
    pub lambdas: Vec<f64>,
    pub train_images: usize,
    pub eval_images: usize,
    pub erp_height: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

pub struct PairedRun {
    pub lambda: f64,
    pub base: ArmMetrics,
    pub with_vpct: ArmMetrics,
}

/// Trains the same architecture with and without cross-viewport attention
/// (same seed, same data, same step budget) at each lambda and measures
/// real coded streams on held-out panoramas.
pub fn paired_experiment(
    opt: &PairedOptions,
    mut progress: impl FnMut(&str),
) -> Result<Vec<PairedRun>> {
    let plan = plan_coverage(
        FieldOfView::square(90.0)?,
        opt.config.viewport_width,
        opt.config.viewport_height,
    )?;
    let dataset: Vec<Vec<_>> = (0..opt.train_images)
        .map(|i| {
            let erp = synthetic_erp(2 * opt.erp_height, opt.erp_height, 10_000 + i as u64);
            extract_plan(&erp, &plan)
        })
        .collect::<Result<_>>()?;
    let eval: Vec<ErpImage> = (0..opt.eval_images)
        .map(|i| synthetic_erp(2 * opt.erp_height, opt.erp_height, 90_000 + i as u64))
        .collect();

    let mut runs = Vec::new();
    for &lambda in &opt.lambdas {
        let mut arms: Vec<ArmMetrics> = Vec::new();
        for use_vpct in [false, true] {
            let mut cfg = opt.config.clone();
            cfg.use_vpct = use_vpct;
            let mut model = CodecModel::new(cfg, opt.seed)?;
            let topt = TrainOptions {
                lambda,
                steps: opt.steps,
                learning_rate: opt.learning_rate,
                seed: opt.seed,
                log_every: 0,
            };
            let out = train(&mut model, &dataset, &topt)?;
            progress(&format!(
                "lambda {lambda} vpct={use_vpct}: trained {} steps, final loss {:.4}",
                opt.steps, out.final_loss
            ));
            let metrics = evaluate_model(&model, &eval, lambda)?;
            progress(&format!(
                "lambda {lambda} vpct={use_vpct}: bpi {:.0}, v_psnr {:.2}",
                metrics.bpi, metrics.v_psnr
            ));
            arms.push(metrics);
        }
        let with_vpct = arms.pop().expect("two arms");
        let base = arms.pop().expect("two arms");
        runs.push(PairedRun { lambda, base, with_vpct });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(model: &str, vpct: bool, lambda: f64, bpi: f64, psnr: f64) -> RdPoint {
        RdPoint { model: model.into(), vpct, lambda, bpi, v_psnr: psnr, v_ssim: 0.9 }
    }

    #[test]
    fn csv_is_sorted_by_lambda_with_header() {
        let pts = vec![
            point("joint", true, 0.048, 9000.0, 30.0),
            point("joint", true, 0.0018, 2000.0, 22.0),
        ];
        let csv = rd_csv(&pts);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,vpct,lambda,bpi,v_psnr,v_ssim");
        assert!(lines[1].starts_with("joint,true,0.0018,"));
        assert!(lines[2].starts_with("joint,true,0.048,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn monotonicity_violations_are_reported_not_hidden() {
        let ok = vec![
            point("joint", false, 0.0018, 2000.0, 22.0),
            point("joint", false, 0.048, 9000.0, 30.0),
        ];
        assert!(monotonicity_report(&ok).is_empty());
        let bad = vec![
            point("joint", false, 0.0018, 2000.0, 22.0),
            point("joint", false, 0.048, 1500.0, 21.0),
        ];
        let notes = monotonicity_report(&bad);
        assert_eq!(notes.len(), 2, "both the rate and the quality inversion get flagged");
    }

    #[test]
    fn svg_contains_a_polyline_per_curve() {
        let pts = vec![
            point("joint", false, 0.0018, 2000.0, 22.0),
            point("joint", false, 0.048, 9000.0, 30.0),
            point("joint", true, 0.0018, 1800.0, 22.1),
            point("joint", true, 0.048, 8800.0, 30.2),
        ];
        let svg = rd_svg(&pts);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
    }

    #[test]
    fn evaluate_model_measures_real_streams() {
        use crate::codec::ModelKind;
        let model = CodecModel::new(ModelConfig::tiny(ModelKind::Hyperprior, false), 2).unwrap();
        let erp = synthetic_erp(256, 128, 77);
        let m = evaluate_model(&model, &[erp], 0.013).unwrap();
        assert_eq!(m.per_viewport_bits.len(), 6);
        assert!(m.bpi > 0.0);
        let payload_bits: f64 = m.per_viewport_bits.iter().sum();
        assert!(payload_bits < m.bpi, "header bits must account for the difference");
        assert!(m.v_psnr.is_finite() || m.v_ssim == 1.0);
    }
}
