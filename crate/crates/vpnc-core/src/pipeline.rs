//! End-to-end panorama coding: coverage planning, per-viewport sequential
//! latent coding against the learned entropy models, container assembly,
//! and reconstruction back to an equirectangular image.
//!
//! The encoder and decoder run the identical f64 parameter passes over the
//! identical progressively-filled buffers, so the Gaussian parameters
//! (and therefore every coding table) match bitwise on both sides.

use crate::codec::config::lambda_index;
use crate::codec::transforms::hyper_chain;
use crate::codec::{CodecModel, EntropyInputs, FactorizedBranch};
use crate::coding::{
    Bitstream, BitstreamHeader, CodingDistribution, RangeDecoder, RangeEncoder, SymbolChecksum,
    ViewportPayload, LAMBDA_CUSTOM,
};
use crate::error::{Error, Result};
use crate::geometry::{
    extract_plan, plan_coverage, reassemble_erp, ErpImage, ExtractionPlan, FieldOfView,
    ViewportImage,
};
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// Writes through a sibling temp file and renames, so readers never observe
/// a half-written artifact and an interrupted run leaves the old file valid.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp_name = path.as_os_str().to_os_string();
    tmp_name.push(".part");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).map_err(Error::from)
}

/// Nearest integer, ties away from zero, clamped into the escape-codable
/// range. The clamp is unreachable for any sane model; it only guarantees
/// the coder cannot be handed an unrepresentable symbol.
fn round_symbol(x: f64) -> i64 {
    (x.round() as i64).clamp(-32768, 32767)
}

/// Integer-quantized copy of a feature map (the values the decoder sees).
fn quantize(map: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_vec(
        map.shape().to_vec(),
        map.data().iter().map(|&v| round_symbol(v) as f64).collect(),
    )
}

/// Codes a (C, h, w) map channel-major with per-channel static tables and
/// appends the symbol checksum. Values must already be integers. Returns
/// the chunk and the analytic rate (sum of per-symbol table bits).
fn encode_static(map: &Tensor<f64>, tables: &[CodingDistribution]) -> (Vec<u8>, f64) {
    let s = map.shape();
    assert_eq!(s.len(), 3, "coded map must be (C, h, w)");
    assert_eq!(s[0], tables.len(), "one coding table per channel");
    let per = s[1] * s[2];
    let mut enc = RangeEncoder::new();
    let mut ck = SymbolChecksum::new();
    let mut analytic = 0.0;
    for c in 0..s[0] {
        for p in 0..per {
            let sym = round_symbol(map.data()[c * per + p]);
            tables[c].encode_value(&mut enc, sym);
            analytic += tables[c].bits_for(sym);
            ck.update(sym);
        }
    }
    let mut chunk = enc.finish();
    chunk.extend_from_slice(&ck.value().to_le_bytes());
    (chunk, analytic)
}

/// Splits a coded chunk into range payload and expected checksum.
fn split_chunk<'a>(chunk: &'a [u8], what: &str) -> Result<(&'a [u8], u32)> {
    if chunk.len() < 6 {
        return Err(Error::corrupt(
            chunk.len(),
            format!("{what} is {} bytes, too short to hold a coded payload", chunk.len()),
        ));
    }
    let (payload, tail) = chunk.split_at(chunk.len() - 4);
    let expect = u32::from_le_bytes(tail.try_into().expect("4-byte checksum"));
    Ok((payload, expect))
}

fn verify_checksum(ck: &SymbolChecksum, expect: u32, payload_len: usize, what: &str) -> Result<()> {
    if ck.value() != expect {
        return Err(Error::corrupt(
            payload_len,
            format!("{what} checksum mismatch: decoded symbols do not match the encoder's"),
        ));
    }
    Ok(())
}

fn decode_static(
    chunk: &[u8],
    shape: Vec<usize>,
    tables: &[CodingDistribution],
    what: &str,
) -> Result<Tensor<f64>> {
    let (payload, expect) = split_chunk(chunk, what)?;
    assert_eq!(shape.len(), 3, "decoded map must be (C, h, w)");
    assert_eq!(shape[0], tables.len(), "one coding table per channel");
    let per = shape[1] * shape[2];
    let mut dec = RangeDecoder::new(payload)?;
    let mut ck = SymbolChecksum::new();
    let mut data = vec![0.0f64; shape[0] * per];
    for c in 0..shape[0] {
        for p in 0..per {
            let sym = tables[c].decode_value(&mut dec)?;
            ck.update(sym);
            data[c * per + p] = sym as f64;
        }
    }
    verify_checksum(&ck, expect, payload.len(), what)?;
    Ok(Tensor::from_vec(shape, data))
}

/// Codes one viewport's latent with conditional Gaussians, filling the
/// reconstruction buffer position by position exactly as the decoder will.
/// Returns the coded chunk and the reconstructed latent.
fn encode_gaussian(
    model: &CodecModel,
    y: &Tensor<f64>,
    theta_h: Option<&Tensor<f64>>,
    prev: &[Tensor<f64>],
    viewport_index: usize,
) -> Result<(Vec<u8>, Tensor<f64>, f64)> {
    let cfg = &model.config;
    let (lh, lw) = cfg.latent_dims();
    let (n, cy) = (lh * lw, cfg.latent_channels);
    assert_eq!(y.shape(), &[cy, lh, lw], "latent shape disagrees with the model");
    let mut buffer = Tensor::zeros(vec![cy, lh, lw]);
    let mut enc = RangeEncoder::new();
    let mut ck = SymbolChecksum::new();
    let mut analytic = 0.0;
    // Without spatial context or cross-viewport attention the parameters
    // never read the buffer, so a single pass covers every position.
    let sequential = cfg.kind.has_context() || cfg.use_vpct;
    let mut params: Option<(Tensor<f64>, Tensor<f64>)> = None;
    for pos in 0..n {
        if params.is_none() || sequential {
            params = Some(model.conditional_params(&EntropyInputs {
                buffer: &buffer,
                theta_h,
                prev,
                viewport_index,
            })?);
        }
        let (mu, sigma) = params.as_ref().expect("just computed");
        for c in 0..cy {
            let m = mu.data()[pos * cy + c];
            let s = sigma.data()[pos * cy + c];
            let sym = round_symbol(y.data()[c * n + pos] - m);
            let dist = CodingDistribution::from_gaussian(0.0, s);
            dist.encode_value(&mut enc, sym);
            analytic += dist.bits_for(sym);
            ck.update(sym);
            buffer.data_mut()[c * n + pos] = sym as f64 + m;
        }
    }
    let mut chunk = enc.finish();
    chunk.extend_from_slice(&ck.value().to_le_bytes());
    Ok((chunk, buffer, analytic))
}

fn decode_gaussian(
    model: &CodecModel,
    chunk: &[u8],
    theta_h: Option<&Tensor<f64>>,
    prev: &[Tensor<f64>],
    viewport_index: usize,
) -> Result<Tensor<f64>> {
    let cfg = &model.config;
    let (lh, lw) = cfg.latent_dims();
    let (n, cy) = (lh * lw, cfg.latent_channels);
    let (payload, expect) = split_chunk(chunk, "latent chunk")?;
    let mut buffer = Tensor::zeros(vec![cy, lh, lw]);
    let mut dec = RangeDecoder::new(payload)?;
    let mut ck = SymbolChecksum::new();
    let sequential = cfg.kind.has_context() || cfg.use_vpct;
    let mut params: Option<(Tensor<f64>, Tensor<f64>)> = None;
    for pos in 0..n {
        if params.is_none() || sequential {
            params = Some(model.conditional_params(&EntropyInputs {
                buffer: &buffer,
                theta_h,
                prev,
                viewport_index,
            })?);
        }
        let (mu, sigma) = params.as_ref().expect("just computed");
        for c in 0..cy {
            let m = mu.data()[pos * cy + c];
            let s = sigma.data()[pos * cy + c];
            let sym = CodingDistribution::from_gaussian(0.0, s).decode_value(&mut dec)?;
            ck.update(sym);
            buffer.data_mut()[c * n + pos] = sym as f64 + m;
        }
    }
    verify_checksum(&ck, expect, payload.len(), "latent chunk")?;
    Ok(buffer)
}

/// Precomputed per-channel tables for the static (unconditioned) densities.
pub struct CodingTables {
    fy: Option<Vec<CodingDistribution>>,
    fz: Option<Vec<CodingDistribution>>,
}

pub fn build_tables(model: &CodecModel) -> CodingTables {
    let cfg = &model.config;
    CodingTables {
        fy: (!cfg.kind.gaussian_conditioning(cfg.use_vpct))
            .then(|| model.factorized_tables(FactorizedBranch::Latent)),
        fz: cfg.kind.has_hyper().then(|| model.factorized_tables(FactorizedBranch::Hyper)),
    }
}

/// One coded viewport plus the byproducts callers need: the reconstructed
/// latent (conditioning for later viewports) and the analytic rate the
/// entropy model assigned (for rate-accuracy accounting).
pub struct EncodedViewport {
    pub payload: ViewportPayload,
    pub y_hat: Tensor<f64>,
    pub analytic_bits: f64,
}

/// Codes one viewport's latent (and hyper-latent when the model has one).
/// `prev` holds the reconstructed latents of earlier viewports in plan
/// order.
pub fn encode_latents(
    model: &CodecModel,
    tables: &CodingTables,
    y: &Tensor<f64>,
    prev: &[Tensor<f64>],
    viewport_index: usize,
) -> Result<EncodedViewport> {
    let cfg = &model.config;
    let mut payload = ViewportPayload::default();
    let mut theta_h = None;
    let mut analytic_bits = 0.0;
    if cfg.kind.has_hyper() {
        let z = model.hyper_analysis64(y);
        let z_hat = quantize(&z);
        let (chunk, zbits) = encode_static(&z_hat, tables.fz.as_ref().expect("hyper tables"));
        payload.z = chunk;
        analytic_bits += zbits;
        theta_h = Some(model.hyper_synthesis64(&z_hat));
    }
    let y_hat = if cfg.kind.gaussian_conditioning(cfg.use_vpct) {
        let (chunk, y_hat, ybits) =
            encode_gaussian(model, y, theta_h.as_ref(), prev, viewport_index)?;
        payload.y = chunk;
        analytic_bits += ybits;
        y_hat
    } else {
        let y_hat = quantize(y);
        let (chunk, ybits) = encode_static(&y_hat, tables.fy.as_ref().expect("latent tables"));
        payload.y = chunk;
        analytic_bits += ybits;
        y_hat
    };
    Ok(EncodedViewport { payload, y_hat, analytic_bits })
}

/// Inverse of [`encode_latents`]; returns the reconstructed latent.
pub fn decode_latents(
    model: &CodecModel,
    tables: &CodingTables,
    payload: &ViewportPayload,
    prev: &[Tensor<f64>],
    viewport_index: usize,
) -> Result<Tensor<f64>> {
    let cfg = &model.config;
    let (lh, lw) = cfg.latent_dims();
    let mut theta_h = None;
    if cfg.kind.has_hyper() {
        let chain = hyper_chain(lh, lw);
        let shape = vec![cfg.hyper_channels, chain[2].0, chain[2].1];
        let z_hat =
            decode_static(&payload.z, shape, tables.fz.as_ref().expect("hyper tables"), "hyper chunk")?;
        theta_h = Some(model.hyper_synthesis64(&z_hat));
    } else if !payload.z.is_empty() {
        return Err(Error::corrupt(0, "stream carries a hyper chunk the model cannot use"));
    }
    if cfg.kind.gaussian_conditioning(cfg.use_vpct) {
        decode_gaussian(model, &payload.y, theta_h.as_ref(), prev, viewport_index)
    } else {
        let shape = vec![cfg.latent_channels, lh, lw];
        decode_static(&payload.y, shape, tables.fy.as_ref().expect("latent tables"), "latent chunk")
    }
}

pub struct CompressOptions {
    pub fov: FieldOfView,
    pub viewport_width: usize,
    pub viewport_height: usize,
    /// Rate weight used at training time; recorded in the header so tools
    /// can label the stream, not needed for decoding.
    pub lambda: f64,
}

pub fn compress(erp: &ErpImage, model: &CodecModel, opt: &CompressOptions) -> Result<Vec<u8>> {
    let cfg = &model.config;
    if opt.viewport_width != cfg.viewport_width || opt.viewport_height != cfg.viewport_height {
        return Err(Error::invalid(format!(
            "requested {}x{} viewports but the model is built for {}x{}",
            opt.viewport_width, opt.viewport_height, cfg.viewport_width, cfg.viewport_height
        )));
    }
    let plan = plan_coverage(opt.fov, opt.viewport_width, opt.viewport_height)?;
    if cfg.use_vpct && plan.centers.len() > cfg.max_viewports {
        return Err(Error::invalid(format!(
            "coverage plan needs {} viewports, model indexes at most {}",
            plan.centers.len(),
            cfg.max_viewports
        )));
    }
    let viewports = extract_plan(erp, &plan)?;
    let tables = build_tables(model);
    let mut prev: Vec<Tensor<f64>> = Vec::new();
    let mut payloads = Vec::new();
    for vp in &viewports {
        let y = model.analysis64(vp);
        let coded = encode_latents(model, &tables, &y, &prev, prev.len())?;
        payloads.push(coded.payload);
        prev.push(coded.y_hat);
    }
    let header = BitstreamHeader {
        erp_width: erp.width as u32,
        erp_height: erp.height as u32,
        fov: opt.fov,
        viewport_width: opt.viewport_width as u32,
        viewport_height: opt.viewport_height as u32,
        plan_id: 0,
        model_kind: cfg.kind.code(),
        use_vpct: cfg.use_vpct,
        lambda_index: lambda_index(opt.lambda).unwrap_or(LAMBDA_CUSTOM),
        model_hash: model.hash(),
    };
    Ok(Bitstream { header, viewports: payloads }.to_bytes())
}

#[derive(Debug)]
pub struct Decoded {
    pub erp: ErpImage,
    pub viewports: Vec<ViewportImage>,
    pub plan: ExtractionPlan,
    pub header: BitstreamHeader,
}

pub fn decompress(bytes: &[u8], model: &CodecModel) -> Result<Decoded> {
    let bs = Bitstream::from_bytes(bytes)?;
    let h = bs.header.clone();
    let cfg = &model.config;
    if h.model_hash != model.hash() {
        return Err(Error::CheckpointMismatch(
            "stream was produced by a different model (embedded hash disagrees)".into(),
        ));
    }
    // Header offsets below refer to the byte positions in FORMAT.md.
    if h.plan_id != 0 {
        return Err(Error::corrupt(37, format!("unknown coverage plan id {}", h.plan_id)));
    }
    if h.model_kind != cfg.kind.code() {
        return Err(Error::corrupt(38, "model kind byte disagrees with the verified checkpoint"));
    }
    if h.use_vpct != cfg.use_vpct {
        return Err(Error::corrupt(39, "attention flag disagrees with the verified checkpoint"));
    }
    if h.erp_width as usize != 2 * h.erp_height as usize || h.erp_height == 0 {
        return Err(Error::corrupt(5, format!("output size {}x{} is not 2:1", h.erp_width, h.erp_height)));
    }
    if h.viewport_width as usize != cfg.viewport_width
        || h.viewport_height as usize != cfg.viewport_height
    {
        return Err(Error::corrupt(29, "viewport size disagrees with the verified checkpoint"));
    }
    let plan = plan_coverage(h.fov, h.viewport_width as usize, h.viewport_height as usize)?;
    if bs.viewports.len() != plan.centers.len() {
        return Err(Error::corrupt(
            73,
            format!(
                "stream holds {} viewports, coverage plan needs {}",
                bs.viewports.len(),
                plan.centers.len()
            ),
        ));
    }
    if cfg.use_vpct && plan.centers.len() > cfg.max_viewports {
        return Err(Error::corrupt(73, "viewport count exceeds the model's indexed capacity"));
    }
    let tables = build_tables(model);
    let mut prev: Vec<Tensor<f64>> = Vec::new();
    let mut images = Vec::new();
    for payload in &bs.viewports {
        let y_hat = decode_latents(model, &tables, payload, &prev, prev.len())?;
        images.push(model.synthesis64(&y_hat)?);
        prev.push(y_hat);
    }
    let erp = reassemble_erp(&images, &plan, h.erp_width as usize, h.erp_height as usize)?;
    Ok(Decoded { erp, viewports: images, plan, header: h })
}

/// Per-viewport (latent, mu, sigma) recovered from a stream, for
/// redundancy-map export. Causality makes one full-buffer parameter pass
/// reproduce exactly the values the coder used at every position, so no
/// sequential replay is needed here.
pub fn latent_diagnostics(
    bytes: &[u8],
    model: &CodecModel,
) -> Result<Vec<(Tensor<f64>, Tensor<f64>, Tensor<f64>)>> {
    let cfg = &model.config;
    if !cfg.kind.gaussian_conditioning(cfg.use_vpct) {
        return Err(Error::invalid(
            "this model codes latents with a static density; there are no conditional parameters to map",
        ));
    }
    let bs = Bitstream::from_bytes(bytes)?;
    if bs.header.model_hash != model.hash() {
        return Err(Error::CheckpointMismatch(
            "stream was produced by a different model (embedded hash disagrees)".into(),
        ));
    }
    let tables = build_tables(model);
    let mut prev: Vec<Tensor<f64>> = Vec::new();
    let mut out = Vec::new();
    for payload in &bs.viewports {
        let y_hat = decode_latents(model, &tables, payload, &prev, prev.len())?;
        let theta_h = cfg
            .kind
            .has_hyper()
            .then(|| {
                let chain = hyper_chain(cfg.latent_dims().0, cfg.latent_dims().1);
                let shape = vec![cfg.hyper_channels, chain[2].0, chain[2].1];
                decode_static(&payload.z, shape, tables.fz.as_ref().expect("hyper tables"), "hyper chunk")
                    .map(|z_hat| model.hyper_synthesis64(&z_hat))
            })
            .transpose()?;
        let (mu, sigma) = model.conditional_params(&EntropyInputs {
            buffer: &y_hat,
            theta_h: theta_h.as_ref(),
            prev: &prev,
            viewport_index: prev.len(),
        })?;
        out.push((y_hat.clone(), mu, sigma));
        prev.push(y_hat);
    }
    Ok(out)
}
