//! Hot-path benchmarks: viewport extraction, the analysis transform,
//! range coding, and the cross-viewport attention forward pass.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use vpnc_bench::bench_erp;
use vpnc_core::codec::nn::ParamBindings;
use vpnc_core::codec::{CodecModel, ModelConfig, ModelKind};
use vpnc_core::coding::{CodingDistribution, RangeDecoder, RangeEncoder};
use vpnc_core::geometry::{extract_viewport, FieldOfView, ViewportCenter};
use vpnc_core::tensor::{Graph, Tensor};
use vpnc_core::vpct::{bind_vpct, vpct_forward};

fn extraction(c: &mut Criterion) {
    let erp = bench_erp();
    let fov = FieldOfView::square(90.0).unwrap();
    let center = ViewportCenter::new(45.0, 30.0);
    c.bench_function("extract_viewport_128", |b| {
        b.iter(|| extract_viewport(black_box(&erp), center, fov, 128, 128).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let model = CodecModel::new(ModelConfig::tiny(ModelKind::Hyperprior, false), 7).unwrap();
    let erp = bench_erp();
    let vp = extract_viewport(&erp, ViewportCenter::new(0.0, 0.0), FieldOfView::square(90.0).unwrap(), 64, 64)
        .unwrap();
    c.bench_function("analysis_transform_64", |b| b.iter(|| black_box(model.analysis64(black_box(&vp)))));
}

fn range_coding(c: &mut Criterion) {
    let dist = CodingDistribution::from_gaussian(0.0, 4.0);
    let symbols: Vec<i64> = (0..4096).map(|i| ((i * 37) % 23) as i64 - 11).collect();
    c.bench_function("range_encode_4096", |b| {
        b.iter(|| {
            let mut enc = RangeEncoder::new();
            for &s in black_box(&symbols) {
                dist.encode_value(&mut enc, s);
            }
            black_box(enc.finish())
        })
    });
    let mut enc = RangeEncoder::new();
    for &s in &symbols {
        dist.encode_value(&mut enc, s);
    }
    let coded = enc.finish();
    c.bench_function("range_decode_4096", |b| {
        b.iter(|| {
            let mut dec = RangeDecoder::new(black_box(&coded)).unwrap();
            let mut out = Vec::with_capacity(symbols.len());
            for _ in 0..symbols.len() {
                out.push(dist.decode_value(&mut dec).unwrap());
            }
            black_box(out)
        })
    });
}

fn vpct(c: &mut Criterion) {
    let cfg = ModelConfig::tiny(ModelKind::Joint, true);
    let model = CodecModel::new(cfg.clone(), 11).unwrap();
    let n = cfg.latent_tokens();
    let tokens: Vec<Tensor<f64>> = (0..2)
        .map(|v| {
            Tensor::from_vec(
                vec![n, cfg.latent_channels],
                (0..n * cfg.latent_channels).map(|i| ((i + v) % 7) as f64 - 3.0).collect(),
            )
        })
        .collect();
    c.bench_function("vpct_forward_2_viewports", |b| {
        b.iter(|| {
            let mut g: Graph<f64> = Graph::new();
            let mut bindings = ParamBindings::new();
            let params = bind_vpct(&mut bindings, &mut g, &model.params, &cfg);
            let vars: Vec<_> = tokens.iter().map(|t| g.input(t.clone())).collect();
            black_box(vpct_forward(&mut g, &params, &cfg, &vars))
        })
    });
}

criterion_group!(benches, extraction, analysis, range_coding, vpct);
criterion_main!(benches);
