use std::time::Instant;
use vpnc_core::codec::{ModelConfig, ModelKind};
use vpnc_core::harness::{desk_config, paired_experiment, PairedOptions};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let opt = PairedOptions {
        config: desk_config(ModelKind::Joint, false),
        lambdas: std::env::args().nth(2).map(|l| vec![l.parse().unwrap()]).unwrap_or(vec![0.013]),
        train_images: 3,
        eval_images: 2,
        erp_height: 128,
        steps,
        learning_rate: 8e-4,
        seed: 7,
    };
    let t0 = Instant::now();
    let mut marks: Vec<(f64, String)> = Vec::new();
    let runs = paired_experiment(&opt, |msg| {
        marks.push((t0.elapsed().as_secs_f64(), msg.to_string()));
        println!("[{:8.1}s] {msg}", t0.elapsed().as_secs_f64());
    })
    .unwrap();
    let _ = ModelConfig::tiny(ModelKind::Factorized, false);
    for r in &runs {
        println!(
            "lambda {}: base bpi {:.0} psnr {:.2} | vpct bpi {:.0} psnr {:.2}",
            r.lambda, r.base.bpi, r.base.v_psnr, r.with_vpct.bpi, r.with_vpct.v_psnr
        );
    }
    println!("total {:.1}s for {} steps x2 arms + eval", t0.elapsed().as_secs_f64(), steps);
}
