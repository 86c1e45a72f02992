//! Writes a directory of synthetic 2:1 panoramas, handy as a quick dataset
//! for `vpnc train --dataset` and `vpnc rd-sweep --images`.
//!
//! Usage: cargo run --example synth_erps -- <out_dir> [count] [height]

use vpnc_core::harness::synthetic_erp;

fn main() {
    let mut args = std::env::args().skip(1);
    let out_dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "erps".into()));
    let count: usize =
        args.next().map(|s| s.parse().expect("count must be an integer")).unwrap_or(4);
    let height: usize =
        args.next().map(|s| s.parse().expect("height must be an integer")).unwrap_or(256);
    std::fs::create_dir_all(&out_dir).expect("create output directory");
    for i in 0..count {
        let erp = synthetic_erp(2 * height, height, 1000 + i as u64);
        let path = out_dir.join(format!("erp_{i:03}.png"));
        erp.save_png(&path).expect("write panorama");
        println!("wrote {}", path.display());
    }
}
