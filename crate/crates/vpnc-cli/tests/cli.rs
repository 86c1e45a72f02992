//! Black-box checks of the command-line surface: file layouts, manifest
//! shape, golden mask dumps, and error exit codes.

use std::path::PathBuf;
use std::process::Command;

use vpnc_core::harness::synthetic_erp;

fn vpnc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vpnc"))
}

#[test]
fn extract_writes_plan_and_viewports() {
    let dir = tempfile::tempdir().unwrap();
    let erp_path = dir.path().join("scene.png");
    synthetic_erp(1024, 512, 3).save_png(&erp_path).unwrap();
    let out_dir = dir.path().join("views");

    let st = vpnc()
        .arg("extract")
        .arg(&erp_path)
        .arg("--out-dir")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(st.success(), "extract with defaults failed");

    let mut pngs: Vec<PathBuf> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    assert_eq!(pngs.len(), 6, "default 90-degree plan yields six viewports");
    for p in &pngs {
        let img = image::open(p).unwrap();
        assert_eq!(
            (img.width(), img.height()),
            (256, 256),
            "default viewport side is half the panorama height"
        );
    }

    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["fov"]["h_deg"], 90.0);
    assert_eq!(plan["fov"]["v_deg"], 90.0);
    assert_eq!(plan["dims"]["width"], 256);
    assert_eq!(plan["dims"]["height"], 256);
    let centers = plan["centers"].as_array().unwrap();
    let expect = [
        (0.0, 0.0),
        (90.0, 0.0),
        (-180.0, 0.0),
        (-90.0, 0.0),
        (0.0, 90.0),
        (0.0, -90.0),
    ];
    assert_eq!(centers.len(), expect.len());
    for (c, &(lon, lat)) in centers.iter().zip(&expect) {
        assert_eq!(c["lon_deg"].as_f64().unwrap(), lon, "manifest centers must stay in plan order");
        assert_eq!(c["lat_deg"].as_f64().unwrap(), lat);
    }
}

#[test]
fn extract_narrow_fov_covers_with_more_viewports() {
    let dir = tempfile::tempdir().unwrap();
    let erp_path = dir.path().join("scene.png");
    synthetic_erp(512, 256, 4).save_png(&erp_path).unwrap();
    let out_dir = dir.path().join("views");

    let st = vpnc()
        .arg("extract")
        .arg(&erp_path)
        .args(["--fov", "45", "--dims", "112"])
        .arg("--out-dir")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(st.success(), "extract at 45 degrees failed");
    let pngs = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 22, "45-degree plan yields 8 + 6 + 6 + 2 viewports");
}

#[test]
fn extract_missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("views");
    let out = vpnc()
        .arg("extract")
        .arg(dir.path().join("absent.png"))
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "unreadable input is an input error");
    assert!(!out_dir.exists(), "failed extraction must not create the output directory");
}

#[test]
fn mask_dump_goldens() {
    let run = |args: &[&str]| -> String {
        let out = vpnc().arg("mask-dump").args(args).output().unwrap();
        assert!(out.status.success(), "mask-dump {args:?} failed");
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(run(&["--n", "1"]), "0\n");
    assert_eq!(run(&["--n", "3"]), "0 -inf -inf\n0 0 -inf\n0 0 0\n");
    assert_eq!(
        run(&["--n", "2", "--viewport-index", "1"]),
        "0 0 0 -inf\n0 0 0 0\n",
        "with one coded viewport its two tokens are fully visible"
    );
    let out = vpnc().args(["mask-dump", "--n", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "zero tokens is an input error");
}

#[test]
fn eval_scores_identical_images_as_exact() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    synthetic_erp(512, 256, 9).save_png(&a).unwrap();
    let out = vpnc()
        .arg("eval")
        .arg("--reference")
        .arg(&a)
        .arg("--reconstruction")
        .arg(&a)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("v_psnr: exact"), "self-comparison has zero error, got: {stdout}");
    assert!(stdout.contains("v_ssim: 1.000000"), "self-comparison ssim is 1, got: {stdout}");
}

#[test]
fn eval_requires_exactly_one_comparison_source() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    synthetic_erp(512, 256, 9).save_png(&a).unwrap();
    let out = vpnc().arg("eval").arg("--reference").arg(&a).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "neither --reconstruction nor --stream given");
}

#[test]
fn rd_sweep_writes_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = vpnc_core::codec::ModelConfig::tiny(vpnc_core::codec::ModelKind::Factorized, false);
    let cfg_path = dir.path().join("model.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let st = vpnc()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--steps", "4", "--synthetic", "1", "--log-every", "0"])
        .arg("--out")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(st.success(), "short factorized training failed");

    let csv_path = dir.path().join("rd.csv");
    let st = vpnc()
        .arg("rd-sweep")
        .arg("--checkpoint")
        .arg(format!("0.013={}", ckpt.display()))
        .args(["--synthetic", "1"])
        .arg("--out")
        .arg(&csv_path)
        .status()
        .unwrap();
    assert!(st.success(), "rd-sweep failed");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("model,vpct,lambda,bpi,v_psnr,v_ssim"),
        "sweep CSV header"
    );
    let row = lines.next().expect("one data row per checkpoint");
    assert!(
        row.starts_with("factorized,false,0.013,"),
        "row identifies the model arm: {row}"
    );
    assert_eq!(lines.next(), None, "exactly one data row");
}
