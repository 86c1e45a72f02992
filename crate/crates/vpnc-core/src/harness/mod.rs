//! Evaluation harness: quality metrics, synthetic panoramas, training,
//! and rate-distortion sweeps.

pub mod metrics;
pub mod sweep;
pub mod synth;
pub mod train;

pub use metrics::{
    bpi, eval_viewports, rd_loss, redundancy_map, redundancy_to_gray, save_gray_png, v_psnr,
    v_ssim,
};
pub use sweep::{
    desk_config, evaluate_model, monotonicity_report, paired_experiment, rd_csv, rd_svg,
    ArmMetrics, PairedOptions, PairedRun, RdPoint,
};
pub use synth::synthetic_erp;
pub use train::{train, TrainOptions, TrainOutcome, TrainRecord};
