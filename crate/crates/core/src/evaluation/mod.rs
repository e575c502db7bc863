//! Verification thresholds, attack success rate and image-quality metrics.

mod fid;
mod quality;
mod report;
mod verification;

pub use fid::fid;
pub use quality::{gaussian_taps, psnr, ssim, to_unit_range, SsimConfig, PSNR_CAP};
pub use report::{
    asr_bar_chart, calibrate_models, evaluate_run, read_rows, write_rows, Evaluation, ImageRow,
    MetricsReport, ModelMetrics, ModelRole, Protection, ReferenceContext, REFERENCE_CONTEXT,
};
pub use verification::{
    asr, asr_from_scores, calibrate_threshold, cosine_rows, eer_operating_point, false_accept_rate,
    similarities_to, VerificationThreshold, MIN_CALIBRATION_PAIRS,
};
