//! Scene grouping, image-quality metrics and aggregation.

pub mod group;
pub mod metrics;
pub mod report;

pub use group::{classify_group, SceneGroup};
pub use metrics::{denoise_metrics, inversion_metrics, iou, mae, mape, mre, mse, psnr, ssim, DenoiseMetrics, InversionMetrics, SsimConstants};
pub use report::{aggregate, iou_threshold, predict, score_sample, EvalReport, GroupSummary, Prediction, SampleMetrics};
