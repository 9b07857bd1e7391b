//! Evaluation outputs: per-sample CSV and a per-group JSON summary.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use voxinv_core::eval::{aggregate, DenoiseMetrics, EvalReport, GroupSummary, InversionMetrics, SampleMetrics, SceneGroup};

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};

/// One CSV row. Non-finite values are written as `inf` / `NaN`; a missing
/// IoU is an empty cell.
#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    group: String,
    denoise_ssim: f64,
    psnr: f64,
    denoise_mae: f64,
    mre: f64,
    inversion_ssim: f64,
    mse: f64,
    inversion_mae: f64,
    mape: f64,
    iou: Option<f64>,
}

pub fn samples_to_csv(samples: &[SampleMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in samples {
        w.serialize(Row {
            id: s.id.clone(),
            group: s.group.label().to_string(),
            denoise_ssim: s.denoise.ssim,
            psnr: s.denoise.psnr,
            denoise_mae: s.denoise.mae,
            mre: s.denoise.mre,
            inversion_ssim: s.inversion.ssim,
            mse: s.inversion.mse,
            inversion_mae: s.inversion.mae,
            mape: s.inversion.mape,
            iou: s.iou,
        })
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn samples_from_csv(bytes: &[u8]) -> Result<Vec<SampleMetrics>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| Error::Corrupt(format!("eval CSV: {e}")))?;
            let group = SceneGroup::from_label(&row.group)
                .ok_or_else(|| Error::Corrupt(format!("eval CSV: unknown group {}", row.group)))?;
            Ok(SampleMetrics {
                id: row.id,
                group,
                denoise: DenoiseMetrics { ssim: row.denoise_ssim, psnr: row.psnr, mae: row.denoise_mae, mre: row.mre },
                inversion: InversionMetrics { ssim: row.inversion_ssim, mse: row.mse, mae: row.inversion_mae, mape: row.mape },
                iou: row.iou,
            })
        })
        .collect()
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("NaN")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn summary_json(g: &GroupSummary) -> Value {
    json!({
        "count": g.count,
        "denoiser": {
            "SSIM": num(g.denoise_ssim),
            "PSNR": num(g.psnr),
            "MAE": num(g.denoise_mae),
            "MRE": num(g.mre),
        },
        "inverter": {
            "SSIM": num(g.inversion_ssim),
            "MSE": num(g.mse),
            "MAE": num(g.inversion_mae),
            "MAPE": num(g.mape),
            "IoU": g.iou.map_or(Value::Null, num),
        },
    })
}

pub fn report_json(r: &EvalReport) -> Value {
    let groups: serde_json::Map<String, Value> = r.groups.iter().map(|(k, g)| (k.clone(), summary_json(g))).collect();
    json!({ "groups": groups, "overall": summary_json(&r.overall) })
}

/// Writes `eval.csv` and `eval.json` into `dir`.
pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    write_atomic(&dir.join("eval.csv"), &samples_to_csv(&r.samples)?)?;
    let text = serde_json::to_string_pretty(&report_json(r)).expect("json");
    write_atomic(&dir.join("eval.json"), text.as_bytes())
}

/// Re-aggregates a per-sample CSV.
pub fn reaggregate(csv_path: &Path) -> Result<EvalReport> {
    Ok(aggregate(samples_from_csv(&read(csv_path)?)?))
}
