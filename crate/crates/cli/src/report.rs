//! Summary tables and line profiles built from metrics rows and images.

use std::fmt::Write;

use kgin::image::RealImage;
use kgin::metrics::MetricsRecord;

/// Methods in the order they appear in summaries; others follow alphabetically.
pub const METHOD_ORDER: &[&str] = &["zero-filled", "cs-tv", "k-ginr"];

pub const SUMMARY_HEADER: &str = "method,accel,n,ssim_mean,ssim_std,rmse_mean,rmse_std,psnr_mean,psnr_std";

#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.iter().all(|v| v.is_infinite() && *v == values[0]) {
            // e.g. PSNR of perfect reconstructions
            return Stat { mean: values[0], std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub accel: f64,
    pub n: usize,
    pub ssim: Stat,
    pub rmse: Stat,
    pub psnr: Stat,
}

fn method_rank(m: &str) -> (usize, &str) {
    (METHOD_ORDER.iter().position(|&k| k == m).unwrap_or(METHOD_ORDER.len()), m)
}

/// One row per method x acceleration. Every combination must have at least
/// one record; a hole in the grid is an error rather than a missing row.
pub fn summarize(records: &[MetricsRecord]) -> Result<Vec<SummaryRow>, String> {
    if records.is_empty() {
        return Err("no metrics rows to summarize".into());
    }
    let mut methods: Vec<&str> = records.iter().map(|r| r.method.as_str()).collect();
    methods.sort_by_key(|m| method_rank(m));
    methods.dedup();
    let mut accels: Vec<f64> = records.iter().map(|r| r.accel).collect();
    accels.sort_by(f64::total_cmp);
    accels.dedup();

    let mut rows = Vec::new();
    for &m in &methods {
        for &a in &accels {
            let group: Vec<&MetricsRecord> = records.iter().filter(|r| r.method == m && r.accel == a).collect();
            if group.is_empty() {
                return Err(format!("no rows for method {m} at accel {a}"));
            }
            let col = |f: fn(&MetricsRecord) -> f64| Stat::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            rows.push(SummaryRow {
                method: m.to_string(),
                accel: a,
                n: group.len(),
                ssim: col(|r| r.ssim),
                rmse: col(|r| r.rmse),
                psnr: col(|r| r.psnr_db),
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            r.method, r.accel, r.n, r.ssim.mean, r.ssim.std, r.rmse.mean, r.rmse.std, r.psnr.mean, r.psnr.std
        )
        .unwrap();
    }
    out
}

/// Row `y` of slice 0 of each image, one column per image.
pub fn line_profiles(images: &[(String, RealImage)], y: usize) -> Result<String, String> {
    let Some((_, first)) = images.first() else {
        return Err("no images given for line profiles".into());
    };
    let [nx, ny, _] = first.dims;
    for (name, img) in images {
        if img.dims[0] != nx || img.dims[1] != ny {
            return Err(format!("{name} is {}x{}, expected {nx}x{ny}", img.dims[0], img.dims[1]));
        }
    }
    if y >= ny {
        return Err(format!("profile row {y} outside 0..{ny}"));
    }
    let mut out = String::from("x");
    for (name, _) in images {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for x in 0..nx {
        write!(out, "{x}").unwrap();
        for (_, img) in images {
            write!(out, ",{:.6}", img.row(y, 0)[x]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
