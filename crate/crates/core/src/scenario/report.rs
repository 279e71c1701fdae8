use std::fmt::Write as _;

use super::run::SeedRun;
use crate::evaluation::{rd_svg, RdCurve, RdPoint};

/// Seed-averaged results of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub seeds: usize,
    pub old_psnr: f64,
    pub new_psnr: f64,
    /// `None` when the BD-rate was undefined for any seed.
    pub old_bd_rate: Option<f64>,
    pub new_bd_rate: Option<f64>,
    pub latents_equal: bool,
    pub fingerprint_kept: bool,
    pub old_curve: RdCurve,
    pub new_curve: RdCurve,
}

impl SummaryRow {
    pub fn avg_psnr(&self) -> f64 {
        (self.old_psnr + self.new_psnr) / 2.0
    }

    pub fn avg_bd_rate(&self) -> Option<f64> {
        Some((self.old_bd_rate? + self.new_bd_rate?) / 2.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Point-wise mean of curves sharing one λ grid.
pub fn average_curves(curves: &[&RdCurve]) -> RdCurve {
    let Some(first) = curves.first() else { return RdCurve::default() };
    let n = curves.len() as f64;
    let points = (0..first.points.len())
        .map(|j| RdPoint {
            lambda: first.points[j].lambda,
            bpp: curves.iter().map(|c| c.points[j].bpp).sum::<f64>() / n,
            psnr: curves.iter().map(|c| c.points[j].psnr).sum::<f64>() / n,
        })
        .collect();
    RdCurve::new(points)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl Summary {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let Some(first) = runs.first() else { return Summary::default() };
        let rows = first
            .results
            .iter()
            .map(|r| {
                let per_seed: Vec<_> = runs.iter().filter_map(|run| run.result(&r.label)).collect();
                let bd = |f: fn(&super::StrategyResult) -> Option<f64>| {
                    per_seed.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()))
                };
                SummaryRow {
                    label: r.label.clone(),
                    seeds: per_seed.len(),
                    old_psnr: mean(per_seed.iter().map(|r| r.old_psnr())),
                    new_psnr: mean(per_seed.iter().map(|r| r.new_psnr())),
                    old_bd_rate: bd(|r| r.old_bd_rate),
                    new_bd_rate: bd(|r| r.new_bd_rate),
                    latents_equal: per_seed.iter().all(|r| r.latents_equal),
                    fingerprint_kept: per_seed.iter().all(|r| r.fingerprint_kept),
                    old_curve: average_curves(&per_seed.iter().map(|r| &r.old_curve).collect::<Vec<_>>()),
                    new_curve: average_curves(&per_seed.iter().map(|r| &r.new_curve).collect::<Vec<_>>()),
                }
            })
            .collect();
        Summary { rows }
    }

    pub fn row(&self, label: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// PSNR in dB and BD-rate in percent against the pre-trained model,
    /// for old bitstreams, new data or rates, and their average.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut s = String::from(
            "method,seeds,old_psnr,new_psnr,avg_psnr,old_bd_rate,new_bd_rate,avg_bd_rate,latents_equal,fingerprint_kept\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{},{},{},{},{}",
                r.label,
                r.seeds,
                r.old_psnr,
                r.new_psnr,
                r.avg_psnr(),
                opt(r.old_bd_rate),
                opt(r.new_bd_rate),
                opt(r.avg_bd_rate()),
                r.latents_equal,
                r.fingerprint_kept
            );
        }
        s
    }

    /// New-data curves as solid series and old-bitstream curves alongside.
    pub fn to_svg(&self) -> String {
        let labels: Vec<(String, &RdCurve)> = self
            .rows
            .iter()
            .flat_map(|r| [(format!("{} new", r.label), &r.new_curve), (format!("{} old", r.label), &r.old_curve)])
            .collect();
        let curves: Vec<(&str, &RdCurve)> = labels.iter().map(|(l, c)| (l.as_str(), *c)).collect();
        rd_svg(&curves)
    }
}
