//! Rate and quality metrics, rate-distortion sweeps and BD-rate.

mod bdrate;
mod metrics;
mod plot;
mod sweep;

use std::fmt::Write as _;

pub use bdrate::{bd_rate, simpson, Pchip, MIN_OVERLAP_DB, MIN_POINTS, SIMPSON_INTERVALS};
pub use metrics::{bpp, psnr, psnr_from_mse, PSNR_CAP};
pub use plot::rd_svg;
pub use sweep::rd_sweep;

use crate::bitstream::BitstreamError;
use crate::codec::CodecError;
use crate::data::DataError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Dimension(String),
    #[error("{curve} curve has {points} points, at least 4 are needed")]
    TooFewPoints { curve: String, points: usize },
    #[error("curve is not monotone: {0}")]
    NonMonotone(String),
    #[error("PSNR ranges [{:.3}, {:.3}] and [{:.3}, {:.3}] overlap by less than 0.5 dB", .anchor.0, .anchor.1, .test.0, .test.1)]
    Overlap { anchor: (f64, f64), test: (f64, f64) },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
    pub dataset: String,
    pub checkpoint: String,
}

impl RdCurve {
    pub fn new(points: Vec<RdPoint>) -> Self {
        RdCurve { points, ..RdCurve::default() }
    }

    pub fn tagged(mut self, dataset: &str, checkpoint: &str) -> Self {
        self.dataset = dataset.to_string();
        self.checkpoint = checkpoint.to_string();
        self
    }

    pub fn sorted_by_bpp(&self) -> Vec<RdPoint> {
        let mut p = self.points.clone();
        p.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        p
    }

    pub fn mean_psnr(&self) -> f64 {
        self.points.iter().map(|p| p.psnr).sum::<f64>() / self.points.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,bpp,psnr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.lambda, p.bpp, p.psnr);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "lambda,bpp,psnr" => {}
            other => {
                return Err(EvalError::Parse { line: other.map_or(1, |(i, _)| i + 1), detail: "expected header `lambda,bpp,psnr`".into() });
            }
        }
        let points = lines
            .map(|(i, l)| {
                let v: Vec<f64> = l
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| EvalError::Parse { line: i + 1, detail: e.to_string() })?;
                match v[..] {
                    [lambda, bpp, psnr] => Ok(RdPoint { lambda, bpp, psnr }),
                    _ => Err(EvalError::Parse { line: i + 1, detail: format!("expected 3 fields, got {}", v.len()) }),
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(RdCurve::new(points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let c = RdCurve::new(vec![RdPoint { lambda: 32.0, bpp: 0.123_456_789_012_345_6, psnr: 27.1 }, RdPoint { lambda: 1024.0, bpp: 1.5, psnr: 35.25 }]);
        let text = c.to_csv();
        assert_eq!(RdCurve::from_csv(&text).unwrap(), c);
        assert!(matches!(RdCurve::from_csv("a,b\n"), Err(EvalError::Parse { line: 1, .. })));
        assert!(matches!(RdCurve::from_csv("lambda,bpp,psnr\n1,2\n"), Err(EvalError::Parse { line: 2, .. })));
    }

    #[test]
    fn svg_contains_every_point() {
        let c = RdCurve::new((0..5).map(|i| RdPoint { lambda: i as f64, bpp: 0.1 * (i + 1) as f64, psnr: 25.0 + i as f64 }).collect());
        let svg = rd_svg(&[("pre", &c)]);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.contains(">bpp<") && svg.contains("PSNR (dB)"));
    }
}
