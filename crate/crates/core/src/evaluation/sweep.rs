use super::{psnr, EvalError, RdCurve, RdPoint};
use crate::bitstream::encode_image_detailed;
use crate::codec::Model;
use crate::data::Image;

/// Encodes every image at every λ and records mean bpp and mean PSNR.
pub fn rd_sweep(model: &Model<f32>, images: &[Image], grid: &[f64]) -> Result<RdCurve, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Domain("rd sweep over an empty image set".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let (mut bits, mut quality) = (0.0, 0.0);
        for im in images {
            let e = encode_image_detailed(im, lambda, model)?;
            let rec = Image::from_tensor(&e.analysis.x_hat, 0)?;
            bits += super::bpp(&e.image);
            quality += psnr(im, &rec)?;
        }
        let n = images.len() as f64;
        points.push(RdPoint { lambda, bpp: bits / n, psnr: quality / n });
    }
    Ok(RdCurve::new(points))
}
