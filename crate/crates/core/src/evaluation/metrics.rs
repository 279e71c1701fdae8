use super::EvalError;
use crate::bitstream::EncodedImage;
use crate::data::Image;

pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / mse)` over all RGB samples, capped for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(EvalError::Dimension(format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Bits per pixel of the whole container, header and CRC included.
pub fn bpp(b: &EncodedImage) -> f64 {
    8.0 * b.byte_len() as f64 / b.pixels() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(4, 4, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = Image::filled(4, 4, 0.5 + 1.0 / 255.0);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Image::filled(4, 5, 0.5)).is_err());
    }

    #[test]
    fn bpp_counts_every_byte() {
        let e = EncodedImage::new([1; 32], 64.0, 32, 32, vec![vec![0; 1024 - 63]]).unwrap();
        assert_eq!(e.byte_len(), 1024);
        assert_eq!(bpp(&e), 8.0);
    }
}
