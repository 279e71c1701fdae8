use std::fmt::Write as _;

use super::{decode_image, EncodedImage};
use crate::codec::Model;
use crate::data::Image;
use crate::evaluation::{bpp, psnr};

/// Outcome for one archived bitstream.
#[derive(Clone, Debug, PartialEq)]
pub struct CompatItem {
    pub index: usize,
    pub bpp: f64,
    pub psnr_old: Option<f64>,
    pub psnr_new: Option<f64>,
    /// Both decoders recovered bit-identical latents.
    pub latents_equal: Option<bool>,
    pub error: Option<String>,
}

impl CompatItem {
    pub fn delta(&self) -> Option<f64> {
        Some(self.psnr_new? - self.psnr_old?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompatReport {
    pub items: Vec<CompatItem>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl CompatReport {
    pub fn mean_psnr_old(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(|i| i.psnr_old))
    }

    pub fn mean_psnr_new(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(|i| i.psnr_new))
    }

    /// Mean ΔPSNR over items both decoders handled.
    pub fn mean_delta(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(CompatItem::delta))
    }

    pub fn mean_bpp(&self) -> Option<f64> {
        mean(self.items.iter().map(|i| i.bpp))
    }

    pub fn all_latents_equal(&self) -> bool {
        self.items.iter().all(|i| i.latents_equal == Some(true))
    }

    pub fn failures(&self) -> usize {
        self.items.iter().filter(|i| i.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("index,bpp,psnr_old,psnr_new,delta_psnr,latents_equal,error\n");
        for i in &self.items {
            let eq = i.latents_equal.map(|b| b.to_string()).unwrap_or_default();
            let err = i.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(s, "{},{},{},{},{},{eq},{err}", i.index, i.bpp, opt(i.psnr_old), opt(i.psnr_new), opt(i.delta()));
        }
        s
    }
}

/// Decodes every archived stream with the old and the new model and
/// compares both reconstructions with the originals. Errors are recorded
/// per item.
pub fn compatibility_report(streams: &[EncodedImage], old: &Model<f32>, new: &Model<f32>, originals: &[Image]) -> CompatReport {
    let items = streams
        .iter()
        .enumerate()
        .map(|(index, b)| {
            let mut item = CompatItem { index, bpp: bpp(b), psnr_old: None, psnr_new: None, latents_equal: None, error: None };
            let Some(original) = originals.get(index) else {
                item.error = Some("no original image".into());
                return item;
            };
            let decoded_old = decode_image(b, old);
            let decoded_new = decode_image(b, new);
            let mut errors = Vec::new();
            match &decoded_old {
                Ok(d) => item.psnr_old = psnr(original, &d.image).map_err(|e| errors.push(format!("old: {e}"))).ok(),
                Err(e) => errors.push(format!("old decoder: {e}")),
            }
            match &decoded_new {
                Ok(d) => item.psnr_new = psnr(original, &d.image).map_err(|e| errors.push(format!("new: {e}"))).ok(),
                Err(e) => errors.push(format!("new decoder: {e}")),
            }
            if let (Ok(a), Ok(b)) = (&decoded_old, &decoded_new) {
                item.latents_equal = Some(a.z_hat() == b.z_hat());
            }
            if !errors.is_empty() {
                item.error = Some(errors.join("; "));
            }
            item
        })
        .collect();
    CompatReport { items }
}
