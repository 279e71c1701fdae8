use super::{BitstreamError, EncodedImage};
use crate::codec::{Analysis, CodecError, Model};
use crate::data::Image;
use crate::entropy::{estimate_bits, rans_decode, rans_encode, DecodeMode, EntropyError, EntropyTables};
use crate::numerics::Tensor;

fn cdf_indices(sigma: &Tensor<f32>, tables: &EntropyTables) -> Result<Vec<usize>, EntropyError> {
    sigma.data().iter().map(|&s| tables.index_for(s as f64)).collect()
}

/// Container plus the encoder-side analysis it was produced from.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub image: EncodedImage,
    pub analysis: Analysis<f32>,
    /// Model code length of all stages in bits.
    pub estimated_bits: f64,
}

pub fn encode_image_detailed(x: &Image, lambda: f64, model: &Model<f32>) -> Result<Encoded, BitstreamError> {
    let analysis = model.analyze(&x.to_tensor(), lambda)?;
    let tables = model.tables();
    let mut payloads = Vec::with_capacity(analysis.symbols.len());
    let mut estimated_bits = 0.0;
    for (stage, (symbols, sigma)) in analysis.symbols.iter().zip(&analysis.sigma).enumerate() {
        let encode = || -> Result<(Vec<u8>, f64), EntropyError> {
            let idx = cdf_indices(sigma, tables)?;
            Ok((rans_encode(symbols, &idx, tables)?, estimate_bits(symbols, &idx, tables)?))
        };
        let (bytes, bits) = encode().map_err(|source| BitstreamError::Encode { stage: stage + 1, source })?;
        payloads.push(bytes);
        estimated_bits += bits;
    }
    let image = EncodedImage::new(model.fingerprint(), lambda, x.height() as u32, x.width() as u32, payloads)?;
    Ok(Encoded { image, analysis, estimated_bits })
}

/// Round-quantizes, entropy codes each stage and wraps the streams.
pub fn encode_image(x: &Image, lambda: f64, model: &Model<f32>) -> Result<EncodedImage, BitstreamError> {
    Ok(encode_image_detailed(x, lambda, model)?.image)
}

#[derive(Clone, Debug)]
pub struct Decoded {
    /// Reconstruction clamped to [0, 1].
    pub image: Image,
    pub analysis: Analysis<f32>,
}

impl Decoded {
    pub fn z_hat(&self) -> &[Tensor<f32>] {
        &self.analysis.z_hat
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Decode even if the entropy-model fingerprint differs, with lenient
    /// rANS decoding. The output is then generally garbage.
    pub force: bool,
}

pub fn decode_image(b: &EncodedImage, model: &Model<f32>) -> Result<Decoded, BitstreamError> {
    decode_image_with(b, model, DecodeOptions::default())
}

pub fn decode_image_with(b: &EncodedImage, model: &Model<f32>, opts: DecodeOptions) -> Result<Decoded, BitstreamError> {
    let h = &b.header;
    let fingerprint = model.fingerprint();
    let mode = if fingerprint == h.fingerprint {
        DecodeMode::Strict
    } else if opts.force {
        DecodeMode::Lenient
    } else {
        return Err(BitstreamError::Incompatible { stream: h.fingerprint, model: fingerprint });
    };
    if h.stages() != model.config().stages {
        return Err(BitstreamError::Malformed(format!("stream has {} stages, model has {}", h.stages(), model.config().stages)));
    }
    let tables = model.tables();
    let mut current = 0;
    let analysis = model
        .synthesize(h.height as usize, h.width as usize, h.lambda, |stage, _mu, sigma| {
            current = stage;
            let idx = cdf_indices(sigma, tables)?;
            Ok(rans_decode(&b.payloads[stage], &idx, idx.len(), tables, mode)?)
        })
        .map_err(|e| match e {
            CodecError::Entropy(source) => BitstreamError::Decode { stage: current + 1, source },
            e => BitstreamError::Codec(e),
        })?;
    let image = Image::from_tensor(&analysis.x_hat, 0)?;
    Ok(Decoded { image, analysis })
}
