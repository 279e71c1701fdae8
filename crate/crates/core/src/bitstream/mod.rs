//! `.ccbs` container for encoded images and the backward-compatibility
//! check.

mod codec_io;
mod compat;
mod container;

pub use codec_io::{decode_image, decode_image_with, encode_image, encode_image_detailed, DecodeOptions, Decoded, Encoded};
pub use compat::{compatibility_report, CompatItem, CompatReport};
pub use container::{EncodedImage, Header, EXTENSION, MAGIC, VERSION};

use crate::codec::CodecError;
use crate::data::DataError;
use crate::entropy::EntropyError;

fn hex(f: &[u8; 32]) -> String {
    f.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum BitstreamError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a .ccbs stream")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("stream truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    Corrupt { stored: u32, computed: u32 },
    #[error("malformed stream: {0}")]
    Malformed(String),
    #[error("entropy model mismatch: stream was written for {}, decoder has {}", hex(.stream), hex(.model))]
    Incompatible { stream: [u8; 32], model: [u8; 32] },
    #[error("stage {stage}: {source}")]
    Encode { stage: usize, source: EntropyError },
    #[error("stage {stage} does not decode: {source}")]
    Decode { stage: usize, source: EntropyError },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Data(#[from] DataError),
}
