//! Discretized-Gaussian probability model, fixed-point CDF tables and a
//! static-model rANS coder.

mod gaussian;
mod rans;
mod table;

pub use gaussian::{discretized_gaussian_pmf, gaussian_tail_mass};
pub use rans::{estimate_bits, rans_decode, rans_decode_with, rans_encode, rans_encode_with, DecodeMode};
pub use table::{build_cdf, sigma_to_index, EntropyTables, QuantizedCdf, ScaleTable};

/// Probability precision of every CDF, in bits.
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;
/// Directly coded residual alphabet; anything else goes through the escape.
pub const MIN_SYMBOL: i32 = -64;
pub const MAX_SYMBOL: i32 = 63;
/// Largest magnitude the 16-bit sign-magnitude escape payload can carry.
pub const MAX_ESCAPE_MAGNITUDE: i32 = (1 << 15) - 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EntropyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("symbol {value} at position {position} exceeds the escape range ±{max}", max = MAX_ESCAPE_MAGNITUDE)]
    EscapeOverflow { position: usize, value: i64 },
    #[error("cdf index {index} out of range (table has {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid cdf: {0}")]
    InvalidCdf(String),
    #[error("{symbols} symbols but {indices} cdf indices")]
    LengthMismatch { symbols: usize, indices: usize },
    #[error("stream truncated: needed byte {offset} of {len}")]
    Truncated { offset: usize, len: usize },
    #[error("stream inconsistent with tables: {0}")]
    Inconsistent(String),
}
