//! 32-bit rANS with byte-wise renormalisation.
//!
//! Symbols are encoded back to front so the decoder runs forward. The
//! stream starts with the final encoder state (big-endian) followed by the
//! renormalisation bytes in decode order.

use super::{EntropyError, EntropyTables, QuantizedCdf, MAX_ESCAPE_MAGNITUDE, PRECISION_BITS, TOTAL};

const RANS_L: u32 = 1 << 23;
const ESCAPE_BYTE_FREQ: u32 = TOTAL >> 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Every inconsistency is an error.
    Strict,
    /// Reads past the end as zero bytes and ignores the final state; used
    /// to show what a mismatched model produces.
    Lenient,
}

/// One arithmetic coding step: an interval of the 16-bit range.
#[derive(Clone, Copy)]
struct Event {
    start: u32,
    freq: u32,
}

fn escape_payload(position: usize, value: i64) -> Result<u16, EntropyError> {
    let mag = value.unsigned_abs();
    if mag > MAX_ESCAPE_MAGNITUDE as u64 {
        return Err(EntropyError::EscapeOverflow { position, value });
    }
    Ok(((value < 0) as u16) << 15 | mag as u16)
}

fn events_for(symbols: &[i64], cdfs: &[&QuantizedCdf]) -> Result<Vec<Event>, EntropyError> {
    if symbols.len() != cdfs.len() {
        return Err(EntropyError::LengthMismatch { symbols: symbols.len(), indices: cdfs.len() });
    }
    let mut events = Vec::with_capacity(symbols.len());
    for (position, (&s, cdf)) in symbols.iter().zip(cdfs).enumerate() {
        match cdf.bucket_of(s) {
            Some(b) => {
                let (start, freq) = cdf.start_freq(b);
                events.push(Event { start, freq });
            }
            None => {
                let esc = cdf.escape_bucket().ok_or(EntropyError::EscapeOverflow { position, value: s })?;
                let (start, freq) = cdf.start_freq(esc);
                events.push(Event { start, freq });
                let payload = escape_payload(position, s)?;
                for byte in [(payload >> 8) as u32, (payload & 0xff) as u32] {
                    events.push(Event { start: byte * ESCAPE_BYTE_FREQ, freq: ESCAPE_BYTE_FREQ });
                }
            }
        }
    }
    Ok(events)
}

/// Encodes `symbols[i]` with `cdfs[i]`.
pub fn rans_encode_with(symbols: &[i64], cdfs: &[&QuantizedCdf]) -> Result<Vec<u8>, EntropyError> {
    let events = events_for(symbols, cdfs)?;
    let mut out = Vec::with_capacity(events.len() + 4);
    let mut x = RANS_L;
    for e in events.iter().rev() {
        let x_max = ((RANS_L >> PRECISION_BITS) << 8) * e.freq;
        while x >= x_max {
            out.push(x as u8);
            x >>= 8;
        }
        x = ((x / e.freq) << PRECISION_BITS) + (x % e.freq) + e.start;
    }
    out.extend_from_slice(&x.to_le_bytes());
    out.reverse();
    Ok(out)
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    x: u32,
    mode: DecodeMode,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8], mode: DecodeMode) -> Result<Self, EntropyError> {
        let mut d = Decoder { bytes, pos: 0, x: 0, mode };
        for _ in 0..4 {
            d.x = (d.x << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, EntropyError> {
        let b = match self.bytes.get(self.pos) {
            Some(&b) => b,
            None if self.mode == DecodeMode::Lenient => 0,
            None => return Err(EntropyError::Truncated { offset: self.pos, len: self.bytes.len() }),
        };
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    fn slot(&self) -> u32 {
        self.x & (TOTAL - 1)
    }

    fn advance(&mut self, start: u32, freq: u32) -> Result<(), EntropyError> {
        self.x = freq * (self.x >> PRECISION_BITS) + self.slot() - start;
        while self.x < RANS_L {
            self.x = (self.x << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    fn uniform_byte(&mut self) -> Result<u32, EntropyError> {
        let b = self.slot() / ESCAPE_BYTE_FREQ;
        self.advance(b * ESCAPE_BYTE_FREQ, ESCAPE_BYTE_FREQ)?;
        Ok(b)
    }

    fn symbol(&mut self, cdf: &QuantizedCdf) -> Result<i64, EntropyError> {
        let bucket = cdf.find(self.slot());
        let (start, freq) = cdf.start_freq(bucket);
        self.advance(start, freq)?;
        if !cdf.is_escape(bucket) {
            return Ok(cdf.symbol_of(bucket));
        }
        let payload = (self.uniform_byte()? << 8) | self.uniform_byte()?;
        let mag = (payload & 0x7fff) as i64;
        Ok(if payload & 0x8000 != 0 { -mag } else { mag })
    }

    fn finish(self) -> Result<(), EntropyError> {
        if self.mode == DecodeMode::Lenient {
            return Ok(());
        }
        if self.x != RANS_L {
            return Err(EntropyError::Inconsistent(format!("final state {:#x} differs from the initial state", self.x)));
        }
        if self.pos != self.bytes.len() {
            return Err(EntropyError::Inconsistent(format!("{} unread bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn rans_decode_with(bytes: &[u8], cdfs: &[&QuantizedCdf], mode: DecodeMode) -> Result<Vec<i64>, EntropyError> {
    let mut d = Decoder::new(bytes, mode)?;
    let out = cdfs.iter().map(|cdf| d.symbol(cdf)).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;
    Ok(out)
}

fn resolve<'t>(indices: &[usize], tables: &'t EntropyTables) -> Result<Vec<&'t QuantizedCdf>, EntropyError> {
    indices.iter().map(|&i| tables.cdf(i)).collect()
}

pub fn rans_encode(symbols: &[i64], cdf_indices: &[usize], tables: &EntropyTables) -> Result<Vec<u8>, EntropyError> {
    rans_encode_with(symbols, &resolve(cdf_indices, tables)?)
}

pub fn rans_decode(bytes: &[u8], cdf_indices: &[usize], count: usize, tables: &EntropyTables, mode: DecodeMode) -> Result<Vec<i64>, EntropyError> {
    if cdf_indices.len() != count {
        return Err(EntropyError::LengthMismatch { symbols: count, indices: cdf_indices.len() });
    }
    rans_decode_with(bytes, &resolve(cdf_indices, tables)?, mode)
}

/// Ideal code length in bits under the fixed-point model, counting 16 raw
/// bits per escaped symbol.
pub fn estimate_bits(symbols: &[i64], cdf_indices: &[usize], tables: &EntropyTables) -> Result<f64, EntropyError> {
    if symbols.len() != cdf_indices.len() {
        return Err(EntropyError::LengthMismatch { symbols: symbols.len(), indices: cdf_indices.len() });
    }
    let mut bits = 0.0;
    for (position, (&s, &i)) in symbols.iter().zip(cdf_indices).enumerate() {
        let cdf = tables.cdf(i)?;
        let bucket = match cdf.bucket_of(s) {
            Some(b) => b,
            None => {
                escape_payload(position, s)?;
                bits += 16.0;
                cdf.escape_bucket().ok_or(EntropyError::EscapeOverflow { position, value: s })?
            }
        };
        bits -= (cdf.start_freq(bucket).1 as f64 / TOTAL as f64).log2();
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{ScaleTable, MAX_SYMBOL, MIN_SYMBOL};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn quarter_cdf() -> QuantizedCdf {
        QuantizedCdf::from_counts(0, &[16384; 4], false).unwrap()
    }

    #[test]
    fn empty_stream_is_the_flush() {
        let t = EntropyTables::default();
        let b = rans_encode(&[], &[], &t).unwrap();
        assert_eq!(b.len(), 4);
        assert!(rans_decode(&b, &[], 0, &t, DecodeMode::Strict).unwrap().is_empty());
    }

    #[test]
    fn quarter_probabilities_cost_two_bits_each() {
        let cdf = quarter_cdf();
        let syms = [0i64, 3, 1, 2, 2, 1, 0, 3];
        let cdfs = vec![&cdf; 8];
        let b = rans_encode_with(&syms, &cdfs).unwrap();
        assert!(b.len() <= 8, "{} bytes", b.len());
        assert_eq!(rans_decode_with(&b, &cdfs, DecodeMode::Strict).unwrap(), syms);
    }

    #[test]
    fn estimate_of_half_and_quarter() {
        let mut counts = vec![1u32; 129];
        counts[64] = 32768;
        counts[0] = 32768 - 127;
        let half = QuantizedCdf::from_counts(MIN_SYMBOL, &counts, true).unwrap();
        let t = EntropyTables::default().with_cdf(0, half).unwrap();
        assert_eq!(estimate_bits(&[0], &[0], &t).unwrap(), 1.0);
    }

    #[test]
    fn escapes_round_trip_and_overflow_is_reported() {
        let t = EntropyTables::default();
        let syms = [0i64, 64, -65, 32767, -32767, 5, MAX_SYMBOL as i64, MIN_SYMBOL as i64];
        let idx = [3usize, 0, 63, 10, 40, 20, 5, 5];
        let b = rans_encode(&syms, &idx, &t).unwrap();
        assert_eq!(rans_decode(&b, &idx, syms.len(), &t, DecodeMode::Strict).unwrap(), syms);
        let err = rans_encode(&[1, 40000], &[0, 0], &t).unwrap_err();
        assert_eq!(err, EntropyError::EscapeOverflow { position: 1, value: 40000 });
        assert!(rans_encode(&[-32768], &[0], &t).is_err());
    }

    #[test]
    fn truncation_is_detected_in_strict_mode() {
        let t = EntropyTables::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let syms: Vec<i64> = (0..300).map(|_| rng.gen_range(-20..20)).collect();
        let idx = vec![30usize; 300];
        let b = rans_encode(&syms, &idx, &t).unwrap();
        let cut = &b[..b.len() - 1];
        assert!(rans_decode(cut, &idx, 300, &t, DecodeMode::Strict).is_err());
        assert_eq!(rans_decode(&b, &idx, 300, &t, DecodeMode::Strict).unwrap(), syms);
    }

    #[test]
    fn single_count_perturbation_breaks_a_fixed_stream() {
        let tables = EntropyTables::default();
        let index = tables.index_for(1.0).unwrap();
        let syms: Vec<i64> = (0..64).map(|i| ((i * 37 % 11) as i64) - 5).collect();
        let idx = vec![index; 64];
        let b = rans_encode(&syms, &idx, &tables).unwrap();
        for (bucket, delta) in [(64usize, 1i32), (64, -1), (63, 1), (65, -1), (70, 1)] {
            let bad = tables.with_cdf(index, tables.cdf(index).unwrap().perturbed(bucket, delta).unwrap()).unwrap();
            let got = rans_decode(&b, &idx, 64, &bad, DecodeMode::Lenient).unwrap();
            assert_ne!(got, syms, "bucket {bucket} delta {delta}");
        }
    }

    #[test]
    fn length_tracks_model_entropy() {
        let t = EntropyTables::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let index = rng.gen_range(0..64);
            let cdf = t.cdf(index).unwrap();
            let syms: Vec<i64> = (0..1024)
                .map(|_| {
                    let b = cdf.find(rng.gen_range(0..TOTAL));
                    if cdf.is_escape(b) { 100 } else { cdf.symbol_of(b) }
                })
                .collect();
            let idx = vec![index; 1024];
            let est = estimate_bits(&syms, &idx, &t).unwrap();
            let real = 8.0 * rans_encode(&syms, &idx, &t).unwrap().len() as f64;
            assert!(real <= est + 0.1 * 1024.0, "index {index}: {real} vs {est}");
            assert!(real <= est * 1.02 + 64.0);
        }
    }

    #[test]
    fn default_scale_table_is_shared() {
        assert_eq!(EntropyTables::default().scales(), &ScaleTable::default());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(data in proptest::collection::vec((-300i64..300, 0usize..64), 0..200)) {
            let t = EntropyTables::default();
            let (syms, idx): (Vec<i64>, Vec<usize>) = data.into_iter().unzip();
            let b = rans_encode(&syms, &idx, &t).unwrap();
            prop_assert_eq!(rans_decode(&b, &idx, syms.len(), &t, DecodeMode::Strict).unwrap(), syms);
        }
    }
}
