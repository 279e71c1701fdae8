use super::BitstreamError;

pub const MAGIC: &[u8; 5] = b"CCBS1";
pub const VERSION: u8 = 1;
pub const EXTENSION: &str = "ccbs";

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub version: u8,
    pub fingerprint: [u8; 32],
    pub lambda: f64,
    pub height: u32,
    pub width: u32,
    pub payload_lens: Vec<u32>,
}

impl Header {
    pub fn stages(&self) -> usize {
        self.payload_lens.len()
    }

    fn byte_len(&self) -> usize {
        MAGIC.len() + 1 + 32 + 8 + 4 + 4 + 1 + 4 * self.payload_lens.len()
    }
}

/// Header, one rANS payload per stage, CRC32 trailer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedImage {
    pub header: Header,
    pub payloads: Vec<Vec<u8>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], BitstreamError> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or(BitstreamError::Truncated { offset: self.pos, what })?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, BitstreamError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, BitstreamError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

impl EncodedImage {
    pub fn new(fingerprint: [u8; 32], lambda: f64, height: u32, width: u32, payloads: Vec<Vec<u8>>) -> Result<Self, BitstreamError> {
        if payloads.len() > u8::MAX as usize {
            return Err(BitstreamError::Malformed(format!("{} stages do not fit the header", payloads.len())));
        }
        let payload_lens = payloads
            .iter()
            .map(|p| u32::try_from(p.len()).map_err(|_| BitstreamError::Malformed(format!("payload of {} bytes is too long", p.len()))))
            .collect::<Result<_, _>>()?;
        Ok(EncodedImage { header: Header { version: VERSION, fingerprint, lambda, height, width, payload_lens }, payloads })
    }

    /// Size of the serialized container, header and CRC included.
    pub fn byte_len(&self) -> usize {
        self.header.byte_len() + self.payloads.iter().map(Vec::len).sum::<usize>() + 4
    }

    pub fn pixels(&self) -> usize {
        self.header.height as usize * self.header.width as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.push(h.version);
        out.extend_from_slice(&h.fingerprint);
        out.extend_from_slice(&h.lambda.to_bits().to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.push(h.payload_lens.len() as u8);
        for l in &h.payload_lens {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for p in &self.payloads {
            out.extend_from_slice(p);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BitstreamError> {
        if bytes.len() < 4 {
            return Err(BitstreamError::Truncated { offset: bytes.len(), what: "crc" });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(BitstreamError::BadMagic);
        }
        if stored != computed {
            return Err(BitstreamError::Corrupt { stored, computed });
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(BitstreamError::UnsupportedVersion(version));
        }
        let fingerprint: [u8; 32] = r.take(32, "fingerprint")?.try_into().expect("32 bytes");
        if fingerprint == [0; 32] {
            return Err(BitstreamError::Malformed("zero fingerprint".into()));
        }
        let lambda = f64::from_bits(u64::from_le_bytes(r.take(8, "lambda")?.try_into().expect("8 bytes")));
        let height = r.u32("height")?;
        let width = r.u32("width")?;
        let stages = r.u8("stage count")? as usize;
        let payload_lens = (0..stages).map(|_| r.u32("payload length")).collect::<Result<Vec<_>, _>>()?;
        let total: u64 = payload_lens.iter().map(|&l| l as u64).sum();
        let remaining = (body.len() - r.pos) as u64;
        if total != remaining {
            return Err(BitstreamError::Malformed(format!("payload lengths sum to {total} but {remaining} bytes follow the header")));
        }
        let payloads = payload_lens.iter().map(|&l| r.take(l as usize, "payload").map(<[u8]>::to_vec)).collect::<Result<_, _>>()?;
        Ok(EncodedImage { header: Header { version, fingerprint, lambda, height, width, payload_lens }, payloads })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), BitstreamError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BitstreamError> {
        EncodedImage::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> EncodedImage {
        EncodedImage::new([7; 32], 181.019_336, 32, 32, vec![vec![1, 2, 3, 4, 5], vec![9; 12]]).unwrap()
    }

    #[test]
    fn layout_is_fixed() {
        let e = sample();
        let b = e.to_bytes();
        assert_eq!(b.len(), e.byte_len());
        assert_eq!(b.len(), 5 + 1 + 32 + 8 + 4 + 4 + 1 + 8 + 17 + 4);
        assert_eq!(&b[..5], b"CCBS1");
        assert_eq!(b[5], 1);
        assert_eq!(&b[46..50], &32u32.to_le_bytes());
        assert_eq!(b[54], 2);
        assert_eq!(EncodedImage::from_bytes(&b).unwrap(), e);
    }

    #[test]
    fn lambda_bits_round_trip() {
        let e = EncodedImage::from_bytes(&sample().to_bytes()).unwrap();
        assert_eq!(e.header.lambda.to_bits(), 181.019_336f64.to_bits());
    }

    #[test]
    fn damage_is_detected() {
        let b = sample().to_bytes();
        for i in 0..b.len() {
            let mut c = b.clone();
            c[i] ^= 0x10;
            assert!(EncodedImage::from_bytes(&c).is_err(), "flip at {i}");
        }
        for n in 0..b.len() {
            assert!(EncodedImage::from_bytes(&b[..n]).is_err(), "truncated to {n}");
        }
        let mut wrong = b.clone();
        wrong[0] = b'X';
        assert!(matches!(EncodedImage::from_bytes(&wrong), Err(BitstreamError::BadMagic)));
    }

    #[test]
    fn version_and_fingerprint_are_checked() {
        let mut e = sample();
        e.header.version = 2;
        assert!(matches!(EncodedImage::from_bytes(&e.to_bytes()), Err(BitstreamError::UnsupportedVersion(2))));
        let mut e = sample();
        e.header.fingerprint = [0; 32];
        assert!(EncodedImage::from_bytes(&e.to_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn write_read_is_identity(payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 1..4), lambda in 1.0f64..5000.0) {
            let e = EncodedImage::new([3; 32], lambda, 64, 32, payloads).unwrap();
            let b = e.to_bytes();
            let back = EncodedImage::from_bytes(&b).unwrap();
            prop_assert_eq!(back.to_bytes(), b);
            prop_assert_eq!(back, e);
        }
    }
}
