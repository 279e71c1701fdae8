use super::{discretized_gaussian_pmf, gaussian_tail_mass, EntropyError, MAX_SYMBOL, MIN_SYMBOL, TOTAL};

pub const SCALE_COUNT: usize = 64;
pub const SCALE_MIN: f64 = 0.05;
pub const SCALE_MAX: f64 = 20.0;

/// Log-spaced Gaussian scales; each predicted σ is coded with the CDF of
/// the first entry not below it.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTable {
    entries: Vec<f64>,
}

impl Default for ScaleTable {
    fn default() -> Self {
        let ratio = (SCALE_MAX / SCALE_MIN).ln();
        let mut entries: Vec<f64> =
            (0..SCALE_COUNT).map(|i| SCALE_MIN * (ratio * i as f64 / (SCALE_COUNT - 1) as f64).exp()).collect();
        entries[0] = SCALE_MIN;
        entries[SCALE_COUNT - 1] = SCALE_MAX;
        ScaleTable { entries }
    }
}

impl ScaleTable {
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical little-endian bytes, part of the entropy-model fingerprint.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.entries.len());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.to_bits().to_le_bytes());
        }
        out
    }
}

pub fn sigma_to_index(sigma: f64, table: &ScaleTable) -> Result<usize, EntropyError> {
    if sigma.is_nan() {
        return Err(EntropyError::Domain("sigma is NaN".into()));
    }
    let i = table.entries.partition_point(|&e| e < sigma);
    Ok(i.min(table.entries.len() - 1))
}

/// Cumulative frequency table over a contiguous symbol range, optionally
/// followed by an escape bucket. Frequencies total `TOTAL`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    cum: Vec<u32>,
    min_symbol: i32,
    escape: bool,
}

impl QuantizedCdf {
    pub fn from_counts(min_symbol: i32, counts: &[u32], escape: bool) -> Result<Self, EntropyError> {
        if counts.len() < 1 + escape as usize {
            return Err(EntropyError::InvalidCdf("no symbols".into()));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(EntropyError::InvalidCdf(format!("bucket {i} has zero frequency")));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &c in counts {
            acc += c as u64;
            cum.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc != TOTAL as u64 {
            return Err(EntropyError::InvalidCdf(format!("frequencies total {acc}, expected {TOTAL}")));
        }
        Ok(QuantizedCdf { cum, min_symbol, escape })
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    pub fn counts(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn buckets(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    fn direct_symbols(&self) -> usize {
        self.buckets() - self.escape as usize
    }

    /// Bucket coding `symbol`, or `None` if it needs the escape path.
    pub(crate) fn bucket_of(&self, symbol: i64) -> Option<usize> {
        let off = symbol - self.min_symbol as i64;
        (0..self.direct_symbols() as i64).contains(&off).then_some(off as usize)
    }

    pub(crate) fn escape_bucket(&self) -> Option<usize> {
        self.escape.then(|| self.buckets() - 1)
    }

    pub fn is_escape(&self, bucket: usize) -> bool {
        self.escape && bucket == self.buckets() - 1
    }

    pub fn symbol_of(&self, bucket: usize) -> i64 {
        self.min_symbol as i64 + bucket as i64
    }

    #[inline]
    pub(crate) fn start_freq(&self, bucket: usize) -> (u32, u32) {
        (self.cum[bucket], self.cum[bucket + 1] - self.cum[bucket])
    }

    /// Bucket whose interval contains `slot` (`slot < TOTAL`).
    #[inline]
    pub fn find(&self, slot: u32) -> usize {
        self.cum.partition_point(|&c| c <= slot) - 1
    }

    /// Copy with one bucket's frequency moved by `delta`, compensated on
    /// the largest other bucket so the total stays fixed.
    pub fn perturbed(&self, bucket: usize, delta: i32) -> Result<Self, EntropyError> {
        let mut counts = self.counts();
        if bucket >= counts.len() {
            return Err(EntropyError::InvalidCdf(format!("bucket {bucket} out of range")));
        }
        let donor = (0..counts.len()).filter(|&i| i != bucket).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).ok_or_else(|| {
            EntropyError::InvalidCdf("single-bucket cdf cannot be perturbed".into())
        })?;
        counts[bucket] = counts[bucket].checked_add_signed(delta).ok_or_else(|| EntropyError::InvalidCdf("negative frequency".into()))?;
        counts[donor] = counts[donor].checked_add_signed(-delta).ok_or_else(|| EntropyError::InvalidCdf("negative frequency".into()))?;
        QuantizedCdf::from_counts(self.min_symbol, &counts, self.escape)
    }
}

/// Fixed-point CDF of table entry `index` over `[MIN_SYMBOL, MAX_SYMBOL]`
/// plus escape.
pub fn build_cdf(index: usize, table: &ScaleTable) -> Result<QuantizedCdf, EntropyError> {
    let sigma = *table.entries.get(index).ok_or(EntropyError::IndexOutOfRange { index, len: table.len() })?;
    let scale = TOTAL as f64;
    let mut counts: Vec<u32> = (MIN_SYMBOL..=MAX_SYMBOL)
        .map(|q| discretized_gaussian_pmf(q as i64, sigma).map(|p| (p * scale).round() as u32))
        .collect::<Result<_, _>>()?;
    counts.push((gaussian_tail_mass(MIN_SYMBOL as i64, MAX_SYMBOL as i64, sigma)? * scale).round() as u32);

    // The zero bucket is the mode; it absorbs every correction.
    let zero = (-MIN_SYMBOL) as usize;
    for c in counts.iter_mut() {
        if *c == 0 {
            *c = 1;
        }
    }
    let rest: u64 = counts.iter().enumerate().filter(|&(i, _)| i != zero).map(|(_, &c)| c as u64).sum();
    if rest >= TOTAL as u64 {
        return Err(EntropyError::InvalidCdf(format!("sigma {sigma} leaves no mass for the mode")));
    }
    counts[zero] = (TOTAL as u64 - rest) as u32;
    QuantizedCdf::from_counts(MIN_SYMBOL, &counts, true)
}

/// All CDFs of a scale table, built once.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyTables {
    scales: ScaleTable,
    cdfs: Vec<QuantizedCdf>,
}

impl EntropyTables {
    pub fn new(scales: ScaleTable) -> Result<Self, EntropyError> {
        let cdfs = (0..scales.len()).map(|i| build_cdf(i, &scales)).collect::<Result<_, _>>()?;
        Ok(EntropyTables { scales, cdfs })
    }

    pub fn scales(&self) -> &ScaleTable {
        &self.scales
    }

    pub fn cdf(&self, index: usize) -> Result<&QuantizedCdf, EntropyError> {
        self.cdfs.get(index).ok_or(EntropyError::IndexOutOfRange { index, len: self.cdfs.len() })
    }

    pub fn cdfs(&self) -> &[QuantizedCdf] {
        &self.cdfs
    }

    /// Replaces one CDF, for fragility experiments.
    pub fn with_cdf(&self, index: usize, cdf: QuantizedCdf) -> Result<Self, EntropyError> {
        let mut t = self.clone();
        *t.cdfs.get_mut(index).ok_or(EntropyError::IndexOutOfRange { index, len: self.cdfs.len() })? = cdf;
        Ok(t)
    }

    pub fn index_for(&self, sigma: f64) -> Result<usize, EntropyError> {
        sigma_to_index(sigma, &self.scales)
    }
}

impl Default for EntropyTables {
    fn default() -> Self {
        EntropyTables::new(ScaleTable::default()).expect("default scale table builds")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_table_shape() {
        let t = ScaleTable::default();
        assert_eq!(t.len(), 64);
        assert_eq!(t.entries()[0], 0.05);
        assert_eq!(t.entries()[63], 20.0);
        assert!(t.entries().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn index_lookup_boundaries() {
        let t = ScaleTable::default();
        assert_eq!(sigma_to_index(0.001, &t).unwrap(), 0);
        assert_eq!(sigma_to_index(100.0, &t).unwrap(), 63);
        assert_eq!(sigma_to_index(t.entries()[10], &t).unwrap(), 10);
        assert_eq!(sigma_to_index(t.entries()[10] * (1.0 + 1e-12), &t).unwrap(), 11);
        assert_eq!(sigma_to_index(f64::INFINITY, &t).unwrap(), 63);
        assert!(sigma_to_index(f64::NAN, &t).is_err());
    }

    #[test]
    fn every_table_is_valid() {
        let t = EntropyTables::default();
        for cdf in t.cdfs() {
            let counts = cdf.counts();
            assert_eq!(counts.len(), 129);
            assert!(counts.iter().all(|&c| c >= 1));
            assert_eq!(counts.iter().map(|&c| c as u64).sum::<u64>(), 65536);
            assert_eq!(cdf.cumulative()[0], 0);
            assert_eq!(*cdf.cumulative().last().unwrap(), 65536);
            // q and -q sit at 64 + q and 64 - q
            for q in 1..=63 {
                assert!(counts[64 + q].abs_diff(counts[64 - q]) <= 1);
            }
        }
    }

    #[test]
    fn unit_scale_mode_frequency() {
        let t = ScaleTable::default();
        let i = sigma_to_index(1.0, &t).unwrap();
        let s = t.entries()[i];
        let cdf = build_cdf(i, &t).unwrap();
        let counts = cdf.counts();
        let p0 = counts[64] as f64 / 65536.0;
        // Mass moved onto floor-count buckets comes out of the mode.
        let forced = (MIN_SYMBOL..=MAX_SYMBOL)
            .filter(|&q| (discretized_gaussian_pmf(q as i64, s).unwrap() * 65536.0).round() == 0.0)
            .count() as f64
            / 65536.0;
        assert!(forced > 0.0);
        assert!((p0 + forced - discretized_gaussian_pmf(0, s).unwrap()).abs() < 1e-3);
        // σ=1 itself falls between entries; the bucket entry is within one step.
        assert!((p0 - 0.38292).abs() < 0.03);
    }

    #[test]
    fn build_is_deterministic_and_bounds_checked() {
        let t = ScaleTable::default();
        assert_eq!(build_cdf(17, &t).unwrap(), build_cdf(17, &t).unwrap());
        assert!(build_cdf(64, &t).is_err());
    }

    #[test]
    fn perturbation_keeps_validity() {
        let cdf = build_cdf(20, &ScaleTable::default()).unwrap();
        let p = cdf.perturbed(70, 1).unwrap();
        assert_ne!(p, cdf);
        assert_eq!(*p.cumulative().last().unwrap(), 65536);
        assert!(cdf.perturbed(0, -1).is_err());
    }
}
