//! Quantized cumulative frequency tables.
//!
//! A table covers the integer symbols `offset..=max_symbol` with one unit-width bin
//! per symbol, optionally followed by an escape bin that absorbs the remaining tail
//! mass. Counts are integers summing to `2^precision` and every bin holds at least
//! one count, so no codable symbol has zero probability.
//!
//! All floating point work goes through `libm` so that encoder and decoder derive
//! identical tables on every platform.

use crate::error::{EntropyError, Result};

pub const MIN_PRECISION: u32 = 8;
pub const MAX_PRECISION: u32 = 24;
pub const DEFAULT_PRECISION: u32 = 16;
pub const DEFAULT_TAIL_MASS: f64 = 1e-6;
pub const DEFAULT_SCALE_FLOOR: f64 = 0.11;

/// Continuous density whose unit bins are tabulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Gaussian { mean: f64, scale: f64 },
    Logistic { loc: f64, scale: f64 },
}

impl Density {
    pub fn scale(&self) -> f64 {
        match *self {
            Density::Gaussian { scale, .. } | Density::Logistic { scale, .. } => scale,
        }
    }

    pub fn center(&self) -> f64 {
        match *self {
            Density::Gaussian { mean, .. } => mean,
            Density::Logistic { loc, .. } => loc,
        }
    }

    /// `P(X < x)`.
    pub fn lower_tail(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian { mean, scale } => {
                0.5 * libm::erfc(-(x - mean) / (scale * std::f64::consts::SQRT_2))
            }
            Density::Logistic { loc, scale } => 1.0 / (1.0 + libm::exp(-(x - loc) / scale)),
        }
    }

    /// `P(X > x)`.
    pub fn upper_tail(&self, x: f64) -> f64 {
        match *self {
            Density::Gaussian { mean, scale } => {
                0.5 * libm::erfc((x - mean) / (scale * std::f64::consts::SQRT_2))
            }
            Density::Logistic { loc, scale } => 1.0 / (1.0 + libm::exp((x - loc) / scale)),
        }
    }

    /// Mass of the bin `[k - 0.5, k + 0.5)`, evaluated on whichever tail keeps
    /// the subtraction well conditioned.
    pub fn bin_mass(&self, k: i64) -> f64 {
        let k = k as f64;
        if k < self.center() {
            self.lower_tail(k + 0.5) - self.lower_tail(k - 0.5)
        } else {
            self.upper_tail(k - 0.5) - self.upper_tail(k + 0.5)
        }
    }
}

/// Parameters shared by every table built for one coding session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableParams {
    pub precision: u32,
    pub tail_mass: f64,
    pub scale_floor: f64,
}

impl Default for TableParams {
    fn default() -> Self {
        Self {
            precision: DEFAULT_PRECISION,
            tail_mass: DEFAULT_TAIL_MASS,
            scale_floor: DEFAULT_SCALE_FLOOR,
        }
    }
}

impl TableParams {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&self.precision) {
            return Err(EntropyError::InvalidPrecision(self.precision));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass <= 0.01) {
            return Err(EntropyError::InvalidTailMass(self.tail_mass));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    precision: u32,
    offset: i32,
    escape: bool,
    /// Cumulative counts, `bins + 1` entries from 0 to `2^precision`.
    cdf: Vec<u32>,
}

/// Borrowed form of a table, as used by the coder loops.
#[derive(Debug, Clone, Copy)]
pub struct CdfView<'a> {
    pub precision: u32,
    pub offset: i32,
    pub escape: bool,
    pub cdf: &'a [u32],
}

impl<'a> CdfView<'a> {
    pub fn bins(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Number of regular (non-escape) symbols.
    pub fn symbols(&self) -> usize {
        self.bins() - usize::from(self.escape)
    }

    pub fn max_symbol(&self) -> i32 {
        self.offset + self.symbols() as i32 - 1
    }

    pub fn escape_index(&self) -> Option<usize> {
        self.escape.then(|| self.bins() - 1)
    }

    /// Checks every structural invariant. Tables arriving over a flat array
    /// boundary go through this before use.
    pub fn validate(&self) -> Result<()> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&self.precision) {
            return Err(EntropyError::InvalidPrecision(self.precision));
        }
        if self.cdf.len() < 2 || self.symbols() == 0 {
            return Err(EntropyError::InvalidTable("no codable symbols".into()));
        }
        if self.cdf[0] != 0 || *self.cdf.last().unwrap() != 1 << self.precision {
            return Err(EntropyError::InvalidTable(
                "cdf must run from 0 to 2^precision".into(),
            ));
        }
        if self.cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EntropyError::InvalidTable(
                "cdf must be strictly increasing".into(),
            ));
        }
        let max = self.offset as i64 + self.symbols() as i64 - 1;
        if max > i32::MAX as i64 {
            return Err(EntropyError::InvalidTable("symbol range overflows i32".into()));
        }
        Ok(())
    }
}

impl CdfTable {
    /// Builds a table from explicit per-bin counts (escape bin last, if present).
    pub fn from_counts(counts: &[u32], offset: i32, precision: u32, escape: bool) -> Result<Self> {
        let mut cdf = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u64;
        cdf.push(0);
        for &c in counts {
            if c == 0 {
                return Err(EntropyError::InvalidTable("zero-width bin".into()));
            }
            acc += c as u64;
            if acc > u32::MAX as u64 {
                return Err(EntropyError::InvalidTable("counts overflow".into()));
            }
            cdf.push(acc as u32);
        }
        let table = Self {
            precision,
            offset,
            escape,
            cdf,
        };
        table.view().validate()?;
        Ok(table)
    }

    /// Equiprobable table over `n` symbols starting at `offset`.
    pub fn uniform(n: usize, offset: i32, precision: u32, escape: bool) -> Result<Self> {
        let bins = n + usize::from(escape);
        let total = 1u64 << precision.min(MAX_PRECISION);
        if n == 0 || bins as u64 > total {
            return Err(EntropyError::InvalidTable(format!(
                "{bins} bins do not fit precision {precision}"
            )));
        }
        let base = (total / bins as u64) as u32;
        let extra = (total % bins as u64) as usize;
        let counts: Vec<u32> = (0..bins).map(|i| base + u32::from(i < extra)).collect();
        Self::from_counts(&counts, offset, precision, escape)
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn max_symbol(&self) -> i32 {
        self.view().max_symbol()
    }

    pub fn view(&self) -> CdfView<'_> {
        CdfView {
            precision: self.precision,
            offset: self.offset,
            escape: self.escape,
            cdf: &self.cdf,
        }
    }

    /// Count assigned to `symbol`, or `None` when it must be escaped.
    pub fn count(&self, symbol: i32) -> Option<u32> {
        let idx = symbol.checked_sub(self.offset)?;
        if idx < 0 || idx as usize >= self.view().symbols() {
            return None;
        }
        let i = idx as usize;
        Some(self.cdf[i + 1] - self.cdf[i])
    }

    pub fn escape_count(&self) -> Option<u32> {
        let v = self.view();
        v.escape_index().map(|i| self.cdf[i + 1] - self.cdf[i])
    }

    /// Quantized probability of `symbol`; escaped symbols get the escape bin's mass.
    pub fn probability(&self, symbol: i32) -> f64 {
        let total = (1u64 << self.precision) as f64;
        match self.count(symbol).or_else(|| self.escape_count()) {
            Some(c) => c as f64 / total,
            None => 0.0,
        }
    }
}

/// Tabulates `density` over the symbols holding all but `tail_mass` of its mass,
/// with an escape bin for the rest.
pub fn build_cdf(density: Density, params: &TableParams) -> Result<CdfTable> {
    params.validate()?;
    let scale = density.scale();
    if !(scale >= params.scale_floor) || !scale.is_finite() || !density.center().is_finite() {
        return Err(EntropyError::ScaleBelowFloor {
            scale,
            floor: params.scale_floor,
        });
    }
    let total = 1u64 << params.precision;
    let half_tail = params.tail_mass / 2.0;

    let center = libm::round(density.center()) as i64;
    let mut lo = center;
    while density.lower_tail(lo as f64 - 0.5) > half_tail {
        lo -= 1;
    }
    let mut hi = center;
    while density.upper_tail(hi as f64 + 0.5) > half_tail {
        hi += 1;
    }
    // Leave on average at least four counts per bin.
    let max_symbols = (total >> 2) as i64 - 1;
    if hi - lo + 1 > max_symbols {
        let half = (max_symbols - 1) / 2;
        lo = lo.max(center - half);
        hi = hi.min(center + half);
    }

    let mut probs: Vec<f64> = (lo..=hi).map(|k| density.bin_mass(k)).collect();
    let covered: f64 = probs.iter().sum();
    probs.push((1.0 - covered).max(0.0));
    let counts = quantize_probabilities(&probs, total);
    let offset = i32::try_from(lo)
        .map_err(|_| EntropyError::InvalidTable("symbol range overflows i32".into()))?;
    CdfTable::from_counts(&counts, offset, params.precision, true)
}

/// Integer counts summing to `total`, each at least one, as close to `p * total`
/// as the constraints allow.
fn quantize_probabilities(probs: &[f64], total: u64) -> Vec<u32> {
    let norm: f64 = probs.iter().sum();
    let ideal: Vec<f64> = probs.iter().map(|p| p / norm * total as f64).collect();
    let mut counts: Vec<u64> = ideal.iter().map(|x| (libm::round(*x) as u64).max(1)).collect();
    let mut sum: u64 = counts.iter().sum();
    while sum > total {
        let i = (0..counts.len())
            .filter(|&i| counts[i] > 1)
            .max_by(|&a, &b| {
                let ea = counts[a] as f64 - ideal[a];
                let eb = counts[b] as f64 - ideal[b];
                ea.total_cmp(&eb).then(b.cmp(&a))
            })
            .expect("total leaves room for one count per bin");
        counts[i] -= 1;
        sum -= 1;
    }
    while sum < total {
        let i = (0..counts.len())
            .max_by(|&a, &b| {
                let da = ideal[a] - counts[a] as f64;
                let db = ideal[b] - counts[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        counts[i] += 1;
        sum += 1;
    }
    counts.into_iter().map(|c| c as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the standard normal density.
    fn normal_mass(a: f64, b: f64) -> f64 {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
        }
        s * h / 3.0
    }

    #[test]
    fn central_bin_matches_numerical_integration() {
        let oracle = (normal_mass(-0.5, 0.5) * 65536.0).round() as i64;
        assert_eq!(oracle, 25095);
        let t = build_cdf(Density::Gaussian { mean: 0.0, scale: 1.0 }, &TableParams::default())
            .unwrap();
        let c = t.count(0).unwrap() as i64;
        assert!((c - oracle).abs() <= 1, "central count {c}, oracle {oracle}");
    }

    #[test]
    fn narrow_gaussian_concentrates_in_central_bin() {
        let t = build_cdf(Density::Gaussian { mean: 0.0, scale: 0.11 }, &TableParams::default())
            .unwrap();
        assert!(t.probability(0) >= 0.9999);
        assert!(normal_mass(-0.5 / 0.11, 0.5 / 0.11) >= 0.9999);
    }

    #[test]
    fn tables_are_strictly_increasing_and_end_at_total() {
        for &scale in &[0.11, 0.3, 1.0, 7.5, 40.0, 256.0] {
            for &mean in &[0.0, 0.37, -12.6] {
                let t = build_cdf(Density::Gaussian { mean, scale }, &TableParams::default())
                    .unwrap();
                assert_eq!(*t.cdf().last().unwrap(), 65536);
                assert!(t.cdf().windows(2).all(|w| w[1] > w[0]));
                assert!(t.has_escape());
            }
        }
    }

    #[test]
    fn symbol_range_covers_all_but_tail_mass() {
        let params = TableParams::default();
        let d = Density::Gaussian { mean: 0.4, scale: 3.0 };
        let t = build_cdf(d, &params).unwrap();
        let outside = d.lower_tail(t.offset() as f64 - 0.5) + d.upper_tail(t.max_symbol() as f64 + 0.5);
        assert!(outside <= params.tail_mass);
    }

    #[test]
    fn logistic_tables_follow_the_location() {
        let t = build_cdf(Density::Logistic { loc: 3.2, scale: 0.5 }, &TableParams::default())
            .unwrap();
        let best = (t.offset()..=t.max_symbol())
            .max_by_key(|&s| t.count(s).unwrap())
            .unwrap();
        assert_eq!(best, 3);
    }

    #[test]
    fn low_precision_caps_table_width() {
        let params = TableParams { precision: 8, ..Default::default() };
        let t = build_cdf(Density::Gaussian { mean: 0.0, scale: 200.0 }, &params).unwrap();
        assert!(t.view().bins() <= 64);
        assert_eq!(*t.cdf().last().unwrap(), 256);
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = Density::Gaussian { mean: 0.0, scale: 1.0 };
        let p = TableParams { precision: 7, ..Default::default() };
        assert_eq!(build_cdf(d, &p), Err(EntropyError::InvalidPrecision(7)));
        let p = TableParams { precision: 25, ..Default::default() };
        assert!(build_cdf(d, &p).is_err());
        let p = TableParams { tail_mass: 0.0, ..Default::default() };
        assert!(matches!(build_cdf(d, &p), Err(EntropyError::InvalidTailMass(_))));
        let narrow = Density::Gaussian { mean: 0.0, scale: 0.05 };
        assert!(matches!(
            build_cdf(narrow, &TableParams::default()),
            Err(EntropyError::ScaleBelowFloor { .. })
        ));
    }

    #[test]
    fn from_counts_validates() {
        assert!(CdfTable::from_counts(&[128, 0, 128], 0, 8, false).is_err());
        assert!(CdfTable::from_counts(&[100, 100], 0, 8, false).is_err());
        let t = CdfTable::from_counts(&[100, 100, 56], -1, 8, true).unwrap();
        assert_eq!(t.max_symbol(), 0);
        assert_eq!(t.count(-1), Some(100));
        assert_eq!(t.count(1), None);
        assert_eq!(t.escape_count(), Some(56));
    }

    #[test]
    fn uniform_table_spreads_remainder() {
        let t = CdfTable::uniform(3, 0, 8, false).unwrap();
        assert_eq!(t.cdf(), &[0, 86, 171, 256]);
        let t = CdfTable::uniform(256, 0, 16, false).unwrap();
        assert!((0..256).all(|s| t.count(s) == Some(256)));
    }
}
