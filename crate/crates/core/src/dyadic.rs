//! Exact dyadic times and intervals on `[0, T]`.
//!
//! Times are integer pairs `(k, n)` meaning `k * 2^-n * T`; all comparisons
//! are integer comparisons. Floats only appear when a time is handed to a
//! vector field or written out.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Result, SdeError};

/// Deepest level any time may live on.
pub const MAX_TIME_DEPTH: u32 = 62;

/// `k * 2^-n * T`, always stored in lowest terms (`k` odd unless `n == 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicTime {
    numerator: u64,
    depth: u32,
}

impl DyadicTime {
    pub const ZERO: DyadicTime = DyadicTime { numerator: 0, depth: 0 };
    /// The horizon itself.
    pub const END: DyadicTime = DyadicTime { numerator: 1, depth: 0 };

    pub fn new(numerator: u64, depth: u32) -> Result<Self> {
        if depth > MAX_TIME_DEPTH {
            return Err(SdeError::ResolutionExhausted { depth, max_depth: MAX_TIME_DEPTH });
        }
        if numerator > (1u64 << depth) {
            return Err(SdeError::InvalidInterval(format!("time {numerator}/2^{depth} lies beyond the horizon")));
        }
        Ok(Self::canonical(numerator, depth))
    }

    fn canonical(mut k: u64, mut n: u32) -> Self {
        if k == 0 {
            return Self::ZERO;
        }
        let tz = k.trailing_zeros().min(n);
        k >>= tz;
        n -= tz;
        Self { numerator: k, depth: n }
    }

    pub fn numerator(self) -> u64 {
        self.numerator
    }

    /// Depth of the canonical representation.
    pub fn depth(self) -> u32 {
        self.depth
    }

    /// Numerator when expressed on the grid of `depth` (which must be at
    /// least the canonical depth).
    pub fn ticks_at(self, depth: u32) -> u64 {
        debug_assert!(depth >= self.depth);
        self.numerator << (depth - self.depth)
    }

    /// Fraction of the horizon.
    pub fn fraction(self) -> f64 {
        self.numerator as f64 / (1u64 << self.depth) as f64
    }

    pub fn value(self, horizon: f64) -> f64 {
        self.fraction() * horizon
    }

    /// Exact conversion of an absolute time; fails unless `t / horizon` is a
    /// dyadic rational with denominator at most `2^max_depth`.
    pub fn from_value(t: f64, horizon: f64, max_depth: u32) -> Result<Self> {
        let x = t / horizon;
        if !(0.0..=1.0).contains(&x) {
            return Err(SdeError::InvalidInterval(format!("time {t} outside [0, {horizon}]")));
        }
        for n in 0..=max_depth.min(MAX_TIME_DEPTH) {
            let scaled = x * (1u64 << n) as f64;
            if scaled.fract() == 0.0 {
                return Self::new(scaled as u64, n);
            }
        }
        Err(SdeError::NonDyadic(t, max_depth))
    }

    /// Largest grid point of spacing `2^-depth` that is `<= x * T`.
    pub fn floor_fraction(x: f64, depth: u32) -> Result<Self> {
        let ticks = (x.clamp(0.0, 1.0) * (1u64 << depth) as f64).floor() as u64;
        Self::new(ticks, depth)
    }

    pub fn add_ticks(self, ticks: u64, depth: u32) -> Result<Self> {
        let d = depth.max(self.depth);
        let ticks = ticks << (d - depth);
        Self::new(self.ticks_at(d) + ticks, d)
    }

    /// `self - earlier` as a fraction of the horizon.
    pub fn fraction_since(self, earlier: DyadicTime) -> f64 {
        let d = self.depth.max(earlier.depth);
        (self.ticks_at(d) as f64 - earlier.ticks_at(d) as f64) / (1u64 << d) as f64
    }

    /// Whether `self` is a multiple of `2^-depth`.
    pub fn is_multiple_of_depth(self, depth: u32) -> bool {
        self.depth <= depth
    }
}

impl Ord for DyadicTime {
    fn cmp(&self, other: &Self) -> Ordering {
        let d = self.depth.max(other.depth);
        self.ticks_at(d).cmp(&other.ticks_at(d))
    }
}

impl PartialOrd for DyadicTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DyadicTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.numerator, self.depth)
    }
}

/// `[k 2^-n T, (k+1) 2^-n T]`, the addressing unit of the Brownian tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicInterval {
    depth: u32,
    index: u64,
}

impl DyadicInterval {
    pub const ROOT: DyadicInterval = DyadicInterval { depth: 0, index: 0 };

    pub fn new(depth: u32, index: u64) -> Result<Self> {
        if depth > MAX_TIME_DEPTH {
            return Err(SdeError::ResolutionExhausted { depth, max_depth: MAX_TIME_DEPTH });
        }
        if index >= (1u64 << depth) {
            return Err(SdeError::InvalidInterval(format!("index {index} out of range at depth {depth}")));
        }
        Ok(Self { depth, index })
    }

    pub fn depth(self) -> u32 {
        self.depth
    }

    pub fn index(self) -> u64 {
        self.index
    }

    pub fn children(self) -> (DyadicInterval, DyadicInterval) {
        let depth = self.depth + 1;
        (DyadicInterval { depth, index: 2 * self.index }, DyadicInterval { depth, index: 2 * self.index + 1 })
    }

    pub fn parent(self) -> Option<DyadicInterval> {
        (self.depth > 0).then(|| DyadicInterval { depth: self.depth - 1, index: self.index / 2 })
    }

    /// Ancestor at `depth` (which must not exceed this interval's depth).
    pub fn ancestor(self, depth: u32) -> DyadicInterval {
        debug_assert!(depth <= self.depth);
        DyadicInterval { depth, index: self.index >> (self.depth - depth) }
    }

    pub fn start(self) -> DyadicTime {
        DyadicTime::canonical(self.index, self.depth)
    }

    pub fn end(self) -> DyadicTime {
        DyadicTime::canonical(self.index + 1, self.depth)
    }

    /// Length as a fraction of the horizon.
    pub fn fraction(self) -> f64 {
        1.0 / (1u64 << self.depth) as f64
    }

    /// Heap numbering: unique per node, `2^depth + index`.
    pub(crate) fn heap_id(self) -> u64 {
        (1u64 << self.depth) | self.index
    }

    /// The dyadic interval `[s, t]` exactly, if it is one.
    pub fn from_endpoints(s: DyadicTime, t: DyadicTime) -> Option<DyadicInterval> {
        let cover = canonical_cover(s, t).ok()?;
        (cover.len() == 1).then(|| cover[0])
    }
}

/// Left-to-right decomposition of `[s, t]` into maximal aligned dyadic
/// intervals.
pub fn canonical_cover(s: DyadicTime, t: DyadicTime) -> Result<Vec<DyadicInterval>> {
    if s >= t {
        return Err(SdeError::InvalidInterval(format!("empty interval [{s}, {t}]")));
    }
    let depth = s.depth().max(t.depth());
    let mut a = s.ticks_at(depth);
    let b = t.ticks_at(depth);
    let mut out = Vec::new();
    while a < b {
        let mut size = if a == 0 { 1u64 << depth } else { 1u64 << a.trailing_zeros() };
        while a + size > b {
            size >>= 1;
        }
        let level = depth - size.trailing_zeros();
        out.push(DyadicInterval { depth: level, index: a / size });
        a += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_and_ordering() {
        let a = DyadicTime::new(4, 3).unwrap();
        assert_eq!(a, DyadicTime::new(1, 1).unwrap());
        assert_eq!(a.depth(), 1);
        let b = DyadicTime::new(3, 2).unwrap();
        assert!(a < b);
        assert_eq!(DyadicTime::new(8, 3).unwrap(), DyadicTime::END);
        assert!(DyadicTime::new(9, 3).is_err());
    }

    #[test]
    fn children_partition_parent() {
        let p = DyadicInterval::new(3, 5).unwrap();
        let (l, r) = p.children();
        assert_eq!((l.depth(), l.index()), (4, 10));
        assert_eq!((r.depth(), r.index()), (4, 11));
        assert_eq!(l.start(), p.start());
        assert_eq!(l.end(), r.start());
        assert_eq!(r.end(), p.end());
        assert_eq!(l.parent(), Some(p));
    }

    #[test]
    fn cover_of_aligned_interval_is_itself() {
        let i = DyadicInterval::new(4, 6).unwrap();
        assert_eq!(canonical_cover(i.start(), i.end()).unwrap(), vec![i]);
        assert_eq!(canonical_cover(DyadicTime::ZERO, DyadicTime::END).unwrap(), vec![DyadicInterval::ROOT]);
    }

    #[test]
    fn cover_of_quarter_to_three_quarters() {
        let s = DyadicTime::new(1, 2).unwrap();
        let t = DyadicTime::new(3, 2).unwrap();
        let c = canonical_cover(s, t).unwrap();
        assert_eq!(c, vec![DyadicInterval::new(2, 1).unwrap(), DyadicInterval::new(2, 2).unwrap()]);
    }

    #[test]
    fn cover_is_contiguous_and_maximal() {
        let s = DyadicTime::new(3, 5).unwrap();
        let t = DyadicTime::new(29, 6).unwrap();
        let c = canonical_cover(s, t).unwrap();
        assert_eq!(c.first().unwrap().start(), s);
        assert_eq!(c.last().unwrap().end(), t);
        for w in c.windows(2) {
            assert_eq!(w[0].end(), w[1].start());
            // two siblings side by side would merge into their parent
            assert!(!(w[0].depth() == w[1].depth() && w[0].parent() == w[1].parent()));
        }
    }

    #[test]
    fn from_value_exact() {
        let t = DyadicTime::from_value(2.0, 8.0, 40).unwrap();
        assert_eq!(t, DyadicTime::new(1, 2).unwrap());
        assert!(DyadicTime::from_value(0.1, 1.0, 40).is_err());
    }
}
