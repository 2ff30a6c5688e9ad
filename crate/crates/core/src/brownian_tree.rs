//! Seed-addressed Brownian tree over dyadic intervals of `[0, T]`.
//!
//! Each node stores the increment `W` and the space-time Levy area
//! `H = (1/h) ∫ (W_{s,r} - (r-s)/h W_{s,t}) dr` of the path over its
//! interval. The root pair is drawn directly; every other node comes from
//! its parent by the conditional midpoint split
//!
//! ```text
//! W_left  = W/2 + 3H/2 + Z        H_left  = H/4 - Z/2 + N/2
//! W_right = W/2 - 3H/2 - Z        H_right = H/4 - Z/2 - N/2
//! ```
//!
//! with `Z ~ N(0, h/16)`, `N ~ N(0, h/12)` drawn from a stream keyed on
//! `(seed, depth, index)` of the parent. Values therefore depend only on the
//! node address, never on query order or on what is cached.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use smallvec::SmallVec;

use crate::dyadic::{canonical_cover, DyadicInterval, DyadicTime};
use crate::error::{Result, SdeError};
use crate::rng::{mix64, KeyedRng};

/// Small inline vector used for noise-sized quantities.
pub type Vector = SmallVec<[f64; 4]>;

/// Default maximum tree depth (`h ≈ 1e-12 T`).
pub const DEFAULT_MAX_DEPTH: u32 = 40;

const TAG_ROOT: u64 = 0x524f_4f54;
const TAG_SPLIT: u64 = 0x5350_4c54;

/// `(h, W, H)` for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianSample {
    pub h: f64,
    pub w: Vector,
    pub area: Vector,
}

impl BrownianSample {
    pub fn zero(h: f64, dim: usize) -> Self {
        Self { h, w: SmallVec::from_elem(0.0, dim), area: SmallVec::from_elem(0.0, dim) }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// Concatenates samples on adjacent intervals `[s,u]`, `[u,t]` into the
/// sample on `[s,t]`.
///
/// Uses `I = ½W - H` for the normalised time integral `(1/h)∫(r-s) dW_r` of
/// each piece, which is additive after rescaling:
/// `h I = h1 I1 + h1 W2 + h2 I2`.
pub fn chain_samples(left: &BrownianSample, right: &BrownianSample) -> Result<BrownianSample> {
    if !(left.h > 0.0) || !(right.h > 0.0) {
        return Err(SdeError::InvalidInterval(format!("chain of non-positive lengths {} and {}", left.h, right.h)));
    }
    if left.dim() != right.dim() {
        return Err(SdeError::DimensionMismatch { what: "chained samples", expected: left.dim(), got: right.dim() });
    }
    let (h1, h2) = (left.h, right.h);
    let h = h1 + h2;
    let mut w = Vector::with_capacity(left.dim());
    let mut area = Vector::with_capacity(left.dim());
    for i in 0..left.dim() {
        let (w1, w2) = (left.w[i], right.w[i]);
        let wi = w1 + w2;
        let i1 = 0.5 * w1 - left.area[i];
        let i2 = 0.5 * w2 - right.area[i];
        let combined = (h1 * i1 + h1 * w2 + h2 * i2) / h;
        w.push(wi);
        area.push(0.5 * wi - combined);
    }
    Ok(BrownianSample { h, w, area })
}

/// Midpoint split given explicit bridge draws `z ~ N(0, h/16)` and
/// `n ~ N(0, h/12)`.
pub fn split_with(parent: &BrownianSample, z: &[f64], n: &[f64]) -> (BrownianSample, BrownianSample) {
    let d = parent.dim();
    let half = 0.5 * parent.h;
    let mut left = BrownianSample { h: half, w: Vector::with_capacity(d), area: Vector::with_capacity(d) };
    let mut right = BrownianSample { h: half, w: Vector::with_capacity(d), area: Vector::with_capacity(d) };
    for i in 0..d {
        let (w, a) = (parent.w[i], parent.area[i]);
        let drift = 0.5 * w + 1.5 * a;
        left.w.push(drift + z[i]);
        right.w.push(w - drift - z[i]);
        let base = 0.25 * a - 0.5 * z[i];
        left.area.push(base + 0.5 * n[i]);
        right.area.push(base - 0.5 * n[i]);
    }
    (left, right)
}

#[derive(Default, Clone, Copy)]
struct NodeHasher(u64);

impl Hasher for NodeHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = mix64(self.0 ^ b as u64);
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.0 = mix64(x);
    }
}

type NodeMap = HashMap<u64, BrownianSample, BuildHasherDefault<NodeHasher>>;

/// A virtual Brownian tree: `sample(interval)` is a pure function of
/// `(seed, dim, horizon, interval)`; the cache only saves work.
#[derive(Debug, Clone)]
pub struct BrownianTree {
    seed: u64,
    dim: usize,
    horizon: f64,
    max_depth: u32,
    cache: NodeMap,
    cache_capacity: Option<usize>,
}

impl BrownianTree {
    pub fn new(seed: u64, dim: usize, horizon: f64) -> Result<Self> {
        if dim == 0 {
            return Err(SdeError::InvalidParameter("noise dimension must be >= 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SdeError::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { seed, dim, horizon, max_depth: DEFAULT_MAX_DEPTH, cache: NodeMap::default(), cache_capacity: None })
    }

    pub fn with_max_depth(mut self, max_depth: u32) -> Self {
        self.max_depth = max_depth.min(crate::dyadic::MAX_TIME_DEPTH);
        self
    }

    /// Bounds the number of cached nodes. When the bound is hit the cache is
    /// flushed; values are unaffected.
    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache_capacity = Some(capacity.max(1));
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.len()
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    /// `(W, H)` over `[0, T]`.
    pub fn root_sample(&self) -> BrownianSample {
        let mut rng = KeyedRng::new(self.seed, &[TAG_ROOT, self.dim as u64]);
        let sw = self.horizon.sqrt();
        let sh = (self.horizon / 12.0).sqrt();
        let w = (0..self.dim).map(|_| sw * rng.gaussian()).collect();
        let area = (0..self.dim).map(|_| sh * rng.gaussian()).collect();
        BrownianSample { h: self.horizon, w, area }
    }

    /// Children of `interval` given its sample.
    pub fn split(&self, interval: DyadicInterval, parent: &BrownianSample) -> (BrownianSample, BrownianSample) {
        let mut rng = KeyedRng::new(self.seed, &[TAG_SPLIT, interval.depth() as u64, interval.index()]);
        let sz = (parent.h / 16.0).sqrt();
        let sn = (parent.h / 12.0).sqrt();
        let mut z: Vector = SmallVec::with_capacity(self.dim);
        let mut n: Vector = SmallVec::with_capacity(self.dim);
        for _ in 0..self.dim {
            z.push(sz * rng.gaussian());
        }
        for _ in 0..self.dim {
            n.push(sn * rng.gaussian());
        }
        split_with(parent, &z, &n)
    }

    fn check_depth(&self, depth: u32) -> Result<()> {
        if depth > self.max_depth {
            Err(SdeError::ResolutionExhausted { depth, max_depth: self.max_depth })
        } else {
            Ok(())
        }
    }

    fn insert(&mut self, node: DyadicInterval, s: BrownianSample) {
        if let Some(cap) = self.cache_capacity {
            if self.cache.len() >= cap {
                self.cache.clear();
            }
        }
        self.cache.insert(node.heap_id(), s);
    }

    /// Sample on a dyadic interval, descending from the deepest cached
    /// ancestor.
    pub fn sample(&mut self, interval: DyadicInterval) -> Result<BrownianSample> {
        self.check_depth(interval.depth())?;
        if let Some(s) = self.cache.get(&interval.heap_id()) {
            return Ok(s.clone());
        }
        let mut level = interval.depth();
        let mut current = loop {
            if level == 0 {
                let root = self.root_sample();
                self.insert(DyadicInterval::ROOT, root.clone());
                break root;
            }
            level -= 1;
            if let Some(s) = self.cache.get(&interval.ancestor(level).heap_id()) {
                break s.clone();
            }
        };
        while level < interval.depth() {
            let node = interval.ancestor(level);
            let (left, right) = self.split(node, &current);
            let (lnode, rnode) = node.children();
            let go_right = interval.ancestor(level + 1) == rnode;
            self.insert(lnode, left.clone());
            self.insert(rnode, right.clone());
            current = if go_right { right } else { left };
            level += 1;
        }
        Ok(current)
    }

    /// Recomputes a sample from the root without touching the cache.
    pub fn sample_uncached(&self, interval: DyadicInterval) -> Result<BrownianSample> {
        self.check_depth(interval.depth())?;
        let mut current = self.root_sample();
        for level in 0..interval.depth() {
            let node = interval.ancestor(level);
            let (left, right) = self.split(node, &current);
            current = if interval.ancestor(level + 1) == node.children().1 { right } else { left };
        }
        Ok(current)
    }

    /// `(h, W, H)` over `[s, t]`, folded left to right over the canonical
    /// dyadic cover.
    pub fn increment_between(&mut self, s: DyadicTime, t: DyadicTime) -> Result<BrownianSample> {
        let cover = canonical_cover(s, t)?;
        let mut acc: Option<BrownianSample> = None;
        for node in cover {
            let piece = self.sample(node)?;
            acc = Some(match acc {
                None => piece,
                Some(a) => chain_samples(&a, &piece)?,
            });
        }
        Ok(acc.expect("cover of a non-empty interval is non-empty"))
    }

    /// Every level from the root down to `depth`, left to right.
    pub fn levels(&self, depth: u32) -> Result<Vec<Vec<BrownianSample>>> {
        self.check_depth(depth)?;
        let mut out = Vec::with_capacity(depth as usize + 1);
        out.push(vec![self.root_sample()]);
        for level in 0..depth {
            let prev = &out[level as usize];
            let mut next = Vec::with_capacity(prev.len() * 2);
            for (i, parent) in prev.iter().enumerate() {
                let node = DyadicInterval::new(level, i as u64)?;
                let (l, r) = self.split(node, parent);
                next.push(l);
                next.push(r);
            }
            out.push(next);
        }
        Ok(out)
    }

    /// The `2^depth` samples at `depth`.
    pub fn leaves(&self, depth: u32) -> Result<Vec<BrownianSample>> {
        Ok(self.levels(depth)?.pop().expect("levels is never empty"))
    }
}

/// One CSV debug row per node: `depth,index,W_1..W_d,H_1..H_d`.
pub fn dump_csv_row(node: DyadicInterval, s: &BrownianSample) -> String {
    let mut row = format!("{},{}", node.depth(), node.index());
    for x in s.w.iter().chain(s.area.iter()) {
        row.push(',');
        row.push_str(&format!("{x:e}"));
    }
    row
}
