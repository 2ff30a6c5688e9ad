//! Hölder-type distances between a Brownian path and its piecewise-linear
//! interpolations, at both rough-path levels.
//!
//! The reference path is the tree's walk on `2^fine_depth` leaves of the
//! unit interval. The interpolation at depth `n` shares the path's values on
//! the depth-`n` grid and is linear in between. Distances are suprema over
//! all dyadic nodes down to the fine depth:
//!
//! ```text
//! level 1: ‖X̃_{s,t} - X_{s,t}‖ / |t-s|^α
//! level 2: ‖𝕏̃_{s,t} - 𝕏_{s,t}‖ / |t-s|^{2α}
//! ```
//!
//! Level-2 values start from `½ δ⊗δ` on each leaf and are merged with
//! Chen's relation.

use rayon::prelude::*;

use crate::brownian_tree::BrownianTree;
use crate::error::{Result, SdeError};
use crate::rng::derive_key;

const TAG_HOLDER: u64 = 0x484f_4c44;
const DIM: usize = 2;

/// A path increment with its second iterated integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signature2 {
    pub x: [f64; DIM],
    pub xx: [[f64; DIM]; DIM],
}

impl Signature2 {
    /// A straight segment with increment `x`.
    pub fn segment(x: [f64; DIM]) -> Self {
        let mut xx = [[0.0; DIM]; DIM];
        for i in 0..DIM {
            for j in 0..DIM {
                xx[i][j] = 0.5 * x[i] * x[j];
            }
        }
        Self { x, xx }
    }

    /// Chen concatenation: `self` followed by `next`.
    pub fn concat(&self, next: &Signature2) -> Self {
        let mut out = *self;
        for i in 0..DIM {
            out.x[i] += next.x[i];
            for j in 0..DIM {
                out.xx[i][j] += next.xx[i][j] + self.x[i] * next.x[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    pub alpha: f64,
    pub fine_depth: u32,
    pub depths: Vec<u32>,
    pub seeds: usize,
    /// Seed-averaged level-1 distance per depth.
    pub level1: Vec<f64>,
    /// Seed-averaged level-2 distance per depth.
    pub level2: Vec<f64>,
    /// Fraction of seeds whose level-1 sequence strictly decreases.
    pub decreasing_fraction: f64,
}

impl HolderReport {
    /// `last / first` for each level.
    pub fn decay(&self) -> (f64, f64) {
        let ratio = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN) / v.first().copied().unwrap_or(f64::NAN);
        (ratio(&self.level1), ratio(&self.level2))
    }

    /// Both levels shrink to at most half their first value.
    pub fn passed(&self) -> bool {
        let (a, b) = self.decay();
        a <= 0.5 && b <= 0.5
    }
}

/// Level-1 and level-2 distances between the fine path with increments
/// `fine` and its interpolation at `depth`.
pub fn holder_distances(fine: &[[f64; DIM]], depth: u32, alpha: f64) -> Result<(f64, f64)> {
    let n = fine.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(SdeError::InvalidParameter(format!("leaf count {n} is not a power of two")));
    }
    let fine_depth = n.trailing_zeros();
    if depth > fine_depth {
        return Err(SdeError::InvalidParameter(format!("depth {depth} exceeds fine depth {fine_depth}")));
    }
    let block = 1usize << (fine_depth - depth);
    let mut coarse = Vec::with_capacity(n);
    for chunk in fine.chunks(block) {
        let mut total = [0.0; DIM];
        for d in chunk {
            for i in 0..DIM {
                total[i] += d[i];
            }
        }
        let piece = total.map(|v| v / block as f64);
        coarse.extend(std::iter::repeat_n(piece, block));
    }

    let mut a: Vec<Signature2> = fine.iter().map(|&d| Signature2::segment(d)).collect();
    let mut b: Vec<Signature2> = coarse.into_iter().map(Signature2::segment).collect();
    let (mut sup1, mut sup2) = (0.0f64, 0.0f64);
    let mut len = 1.0 / n as f64;
    loop {
        let s1 = len.powf(alpha);
        let s2 = len.powf(2.0 * alpha);
        for (p, q) in a.iter().zip(&b) {
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for i in 0..DIM {
                d1 += (q.x[i] - p.x[i]).powi(2);
                for j in 0..DIM {
                    d2 += (q.xx[i][j] - p.xx[i][j]).powi(2);
                }
            }
            sup1 = sup1.max(d1.sqrt() / s1);
            sup2 = sup2.max(d2.sqrt() / s2);
        }
        if a.len() == 1 {
            break;
        }
        a = a.chunks(2).map(|p| p[0].concat(&p[1])).collect();
        b = b.chunks(2).map(|p| p[0].concat(&p[1])).collect();
        len *= 2.0;
    }
    Ok((sup1, sup2))
}

/// Seed-averaged distances over `depths` for `seeds` independent
/// two-dimensional paths on the unit interval.
pub fn holder_decay(alpha: f64, depths: &[u32], fine_depth: u32, seeds: usize, seed: u64) -> Result<HolderReport> {
    if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
        return Err(SdeError::InvalidParameter(format!("Hölder exponent must lie in (1/3, 1/2), got {alpha}")));
    }
    if seeds == 0 || depths.is_empty() {
        return Err(SdeError::InvalidParameter("need at least one seed and one depth".into()));
    }
    let per_seed: Vec<Vec<(f64, f64)>> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let tree = BrownianTree::new(derive_key(seed, &[TAG_HOLDER, s]), DIM, 1.0)?;
            let fine: Vec<[f64; DIM]> = tree.leaves(fine_depth)?.iter().map(|l| [l.w[0], l.w[1]]).collect();
            depths.iter().map(|&d| holder_distances(&fine, d, alpha)).collect()
        })
        .collect::<Result<_>>()?;
    let average =
        |k: usize, pick: fn(&(f64, f64)) -> f64| per_seed.iter().map(|v| pick(&v[k])).sum::<f64>() / seeds as f64;
    let level1 = (0..depths.len()).map(|k| average(k, |p| p.0)).collect();
    let level2 = (0..depths.len()).map(|k| average(k, |p| p.1)).collect();
    let decreasing = per_seed.iter().filter(|v| v.windows(2).all(|w| w[1].0 < w[0].0)).count();
    Ok(HolderReport {
        alpha,
        fine_depth,
        depths: depths.to_vec(),
        seeds,
        level1,
        level2,
        decreasing_fraction: decreasing as f64 / seeds as f64,
    })
}
