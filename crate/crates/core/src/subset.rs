//! Finite subsets of the integer grid `[1, bound]^d`.
//!
//! Two representations coexist behind one interface. A *product* subset
//! stores one coordinate set per axis (the prime grid `(P ∩ [N])^d` is the
//! flagship example) and supports any dimension, because it never
//! materializes the cartesian product. A *general* subset stores explicit
//! points, packed into 128-bit keys for O(1) membership, and is capped at
//! dimension 4 — beyond that the packing no longer fits and, at desk
//! scale, neither does the point cloud.
//!
//! Counting and averaging code branches on the representation: product
//! structure factorizes per coordinate, general structure gets exact hash
//! probing. Both views agree on `contains`, `len`, and point iteration
//! (always in lexicographic order, so downstream output is reproducible).

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sieve::PrimeTable;

/// Largest dimension supported by the general (explicit point) form.
pub const MAX_GENERAL_DIM: usize = 4;

/// One coordinate axis of a product subset: sorted values plus a
/// membership bit array over `[1, bound]`.
#[derive(Debug, Clone)]
pub struct CoordSet {
    bound: u64,
    sorted: Vec<i64>,
    words: Vec<u64>,
}

impl CoordSet {
    /// Build from arbitrary values in `[1, bound]`; sorts and deduplicates.
    pub fn new(mut values: Vec<i64>, bound: u64) -> Result<Self> {
        values.sort_unstable();
        values.dedup();
        if let Some(&bad) = values.iter().find(|&&v| v < 1 || v as u64 > bound) {
            return Err(Error::Config(format!(
                "coordinate value {bad} lies outside [1, {bound}]"
            )));
        }
        let mut words = vec![0u64; (bound / 64 + 1) as usize];
        for &v in &values {
            words[(v / 64) as usize] |= 1u64 << (v % 64);
        }
        Ok(CoordSet { bound, sorted: values, words })
    }

    /// Membership probe; anything outside `[1, bound]` is absent.
    #[inline]
    pub fn contains(&self, v: i64) -> bool {
        v >= 1
            && (v as u64) <= self.bound
            && (self.words[(v / 64) as usize] >> (v % 64)) & 1 == 1
    }

    /// Values in increasing order.
    pub fn sorted(&self) -> &[i64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Word `w` of the membership bit array read at a signed bit offset:
    /// bit `t` of the result is the membership bit of value `start + t`,
    /// with zero fill outside the array.
    #[inline]
    fn word_at(&self, start: i64) -> u64 {
        let fetch = |q: i64| -> u64 {
            if q < 0 || q as usize >= self.words.len() {
                0
            } else {
                self.words[q as usize]
            }
        };
        let q = start.div_euclid(64);
        let rem = start.rem_euclid(64) as u32;
        if rem == 0 {
            fetch(q)
        } else {
            (fetch(q) >> rem) | (fetch(q + 1) << (64 - rem))
        }
    }

    /// Bits of word `w` that correspond to values in `[1, bound]`.
    #[inline]
    fn valid_mask(&self, w: usize) -> u64 {
        let base = w as i64 * 64;
        let mut mask = !0u64;
        if w == 0 {
            mask &= !1;
        }
        let keep = (self.bound as i64 - base + 1).clamp(0, 64);
        if keep < 64 {
            mask &= (1u64 << keep) - 1;
        }
        mask
    }

    /// Number of `x` in `[1, bound]` with `x + s` in the set for every
    /// shift `s`. Runs over the bit array word by word, so the cost is
    /// `(bound / 64) * shifts.len()` regardless of the set's density.
    pub fn shifted_intersection_count(&self, shifts: &[i64]) -> u64 {
        let mut total = 0u64;
        for w in 0..self.words.len() {
            let base = w as i64 * 64;
            let mut acc = self.valid_mask(w);
            for &s in shifts {
                if acc == 0 {
                    break;
                }
                acc &= self.word_at(base + s);
            }
            total += acc.count_ones() as u64;
        }
        total
    }

    /// The values counted by [`Self::shifted_intersection_count`], in
    /// increasing order.
    pub fn shifted_intersection_values(&self, shifts: &[i64]) -> Vec<i64> {
        let mut out = Vec::new();
        for w in 0..self.words.len() {
            let base = w as i64 * 64;
            let mut acc = self.valid_mask(w);
            for &s in shifts {
                if acc == 0 {
                    break;
                }
                acc &= self.word_at(base + s);
            }
            while acc != 0 {
                let t = acc.trailing_zeros() as i64;
                out.push(base + t);
                acc &= acc - 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum SubsetKind {
    Product(Vec<Arc<CoordSet>>),
    General {
        keys: HashSet<u128>,
        /// Points in lexicographic order.
        points: Vec<Vec<i64>>,
    },
}

/// A finite subset of `[1, bound]^d` with O(1) expected membership.
#[derive(Debug, Clone)]
pub struct DenseSubset {
    d: usize,
    bound: u64,
    tag: String,
    kind: SubsetKind,
}

/// Pack a point with coordinates in `[1, 2^31)` into a 128-bit key
/// (32 bits per coordinate, d <= 4).
#[inline]
fn pack_point(p: &[i64]) -> u128 {
    debug_assert!(p.len() <= MAX_GENERAL_DIM);
    let mut key: u128 = 0;
    for (t, &c) in p.iter().enumerate() {
        debug_assert!((1..(1i64 << 31)).contains(&c));
        key |= (c as u128) << (32 * t);
    }
    key
}

impl DenseSubset {
    /// Build a general subset from explicit points in `[1, bound]^d`.
    pub fn from_points(d: usize, bound: u64, points: Vec<Vec<i64>>, tag: &str) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("subset dimension must be at least 1".into()));
        }
        if d > MAX_GENERAL_DIM {
            return Err(Error::Config(format!(
                "general subsets support dimension <= {MAX_GENERAL_DIM}, got {d}; use product structure instead"
            )));
        }
        if bound == 0 || bound >= (1u64 << 31) {
            return Err(Error::Config(format!(
                "subset bound must lie in [1, 2^31), got {bound}"
            )));
        }
        let mut sorted = points;
        for p in &sorted {
            if p.len() != d {
                return Err(Error::Config(format!(
                    "point {p:?} has {} coordinates, expected {d}",
                    p.len()
                )));
            }
            if let Some(&bad) = p.iter().find(|&&c| c < 1 || c as u64 > bound) {
                return Err(Error::Config(format!(
                    "point {p:?} has coordinate {bad} outside [1, {bound}]"
                )));
            }
        }
        sorted.sort_unstable();
        sorted.dedup();
        let keys = sorted.iter().map(|p| pack_point(p)).collect();
        Ok(DenseSubset {
            d,
            bound,
            tag: tag.to_string(),
            kind: SubsetKind::General { keys, points: sorted },
        })
    }

    /// Build a product subset from per-axis coordinate sets.
    pub fn product_of(factors: Vec<CoordSet>, tag: &str) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("subset dimension must be at least 1".into()));
        }
        let bound = factors[0].bound;
        if factors.iter().any(|f| f.bound != bound) {
            return Err(Error::Config(
                "all factors of a product subset must share one bound".into(),
            ));
        }
        Ok(DenseSubset {
            d: factors.len(),
            bound,
            tag: tag.to_string(),
            kind: SubsetKind::Product(factors.into_iter().map(Arc::new).collect()),
        })
    }

    /// The prime grid `(P ∩ [n])^d`, sharing one coordinate set across axes.
    pub fn prime_grid(table: &PrimeTable, d: usize, n: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("subset dimension must be at least 1".into()));
        }
        if n > table.limit() {
            return Err(Error::Contract(format!(
                "prime grid bound {n} exceeds the table limit {}",
                table.limit()
            )));
        }
        let values: Vec<i64> = table
            .primes()
            .iter()
            .take_while(|&&p| p <= n)
            .map(|&p| p as i64)
            .collect();
        let factor = Arc::new(CoordSet::new(values, n)?);
        Ok(DenseSubset {
            d,
            bound: n,
            tag: format!("prime-grid[{n}]^{d}"),
            kind: SubsetKind::Product(vec![factor; d]),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    /// Free-form description of where the subset came from.
    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Per-axis factors when the subset is a product, `None` otherwise.
    pub fn factors(&self) -> Option<&[Arc<CoordSet>]> {
        match &self.kind {
            SubsetKind::Product(f) => Some(f),
            SubsetKind::General { .. } => None,
        }
    }

    /// Number of points (products never materialize, so this can be huge).
    pub fn len(&self) -> u128 {
        match &self.kind {
            SubsetKind::Product(f) => f.iter().map(|c| c.len() as u128).product(),
            SubsetKind::General { points, .. } => points.len() as u128,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership probe; points outside `[1, bound]^d` are absent.
    #[inline]
    pub fn contains(&self, p: &[i64]) -> bool {
        if p.len() != self.d {
            return false;
        }
        match &self.kind {
            SubsetKind::Product(f) => p.iter().zip(f.iter()).all(|(&c, set)| set.contains(c)),
            SubsetKind::General { keys, .. } => {
                if p.iter().any(|&c| c < 1 || c as u64 > self.bound) {
                    return false;
                }
                keys.contains(&pack_point(p))
            }
        }
    }

    /// All points in lexicographic order. Product subsets stream the
    /// cartesian product; call sites must budget-check `len()` first.
    pub fn points(&self) -> Box<dyn Iterator<Item = Vec<i64>> + '_> {
        match &self.kind {
            SubsetKind::General { points, .. } => Box::new(points.iter().cloned()),
            SubsetKind::Product(factors) => Box::new(CartesianPoints::new(factors)),
        }
    }

    /// Parse the line-oriented interchange format: one point per line,
    /// coordinates separated by whitespace, `#` starts a comment.
    pub fn parse_text(text: &str, bound: u64, tag: &str) -> Result<Self> {
        let mut points: Vec<Vec<i64>> = Vec::new();
        let mut d: Option<usize> = None;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let coords: Vec<i64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<i64>().map_err(|_| {
                        Error::Config(format!(
                            "line {}: cannot parse coordinate {tok:?}",
                            line_no + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            match d {
                None => d = Some(coords.len()),
                Some(expected) if expected != coords.len() => {
                    return Err(Error::Config(format!(
                        "line {}: point has {} coordinates, previous lines had {expected}",
                        line_no + 1,
                        coords.len()
                    )));
                }
                _ => {}
            }
            points.push(coords);
        }
        let d = d.ok_or_else(|| Error::Degenerate("subset file contains no points".into()))?;
        DenseSubset::from_points(d, bound, points, tag)
    }
}

/// Lexicographic cartesian-product iterator over product factors.
struct CartesianPoints<'a> {
    factors: &'a [Arc<CoordSet>],
    index: Vec<usize>,
    done: bool,
}

impl<'a> CartesianPoints<'a> {
    fn new(factors: &'a [Arc<CoordSet>]) -> Self {
        let done = factors.iter().any(|f| f.is_empty());
        CartesianPoints { factors, index: vec![0; factors.len()], done }
    }
}

impl<'a> Iterator for CartesianPoints<'a> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let point: Vec<i64> = self
            .index
            .iter()
            .zip(self.factors.iter())
            .map(|(&i, f)| f.sorted()[i])
            .collect();
        // Advance odometer, last axis fastest.
        for axis in (0..self.factors.len()).rev() {
            self.index[axis] += 1;
            if self.index[axis] < self.factors[axis].len() {
                return Some(point);
            }
            self.index[axis] = 0;
            if axis == 0 {
                self.done = true;
            }
        }
        Some(point)
    }
}
