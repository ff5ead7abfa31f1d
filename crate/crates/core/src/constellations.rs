//! Counting dilated point constellations inside a finite set.
//!
//! Fix a shape `V = {v_1, ..., v_k}` of distinct vectors in `Z^d` and a
//! point set `A` inside the box `[1, N]^d`. A *hit* is a pair `(a, r)`
//! with `a` in the box, `r` in `[1, N - 1]`, and `a + r v_j` in `A` for
//! every `j`: a translated, dilated copy of the whole shape sitting
//! inside `A`.
//!
//! The brute-force counter enumerates `(r, a)` directly and exists as an
//! oracle for small instances. The fast counter works per dilation `r`:
//!
//! * when `A` is a coordinate product, the hit count factorizes into a
//!   product of one-dimensional counts, each computed by intersecting
//!   shifted copies of the coordinate's membership bit array word by
//!   word;
//! * otherwise it anchors on the first shape vector (`a + r v_1` must lie
//!   in `A`), walks the stored points, and probes the remaining vectors
//!   with hash lookups.
//!
//! Both produce exact integer counts per `r`, so the two evaluators agree
//! bit for bit and parallel reduction over `r` cannot change results.
//! Per-`r` counts also verify the dilation identity: scaling the shape by
//! `s` reindexes the counts as `count_{sV}(r) = count_V(s r)`.
//!
//! For prime-like sets the interesting statistic is the normalized count
//! `count * (ln N)^t / N^(d+1)` with `t = sum_i |Omega_i|`, where
//! `Omega_i` is the set of distinct `i`-th coordinates of the shape: each
//! coordinate of each grid column imposes one prime condition, so the
//! normalization should approach a constant as `N` grows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::subset::DenseSubset;
use rayon::prelude::*;

/// Largest number of vectors in a shape.
pub const MAX_SHAPE_POINTS: usize = 12;
/// Largest admissible |coordinate| of a shape vector.
pub const SHAPE_OFFSET_BOUND: i64 = 1_000_000;
/// Refuse counts whose estimated step count exceeds this.
pub const COUNT_STEP_BUDGET: u128 = 4_000_000_000;
/// Dilations per parallel work unit; fixed so reductions are ordered.
const PAR_CHUNK: usize = 256;

/// A constellation shape: `k` distinct vectors in `Z^d`, kept in
/// lexicographic order, plus the per-coordinate projection sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Shape {
    d: usize,
    vectors: Vec<Vec<i64>>,
    omega: Vec<Vec<i64>>,
}

impl Shape {
    /// Build a shape from its vectors; they must be nonempty, share one
    /// arity, stay within the coordinate bound, and be pairwise distinct.
    pub fn new(vectors: Vec<Vec<i64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Config("shape needs at least one vector".into()));
        }
        if vectors.len() > MAX_SHAPE_POINTS {
            return Err(Error::Config(format!(
                "shape has {} vectors; the cap is {MAX_SHAPE_POINTS}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if d == 0 {
            return Err(Error::Config("shape vectors need at least one coordinate".into()));
        }
        for v in &vectors {
            if v.len() != d {
                return Err(Error::Config(format!(
                    "shape vector {v:?} has {} coordinates, expected {d}",
                    v.len()
                )));
            }
            if let Some(&c) = v.iter().find(|&&c| c.abs() > SHAPE_OFFSET_BOUND) {
                return Err(Error::Config(format!(
                    "shape coordinate {c} exceeds the bound {SHAPE_OFFSET_BOUND}"
                )));
            }
        }
        let mut vectors = vectors;
        vectors.sort_unstable();
        if let Some(w) = vectors.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("shape vector {:?} appears twice", w[0])));
        }
        let omega = (0..d)
            .map(|i| {
                let mut col: Vec<i64> = vectors.iter().map(|v| v[i]).collect();
                col.sort_unstable();
                col.dedup();
                col
            })
            .collect();
        Ok(Self { d, vectors, omega })
    }

    /// Arity of the vectors.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of vectors.
    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    /// The vectors in lexicographic order.
    pub fn vectors(&self) -> &[Vec<i64>] {
        &self.vectors
    }

    /// Distinct `i`-th coordinates across all vectors, sorted.
    pub fn omega(&self) -> &[Vec<i64>] {
        &self.omega
    }

    /// Total number of distinct coordinate conditions `sum_i |Omega_i|`;
    /// the exponent of the logarithm in [`normalized_count`].
    pub fn log_factor_count(&self) -> usize {
        self.omega.iter().map(|o| o.len()).sum()
    }

    /// The shape scaled by a positive integer factor.
    pub fn dilate(&self, scale: u64) -> Result<Shape> {
        if scale == 0 {
            return Err(Error::Config("dilation factor must be positive".into()));
        }
        let scaled = self
            .vectors
            .iter()
            .map(|v| v.iter().map(|&c| c * scale as i64).collect())
            .collect();
        Shape::new(scaled)
    }
}

/// Exact hit count plus the scale-free normalization.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CountReport {
    /// Box bound `N`.
    pub n: u64,
    /// Total number of hits over all dilations.
    pub count: u128,
    /// `count * (ln N)^t / N^(d+1)` with `t` the coordinate-condition count.
    pub normalized: f64,
    #[serde(skip)]
    pub seconds: f64,
}

/// `count * (ln n)^t / n^(d+1)`, the statistic that stays bounded when
/// `A` is a prime grid.
pub fn normalized_count(shape: &Shape, n: u64, count: u128) -> f64 {
    if n < 2 {
        return 0.0;
    }
    count as f64 * (n as f64).ln().powi(shape.log_factor_count() as i32)
        / (n as f64).powi(shape.d as i32 + 1)
}

fn check_dims(shape: &Shape, a: &DenseSubset) -> Result<()> {
    if shape.d != a.d() {
        return Err(Error::Contract(format!(
            "shape has arity {} but the point set has dimension {}",
            shape.d,
            a.d()
        )));
    }
    Ok(())
}

/// Hit counts indexed by dilation: entry `r - 1` counts the pairs with
/// that `r`. Brute-force reference: enumerates every `(r, a)` pair.
pub fn count_by_r_bruteforce(shape: &Shape, a: &DenseSubset) -> Result<Vec<u128>> {
    check_dims(shape, a)?;
    let n = a.bound() as i64;
    if n < 2 {
        return Ok(Vec::new());
    }
    let cells = (n as u128).pow(shape.d as u32);
    let steps = cells * (n as u128 - 1) * shape.k() as u128;
    if steps > COUNT_STEP_BUDGET {
        return Err(Error::Budget(format!(
            "brute-force enumeration needs about {steps} steps, over the budget \
             {COUNT_STEP_BUDGET}; use the fast counter"
        )));
    }
    let mut per_r = vec![0u128; (n - 1) as usize];
    let mut point = vec![0i64; shape.d];
    for r in 1..n {
        let mut base = vec![1i64; shape.d];
        'cell: loop {
            'probe: {
                for v in &shape.vectors {
                    for i in 0..shape.d {
                        point[i] = base[i] + r * v[i];
                    }
                    if !a.contains(&point) {
                        break 'probe;
                    }
                }
                per_r[(r - 1) as usize] += 1;
            }
            let mut i = shape.d;
            loop {
                if i == 0 {
                    break 'cell;
                }
                i -= 1;
                base[i] += 1;
                if base[i] <= n {
                    break;
                }
                base[i] = 1;
            }
        }
    }
    Ok(per_r)
}

/// Hit counts indexed by dilation, computed per `r` in parallel.
///
/// Product sets factorize into per-coordinate shifted-bit-array counts;
/// general sets walk their stored points anchored on the first vector.
pub fn count_by_r(shape: &Shape, a: &DenseSubset) -> Result<Vec<u128>> {
    check_dims(shape, a)?;
    let n = a.bound() as i64;
    if n < 2 {
        return Ok(Vec::new());
    }
    let rs: Vec<i64> = (1..n).collect();
    let per_r: Vec<u128> = match a.factors() {
        Some(factors) => {
            let words = (a.bound() / 64 + 1) as u128;
            let steps = (n as u128 - 1) * shape.d as u128 * words * shape.k() as u128;
            if steps > COUNT_STEP_BUDGET {
                return Err(Error::Budget(format!(
                    "counting needs about {steps} steps, over the budget {COUNT_STEP_BUDGET}"
                )));
            }
            rs.par_chunks(PAR_CHUNK)
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|&r| {
                            let mut prod = 1u128;
                            for (i, set) in factors.iter().enumerate() {
                                let shifts: Vec<i64> =
                                    shape.omega[i].iter().map(|&c| c * r).collect();
                                prod *= set.shifted_intersection_count(&shifts) as u128;
                                if prod == 0 {
                                    break;
                                }
                            }
                            prod
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
                .concat()
        }
        None => {
            let steps = (n as u128 - 1) * a.len() * shape.k() as u128;
            if steps > COUNT_STEP_BUDGET {
                return Err(Error::Budget(format!(
                    "counting needs about {steps} steps, over the budget {COUNT_STEP_BUDGET}"
                )));
            }
            let anchor = &shape.vectors[0];
            let pts: Vec<Vec<i64>> = a.points().collect();
            rs.par_chunks(PAR_CHUNK)
                .map(|chunk| {
                    let d = shape.d;
                    let mut a_vec = vec![0i64; d];
                    let mut probe = vec![0i64; d];
                    chunk
                        .iter()
                        .map(|&r| {
                            let mut cnt = 0u128;
                            'point: for p in &pts {
                                for i in 0..d {
                                    let ai = p[i] - r * anchor[i];
                                    if ai < 1 || ai > n {
                                        continue 'point;
                                    }
                                    a_vec[i] = ai;
                                }
                                for v in &shape.vectors[1..] {
                                    for i in 0..d {
                                        probe[i] = a_vec[i] + r * v[i];
                                    }
                                    if !a.contains(&probe) {
                                        continue 'point;
                                    }
                                }
                                cnt += 1;
                            }
                            cnt
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
                .concat()
        }
    };
    Ok(per_r)
}

fn report_from(shape: &Shape, n: u64, per_r: &[u128], seconds: f64) -> CountReport {
    let count: u128 = per_r.iter().sum();
    CountReport { n, count, normalized: normalized_count(shape, n, count), seconds }
}

/// Total hit count by direct enumeration; oracle for small instances.
pub fn count_bruteforce(shape: &Shape, a: &DenseSubset) -> Result<CountReport> {
    let start = std::time::Instant::now();
    let per_r = count_by_r_bruteforce(shape, a)?;
    Ok(report_from(shape, a.bound(), &per_r, start.elapsed().as_secs_f64()))
}

/// Total hit count via the factorized / anchored per-`r` counters.
pub fn count_fast(shape: &Shape, a: &DenseSubset) -> Result<CountReport> {
    let start = std::time::Instant::now();
    let per_r = count_by_r(shape, a)?;
    Ok(report_from(shape, a.bound(), &per_r, start.elapsed().as_secs_f64()))
}

/// Stream every hit to `emit(r, a)` in lexicographic `(r, a)` order and
/// return the number of hits. The enumeration order is deterministic:
/// dilations ascend, and for each dilation base points ascend
/// lexicographically.
pub fn hits<F>(shape: &Shape, a: &DenseSubset, mut emit: F) -> Result<u128>
where
    F: FnMut(u64, &[i64]) -> Result<()>,
{
    check_dims(shape, a)?;
    let n = a.bound() as i64;
    if n < 2 {
        return Ok(0);
    }
    let mut total = 0u128;
    match a.factors() {
        Some(factors) => {
            let words = (a.bound() / 64 + 1) as u128;
            let steps = (n as u128 - 1) * shape.d as u128 * words * shape.k() as u128;
            if steps > COUNT_STEP_BUDGET {
                return Err(Error::Budget(format!(
                    "hit enumeration needs about {steps} steps, over the budget \
                     {COUNT_STEP_BUDGET}"
                )));
            }
            for r in 1..n {
                let columns: Vec<Vec<i64>> = factors
                    .iter()
                    .enumerate()
                    .map(|(i, set)| {
                        let shifts: Vec<i64> = shape.omega[i].iter().map(|&c| c * r).collect();
                        set.shifted_intersection_values(&shifts)
                    })
                    .collect();
                if columns.iter().any(|c| c.is_empty()) {
                    continue;
                }
                let mut idx = vec![0usize; shape.d];
                let mut point = vec![0i64; shape.d];
                'cell: loop {
                    for i in 0..shape.d {
                        point[i] = columns[i][idx[i]];
                    }
                    emit(r as u64, &point)?;
                    total += 1;
                    let mut i = shape.d;
                    loop {
                        if i == 0 {
                            break 'cell;
                        }
                        i -= 1;
                        idx[i] += 1;
                        if idx[i] < columns[i].len() {
                            break;
                        }
                        idx[i] = 0;
                    }
                }
            }
        }
        None => {
            let steps = (n as u128 - 1) * a.len() * shape.k() as u128;
            if steps > COUNT_STEP_BUDGET {
                return Err(Error::Budget(format!(
                    "hit enumeration needs about {steps} steps, over the budget \
                     {COUNT_STEP_BUDGET}"
                )));
            }
            let anchor = &shape.vectors[0];
            let pts: Vec<Vec<i64>> = a.points().collect();
            let d = shape.d;
            let mut a_vec = vec![0i64; d];
            let mut probe = vec![0i64; d];
            for r in 1..n {
                // Anchor points ascend lexicographically and the map
                // p -> p - r v_1 preserves that order.
                'point: for p in &pts {
                    for i in 0..d {
                        let ai = p[i] - r * anchor[i];
                        if ai < 1 || ai > n {
                            continue 'point;
                        }
                        a_vec[i] = ai;
                    }
                    for v in &shape.vectors[1..] {
                        for i in 0..d {
                            probe[i] = a_vec[i] + r * v[i];
                        }
                        if !a.contains(&probe) {
                            continue 'point;
                        }
                    }
                    emit(r as u64, &a_vec)?;
                    total += 1;
                }
            }
        }
    }
    Ok(total)
}

/// Result of the dilation cross-check between a shape and its `s`-fold
/// scaling: `count_{sV}(r) = count_V(s r)` must hold for every dilation
/// that stays in range.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DilationReport {
    /// The scaling factor `s`.
    pub scale: u64,
    /// Number of dilations compared: `floor((N - 1) / s)`.
    pub checked: u64,
    /// Hits of the original shape summed over the compared dilations.
    pub total_original: u128,
    /// Hits of the scaled shape summed over the compared dilations.
    pub total_scaled: u128,
    /// Whether every compared dilation matched exactly.
    pub matches: bool,
    /// First `(r, original, scaled)` disagreement, when any.
    pub first_mismatch: Option<(u64, u128, u128)>,
}

/// Verify the dilation identity for `shape` against its `s`-fold scaling
/// over the same point set, comparing exact per-`r` counts.
pub fn dilation_check(shape: &Shape, a: &DenseSubset, scale: u64) -> Result<DilationReport> {
    if scale == 0 {
        return Err(Error::Config("dilation factor must be positive".into()));
    }
    let scaled_shape = shape.dilate(scale)?;
    let original = count_by_r(shape, a)?;
    let scaled = count_by_r(&scaled_shape, a)?;
    let n = a.bound();
    let checked = if n < 2 { 0 } else { (n - 1) / scale };
    let mut total_original = 0u128;
    let mut total_scaled = 0u128;
    let mut first_mismatch = None;
    for rp in 1..=checked {
        let want = original[(rp * scale - 1) as usize];
        let got = scaled[(rp - 1) as usize];
        total_original += want;
        total_scaled += got;
        if want != got && first_mismatch.is_none() {
            first_mismatch = Some((rp, want, got));
        }
    }
    Ok(DilationReport {
        scale,
        checked,
        total_original,
        total_scaled,
        matches: first_mismatch.is_none(),
        first_mismatch,
    })
}

/// One row of a growth study: the same shape counted over a family of
/// point sets with increasing bounds.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingRow {
    pub n: u64,
    pub count: u128,
    pub normalized: f64,
    #[serde(skip)]
    pub seconds: f64,
}

/// Count the shape over point sets produced by `build` at each bound and
/// report the normalized statistic per bound.
pub fn scaling_report<B>(shape: &Shape, grid: &[u64], mut build: B) -> Result<Vec<ScalingRow>>
where
    B: FnMut(u64) -> Result<DenseSubset>,
{
    if grid.is_empty() {
        return Err(Error::Config("growth study needs at least one bound".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &n in grid {
        let a = build(n)?;
        if a.bound() != n {
            return Err(Error::Contract(format!(
                "point set built for bound {n} reports bound {}",
                a.bound()
            )));
        }
        let rep = count_fast(shape, &a)?;
        rows.push(ScalingRow {
            n,
            count: rep.count,
            normalized: rep.normalized,
            seconds: rep.seconds,
        });
    }
    Ok(rows)
}
