//! The W-trick: residue selection, coordinate rescaling, and the
//! normalized weight fields supported on rescaled primes.
//!
//! Fixing a primorial `W = prod of primes <= w` and a residue vector `b`
//! coprime to W, the affine map `a -> W*(a + offset) + b_i` with
//! `offset = floor(delta' * N / W)` carries the window `[1, N']`,
//! `N' = floor((1 - delta') * N / W)`, into the top part of `[N]`. Pulling
//! a subset A of the grid back through this map removes the bias that
//! small primes imprint on A, and the weight field
//! `nu_i(a) = (phi(W)/W) * log N * [rescaled a hits a prime]`
//! has mean close to 1 by the prime number theorem in progressions.
//!
//! All window arithmetic is exact: `delta'` is carried as a reduced
//! rational and every floor is an integer division, so two runs can never
//! disagree about the geometry.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nu::{self, NuRef};
use crate::sieve::{primorial, PrimeTable, Primorial};
use crate::subset::{CoordSet, DenseSubset};

/// Joint residue-tuple selection is used while `phi(W)^d` stays below this
/// cap; beyond it the coordinate-wise marginal fallback takes over.
pub const JOINT_SELECTION_CAP: u128 = 1 << 40;

/// An exact rational in (0, 1/2], stored reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!(
                "window fraction must be positive, got {num}/{den}"
            )));
        }
        if 2 * (num as u128) > den as u128 {
            return Err(Error::Config(format!(
                "window fraction must be at most 1/2, got {num}/{den}"
            )));
        }
        let g = gcd(num, den);
        Ok(Ratio { num: num / g, den: den / g })
    }

    /// Parse "num/den" or a plain decimal like "0.25".
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("cannot parse fraction {text:?}: {why}"));
        if let Some((n, d)) = text.split_once('/') {
            let num = n.trim().parse::<u64>().map_err(|_| bad("bad numerator"))?;
            let den = d.trim().parse::<u64>().map_err(|_| bad("bad denominator"))?;
            return Ratio::new(num, den);
        }
        if let Some((int, frac)) = text.split_once('.') {
            if !(int.is_empty() || int == "0") {
                return Err(bad("must be at most 1/2"));
            }
            if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad("bad decimal digits"));
            }
            let num = frac.parse::<u64>().map_err(|_| bad("bad decimal digits"))?;
            let den = 10u64.pow(frac.len() as u32);
            return Ratio::new(num, den);
        }
        Err(bad("expected num/den or a decimal"))
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Inputs that determine the window geometry.
#[derive(Debug, Clone, Copy)]
pub struct WTrickParams {
    pub w: u64,
    pub delta_prime: Ratio,
    pub n: u64,
}

/// A fully determined W-trick: primorial, window, and residue vector.
#[derive(Debug, Clone)]
pub struct WTrickContext {
    pub primorial: Primorial,
    pub delta_prime: Ratio,
    /// Original scale N.
    pub n: u64,
    /// Rescaled window length N' = floor((1 - delta') * N / W).
    pub n_prime: u64,
    /// Window offset floor(delta' * N / W).
    pub offset: u64,
    /// Residues b_i, one per coordinate, each in [1, W) and coprime to W.
    pub residues: Vec<u64>,
}

impl WTrickContext {
    pub fn new(params: &WTrickParams, residues: Vec<u64>) -> Result<Self> {
        let pm = primorial(params.w)?;
        let d = residues.len();
        if d == 0 {
            return Err(Error::Config("residue vector must be nonempty".into()));
        }
        for &b in &residues {
            if b == 0 || b >= pm.value || gcd(b, pm.value) != 1 {
                return Err(Error::Config(format!(
                    "residue {b} is not an admissible class modulo {}",
                    pm.value
                )));
            }
        }
        let dp = params.delta_prime;
        // The window (delta' N, N] must sit above w so every prime in it
        // is coprime to W.
        if (dp.num as u128) * (params.n as u128) <= (params.w as u128) * (dp.den as u128) {
            return Err(Error::Contract(format!(
                "window start delta' * N = {}/{} * {} does not exceed w = {}",
                dp.num, dp.den, params.n, params.w
            )));
        }
        let n_prime = (((dp.den - dp.num) as u128 * params.n as u128)
            / (dp.den as u128 * pm.value as u128)) as u64;
        let offset =
            ((dp.num as u128 * params.n as u128) / (dp.den as u128 * pm.value as u128)) as u64;
        if n_prime < 1 {
            return Err(Error::Degenerate(format!(
                "rescaled window is empty: N = {} is too small for W = {}",
                params.n, pm.value
            )));
        }
        Ok(WTrickContext {
            primorial: pm,
            delta_prime: dp,
            n: params.n,
            n_prime,
            offset,
            residues,
        })
    }

    pub fn d(&self) -> usize {
        self.residues.len()
    }

    /// The original-scale integer the rescaled point `a` on axis `i`
    /// represents: `W * (a + offset) + b_i`.
    #[inline]
    pub fn unrescale(&self, i: usize, a: i64) -> i64 {
        self.primorial.value as i64 * (a + self.offset as i64) + self.residues[i] as i64
    }

    /// Largest original-scale integer the weight on axis `i` can probe.
    pub fn max_candidate(&self, i: usize) -> u64 {
        self.primorial.value * (self.n_prime + self.offset) + self.residues[i]
    }
}

/// Outcome of residue selection.
#[derive(Debug, Clone)]
pub struct ResidueSelection {
    pub context: WTrickContext,
    /// Points of A in the window lying in the selected class.
    pub attained: u128,
    /// Points of A in the window whose residues are all coprime to W.
    pub window_coprime: u128,
    /// All points of A in the window.
    pub window_total: u128,
    /// True when the coordinate-wise fallback picked the class.
    pub marginal: bool,
}

/// Pick the residue vector holding the most of `A ∩ [delta' N, N]^d`.
///
/// Joint selection maximizes the exact count of the residue *tuple* and
/// breaks ties toward the lexicographically smallest tuple. When
/// `phi(W)^d` exceeds [`JOINT_SELECTION_CAP`], selection falls back to
/// maximizing each coordinate's marginal count independently; the
/// pigeonhole guarantee then holds per coordinate rather than jointly.
pub fn select_residues(a: &DenseSubset, params: &WTrickParams) -> Result<ResidueSelection> {
    let pm = primorial(params.w)?;
    if a.bound() > params.n {
        return Err(Error::Contract(format!(
            "subset bound {} exceeds the declared scale N = {}",
            a.bound(),
            params.n
        )));
    }
    let d = a.d();
    let dp = params.delta_prime;
    // a_i >= delta' * N as exact integers: a_i * den >= num * N.
    let in_window = |v: i64| (v as u128) * (dp.den as u128) >= (dp.num as u128) * (params.n as u128);
    let coprime = |b: u64| gcd(b, pm.value) == 1;

    let phi_pow = (0..d).try_fold(1u128, |acc, _| acc.checked_mul(pm.totient as u128));
    let joint_feasible = matches!(phi_pow, Some(p) if p <= JOINT_SELECTION_CAP);

    let (residues, attained, window_coprime, window_total, marginal) = if let Some(factors) =
        a.factors()
    {
        // Product subsets: the joint count of a tuple is the product of
        // marginal counts, so per-coordinate argmax IS the joint argmax.
        let mut residues = Vec::with_capacity(d);
        let mut attained: u128 = 1;
        let mut window_coprime: u128 = 1;
        let mut window_total: u128 = 1;
        for factor in factors {
            let mut tally: HashMap<u64, u128> = HashMap::new();
            let mut total: u128 = 0;
            let mut total_coprime: u128 = 0;
            for &v in factor.sorted().iter().filter(|&&v| in_window(v)) {
                total += 1;
                let b = (v as u64) % pm.value;
                if coprime(b) {
                    total_coprime += 1;
                    *tally.entry(b).or_insert(0) += 1;
                }
            }
            let best = argmax_smallest(&tally);
            let (b, c) = best.ok_or_else(|| {
                Error::Degenerate(
                    "no admissible residue class holds any point of the subset window".into(),
                )
            })?;
            residues.push(b);
            attained *= c;
            window_coprime *= total_coprime;
            window_total *= total;
        }
        (residues, attained, window_coprime, window_total, false)
    } else if joint_feasible {
        // General subsets, joint mode: tally observed residue tuples.
        let mut tally: HashMap<Vec<u64>, u128> = HashMap::new();
        let mut window_total: u128 = 0;
        let mut window_coprime: u128 = 0;
        for p in a.points() {
            if !p.iter().all(|&v| in_window(v)) {
                continue;
            }
            window_total += 1;
            let tuple: Vec<u64> = p.iter().map(|&v| (v as u64) % pm.value).collect();
            if tuple.iter().all(|&b| coprime(b)) {
                window_coprime += 1;
                *tally.entry(tuple).or_insert(0) += 1;
            }
        }
        let best = tally
            .iter()
            .max_by(|(ta, ca), (tb, cb)| ca.cmp(cb).then_with(|| tb.cmp(ta)))
            .map(|(t, &c)| (t.clone(), c));
        let (tuple, attained) = best.ok_or_else(|| {
            Error::Degenerate(
                "no admissible residue tuple holds any point of the subset window".into(),
            )
        })?;
        (tuple, attained, window_coprime, window_total, false)
    } else {
        // General subsets, marginal fallback: maximize each coordinate
        // independently, then count the selected tuple exactly.
        let mut tallies: Vec<HashMap<u64, u128>> = vec![HashMap::new(); d];
        let mut window_total: u128 = 0;
        let mut window_coprime: u128 = 0;
        for p in a.points() {
            if !p.iter().all(|&v| in_window(v)) {
                continue;
            }
            window_total += 1;
            let tuple: Vec<u64> = p.iter().map(|&v| (v as u64) % pm.value).collect();
            if tuple.iter().all(|&b| coprime(b)) {
                window_coprime += 1;
                for (i, &b) in tuple.iter().enumerate() {
                    *tallies[i].entry(b).or_insert(0) += 1;
                }
            }
        }
        let mut residues = Vec::with_capacity(d);
        for tally in &tallies {
            let (b, _) = argmax_smallest(tally).ok_or_else(|| {
                Error::Degenerate(
                    "no admissible residue class holds any point of the subset window".into(),
                )
            })?;
            residues.push(b);
        }
        let attained = a
            .points()
            .filter(|p| {
                p.iter().all(|&v| in_window(v))
                    && p.iter()
                        .zip(residues.iter())
                        .all(|(&v, &b)| (v as u64) % pm.value == b)
            })
            .count() as u128;
        (residues, attained, window_coprime, window_total, true)
    };

    // Pigeonhole check: the winning class must hold at least the coprime
    // window mass divided by the number of admissible classes. In joint
    // mode that is attained * phi(W)^d >= coprime count; an overflowing
    // product satisfies the inequality trivially.
    if !marginal {
        let ok = match phi_pow {
            Some(p) => attained.checked_mul(p).map_or(true, |lhs| lhs >= window_coprime),
            None => true,
        };
        if !ok {
            return Err(Error::NumericalIntegrity(format!(
                "selected residue class holds {attained} points, below the pigeonhole floor \
                 {window_coprime} / phi(W)^{d}"
            )));
        }
    }

    let context = WTrickContext::new(params, residues)?;
    Ok(ResidueSelection { context, attained, window_coprime, window_total, marginal })
}

fn argmax_smallest(tally: &HashMap<u64, u128>) -> Option<(u64, u128)> {
    tally
        .iter()
        .max_by(|(ba, ca), (bb, cb)| ca.cmp(cb).then_with(|| bb.cmp(ba)))
        .map(|(&b, &c)| (b, c))
}

/// Pull `A` back through the affine window map: the rescaled subset
/// contains `a ∈ [1, N']^d` exactly when `W*(a_i + offset) + b_i ∈ A`
/// for every coordinate.
pub fn rescale_subset(a: &DenseSubset, ctx: &WTrickContext) -> Result<DenseSubset> {
    if a.d() != ctx.d() {
        return Err(Error::Contract(format!(
            "subset dimension {} does not match context dimension {}",
            a.d(),
            ctx.d()
        )));
    }
    let w = ctx.primorial.value as i64;
    let offset = ctx.offset as i64;
    let pull = |i: usize, v: i64| -> Option<i64> {
        let b = ctx.residues[i] as i64;
        if v < b || (v - b) % w != 0 {
            return None;
        }
        let x = (v - b) / w - offset;
        (x >= 1 && x as u64 <= ctx.n_prime).then_some(x)
    };
    let tag = format!("rescaled({})", a.tag());
    if let Some(factors) = a.factors() {
        let mut pulled = Vec::with_capacity(factors.len());
        for (i, factor) in factors.iter().enumerate() {
            let values: Vec<i64> =
                factor.sorted().iter().filter_map(|&v| pull(i, v)).collect();
            pulled.push(CoordSet::new(values, ctx.n_prime)?);
        }
        DenseSubset::product_of(pulled, &tag)
    } else {
        let points: Vec<Vec<i64>> = a
            .points()
            .filter_map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &v)| pull(i, v))
                    .collect::<Option<Vec<i64>>>()
            })
            .collect();
        DenseSubset::from_points(ctx.d(), ctx.n_prime, points, &tag)
    }
}

/// The weight field of one coordinate: a two-valued dense array on
/// `[1, N']` taking `(phi(W)/W) * log N` on rescaled primes and 0
/// elsewhere, extended by zero outside the window.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub coordinate: usize,
    /// 1-indexed values; index 0 is an unused guard.
    pub values: Vec<f64>,
    /// Sorted indices with nonzero value.
    pub support: Vec<i64>,
    /// The nonzero value `(phi(W)/W) * log N`.
    pub height: f64,
    /// Mean over the window `[1, N']`.
    pub mean: f64,
}

impl WeightField {
    pub fn nu(&self) -> NuRef<'_> {
        NuRef::Dense(&self.values)
    }
}

/// Build the weight field for coordinate `i` of the context.
pub fn build_weight(table: &PrimeTable, ctx: &WTrickContext, coordinate: usize) -> Result<WeightField> {
    if coordinate >= ctx.d() {
        return Err(Error::Contract(format!(
            "coordinate {coordinate} out of range for dimension {}",
            ctx.d()
        )));
    }
    let needed = ctx.max_candidate(coordinate);
    if table.limit() < needed {
        return Err(Error::Contract(format!(
            "prime table covers only 2..={} but the weight probes up to {needed}",
            table.limit()
        )));
    }
    let height = ctx.primorial.totient_ratio() * (ctx.n as f64).ln();
    let mut values = nu::dense_zeros(ctx.n_prime);
    for a in 1..=ctx.n_prime {
        let candidate = ctx.primorial.value * (a + ctx.offset) + ctx.residues[coordinate];
        if table.is_prime(candidate) {
            values[a as usize] = height;
        }
    }
    let support = nu::dense_support(&values);
    let mean = nu::dense_mean(&values);
    Ok(WeightField { coordinate, values, support, height, mean })
}
