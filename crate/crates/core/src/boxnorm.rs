//! Weighted box norms on small index sets, and the generalized
//! von Neumann inequality they support.
//!
//! Fix a finite index set B (at most 4 elements here) and a side length
//! H (at most 16). The data of an instance is, for every subset B' of B,
//! a function `f_{B'} : [H]^{B'} -> R` and a weight
//! `nu_{B'} : [H]^{B'} -> R_{>=0}`. The weighted box norm of a function g
//! on `[H]^{B'}` is
//!
//! ```text
//!   ||g||^(2^|B'|) = E over h0, h1 in [H]^{B'} of
//!       prod_{omega in {0,1}^{B'}} g(h^(omega))
//!     * prod_{B'' proper subset of B'} prod_{omega'' in {0,1}^{B''}}
//!           nu_{B''}(h^(omega'') restricted to B'')
//! ```
//!
//! where `h^(omega)` picks component b from copy `omega_b`. The inner
//! mean is nonnegative for valid weights (it is an iterated
//! Cauchy–Schwarz square); a value below -1e-9 is reported as a
//! numerical-integrity failure because it can only arise from a bug.
//!
//! The von Neumann check verifies, on an explicit instance with
//! `|f_{B'}| <= nu_{B'}` for every proper B', that
//!
//! ```text
//!   |E_{h in [H]^B} prod_{B' subset of B} f_{B'}(h_{B'})|
//!     <= ||f_B||_{box, nu} * prod_{B' proper} ||nu_{B'}||^(1 / 2^(|B| - |B'|))
//! ```
//!
//! Everything is evaluated by exact enumeration: at these sizes the
//! enumeration *is* the specification, and it doubles as its own oracle.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::KahanSum;

/// Largest supported index-set size.
pub const MAX_B: usize = 4;
/// Largest supported side length.
pub const MAX_H: usize = 16;
/// Enumeration refuses above this many elementary operations.
pub const ENUMERATION_BUDGET: u128 = 2_000_000_000;
/// Inner means below this are integrity failures; above it, tiny
/// negatives are clamped to zero before taking roots.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-9;

/// An explicit box-norm instance: one function and one weight per subset
/// of the index set, stored as flat arrays indexed mixed-radix by H.
#[derive(Debug, Clone)]
pub struct BoxInstance {
    /// |B|, between 1 and 4.
    pub b_size: usize,
    /// Side length H, between 1 and 16.
    pub h: usize,
    /// Optional integer attributes ("which grid point is element b").
    pub labels: Option<Vec<Vec<i64>>>,
    /// `nu[mask]` has `h^popcount(mask)` entries, all nonnegative.
    pub nu: Vec<Vec<f64>>,
    /// `f[mask]`, same shapes as `nu`.
    pub f: Vec<Vec<f64>>,
}

/// Flat index of the assignment `coords` (each in `0..h`) for a subset
/// whose elements are listed in ascending order: position u has stride h^u.
#[inline]
fn flat_index(coords: &[usize], h: usize) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for &c in coords {
        idx += c * stride;
        stride *= h;
    }
    idx
}

impl BoxInstance {
    /// Check structural invariants: sizes, array lengths, finite values,
    /// nonnegative weights.
    pub fn validate(&self) -> Result<()> {
        if self.b_size == 0 || self.b_size > MAX_B {
            return Err(Error::Config(format!(
                "index set size must lie in 1..={MAX_B}, got {}",
                self.b_size
            )));
        }
        if self.h == 0 || self.h > MAX_H {
            return Err(Error::Config(format!(
                "side length must lie in 1..={MAX_H}, got {}",
                self.h
            )));
        }
        let n_masks = 1usize << self.b_size;
        if self.nu.len() != n_masks || self.f.len() != n_masks {
            return Err(Error::Config(format!(
                "expected {n_masks} subset entries for nu and f, got {} and {}",
                self.nu.len(),
                self.f.len()
            )));
        }
        for mask in 0..n_masks {
            let want = self.h.pow(mask.count_ones());
            for (name, table) in [("nu", &self.nu), ("f", &self.f)] {
                if table[mask].len() != want {
                    return Err(Error::Config(format!(
                        "{name} entry for subset mask {mask:#b} has {} values, expected {want}",
                        table[mask].len()
                    )));
                }
                if let Some(&bad) = table[mask].iter().find(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "{name} entry for subset mask {mask:#b} contains non-finite value {bad}"
                    )));
                }
            }
            if let Some(&bad) = self.nu[mask].iter().find(|&&v| v < 0.0) {
                return Err(Error::Config(format!(
                    "weights must be nonnegative; subset mask {mask:#b} holds {bad}"
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.b_size {
                return Err(Error::Config(format!(
                    "expected {} labels, got {}",
                    self.b_size,
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    fn full_mask(&self) -> usize {
        (1 << self.b_size) - 1
    }
}

/// One factor of the big product: which table to read, and how each of
/// its components mixes h0/h1 (component `local`, copy chosen by `omega`
/// bit `bit`, contributing with stride `stride`).
struct Factor<'a> {
    table: &'a [f64],
    /// (local position within B', stride) per element of the factor's subset.
    wiring: Vec<(usize, usize)>,
}

impl<'a> Factor<'a> {
    #[inline]
    fn eval(&self, omega: usize, h0: &[usize], h1: &[usize]) -> f64 {
        let mut idx = 0;
        for (bit, &(local, stride)) in self.wiring.iter().enumerate() {
            let c = if (omega >> bit) & 1 == 1 { h1[local] } else { h0[local] };
            idx += c * stride;
        }
        self.table[idx]
    }
}

/// The inner mean of the box norm of `top` over the subset `mask`,
/// weighted by the instance's `nu` tables on proper subsets.
fn box_inner_mean(inst: &BoxInstance, mask: usize, top: &[f64]) -> Result<f64> {
    inst.validate()?;
    if mask > inst.full_mask() {
        return Err(Error::Config(format!(
            "subset mask {mask:#b} is not a subset of the {}-element index set",
            inst.b_size
        )));
    }
    let positions: Vec<usize> = (0..inst.b_size).filter(|&b| (mask >> b) & 1 == 1).collect();
    let s = positions.len();
    let h = inst.h;

    // Degenerate subset: one empty assignment, one omega, no weights.
    if s == 0 {
        return Ok(top[0]);
    }

    let mut cost = (h as u128).pow(2 * s as u32) * (1u128 << s);
    // Wiring for the top function: all s components, stride h^t.
    let mut factors: Vec<(Factor, usize)> = Vec::new(); // (factor, omega count)
    let top_wiring: Vec<(usize, usize)> =
        (0..s).map(|t| (t, h.pow(t as u32))).collect();
    factors.push((Factor { table: top, wiring: top_wiring }, 1 << s));

    // Wiring for each proper subset of the mask.
    let mut sub = (mask - 1) & mask;
    loop {
        let elems: Vec<usize> = (0..inst.b_size).filter(|&b| (sub >> b) & 1 == 1).collect();
        let wiring: Vec<(usize, usize)> = elems
            .iter()
            .enumerate()
            .map(|(u, &b)| {
                let local = positions.iter().position(|&p| p == b).unwrap();
                (local, h.pow(u as u32))
            })
            .collect();
        cost += (h as u128).pow(2 * s as u32) * (1u128 << elems.len());
        factors.push((Factor { table: &inst.nu[sub], wiring }, 1 << elems.len()));
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & mask;
    }
    if cost > ENUMERATION_BUDGET {
        return Err(Error::Budget(format!(
            "box-norm enumeration needs ~{cost} operations (budget {ENUMERATION_BUDGET})"
        )));
    }

    let mut acc = KahanSum::new();
    let mut h0 = vec![0usize; s];
    let mut h1 = vec![0usize; s];
    'pairs: loop {
        let mut term = 1.0;
        for (factor, omegas) in &factors {
            for omega in 0..*omegas {
                term *= factor.eval(omega, &h0, &h1);
            }
        }
        acc.add(term);
        // Advance the (h0, h1) odometer.
        for slot in 0..2 * s {
            let v = if slot < s { &mut h0[slot] } else { &mut h1[slot - s] };
            *v += 1;
            if *v < h {
                continue 'pairs;
            }
            *v = 0;
        }
        break;
    }
    let pairs = (h as f64).powi(2 * s as i32);
    Ok(acc.value() / pairs)
}

/// Turn an inner mean into a norm, guarding the nonnegativity invariant.
fn root_of_mean(mean: f64, s: usize, what: &str) -> Result<f64> {
    if mean < -NEGATIVITY_TOLERANCE {
        return Err(Error::NumericalIntegrity(format!(
            "inner mean of {what} came out {mean}, below the nonnegativity floor"
        )));
    }
    Ok(mean.max(0.0).powf(1.0 / (1u64 << s) as f64))
}

/// Box norm of the instance's function on the given subset.
pub fn box_norm(inst: &BoxInstance, mask: usize) -> Result<f64> {
    let mean = box_inner_mean(inst, mask, &inst.f[mask])?;
    root_of_mean(mean, mask.count_ones() as usize, "the function")
}

/// Box norm of the instance's weight on the given subset (the weight
/// plays the role of the function; strictly smaller subsets still
/// contribute their weights).
pub fn weight_norm(inst: &BoxInstance, mask: usize) -> Result<f64> {
    let mean = box_inner_mean(inst, mask, &inst.nu[mask])?;
    root_of_mean(mean, mask.count_ones() as usize, "the weight")
}

/// Outcome of a von Neumann verification.
#[derive(Debug, Clone, Serialize)]
pub struct VonNeumannReport {
    /// |E prod f_{B'}|.
    pub lhs: f64,
    /// Norm product bound.
    pub rhs: f64,
    /// rhs - lhs; the inequality holds when this is >= -1e-9.
    pub slack: f64,
    pub holds: bool,
}

/// Verify the generalized von Neumann inequality on an explicit instance.
/// Requires `|f_{B'}| <= nu_{B'}` pointwise on every proper subset.
pub fn von_neumann_check(inst: &BoxInstance) -> Result<VonNeumannReport> {
    inst.validate()?;
    let full = inst.full_mask();
    for mask in 0..full {
        for (x, (&fv, &nv)) in inst.f[mask].iter().zip(inst.nu[mask].iter()).enumerate() {
            if fv.abs() > nv {
                return Err(Error::Contract(format!(
                    "dominance fails on subset mask {mask:#b} at index {x}: |{fv}| > {nv}"
                )));
            }
        }
    }

    // lhs: single average over [H]^B of the product over all subsets.
    let s = inst.b_size;
    let h = inst.h;
    let mut acc = KahanSum::new();
    let mut assignment = vec![0usize; s];
    'grid: loop {
        let mut term = 1.0;
        for mask in 0..=full {
            let coords: Vec<usize> = (0..s)
                .filter(|&b| (mask >> b) & 1 == 1)
                .map(|b| assignment[b])
                .collect();
            term *= inst.f[mask][flat_index(&coords, h)];
        }
        acc.add(term);
        for slot in 0..s {
            assignment[slot] += 1;
            if assignment[slot] < h {
                continue 'grid;
            }
            assignment[slot] = 0;
        }
        break;
    }
    let lhs = (acc.value() / (h as f64).powi(s as i32)).abs();

    let mut rhs = box_norm(inst, full)?;
    for mask in 0..full {
        let exponent = 1.0 / (1u64 << (s - mask.count_ones() as usize)) as f64;
        rhs *= weight_norm(inst, mask)?.powf(exponent);
    }
    let slack = rhs - lhs;
    Ok(VonNeumannReport { lhs, rhs, slack, holds: slack >= -NEGATIVITY_TOLERANCE })
}

/// Human-readable table of how each factor of the box-norm product mixes
/// the two assignment copies; useful when debugging index conventions.
pub fn index_table(inst: &BoxInstance, mask: usize) -> String {
    let positions: Vec<usize> = (0..inst.b_size).filter(|&b| (mask >> b) & 1 == 1).collect();
    let mut out = String::new();
    let describe = |subset: usize, out: &mut String, name: &str| {
        let elems: Vec<usize> =
            (0..inst.b_size).filter(|&b| (subset >> b) & 1 == 1).collect();
        for omega in 0..(1usize << elems.len()) {
            let mix: Vec<String> = elems
                .iter()
                .enumerate()
                .map(|(bit, &b)| {
                    let copy = (omega >> bit) & 1;
                    format!("h{copy}[{b}]")
                })
                .collect();
            out.push_str(&format!("{name}{{{}}}({})\n", format_elems(&elems), mix.join(", ")));
        }
    };
    describe(mask, &mut out, "f");
    let mut sub = if mask == 0 { return out } else { (mask - 1) & mask };
    loop {
        describe(sub, &mut out, "nu");
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & mask;
    }
    let _ = positions;
    out
}

fn format_elems(elems: &[usize]) -> String {
    elems.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
}

/// Draw a random instance with `f = +/- nu` on every subset and weight
/// entries from {0, 0.5, 1, 2}; such instances satisfy the dominance
/// contract by construction.
pub fn random_dominated_instance<R: Rng>(rng: &mut R, b_size: usize, h: usize) -> BoxInstance {
    let n_masks = 1usize << b_size;
    let mut nu = Vec::with_capacity(n_masks);
    let mut f = Vec::with_capacity(n_masks);
    let heights = [0.0, 0.5, 1.0, 2.0];
    for mask in 0..n_masks {
        let len = h.pow((mask as u32).count_ones());
        let nus: Vec<f64> = (0..len).map(|_| heights[rng.gen_range(0..heights.len())]).collect();
        let fs: Vec<f64> = nus
            .iter()
            .map(|&v| if rng.gen_bool(0.5) { v } else { -v })
            .collect();
        nu.push(nus);
        f.push(fs);
    }
    BoxInstance { b_size, h, labels: None, nu, f }
}

/// Serialized form: subsets keyed by comma-joined ascending element
/// indices ("" for the empty subset); missing entries default to
/// constant 1.
#[derive(Debug, Serialize, Deserialize)]
struct BoxInstanceFile {
    schema: u32,
    b_size: usize,
    h: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Vec<i64>>>,
    #[serde(default)]
    nu: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    f: BTreeMap<String, Vec<f64>>,
}

fn mask_key(mask: usize, b_size: usize) -> String {
    format_elems(&(0..b_size).filter(|&b| (mask >> b) & 1 == 1).collect::<Vec<_>>())
}

fn key_mask(key: &str, b_size: usize) -> Result<usize> {
    let mut mask = 0usize;
    if key.trim().is_empty() {
        return Ok(0);
    }
    for tok in key.split(',') {
        let b: usize = tok
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad subset key {key:?}")))?;
        if b >= b_size {
            return Err(Error::Config(format!(
                "subset key {key:?} names element {b}, but the index set has {b_size} elements"
            )));
        }
        mask |= 1 << b;
    }
    Ok(mask)
}

impl BoxInstance {
    /// Parse the JSON interchange form.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: BoxInstanceFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse box instance: {e}")))?;
        if file.schema != 1 {
            return Err(Error::Config(format!(
                "unsupported box instance schema {}",
                file.schema
            )));
        }
        let n_masks = 1usize
            .checked_shl(file.b_size as u32)
            .filter(|_| file.b_size >= 1 && file.b_size <= MAX_B)
            .ok_or_else(|| {
                Error::Config(format!("index set size must lie in 1..={MAX_B}, got {}", file.b_size))
            })?;
        let mut nu: Vec<Vec<f64>> =
            (0..n_masks).map(|m| vec![1.0; file.h.pow((m as u32).count_ones())]).collect();
        let mut f = nu.clone();
        for (key, values) in &file.nu {
            nu[key_mask(key, file.b_size)?] = values.clone();
        }
        for (key, values) in &file.f {
            f[key_mask(key, file.b_size)?] = values.clone();
        }
        let inst = BoxInstance { b_size: file.b_size, h: file.h, labels: file.labels, nu, f };
        inst.validate()?;
        Ok(inst)
    }

    /// Emit the JSON interchange form (deterministic key order).
    pub fn to_json(&self) -> String {
        let file = BoxInstanceFile {
            schema: 1,
            b_size: self.b_size,
            h: self.h,
            labels: self.labels.clone(),
            nu: (0..self.nu.len())
                .map(|m| (mask_key(m, self.b_size), self.nu[m].clone()))
                .collect(),
            f: (0..self.f.len())
                .map(|m| (mask_key(m, self.b_size), self.f[m].clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }
}
