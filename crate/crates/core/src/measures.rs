//! Cylinder-event measures over rescaled point sets.
//!
//! Fix a dimension `d`, a window `[1, N']^d`, a point set `A` inside that
//! window, nonnegative weights `nu_1, ..., nu_d` on `[1, N']` (zero outside),
//! and per-coordinate index sets `Omega_i` of progression offsets. For a base
//! point `a` and a dilation `r`, the *pattern grid* is the set of lattice
//! points `G = Omega_1 x ... x Omega_d`, and the observed configuration is
//!
//! ```text
//! B(a, r) = { b in G : a + r b in A }.
//! ```
//!
//! A cylinder event fixes a subset `B0 <= G` and asks either that
//! `B0 <= B(a, r)` (superset mode) or that `B(a, r) = B0` exactly (exact
//! mode). Its measure is the weighted frequency
//!
//! ```text
//! mu(B0) = (1 / (N'^d M)) sum_{r=1}^{M} sum_{a in [1,N']^d}
//!          1_event(a, r) * prod_i prod_{c in Omega_i} nu_i(a_i + c r),
//! ```
//!
//! so the all-ones weight gives plain counting density and the exact-mode
//! measures over all `B0 <= G` partition the total mass. Exact events are
//! evaluated by inclusion-exclusion over supersets; superset events use
//! either a per-coordinate factorization (`B0` empty) or a walk over `A`
//! anchored at the first base point (`B0` nonempty). Both accumulate with
//! compensated summation and are deterministic.
//!
//! Two diagnostics quantify how stable a measure is:
//!
//! * [`compatibility_gap`] re-measures the same event under a refined index
//!   grid (every `Omega_i` grows to `Omega'_i >= Omega_i`) and reports how
//!   much the value moves.
//! * [`shift_gap`] translates the base-point box by `h r` and reports the
//!   change in mass together with an exact boundary bound obtained from the
//!   mass of the symmetric difference of the two boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::KahanSum;
use crate::nu::{self, NuRef};
use crate::subset::DenseSubset;

/// Maximum dimension of a cylinder specification.
pub const MAX_MEASURE_DIM: usize = 8;
/// Maximum number of offsets in a single coordinate index set.
pub const MAX_OMEGA_PER_COORD: usize = 8;
/// Maximum total number of weight factors `sum_i |Omega_i|`.
pub const MAX_TOTAL_OMEGA: usize = 24;
/// Largest admissible |offset| in an index set.
pub const OFFSET_BOUND: i64 = 1_000_000;
/// Exact mode enumerates subsets of `G \ B0`; refuse beyond this size.
pub const EXACT_COMPLEMENT_CAP: usize = 16;
/// Refuse evaluations whose estimated inner-loop step count exceeds this.
pub const MEASURE_STEP_BUDGET: u128 = 2_000_000_000;

/// Per-coordinate progression index sets `Omega_1, ..., Omega_d`.
///
/// Each set is kept sorted and deduplicated; the grid of the specification
/// is the cartesian product of the sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylinderSpec {
    omega: Vec<Vec<i64>>,
}

impl CylinderSpec {
    /// Build a specification from per-coordinate offset lists. Lists are
    /// sorted and deduplicated; every coordinate needs at least one offset.
    pub fn new(omega: Vec<Vec<i64>>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Config("index grid needs at least one coordinate".into()));
        }
        if omega.len() > MAX_MEASURE_DIM {
            return Err(Error::Config(format!(
                "index grid has {} coordinates; the cap is {MAX_MEASURE_DIM}",
                omega.len()
            )));
        }
        let mut sorted = Vec::with_capacity(omega.len());
        let mut total = 0usize;
        for (i, set) in omega.into_iter().enumerate() {
            let mut set = set;
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(Error::Config(format!("coordinate {i} has an empty index set")));
            }
            if set.len() > MAX_OMEGA_PER_COORD {
                return Err(Error::Config(format!(
                    "coordinate {i} has {} offsets; the per-coordinate cap is {MAX_OMEGA_PER_COORD}",
                    set.len()
                )));
            }
            if let Some(&c) = set.iter().find(|&&c| c.abs() > OFFSET_BOUND) {
                return Err(Error::Config(format!(
                    "offset {c} in coordinate {i} exceeds the bound {OFFSET_BOUND}"
                )));
            }
            total += set.len();
            sorted.push(set);
        }
        if total > MAX_TOTAL_OMEGA {
            return Err(Error::Config(format!(
                "index grid has {total} offsets in total; the cap is {MAX_TOTAL_OMEGA}"
            )));
        }
        Ok(Self { omega: sorted })
    }

    /// Number of coordinates.
    pub fn d(&self) -> usize {
        self.omega.len()
    }

    /// The per-coordinate index sets, each sorted and deduplicated.
    pub fn omega(&self) -> &[Vec<i64>] {
        &self.omega
    }

    /// Number of lattice points in the grid `prod_i Omega_i`.
    pub fn grid_len(&self) -> usize {
        self.omega.iter().map(|s| s.len()).product()
    }

    /// All grid points in lexicographic order.
    pub fn grid_points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.grid_len());
        let mut idx = vec![0usize; self.d()];
        loop {
            out.push(idx.iter().zip(&self.omega).map(|(&j, set)| set[j]).collect());
            let mut k = self.d();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.omega[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// True when every index set of `self` is contained in the matching
    /// index set of `finer`.
    pub fn refined_by(&self, finer: &CylinderSpec) -> bool {
        self.d() == finer.d()
            && self
                .omega
                .iter()
                .zip(&finer.omega)
                .all(|(coarse, fine)| coarse.iter().all(|c| fine.binary_search(c).is_ok()))
    }
}

/// How the fixed configuration `B0` is compared against the observed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventMode {
    /// Require `B0` to be contained in the observed configuration.
    Superset,
    /// Require the observed configuration to equal `B0` exactly.
    Exact,
}

/// A cylinder event: a grid specification, a base configuration `B0`
/// inside the grid, and a comparison mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylinderEvent {
    spec: CylinderSpec,
    b0: Vec<Vec<i64>>,
    mode: EventMode,
}

impl CylinderEvent {
    /// Build an event. Every base point must have `d` coordinates, each
    /// drawn from the matching index set; duplicates are merged.
    pub fn new(spec: CylinderSpec, b0: Vec<Vec<i64>>, mode: EventMode) -> Result<Self> {
        let d = spec.d();
        let mut b0 = b0;
        for p in &b0 {
            if p.len() != d {
                return Err(Error::Config(format!(
                    "base point {p:?} has {} coordinates, expected {d}",
                    p.len()
                )));
            }
            for (i, c) in p.iter().enumerate() {
                if spec.omega[i].binary_search(c).is_err() {
                    return Err(Error::Contract(format!(
                        "base point {p:?} uses offset {c} outside the index set of coordinate {i}"
                    )));
                }
            }
        }
        b0.sort_unstable();
        b0.dedup();
        Ok(Self { spec, b0, mode })
    }

    /// The grid specification.
    pub fn spec(&self) -> &CylinderSpec {
        &self.spec
    }

    /// The base configuration, sorted lexicographically.
    pub fn b0(&self) -> &[Vec<i64>] {
        &self.b0
    }

    /// The comparison mode.
    pub fn mode(&self) -> EventMode {
        self.mode
    }
}

/// Averaging parameters: the window bound `N'` and the dilation range `M`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeasureParams {
    /// Base points range over `[1, n_prime]^d`.
    pub n_prime: u64,
    /// Dilations range over `[1, m]`.
    pub m: u64,
}

/// Result of a measure evaluation. `seconds` is diagnostic wall time and
/// is excluded from serialization so reports stay byte-stable.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasureReport {
    /// Measure of the requested event.
    pub value: f64,
    /// Measure of the empty-configuration superset event (the total mass
    /// of the weight product, independent of `B0`).
    pub total_mass: f64,
    /// `value / total_mass`, absent when the total mass vanishes.
    pub conditional: Option<f64>,
    /// Number of `(a, r)` pairs in the average.
    pub term_count: u128,
    #[serde(skip)]
    pub seconds: f64,
}

/// Result of re-measuring an event under a refined index grid.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CompatibilityReport {
    /// Measure under the event's own grid.
    pub coarse: MeasureReport,
    /// Measure of the same event under the refined grid's weight product.
    pub fine: MeasureReport,
    /// `|fine.value - coarse.value|`.
    pub gap: f64,
}

/// Result of comparing an event's mass over the standard box against the
/// box translated by `h r`.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ShiftReport {
    /// Normalized mass over the standard box.
    pub base: f64,
    /// Normalized mass over the translated box.
    pub shifted: f64,
    /// `|shifted - base|` computed from the unnormalized totals.
    pub gap: f64,
    /// Normalized mass of the symmetric difference of the two boxes; an
    /// exact upper bound for `gap` because the integrand is nonnegative.
    pub bound: f64,
    /// Whether `gap <= bound` up to rounding slack.
    pub holds: bool,
    #[serde(skip)]
    pub seconds: f64,
}

/// Shared evaluation state: the point set, weights, and per-coordinate
/// weight supports, plus the anchor points when a walk over `A` is needed.
struct EvalCtx<'a> {
    a_set: &'a DenseSubset,
    weights: &'a [NuRef<'a>],
    supports: Vec<Option<Vec<i64>>>,
    anchors: Option<Vec<Vec<i64>>>,
    bound: i64,
}

impl<'a> EvalCtx<'a> {
    fn new(a_set: &'a DenseSubset, weights: &'a [NuRef<'a>], need_anchors: bool) -> Self {
        let supports = weights
            .iter()
            .map(|w| match w {
                NuRef::One => None,
                NuRef::Dense(values) => Some(nu::dense_support(values)),
            })
            .collect();
        let anchors = need_anchors.then(|| a_set.points().collect());
        Self {
            a_set,
            weights,
            supports,
            anchors,
            bound: a_set.bound() as i64,
        }
    }

    /// `sum_{a in box} 1_event-superset(a, r) * prod_i prod_c nu_i(a_i + c r)`
    /// for one dilation `r` over the axis box `abox` (inclusive bounds per
    /// coordinate).
    fn mass_for_r(&self, b0: &[Vec<i64>], omega: &[Vec<i64>], r: i64, abox: &[(i64, i64)]) -> f64 {
        let d = omega.len();
        if b0.is_empty() {
            // No membership constraints: the integrand factorizes, so the
            // box sum is a product of one-dimensional correlation sums.
            let mut prod = 1.0;
            for i in 0..d {
                let offs: Vec<i64> = omega[i].iter().map(|&c| c * r).collect();
                let s = nu::correlation_sum(
                    self.weights[i],
                    self.supports[i].as_deref(),
                    abox[i].0,
                    abox[i].1,
                    &offs,
                );
                prod *= s;
                if prod == 0.0 {
                    return 0.0;
                }
            }
            return prod;
        }
        // Anchored walk: a + r * b0[0] must land in A, so enumerate A and
        // solve for a. Zero terms are skipped; skipping is exactly neutral
        // in the compensated accumulator.
        let anchor = &b0[0];
        let points = self.anchors.as_ref().expect("anchor walk without anchor points");
        let mut acc = KahanSum::new();
        let mut a = vec![0i64; d];
        let mut probe = vec![0i64; d];
        'point: for p in points {
            for i in 0..d {
                let ai = p[i] - r * anchor[i];
                if ai < abox[i].0 || ai > abox[i].1 {
                    continue 'point;
                }
                a[i] = ai;
            }
            for q in &b0[1..] {
                for i in 0..d {
                    let v = a[i] + r * q[i];
                    if v < 1 || v > self.bound {
                        continue 'point;
                    }
                    probe[i] = v;
                }
                if !self.a_set.contains(&probe) {
                    continue 'point;
                }
            }
            let mut term = 1.0;
            for i in 0..d {
                for &c in &omega[i] {
                    term *= self.weights[i].eval(a[i] + c * r);
                    if term == 0.0 {
                        continue 'point;
                    }
                }
            }
            acc.add(term);
        }
        acc.value()
    }

    /// Unnormalized superset-event total over all dilations, with the box
    /// allowed to depend on `r`.
    fn superset_total<F>(&self, b0: &[Vec<i64>], omega: &[Vec<i64>], m: u64, abox_of: F) -> f64
    where
        F: Fn(i64) -> Vec<(i64, i64)>,
    {
        let mut acc = KahanSum::new();
        for r in 1..=m as i64 {
            acc.add(self.mass_for_r(b0, omega, r, &abox_of(r)));
        }
        acc.value()
    }

    /// Unnormalized event total, dispatching on the comparison mode. Exact
    /// events expand by inclusion-exclusion over supersets of `B0`.
    fn event_total<F>(&self, event: &CylinderEvent, omega: &[Vec<i64>], m: u64, abox_of: F) -> f64
    where
        F: Fn(i64) -> Vec<(i64, i64)> + Copy,
    {
        match event.mode {
            EventMode::Superset => self.superset_total(&event.b0, omega, m, abox_of),
            EventMode::Exact => {
                let complement = grid_complement(&event.spec, &event.b0);
                let mut acc = KahanSum::new();
                for mask in 0u32..(1u32 << complement.len()) {
                    let mut union = event.b0.clone();
                    for (j, q) in complement.iter().enumerate() {
                        if mask >> j & 1 == 1 {
                            union.push(q.clone());
                        }
                    }
                    union.sort_unstable();
                    let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    acc.add(sign * self.superset_total(&union, omega, m, abox_of));
                }
                acc.value()
            }
        }
    }
}

/// Grid points of `spec` that are not in `b0`, in lexicographic order.
fn grid_complement(spec: &CylinderSpec, b0: &[Vec<i64>]) -> Vec<Vec<i64>> {
    spec.grid_points()
        .into_iter()
        .filter(|p| b0.binary_search(p).is_err())
        .collect()
}

/// Validate shapes shared by all measure entry points.
fn validate_inputs(
    event: &CylinderEvent,
    weight_omega: &CylinderSpec,
    a_set: &DenseSubset,
    weights: &[NuRef],
    params: &MeasureParams,
) -> Result<()> {
    let d = event.spec.d();
    if weight_omega.d() != d {
        return Err(Error::Contract(format!(
            "weight grid has {} coordinates but the event has {d}",
            weight_omega.d()
        )));
    }
    if a_set.d() != d {
        return Err(Error::Contract(format!(
            "point set has dimension {} but the event has {d}",
            a_set.d()
        )));
    }
    if weights.len() != d {
        return Err(Error::Contract(format!(
            "got {} weights for {d} coordinates",
            weights.len()
        )));
    }
    if params.n_prime == 0 || params.m == 0 {
        return Err(Error::Config("window and dilation range must be positive".into()));
    }
    if a_set.bound() > params.n_prime {
        return Err(Error::Contract(format!(
            "point set bound {} exceeds the window {}",
            a_set.bound(),
            params.n_prime
        )));
    }
    for (i, w) in weights.iter().enumerate() {
        if let NuRef::Dense(values) = w {
            if values.len() != params.n_prime as usize + 1 {
                return Err(Error::Contract(format!(
                    "weight {i} covers window {} but the run uses {}",
                    values.len() - 1,
                    params.n_prime
                )));
            }
        }
    }
    Ok(())
}

/// True when evaluating the event requires walking the point set: any
/// nonempty base configuration does, and exact mode always does because
/// its inclusion-exclusion expansion contains nonempty configurations.
fn needs_anchors(event: &CylinderEvent) -> bool {
    !event.b0.is_empty() || matches!(event.mode, EventMode::Exact)
}

/// Estimated inner-loop steps for one full evaluation; used to refuse
/// infeasible runs before touching any data.
fn estimate_steps(
    event: &CylinderEvent,
    weight_omega: &CylinderSpec,
    a_set: &DenseSubset,
    params: &MeasureParams,
    boxes: u128,
) -> Result<u128> {
    let d = event.spec.d() as u128;
    let factors: u128 = weight_omega.omega.iter().map(|s| s.len() as u128).sum();
    let probes = match event.mode {
        EventMode::Superset => event.b0.len() as u128,
        EventMode::Exact => event.spec.grid_len() as u128,
    };
    let per_box: u128 = if needs_anchors(event) {
        a_set.len().saturating_mul(factors + probes * d)
    } else {
        d * params.n_prime as u128
    };
    let supersets: u128 = match event.mode {
        EventMode::Superset => 1,
        EventMode::Exact => {
            let complement = event.spec.grid_len() - event.b0.len();
            if complement > EXACT_COMPLEMENT_CAP {
                return Err(Error::Budget(format!(
                    "exact mode enumerates 2^{complement} supersets; the cap is 2^{EXACT_COMPLEMENT_CAP}"
                )));
            }
            1u128 << complement
        }
    };
    let steps = per_box
        .saturating_mul(params.m as u128)
        .saturating_mul(supersets)
        .saturating_mul(boxes);
    if steps > MEASURE_STEP_BUDGET {
        return Err(Error::Budget(format!(
            "evaluation needs about {steps} steps, over the budget {MEASURE_STEP_BUDGET}; \
             shrink the dilation range, the grid, or the point set"
        )));
    }
    Ok(steps)
}

/// Measure the event with the weight product drawn from `weight_omega`
/// (the event's own grid for plain measures, a refinement for
/// compatibility checks).
fn measure_with(
    event: &CylinderEvent,
    weight_omega: &CylinderSpec,
    a_set: &DenseSubset,
    weights: &[NuRef],
    params: &MeasureParams,
) -> Result<MeasureReport> {
    validate_inputs(event, weight_omega, a_set, weights, params)?;
    estimate_steps(event, weight_omega, a_set, params, 1)?;
    let start = std::time::Instant::now();
    let d = event.spec.d();
    let ctx = EvalCtx::new(a_set, weights, needs_anchors(event));
    let standard: Vec<(i64, i64)> = vec![(1, params.n_prime as i64); d];
    let abox_of = |_r: i64| standard.clone();
    let norm = (params.n_prime as f64).powi(d as i32) * params.m as f64;
    let total_mass = ctx.superset_total(&[], &weight_omega.omega, params.m, abox_of) / norm;
    let value = if event.b0.is_empty() && matches!(event.mode, EventMode::Superset) {
        total_mass
    } else {
        ctx.event_total(event, &weight_omega.omega, params.m, abox_of) / norm
    };
    let conditional = (total_mass > 0.0).then(|| value / total_mass);
    Ok(MeasureReport {
        value,
        total_mass,
        conditional,
        term_count: (params.n_prime as u128).pow(d as u32) * params.m as u128,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Measure a cylinder event over `a in [1, N']^d`, `r in [1, M]`.
pub fn measure(
    event: &CylinderEvent,
    a_set: &DenseSubset,
    weights: &[NuRef],
    params: &MeasureParams,
) -> Result<MeasureReport> {
    measure_with(event, &event.spec, a_set, weights, params)
}

/// Measure the event under its own grid and under a refined grid whose
/// index sets contain the original ones, and report the drift. The event
/// membership logic is unchanged; only the weight product grows.
pub fn compatibility_gap(
    event: &CylinderEvent,
    refined: &CylinderSpec,
    a_set: &DenseSubset,
    weights: &[NuRef],
    params: &MeasureParams,
) -> Result<CompatibilityReport> {
    if !event.spec.refined_by(refined) {
        return Err(Error::Contract(
            "refined grid must contain every index set of the event's grid".into(),
        ));
    }
    let coarse = measure_with(event, &event.spec, a_set, weights, params)?;
    let fine = measure_with(event, refined, a_set, weights, params)?;
    let gap = (fine.value - coarse.value).abs();
    Ok(CompatibilityReport { coarse, fine, gap })
}

/// Compare the event's mass over the standard box `[1, N']^d` against the
/// box translated by `h r`, averaging over `r in [1, M]`. The reported
/// bound is the normalized mass of the symmetric difference of the two
/// boxes, which dominates the gap exactly because the integrand is
/// nonnegative.
pub fn shift_gap(
    event: &CylinderEvent,
    shift: &[i64],
    a_set: &DenseSubset,
    weights: &[NuRef],
    params: &MeasureParams,
) -> Result<ShiftReport> {
    validate_inputs(event, &event.spec, a_set, weights, params)?;
    let d = event.spec.d();
    if shift.len() != d {
        return Err(Error::Config(format!(
            "shift vector has {} coordinates, expected {d}",
            shift.len()
        )));
    }
    if let Some(&h) = shift.iter().find(|&&h| h.abs() > OFFSET_BOUND) {
        return Err(Error::Config(format!(
            "shift component {h} exceeds the bound {OFFSET_BOUND}"
        )));
    }
    estimate_steps(event, &event.spec, a_set, params, 3)?;
    let start = std::time::Instant::now();
    let ctx = EvalCtx::new(a_set, weights, needs_anchors(event));
    let n = params.n_prime as i64;
    let omega = &event.spec.omega;
    let base_box = move |_r: i64| vec![(1, n); d];
    let shifted_box = move |r: i64| {
        (0..d)
            .map(|i| (1 + shift[i] * r, n + shift[i] * r))
            .collect::<Vec<_>>()
    };
    let inter_box = move |r: i64| {
        (0..d)
            .map(|i| (1 + (shift[i] * r).max(0), n + (shift[i] * r).min(0)))
            .collect::<Vec<_>>()
    };
    let base_t = ctx.event_total(event, omega, params.m, base_box);
    let shifted_t = ctx.event_total(event, omega, params.m, shifted_box);
    let inter_t = ctx.event_total(event, omega, params.m, inter_box);
    let norm = (params.n_prime as f64).powi(d as i32) * params.m as f64;
    let gap = (shifted_t - base_t).abs() / norm;
    let bound = ((base_t + shifted_t - 2.0 * inter_t) / norm).max(0.0);
    let holds = gap <= bound + 1e-12 * bound.max(1.0);
    Ok(ShiftReport {
        base: base_t / norm,
        shifted: shifted_t / norm,
        gap,
        bound,
        holds,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subset::CoordSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: loop over every `(a, r)` pair, build the
    /// observed configuration against the event grid, test the event
    /// predicate directly, and multiply out the weight product from the
    /// `weight_omega` grid.
    fn oracle_value<F>(
        event: &CylinderEvent,
        weight_omega: &CylinderSpec,
        a_set: &DenseSubset,
        weights: &[NuRef],
        params: &MeasureParams,
        abox_of: F,
    ) -> f64
    where
        F: Fn(i64) -> Vec<(i64, i64)>,
    {
        let d = event.spec().d();
        let grid = event.spec().grid_points();
        let mut total = 0.0;
        for r in 1..=params.m as i64 {
            let abox = abox_of(r);
            let mut a = abox.iter().map(|&(lo, _)| lo).collect::<Vec<_>>();
            if abox.iter().any(|&(lo, hi)| lo > hi) {
                continue;
            }
            'cell: loop {
                let observed: Vec<&Vec<i64>> = grid
                    .iter()
                    .filter(|g| {
                        let p: Vec<i64> = (0..d).map(|i| a[i] + r * g[i]).collect();
                        a_set.contains(&p)
                    })
                    .collect();
                let pass = match event.mode() {
                    EventMode::Superset => event
                        .b0()
                        .iter()
                        .all(|b| observed.iter().any(|&o| o == b)),
                    EventMode::Exact => {
                        observed.len() == event.b0().len()
                            && event.b0().iter().all(|b| observed.iter().any(|&o| o == b))
                    }
                };
                if pass {
                    let mut term = 1.0;
                    for i in 0..d {
                        for &c in &weight_omega.omega()[i] {
                            term *= weights[i].eval(a[i] + c * r);
                        }
                    }
                    total += term;
                }
                let mut k = d;
                loop {
                    if k == 0 {
                        break 'cell;
                    }
                    k -= 1;
                    a[k] += 1;
                    if a[k] <= abox[k].1 {
                        break;
                    }
                    a[k] = abox[k].0;
                }
            }
        }
        total / ((params.n_prime as f64).powi(d as i32) * params.m as f64)
    }

    fn random_dense(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n + 1];
        for x in v.iter_mut().skip(1) {
            if rng.gen_bool(0.5) {
                *x = rng.gen_range(0.0..2.0);
            }
        }
        v
    }

    fn random_subset(rng: &mut ChaCha8Rng, d: usize, bound: u64) -> DenseSubset {
        if d <= 2 && rng.gen_bool(0.5) {
            let mut pts = Vec::new();
            let mut idx = vec![1i64; d];
            loop {
                if rng.gen_bool(0.4) {
                    pts.push(idx.clone());
                }
                let mut k = d;
                loop {
                    if k == 0 {
                        if pts.is_empty() {
                            pts.push(vec![1; d]);
                        }
                        return DenseSubset::from_points(d, bound, pts, "random-general").unwrap();
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] <= bound as i64 {
                        break;
                    }
                    idx[k] = 1;
                }
            }
        } else {
            let factors: Vec<CoordSet> = (0..d)
                .map(|_| {
                    let mut vals: Vec<i64> =
                        (1..=bound as i64).filter(|_| rng.gen_bool(0.5)).collect();
                    if vals.is_empty() {
                        vals.push(1);
                    }
                    CoordSet::new(vals, bound).unwrap()
                })
                .collect();
            DenseSubset::product_of(factors, "random-product").unwrap()
        }
    }

    fn random_spec(rng: &mut ChaCha8Rng, d: usize) -> CylinderSpec {
        let omega = (0..d)
            .map(|_| {
                let k = rng.gen_range(1..=3);
                (0..k).map(|_| rng.gen_range(-2..=3)).collect()
            })
            .collect();
        CylinderSpec::new(omega).unwrap()
    }

    fn random_b0(rng: &mut ChaCha8Rng, spec: &CylinderSpec, max: usize) -> Vec<Vec<i64>> {
        let grid = spec.grid_points();
        let take = rng.gen_range(0..=max.min(grid.len()));
        let mut picked = Vec::new();
        while picked.len() < take {
            let p = grid[rng.gen_range(0..grid.len())].clone();
            if !picked.contains(&p) {
                picked.push(p);
            }
        }
        picked
    }

    #[test]
    fn spec_sorts_and_dedups() {
        let spec = CylinderSpec::new(vec![vec![3, 0, 3, 1]]).unwrap();
        assert_eq!(spec.omega(), &[vec![0, 1, 3]]);
        assert_eq!(spec.grid_len(), 3);
    }

    #[test]
    fn spec_rejects_empty_coordinate() {
        let err = CylinderSpec::new(vec![vec![0], vec![]]).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"));
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let spec = CylinderSpec::new(vec![vec![0, 1], vec![5, 7]]).unwrap();
        assert_eq!(
            spec.grid_points(),
            vec![vec![0, 5], vec![0, 7], vec![1, 5], vec![1, 7]]
        );
    }

    #[test]
    fn event_rejects_base_point_outside_grid() {
        let spec = CylinderSpec::new(vec![vec![0, 1]]).unwrap();
        let err = CylinderEvent::new(spec, vec![vec![2]], EventMode::Superset).unwrap_err();
        assert!(err.to_string().contains("outside the index set"));
    }

    #[test]
    fn event_rejects_wrong_arity() {
        let spec = CylinderSpec::new(vec![vec![0, 1], vec![0]]).unwrap();
        let err = CylinderEvent::new(spec, vec![vec![0]], EventMode::Exact).unwrap_err();
        assert!(err.to_string().contains("coordinates"));
    }

    #[test]
    fn untruncated_total_mass_is_exactly_one() {
        let spec = CylinderSpec::new(vec![vec![0, 1], vec![0, 2]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(2, 50, vec![vec![1, 1]], "tiny").unwrap();
        let params = MeasureParams { n_prime: 50, m: 9 };
        let rep = measure(&event, &a, &[NuRef::One, NuRef::One], &params).unwrap();
        assert_eq!(rep.total_mass, 1.0);
        assert_eq!(rep.value, 1.0);
        assert_eq!(rep.conditional, Some(1.0));
        assert_eq!(rep.term_count, 50 * 50 * 9);
    }

    #[test]
    fn measure_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11AD);
        for trial in 0..30 {
            let d = rng.gen_range(1..=2);
            let n_prime = rng.gen_range(15..=40) as u64;
            let m = rng.gen_range(1..=6) as u64;
            let spec = random_spec(&mut rng, d);
            let b0 = random_b0(&mut rng, &spec, 2);
            let mode = if rng.gen_bool(0.5) { EventMode::Superset } else { EventMode::Exact };
            let event = CylinderEvent::new(spec.clone(), b0, mode).unwrap();
            let a = random_subset(&mut rng, d, n_prime);
            let dense: Vec<Vec<f64>> =
                (0..d).map(|_| random_dense(&mut rng, n_prime as usize)).collect();
            let weights: Vec<NuRef> = dense
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 && d == 2 { NuRef::One } else { NuRef::Dense(v) })
                .collect();
            let params = MeasureParams { n_prime, m };
            let rep = measure(&event, &a, &weights, &params).unwrap();
            let n = n_prime as i64;
            let want = oracle_value(&event, &spec, &a, &weights, &params, |_| vec![(1, n); d]);
            assert!(
                (rep.value - want).abs() <= 1e-12 * want.abs().max(1.0),
                "trial {trial}: got {} want {want}",
                rep.value
            );
        }
    }

    #[test]
    fn exact_measures_partition_total_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
        for _ in 0..10 {
            let d = rng.gen_range(1..=2);
            let n_prime = rng.gen_range(20..=40) as u64;
            let m = rng.gen_range(1..=5) as u64;
            let spec = random_spec(&mut rng, d);
            let a = random_subset(&mut rng, d, n_prime);
            let dense: Vec<Vec<f64>> =
                (0..d).map(|_| random_dense(&mut rng, n_prime as usize)).collect();
            let weights: Vec<NuRef> = dense.iter().map(|v| NuRef::Dense(v)).collect();
            let params = MeasureParams { n_prime, m };
            let grid = spec.grid_points();
            let mut sum = KahanSum::new();
            let mut total_mass = None;
            for mask in 0u32..(1u32 << grid.len()) {
                let b0: Vec<Vec<i64>> = grid
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| mask >> j & 1 == 1)
                    .map(|(_, p)| p.clone())
                    .collect();
                let event = CylinderEvent::new(spec.clone(), b0, EventMode::Exact).unwrap();
                let rep = measure(&event, &a, &weights, &params).unwrap();
                sum.add(rep.value);
                total_mass.get_or_insert(rep.total_mass);
            }
            let total = total_mass.unwrap();
            assert!(
                (sum.value() - total).abs() <= 1e-12 * total.abs().max(1.0),
                "partition sum {} vs total mass {total}",
                sum.value()
            );
        }
    }

    #[test]
    fn superset_measure_shrinks_as_b0_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        for _ in 0..20 {
            let d = rng.gen_range(1..=2);
            let n_prime = rng.gen_range(20..=40) as u64;
            let m = rng.gen_range(1..=5) as u64;
            let spec = random_spec(&mut rng, d);
            let small = random_b0(&mut rng, &spec, 1);
            let mut large = small.clone();
            for extra in random_b0(&mut rng, &spec, 2) {
                if !large.contains(&extra) {
                    large.push(extra);
                }
            }
            let a = random_subset(&mut rng, d, n_prime);
            let dense: Vec<Vec<f64>> =
                (0..d).map(|_| random_dense(&mut rng, n_prime as usize)).collect();
            let weights: Vec<NuRef> = dense.iter().map(|v| NuRef::Dense(v)).collect();
            let params = MeasureParams { n_prime, m };
            let lo = CylinderEvent::new(spec.clone(), small, EventMode::Superset).unwrap();
            let hi = CylinderEvent::new(spec.clone(), large, EventMode::Superset).unwrap();
            let lo_rep = measure(&lo, &a, &weights, &params).unwrap();
            let hi_rep = measure(&hi, &a, &weights, &params).unwrap();
            assert!(
                lo_rep.value >= hi_rep.value - 1e-12,
                "superset measure grew: {} < {}",
                lo_rep.value,
                hi_rep.value
            );
        }
    }

    #[test]
    fn total_mass_agrees_with_linear_forms_average() {
        use crate::forms::{evaluate_fast, AverageRunConfig, LinearFormSystem};
        let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);
        let n_prime = 60u64;
        let m = 8u64;
        let spec = CylinderSpec::new(vec![vec![0, 1, 3], vec![0, 2]]).unwrap();
        let event = CylinderEvent::new(spec.clone(), vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(2, n_prime, vec![vec![1, 1]], "unused").unwrap();
        let dense: Vec<Vec<f64>> = (0..2).map(|_| random_dense(&mut rng, n_prime as usize)).collect();
        let weights: Vec<NuRef> = dense.iter().map(|v| NuRef::Dense(v)).collect();
        let rep = measure(&event, &a, &weights, &MeasureParams { n_prime, m }).unwrap();

        let system = LinearFormSystem {
            d: 2,
            m: 1,
            forms: vec![vec![vec![0], vec![1], vec![3]], vec![vec![0], vec![2]]],
        };
        let cfg = AverageRunConfig {
            box_lengths: vec![m],
            n_prime,
            kappa: 0.2,
            lambda: 0.5,
        };
        let forms_rep = evaluate_fast(&system, &weights, &cfg).unwrap();
        assert!(
            (rep.total_mass - forms_rep.value).abs() <= 1e-12 * forms_rep.value.abs().max(1.0),
            "total mass {} vs linear-forms average {}",
            rep.total_mass,
            forms_rep.value
        );
    }

    #[test]
    fn compatibility_gap_is_zero_for_identical_grids() {
        let spec = CylinderSpec::new(vec![vec![0, 1]]).unwrap();
        let event = CylinderEvent::new(spec.clone(), vec![vec![0]], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(
            1,
            30,
            (1..=30).filter(|x| x % 3 != 0).map(|x| vec![x]).collect(),
            "mod3",
        )
        .unwrap();
        let dense = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            random_dense(&mut rng, 30)
        };
        let weights = [NuRef::Dense(&dense)];
        let params = MeasureParams { n_prime: 30, m: 4 };
        let rep = compatibility_gap(&event, &spec, &a, &weights, &params).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert_eq!(rep.coarse.value, rep.fine.value);
    }

    #[test]
    fn compatibility_rejects_non_refinement() {
        let spec = CylinderSpec::new(vec![vec![0, 1]]).unwrap();
        let other = CylinderSpec::new(vec![vec![0, 2]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(1, 10, vec![vec![1]], "x").unwrap();
        let err =
            compatibility_gap(&event, &other, &a, &[NuRef::One], &MeasureParams { n_prime: 10, m: 1 })
                .unwrap_err();
        assert!(err.to_string().contains("refined grid"));
    }

    #[test]
    fn compatibility_fine_value_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
        let spec = CylinderSpec::new(vec![vec![0]]).unwrap();
        let refined = CylinderSpec::new(vec![vec![0, 1]]).unwrap();
        let event = CylinderEvent::new(spec, vec![vec![0]], EventMode::Superset).unwrap();
        let n_prime = 40u64;
        let a = random_subset(&mut rng, 1, n_prime);
        let dense = random_dense(&mut rng, n_prime as usize);
        let weights = [NuRef::Dense(&dense)];
        let params = MeasureParams { n_prime, m: 5 };
        let rep = compatibility_gap(&event, &refined, &a, &weights, &params).unwrap();
        let want = oracle_value(&event, &refined, &a, &weights, &params, |_| {
            vec![(1, n_prime as i64)]
        });
        assert!((rep.fine.value - want).abs() <= 1e-12 * want.abs().max(1.0));
        assert!((rep.gap - (rep.fine.value - rep.coarse.value).abs()).abs() <= 1e-15);
    }

    #[test]
    fn zero_shift_gap_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0);
        let spec = CylinderSpec::new(vec![vec![0, 1]]).unwrap();
        let event = CylinderEvent::new(spec, vec![vec![0]], EventMode::Superset).unwrap();
        let n_prime = 35u64;
        let a = random_subset(&mut rng, 1, n_prime);
        let dense = random_dense(&mut rng, n_prime as usize);
        let weights = [NuRef::Dense(&dense)];
        let rep = shift_gap(&event, &[0], &a, &weights, &MeasureParams { n_prime, m: 6 }).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert_eq!(rep.bound, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn untruncated_empty_event_shift_gap_is_zero() {
        let spec = CylinderSpec::new(vec![vec![0, 1], vec![0]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(2, 25, vec![vec![1, 1]], "unused").unwrap();
        let weights = [NuRef::One, NuRef::One];
        let rep =
            shift_gap(&event, &[1, -2], &a, &weights, &MeasureParams { n_prime: 25, m: 4 }).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert!(rep.holds);
        assert!(rep.bound > 0.0, "boundary strip has positive mass");
    }

    #[test]
    fn shift_gap_matches_oracle_and_bound_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x51F7);
        for trial in 0..20 {
            let d = rng.gen_range(1..=2);
            let n_prime = rng.gen_range(15..=35) as u64;
            let m = rng.gen_range(1..=5) as u64;
            let spec = random_spec(&mut rng, d);
            let b0 = random_b0(&mut rng, &spec, 1);
            let mode = if rng.gen_bool(0.5) { EventMode::Superset } else { EventMode::Exact };
            let event = CylinderEvent::new(spec.clone(), b0, mode).unwrap();
            let a = random_subset(&mut rng, d, n_prime);
            let dense: Vec<Vec<f64>> =
                (0..d).map(|_| random_dense(&mut rng, n_prime as usize)).collect();
            let weights: Vec<NuRef> = dense.iter().map(|v| NuRef::Dense(v)).collect();
            let shift: Vec<i64> = (0..d).map(|_| rng.gen_range(-2..=2)).collect();
            let params = MeasureParams { n_prime, m };
            let rep = shift_gap(&event, &shift, &a, &weights, &params).unwrap();
            assert!(rep.holds, "trial {trial}: gap {} above bound {}", rep.gap, rep.bound);
            let n = n_prime as i64;
            let base = oracle_value(&event, &spec, &a, &weights, &params, |_| vec![(1, n); d]);
            let shifted = oracle_value(&event, &spec, &a, &weights, &params, |r| {
                (0..d).map(|i| (1 + shift[i] * r, n + shift[i] * r)).collect()
            });
            assert!((rep.base - base).abs() <= 1e-12 * base.abs().max(1.0), "trial {trial}");
            assert!(
                (rep.shifted - shifted).abs() <= 1e-12 * shifted.abs().max(1.0),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn exact_mode_refuses_oversized_complement() {
        let spec = CylinderSpec::new(vec![vec![0, 1, 2, 3, 4], vec![0, 1, 2, 3, 4]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Exact).unwrap();
        let a = DenseSubset::from_points(2, 10, vec![vec![1, 1]], "x").unwrap();
        let err = measure(
            &event,
            &a,
            &[NuRef::One, NuRef::One],
            &MeasureParams { n_prime: 10, m: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Budget(_)), "got {err}");
        assert!(err.to_string().contains("supersets"));
    }

    #[test]
    fn weight_window_mismatch_is_rejected() {
        let spec = CylinderSpec::new(vec![vec![0]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(1, 10, vec![vec![1]], "x").unwrap();
        let dense = vec![0.0; 12];
        let err = measure(
            &event,
            &a,
            &[NuRef::Dense(&dense)],
            &MeasureParams { n_prime: 10, m: 1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err}");
    }

    #[test]
    fn point_set_must_fit_in_window() {
        let spec = CylinderSpec::new(vec![vec![0]]).unwrap();
        let event = CylinderEvent::new(spec, vec![], EventMode::Superset).unwrap();
        let a = DenseSubset::from_points(1, 50, vec![vec![50]], "x").unwrap();
        let err = measure(&event, &a, &[NuRef::One], &MeasureParams { n_prime: 10, m: 1 })
            .unwrap_err();
        assert!(err.to_string().contains("exceeds the window"));
    }
}
