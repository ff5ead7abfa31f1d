//! Weight views consumed by the averaging modules.
//!
//! A weight `nu` is a nonnegative function on the integers. The lab works
//! with two kinds: dense fields stored as a 1-indexed value array on
//! `[1, N']` and extended by zero everywhere else, and the untruncated
//! constant-one weight used only for exact identity checks (it is the one
//! weight that is *not* zero outside the window, which is exactly what
//! makes averages against it come out to 1 with no boundary loss).

/// Borrowed view of a weight function.
#[derive(Debug, Clone, Copy)]
pub enum NuRef<'a> {
    /// Identically 1 on all of Z. Test-only semantics: no truncation.
    One,
    /// Dense values on `[1, len-1]`, zero outside. Index 0 is unused and
    /// must hold 0.0.
    Dense(&'a [f64]),
}

impl<'a> NuRef<'a> {
    /// Evaluate at an arbitrary integer point.
    #[inline]
    pub fn eval(&self, x: i64) -> f64 {
        match self {
            NuRef::One => 1.0,
            NuRef::Dense(values) => {
                if x >= 1 && (x as usize) < values.len() {
                    values[x as usize]
                } else {
                    0.0
                }
            }
        }
    }

    /// True when this view is the untruncated constant-one weight.
    #[inline]
    pub fn is_untruncated_one(&self) -> bool {
        matches!(self, NuRef::One)
    }
}

/// Allocate a dense value array for `[1, n]` initialized to zero
/// (index 0 is the unused guard slot).
pub fn dense_zeros(n: u64) -> Vec<f64> {
    vec![0.0; n as usize + 1]
}

/// Sorted support of a dense value array (indices with nonzero value).
pub fn dense_support(values: &[f64]) -> Vec<i64> {
    values
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i as i64)
        .collect()
}

/// Mean over the window `[1, n]`, where `n = len - 1`.
pub fn dense_mean(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    if n == 0 {
        return 0.0;
    }
    let total: crate::kahan::KahanSum = values[1..].iter().copied().collect();
    total.value() / n as f64
}

/// Correlation sum `sum over a in [lo, hi] of prod_j nu(a + o_j)`.
///
/// The dense strategy scans the sub-window of `[lo, hi]` where every
/// shifted point can land inside the weight's window; the support
/// strategy anchors on the first offset and walks the sorted support.
/// Zero terms are exactly neutral in the compensated accumulator, so
/// both strategies return bit-identical sums; the cheaper one is chosen.
pub fn correlation_sum(
    nu: NuRef,
    support: Option<&[i64]>,
    lo: i64,
    hi: i64,
    offsets: &[i64],
) -> f64 {
    if lo > hi {
        return 0.0;
    }
    match nu {
        // Untruncated: every a in the range contributes exactly 1.
        NuRef::One => (hi - lo + 1) as f64,
        NuRef::Dense(values) => {
            let n = values.len() as i64 - 1;
            let min_o = *offsets.iter().min().unwrap();
            let max_o = *offsets.iter().max().unwrap();
            let lo = lo.max(1 - min_o);
            let hi = hi.min(n - max_o);
            if lo > hi {
                return 0.0;
            }
            let mut acc = crate::kahan::KahanSum::new();
            let window = (hi - lo + 1) as usize;
            match support {
                Some(supp) if supp.len() < window => {
                    let anchor = offsets[0];
                    for &p in supp {
                        let a = p - anchor;
                        if a < lo || a > hi {
                            continue;
                        }
                        let mut term = 1.0;
                        for &o in offsets {
                            term *= values[(a + o) as usize];
                        }
                        acc.add(term);
                    }
                }
                _ => {
                    for a in lo..=hi {
                        let mut term = 1.0;
                        for &o in offsets {
                            term *= values[(a + o) as usize];
                        }
                        acc.add(term);
                    }
                }
            }
            acc.value()
        }
    }
}
