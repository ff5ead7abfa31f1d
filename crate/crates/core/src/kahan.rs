//! Compensated floating-point accumulation.
//!
//! All statistical averages in this crate are sums of up to ~10^9 terms of
//! wildly different magnitude (weight products range from 0 to (log N)^k).
//! A Neumaier-style compensated accumulator keeps the error of such sums at
//! a few ulps independent of term order, which is what makes the
//! "fast path equals naive path to 1e-9" contracts testable at all.

/// Neumaier variant of Kahan summation: like classic Kahan, but the
/// compensation step also survives terms larger than the running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one term.
    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    /// Fold another compensated sum into this one, preserving both
    /// compensation terms. Used to combine per-chunk partial sums in a
    /// fixed order so parallel reductions stay deterministic.
    #[inline]
    pub fn merge(&mut self, other: KahanSum) {
        self.add(other.sum);
        self.compensation += other.compensation;
    }

    /// The compensated total.
    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
