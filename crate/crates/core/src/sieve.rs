//! Prime tables and primorials.
//!
//! The sieve is a segmented sieve of Eratosthenes over a plain bit array:
//! segment k owns the integers `[k*seg, (k+1)*seg)` and, because the
//! segment length is forced to a multiple of 64, also owns a disjoint
//! range of 64-bit words. Segments are therefore sieved in parallel and
//! stitched together without any cross-segment write, which keeps the
//! produced table bit-identical for every segment size and thread count.
//!
//! A `PrimeTable` keeps both representations around on purpose: the bit
//! array answers membership probes in O(1) (weight construction hammers
//! it), while the sorted list drives ordered walks in correlation sums.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default segment length, in integers. Must be a multiple of 64.
pub const DEFAULT_SEGMENT: u64 = 1 << 16;

/// Largest sieve limit accepted before the memory budget refuses.
pub const MAX_SIEVE_LIMIT: u64 = 1 << 31;

/// Magic bytes of the binary table dump.
const TABLE_MAGIC: &[u8; 4] = b"PTBL";
/// Version of the binary table dump format.
const TABLE_VERSION: u32 = 1;

/// All primes up to a fixed limit, as a membership bit array plus the
/// sorted list of primes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeTable {
    limit: u64,
    words: Vec<u64>,
    primes: Vec<u64>,
}

impl PrimeTable {
    /// Upper end of the table; membership is defined for `2..=limit`.
    pub fn limit(&self) -> u64 {
        self.limit
    }

    /// Number of primes `<= limit`.
    pub fn count(&self) -> u64 {
        self.primes.len() as u64
    }

    /// Sorted list of all primes `<= limit`.
    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    /// O(1) membership probe.
    ///
    /// Panics if `n > limit`: probing beyond the table is always a caller
    /// bug, and silently answering "composite" would corrupt counts.
    #[inline]
    pub fn is_prime(&self, n: u64) -> bool {
        assert!(
            n <= self.limit,
            "prime table probed at {n} but only covers 2..={}",
            self.limit
        );
        (self.words[(n / 64) as usize] >> (n % 64)) & 1 == 1
    }

    /// Signed convenience probe: anything outside `[2, limit]` is not prime.
    #[inline]
    pub fn is_prime_i64(&self, n: i64) -> bool {
        n >= 2 && (n as u64) <= self.limit && self.is_prime(n as u64)
    }

    /// Serialize as a fixed 16-byte header (magic, format version, limit)
    /// followed by the bit array as little-endian 64-bit words.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(TABLE_MAGIC)?;
        out.write_all(&TABLE_VERSION.to_le_bytes())?;
        out.write_all(&self.limit.to_le_bytes())?;
        for word in &self.words {
            out.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`PrimeTable::write_binary`]; rebuilds the prime list
    /// from the bit array.
    pub fn read_binary<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Config(format!(
                "not a prime table dump: expected magic {TABLE_MAGIC:?}, found {magic:?}"
            )));
        }
        let mut version = [0u8; 4];
        input.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != TABLE_VERSION {
            return Err(Error::Config(format!(
                "unsupported prime table version {version} (this build reads version {TABLE_VERSION})"
            )));
        }
        let mut limit = [0u8; 8];
        input.read_exact(&mut limit)?;
        let limit = u64::from_le_bytes(limit);
        if limit < 2 || limit > MAX_SIEVE_LIMIT {
            return Err(Error::Config(format!(
                "prime table dump declares limit {limit}, outside the supported range 2..={MAX_SIEVE_LIMIT}"
            )));
        }
        let n_words = (limit / 64 + 1) as usize;
        let mut words = vec![0u64; n_words];
        let mut buf = [0u8; 8];
        for word in words.iter_mut() {
            input.read_exact(&mut buf)?;
            *word = u64::from_le_bytes(buf);
        }
        let primes = collect_primes(&words, limit);
        Ok(PrimeTable { limit, words, primes })
    }
}

/// Sieve all primes up to `limit` with the default segment length.
pub fn sieve_primes(limit: u64) -> Result<PrimeTable> {
    sieve_primes_with_segment(limit, DEFAULT_SEGMENT)
}

/// Sieve all primes up to `limit`, sieving `segment` integers at a time.
/// `segment` is rounded up to the next multiple of 64 so that segments own
/// disjoint words of the shared bit array.
pub fn sieve_primes_with_segment(limit: u64, segment: u64) -> Result<PrimeTable> {
    if limit < 2 {
        return Err(Error::Config(format!(
            "sieve limit must be at least 2, got {limit}"
        )));
    }
    if limit > MAX_SIEVE_LIMIT {
        return Err(Error::Budget(format!(
            "sieve limit {limit} exceeds the memory budget cap {MAX_SIEVE_LIMIT}"
        )));
    }
    let segment = segment.max(64).div_ceil(64) * 64;

    // Base primes up to sqrt(limit), by a plain in-memory sieve.
    let root = limit.isqrt();
    let base = simple_sieve(root);

    let n_words = (limit / 64 + 1) as usize;
    let n_segments = (limit + 1).div_ceil(segment);

    // Each segment produces its own words; ordered collect keeps the
    // result independent of scheduling.
    let chunks: Vec<Vec<u64>> = (0..n_segments)
        .into_par_iter()
        .map(|s| {
            let lo = s * segment;
            let hi = ((s + 1) * segment).min(limit + 1);
            sieve_segment(lo, hi, &base)
        })
        .collect();

    let mut words = Vec::with_capacity(n_words);
    for chunk in chunks {
        words.extend_from_slice(&chunk);
    }
    words.truncate(n_words);
    // Bits beyond `limit` in the last word must stay clear.
    let tail = (limit + 1) % 64;
    if tail != 0 {
        words[n_words - 1] &= (1u64 << tail) - 1;
    }

    let primes = collect_primes(&words, limit);
    Ok(PrimeTable { limit, words, primes })
}

/// Sieve the half-open range `[lo, hi)` against the base primes and return
/// its bit words (lo is a multiple of 64).
fn sieve_segment(lo: u64, hi: u64, base: &[u64]) -> Vec<u64> {
    debug_assert_eq!(lo % 64, 0);
    let n_words = ((hi - lo) as usize).div_ceil(64);
    let mut words = vec![!0u64; n_words];
    if lo == 0 {
        words[0] &= !0b11; // 0 and 1 are not prime
    }
    for &p in base {
        // Start marking at p^2 or at the first multiple of p in range,
        // whichever comes later; p itself always survives.
        let mut m = (p * p).max(lo.div_ceil(p) * p);
        while m < hi {
            let off = m - lo;
            words[(off / 64) as usize] &= !(1u64 << (off % 64));
            m += p;
        }
    }
    // Clear tail bits past hi so segment output is canonical.
    let tail = (hi - lo) % 64;
    if tail != 0 {
        words[n_words - 1] &= (1u64 << tail) - 1;
    }
    words
}

/// Non-segmented sieve used for base primes (and as an oracle in tests).
fn simple_sieve(limit: u64) -> Vec<u64> {
    if limit < 2 {
        return Vec::new();
    }
    let n = (limit + 1) as usize;
    let mut composite = vec![false; n];
    let mut primes = Vec::new();
    for p in 2..n {
        if !composite[p] {
            primes.push(p as u64);
            let mut m = p * p;
            while m < n {
                composite[m] = true;
                m += p;
            }
        }
    }
    primes
}

fn collect_primes(words: &[u64], limit: u64) -> Vec<u64> {
    let mut primes = Vec::new();
    for (i, &word) in words.iter().enumerate() {
        let mut w = word;
        while w != 0 {
            let bit = w.trailing_zeros() as u64;
            let n = i as u64 * 64 + bit;
            if n <= limit {
                primes.push(n);
            }
            w &= w - 1;
        }
    }
    primes
}

/// A primorial `W = prod of primes <= w` together with its Euler totient
/// `phi(W) = prod of (p - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Primorial {
    pub w: u64,
    /// The primorial value W.
    pub value: u64,
    /// phi(W).
    pub totient: u64,
}

impl Primorial {
    /// phi(W)/W as an exact fraction in f64 (both parts are exact u64).
    pub fn totient_ratio(&self) -> f64 {
        self.totient as f64 / self.value as f64
    }
}

/// Compute the primorial of `w` with checked arithmetic.
pub fn primorial(w: u64) -> Result<Primorial> {
    if w < 2 {
        return Err(Error::Config(format!(
            "primorial threshold must be at least 2, got {w}"
        )));
    }
    let primes = simple_sieve(w);
    let mut value: u64 = 1;
    let mut totient: u64 = 1;
    for &p in &primes {
        value = value.checked_mul(p).ok_or_else(|| {
            Error::Config(format!(
                "primorial of {w} overflows u64; the largest admissible threshold is {}",
                largest_admissible_w()
            ))
        })?;
        // p - 1 < p, so the totient cannot overflow before the value does.
        totient *= p - 1;
    }
    Ok(Primorial { w, value, totient })
}

/// Largest `w` whose primorial still fits in u64.
fn largest_admissible_w() -> u64 {
    // Product of primes up to 47 is ~6.1e17 < 2^63; including 53 overflows.
    // Any threshold in [47, 52] yields the same primorial.
    52
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent primality oracle: trial division.
    fn is_prime_trial(n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut d = 2;
        while d * d <= n {
            if n % d == 0 {
                return false;
            }
            d += 1;
        }
        true
    }

    /// Independent totient oracle: gcd scan.
    fn totient_scan(m: u64) -> u64 {
        fn gcd(a: u64, b: u64) -> u64 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        (1..=m).filter(|&x| gcd(x, m) == 1).count() as u64
    }

    #[test]
    fn prime_counts_match_known_values() {
        assert_eq!(sieve_primes(100).unwrap().count(), 25);
        assert_eq!(sieve_primes(10_000).unwrap().count(), 1229);
        assert_eq!(sieve_primes(100_000).unwrap().count(), 9592);
    }

    #[test]
    fn small_primes_listed_in_order() {
        let table = sieve_primes(30).unwrap();
        assert_eq!(table.primes(), &[2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
    }

    #[test]
    fn membership_matches_trial_division_up_to_10k() {
        let table = sieve_primes(10_000).unwrap();
        for n in 0..=10_000u64 {
            let expected = is_prime_trial(n);
            let got = n >= 2 && table.is_prime(n);
            assert_eq!(got, expected, "disagreement at {n}");
        }
    }

    #[test]
    fn segment_size_does_not_change_the_table() {
        let reference = sieve_primes_with_segment(50_000, 1 << 20).unwrap();
        for seg in [64, 100, 4096, 1 << 16] {
            let table = sieve_primes_with_segment(50_000, seg).unwrap();
            assert_eq!(table, reference, "segment {seg} produced a different table");
        }
    }

    #[test]
    fn limit_below_two_is_rejected() {
        assert!(matches!(sieve_primes(1), Err(Error::Config(_))));
        assert!(matches!(sieve_primes(0), Err(Error::Config(_))));
    }

    #[test]
    fn limit_above_budget_is_refused() {
        assert!(matches!(
            sieve_primes(MAX_SIEVE_LIMIT + 1),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn probe_past_limit_panics() {
        let table = sieve_primes(100).unwrap();
        let result = std::panic::catch_unwind(|| table.is_prime(101));
        assert!(result.is_err());
    }

    #[test]
    fn binary_roundtrip_preserves_table() {
        let table = sieve_primes(12_345).unwrap();
        let mut buf = Vec::new();
        table.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PTBL");
        assert_eq!(buf.len(), 16 + table.words.len() * 8);
        let back = PrimeTable::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn binary_read_rejects_wrong_magic() {
        let mut buf = Vec::new();
        sieve_primes(100).unwrap().write_binary(&mut buf).unwrap();
        buf[0] = b'Q';
        assert!(matches!(
            PrimeTable::read_binary(&mut buf.as_slice()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn primorials_match_hand_computed_values() {
        let p5 = primorial(5).unwrap();
        assert_eq!((p5.value, p5.totient), (30, 8));
        let p7 = primorial(7).unwrap();
        assert_eq!((p7.value, p7.totient), (210, 48));
        let p11 = primorial(11).unwrap();
        assert_eq!((p11.value, p11.totient), (2310, 480));
        // Non-prime thresholds include exactly the primes below them.
        assert_eq!(primorial(6).unwrap().value, 30);
        assert_eq!(primorial(10).unwrap().value, 210);
    }

    #[test]
    fn primorial_totient_matches_gcd_scan() {
        for w in [2, 3, 5, 7, 11] {
            let p = primorial(w).unwrap();
            assert_eq!(p.totient, totient_scan(p.value), "w = {w}");
        }
    }

    #[test]
    fn primorial_ratio_is_product_of_prime_fractions() {
        // phi(W)/W = prod (1 - 1/p) as exact rationals.
        for w in [2, 7, 13, 29, 47] {
            let p = primorial(w).unwrap();
            let mut num: u128 = 1;
            let mut den: u128 = 1;
            for &q in simple_sieve(w).iter() {
                num *= (q - 1) as u128;
                den *= q as u128;
            }
            assert_eq!(p.totient as u128 * den, p.value as u128 * num, "w = {w}");
        }
    }

    #[test]
    fn primorial_overflow_names_the_cap() {
        let err = primorial(101).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("52"), "message should name the largest admissible threshold: {msg}");
        // The named cap really is admissible, and the next prime is not.
        assert!(primorial(52).is_ok());
        assert!(primorial(53).is_err());
    }

    proptest! {
        #[test]
        fn membership_matches_trial_division(limit in 2u64..5_000, probes in proptest::collection::vec(0u64..5_000, 20)) {
            let table = sieve_primes(limit).unwrap();
            for n in probes {
                if n <= limit {
                    prop_assert_eq!(table.is_prime(n), is_prime_trial(n));
                }
            }
        }

        #[test]
        fn segmented_equals_simple_sieve(limit in 2u64..20_000) {
            let table = sieve_primes(limit).unwrap();
            prop_assert_eq!(table.primes(), &simple_sieve(limit)[..]);
        }
    }
}
