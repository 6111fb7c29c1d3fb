//! Prime enumeration for modulus generation and the reduced-modulus scan.

use crate::modmath::mulmod;

/// Odd primes `<= limit`, by a plain sieve of Eratosthenes.
pub fn odd_primes_up_to(limit: u64) -> Vec<u64> {
    if limit < 3 {
        return Vec::new();
    }
    let n = limit as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    let mut i = 3;
    while i <= n {
        if !composite[i] {
            out.push(i as u64);
            let mut j = i.saturating_mul(i);
            while j <= n {
                composite[j] = true;
                j += 2 * i;
            }
        }
        i += 2;
    }
    out
}

/// Odd primes in `[lo, hi)` by a segmented sieve over the given base primes.
/// `base` must contain every odd prime up to `sqrt(hi)`.
pub fn odd_primes_in_range(lo: u64, hi: u64, base: &[u64]) -> Vec<u64> {
    let lo = lo.max(3);
    if hi <= lo {
        return Vec::new();
    }
    let len = (hi - lo) as usize;
    let mut composite = vec![false; len];
    for &p in base {
        if p.saturating_mul(p) >= hi {
            break;
        }
        let mut start = (lo.div_ceil(p) * p).max(p * p);
        while start < hi {
            composite[(start - lo) as usize] = true;
            start += p;
        }
    }
    (lo..hi)
        .filter(|&n| n & 1 == 1 && !composite[(n - lo) as usize])
        .collect()
}

fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mulmod(acc, base, q);
        }
        base = mulmod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for the full `u64` range.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &WITNESSES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let d_shift = (n - 1).trailing_zeros();
    let d = (n - 1) >> d_shift;
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..d_shift {
            x = mulmod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Trial-divide `n` by the given ascending primes (and 2). Returns the
/// factor list if `n` is fully smooth over them.
pub fn factor_smooth(mut n: u64, primes: &[u64]) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    while n > 1 && n.is_multiple_of(2) {
        out.push(2);
        n /= 2;
    }
    for &p in primes {
        if n == 1 {
            break;
        }
        if p.saturating_mul(p) > n {
            if primes.binary_search(&n).is_ok() {
                out.push(n);
                n = 1;
            }
            break;
        }
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
    }
    (n == 1).then_some(out)
}
