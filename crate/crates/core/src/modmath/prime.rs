//! Primality testing and safe-prime search.

use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Miller–Rabin rounds used for every final primality decision.
pub const MR_ROUNDS: usize = 64;

const SIEVE_LIMIT: u32 = 2000;

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let mut sieve = vec![true; SIEVE_LIMIT as usize];
        sieve[0] = false;
        sieve[1] = false;
        let mut i = 2;
        while i * i < SIEVE_LIMIT as usize {
            if sieve[i] {
                let mut j = i * i;
                while j < SIEVE_LIMIT as usize {
                    sieve[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        (0..SIEVE_LIMIT).filter(|&i| sieve[i as usize]).collect()
    })
}

/// `Some(verdict)` when trial division settles the question.
fn trial_division(n: &BigUint) -> Option<bool> {
    if let Some(small) = n.to_u32() {
        if small < 2 {
            return Some(false);
        }
        if small < SIEVE_LIMIT {
            return Some(small_primes().binary_search(&small).is_ok());
        }
    }
    for &sp in small_primes() {
        if (n % sp).is_zero() {
            return Some(false);
        }
    }
    None
}

fn miller_rabin_round(n: &BigUint, n_minus_1: &BigUint, d: &BigUint, s: u64, a: &BigUint) -> bool {
    let mut x = a.modpow(d, n);
    if x.is_one() || &x == n_minus_1 {
        return true;
    }
    for _ in 1..s {
        x = (&x * &x) % n;
        if &x == n_minus_1 {
            return true;
        }
        if x.is_one() {
            return false;
        }
    }
    false
}

/// Miller–Rabin with `rounds` random bases, preceded by trial division.
///
/// Bases come from a generator seeded by `n` itself so the verdict is a pure
/// function of the input.
pub fn is_probable_prime_with(n: &BigUint, rounds: usize) -> bool {
    if let Some(v) = trial_division(n) {
        return v;
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let seed: [u8; 32] = Sha256::digest(n.to_bytes_be()).into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let two = BigUint::from(2u32);
    let upper = n - 2u32;
    if !miller_rabin_round(n, &n_minus_1, &d, s, &two) {
        return false;
    }
    (1..rounds).all(|_| {
        let a = rng.gen_biguint_range(&two, &upper);
        miller_rabin_round(n, &n_minus_1, &d, s, &a)
    })
}

pub fn is_probable_prime(n: &BigUint) -> bool {
    is_probable_prime_with(n, MR_ROUNDS)
}

/// `p` prime and `(p - 1) / 2` prime.
pub fn is_safe_prime(p: &BigUint) -> bool {
    if p < &BigUint::from(5u32) || p.is_even() {
        return false;
    }
    let q = p >> 1;
    // Cheap single-round screen on both halves before the full test.
    is_probable_prime_with(&q, 1)
        && is_probable_prime_with(p, 1)
        && is_probable_prime(&q)
        && is_probable_prime(p)
}

/// Candidate `q` survives sieving when neither `q` nor `2q + 1` has a small
/// factor (other than being that small prime itself).
fn sieve_ok(q: &BigUint) -> bool {
    for &sp in small_primes() {
        let r = (q % sp).to_u32().unwrap();
        // q ≡ 0 kills q; q ≡ (sp - 1)/2 kills 2q + 1.
        if r == 0 || (2 * r + 1).is_multiple_of(sp) {
            if q.to_u32() == Some(sp) || (q * 2u32 + 1u32).to_u32() == Some(sp) {
                continue;
            }
            return false;
        }
    }
    true
}

/// First safe prime `p >= start`, scanning upward.
pub fn next_safe_prime(start: &BigUint) -> BigUint {
    let mut p = start.clone();
    if p < BigUint::from(5u32) {
        return BigUint::from(5u32);
    }
    if p.is_even() {
        p += 1u32;
    }
    loop {
        if is_safe_prime(&p) {
            return p;
        }
        p += 2u32;
    }
}

/// Random safe prime of exactly `bits` bits, or `None` after
/// `max_candidates` sieved draws.
pub fn random_safe_prime(
    bits: u64,
    rng: &mut impl rand::RngCore,
    max_candidates: u64,
) -> Option<BigUint> {
    let top = BigUint::one() << (bits - 2);
    for _ in 0..max_candidates {
        // q has bits - 1 bits with the top bit set, so p = 2q + 1 has `bits` bits.
        let mut q = rng.gen_biguint(bits - 1) | &top;
        q |= BigUint::one();
        if !sieve_ok(&q) {
            continue;
        }
        let p = (&q << 1) + 1u32;
        if is_probable_prime_with(&p, 1)
            && is_probable_prime_with(&q, 1)
            && is_probable_prime(&q)
            && is_probable_prime(&p)
        {
            return Some(p);
        }
    }
    None
}

/// Smallest safe prime above `2^96`; the default field for fixed-point work.
pub fn smallest_safe_prime_above_2_96() -> BigUint {
    (BigUint::one() << 96) + 2887u32
}
