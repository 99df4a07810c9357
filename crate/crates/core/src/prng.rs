//! Counter-mode PRNG over SHA-256.
//!
//! Draw `k` on stream `label` hashes the ASCII string `"{seed},{label},{k}"`,
//! reads the digest as a big-endian 256-bit integer `x`, and accepts it when
//! `x` falls below the largest multiple of `n` not exceeding `2^256`. The
//! counter advances on every attempt, accepted or not. Only integer
//! arithmetic is involved, so draws are identical on every platform.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Check that a seed is a nonempty string of decimal digits.
pub fn validate_seed(seed: &str) -> Result<()> {
    if seed.is_empty() || !seed.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Config(format!("seed `{seed}` must be a nonempty string of decimal digits")));
    }
    Ok(())
}

/// Raw digest for `(seed, label, counter)`.
pub fn hash_word(seed: &str, label: &str, counter: u64) -> [u8; 32] {
    Sha256::digest(format!("{seed},{label},{counter}").as_bytes()).into()
}

/// `2^256 mod n`.
fn pow256_mod(n: u64) -> u64 {
    let n = n as u128;
    let r128 = (u128::MAX % n + 1) % n;
    (r128 * r128 % n) as u64
}

fn word_mod(word: &[u8; 32], n: u64) -> u64 {
    let n = n as u128;
    word.iter().fold(0u128, |acc, &b| (acc * 256 + b as u128) % n) as u64
}

/// True when `word >= 2^256 - r`, i.e. `!word < r`.
fn in_rejection_zone(word: &[u8; 32], r: u64) -> bool {
    if r == 0 {
        return false;
    }
    if word[..24].iter().any(|&b| b != 0xff) {
        return false;
    }
    let low = u64::from_be_bytes(word[24..].try_into().expect("8 bytes"));
    !low < r
}

#[derive(Clone, Debug)]
pub struct HashPrng {
    seed: String,
    label: String,
    counter: u64,
}

/// Open stream `label` under `seed`.
pub fn derive_prng(seed: &str, label: &str) -> Result<HashPrng> {
    validate_seed(seed)?;
    Ok(HashPrng {
        seed: seed.to_owned(),
        label: label.to_owned(),
        counter: 0,
    })
}

impl HashPrng {
    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let r = pow256_mod(n);
        loop {
            let word = hash_word(&self.seed, &self.label, self.counter);
            self.counter += 1;
            if !in_rejection_zone(&word, r) {
                return word_mod(&word, n);
            }
        }
    }

    /// Uniform index into a slice of length `n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Uniform real in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        self.below(1 << 53) as f64 / (1u64 << 53) as f64
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Number of hashes consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn digest_golden() {
        assert_eq!(
            hex(&hash_word("1234", "audit", 0)),
            "aa5c66fb129aa87e9b6fef6796d36e86d84f318177ad86d5cad2082e552ac8e1"
        );
        assert_eq!(
            hex(&hash_word("20261016", "rep:7", 5)),
            "f7b9dfa796d73586c105c24c4c3081f4f7ff6188a926377c90a421add090e6e7"
        );
    }

    #[test]
    fn reduction_golden() {
        assert_eq!(word_mod(&hash_word("1234", "audit", 0), 3), 2);
        assert_eq!(word_mod(&hash_word("1234", "audit", 0), 10), 9);
        assert_eq!(word_mod(&hash_word("20261016", "rep:7", 5), 1000), 607);
        let mut p = derive_prng("1234", "audit").unwrap();
        assert_eq!(p.below(3), 2);
        assert_eq!(p.counter(), 1);
    }

    #[test]
    fn acceptance_region() {
        // 2^256 = 3q + 1, so exactly the top value is rejected for n = 3.
        assert_eq!(pow256_mod(3), 1);
        assert_eq!(pow256_mod(2), 0);
        assert_eq!(pow256_mod(10), 6);
        assert_eq!(pow256_mod(1000), 936);
        let top = [0xffu8; 32];
        assert!(in_rejection_zone(&top, 1));
        let mut below_top = top;
        below_top[31] = 0xfe;
        assert!(!in_rejection_zone(&below_top, 1));
        assert!(in_rejection_zone(&below_top, 2));
        assert!(!in_rejection_zone(&top, 0));
    }

    #[test]
    fn seeds_are_decimal() {
        assert!(derive_prng("", "x").is_err());
        assert!(derive_prng("12a", "x").is_err());
        assert!(derive_prng("007", "x").is_ok());
    }

    #[test]
    fn streams_are_independent_and_repeatable() {
        let draw = |label: &str| {
            let mut p = derive_prng("42", label).unwrap();
            (0..20).map(|_| p.below(1_000_000)).collect::<Vec<_>>()
        };
        assert_eq!(draw("rep:1"), draw("rep:1"));
        assert_ne!(draw("rep:1"), draw("rep:2"));
        let mut p = derive_prng("42", "one").unwrap();
        assert!((0..10).all(|_| p.below(1) == 0));
    }

    #[test]
    fn chi_square_range_10() {
        let mut p = derive_prng("20261016", "chi").unwrap();
        let mut counts = [0u64; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[p.below(10) as usize] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }
}
