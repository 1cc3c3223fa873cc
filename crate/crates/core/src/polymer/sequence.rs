//! Surface index sequences and their enumeration by kink count.

use std::fmt;

use crate::error::{Error, Result};

/// A cyclic binary assignment of beads to surfaces with a cached kink count.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SurfaceIndexSequence {
    bits: Vec<u8>,
    kinks: usize,
}

/// Number of cyclic neighbours that disagree, `ℓ_{N+1} = ℓ_1`.
pub fn kink_count(bits: &[u8]) -> usize {
    let n = bits.len();
    (0..n).filter(|&k| bits[k] != bits[(k + 1) % n]).count()
}

impl SurfaceIndexSequence {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Domain(
                "surface index sequence must be non-empty".into(),
            ));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Domain(format!(
                "surface index must be 0 or 1, got {b}"
            )));
        }
        let kinks = kink_count(&bits);
        Ok(Self { bits, kinks })
    }

    /// All beads on surface 0.
    pub fn zeros(n: usize) -> Self {
        Self {
            bits: vec![0; n],
            kinks: 0,
        }
    }

    /// All beads on surface 1.
    pub fn ones(n: usize) -> Self {
        Self {
            bits: vec![1; n],
            kinks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn kinks(&self) -> usize {
        self.kinks
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, k: usize) -> u8 {
        self.bits[k]
    }

    /// Surface of the cyclic successor of bead `k`.
    #[inline]
    pub fn next(&self, k: usize) -> u8 {
        self.bits[(k + 1) % self.bits.len()]
    }

    /// Flips bead `k`, updating the kink count from its two bonds.
    pub fn flip(&mut self, k: usize) {
        let n = self.bits.len();
        if n == 1 {
            self.bits[0] ^= 1;
            return;
        }
        let prev = self.bits[(k + n - 1) % n];
        let next = self.bits[(k + 1) % n];
        let before = usize::from(prev != self.bits[k]) + usize::from(next != self.bits[k]);
        self.bits[k] ^= 1;
        let after = usize::from(prev != self.bits[k]) + usize::from(next != self.bits[k]);
        self.kinks = self.kinks + after - before;
    }

    /// Every bead flipped; kink positions are unchanged.
    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| b ^ 1).collect(),
            kinks: self.kinks,
        }
    }

    pub fn complement_in_place(&mut self) {
        for b in &mut self.bits {
            *b ^= 1;
        }
    }

    pub fn rotate_left(&self, shift: usize) -> Self {
        let mut bits = self.bits.clone();
        let n = bits.len();
        bits.rotate_left(shift % n);
        Self {
            bits,
            kinks: self.kinks,
        }
    }

    /// Positions `k` with `ℓ_k ≠ ℓ_{k+1}`.
    pub fn kink_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bits.len()).filter(move |&k| self.bits[k] != self.next(k))
    }
}

impl fmt::Debug for SurfaceIndexSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ℓ(")?;
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        write!(f, "; {} kinks)", self.kinks)
    }
}

/// Lexicographic walk over the `r`-subsets of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    started: bool,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, r: usize) -> Self {
        Self {
            n,
            idx: (0..r).collect(),
            started: false,
            done: r > n,
        }
    }

    /// Advances to the next subset and returns it, or `None` when exhausted.
    pub fn advance(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.idx);
        }
        let r = self.idx.len();
        let mut i = r;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - r + i {
                self.idx[i] += 1;
                for j in i + 1..r {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(&self.idx);
            }
        }
        self.done = true;
        None
    }

    pub fn reset(&mut self) {
        let r = self.idx.len();
        for (j, v) in self.idx.iter_mut().enumerate() {
            *v = j;
        }
        self.started = false;
        self.done = r > self.n;
    }
}

/// All sequences of length `n` with exactly `2k` kinks, generated lazily.
///
/// Order: first bit 0 before first bit 1; within each, kink-position sets in
/// lexicographic order. A kink at position `i` means `ℓ_i ≠ ℓ_{i+1}`.
#[derive(Debug, Clone)]
pub struct KinkSequences {
    n: usize,
    first_bit: u8,
    positions: Combinations,
}

/// Lazily enumerates the `2·C(n, 2k)` sequences with `2k` kinks.
pub fn enumerate_kink_sequences(n: usize, k: usize) -> Result<KinkSequences> {
    if n == 0 || 2 * k > n {
        return Err(Error::Domain(format!(
            "kink level k = {k} out of range for N = {n} beads (need 0 ≤ 2k ≤ N)"
        )));
    }
    Ok(KinkSequences {
        n,
        first_bit: 0,
        positions: Combinations::new(n, 2 * k),
    })
}

impl KinkSequences {
    pub fn beads(&self) -> usize {
        self.n
    }

    /// Writes the next sequence into `bits` (length `n`) without allocating.
    pub fn next_into(&mut self, bits: &mut [u8]) -> bool {
        debug_assert_eq!(bits.len(), self.n);
        loop {
            if let Some(kinks) = self.positions.advance() {
                let mut current = self.first_bit;
                let mut next_kink = 0;
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = current;
                    if next_kink < kinks.len() && kinks[next_kink] == i {
                        current ^= 1;
                        next_kink += 1;
                    }
                }
                return true;
            }
            if self.first_bit == 1 {
                return false;
            }
            self.first_bit = 1;
            self.positions.reset();
        }
    }

    pub fn reset(&mut self) {
        self.first_bit = 0;
        self.positions.reset();
    }
}

impl Iterator for KinkSequences {
    type Item = SurfaceIndexSequence;

    fn next(&mut self) -> Option<Self::Item> {
        let mut bits = vec![0u8; self.n];
        if self.next_into(&mut bits) {
            Some(SurfaceIndexSequence::new(bits).expect("binary by construction"))
        } else {
            None
        }
    }
}

/// `C(n, r)` in exact integer arithmetic.
pub fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of sequences with exactly `2k` kinks on `n` beads.
pub fn level_size(n: usize, k: usize) -> u128 {
    2 * binomial(n, 2 * k)
}
