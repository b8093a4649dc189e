//! Words over the symbol alphabet and the prefix/suffix algebra on them.
//!
//! A word of level `m` is a sequence of `m` symbol ids. Replacement graphs
//! are indexed by words; inside a graph of known level a word is packed into
//! a base-`|S|` integer with the first symbol as the most significant digit,
//! so lexicographic order on words coincides with numeric order on vertices.

use crate::error::{Error, Result};

/// A word `w_1 … w_m` over the symbol alphabet; the level is the length.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    symbols: Vec<u8>,
}

impl Word {
    pub fn new(symbols: Vec<u8>) -> Self {
        assert!(!symbols.is_empty(), "words have level >= 1");
        Word { symbols }
    }

    /// The constant word `s^m`.
    pub fn repeated(symbol: u8, m: usize) -> Self {
        Word::new(vec![symbol; m])
    }

    pub fn level(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> u8 {
        self.symbols[i]
    }

    /// Prefix `[w]_n`.
    pub fn prefix(&self, n: usize) -> Word {
        Word::new(self.symbols[..n].to_vec())
    }

    /// Suffix of length `m` (the image under the shift that drops `|w| - m`
    /// leading symbols).
    pub fn suffix(&self, m: usize) -> Word {
        let n = self.symbols.len();
        Word::new(self.symbols[n - m..].to_vec())
    }

    /// Concatenation `wv`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut s = self.symbols.clone();
        s.extend_from_slice(&other.symbols);
        Word::new(s)
    }

    /// Packed vertex index in base `n_symbols`, first symbol most significant.
    pub fn encode(&self, n_symbols: usize) -> u64 {
        let mut x = 0u64;
        for &s in &self.symbols {
            x = x * n_symbols as u64 + s as u64;
        }
        x
    }

    /// Inverse of [`Word::encode`] for a known level.
    pub fn decode(mut code: u64, level: usize, n_symbols: usize) -> Word {
        let mut symbols = vec![0u8; level];
        for i in (0..level).rev() {
            symbols[i] = (code % n_symbols as u64) as u8;
            code /= n_symbols as u64;
        }
        Word::new(symbols)
    }
}

/// First index (1-based) at which two distinct words of equal level disagree.
pub fn word_meet(w: &Word, v: &Word) -> Result<usize> {
    if w.level() != v.level() {
        return Err(Error::LevelMismatch(w.level(), v.level()));
    }
    for i in 0..w.level() {
        if w.symbol(i) != v.symbol(i) {
            return Ok(i + 1);
        }
    }
    Err(Error::EqualWords)
}

/// Meet of two packed vertices of the same level; `None` when equal.
pub fn vertex_meet(mut a: u64, mut b: u64, level: usize, n_symbols: usize) -> Option<usize> {
    if a == b {
        return None;
    }
    // Find the most significant differing digit.
    let base = n_symbols as u64;
    let mut meet = level;
    for i in (1..=level).rev() {
        if a == b {
            break;
        }
        if a % base != b % base {
            meet = i;
        }
        a /= base;
        b /= base;
    }
    Some(meet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meet_is_first_disagreement() {
        let w = Word::new(vec![0, 1, 2]);
        let v = Word::new(vec![0, 1, 5]);
        assert_eq!(word_meet(&w, &v).unwrap(), 3);
        let u = Word::new(vec![1, 0, 0]);
        let z = Word::new(vec![0, 0, 0]);
        assert_eq!(word_meet(&u, &z).unwrap(), 1);
        assert_eq!(
            word_meet(&Word::new(vec![0, 7]), &Word::new(vec![2, 0])).unwrap(),
            1
        );
    }

    #[test]
    fn meet_rejects_degenerate_input() {
        let w = Word::new(vec![0, 1]);
        assert!(matches!(word_meet(&w, &w), Err(Error::EqualWords)));
        let v = Word::new(vec![0]);
        assert!(matches!(
            word_meet(&w, &v),
            Err(Error::LevelMismatch(2, 1))
        ));
    }

    #[test]
    fn encode_decode_round_trip() {
        let w = Word::new(vec![3, 0, 7]);
        let code = w.encode(8);
        assert_eq!(code, 3 * 64 + 7);
        assert_eq!(Word::decode(code, 3, 8), w);
    }

    #[test]
    fn vertex_meet_matches_word_meet() {
        let n = 5;
        for a in 0..125u64 {
            for b in 0..125u64 {
                let w = Word::decode(a, 3, n);
                let v = Word::decode(b, 3, n);
                let expect = word_meet(&w, &v).ok();
                assert_eq!(vertex_meet(a, b, 3, n), expect);
            }
        }
    }
}
