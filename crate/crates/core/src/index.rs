//! Packed binary codes and linear-scan Hamming search.
//!
//! Bit `j` of a code lives in word `j / 64` at position `j % 64`; a set bit
//! means `+1`. Tail bits past `bits` are always zero.

use crate::codes::SignMatrix;
use crate::dataset::LabelArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    words: Vec<u64>,
    bits: usize,
    count: usize,
}

pub fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl PackedCodes {
    /// Packs the columns of an `L x N` sign matrix.
    pub fn pack(signs: &SignMatrix) -> Result<Self> {
        let (bits, count) = signs.shape();
        let wpc = words_per_code(bits);
        let mut words = vec![0u64; wpc * count];
        for (i, col) in signs.column_iter().enumerate() {
            let dst = &mut words[i * wpc..(i + 1) * wpc];
            for (j, &v) in col.iter().enumerate() {
                match v {
                    1 => dst[j / 64] |= 1 << (j % 64),
                    -1 => {}
                    other => {
                        return Err(Error::invalid(format!(
                            "code entry ({j}, {i}) is {other}, expected -1 or +1"
                        )))
                    }
                }
            }
        }
        Ok(Self { words, bits, count })
    }

    /// Builds from raw words; rejects stray tail bits.
    pub fn from_words(words: Vec<u64>, bits: usize, count: usize) -> Result<Self> {
        let wpc = words_per_code(bits);
        if words.len() != wpc * count {
            return Err(Error::DimensionMismatch {
                what: "packed word count",
                expected: wpc * count,
                actual: words.len(),
            });
        }
        let out = Self { words, bits, count };
        if let Some(mask) = out.tail_mask() {
            if (0..count).any(|i| out.code(i)[wpc - 1] & !mask != 0) {
                return Err(Error::invalid("packed codes have bits set past the code length"));
            }
        }
        Ok(out)
    }

    fn tail_mask(&self) -> Option<u64> {
        match self.bits % 64 {
            0 => None,
            r => Some((1u64 << r) - 1),
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn words_per_code(&self) -> usize {
        words_per_code(self.bits)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let wpc = self.words_per_code();
        &self.words[i * wpc..(i + 1) * wpc]
    }

    pub fn unpack(&self) -> SignMatrix {
        SignMatrix::from_fn(self.bits, self.count, |j, i| {
            if self.code(i)[j / 64] >> (j % 64) & 1 == 1 {
                1
            } else {
                -1
            }
        })
    }

    /// Codes `ids` in that order.
    pub fn select(&self, ids: &[usize]) -> Self {
        let mut words = Vec::with_capacity(ids.len() * self.words_per_code());
        for &i in ids {
            words.extend_from_slice(self.code(i));
        }
        Self {
            words,
            bits: self.bits,
            count: ids.len(),
        }
    }
}

/// Differing bits between two packed codes of equal word length.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "code word count",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeIndex {
    codes: PackedCodes,
    labels: LabelArray,
}

impl CodeIndex {
    pub fn new(codes: PackedCodes, labels: LabelArray) -> Result<Self> {
        if codes.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "label count vs code count",
                expected: codes.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { codes, labels })
    }

    pub fn codes(&self) -> &PackedCodes {
        &self.codes
    }

    pub fn labels(&self) -> &LabelArray {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    fn check_query(&self, query: &[u64]) -> Result<()> {
        if query.len() != self.codes.words_per_code() {
            return Err(Error::DimensionMismatch {
                what: "query word count",
                expected: self.codes.words_per_code(),
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// Distance from `query` to every stored code, in id order.
    pub fn distances(&self, query: &[u64]) -> Result<Vec<u32>> {
        self.check_query(query)?;
        Ok((0..self.len())
            .map(|i| hamming_unchecked(self.codes.code(i), query))
            .collect())
    }

    /// Every `(id, distance)` with distance `<= radius`, sorted by `(distance, id)`.
    pub fn radius_search(&self, query: &[u64], radius: u32) -> Result<Vec<(usize, u32)>> {
        self.check_query(query)?;
        let mut hits: Vec<(usize, u32)> = (0..self.len())
            .filter_map(|i| {
                let d = hamming_unchecked(self.codes.code(i), query);
                (d <= radius).then_some((i, d))
            })
            .collect();
        hits.sort_by_key(|&(i, d)| (d, i));
        Ok(hits)
    }

    /// All ids by ascending distance, ties by ascending id.
    pub fn rank_all(&self, query: &[u64]) -> Result<Vec<usize>> {
        let dist = self.distances(query)?;
        Ok(counting_rank(&dist, self.codes.bits()))
    }
}

/// Stable counting sort of ids by distance in `0..=bits`.
pub(crate) fn counting_rank(dist: &[u32], bits: usize) -> Vec<usize> {
    let mut start = vec![0usize; bits + 2];
    for &d in dist {
        start[d as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut order = vec![0usize; dist.len()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut start[d as usize];
        order[*slot] = i;
        *slot += 1;
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signs(rng: &mut ChaCha8Rng, l: usize, n: usize) -> SignMatrix {
        SignMatrix::from_fn(l, n, |_, _| if rng.random::<bool>() { 1 } else { -1 })
    }

    fn naive_hamming(a: &SignMatrix, i: usize, b: &SignMatrix, j: usize) -> u32 {
        (0..a.nrows()).filter(|&r| a[(r, i)] != b[(r, j)]).count() as u32
    }

    #[test]
    fn bit_layout() {
        let s = SignMatrix::from_column_slice(4, 1, &[1, -1, 1, -1]);
        let p = PackedCodes::pack(&s).unwrap();
        assert_eq!(p.words(), &[0b0101]);
    }

    #[test]
    fn sixty_five_bits_use_two_words() {
        let s = SignMatrix::from_element(65, 1, 1);
        let p = PackedCodes::pack(&s).unwrap();
        assert_eq!(p.words(), &[u64::MAX, 1]);
        let s = SignMatrix::from_element(65, 1, -1);
        assert_eq!(PackedCodes::pack(&s).unwrap().words(), &[0, 0]);
    }

    #[test]
    fn round_trip_and_rejects_bad_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_signs(&mut rng, 128, 50);
        assert_eq!(PackedCodes::pack(&s).unwrap().unpack(), s);
        let bad = SignMatrix::from_column_slice(2, 1, &[1, 0]);
        assert!(PackedCodes::pack(&bad).is_err());
        assert!(PackedCodes::from_words(vec![1 << 5], 4, 1).is_err());
        assert!(PackedCodes::from_words(vec![1 << 3], 4, 1).is_ok());
    }

    #[test]
    fn hamming_by_hand() {
        assert_eq!(hamming(&[0b1010], &[0b1010]).unwrap(), 0);
        assert_eq!(hamming(&[0b1010], &[0b0110]).unwrap(), 2);
        assert!(hamming(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn hamming_matches_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in [1, 31, 64, 65, 130] {
            let a = random_signs(&mut rng, l, 200);
            let b = random_signs(&mut rng, l, 200);
            let (pa, pb) = (PackedCodes::pack(&a).unwrap(), PackedCodes::pack(&b).unwrap());
            for i in 0..200 {
                assert_eq!(hamming(pa.code(i), pb.code(i)).unwrap(), naive_hamming(&a, i, &b, i));
            }
        }
    }

    fn index_of(signs: &SignMatrix) -> CodeIndex {
        let n = signs.ncols();
        CodeIndex::new(PackedCodes::pack(signs).unwrap(), vec![0; n].into()).unwrap()
    }

    #[test]
    fn radius_zero_and_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_signs(&mut rng, 32, 40);
        let idx = index_of(&s);
        let q = idx.codes().code(7).to_vec();
        let hits = idx.radius_search(&q, 0).unwrap();
        assert_eq!(hits, vec![(7, 0)]);
        assert_eq!(idx.radius_search(&q, 32).unwrap().len(), 40);
    }

    #[test]
    fn radius_search_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_signs(&mut rng, 32, 500);
        let queries = random_signs(&mut rng, 32, 20);
        let idx = index_of(&s);
        let pq = PackedCodes::pack(&queries).unwrap();
        for j in 0..20 {
            // A stored code with one bit flipped, so radius 2 is non-empty.
            let mut near = s.column(j).clone_owned();
            near[0] = -near[0];
            let near = SignMatrix::from_column_slice(32, 1, near.as_slice());
            let pn = PackedCodes::pack(&near).unwrap();
            for (query, signs, col, is_near) in [(pq.code(j), &queries, j, false), (pn.code(0), &near, 0, true)] {
                let got = idx.radius_search(query, 2).unwrap();
                let mut want: Vec<(usize, u32)> = (0..500)
                    .map(|i| (i, naive_hamming(&s, i, signs, col)))
                    .filter(|&(_, d)| d <= 2)
                    .collect();
                want.sort_by_key(|&(i, d)| (d, i));
                assert_eq!(got, want);
                if is_near {
                    assert!(!got.is_empty());
                }
            }
        }
    }

    #[test]
    fn rank_all_cases() {
        let s = SignMatrix::from_element(8, 5, 1);
        let idx = index_of(&s);
        assert_eq!(idx.rank_all(idx.codes().code(0)).unwrap(), vec![0, 1, 2, 3, 4]);
        // distances (2, 0, 1) to the all-ones query
        let s = SignMatrix::from_column_slice(3, 3, &[-1, -1, 1, 1, 1, 1, -1, 1, 1]);
        let idx = index_of(&s);
        let q = PackedCodes::pack(&SignMatrix::from_element(3, 1, 1)).unwrap();
        assert_eq!(idx.distances(q.code(0)).unwrap(), vec![2, 0, 1]);
        assert_eq!(idx.rank_all(q.code(0)).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn rank_all_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_signs(&mut rng, 12, 300);
        let idx = index_of(&s);
        let q = random_signs(&mut rng, 12, 10);
        let pq = PackedCodes::pack(&q).unwrap();
        for j in 0..10 {
            let mut want: Vec<usize> = (0..300).collect();
            want.sort_by_key(|&i| (naive_hamming(&s, i, &q, j), i));
            assert_eq!(idx.rank_all(pq.code(j)).unwrap(), want);
        }
    }

    #[test]
    fn label_count_must_match() {
        let s = SignMatrix::from_element(4, 3, 1);
        assert!(CodeIndex::new(PackedCodes::pack(&s).unwrap(), vec![0, 1].into()).is_err());
    }

    fn packed_strategy(bits: usize, n: usize) -> impl Strategy<Value = SignMatrix> {
        proptest::collection::vec(any::<bool>(), bits * n)
            .prop_map(move |v| SignMatrix::from_iterator(bits, n, v.into_iter().map(|b| if b { 1 } else { -1 })))
    }

    proptest! {
        #[test]
        fn triangle_inequality(bits in 1usize..150, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PackedCodes::pack(&random_signs(&mut rng, bits, 3)).unwrap();
            let d = |i, j| hamming(p.code(i), p.code(j)).unwrap();
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2));
            prop_assert_eq!(d(0, 1), d(1, 0));
        }

        #[test]
        fn radius_results_are_nested(s in packed_strategy(10, 60), r in 0u32..10) {
            let idx = index_of(&s);
            let q = idx.codes().code(0).to_vec();
            let small: Vec<usize> = idx.radius_search(&q, r).unwrap().into_iter().map(|h| h.0).collect();
            let big: Vec<usize> = idx.radius_search(&q, r + 1).unwrap().into_iter().map(|h| h.0).collect();
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }

        #[test]
        fn rank_all_is_permutation(s in packed_strategy(7, 40), qi in 0usize..40) {
            let idx = index_of(&s);
            let mut order = idx.rank_all(idx.codes().code(qi)).unwrap();
            order.sort_unstable();
            prop_assert_eq!(order, (0..40).collect::<Vec<_>>());
        }
    }
}
