//! Deterministic offline embedding: each token hashes to one of `D`
//! buckets; the vector is the normalized bucket histogram. Texts sharing
//! tokens are therefore more similar than texts that share none.

pub const HASH_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn hash_embed(text: &str) -> Vec<f32> {
    let mut v = vec![0f64; HASH_DIM];
    let mut n = 0usize;
    for t in tokens(text) {
        v[(fnv1a(t.as_bytes()) % HASH_DIM as u64) as usize] += 1.0;
        n += 1;
    }
    if n == 0 {
        return vec![0.0; HASH_DIM];
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::cosine;

    #[test]
    fn same_text_same_vector_unit_norm() {
        let a = hash_embed("Warm winter jacket");
        assert_eq!(a, hash_embed("Warm winter jacket"));
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(a.len(), HASH_DIM);
    }

    #[test]
    fn shared_tokens_are_closer() {
        let j = hash_embed("jacket");
        let same = cosine(&j, &hash_embed("jacket")).unwrap();
        let other = cosine(&j, &hash_embed("flight")).unwrap();
        assert!(same > other);
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(hash_embed(" ,. ").iter().all(|x| *x == 0.0));
    }
}
