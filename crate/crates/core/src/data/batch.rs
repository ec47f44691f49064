//! Single-domain mini-batches.

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::Sample;

/// Positions into a sample slice, all from one domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub domain: usize,
    pub indices: Vec<usize>,
}

/// Groups `samples` by domain, shuffles within each domain, cuts batches of
/// `batch_size` and shuffles the batch order.
///
/// With `min_group = 2` (train-mode batch normalization) a trailing batch of
/// one sample is merged into the previous batch of its domain, and a domain
/// with a single sample is an error.
pub fn batch_by_domain(
    samples: &[Sample],
    domains: usize,
    batch_size: usize,
    min_group: usize,
    rng: &mut RngState,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size < min_group {
        return Err(Error::Config(format!(
            "batch size {batch_size} is below the minimum group size {min_group}"
        )));
    }
    let mut per_domain: Vec<Vec<usize>> = vec![Vec::new(); domains];
    for (i, s) in samples.iter().enumerate() {
        let d = s.domain as usize;
        if d >= domains {
            return Err(Error::UnknownDomain { domain: d, domains });
        }
        per_domain[d].push(i);
    }
    let mut batches = Vec::new();
    for (d, mut idx) in per_domain.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < min_group {
            return Err(Error::Data(format!(
                "domain {d} has {} samples, fewer than the {min_group} needed per batch",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < min_group) {
            let tail = chunks.pop().expect("nonempty");
            chunks.last_mut().expect("nonempty").extend(tail);
        }
        batches.extend(
            chunks
                .into_iter()
                .map(|indices| Batch { domain: d, indices }),
        );
    }
    rng.shuffle(&mut batches);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(counts: &[usize]) -> Vec<Sample> {
        let mut out = Vec::new();
        for (d, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(Sample::real(i as u32, i as u32, d as u32));
            }
        }
        out
    }

    #[test]
    fn two_domains_of_ten_make_four_batches() {
        let s = samples(&[10, 10]);
        let b = batch_by_domain(&s, 2, 5, 2, &mut RngState::new(1)).unwrap();
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_batches() {
        let s = samples(&[13, 7, 9]);
        let a = batch_by_domain(&s, 3, 4, 2, &mut RngState::new(5)).unwrap();
        let b = batch_by_domain(&s, 3, 4, 2, &mut RngState::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_tail_is_merged() {
        let s = samples(&[7]);
        let b = batch_by_domain(&s, 1, 3, 2, &mut RngState::new(2)).unwrap();
        let mut sizes: Vec<usize> = b.iter().map(|x| x.indices.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 4]);
    }

    #[test]
    fn lone_sample_is_rejected_under_normalization() {
        let s = samples(&[5, 1]);
        assert!(batch_by_domain(&s, 2, 4, 2, &mut RngState::new(0)).is_err());
        assert!(batch_by_domain(&s, 2, 4, 1, &mut RngState::new(0)).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn batches_never_mix_domains(
            counts in proptest::collection::vec(2usize..12, 1..5),
            batch in 2usize..9,
            seed in any::<u64>(),
        ) {
            let s = samples(&counts);
            let b = batch_by_domain(&s, counts.len(), batch, 2, &mut RngState::new(seed)).unwrap();
            let mut seen = vec![0usize; s.len()];
            for x in &b {
                prop_assert!(x.indices.len() >= 2);
                for &i in &x.indices {
                    prop_assert_eq!(s[i].domain as usize, x.domain);
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
