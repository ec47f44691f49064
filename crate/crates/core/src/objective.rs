//! Sampled softmax with log-Q correction, its negative sampler, and the
//! full-softmax likelihood it approximates.

use serde::{Deserialize, Serialize};

use crate::data::{Label, Sample};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    /// Add-one smoothed item frequency among a domain's training positives.
    #[default]
    Frequency,
}

/// Proposal distribution `Q` over item ids `0..corpus`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSampler {
    probs: Vec<f64>,
    log_q: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn uniform(corpus: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; corpus])
    }

    /// Q proportional to `count + 1`.
    pub fn smoothed(counts: &[u64]) -> Result<Self> {
        Self::from_weights(counts.iter().map(|&c| c as f64 + 1.0).collect())
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config(
                "negative sampler over an empty corpus".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config(
                "proposal weights must be positive and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(NegativeSampler {
            log_q: probs.iter().map(|p| p.ln()).collect(),
            probs,
            cumulative,
        })
    }

    /// One sampler per domain built from the real training positives.
    pub fn per_domain(
        kind: SamplerKind,
        corpus: usize,
        domains: usize,
        train: &[Sample],
    ) -> Result<Vec<Self>> {
        (0..domains)
            .map(|d| match kind {
                SamplerKind::Uniform => Self::uniform(corpus),
                SamplerKind::Frequency => {
                    let mut counts = vec![0u64; corpus];
                    for s in train
                        .iter()
                        .filter(|s| s.domain as usize == d && s.label == Label::Real)
                    {
                        counts[s.item as usize] += 1;
                    }
                    Self::smoothed(&counts)
                }
            })
            .collect()
    }

    pub fn corpus(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, item: u32) -> f64 {
        self.probs[item as usize]
    }

    pub fn log_q(&self, item: u32) -> f64 {
        self.log_q[item as usize]
    }

    /// One draw from Q by inverse CDF.
    pub fn draw(&self, rng: &mut RngState) -> u32 {
        let u = rng.uniform();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.probs.len() - 1) as u32
    }

    /// `n` distinct ids drawn from Q, never `positive`. Collisions are
    /// redrawn; when `n` is a large share of the corpus the draw switches
    /// to Gumbel top-k, which samples the same without-replacement law.
    pub fn sample(&self, positive: u32, n: usize, rng: &mut RngState) -> Result<Vec<u32>> {
        let corpus = self.corpus();
        if n >= corpus {
            return Err(Error::Config(format!(
                "cannot draw {n} negatives from a corpus of {corpus} items"
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        if 2 * n > corpus - 1 {
            let mut keyed: Vec<(f64, u32)> = (0..corpus as u32)
                .filter(|&v| v != positive)
                .map(|v| (self.log_q(v) + rng.gumbel(), v))
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            return Ok(keyed.into_iter().take(n).map(|(_, v)| v).collect());
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let v = self.draw(rng);
            if v != positive && !out.contains(&v) {
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// Scores and proposal log-probabilities of a batch; column 0 of each row is
/// the positive, the remaining columns its negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch {
    pub logits: Tensor,
    pub log_q: Tensor,
    /// Per-row weights; empty means all ones.
    pub weights: Vec<f64>,
}

/// Per-row sampled-softmax losses `[rows, 1]` of corrected logits
/// `logits - log_q`.
pub fn sampled_softmax_rows(g: &mut Graph, logits: Var, log_q: &Tensor) -> Result<Var> {
    if g.shape(logits) != log_q.shape() {
        return Err(Error::shape(
            "sampled_softmax",
            g.shape(logits),
            log_q.shape(),
        ));
    }
    if !g.value(logits).is_finite() || !log_q.is_finite() {
        return Err(Error::NonFinite("sampled_softmax input".into()));
    }
    let rows = log_q.rows();
    let q = g.leaf(log_q.clone())?;
    let corrected = g.sub(logits, q)?;
    let lse = g.logsumexp(corrected)?;
    let positive = g.pick_cols(corrected, &vec![0; rows], 1)?;
    g.sub(lse, positive)
}

/// Weighted mean of per-row losses, divided by the row count.
pub fn weighted_mean(g: &mut Graph, per_row: Var, weights: &[f64]) -> Result<Var> {
    let rows = g.shape(per_row)[0];
    let total = if weights.is_empty() {
        g.sum_all(per_row)?
    } else {
        if weights.len() != rows {
            return Err(Error::shape(
                "weighted_mean",
                &[rows, 1],
                &[weights.len(), 1],
            ));
        }
        let w = g.leaf(Tensor::matrix(rows, 1, weights.to_vec())?)?;
        let weighted = g.mul(per_row, w)?;
        g.sum_all(weighted)?
    };
    g.scale(total, 1.0 / rows as f64)
}

/// Mean sampled-softmax loss of a batch, as a graph node.
pub fn sampled_softmax_graph(
    g: &mut Graph,
    logits: Var,
    log_q: &Tensor,
    weights: &[f64],
) -> Result<Var> {
    let rows = sampled_softmax_rows(g, logits, log_q)?;
    weighted_mean(g, rows, weights)
}

pub fn sampled_softmax_loss(batch: &LossBatch) -> Result<f64> {
    let mut g = Graph::new();
    let logits = g.leaf(batch.logits.clone())?;
    let loss = sampled_softmax_graph(&mut g, logits, &batch.log_q, &batch.weights)?;
    Ok(g.value(loss).data()[0])
}

/// Negative log softmax probability of row `positive` over every corpus
/// row.
pub fn full_softmax_nll<R: AsRef<[f64]>>(
    user: &[f64],
    corpus: &[R],
    positive: usize,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Data("full softmax over an empty corpus".into()));
    }
    if positive >= corpus.len() {
        return Err(Error::Data(format!(
            "positive row {positive} outside a corpus of {}",
            corpus.len()
        )));
    }
    let mut scores = Vec::with_capacity(corpus.len());
    for row in corpus {
        let row = row.as_ref();
        if row.len() != user.len() {
            return Err(Error::shape(
                "full_softmax_nll",
                &[1, user.len()],
                &[1, row.len()],
            ));
        }
        scores.push(row.iter().zip(user).map(|(a, b)| a * b).sum::<f64>());
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[positive])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: Vec<Vec<f64>>, q: Vec<Vec<f64>>) -> LossBatch {
        LossBatch {
            logits: Tensor::from_rows(&rows).unwrap(),
            log_q: Tensor::from_rows(&q).unwrap(),
            weights: Vec::new(),
        }
    }

    #[test]
    fn forced_exclusion_returns_every_other_id() {
        let s = NegativeSampler::uniform(10).unwrap();
        let mut rng = RngState::new(3);
        let mut got = s.sample(3, 9, &mut rng).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 4, 5, 6, 7, 8, 9]);
        assert!(s.sample(3, 0, &mut rng).unwrap().is_empty());
        assert!(s.sample(3, 10, &mut rng).is_err());
    }

    #[test]
    fn rejection_path_gives_distinct_non_positive_ids() {
        let s = NegativeSampler::smoothed(&[5, 0, 2, 9, 1, 0, 0, 3, 4, 7, 1, 1]).unwrap();
        let mut rng = RngState::new(8);
        for _ in 0..200 {
            let got = s.sample(3, 4, &mut rng).unwrap();
            let mut sorted = got.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
            assert!(!got.contains(&3));
        }
    }

    #[test]
    fn frequency_draws_match_q_within_three_sigma() {
        let counts = [40, 0, 10, 25, 3, 0, 12, 7];
        let s = NegativeSampler::smoothed(&counts).unwrap();
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        let draws = 100_000;
        let mut hist = vec![0usize; counts.len()];
        let mut rng = RngState::new(11);
        for _ in 0..draws {
            hist[s.draw(&mut rng) as usize] += 1;
        }
        for (v, &c) in counts.iter().enumerate() {
            let q = (c as f64 + 1.0) / total;
            assert!((s.prob(v as u32) - q).abs() < 1e-15);
            let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
            let diff = (hist[v] as f64 - draws as f64 * q).abs();
            assert!(
                diff < 3.0 * sigma,
                "item {v}: {} vs {}",
                hist[v],
                draws as f64 * q
            );
        }
    }

    #[test]
    fn equal_corrected_logits_give_log_n_plus_one() {
        let b = batch(vec![vec![0.7; 6]], vec![vec![-0.2; 6]]);
        assert!((sampled_softmax_loss(&b).unwrap() - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn dominant_positive_gives_near_zero_loss() {
        let b = batch(vec![vec![60.0, 0.0, 0.0, 0.0]], vec![vec![0.0; 4]]);
        let loss = sampled_softmax_loss(&b).unwrap();
        assert!((0.0..1e-20).contains(&loss));
    }

    #[test]
    fn shift_invariance_per_row() {
        let base = vec![vec![0.3, -1.0, 2.0], vec![1.5, 0.2, -0.4]];
        let q = vec![vec![-1.1, -2.0, -0.5], vec![-0.3, -0.9, -1.4]];
        let shifted: Vec<Vec<f64>> = base
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|x| x + 3.0 * i as f64 - 1.0).collect())
            .collect();
        let a = sampled_softmax_loss(&batch(base, q.clone())).unwrap();
        let b = sampled_softmax_loss(&batch(shifted, q)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn explicit_reference_with_correction() {
        let logits = vec![vec![1.0, 2.0, 0.5]];
        let q = vec![vec![(0.5f64).ln(), (0.25f64).ln(), (0.25f64).ln()]];
        let corrected: Vec<f64> = logits[0].iter().zip(&q[0]).map(|(l, q)| l - q).collect();
        let denom: f64 = corrected.iter().map(|c| c.exp()).sum();
        let expected = -(corrected[0].exp() / denom).ln();
        let got = sampled_softmax_loss(&batch(logits, q)).unwrap();
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn weights_scale_rows() {
        let mut b = batch(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![vec![0.0; 2]; 2]);
        let plain = sampled_softmax_loss(&b).unwrap();
        b.weights = vec![1.0, 1.0];
        assert_eq!(sampled_softmax_loss(&b).unwrap(), plain);
        b.weights = vec![2.0, 0.0];
        assert!((sampled_softmax_loss(&b).unwrap() - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn non_finite_input_is_an_error() {
        // Tensors reject non-finite values, so overflow inside the graph.
        let mut g = Graph::new();
        let big = g
            .leaf(Tensor::row_vector(vec![1e308, 0.0]).unwrap())
            .unwrap();
        let overflow = g.scale(big, 10.0).unwrap();
        let q = Tensor::zeros(&[1, 2]);
        let err = sampled_softmax_graph(&mut g, overflow, &q, &[]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn full_softmax_small_cases() {
        assert_eq!(
            full_softmax_nll(&[1.0, 2.0], &[[0.3, 0.4]], 0).unwrap(),
            0.0
        );
        let flat = vec![vec![0.0; 2]; 4];
        assert!((full_softmax_nll(&[1.0, 2.0], &flat, 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(full_softmax_nll(&[1.0, 2.0], &empty, 0).is_err());
    }

    #[test]
    fn full_softmax_matches_direct_probability() {
        let mut rng = RngState::new(5);
        let corpus: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let user = [0.4, -1.2, 0.9];
        let scores: Vec<f64> = corpus
            .iter()
            .map(|r| r.iter().zip(&user).map(|(a, b)| a * b).sum())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for pos in 0..7 {
            let expected = -(scores[pos].exp() / z).ln();
            assert!((full_softmax_nll(&user, &corpus, pos).unwrap() - expected).abs() < 1e-12);
        }
    }
}
