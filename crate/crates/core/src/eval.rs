//! Exact top-K retrieval, Recall@N and the per-domain evaluation report.
//!
//! Recall is computed per `(user, domain)` and averaged over users within a
//! domain. Retrieval is an exact full scan; ties go to the smaller item id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{positive_sets, Dataset, FieldKind};
use crate::error::{Error, Result};
use crate::layers::Side;
use crate::model::{AdiModel, Census, Embedder};
use crate::params::{Mode, Session};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Retrieve from every item in the corpus.
    #[default]
    OpenCorpus,
    /// Rank each user's given candidate list.
    CandidateList,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::OpenCorpus => "open-corpus",
            Protocol::CandidateList => "candidate-list",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open-corpus" | "open" => Ok(Protocol::OpenCorpus),
            "candidate-list" | "candidates" => Ok(Protocol::CandidateList),
            other => Err(Error::Config(format!(
                "unknown protocol `{other}` (expected open-corpus or candidate-list)"
            ))),
        }
    }
}

/// Item embeddings of one domain, row `i` belonging to `items[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEmbeddings {
    pub domain: usize,
    pub items: Vec<u32>,
    pub matrix: Tensor,
}

/// Applies the item tower to every catalog item under `domain`.
pub fn materialize_corpus(
    model: &dyn Embedder,
    ds: &Dataset,
    domain: usize,
) -> Result<CorpusEmbeddings> {
    let fields = ds.schema.side_names(Side::Item);
    for (id, row) in ds.items.iter().enumerate() {
        if row.len() < fields.len() {
            return Err(Error::Data(format!(
                "item {id} is missing feature `{}`",
                fields[row.len()]
            )));
        }
    }
    let items: Vec<u32> = (0..ds.items.len() as u32).collect();
    let matrix = model.embed(Side::Item, domain, ds, &items)?;
    Ok(CorpusEmbeddings {
        domain,
        items,
        matrix,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
    /// Fewer than the requested K items were available.
    pub truncated: bool,
}

fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn top_of(mut scored: Vec<(f64, u32)>, k: usize) -> RetrievalResult {
    let truncated = scored.len() < k;
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    RetrievalResult {
        items: scored.iter().map(|x| x.1).collect(),
        scores: scored.iter().map(|x| x.0).collect(),
        truncated,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The `k` highest inner-product items outside `exclusions`.
pub fn topk_retrieve(
    user: &[f64],
    corpus: &CorpusEmbeddings,
    k: usize,
    exclusions: &BTreeSet<u32>,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::Config("top-k retrieval needs k >= 1".into()));
    }
    if corpus.matrix.cols() != user.len() {
        return Err(Error::shape(
            "topk_retrieve",
            &[1, user.len()],
            corpus.matrix.shape(),
        ));
    }
    let scored = corpus
        .items
        .iter()
        .enumerate()
        .filter(|(_, id)| !exclusions.contains(id))
        .map(|(r, &id)| (dot(user, corpus.matrix.row(r)), id))
        .collect();
    Ok(top_of(scored, k))
}

/// `|retrieved[..n] ∩ relevant| / |relevant|`, or `None` for an empty
/// relevant set.
pub fn recall_at_n(retrieved: &[u32], relevant: &BTreeSet<u32>, n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = retrieved
        .iter()
        .take(n)
        .filter(|v| relevant.contains(v))
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub ns: Vec<usize>,
    pub protocol: Protocol,
    pub exclude_train_positives: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ns: vec![10, 50, 100],
            protocol: Protocol::OpenCorpus,
            exclude_train_positives: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(Error::Config(
                "eval needs a nonempty list of positive N values".into(),
            ));
        }
        Ok(())
    }

    fn sorted_ns(&self) -> Vec<usize> {
        let mut ns = self.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRecall {
    pub domain: usize,
    /// Users averaged over.
    pub users: usize,
    /// Users active in the domain without test positives.
    pub skipped: usize,
    /// Users with test positives but no candidate list.
    pub missing_candidates: usize,
    pub positives: usize,
    /// Users whose retrieval returned fewer than max(N) items.
    pub truncated: usize,
    /// `N -> mean Recall@N`.
    pub recall: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: Protocol,
    pub ns: Vec<usize>,
    pub exclude_train_positives: bool,
    pub averaging: String,
    pub domains: Vec<DomainRecall>,
    pub census: Option<Census>,
    pub config_digest: String,
}

pub const AVERAGING: &str = "per-(user,domain) recall, macro-averaged over users";

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

impl EvalReport {
    pub fn mean_recall(&self, n: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .domains
            .iter()
            .filter_map(|d| d.recall.get(&n).copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn recall(&self, domain: usize, n: usize) -> Option<f64> {
        self.domains
            .get(domain)
            .and_then(|d| d.recall.get(&n).copied())
    }

    /// Plain-text report: a commented header, then one row per domain and
    /// one column per N.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# model: {}", self.model);
        let _ = writeln!(out, "# protocol: {}", self.protocol.as_str());
        let _ = writeln!(out, "# averaging: {}", self.averaging);
        let _ = writeln!(
            out,
            "# exclude-train-positives: {}",
            self.exclude_train_positives
        );
        let _ = writeln!(out, "# config-digest: {}", self.config_digest);
        if let Some(c) = &self.census {
            for line in c.to_string().lines() {
                let _ = writeln!(out, "# census: {line}");
            }
        }
        let _ = write!(
            out,
            "{:<8}{:>8}{:>9}{:>11}",
            "domain", "users", "skipped", "positives"
        );
        for n in &self.ns {
            let _ = write!(out, "{:>10}", format!("R@{n}"));
        }
        out.push('\n');
        for d in &self.domains {
            let _ = write!(
                out,
                "{:<8}{:>8}{:>9}{:>11}",
                d.domain, d.users, d.skipped, d.positives
            );
            for n in &self.ns {
                let _ = write!(out, "{:>10.6}", d.recall.get(n).copied().unwrap_or(0.0));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<8}{:>8}{:>9}{:>11}", "mean", "", "", "");
        for n in &self.ns {
            let _ = write!(out, "{:>10.6}", self.mean_recall(*n).unwrap_or(0.0));
        }
        out.push('\n');
        out
    }
}

/// Evaluates Recall@N per domain on the test split.
pub fn evaluate(model: &dyn Embedder, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    opts.validate()?;
    if model.domains() != ds.domains() {
        return Err(Error::Config(format!(
            "model has {} domains, dataset has {}",
            model.domains(),
            ds.domains()
        )));
    }
    let ns = opts.sorted_ns();
    let k = *ns.last().expect("validated");
    let test = positive_sets(&ds.test);
    let train = positive_sets(&ds.train);
    let empty = BTreeSet::new();

    let mut domains = Vec::with_capacity(ds.domains());
    for d in 0..ds.domains() {
        let active: BTreeSet<u32> = ds
            .train
            .iter()
            .chain(&ds.test)
            .filter(|s| s.domain as usize == d)
            .map(|s| s.user)
            .collect();
        let users: Vec<u32> = active
            .iter()
            .copied()
            .filter(|u| test.contains_key(&(*u, d as u32)))
            .collect();
        let mut row = DomainRecall {
            domain: d,
            users: 0,
            skipped: active.len() - users.len(),
            missing_candidates: 0,
            positives: 0,
            truncated: 0,
            recall: ns.iter().map(|&n| (n, 0.0)).collect(),
        };
        if users.is_empty() {
            domains.push(row);
            continue;
        }
        let user_emb = model.embed(Side::User, d, ds, &users)?;
        let corpus = materialize_corpus(model, ds, d)?;
        let mut sums = vec![0.0; ns.len()];
        for (r, &u) in users.iter().enumerate() {
            let relevant = &test[&(u, d as u32)];
            let exclusions = if opts.exclude_train_positives {
                train.get(&(u, d as u32)).unwrap_or(&empty)
            } else {
                &empty
            };
            let result = match opts.protocol {
                Protocol::OpenCorpus => topk_retrieve(user_emb.row(r), &corpus, k, exclusions)?,
                Protocol::CandidateList => {
                    let Some(cands) = ds.candidates.get(&(u, d as u32)) else {
                        row.missing_candidates += 1;
                        continue;
                    };
                    let scored = cands
                        .iter()
                        .filter(|v| !exclusions.contains(v))
                        .map(|&v| (dot(user_emb.row(r), corpus.matrix.row(v as usize)), v))
                        .collect();
                    top_of(scored, k)
                }
            };
            row.truncated += usize::from(result.truncated);
            row.users += 1;
            row.positives += relevant.len();
            for (i, &n) in ns.iter().enumerate() {
                sums[i] += recall_at_n(&result.items, relevant, n).expect("nonempty test set");
            }
        }
        if row.users > 0 {
            for (i, &n) in ns.iter().enumerate() {
                row.recall.insert(n, sums[i] / row.users as f64);
            }
        }
        domains.push(row);
    }
    Ok(EvalReport {
        model: String::from("model"),
        protocol: opts.protocol,
        ns,
        exclude_train_positives: opts.exclude_train_positives,
        averaging: AVERAGING.to_string(),
        domains,
        census: None,
        config_digest: config_digest(opts)?,
    })
}

/// Mean adaptation weights per domain and field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub side: Side,
    pub adaptation: String,
    pub fields: Vec<String>,
    /// `weights[d][f]`: mean weight of field `f` over domain `d`'s rows.
    pub weights: Vec<Vec<f64>>,
    pub rows: Vec<usize>,
}

impl AttentionReport {
    /// Index of the field with the largest mean weight in `domain`; ties go
    /// to the earlier field.
    pub fn top_field(&self, domain: usize) -> usize {
        let w = &self.weights[domain];
        (0..w.len()).fold(0, |best, f| if w[f] > w[best] { f } else { best })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# side: {}", self.side);
        let _ = writeln!(out, "# adaptation: {}", self.adaptation);
        let _ = write!(out, "{:<8}{:>8}", "domain", "rows");
        for f in &self.fields {
            let _ = write!(out, "{:>14}", f);
        }
        out.push('\n');
        for (d, w) in self.weights.iter().enumerate() {
            let _ = write!(out, "{:<8}{:>8}", d, self.rows[d]);
            for v in w {
                let _ = write!(out, "{:>14.6}", v);
            }
            out.push('\n');
        }
        out
    }
}

/// Mean per-field adaptation weights of `side` for each domain, over the
/// distinct entities that appear in that domain's interactions.
///
/// Only attention-style adaptation (VA, SE) produces weights. With
/// `linear_magnitudes`, an LT model reports the mean `|W|` of each field's
/// slice instead.
pub fn inspect_attention(
    model: &AdiModel,
    ds: &Dataset,
    side: Side,
    linear_magnitudes: bool,
) -> Result<AttentionReport> {
    use crate::layers::AdaptationKind;
    use crate::model::tower::Adaptation;

    let tower = model.tower(side);
    let kind = model.config.adaptation;
    let fields = tower.field_names();
    match kind {
        AdaptationKind::None => {
            return Err(Error::Config(
                "the model has no adaptation layer, so there are no weights to inspect".into(),
            ))
        }
        AdaptationKind::Linear if !linear_magnitudes => {
            return Err(Error::Config(
                "linear adaptation has no attention weights; request weight magnitudes instead"
                    .into(),
            ))
        }
        _ => {}
    }
    let mut weights = Vec::with_capacity(ds.domains());
    let mut rows = Vec::with_capacity(ds.domains());
    for d in 0..ds.domains() {
        let ids: BTreeSet<u32> = ds
            .train
            .iter()
            .chain(&ds.test)
            .filter(|s| s.domain as usize == d)
            .map(|s| match side {
                Side::User => s.user,
                Side::Item => s.item,
            })
            .collect();
        let ids: Vec<u32> = ids.into_iter().collect();
        rows.push(ids.len());
        if kind == AdaptationKind::Linear {
            let layer = match &tower.adaptation {
                Adaptation::Global(l) => l,
                Adaptation::PerDomain(ls) => &ls[d],
                Adaptation::PerNetwork { specific, shared } => {
                    specific.get(d).unwrap_or(&shared[0])
                }
                Adaptation::None => unreachable!("checked above"),
            };
            let w = model
                .store
                .get(layer.linear_weight().expect("linear layer"));
            let mut out = Vec::with_capacity(fields.len());
            let mut start = 0;
            let dims: Vec<usize> = tower
                .fields
                .iter()
                .map(|f| f.dim)
                .chain(
                    tower
                        .indicator_input
                        .then(|| tower.indicator.as_ref().map_or(0, |t| t.dim)),
                )
                .collect();
            for dim in dims {
                let slice = &w.data()[start..start + dim];
                out.push(slice.iter().map(|x| x.abs()).sum::<f64>() / dim as f64);
                start += dim;
            }
            weights.push(out);
            continue;
        }
        if ids.is_empty() {
            weights.push(vec![0.0; fields.len()]);
            continue;
        }
        let mut s = Session::new(&model.store, Mode::Infer);
        let out = tower.forward(&mut s, &ds.rows(side, &ids), d)?;
        let w = out
            .attention
            .ok_or_else(|| Error::Config("the adaptation layer produced no weights".into()))?;
        let t = s.g.value(w);
        let mean: Vec<f64> = (0..t.cols())
            .map(|f| (0..t.rows()).map(|r| t.get(r, f)).sum::<f64>() / t.rows() as f64)
            .collect();
        weights.push(mean);
    }
    Ok(AttentionReport {
        side,
        adaptation: kind.as_str().to_string(),
        fields,
        weights,
        rows,
    })
}

/// Fields of `side` that belong to one domain, as `(domain, field index)`.
pub fn domain_exclusive_fields(ds: &Dataset, side: Side) -> Vec<(usize, usize)> {
    ds.schema
        .side_fields(side)
        .enumerate()
        .filter(|(_, f)| f.kind == FieldKind::DomainStat)
        .filter_map(|(i, f)| f.domain.map(|d| (d, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(rows: Vec<Vec<f64>>) -> CorpusEmbeddings {
        CorpusEmbeddings {
            domain: 0,
            items: (0..rows.len() as u32).collect(),
            matrix: Tensor::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn exhaustive_k_returns_everything_sorted() {
        let c = corpus(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.0],
        ]);
        let r = topk_retrieve(&[1.0, 0.5], &c, 4, &BTreeSet::new()).unwrap();
        assert_eq!(r.items, vec![2, 0, 1, 3]);
        assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
        assert!(!r.truncated);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let c = corpus(vec![vec![1.0], vec![3.0], vec![1.0], vec![3.0]]);
        let r = topk_retrieve(&[1.0], &c, 3, &BTreeSet::new()).unwrap();
        assert_eq!(r.items, vec![1, 3, 0]);
    }

    #[test]
    fn exclusions_and_truncation() {
        let c = corpus(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let r = topk_retrieve(&[1.0], &c, 5, &BTreeSet::from([2])).unwrap();
        assert_eq!(r.items, vec![1, 0]);
        assert!(r.truncated);
        assert!(topk_retrieve(&[1.0], &c, 0, &BTreeSet::new()).is_err());
        assert!(topk_retrieve(&[1.0, 2.0], &c, 1, &BTreeSet::new()).is_err());
    }

    #[test]
    fn positive_rescaling_keeps_the_ranking() {
        let mut rng = crate::rng::RngState::new(9);
        let c = CorpusEmbeddings {
            domain: 0,
            items: (0..60).collect(),
            matrix: rng.normal_tensor(&[60, 4], 1.0),
        };
        let u = [0.3, -0.2, 1.1, 0.4];
        let scaled: Vec<f64> = u.iter().map(|x| x * 7.5).collect();
        let a = topk_retrieve(&u, &c, 10, &BTreeSet::new()).unwrap();
        let b = topk_retrieve(&scaled, &c, 10, &BTreeSet::new()).unwrap();
        assert_eq!(a.items, b.items);
    }

    #[test]
    fn matches_a_full_sort() {
        let mut rng = crate::rng::RngState::new(4);
        let c = CorpusEmbeddings {
            domain: 0,
            items: (0..200).collect(),
            matrix: rng.normal_tensor(&[200, 5], 1.0),
        };
        let u = [0.5, 0.1, -0.7, 1.0, 0.0];
        let mut all: Vec<(f64, u32)> = (0..200)
            .map(|r| (dot(&u, c.matrix.row(r)), r as u32))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let r = topk_retrieve(&u, &c, 10, &BTreeSet::new()).unwrap();
        assert_eq!(
            r.items,
            all.iter().take(10).map(|x| x.1).collect::<Vec<_>>()
        );
    }

    #[test]
    fn recall_cases() {
        let rel = BTreeSet::from([3, 7]);
        assert_eq!(recall_at_n(&[7, 3, 1], &rel, 3), Some(1.0));
        assert_eq!(recall_at_n(&[1, 2], &rel, 2), Some(0.0));
        assert_eq!(recall_at_n(&[1, 7, 3], &rel, 2), Some(0.5));
        assert_eq!(recall_at_n(&[1, 2], &BTreeSet::new(), 2), None);
        let list = [5, 3, 9, 7, 1];
        let mut prev = 0.0;
        for n in 1..=5 {
            let r = recall_at_n(&list, &rel, n).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = EvalOptions::default();
        let b = EvalOptions {
            exclude_train_positives: true,
            ..EvalOptions::default()
        };
        assert_eq!(
            config_digest(&a).unwrap(),
            config_digest(&a.clone()).unwrap()
        );
        assert_ne!(config_digest(&a).unwrap(), config_digest(&b).unwrap());
        assert_eq!(config_digest(&a).unwrap().len(), 64);
    }
}
