//! Latent-factor generator for multi-domain interaction data.
//!
//! Affinity of user `u` for item `v` in domain `d`:
//!
//! ```text
//! shared_weight * <u_s, v_s> + domain_weight * <u_d, v_d> + feature_weight * c_d(v)
//! ```
//!
//! where `c_d(v)` is the bin centre of the item's `stat_d` field. Every item
//! carries one `stat_d` per domain, but `stat_d` only enters the affinity of
//! domain `d`, so each stat field is predictive in its own domain alone.
//! Interactions are drawn without replacement from the softmax of the
//! affinity over the domain's items.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Side;
use crate::rng::RngState;

use super::{CandidateLists, Dataset, FeatureSchema, FieldKind, FieldSpec, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub domains: usize,
    pub users: usize,
    pub items: usize,
    /// Interaction count per domain; a single value applies to every domain.
    pub interactions: Vec<usize>,
    /// Fraction of users active in every domain; the rest are split across
    /// domains round-robin.
    pub user_overlap: f64,
    /// Fraction of items available in every domain.
    pub item_overlap: f64,
    pub shared_weight: f64,
    pub domain_weight: f64,
    pub feature_weight: f64,
    /// Fraction of a multi-domain user's interactions in each domain drawn
    /// from one cross-domain interest list, so the same `(user, item)` pair
    /// recurs across domains.
    pub label_overlap: f64,
    pub latent_dim: usize,
    pub temperature: f64,
    pub test_fraction: f64,
    /// Candidate list length per `(user, domain)` with test positives.
    pub candidates: usize,
    pub user_segments: usize,
    pub item_categories: usize,
    pub stat_bins: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            domains: 3,
            users: 600,
            items: 300,
            interactions: vec![6000, 3000, 1500],
            user_overlap: 0.5,
            item_overlap: 1.0,
            shared_weight: 1.0,
            domain_weight: 0.5,
            feature_weight: 1.0,
            label_overlap: 0.0,
            latent_dim: 8,
            temperature: 0.5,
            test_fraction: 0.2,
            candidates: 100,
            user_segments: 8,
            item_categories: 8,
            stat_bins: 8,
            embed_dim: 8,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn interactions_for(&self, domain: usize) -> usize {
        match self.interactions.as_slice() {
            [one] => *one,
            many => many[domain],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.domains == 0 || self.users == 0 || self.items == 0 {
            return bad("synthetic data needs domains, users and items".into());
        }
        if self.interactions.len() != 1 && self.interactions.len() != self.domains {
            return bad(format!(
                "interactions has {} entries for {} domains",
                self.interactions.len(),
                self.domains
            ));
        }
        for (name, r) in [
            ("user_overlap", self.user_overlap),
            ("item_overlap", self.item_overlap),
            ("label_overlap", self.label_overlap),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0,1], got {r}"));
            }
        }
        for (name, w) in [
            ("shared_weight", self.shared_weight),
            ("domain_weight", self.domain_weight),
            ("feature_weight", self.feature_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be >= 0, got {w}"));
            }
        }
        if self.temperature <= 0.0 {
            return bad("temperature must be > 0".into());
        }
        if self.latent_dim == 0 || self.embed_dim == 0 {
            return bad("latent_dim and embed_dim must be >= 1".into());
        }
        if self.user_segments == 0 || self.item_categories == 0 || self.stat_bins == 0 {
            return bad("feature vocabularies must be >= 1".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let e = self.embed_dim;
        let mut fields = vec![
            FieldSpec::new(
                "user_id",
                Some(Side::User),
                FieldKind::Profile,
                self.users,
                e,
            ),
            FieldSpec::new(
                "user_segment",
                Some(Side::User),
                FieldKind::Profile,
                self.user_segments,
                e,
            ),
            FieldSpec::new(
                "item_id",
                Some(Side::Item),
                FieldKind::Profile,
                self.items,
                e,
            ),
            FieldSpec::new(
                "item_category",
                Some(Side::Item),
                FieldKind::Profile,
                self.item_categories,
                e,
            ),
        ];
        for d in 0..self.domains {
            let mut f = FieldSpec::new(
                &format!("stat_{d}"),
                Some(Side::Item),
                FieldKind::DomainStat,
                self.stat_bins,
                e,
            );
            f.domain = Some(d);
            fields.push(f);
        }
        fields.push(FieldSpec::new(
            "domain",
            None,
            FieldKind::DomainIndicator,
            self.domains,
            e,
        ));
        FeatureSchema {
            domains: self.domains,
            fields,
        }
    }
}

/// Latent factors behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub shared_weight: f64,
    pub domain_weight: f64,
    pub feature_weight: f64,
    pub latent_dim: usize,
    /// `[user][k]`.
    pub user_shared: Vec<Vec<f64>>,
    pub item_shared: Vec<Vec<f64>>,
    /// `[domain][user][k]`.
    pub user_domain: Vec<Vec<Vec<f64>>>,
    pub item_domain: Vec<Vec<Vec<f64>>>,
    /// Quantized per-domain item effect `[domain][item]`.
    pub item_effect: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GroundTruth {
    pub fn affinity(&self, user: usize, item: usize, domain: usize) -> f64 {
        self.shared_weight * dot(&self.user_shared[user], &self.item_shared[item])
            + self.domain_weight
                * dot(
                    &self.user_domain[domain][user],
                    &self.item_domain[domain][item],
                )
            + self.feature_weight * self.item_effect[domain][item]
    }

    /// Factorized form: `affinity = <user_vector, item_vector>`.
    pub fn user_vector(&self, user: usize, domain: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.user_shared[user]
            .iter()
            .map(|x| x * self.shared_weight)
            .collect();
        v.extend(
            self.user_domain[domain][user]
                .iter()
                .map(|x| x * self.domain_weight),
        );
        v.push(self.feature_weight);
        v
    }

    pub fn item_vector(&self, item: usize, domain: usize) -> Vec<f64> {
        let mut v = self.item_shared[item].clone();
        v.extend_from_slice(&self.item_domain[domain][item]);
        v.push(self.item_effect[domain][item]);
        v
    }

    pub fn width(&self) -> usize {
        2 * self.latent_dim + 1
    }
}

/// Bin of `x` among `bins` equal cells on `[-2, 2]`, and that bin's centre.
fn quantize(x: f64, bins: usize) -> (u32, f64) {
    let width = 4.0 / bins as f64;
    let b = (((x + 2.0) / width).floor().max(0.0) as usize).min(bins - 1);
    (b as u32, -2.0 + (b as f64 + 0.5) * width)
}

fn latent(rng: &mut RngState, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..n)
        .map(|_| (0..dim).map(|_| rng.normal() * scale).collect())
        .collect()
}

/// Index of the largest projection onto `dirs`.
fn nearest(x: &[f64], dirs: &[Vec<f64>]) -> u32 {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, d) in dirs.iter().enumerate() {
        let v = dot(x, d);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}

/// Splits `0..n` into ids present in every domain and ids owned by one
/// domain (round-robin after a shuffle). Returns per-domain member lists.
fn assign(
    rng: &mut RngState,
    n: usize,
    domains: usize,
    ratio: f64,
    what: &str,
) -> Result<Vec<Vec<u32>>> {
    let shared = (ratio * n as f64).round() as usize;
    if domains == 1 && ratio > 0.0 {
        // No entity can appear in two domains when there is only one.
        return Err(Error::Config(format!(
            "{what} overlap {ratio} needs at least two domains"
        )));
    }
    let exclusive = n - shared;
    if domains > 1 && exclusive < domains && exclusive > 0 {
        return Err(Error::Config(format!(
            "{what} overlap {ratio} leaves {exclusive} exclusive {what}s for {domains} domains"
        )));
    }
    let mut ids: Vec<u32> = (0..n as u32).collect();
    rng.shuffle(&mut ids);
    let mut members = vec![Vec::new(); domains];
    for (i, &id) in ids.iter().enumerate() {
        if i < shared {
            for m in members.iter_mut() {
                m.push(id);
            }
        } else {
            members[(i - shared) % domains].push(id);
        }
    }
    for m in members.iter_mut() {
        m.sort_unstable();
    }
    Ok(members)
}

/// Gumbel-top-k: `k` distinct picks from `pool` with probabilities
/// proportional to `exp(logit)`, in sampled order.
fn sample_without_replacement(
    rng: &mut RngState,
    pool: &[u32],
    logits: &[f64],
    k: usize,
) -> Vec<u32> {
    let mut keyed: Vec<(f64, u32)> = pool
        .iter()
        .zip(logits)
        .map(|(&id, &l)| (l + rng.gumbel(), id))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, id)| id).collect()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = config.schema();
    schema.validate()?;
    let root = RngState::new(config.seed);
    let (nd, nu, nv, dim) = (
        config.domains,
        config.users,
        config.items,
        config.latent_dim,
    );

    let mut rng = root.fork(1);
    let user_shared = latent(&mut rng, nu, dim);
    let item_shared = latent(&mut rng, nv, dim);
    let user_domain: Vec<_> = (0..nd).map(|_| latent(&mut rng, nu, dim)).collect();
    let item_domain: Vec<_> = (0..nd).map(|_| latent(&mut rng, nv, dim)).collect();
    let mut stat_ids = vec![vec![0u32; nv]; nd];
    let mut item_effect = vec![vec![0.0; nv]; nd];
    for d in 0..nd {
        for v in 0..nv {
            let (bin, centre) = quantize(rng.normal(), config.stat_bins);
            stat_ids[d][v] = bin;
            item_effect[d][v] = centre;
        }
    }
    let segment_dirs = latent(&mut rng, config.user_segments, dim);
    let category_dirs = latent(&mut rng, config.item_categories, dim);
    let truth = GroundTruth {
        shared_weight: config.shared_weight,
        domain_weight: config.domain_weight,
        feature_weight: config.feature_weight,
        latent_dim: dim,
        user_shared,
        item_shared,
        user_domain,
        item_domain,
        item_effect,
    };

    let users: Vec<Vec<u32>> = (0..nu)
        .map(|u| vec![u as u32, nearest(&truth.user_shared[u], &segment_dirs)])
        .collect();
    let items: Vec<Vec<u32>> = (0..nv)
        .map(|v| {
            let mut row = vec![v as u32, nearest(&truth.item_shared[v], &category_dirs)];
            row.extend((0..nd).map(|d| stat_ids[d][v]));
            row
        })
        .collect();

    let mut rng = root.fork(2);
    let user_members = assign(&mut rng, nu, nd, config.user_overlap, "user")?;
    let item_members = assign(&mut rng, nv, nd, config.item_overlap, "item")?;

    // Per-(user, domain) interaction counts.
    let mut counts: Vec<Vec<(u32, usize)>> = Vec::with_capacity(nd);
    for d in 0..nd {
        let members = &user_members[d];
        let total = config.interactions_for(d);
        if members.is_empty() {
            return Err(Error::Config(format!("domain {d} has no users")));
        }
        let base = total / members.len();
        let extra = total % members.len();
        let per: Vec<(u32, usize)> = members
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, base + usize::from(i < extra)))
            .collect();
        if base < 2 {
            return Err(Error::Config(format!(
                "domain {d}: {total} interactions over {} users leaves fewer than 2 per user",
                members.len()
            )));
        }
        if base + 1 > item_members[d].len() {
            return Err(Error::Config(format!(
                "domain {d}: {} interactions per user exceed its {} items",
                base + usize::from(extra > 0),
                item_members[d].len()
            )));
        }
        counts.push(per);
    }

    // Cross-domain interest lists for users active in several domains.
    let mut rng = root.fork(3);
    let mut interest: Vec<Vec<u32>> = vec![Vec::new(); nu];
    if config.label_overlap > 0.0 {
        let mut need = vec![0usize; nu];
        let mut seen = vec![0usize; nu];
        for per in &counts {
            for &(u, k) in per {
                need[u as usize] = need[u as usize].max(k);
                seen[u as usize] += 1;
            }
        }
        let all: Vec<u32> = (0..nv as u32).collect();
        for u in 0..nu {
            if seen[u] < 2 {
                continue;
            }
            let logits: Vec<f64> = all
                .iter()
                .map(|&v| {
                    config.shared_weight
                        * dot(&truth.user_shared[u], &truth.item_shared[v as usize])
                        / config.temperature
                })
                .collect();
            interest[u] = sample_without_replacement(&mut rng, &all, &logits, need[u].min(nv));
        }
    }

    let mut rng = root.fork(4);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (d, per) in counts.iter().enumerate() {
        let pool = &item_members[d];
        let in_domain: BTreeSet<u32> = pool.iter().copied().collect();
        for &(u, k) in per {
            let copied = (config.label_overlap * k as f64).round() as usize;
            let mut chosen: Vec<u32> = interest[u as usize]
                .iter()
                .copied()
                .filter(|v| in_domain.contains(v))
                .take(copied)
                .collect();
            let taken: BTreeSet<u32> = chosen.iter().copied().collect();
            let rest: Vec<u32> = pool
                .iter()
                .copied()
                .filter(|v| !taken.contains(v))
                .collect();
            let logits: Vec<f64> = rest
                .iter()
                .map(|&v| truth.affinity(u as usize, v as usize, d) / config.temperature)
                .collect();
            chosen.extend(sample_without_replacement(
                &mut rng,
                &rest,
                &logits,
                k - chosen.len(),
            ));
            rng.shuffle(&mut chosen);
            let n_test = ((config.test_fraction * k as f64).ceil() as usize)
                .clamp(usize::from(config.test_fraction > 0.0), k - 1);
            let (tr, te) = chosen.split_at(k - n_test);
            train.extend(tr.iter().map(|&v| Sample::real(u, v, d as u32)));
            test.extend(te.iter().map(|&v| Sample::real(u, v, d as u32)));
        }
    }

    let mut rng = root.fork(5);
    let mut candidates = CandidateLists::new();
    let all_pos = super::positive_sets(&train);
    for ((u, d), items_te) in super::positive_sets(&test) {
        let excluded: BTreeSet<u32> = items_te
            .iter()
            .chain(all_pos.get(&(u, d)).into_iter().flatten())
            .copied()
            .collect();
        let want = config.candidates.max(items_te.len()).min(nv);
        let mut list: BTreeSet<u32> = items_te.clone();
        let available = nv - excluded.len();
        let negatives = (want - items_te.len()).min(available);
        while list.len() < items_te.len() + negatives {
            let v = rng.below(nv) as u32;
            if !excluded.contains(&v) {
                list.insert(v);
            }
        }
        candidates.insert((u, d), list.into_iter().collect());
    }

    let ds = Dataset {
        schema,
        users,
        items,
        train,
        test,
        candidates,
        truth: Some(truth),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            users: 60,
            items: 40,
            interactions: vec![300, 200, 150],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn zero_overlap_keeps_users_apart() {
        let cfg = SynthConfig {
            domains: 2,
            interactions: vec![200],
            user_overlap: 0.0,
            ..small()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.user_overlap(), 0.0);
    }

    #[test]
    fn quantize_bins() {
        assert_eq!(quantize(-5.0, 8).0, 0);
        assert_eq!(quantize(5.0, 8).0, 7);
        assert_eq!(quantize(0.1, 8), (4, 0.25));
    }

    #[test]
    fn truth_vectors_factorize_affinity() {
        let ds = generate_synthetic(&small()).unwrap();
        let t = ds.truth.unwrap();
        for (u, v, d) in [(0, 0, 0), (5, 17, 2), (59, 39, 1)] {
            let direct = t.affinity(u, v, d);
            let f = dot(&t.user_vector(u, d), &t.item_vector(v, d));
            assert!((direct - f).abs() < 1e-12);
        }
    }

    #[test]
    fn single_domain_fractional_overlap_is_infeasible() {
        let cfg = SynthConfig {
            domains: 1,
            interactions: vec![200],
            user_overlap: 0.5,
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_interactions_is_infeasible() {
        let cfg = SynthConfig {
            interactions: vec![10],
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn candidate_lists_hold_test_positives() {
        let ds = generate_synthetic(&small()).unwrap();
        let test = super::super::positive_sets(&ds.test);
        let train = super::super::positive_sets(&ds.train);
        assert_eq!(test.len(), ds.candidates.len());
        for (key, pos) in &test {
            let c = &ds.candidates[key];
            let seen = train.get(key).map_or(0, |t| t.len());
            assert_eq!(c.len(), 40 - seen);
            assert!(pos.iter().all(|v| c.contains(v)));
            assert!(train
                .get(key)
                .is_none_or(|t| c.iter().all(|v| !t.contains(v))));
        }
    }
}
