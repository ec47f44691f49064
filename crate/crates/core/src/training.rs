//! Mini-batch training with sampled softmax, and self-training with
//! pseudo-labels transferred across domains.
//!
//! One iteration is a full sweep over the domain-grouped batches of the
//! training data (plus the current pseudo-label pool when self-training);
//! an epoch is `iterations_per_epoch` such sweeps.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{batch_by_domain, Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::layers::Side;
use crate::model::{single_domain_schema, AdiModel, ModelConfig, PerDomainModels, TrainedModel};
use crate::objective::{sampled_softmax_rows, weighted_mean, NegativeSampler, SamplerKind};
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::{Mode, Session};
use crate::rng::{RngSnapshot, RngState};
use crate::tensor::Tensor;

/// Slack subtracted before rounding pool quotas up, so that a product such
/// as `0.16000000000000003 * 100` counts as 16.
const QUOTA_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regenerate {
    /// Rebuild the pseudo-label pool before every iteration.
    #[default]
    Iteration,
    /// Rebuild it once, before the first iteration of each epoch.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub negatives: usize,
    pub sampler: SamplerKind,
    pub self_training: bool,
    /// Initial pseudo-label portion.
    pub p0: f64,
    /// Portion added after every iteration.
    pub delta_p: f64,
    pub p_max: f64,
    /// Loss weight of pseudo positives relative to real ones.
    pub pseudo_weight: f64,
    pub regenerate: Regenerate,
    /// Seed of the shuffling and negative-sampling streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            iterations_per_epoch: 1,
            batch_size: 128,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            negatives: 20,
            sampler: SamplerKind::Frequency,
            self_training: false,
            p0: 0.1,
            delta_p: 0.02,
            p_max: 0.5,
            pseudo_weight: 1.0,
            regenerate: Regenerate::Iteration,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations_per_epoch == 0 {
            return bad("iterations_per_epoch must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be at least 2", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if !(0.0 <= self.p0 && self.p0 <= self.p_max && self.p_max <= 1.0) {
            return bad(format!(
                "pseudo-label schedule needs 0 <= p0 <= p_max <= 1 (p0 {}, p_max {})",
                self.p0, self.p_max
            ));
        }
        if !(self.delta_p >= 0.0 && self.delta_p.is_finite()) {
            return bad(format!("delta_p {} must be non-negative", self.delta_p));
        }
        if !(self.pseudo_weight >= 0.0 && self.pseudo_weight.is_finite()) {
            return bad(format!(
                "pseudo_weight {} must be non-negative",
                self.pseudo_weight
            ));
        }
        Ok(())
    }

    /// Pseudo-label portion at global iteration `t` (0-based).
    pub fn pool_fraction(&self, t: usize) -> f64 {
        (self.p0 + t as f64 * self.delta_p).min(self.p_max)
    }
}

/// Number of pseudo positives kept out of `count` scored samples.
pub fn pool_quota(fraction: f64, count: usize) -> usize {
    let q = (fraction * count as f64 - QUOTA_SLACK).ceil().max(0.0) as usize;
    q.min(count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoRecord {
    pub user: u32,
    pub item: u32,
    pub source: u32,
    pub target: u32,
    /// Score of the pair under the target domain.
    pub score: f64,
    /// Global iteration that generated the record.
    pub created: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelPool {
    pub fraction: f64,
    pub records: Vec<PseudoRecord>,
}

impl PseudoLabelPool {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Pool size per `(source, target)` pair.
    pub fn pair_sizes(&self) -> BTreeMap<(u32, u32), usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry((r.source, r.target)).or_insert(0) += 1;
        }
        out
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.records.iter().map(|r| Sample {
            user: r.user,
            item: r.item,
            domain: r.target,
            label: Label::Pseudo,
        })
    }
}

/// Scores every real training positive of each domain `i` under every other
/// domain `j` with the frozen model, and keeps the top `fraction` of each
/// `(i, j)` pair. Ties go to the smaller item id, then the smaller user id.
pub fn generate_pseudo_labels(
    model: &AdiModel,
    ds: &Dataset,
    fraction: f64,
    created: usize,
) -> Result<PseudoLabelPool> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "pseudo-label portion {fraction} outside [0, 1]"
        )));
    }
    let domains = ds.domains();
    let mut pool = PseudoLabelPool {
        fraction,
        records: Vec::new(),
    };
    if domains < 2 || fraction == 0.0 {
        return Ok(pool);
    }
    let by_domain = ds.train_by_domain();
    for (source, positives) in by_domain.iter().enumerate() {
        let positives: Vec<&Sample> = positives
            .iter()
            .filter(|s| s.label == Label::Real)
            .collect();
        let quota = pool_quota(fraction, positives.len());
        if quota == 0 {
            continue;
        }
        let users = distinct(positives.iter().map(|s| s.user));
        let items = distinct(positives.iter().map(|s| s.item));
        for target in (0..domains).filter(|&j| j != source) {
            let user_emb = model.embed_rows(Side::User, target, &ds.user_rows(&users))?;
            let item_emb = model.embed_rows(Side::Item, target, &ds.item_rows(&items))?;
            let mut scored: Vec<(f64, u32, u32)> = positives
                .iter()
                .map(|s| {
                    let u = users.binary_search(&s.user).expect("collected above");
                    let v = items.binary_search(&s.item).expect("collected above");
                    let score = user_emb
                        .row(u)
                        .iter()
                        .zip(item_emb.row(v))
                        .map(|(a, b)| a * b)
                        .sum();
                    (score, s.item, s.user)
                })
                .collect();
            if scored.iter().any(|x| !x.0.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "pseudo-label scores for domain {source} under domain {target}"
                )));
            }
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            pool.records
                .extend(
                    scored
                        .into_iter()
                        .take(quota)
                        .map(|(score, item, user)| PseudoRecord {
                            user,
                            item,
                            source: source as u32,
                            target: target as u32,
                            score,
                            created,
                        }),
                );
        }
    }
    Ok(pool)
}

fn distinct(ids: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut v: Vec<u32> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// One line of the loss trace: the mean losses of one domain over one
/// iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub domain: usize,
    /// Mean loss over the real positives of the domain.
    pub loss: f64,
    /// Mean loss over the pseudo positives, when there were any.
    pub pseudo_loss: Option<f64>,
    /// Total pseudo-label pool size for the iteration.
    pub pool_size: usize,
    pub pool_fraction: f64,
    pub batches: usize,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: Optimizer,
    pub shuffle_rng: RngSnapshot,
    pub negative_rng: RngSnapshot,
    pub epochs_done: usize,
    pub iterations_done: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRecord>,
    /// Pool size at each iteration run.
    pub pool_sizes: Vec<usize>,
    pub state: TrainState,
}

/// Plain training on real positives only.
pub fn train(model: &mut AdiModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(model, ds, cfg, false, None)
}

/// Self-training: real positives plus a pseudo-label pool regenerated from
/// the frozen current model, with a rising portion.
pub fn self_train(model: &mut AdiModel, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(model, ds, cfg, true, None)
}

/// Runs [`train`] or [`self_train`] as selected by `cfg.self_training`,
/// optionally continuing from a saved state. `cfg.epochs` is the total
/// epoch count, including epochs already done.
pub fn fit(
    model: &mut AdiModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    run(model, ds, cfg, cfg.self_training, resume)
}

fn run(
    model: &mut AdiModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    self_training: bool,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.domains() != model.domains() {
        return Err(Error::Config(format!(
            "dataset has {} domains, model has {}",
            ds.domains(),
            model.domains()
        )));
    }
    for (d, samples) in ds.train_by_domain().iter().enumerate() {
        if samples.len() < 2 {
            return Err(Error::Data(format!(
                "domain {d} has {} training samples; at least 2 are needed",
                samples.len()
            )));
        }
    }
    let corpus = ds.items.len();
    if cfg.negatives >= corpus {
        return Err(Error::Config(format!(
            "{} negatives need a corpus larger than {corpus} items",
            cfg.negatives
        )));
    }
    let samplers = NegativeSampler::per_domain(cfg.sampler, corpus, ds.domains(), &ds.train)?;
    let root = RngState::new(cfg.seed);
    let mut state = resume.unwrap_or_else(|| TrainState {
        optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate),
        shuffle_rng: root.fork(1).snapshot(),
        negative_rng: root.fork(2).snapshot(),
        epochs_done: 0,
        iterations_done: 0,
    });
    state.optimizer.learning_rate = cfg.learning_rate;
    let mut shuffle_rng = RngState::restore(state.shuffle_rng);
    let mut negative_rng = RngState::restore(state.negative_rng);

    let mut trace = Vec::new();
    let mut pool_sizes = Vec::new();
    let mut pool = PseudoLabelPool::default();
    for epoch in state.epochs_done..cfg.epochs {
        for it in 0..cfg.iterations_per_epoch {
            let t = state.iterations_done;
            let fraction = if self_training {
                cfg.pool_fraction(t)
            } else {
                0.0
            };
            if self_training && (cfg.regenerate == Regenerate::Iteration || it == 0) {
                pool = generate_pseudo_labels(model, ds, fraction, t)?;
            }
            let samples: Vec<Sample> = ds.train.iter().copied().chain(pool.samples()).collect();
            let batches =
                batch_by_domain(&samples, ds.domains(), cfg.batch_size, 2, &mut shuffle_rng)?;

            let mut sums = vec![Sums::default(); ds.domains()];
            for batch in &batches {
                let rows: Vec<Sample> = batch.indices.iter().map(|&i| samples[i]).collect();
                let losses = step(
                    model,
                    ds,
                    cfg,
                    &mut state.optimizer,
                    &samplers[batch.domain],
                    &mut negative_rng,
                    batch.domain,
                    &rows,
                )
                .map_err(|e| diverged(e, epoch, t, batch.domain))?;
                let acc = &mut sums[batch.domain];
                acc.batches += 1;
                for (s, l) in rows.iter().zip(losses) {
                    match s.label {
                        Label::Real => {
                            acc.real += l;
                            acc.real_n += 1;
                        }
                        Label::Pseudo => {
                            acc.pseudo += l;
                            acc.pseudo_n += 1;
                        }
                    }
                }
            }
            for (domain, acc) in sums.iter().enumerate() {
                trace.push(TraceRecord {
                    epoch,
                    iteration: t,
                    domain,
                    loss: acc.real / acc.real_n.max(1) as f64,
                    pseudo_loss: (acc.pseudo_n > 0).then(|| acc.pseudo / acc.pseudo_n as f64),
                    pool_size: pool.len(),
                    pool_fraction: fraction,
                    batches: acc.batches,
                });
            }
            pool_sizes.push(pool.len());
            state.iterations_done += 1;
        }
        state.epochs_done = epoch + 1;
    }
    state.shuffle_rng = shuffle_rng.snapshot();
    state.negative_rng = negative_rng.snapshot();
    Ok(TrainOutcome {
        trace,
        pool_sizes,
        state,
    })
}

#[derive(Clone, Default)]
struct Sums {
    real: f64,
    real_n: usize,
    pseudo: f64,
    pseudo_n: usize,
    batches: usize,
}

fn diverged(e: Error, epoch: usize, iteration: usize, domain: usize) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged {
            epoch,
            iteration,
            domain,
            detail,
        },
        other => other,
    }
}

/// One optimizer step on a single-domain batch; returns per-row losses.
#[allow(clippy::too_many_arguments)]
fn step(
    model: &mut AdiModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
    sampler: &NegativeSampler,
    rng: &mut RngState,
    domain: usize,
    rows: &[Sample],
) -> Result<Vec<f64>> {
    let width = cfg.negatives + 1;
    let batch = rows.len();
    let users: Vec<u32> = rows.iter().map(|s| s.user).collect();
    let mut items = Vec::with_capacity(batch * width);
    let mut log_q = Vec::with_capacity(batch * width);
    for s in rows {
        items.push(s.item);
        items.extend(sampler.sample(s.item, cfg.negatives, rng)?);
    }
    for &v in &items {
        log_q.push(sampler.log_q(v));
    }
    let log_q = Tensor::matrix(batch, width, log_q)?;
    let weights: Vec<f64> = rows
        .iter()
        .map(|s| match s.label {
            Label::Real => 1.0,
            Label::Pseudo => cfg.pseudo_weight,
        })
        .collect();

    let (grads, buffers, losses) = {
        let mut s = Session::new(&model.store, Mode::Train);
        let user = model.tower_forward(&mut s, Side::User, &ds.user_rows(&users), domain)?;
        let item = model.tower_forward(&mut s, Side::Item, &ds.item_rows(&items), domain)?;
        let item_t = s.g.transpose(item.embedding)?;
        let all = s.g.matmul(user.embedding, item_t)?;
        let idx: Vec<usize> = (0..batch)
            .flat_map(|r| (0..width).map(move |j| r * width + j))
            .collect();
        let logits = s.g.pick_cols(all, &idx, width)?;
        let logit_values = s.g.value(logits);
        if !logit_values.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite scores in a batch of {batch} rows x {width} items"
            )));
        }
        let per_row = sampled_softmax_rows(&mut s.g, logits, &log_q)?;
        let loss = weighted_mean(&mut s.g, per_row, &weights)?;
        let value = s.g.value(loss).data()[0];
        if !value.is_finite() {
            let max_abs =
                s.g.value(logits)
                    .data()
                    .iter()
                    .fold(0.0f64, |m, x| m.max(x.abs()));
            return Err(Error::NonFinite(format!(
                "loss {value} on a batch of {batch} rows, max |score| {max_abs:.3e}"
            )));
        }
        let losses = s.g.value(per_row).data().to_vec();
        let grads = s.param_grads(loss)?;
        (grads, s.take_buffer_updates(), losses)
    };
    optimizer.apply(&mut model.store, &grads)?;
    for (id, value) in buffers {
        model.store.set(id, value)?;
    }
    Ok(losses)
}

/// The dataset restricted to one domain, renumbered as domain 0 of a
/// single-domain schema.
pub fn domain_slice(ds: &Dataset, domain: usize) -> Dataset {
    let keep = |s: &Sample| s.domain as usize == domain;
    let relabel = |s: &Sample| Sample { domain: 0, ..*s };
    Dataset {
        schema: single_domain_schema(&ds.schema),
        users: ds.users.clone(),
        items: ds.items.clone(),
        train: ds.train.iter().filter(|s| keep(s)).map(relabel).collect(),
        test: ds.test.iter().filter(|s| keep(s)).map(relabel).collect(),
        candidates: ds
            .candidates
            .iter()
            .filter(|((_, d), _)| *d as usize == domain)
            .map(|(&(u, _), c)| ((u, 0), c.clone()))
            .collect(),
        truth: None,
    }
}

/// Trains one independent model per domain, each on that domain's data
/// only. Traces carry the original domain index.
pub fn train_per_domain(
    config: &ModelConfig,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(PerDomainModels, Vec<TraceRecord>)> {
    let mut models = Vec::with_capacity(ds.domains());
    let mut trace = Vec::new();
    for d in 0..ds.domains() {
        let slice = domain_slice(ds, d);
        let member = ModelConfig {
            domains: 1,
            separate_domains: false,
            ..config.clone()
        };
        let mut model = AdiModel::build(&member, &slice.schema)?;
        let out = train(&mut model, &slice, cfg)?;
        trace.extend(
            out.trace
                .into_iter()
                .map(|r| TraceRecord { domain: d, ..r }),
        );
        models.push(model);
    }
    Ok((PerDomainModels { models }, trace))
}

/// Builds and trains the model described by `config`: one joint model, or
/// one model per domain when `config.separate_domains` is set. Resuming is
/// only defined for joint models.
pub fn fit_model(
    config: &ModelConfig,
    ds: &Dataset,
    cfg: &TrainConfig,
    resume: Option<(AdiModel, TrainState)>,
) -> Result<(TrainedModel, Vec<TraceRecord>, Option<TrainState>)> {
    if config.separate_domains {
        if resume.is_some() {
            return Err(Error::Config(
                "separately trained domains cannot be resumed".into(),
            ));
        }
        if cfg.self_training {
            return Err(Error::Config(
                "self-training needs a joint multi-domain model, not separate per-domain models"
                    .into(),
            ));
        }
        let (models, trace) = train_per_domain(config, ds, cfg)?;
        return Ok((TrainedModel::PerDomain(models), trace, None));
    }
    let (mut model, state) = match resume {
        Some((model, state)) => (model, Some(state)),
        None => (AdiModel::build(config, &ds.schema)?, None),
    };
    let out = fit(&mut model, ds, cfg, state)?;
    Ok((TrainedModel::Joint(model), out.trace, Some(out.state)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::layers::FusionKind;

    fn tiny() -> Dataset {
        generate_synthetic(&SynthConfig {
            domains: 2,
            users: 20,
            items: 50,
            interactions: vec![120, 80],
            candidates: 20,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn model(ds: &Dataset) -> AdiModel {
        let cfg = ModelConfig {
            domains: 2,
            bottom_widths: vec![16, 8],
            forward_widths: vec![8],
            fusion: FusionKind::Sum,
            ..ModelConfig::default()
        };
        AdiModel::build(&cfg, &ds.schema).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            negatives: 5,
            ..TrainConfig::default()
        }
    }

    fn trainable(m: &AdiModel) -> Vec<(String, Vec<u64>)> {
        m.store
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| {
                (
                    e.name.clone(),
                    e.tensor.data().iter().map(|x| x.to_bits()).collect(),
                )
            })
            .collect()
    }

    fn mean_loss(trace: &[TraceRecord], iteration: usize) -> f64 {
        let rows: Vec<_> = trace.iter().filter(|r| r.iteration == iteration).collect();
        rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64
    }

    #[test]
    fn tiny_run_reduces_loss() {
        let ds = tiny();
        let mut m = model(&ds);
        let cfg = TrainConfig {
            epochs: 30,
            ..quick()
        };
        let out = train(&mut m, &ds, &cfg).unwrap();
        assert_eq!(out.trace.len(), 60);
        assert!(mean_loss(&out.trace, 29) < mean_loss(&out.trace, 0));
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let ds = tiny();
        let mut m = model(&ds);
        let before = trainable(&m);
        train(
            &mut m,
            &ds,
            &TrainConfig {
                learning_rate: 0.0,
                ..quick()
            },
        )
        .unwrap();
        assert_eq!(trainable(&m), before);
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let ds = tiny();
        let (mut a, mut b) = (model(&ds), model(&ds));
        let ta = train(&mut a, &ds, &quick()).unwrap();
        let tb = train(&mut b, &ds, &quick()).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let ds = tiny();
        let cfg = TrainConfig {
            self_training: true,
            ..quick()
        };
        let mut full = model(&ds);
        let whole = fit(&mut full, &ds, &cfg, None).unwrap();

        let mut part = model(&ds);
        let first = fit(
            &mut part,
            &ds,
            &TrainConfig {
                epochs: 1,
                ..cfg.clone()
            },
            None,
        )
        .unwrap();
        let rest = fit(&mut part, &ds, &cfg, Some(first.state)).unwrap();
        let joined: Vec<_> = first.trace.into_iter().chain(rest.trace).collect();
        assert_eq!(joined, whole.trace);
        assert_eq!(part.store, full.store);
    }

    #[test]
    fn zeroed_schedule_matches_plain_training() {
        let ds = tiny();
        let (mut a, mut b) = (model(&ds), model(&ds));
        let plain = train(&mut a, &ds, &quick()).unwrap();
        let zero = TrainConfig {
            p0: 0.0,
            delta_p: 0.0,
            p_max: 0.0,
            ..quick()
        };
        let st = self_train(&mut b, &ds, &zero).unwrap();
        assert_eq!(plain.trace, st.trace);
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn schedule_and_quota() {
        let cfg = TrainConfig {
            p0: 0.1,
            delta_p: 0.05,
            p_max: 0.5,
            ..TrainConfig::default()
        };
        let got: Vec<f64> = (0..12).map(|t| cfg.pool_fraction(t)).collect();
        let want = [
            0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.5, 0.5, 0.5,
        ];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert_eq!(pool_quota(0.2, 10), 2);
        assert_eq!(pool_quota(0.16000000000000003, 100), 16);
        assert_eq!(pool_quota(0.161, 100), 17);
        assert_eq!(pool_quota(0.0, 100), 0);
        assert_eq!(pool_quota(1.0, 7), 7);
    }

    #[test]
    fn pseudo_labels_trivial_cases() {
        let ds = tiny();
        let m = model(&ds);
        assert!(generate_pseudo_labels(&m, &ds, 0.0, 0).unwrap().is_empty());
        let one = domain_slice(&ds, 0);
        let cfg = ModelConfig {
            domains: 1,
            ..m.config.clone()
        };
        let single = AdiModel::build(&cfg, &one.schema).unwrap();
        assert!(generate_pseudo_labels(&single, &one, 0.5, 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn pseudo_labels_are_the_top_scoring_pairs() {
        let mut ds = tiny();
        // Ten domain-0 positives and the unchanged domain-1 data.
        let d0: Vec<Sample> = ds
            .train
            .iter()
            .filter(|s| s.domain == 0)
            .take(10)
            .copied()
            .collect();
        ds.train.retain(|s| s.domain == 1);
        ds.train.extend(&d0);
        let m = model(&ds);
        let before = m.store.checksum();
        let pool = generate_pseudo_labels(&m, &ds, 0.2, 4).unwrap();
        assert_eq!(m.store.checksum(), before);

        // Exhaustive oracle: score each pair alone under domain 1.
        let mut scored: Vec<(f64, u32, u32)> = d0
            .iter()
            .map(|s| {
                let u = m
                    .embed_rows(Side::User, 1, &ds.user_rows(&[s.user]))
                    .unwrap();
                let v = m
                    .embed_rows(Side::Item, 1, &ds.item_rows(&[s.item]))
                    .unwrap();
                let score = u.row(0).iter().zip(v.row(0)).map(|(a, b)| a * b).sum();
                (score, s.item, s.user)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let from_d0: Vec<_> = pool.records.iter().filter(|r| r.source == 0).collect();
        assert_eq!(from_d0.len(), 2);
        for (r, want) in from_d0.iter().zip(&scored) {
            assert_eq!(
                (r.item, r.user, r.target, r.created),
                (want.1, want.2, 1, 4)
            );
            assert!((r.score - want.0).abs() < 1e-12);
        }
        assert!(pool.records.iter().all(|r| r.source != r.target));
        let d1 = ds.train.iter().filter(|s| s.domain == 1).count();
        assert_eq!(pool.pair_sizes()[&(1, 0)], pool_quota(0.2, d1));
    }

    #[test]
    fn pool_sizes_follow_the_schedule() {
        let ds = tiny();
        let mut m = model(&ds);
        let cfg = TrainConfig {
            epochs: 2,
            iterations_per_epoch: 2,
            self_training: true,
            p0: 0.1,
            delta_p: 0.15,
            p_max: 0.35,
            ..quick()
        };
        let out = self_train(&mut m, &ds, &cfg).unwrap();
        let counts: Vec<usize> = ds.train_by_domain().iter().map(Vec::len).collect();
        let expected: Vec<usize> = [0.1, 0.25, 0.35, 0.35]
            .iter()
            .map(|&p| pool_quota(p, counts[0]) + pool_quota(p, counts[1]))
            .collect();
        assert_eq!(out.pool_sizes, expected);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        for cfg in [
            TrainConfig {
                p0: 0.6,
                ..TrainConfig::default()
            },
            TrainConfig {
                p_max: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                delta_p: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let ds = tiny();
        let mut m = model(&ds);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            optimizer: OptimizerKind::Sgd,
            ..quick()
        };
        match train(&mut m, &ds, &cfg) {
            Err(Error::Diverged { detail, .. }) => assert!(!detail.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn per_domain_models_see_only_their_domain() {
        let ds = tiny();
        let slice = domain_slice(&ds, 1);
        assert!(slice.train.iter().all(|s| s.domain == 0));
        assert_eq!(
            slice.train.len(),
            ds.train.iter().filter(|s| s.domain == 1).count()
        );
        let base =
            crate::model::baseline_config(crate::model::Baseline::DnnSingle, &model(&ds).config);
        let (ensemble, trace) = train_per_domain(
            &base,
            &ds,
            &TrainConfig {
                epochs: 1,
                ..quick()
            },
        )
        .unwrap();
        assert_eq!(ensemble.models.len(), 2);
        assert_eq!(
            trace.iter().map(|r| r.domain).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }
}
