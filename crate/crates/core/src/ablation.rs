//! Ablation sweeps: one axis of the configuration varied over a fixed base,
//! every variant trained and evaluated under the same seeds and data.
//!
//! Where the comparison is only meaningful at equal model size (ADI against
//! the all-shared expert baseline), the census of both models is checked
//! before any training starts.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{config_digest, evaluate, EvalOptions, EvalReport, AVERAGING};
use crate::layers::{AdaptationKind, FusionKind};
use crate::model::{baseline_config, AdiModel, Baseline, Census, ModelConfig, NormKind, Placement};
use crate::training::{fit_model, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// SUM, Network-Mul and CONCAT fusion.
    #[default]
    Fusion,
    /// The full model with self-training, adaptation and DSBN removed in turn.
    Components,
    /// One global, one per domain, or one per bottom network.
    SePlacement,
    /// ADI and the expert baseline with a growing number of shared networks.
    SharedCount,
    /// The comparison baselines and ADI.
    Baselines,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Fusion,
        Axis::Components,
        Axis::SePlacement,
        Axis::SharedCount,
        Axis::Baselines,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Fusion => "fusion",
            Axis::Components => "components",
            Axis::SePlacement => "se-placement",
            Axis::SharedCount => "shared-count",
            Axis::Baselines => "baselines",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: Axis,
    /// Shared-network counts swept by the shared-count axis.
    pub shared_counts: Vec<usize>,
    /// Largest relative gap in total trainable parameters allowed between
    /// models that must be of equal size. Only checked when both fuse to the
    /// same width; CONCAT's wider fusion output is a documented exception.
    pub census_tolerance: f64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            axis: Axis::Fusion,
            shared_counts: vec![1, 2, 3, 4, 5],
            census_tolerance: 0.005,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.axis == Axis::SharedCount
            && (self.shared_counts.is_empty() || self.shared_counts.contains(&0))
        {
            return Err(Error::Config(
                "shared_counts must be a nonempty list of positive counts".into(),
            ));
        }
        if self.census_tolerance.is_nan() || self.census_tolerance < 0.0 {
            return Err(Error::Config("census_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Variant {
    pub label: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Indices of two variants that must have equal size.
pub type CensusPair = (usize, usize);

/// Expands the axis into its variants over `base`. Indices of variant pairs
/// that must have equal size are returned alongside.
pub fn plan(
    spec: &AblationSpec,
    base: &ModelConfig,
    train: &TrainConfig,
) -> Result<(Vec<Variant>, Vec<CensusPair>)> {
    spec.validate()?;
    base.validate()?;
    let variant = |label: String, model: ModelConfig, train: TrainConfig| Variant {
        label,
        model,
        train,
    };
    let no_st = TrainConfig {
        self_training: false,
        ..train.clone()
    };
    let mut pairs = Vec::new();
    let variants = match spec.axis {
        Axis::Fusion => [FusionKind::Sum, FusionKind::NetworkMul, FusionKind::Concat]
            .into_iter()
            .map(|fusion| {
                let model = ModelConfig {
                    fusion,
                    shared_networks: if fusion == FusionKind::NetworkMul {
                        1
                    } else {
                        base.shared_networks
                    },
                    specific_networks: true,
                    ..base.clone()
                };
                variant(fusion.label().to_string(), model, train.clone())
            })
            .collect(),
        Axis::Components => {
            let full = ModelConfig {
                adaptation: match base.adaptation {
                    AdaptationKind::None => AdaptationKind::Se,
                    other => other,
                },
                norm: NormKind::DomainSpecific,
                ..base.clone()
            };
            let no_dial = ModelConfig {
                adaptation: AdaptationKind::None,
                placement: Placement::PerDomain,
                ..full.clone()
            };
            let no_dsbn = ModelConfig {
                norm: NormKind::Batch,
                ..no_dial.clone()
            };
            let name = match full.adaptation {
                AdaptationKind::Linear => "ADI-LT",
                AdaptationKind::VanillaAttention => "ADI-VA",
                _ => "ADI-SE",
            };
            vec![
                variant(
                    name.into(),
                    full.clone(),
                    TrainConfig {
                        self_training: true,
                        ..train.clone()
                    },
                ),
                variant("w/o ST".into(), full, no_st.clone()),
                variant("w/o ST&DIAL".into(), no_dial, no_st.clone()),
                variant("w/o ST&DIAL&DSBN".into(), no_dsbn, no_st),
            ]
        }
        Axis::SePlacement => [
            Placement::Global,
            Placement::PerDomain,
            Placement::PerNetwork,
        ]
        .into_iter()
        .map(|placement| {
            let model = ModelConfig {
                adaptation: AdaptationKind::Se,
                placement,
                ..base.clone()
            };
            let label = placement.label(model.domains, model.shared_networks);
            variant(label, model, train.clone())
        })
        .collect(),
        Axis::SharedCount => {
            let mut out = Vec::new();
            for &k in &spec.shared_counts {
                let adi = ModelConfig {
                    shared_networks: k,
                    specific_networks: true,
                    fusion: if base.fusion == FusionKind::NetworkMul {
                        FusionKind::Sum
                    } else {
                        base.fusion
                    },
                    ..base.clone()
                };
                let expert = baseline_config(Baseline::MmoeLike, &adi);
                let size = format!("{}+{k}", base.domains);
                pairs.push((out.len(), out.len() + 1));
                out.push(variant(format!("ADI ({size})"), adi, train.clone()));
                out.push(variant(
                    format!("MMoE-like ({size})"),
                    expert,
                    no_st.clone(),
                ));
            }
            out
        }
        Axis::Baselines => {
            let out: Vec<Variant> = Baseline::ALL
                .into_iter()
                .map(|b| {
                    let cfg = if b == Baseline::Adi {
                        train.clone()
                    } else {
                        no_st.clone()
                    };
                    variant(b.label().to_string(), baseline_config(b, base), cfg)
                })
                .collect();
            let at = |b: Baseline| {
                out.iter()
                    .position(|v| v.label == b.label())
                    .expect("listed")
            };
            pairs.push((at(Baseline::Adi), at(Baseline::MmoeLike)));
            out
        }
    };
    for v in &variants {
        v.model.validate()?;
        v.train.validate()?;
    }
    Ok((variants, pairs))
}

/// Fusion output width per unit of bottom width.
fn fused_multiple(cfg: &ModelConfig) -> usize {
    cfg.effective_fusion().map_or(1, |f| f.output_width(1))
}

/// The equal-size rule between two models: the same number of bottom
/// networks with the same sizes, and (when the fused widths agree) totals
/// within `tolerance`.
pub fn check_equal_size(
    a: (&ModelConfig, &Census),
    b: (&ModelConfig, &Census),
    tolerance: f64,
    what: &str,
) -> Result<()> {
    let tolerance = if fused_multiple(a.0) == fused_multiple(b.0) {
        tolerance
    } else {
        f64::INFINITY
    };
    a.1.assert_comparable(b.1, tolerance, what)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub digest: String,
    /// Census of the first seed's model, when it is a joint model.
    pub census: Option<Census>,
    /// One evaluation per seed, in seed order.
    pub reports: Vec<(u64, EvalReport)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub base_digest: String,
    pub seeds: Vec<u64>,
    pub eval: EvalOptions,
    pub domains: usize,
    pub rows: Vec<AblationRow>,
    /// Pairs whose equal size was verified, by row label.
    pub census_checked: Vec<(String, String)>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl AblationRow {
    /// Median over seeds of the recall in `domain` (or the domain mean when
    /// `domain` is `None`) at `n`.
    pub fn median_recall(&self, domain: Option<usize>, n: usize) -> f64 {
        let mut vals: Vec<f64> = self
            .reports
            .iter()
            .map(|(_, r)| cell(r, domain, n))
            .collect();
        median(&mut vals)
    }
}

fn cell(report: &EvalReport, domain: Option<usize>, n: usize) -> f64 {
    match domain {
        Some(d) => report.recall(d, n),
        None => report.mean_recall(n),
    }
    .unwrap_or(0.0)
}

impl AblationTable {
    pub fn labels(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }

    fn columns(&self) -> Vec<(Option<usize>, usize, String)> {
        let mut ns = self.eval.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        let mut cols = Vec::new();
        for n in ns {
            for d in 0..self.domains {
                cols.push((Some(d), n, format!("D{d}@{n}")));
            }
            cols.push((None, n, format!("mean@{n}")));
        }
        cols
    }

    /// Plain-text table: a commented header carrying every digest, one row
    /// per variant with the median over seeds, then the per-seed values.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(7)
            + 2;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# ablation: {}", self.axis);
        let _ = writeln!(out, "# seeds: {}", seeds.join(", "));
        let _ = writeln!(out, "# protocol: {}", self.eval.protocol.as_str());
        let _ = writeln!(
            out,
            "# exclude-train-positives: {}",
            self.eval.exclude_train_positives
        );
        let _ = writeln!(
            out,
            "# averaging: {AVERAGING}; table cells are medians over seeds"
        );
        let _ = writeln!(out, "# base-digest: {}", self.base_digest);
        for r in &self.rows {
            let _ = writeln!(out, "# digest: {} {}", r.label, r.digest);
        }
        for (a, b) in &self.census_checked {
            let _ = writeln!(out, "# census-equal: {a} = {b}");
        }
        for r in &self.rows {
            if let Some(c) = &r.census {
                let _ = writeln!(out, "# params: {} {}", r.label, c.total);
            }
        }
        let cols = self.columns();
        let _ = write!(out, "{:<width$}", "variant");
        for (_, _, name) in &cols {
            let _ = write!(out, "{name:>11}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$}", r.label);
            for (d, n, _) in &cols {
                let _ = write!(out, "{:>11.6}", r.median_recall(*d, *n));
            }
            out.push('\n');
        }
        out.push_str("\n# per-seed values\n");
        let _ = write!(out, "{:<width$}{:>6}", "variant", "seed");
        for (_, _, name) in &cols {
            let _ = write!(out, "{name:>11}");
        }
        out.push('\n');
        for r in &self.rows {
            for (seed, report) in &r.reports {
                let _ = write!(out, "{:<width$}{seed:>6}", r.label);
                for (d, n, _) in &cols {
                    let _ = write!(out, "{:>11.6}", cell(report, *d, *n));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Digest of everything that determines one variant's numbers.
fn variant_digest<D: Serialize>(
    v: &Variant,
    eval: &EvalOptions,
    seeds: &[u64],
    data: &D,
) -> Result<String> {
    config_digest(&serde_json::json!({
        "model": v.model,
        "train": v.train,
        "eval": eval,
        "seeds": seeds,
        "data": data,
    }))
}

/// Runs an ablation sweep. `data_for_seed` supplies the dataset for each
/// seed; `data_key` describes where the data comes from and enters every
/// digest. Every variant trains with its model and training seed set to the
/// run seed. Census checks run on every seed's data before any training.
pub fn run_ablation<D: Serialize>(
    spec: &AblationSpec,
    base: &ModelConfig,
    train: &TrainConfig,
    eval: &EvalOptions,
    seeds: &[u64],
    data_key: &D,
    data_for_seed: &mut dyn FnMut(u64) -> Result<Dataset>,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("an ablation needs at least one seed".into()));
    }
    eval.validate()?;
    let (variants, pairs) = plan(spec, base, train)?;
    let datasets = seeds
        .iter()
        .map(|&s| data_for_seed(s))
        .collect::<Result<Vec<_>>>()?;
    let domains = datasets[0].domains();

    let mut censuses: Vec<Option<Census>> = vec![None; variants.len()];
    for ds in &datasets {
        let built: Vec<Option<Census>> = variants
            .iter()
            .map(|v| {
                if v.model.separate_domains {
                    // Built only to validate the configuration against the data.
                    AdiModel::build(
                        &ModelConfig {
                            domains: 1,
                            ..v.model.clone()
                        },
                        &ds.schema,
                    )
                    .map(|_| None)
                } else {
                    AdiModel::build(&v.model, &ds.schema).map(|m| Some(m.census()))
                }
            })
            .collect::<Result<_>>()?;
        for &(a, b) in &pairs {
            let (ca, cb) = (
                built[a].as_ref().expect("joint"),
                built[b].as_ref().expect("joint"),
            );
            let what = format!("{} vs {}", variants[a].label, variants[b].label);
            check_equal_size(
                (&variants[a].model, ca),
                (&variants[b].model, cb),
                spec.census_tolerance,
                &what,
            )?;
        }
        if censuses.iter().all(Option::is_none) {
            censuses = built;
        }
    }

    let base_digest = config_digest(&serde_json::json!({
        "axis": spec,
        "model": base,
        "train": train,
        "eval": eval,
        "seeds": seeds,
        "data": data_key,
    }))?;
    let mut rows = Vec::with_capacity(variants.len());
    for (v, census) in variants.iter().zip(censuses) {
        let digest = variant_digest(v, eval, seeds, data_key)?;
        let mut reports = Vec::with_capacity(seeds.len());
        for (&seed, ds) in seeds.iter().zip(&datasets) {
            let model = ModelConfig {
                seed,
                ..v.model.clone()
            };
            let train = TrainConfig {
                seed,
                ..v.train.clone()
            };
            let (trained, _, _) = fit_model(&model, ds, &train, None)?;
            let mut report = evaluate(trained.embedder(), ds, eval)?;
            report.model = v.label.clone();
            report.census = trained.census();
            report.config_digest = digest.clone();
            reports.push((seed, report));
        }
        rows.push(AblationRow {
            label: v.label.clone(),
            digest,
            census,
            reports,
        });
    }
    Ok(AblationTable {
        axis: spec.axis,
        base_digest,
        seeds: seeds.to_vec(),
        eval: eval.clone(),
        domains,
        census_checked: pairs
            .iter()
            .map(|&(a, b)| (variants[a].label.clone(), variants[b].label.clone()))
            .collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(axis: Axis) -> Vec<String> {
        let spec = AblationSpec {
            axis,
            shared_counts: vec![1, 2],
            ..AblationSpec::default()
        };
        let (v, _) = plan(&spec, &ModelConfig::default(), &TrainConfig::default()).unwrap();
        v.into_iter().map(|v| v.label).collect()
    }

    #[test]
    fn row_sets() {
        assert_eq!(labels(Axis::Fusion), ["SUM", "Network-Mul", "CONCAT"]);
        assert_eq!(
            labels(Axis::Components),
            ["ADI-SE", "w/o ST", "w/o ST&DIAL", "w/o ST&DIAL&DSBN"]
        );
        assert_eq!(labels(Axis::SePlacement), ["1-SE", "3-SE", "4-SE"]);
        assert_eq!(
            labels(Axis::SharedCount),
            [
                "ADI (3+1)",
                "MMoE-like (3+1)",
                "ADI (3+2)",
                "MMoE-like (3+2)"
            ]
        );
        assert_eq!(
            labels(Axis::Baselines),
            ["DNN-Single", "DNN", "Shared-Bottom", "MMoE-like", "ADI"]
        );
    }

    #[test]
    fn component_rows_remove_one_piece_at_a_time() {
        let spec = AblationSpec {
            axis: Axis::Components,
            ..AblationSpec::default()
        };
        let (v, pairs) = plan(&spec, &ModelConfig::default(), &TrainConfig::default()).unwrap();
        assert!(pairs.is_empty());
        assert!(v[0].train.self_training);
        assert!(!v[1].train.self_training);
        assert_eq!(v[1].model, v[0].model);
        assert_eq!(v[2].model.adaptation, AdaptationKind::None);
        assert_eq!(v[2].model.norm, NormKind::DomainSpecific);
        assert_eq!(v[3].model.norm, NormKind::Batch);
    }

    #[test]
    fn axis_names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(a.as_str().parse::<Axis>().unwrap(), a);
        }
        assert!("tables".parse::<Axis>().is_err());
    }

    #[test]
    fn median_of_even_and_odd_counts() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
