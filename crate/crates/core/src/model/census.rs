//! Structural parameter census of a model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Mlp, Side};

use super::tower::{Bottom, Tower};
use super::AdiModel;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerCensus {
    pub side: Side,
    /// `(name, weight and bias scalars)` of every bottom network.
    pub bottom: Vec<(String, usize)>,
    /// Trainable scalars in the whole tower, embeddings included.
    pub total: usize,
}

impl TowerCensus {
    pub fn bottom_networks(&self) -> usize {
        self.bottom.len()
    }

    pub fn bottom_scalars(&self) -> usize {
        self.bottom.iter().map(|b| b.1).sum()
    }

    /// Whether every bottom network has the same size.
    pub fn uniform_bottom(&self) -> bool {
        self.bottom.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub user: TowerCensus,
    pub item: TowerCensus,
    pub total: usize,
}

fn linear_scalars(mlp: &Mlp) -> usize {
    mlp.layers()
        .iter()
        .map(|l| l.fan_in * l.fan_out + l.fan_out)
        .sum()
}

fn tower_census(model: &AdiModel, tower: &Tower) -> TowerCensus {
    let p = tower.side.as_str();
    let bottom = match &tower.bottom {
        Bottom::Gated {
            shared, specific, ..
        } => shared
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("{p}.shared{i}"), linear_scalars(m)))
            .chain(
                specific
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (format!("{p}.spec{i}"), linear_scalars(m))),
            )
            .collect(),
        Bottom::Star(star) => {
            // The shared FC and each domain FC have identical shapes.
            let size = star.shared_scalars();
            std::iter::once((format!("{p}.star.shared"), size))
                .chain((0..star.domains()).map(|i| (format!("{p}.star.spec{i}"), size)))
                .collect()
        }
    };
    TowerCensus {
        side: tower.side,
        bottom,
        total: model.store.scalars_with_prefix(&format!("{p}.")),
    }
}

impl Census {
    pub fn of(model: &AdiModel) -> Self {
        Census {
            user: tower_census(model, &model.user),
            item: tower_census(model, &model.item),
            total: model.store.trainable_scalars(),
        }
    }

    pub fn bottom_networks(&self) -> usize {
        self.user.bottom_networks()
    }

    /// Relative difference of total trainable scalars.
    pub fn relative_gap(&self, other: &Census) -> f64 {
        let (a, b) = (self.total as f64, other.total as f64);
        (a - b).abs() / a.max(b)
    }

    /// Equal-size rule between compared models: the same number of bottom
    /// networks, each of the same size, and totals within `tolerance`.
    pub fn assert_comparable(&self, other: &Census, tolerance: f64, what: &str) -> Result<()> {
        for (a, b) in [(&self.user, &other.user), (&self.item, &other.item)] {
            if a.bottom_networks() != b.bottom_networks()
                || a.bottom_scalars() != b.bottom_scalars()
            {
                return Err(Error::Census(format!(
                    "{what}: {} bottom networks ({} scalars) vs {} ({} scalars) in the {} tower",
                    a.bottom_networks(),
                    a.bottom_scalars(),
                    b.bottom_networks(),
                    b.bottom_scalars(),
                    a.side
                )));
            }
            if !a.uniform_bottom() || !b.uniform_bottom() {
                return Err(Error::Census(format!(
                    "{what}: bottom networks differ in size"
                )));
            }
        }
        let gap = self.relative_gap(other);
        if gap > tolerance {
            return Err(Error::Census(format!(
                "{what}: total parameters {} vs {} differ by {:.3}% (limit {:.3}%)",
                self.total,
                other.total,
                100.0 * gap,
                100.0 * tolerance
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in [&self.user, &self.item] {
            writeln!(
                f,
                "{} tower: {} bottom networks x {} scalars, {} trainable",
                t.side,
                t.bottom_networks(),
                t.bottom.first().map_or(0, |b| b.1),
                t.total
            )?;
        }
        write!(f, "total trainable: {}", self.total)
    }
}
