//! Feature schema: which categorical fields each tower consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Side;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Profile,
    Behavior,
    /// Item statistic that belongs to one domain.
    DomainStat,
    DomainIndicator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    /// Tower that reads the field; `None` only for the domain indicator.
    pub side: Option<Side>,
    pub kind: FieldKind,
    pub vocab: usize,
    pub dim: usize,
    /// Owning domain of a [`FieldKind::DomainStat`] field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<usize>,
}

impl FieldSpec {
    pub fn new(name: &str, side: Option<Side>, kind: FieldKind, vocab: usize, dim: usize) -> Self {
        FieldSpec {
            name: name.to_string(),
            side,
            kind,
            vocab,
            dim,
            domain: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub domains: usize,
    pub fields: Vec<FieldSpec>,
}

impl FeatureSchema {
    pub fn new(domains: usize, fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = FeatureSchema { domains, fields };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 {
            return Err(Error::Config("schema needs at least one domain".into()));
        }
        let indicators: Vec<&FieldSpec> = self
            .fields
            .iter()
            .filter(|f| f.kind == FieldKind::DomainIndicator)
            .collect();
        if indicators.len() != 1 {
            return Err(Error::Config(format!(
                "schema needs exactly one domain-indicator field, found {}",
                indicators.len()
            )));
        }
        if indicators[0].side.is_some() || indicators[0].vocab != self.domains {
            return Err(Error::Config(format!(
                "domain indicator `{}` must have no side and vocab {}",
                indicators[0].name, self.domains
            )));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Config(format!("duplicate field name `{}`", f.name)));
            }
            if f.vocab == 0 || f.dim == 0 {
                return Err(Error::Config(format!(
                    "field `{}` needs positive vocab and dim",
                    f.name
                )));
            }
            if f.kind != FieldKind::DomainIndicator && f.side.is_none() {
                return Err(Error::Config(format!("field `{}` has no side", f.name)));
            }
            if let Some(d) = f.domain {
                if d >= self.domains {
                    return Err(Error::Config(format!(
                        "field `{}` names domain {d}",
                        f.name
                    )));
                }
            }
        }
        for side in [Side::User, Side::Item] {
            if self.side_fields(side).next().is_none() {
                return Err(Error::Config(format!("schema has no {side} fields")));
            }
        }
        Ok(())
    }

    /// Fields read by one tower, in schema order.
    pub fn side_fields(&self, side: Side) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(move |f| f.side == Some(side))
    }

    pub fn side_names(&self, side: Side) -> Vec<String> {
        self.side_fields(side).map(|f| f.name.clone()).collect()
    }

    pub fn indicator(&self) -> &FieldSpec {
        self.fields
            .iter()
            .find(|f| f.kind == FieldKind::DomainIndicator)
            .expect("validated schema has an indicator")
    }

    /// Checks one feature row of `side` against the vocabularies.
    pub fn check_row(&self, side: Side, row: &[u32]) -> Result<()> {
        let fields: Vec<&FieldSpec> = self.side_fields(side).collect();
        if row.len() != fields.len() {
            return Err(Error::Data(format!(
                "{side} row has {} fields, schema has {}",
                row.len(),
                fields.len()
            )));
        }
        for (f, &id) in fields.iter().zip(row) {
            if id as usize >= f.vocab {
                return Err(Error::OutOfVocab {
                    field: f.name.clone(),
                    id,
                    vocab: f.vocab,
                });
            }
        }
        Ok(())
    }
}
