//! Tab-separated interaction files with a vocabulary sidecar.
//!
//! A dataset directory holds:
//!
//! * `schema.json`: the [`FeatureSchema`];
//! * `vocab.json` (optional): per field, raw token to dense id;
//! * `train.tsv`, `test.tsv`: header `user_id item_id domain_id label`
//!   followed by one column per user-side then item-side schema field (the
//!   `user_id` and `item_id` fields are read from the leading columns);
//! * `users.tsv`, `items.tsv` (optional): the id column followed by that
//!   side's feature columns, one row per catalog entry, so entries without
//!   interactions keep their features;
//! * `candidates.tsv` (optional): `user_id domain_id item_id`, one row per
//!   candidate.
//!
//! A `rating` column may replace `label`; only rows rated 5 become positives.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Side;

use super::{CandidateLists, Dataset, FeatureSchema, Label, Sample};

pub const USER_COLUMN: &str = "user_id";
pub const ITEM_COLUMN: &str = "item_id";
pub const DOMAIN_COLUMN: &str = "domain_id";

/// Token to dense id, per field. Ids are assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    fields: BTreeMap<String, FieldVocab>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct FieldVocab {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl FieldVocab {
    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        id
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let view: BTreeMap<&str, BTreeMap<&str, u32>> = self
            .fields
            .iter()
            .map(|(name, v)| {
                (
                    name.as_str(),
                    v.ids.iter().map(|(t, &id)| (t.as_str(), id)).collect(),
                )
            })
            .collect();
        view.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let view = BTreeMap::<String, BTreeMap<String, u32>>::deserialize(de)?;
        let mut fields = BTreeMap::new();
        for (name, map) in view {
            let mut tokens = vec![None; map.len()];
            for (token, &id) in &map {
                match tokens.get_mut(id as usize) {
                    Some(slot @ None) => *slot = Some(token.clone()),
                    _ => {
                        return Err(serde::de::Error::custom(format!(
                            "vocabulary for `{name}` is not a dense id range"
                        )))
                    }
                }
            }
            fields.insert(
                name,
                FieldVocab {
                    ids: map.into_iter().collect(),
                    tokens: tokens.into_iter().map(Option::unwrap).collect(),
                },
            );
        }
        Ok(Vocabulary { fields })
    }
}

impl Vocabulary {
    /// Vocabulary whose tokens are the decimal ids `0..vocab` of each field.
    pub fn identity(schema: &FeatureSchema) -> Self {
        let mut v = Vocabulary::default();
        for f in schema.fields.iter().filter(|f| f.side.is_some()) {
            let fv = v.fields.entry(f.name.clone()).or_default();
            for id in 0..f.vocab {
                fv.intern(&id.to_string());
            }
        }
        v
    }

    pub fn intern(&mut self, field: &str, token: &str) -> u32 {
        self.fields
            .entry(field.to_string())
            .or_default()
            .intern(token)
    }

    pub fn token(&self, field: &str, id: u32) -> Option<&str> {
        self.fields
            .get(field)?
            .tokens
            .get(id as usize)
            .map(String::as_str)
    }

    pub fn len(&self, field: &str) -> usize {
        self.fields.get(field).map_or(0, |v| v.tokens.len())
    }

    pub fn is_empty(&self) -> bool {
        self.fields.values().all(|v| v.tokens.is_empty())
    }
}

/// Interactions parsed from one TSV file plus the feature rows it revealed.
#[derive(Clone, Debug, Default)]
pub struct ParsedFile {
    pub samples: Vec<Sample>,
    pub users: BTreeMap<u32, Vec<u32>>,
    pub items: BTreeMap<u32, Vec<u32>>,
    /// Rows dropped because their rating was not 5.
    pub dropped: usize,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse {
            line: p.line() as usize,
            message: format!("{}: {e}", path.display()),
        },
        None => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("{}: {other:?}", path.display())),
        },
    }
}

/// Side-specific feature columns expected after the fixed columns.
fn feature_columns(schema: &FeatureSchema) -> Vec<(Side, usize, String)> {
    let mut cols = Vec::new();
    for side in [Side::User, Side::Item] {
        for (i, f) in schema.side_fields(side).enumerate() {
            if !is_id_field(side, &f.name) {
                cols.push((side, i, f.name.clone()));
            }
        }
    }
    cols
}

fn is_id_field(side: Side, name: &str) -> bool {
    matches!(
        (side, name),
        (Side::User, USER_COLUMN) | (Side::Item, ITEM_COLUMN)
    )
}

/// Parses one interaction file against `schema`, interning raw tokens.
pub fn load_tsv(path: &Path, schema: &FeatureSchema, vocab: &mut Vocabulary) -> Result<ParsedFile> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ucol), Some(icol)) = (col(USER_COLUMN), col(ITEM_COLUMN)) else {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "{}: header needs `{USER_COLUMN}` and `{ITEM_COLUMN}`",
                path.display()
            ),
        });
    };
    let Some(dcol) = col(DOMAIN_COLUMN) else {
        return Err(Error::Parse {
            line: 1,
            message: format!("{}: missing `{DOMAIN_COLUMN}` column", path.display()),
        });
    };
    let label_col = col("label");
    let rating_col = col("rating");
    let features = feature_columns(schema);
    let mut feature_idx = Vec::with_capacity(features.len());
    for (side, slot, name) in &features {
        match col(name) {
            Some(c) => feature_idx.push((*side, *slot, name.clone(), c)),
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("{}: header lacks schema field `{name}`", path.display()),
                })
            }
        }
    }
    let user_width = schema.side_fields(Side::User).count();
    let item_width = schema.side_fields(Side::Item).count();
    let user_id_slot = schema
        .side_fields(Side::User)
        .position(|f| f.name == USER_COLUMN);
    let item_id_slot = schema
        .side_fields(Side::Item)
        .position(|f| f.name == ITEM_COLUMN);

    let mut out = ParsedFile::default();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        let domain: u32 = record[dcol].trim().parse().map_err(|_| {
            parse_err(format!(
                "domain `{}` is not a non-negative integer",
                &record[dcol]
            ))
        })?;
        if domain as usize >= schema.domains {
            return Err(parse_err(format!(
                "domain {domain} out of range for {} domains",
                schema.domains
            )));
        }
        let label = match (label_col, rating_col) {
            (Some(c), _) => match &record[c] {
                "real" => Some(Label::Real),
                "pseudo" => Some(Label::Pseudo),
                other => {
                    return Err(parse_err(format!(
                        "label `{other}` is neither `real` nor `pseudo`"
                    )))
                }
            },
            (None, Some(c)) => {
                let r: f64 = record[c]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("rating `{}` is not a number", &record[c])))?;
                (r == 5.0).then_some(Label::Real)
            }
            (None, None) => Some(Label::Real),
        };
        let user = vocab.intern(USER_COLUMN, &record[ucol]);
        let item = vocab.intern(ITEM_COLUMN, &record[icol]);

        let mut urow = vec![0u32; user_width];
        let mut irow = vec![0u32; item_width];
        if let Some(s) = user_id_slot {
            urow[s] = user;
        }
        if let Some(s) = item_id_slot {
            irow[s] = item;
        }
        for (side, slot, name, c) in &feature_idx {
            let id = vocab.intern(name, &record[*c]);
            match side {
                Side::User => urow[*slot] = id,
                Side::Item => irow[*slot] = id,
            }
        }
        for (catalog, id, row, what) in [
            (&mut out.users, user, urow, "user"),
            (&mut out.items, item, irow, "item"),
        ] {
            match catalog.get(&id) {
                Some(prev) if *prev != row => {
                    return Err(parse_err(format!(
                        "{what} `{id}` has features that differ from an earlier row"
                    )))
                }
                Some(_) => {}
                None => {
                    catalog.insert(id, row);
                }
            }
        }
        match label {
            Some(label) => out.samples.push(Sample {
                user,
                item,
                domain,
                label,
            }),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Parses a `users.tsv` or `items.tsv` catalog into feature rows by id.
fn load_catalog(
    path: &Path,
    side: Side,
    schema: &FeatureSchema,
    vocab: &mut Vocabulary,
) -> Result<BTreeMap<u32, Vec<u32>>> {
    let id_field = match side {
        Side::User => USER_COLUMN,
        Side::Item => ITEM_COLUMN,
    };
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let Some(id_col) = col(id_field) else {
        return Err(Error::Parse {
            line: 1,
            message: format!("{}: header needs `{id_field}`", path.display()),
        });
    };
    let mut columns = Vec::new();
    for (slot, f) in schema.side_fields(side).enumerate() {
        if f.name == id_field {
            continue;
        }
        let Some(c) = col(&f.name) else {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: header lacks schema field `{}`", path.display(), f.name),
            });
        };
        columns.push((slot, f.name.clone(), c));
    }
    let width = schema.side_fields(side).count();
    let id_slot = schema.side_fields(side).position(|f| f.name == id_field);
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = vocab.intern(id_field, &record[id_col]);
        let mut row = vec![0u32; width];
        if let Some(s) = id_slot {
            row[s] = id;
        }
        for (slot, name, c) in &columns {
            row[*slot] = vocab.intern(name, &record[*c]);
        }
        if out.insert(id, row).is_some() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "{}: {side} `{}` listed twice",
                    path.display(),
                    &record[id_col]
                ),
            });
        }
    }
    Ok(out)
}

fn load_candidates(path: &Path, vocab: &mut Vocabulary, domains: usize) -> Result<CandidateLists> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(u), Some(d), Some(i)) = (col(USER_COLUMN), col(DOMAIN_COLUMN), col(ITEM_COLUMN))
    else {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "{}: candidates need user_id, domain_id, item_id",
                path.display()
            ),
        });
    };
    let mut out = CandidateLists::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let domain: u32 = record[d].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("domain `{}` is not a non-negative integer", &record[d]),
        })?;
        if domain as usize >= domains {
            return Err(Error::Parse {
                line,
                message: format!("domain {domain} out of range"),
            });
        }
        let user = vocab.intern(USER_COLUMN, &record[u]);
        let item = vocab.intern(ITEM_COLUMN, &record[i]);
        out.entry((user, domain)).or_default().push(item);
    }
    for list in out.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    Ok(out)
}

/// Reads a dataset directory written by [`write_tsv`] or prepared by hand.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, Vocabulary)> {
    let mut schema: FeatureSchema =
        serde_json::from_str(&fs::read_to_string(dir.join("schema.json"))?)?;
    let vocab_path = dir.join("vocab.json");
    let mut vocab = if vocab_path.exists() {
        serde_json::from_str(&fs::read_to_string(&vocab_path)?)?
    } else {
        Vocabulary::default()
    };
    let mut catalogs = [BTreeMap::new(), BTreeMap::new()];
    for (slot, side, name) in [(0, Side::User, "users.tsv"), (1, Side::Item, "items.tsv")] {
        let path = dir.join(name);
        if path.exists() {
            catalogs[slot] = load_catalog(&path, side, &schema, &mut vocab)?;
        }
    }
    let train = load_tsv(&dir.join("train.tsv"), &schema, &mut vocab)?;
    let test_path = dir.join("test.tsv");
    let test = if test_path.exists() {
        load_tsv(&test_path, &schema, &mut vocab)?
    } else {
        ParsedFile::default()
    };
    let cand_path = dir.join("candidates.tsv");
    let candidates = if cand_path.exists() {
        load_candidates(&cand_path, &mut vocab, schema.domains)?
    } else {
        CandidateLists::new()
    };

    // Vocabularies grow to cover every interned token.
    for f in schema.fields.iter_mut().filter(|f| f.side.is_some()) {
        f.vocab = f.vocab.max(vocab.len(&f.name)).max(1);
    }
    let catalog = |side: Side| -> Result<Vec<Vec<u32>>> {
        let (listed, a, b, id_field) = match side {
            Side::User => (&catalogs[0], &train.users, &test.users, USER_COLUMN),
            Side::Item => (&catalogs[1], &train.items, &test.items, ITEM_COLUMN),
        };
        let count = vocab.len(id_field);
        let width = schema.side_fields(side).count();
        let id_slot = schema.side_fields(side).position(|f| f.name == id_field);
        (0..count as u32)
            .map(|id| {
                match listed
                    .get(&id)
                    .or_else(|| a.get(&id))
                    .or_else(|| b.get(&id))
                {
                    Some(row) => Ok(row.clone()),
                    None if width == 1 && id_slot == Some(0) => Ok(vec![id]),
                    None => Err(Error::Data(format!(
                        "{side} `{}` has no feature row",
                        vocab.token(id_field, id).unwrap_or("?")
                    ))),
                }
            })
            .collect()
    };
    let users = catalog(Side::User)?;
    let items = catalog(Side::Item)?;
    let ds = Dataset {
        schema,
        users,
        items,
        train: train.samples,
        test: test.samples,
        candidates,
        truth: None,
    };
    ds.validate()?;
    Ok((ds, vocab))
}

/// Writes `ds` as a dataset directory. Tokens come from `vocab`.
pub fn write_tsv(dir: &Path, ds: &Dataset, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("schema.json"),
        serde_json::to_string_pretty(&ds.schema)? + "\n",
    )?;
    fs::write(
        dir.join("vocab.json"),
        serde_json::to_string_pretty(vocab)? + "\n",
    )?;
    let features = feature_columns(&ds.schema);
    let token = |field: &str, id: u32| -> Result<String> {
        vocab
            .token(field, id)
            .map(str::to_string)
            .ok_or_else(|| Error::Data(format!("id {id} of `{field}` missing from vocabulary")))
    };
    for (name, samples) in [("train.tsv", &ds.train), ("test.tsv", &ds.test)] {
        let mut text = String::from("user_id\titem_id\tdomain_id\tlabel");
        for (_, _, f) in &features {
            text.push('\t');
            text.push_str(f);
        }
        text.push('\n');
        for s in samples {
            let mut cols = vec![
                token(USER_COLUMN, s.user)?,
                token(ITEM_COLUMN, s.item)?,
                s.domain.to_string(),
                s.label.as_str().to_string(),
            ];
            for (side, slot, f) in &features {
                let id = match side {
                    Side::User => ds.users[s.user as usize][*slot],
                    Side::Item => ds.items[s.item as usize][*slot],
                };
                cols.push(token(f, id)?);
            }
            text.push_str(&cols.join("\t"));
            text.push('\n');
        }
        fs::write(dir.join(name), text)?;
    }
    for (name, side, rows, id_field) in [
        ("users.tsv", Side::User, &ds.users, USER_COLUMN),
        ("items.tsv", Side::Item, &ds.items, ITEM_COLUMN),
    ] {
        let fields: Vec<(usize, &str)> = ds
            .schema
            .side_fields(side)
            .enumerate()
            .filter(|(_, f)| f.name != id_field)
            .map(|(i, f)| (i, f.name.as_str()))
            .collect();
        let mut text = String::from(id_field);
        for (_, f) in &fields {
            text.push('\t');
            text.push_str(f);
        }
        text.push('\n');
        for (id, row) in rows.iter().enumerate() {
            let mut cols = vec![token(id_field, id as u32)?];
            for (slot, f) in &fields {
                cols.push(token(f, row[*slot])?);
            }
            text.push_str(&cols.join("\t"));
            text.push('\n');
        }
        fs::write(dir.join(name), text)?;
    }
    if !ds.candidates.is_empty() {
        let mut text = String::from("user_id\tdomain_id\titem_id\n");
        for ((u, d), items) in &ds.candidates {
            for &v in items {
                text.push_str(&format!(
                    "{}\t{d}\t{}\n",
                    token(USER_COLUMN, *u)?,
                    token(ITEM_COLUMN, v)?
                ));
            }
        }
        fs::write(dir.join("candidates.tsv"), text)?;
    }
    Ok(())
}
