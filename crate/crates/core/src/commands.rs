//! The command implementations behind the `adi` executable.
//!
//! Every command takes the effective [`RunConfig`] (file plus flag
//! overrides), writes its report file and returns what it wrote.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::ablation::{run_ablation, AblationTable, Axis};
use crate::config::RunConfig;
use crate::data::{generate_synthetic, write_tsv, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{
    config_digest, evaluate, inspect_attention, AttentionReport, EvalReport, Protocol,
};
use crate::model::{Checkpoint, ModelConfig, TrainedModel};
use crate::training::{fit_model, TraceRecord};

/// Command-line overrides; flags win over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub self_train: bool,
    pub protocol: Option<Protocol>,
    pub exclude_train_positives: bool,
    pub axis: Option<Axis>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        if self.self_train {
            cfg.train.self_training = true;
        }
        if let Some(p) = self.protocol {
            cfg.eval.protocol = p;
        }
        if self.exclude_train_positives {
            cfg.eval.exclude_train_positives = true;
        }
        if let Some(a) = self.axis {
            cfg.ablate.axis = a;
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Short human-readable description of a model configuration.
pub fn model_label(cfg: &ModelConfig) -> String {
    if cfg.separate_domains {
        return format!("{} independent single-domain models", cfg.domains);
    }
    let fusion = cfg.effective_fusion().map_or("none", |f| f.label());
    let norm = serde_json::to_value(cfg.norm).ok();
    format!(
        "bottom {}+{} fusion {} adaptation {} norm {}",
        if cfg.specific_networks {
            cfg.domains
        } else {
            0
        },
        cfg.shared_networks,
        fusion,
        cfg.adaptation.as_str(),
        norm.as_ref().and_then(|v| v.as_str()).unwrap_or("?"),
    )
}

/// Generates the synthetic dataset and writes it to `paths.data`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.paths.data.as_ref().ok_or_else(|| {
        Error::Config("gen-data needs `paths.data` as its output directory".into())
    })?;
    let ds = generate_synthetic(&cfg.data)?;
    write_tsv(dir, &ds, &Vocabulary::identity(&ds.schema))?;
    Ok(format!(
        "wrote {} train and {} test interactions over {} domains to {}",
        ds.train.len(),
        ds.test.len(),
        ds.domains(),
        dir.display()
    ))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "checkpoint `{}` does not exist; run `adi train` first",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

/// Trains (or self-trains) a model, saving the checkpoint and the loss
/// trace. With `resume`, training continues from the saved checkpoint up to
/// `train.epochs` in total and the trace is appended to.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<Vec<TraceRecord>> {
    let ds = cfg.dataset()?;
    let start = if resume {
        let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
        match TrainedModel::from_checkpoint(&ckpt)? {
            (TrainedModel::Joint(model), Some(state)) => {
                if model.config != cfg.model {
                    return Err(Error::Config(
                        "the checkpoint was trained with a different model configuration".into(),
                    ));
                }
                Some((model, state))
            }
            _ => {
                return Err(Error::Config(
                    "the checkpoint holds no resumable training state".into(),
                ))
            }
        }
    } else {
        None
    };
    let (model, trace, state) = fit_model(&cfg.model, &ds, &cfg.train, start)?;
    model.to_checkpoint(state).save(&cfg.paths.checkpoint)?;

    let mut lines = String::new();
    for r in &trace {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    if resume {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cfg.paths.trace)?;
        f.write_all(lines.as_bytes())?;
    } else {
        write_file(&cfg.paths.trace, &lines)?;
    }
    Ok(trace)
}

/// Evaluates the saved checkpoint and writes the per-domain report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
    let (model, _) = TrainedModel::from_checkpoint(&ckpt)?;
    let ds = cfg.dataset()?;
    let mut report = evaluate(model.embedder(), &ds, &cfg.eval)?;
    report.model = match &model {
        TrainedModel::Joint(m) => model_label(&m.config),
        TrainedModel::PerDomain(p) => {
            format!("{} independent single-domain models", p.models.len())
        }
    };
    report.census = model.census();
    report.config_digest = config_digest(&serde_json::json!({
        "run": cfg.digest()?,
        "checkpoint": config_digest(&ckpt)?,
    }))?;
    write_file(&cfg.paths.report, &report.render())?;
    Ok(report)
}

/// Runs the configured ablation sweep over every seed.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationTable> {
    let key = cfg.data_key()?;
    let table = run_ablation(
        &cfg.ablate,
        &cfg.model,
        &cfg.train,
        &cfg.eval,
        &cfg.seeds,
        &key,
        &mut |seed| cfg.with_seed(seed).dataset(),
    )?;
    write_file(&cfg.paths.ablation, &table.render())?;
    Ok(table)
}

/// Writes the per-domain mean adaptation weights of the saved model.
pub fn cmd_inspect_attention(cfg: &RunConfig) -> Result<(AttentionReport, String)> {
    let ckpt = load_checkpoint(&cfg.paths.checkpoint)?;
    let TrainedModel::Joint(model) = TrainedModel::from_checkpoint(&ckpt)?.0 else {
        return Err(Error::Config(
            "attention inspection needs a joint model, not separate per-domain models".into(),
        ));
    };
    let ds = cfg.dataset()?;
    let report = inspect_attention(
        &model,
        &ds,
        cfg.attention.side,
        cfg.attention.linear_magnitudes,
    )?;
    let digest = config_digest(&serde_json::json!({
        "run": cfg.digest()?,
        "checkpoint": config_digest(&ckpt)?,
        "attention": cfg.attention,
    }))?;
    let text = format!("# config-digest: {digest}\n{}", report.render());
    write_file(&cfg.paths.attention, &text)?;
    Ok((report, text))
}
