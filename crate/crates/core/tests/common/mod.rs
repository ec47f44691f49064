//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

use adi::data::{generate_synthetic, Dataset, SynthConfig};
use adi::gradcheck::{grad_check, grad_check_store};
use adi::layers::{
    embed_batch, mix_experts, Activation, AdaptationKind, AdaptationLayer, DsbnLayer, FeatureRows,
    FieldTable, FusionKind, FusionLayer, GateMode, Linear, Mlp, NormSpec, SeGate, SharedGate, Side,
    StarMlp,
};
use adi::model::{AdiModel, ModelConfig};
use adi::objective::{sampled_softmax_graph, sampled_softmax_rows, weighted_mean};
use adi::params::{Mode, ParamStore, Session};
use adi::rng::RngState;
use adi::{Graph, Result, Tensor, Var};

/// Probe step for central differences: large enough that rounding noise in
/// the difference quotient stays far below the gradient floor, small enough
/// that the truncation error is negligible.
pub const EPS: f64 = 1e-4;

/// Projects `out` onto fixed random weights so every output element
/// contributes to the scalar loss with a distinct coefficient.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = RngState::new(seed).normal_tensor(&shape, 1.0);
    let r = g.leaf(r)?;
    let prod = g.mul(out, r)?;
    g.sum_all(prod)
}

fn leaves_check(params: &[Tensor], op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    grad_check(
        params,
        |g, v| {
            let out = op(g, v)?;
            project(g, out, 99)
        },
        EPS,
    )
}

fn store_check(
    store: &ParamStore,
    mode: Mode,
    op: impl Fn(&mut Session) -> Result<Var>,
) -> Result<f64> {
    grad_check_store(
        store,
        mode,
        |s| {
            let out = op(s)?;
            project(&mut s.g, out, 99)
        },
        EPS,
    )
}

/// Normal tensor with every entry at least 0.1 away from zero, so ReLU
/// kinks and powers of small numbers stay out of the probe's reach.
fn away_from_zero(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let mut t = rng.normal_tensor(shape, 1.0);
    for v in t.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.2f64.copysign(*v);
        }
    }
    t
}

fn positive(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let mut t = rng.normal_tensor(shape, 1.0);
    for v in t.data_mut() {
        *v = 0.5 + v.abs();
    }
    t
}

/// The tiny synthetic schema used by the tower checks.
pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        domains: 3,
        users: 6,
        items: 7,
        interactions: vec![12],
        user_segments: 3,
        item_categories: 3,
        stat_bins: 3,
        embed_dim: 3,
        candidates: 4,
        ..SynthConfig::default()
    }
}

pub fn tiny_adi_se() -> ModelConfig {
    ModelConfig {
        bottom_widths: vec![5, 4],
        forward_widths: vec![4, 3],
        ..ModelConfig::default()
    }
}

fn tower_rows(side: Side) -> FeatureRows {
    match side {
        Side::User => FeatureRows {
            ids: vec![vec![0, 3, 5, 3], vec![2, 0, 1, 1]],
        },
        Side::Item => FeatureRows {
            ids: vec![
                vec![1, 6, 2, 4],
                vec![0, 2, 2, 1],
                vec![1, 0, 2, 2],
                vec![2, 1, 0, 1],
                vec![0, 0, 1, 2],
            ],
        },
    }
}

/// Runs every gradient check: each graph op, each layer, the sampled
/// softmax objective and the full ADI-SE towers. Returns `(name, max
/// relative error)` per check.
pub fn gradient_suite() -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut rng = RngState::new(2024);
    let a = away_from_zero;

    // Graph operations.
    let x34 = a(&mut rng, &[3, 4]);
    let y34 = a(&mut rng, &[3, 4]);
    let x32 = a(&mut rng, &[3, 2]);
    let w45 = a(&mut rng, &[4, 5]);
    let row4 = a(&mut rng, &[1, 4]);
    let col3 = a(&mut rng, &[3, 1]);
    let pos34 = positive(&mut rng, &[3, 4]);
    let table = a(&mut rng, &[5, 3]);

    let mut ops: Vec<(
        &str,
        Vec<Tensor>,
        Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
    )> = vec![
        (
            "matmul",
            vec![x34.clone(), w45],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        (
            "transpose",
            vec![x34.clone()],
            Box::new(|g, v| g.transpose(v[0])),
        ),
        (
            "add",
            vec![x34.clone(), y34.clone()],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "add (row broadcast)",
            vec![x34.clone(), row4.clone()],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![x34.clone(), row4.clone()],
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![x34.clone(), y34.clone()],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "mul (column broadcast)",
            vec![x34.clone(), col3],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![x34.clone()],
            Box::new(|g, v| g.scale(v[0], -1.7)),
        ),
        (
            "add_scalar",
            vec![x34.clone()],
            Box::new(|g, v| g.add_scalar(v[0], 0.3)),
        ),
        (
            "concat",
            vec![x34.clone(), x32, y34.clone()],
            Box::new(|g, v| g.concat(&[v[0], v[1], v[2]])),
        ),
        (
            "slice",
            vec![x34.clone()],
            Box::new(|g, v| g.slice(v[0], 1, 3)),
        ),
        (
            "sigmoid",
            vec![x34.clone()],
            Box::new(|g, v| g.sigmoid(v[0])),
        ),
        ("relu", vec![x34.clone()], Box::new(|g, v| g.relu(v[0]))),
        (
            "softmax",
            vec![x34.clone()],
            Box::new(|g, v| g.softmax(v[0])),
        ),
        (
            "logsumexp",
            vec![x34.clone()],
            Box::new(|g, v| g.logsumexp(v[0])),
        ),
        (
            "sum_axis 0",
            vec![x34.clone()],
            Box::new(|g, v| g.sum_axis(v[0], 0)),
        ),
        (
            "sum_axis 1",
            vec![x34.clone()],
            Box::new(|g, v| g.sum_axis(v[0], 1)),
        ),
        (
            "mean_axis 0",
            vec![x34.clone()],
            Box::new(|g, v| g.mean_axis(v[0], 0)),
        ),
        (
            "mean_axis 1",
            vec![x34.clone()],
            Box::new(|g, v| g.mean_axis(v[0], 1)),
        ),
        (
            "sum_all",
            vec![x34.clone()],
            Box::new(|g, v| g.sum_all(v[0])),
        ),
        (
            "powf 2.5",
            vec![pos34.clone()],
            Box::new(|g, v| g.powf(v[0], 2.5)),
        ),
        (
            "powf -1",
            vec![pos34.clone()],
            Box::new(|g, v| g.powf(v[0], -1.0)),
        ),
        (
            "powf -0.5",
            vec![pos34],
            Box::new(|g, v| g.powf(v[0], -0.5)),
        ),
        (
            "gather",
            vec![table],
            Box::new(|g, v| g.gather(v[0], &[4, 0, 4, 2, 1])),
        ),
        (
            "pick_cols",
            vec![x34.clone()],
            Box::new(|g, v| g.pick_cols(v[0], &[3, 0, 1, 1, 2, 2], 2)),
        ),
    ];
    for (name, params, op) in ops.drain(..) {
        out.push((format!("op {name}"), leaves_check(&params, op)?));
    }

    // Objective.
    let logits = a(&mut rng, &[4, 6]);
    let log_q = rng.normal_tensor(&[4, 6], 0.5);
    let lq = log_q.clone();
    out.push((
        "sampled softmax (weighted)".into(),
        grad_check(
            std::slice::from_ref(&logits),
            move |g, v| sampled_softmax_graph(g, v[0], &lq, &[1.0, 0.5, 2.0, 1.0]),
            EPS,
        )?,
    ));
    out.push((
        "sampled softmax rows".into(),
        leaves_check(&[logits], move |g, v| {
            let rows = sampled_softmax_rows(g, v[0], &log_q)?;
            weighted_mean(g, rows, &[])
        })?,
    ));

    // Layers over a parameter store.
    let rows = 5;
    {
        let mut store = ParamStore::new();
        let tables = vec![
            FieldTable::new(&mut store, &mut rng, "t", "a", 4, 3),
            FieldTable::new(&mut store, &mut rng, "t", "b", 3, 2),
        ];
        let ids = FeatureRows {
            ids: vec![vec![0, 3, 3, 1, 0], vec![2, 2, 0, 1, 1]],
        };
        out.push((
            "embedding lookup".into(),
            store_check(&store, Mode::Train, |s| {
                Ok(embed_batch(s, &tables, &ids)?.concat)
            })?,
        ));
    }
    let input = a(&mut rng, &[rows, 6]);
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut rng, "lin", 6, 4);
        let x = input.clone();
        out.push((
            "linear".into(),
            store_check(&store, Mode::Train, |s| {
                let x = s.constant(x.clone())?;
                lin.forward(s, x)
            })?,
        ));
    }
    let spec = |copies| NormSpec {
        copies,
        momentum: 0.9,
        eps: 1e-5,
    };
    for (name, norm, act) in [
        ("mlp", None, Activation::Relu),
        ("mlp + dsbn", Some(spec(3)), Activation::Identity),
    ] {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "mlp", 6, &[5, 4], act, norm)?;
        let x = input.clone();
        out.push((
            name.into(),
            store_check(&store, Mode::Train, |s| {
                let x = s.constant(x.clone())?;
                mlp.forward(s, x, 1)
            })?,
        ));
    }
    for mode in [Mode::Train, Mode::Infer] {
        let mut store = ParamStore::new();
        let bn = DsbnLayer::new(&mut store, "bn", 6, spec(2))?;
        // Non-trivial affine and running statistics.
        let (alpha, beta) = bn.affine(1)?;
        let (mean, var) = bn.running(1)?;
        store.set(alpha, a(&mut rng, &[1, 6]))?;
        store.set(beta, a(&mut rng, &[1, 6]))?;
        store.set(mean, a(&mut rng, &[1, 6]))?;
        store.set(var, positive(&mut rng, &[1, 6]))?;
        let leaf_input = store.add("x", input.clone(), true);
        out.push((
            format!("dsbn ({mode:?})").to_lowercase(),
            store_check(&store, mode, |s| {
                let x = s.param(leaf_input)?;
                bn.forward(s, x, 1)
            })?,
        ));
    }
    let field_dims = [3, 2, 4];
    for (name, kind, gate) in [
        ("adaptation linear", AdaptationKind::Linear, SeGate::Sigmoid),
        (
            "adaptation vanilla attention",
            AdaptationKind::VanillaAttention,
            SeGate::Sigmoid,
        ),
        (
            "adaptation se (sigmoid)",
            AdaptationKind::Se,
            SeGate::Sigmoid,
        ),
        (
            "adaptation se (identity)",
            AdaptationKind::Se,
            SeGate::Identity,
        ),
    ] {
        let mut store = ParamStore::new();
        let layer = AdaptationLayer::new(&mut store, &mut rng, "ad", kind, &field_dims, 2, gate)?;
        if let Some(w) = layer.linear_weight() {
            let shape = store.get(w).shape().to_vec();
            store.set(w, a(&mut rng, &shape))?;
        }
        let fields: Vec<_> = field_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| store.add(format!("f{i}"), a(&mut rng, &[rows, d]), true))
            .collect();
        out.push((
            name.into(),
            store_check(&store, Mode::Train, |s| {
                let vars = fields
                    .iter()
                    .map(|&f| s.param(f))
                    .collect::<Result<Vec<_>>>()?;
                Ok(layer.forward(s, &vars)?.output)
            })?,
        ));
    }
    for mode in [GateMode::Softmax, GateMode::SumRatio] {
        let mut store = ParamStore::new();
        let gate = SharedGate::new(&mut store, &mut rng, "g", 3, 4, mode)?;
        for k in 0..3 {
            let (w, b) = gate.params(k);
            store.set(w, positive(&mut rng, &[4, 1]))?;
            store.set(b, Tensor::scalar(0.5)?)?;
        }
        let indicator = store.add("ind", positive(&mut rng, &[1, 4]), true);
        let experts: Vec<_> = (0..3)
            .map(|k| store.add(format!("e{k}"), a(&mut rng, &[rows, 4]), true))
            .collect();
        out.push((
            format!("gate + expert mix ({mode:?})"),
            store_check(&store, Mode::Train, |s| {
                let ind = s.param(indicator)?;
                let alpha = gate.weights(s, ind)?;
                let outs = experts
                    .iter()
                    .map(|&e| s.param(e))
                    .collect::<Result<Vec<_>>>()?;
                mix_experts(s, alpha, &outs)
            })?,
        ));
    }
    for kind in [FusionKind::Concat, FusionKind::Sum] {
        let mut store = ParamStore::new();
        let fusion = FusionLayer::new(&mut store, &mut rng, "fu", kind, 3, 4, 5)?;
        let spec_out = store.add("spec", a(&mut rng, &[rows, 5]), true);
        let shared_out = store.add("shared", a(&mut rng, &[rows, 5]), true);
        let indicator = store.add("ind", a(&mut rng, &[1, 4]), true);
        out.push((
            format!("fusion {}", kind.label()),
            store_check(&store, Mode::Train, |s| {
                let (sp, sh, ind) = (
                    s.param(spec_out)?,
                    s.param(shared_out)?,
                    s.param(indicator)?,
                );
                fusion.forward(s, sp, sh, ind, 2)
            })?,
        ));
    }
    {
        let mut store = ParamStore::new();
        let star = StarMlp::new(
            &mut store,
            &mut rng,
            "star",
            3,
            6,
            &[5, 4],
            Activation::Relu,
            Some(spec(3)),
        )?;
        // Move the domain factors off their all-ones start.
        for l in 0..2 {
            let (_, _, dw, db) = star.layer_params(l, 1);
            let (ws, bs) = (
                store.get(dw).shape().to_vec(),
                store.get(db).shape().to_vec(),
            );
            store.set(dw, a(&mut rng, &ws))?;
            store.set(db, a(&mut rng, &bs))?;
        }
        let x = input.clone();
        out.push((
            "fusion Network-Mul (star MLP)".into(),
            store_check(&store, Mode::Train, |s| {
                let x = s.constant(x.clone())?;
                star.forward(s, x, 1)
            })?,
        ));
    }

    // Full ADI-SE towers and the two-tower sampled softmax loss.
    let schema = tiny_synth().schema();
    let model = AdiModel::build(&tiny_adi_se(), &schema)?;
    for side in [Side::User, Side::Item] {
        let rows = tower_rows(side);
        out.push((
            format!("ADI-SE {side} tower"),
            store_check(&model.store, Mode::Train, |s| {
                Ok(model.tower_forward(s, side, &rows, 1)?.embedding)
            })?,
        ));
    }
    let (users, items) = (tower_rows(Side::User), tower_rows(Side::Item));
    let log_q = RngState::new(5).normal_tensor(&[4, 4], 0.5);
    out.push((
        "ADI-SE two-tower sampled softmax".into(),
        grad_check_store(
            &model.store,
            Mode::Train,
            |s| {
                let u = model.tower_forward(s, Side::User, &users, 2)?.embedding;
                let v = model.tower_forward(s, Side::Item, &items, 2)?.embedding;
                let vt = s.g.transpose(v)?;
                let logits = s.g.matmul(u, vt)?;
                sampled_softmax_graph(&mut s.g, logits, &log_q, &[])
            },
            EPS,
        )?,
    ));
    Ok(out)
}

/// Small synthetic dataset for quick end-to-end checks.
pub fn small_dataset(seed: u64) -> Dataset {
    generate_synthetic(&SynthConfig {
        users: 60,
        items: 40,
        interactions: vec![300],
        seed,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
}
