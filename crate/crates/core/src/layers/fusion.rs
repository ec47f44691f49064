//! Combination of shared and domain-specific representations.
//!
//! `Concat` weights both sides with sigmoid gates from the domain indicator
//! and keeps their interaction term, tripling the width. `Sum` is an MMoE
//! style convex blend. `NetworkMul` replaces the shared and specific bottoms
//! with a star-topology MLP whose per-domain weights multiply the shared ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::params::{ParamId, ParamStore, Session};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::domain_copy;
use super::mlp::{activate, Activation};
use super::norm::{DsbnLayer, NormSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    Concat,
    Sum,
    NetworkMul,
}

impl FusionKind {
    /// Fusion output width for bottom width `h`.
    pub fn output_width(self, h: usize) -> usize {
        match self {
            FusionKind::Concat => 3 * h,
            FusionKind::Sum | FusionKind::NetworkMul => h,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionKind::Concat => "CONCAT",
            FusionKind::Sum => "SUM",
            FusionKind::NetworkMul => "Network-Mul",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Params {
    Concat {
        spec: Vec<ParamId>,
        shared: Vec<ParamId>,
    },
    Sum {
        gate: Vec<ParamId>,
        bias: ParamId,
    },
}

/// Gated fusion of `E_spec` and `E_shared` for the `Concat` and `Sum` kinds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionLayer {
    width: usize,
    params: Params,
}

impl FusionLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        kind: FusionKind,
        domains: usize,
        indicator_dim: usize,
        width: usize,
    ) -> Result<Self> {
        let mut per_domain = |name: &str| -> Vec<ParamId> {
            (0..domains)
                .map(|d| {
                    store.add_glorot(
                        format!("{prefix}.fusion.{name}{d}"),
                        [indicator_dim, 1],
                        indicator_dim,
                        1,
                        rng,
                    )
                })
                .collect()
        };
        let params = match kind {
            FusionKind::Concat => Params::Concat {
                spec: per_domain("spec"),
                shared: per_domain("shared"),
            },
            FusionKind::Sum => {
                let gate = per_domain("gate");
                let bias = store.add(
                    format!("{prefix}.fusion.gate_b"),
                    Tensor::zeros(&[1, 1]),
                    true,
                );
                Params::Sum { gate, bias }
            }
            FusionKind::NetworkMul => {
                return Err(Error::Config(
                    "Network-Mul fusion is a star MLP, not a gated fusion layer".into(),
                ))
            }
        };
        Ok(FusionLayer { width, params })
    }

    pub fn kind(&self) -> FusionKind {
        match self.params {
            Params::Concat { .. } => FusionKind::Concat,
            Params::Sum { .. } => FusionKind::Sum,
        }
    }

    pub fn output_width(&self) -> usize {
        self.kind().output_width(self.width)
    }

    /// Fuses `specific` and `shared` (`[rows, h]` each) for `domain`, with
    /// the domain indicator embedding `indicator` (`[1, e]` or `[rows, e]`).
    pub fn forward(
        &self,
        s: &mut Session,
        specific: Var,
        shared: Var,
        indicator: Var,
        domain: usize,
    ) -> Result<Var> {
        let (ws, wh) = (s.g.value(specific).cols(), s.g.value(shared).cols());
        if ws != self.width || wh != self.width {
            return Err(Error::shape("fuse", s.g.shape(specific), s.g.shape(shared)));
        }
        match &self.params {
            Params::Concat { spec, shared: sh } => {
                let d = domain_copy(domain, spec.len())?;
                let w1 = s.param(spec[d])?;
                let w2 = s.param(sh[d])?;
                let z1 = s.g.matmul(indicator, w1)?;
                let z2 = s.g.matmul(indicator, w2)?;
                let beta1 = s.g.sigmoid(z1)?;
                let beta2 = s.g.sigmoid(z2)?;
                concat_fuse(s, beta1, beta2, specific, shared)
            }
            Params::Sum { gate, bias } => {
                let d = domain_copy(domain, gate.len())?;
                let w = s.param(gate[d])?;
                let b = s.param(*bias)?;
                let z = s.g.matmul(indicator, w)?;
                let z = s.g.add(z, b)?;
                let alpha = s.g.sigmoid(z)?;
                sum_fuse(s, alpha, specific, shared)
            }
        }
    }
}

/// `concat(β1·spec | β1·spec ⊙ β2·shared | β2·shared)`.
pub fn concat_fuse(
    s: &mut Session,
    beta1: Var,
    beta2: Var,
    specific: Var,
    shared: Var,
) -> Result<Var> {
    let a = s.g.mul(specific, beta1)?;
    let b = s.g.mul(shared, beta2)?;
    let ab = s.g.mul(a, b)?;
    s.g.concat(&[a, ab, b])
}

/// `α·spec + (1 − α)·shared`.
pub fn sum_fuse(s: &mut Session, alpha: Var, specific: Var, shared: Var) -> Result<Var> {
    let neg = s.g.scale(alpha, -1.0)?;
    let rest = s.g.add_scalar(neg, 1.0)?;
    let a = s.g.mul(specific, alpha)?;
    let b = s.g.mul(shared, rest)?;
    s.g.add(a, b)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StarLayer {
    shared_w: ParamId,
    shared_b: ParamId,
    domain_w: Vec<ParamId>,
    domain_b: Vec<ParamId>,
    fan_in: usize,
    fan_out: usize,
}

/// Star-topology MLP: layer `l` for domain `d` computes
/// `x (W_shared ⊙ W_d) + b_shared + b_d`.
///
/// Per-domain weights start at ones and per-domain biases at zeros, so an
/// untrained star MLP behaves like its shared network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarMlp {
    layers: Vec<StarLayer>,
    norms: Vec<Option<DsbnLayer>>,
    final_activation: Activation,
}

impl StarMlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        domains: usize,
        input: usize,
        widths: &[usize],
        final_activation: Activation,
        norm: Option<NormSpec>,
    ) -> Result<Self> {
        if widths.is_empty() || input == 0 || widths.contains(&0) || domains == 0 {
            return Err(Error::Config(format!(
                "{prefix}: star MLP needs positive widths and domains, got input {input}, widths {widths:?}, {domains} domains"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut norms = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let p = format!("{prefix}.l{i}");
            layers.push(StarLayer {
                shared_w: store.add_glorot(format!("{p}.shared.w"), [fan_in, w], fan_in, w, rng),
                shared_b: store.add(format!("{p}.shared.b"), Tensor::zeros(&[1, w]), true),
                domain_w: (0..domains)
                    .map(|d| store.add(format!("{p}.spec{d}.w"), Tensor::ones(&[fan_in, w]), true))
                    .collect(),
                domain_b: (0..domains)
                    .map(|d| store.add(format!("{p}.spec{d}.b"), Tensor::zeros(&[1, w]), true))
                    .collect(),
                fan_in,
                fan_out: w,
            });
            let hidden = i + 1 < widths.len();
            norms.push(match (hidden, norm) {
                (true, Some(spec)) => Some(DsbnLayer::new(store, &p, w, spec)?),
                _ => None,
            });
            fan_in = w;
        }
        Ok(StarMlp {
            layers,
            norms,
            final_activation,
        })
    }

    pub fn domains(&self) -> usize {
        self.layers[0].domain_w.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out
    }

    /// `(shared weight, shared bias, domain weight, domain bias)` of layer `l`.
    pub fn layer_params(&self, l: usize, domain: usize) -> (ParamId, ParamId, ParamId, ParamId) {
        let layer = &self.layers[l];
        (
            layer.shared_w,
            layer.shared_b,
            layer.domain_w[domain],
            layer.domain_b[domain],
        )
    }

    /// Trainable scalars in the shared network alone.
    pub fn shared_scalars(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }

    pub fn forward(&self, s: &mut Session, x: Var, domain: usize) -> Result<Var> {
        if s.g.value(x).cols() != self.input_dim() {
            return Err(Error::shape(
                "star_mlp",
                s.g.shape(x),
                &[0, self.input_dim()],
            ));
        }
        let d = domain_copy(domain, self.domains())?;
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (layer, norm)) in self.layers.iter().zip(&self.norms).enumerate() {
            let ws = s.param(layer.shared_w)?;
            let wd = s.param(layer.domain_w[d])?;
            let bs = s.param(layer.shared_b)?;
            let bd = s.param(layer.domain_b[d])?;
            let w = s.g.mul(ws, wd)?;
            let xw = s.g.matmul(h, w)?;
            let xw = s.g.add(xw, bs)?;
            h = s.g.add(xw, bd)?;
            if let Some(n) = norm {
                h = n.forward(s, h, domain)?;
            }
            let act = if i == last {
                self.final_activation
            } else {
                Activation::Relu
            };
            h = activate(s, h, act)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::mlp::Mlp;
    use crate::params::Mode;

    #[test]
    fn concat_triples_width_and_matches_reference() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(1);
        let layer =
            FusionLayer::new(&mut store, &mut rng, "u", FusionKind::Concat, 2, 3, 4).unwrap();
        assert_eq!(layer.output_width(), 12);
        let es = rng.normal_tensor(&[2, 4], 1.0);
        let eh = rng.normal_tensor(&[2, 4], 1.0);
        let ind = rng.normal_tensor(&[1, 3], 1.0);
        let mut s = Session::new(&store, Mode::Infer);
        let (a, b, f) = (
            s.constant(es.clone()).unwrap(),
            s.constant(eh.clone()).unwrap(),
            s.constant(ind.clone()).unwrap(),
        );
        let out = layer.forward(&mut s, a, b, f, 1).unwrap();
        let out = s.g.value(out).clone();
        assert_eq!(out.shape(), &[2, 12]);

        let Params::Concat { spec, shared } = &layer.params else {
            unreachable!()
        };
        let sig = |w: &Tensor| {
            let z: f64 = ind.data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
            1.0 / (1.0 + (-z).exp())
        };
        let b1 = sig(store.get(spec[1]));
        let b2 = sig(store.get(shared[1]));
        for r in 0..2 {
            for c in 0..4 {
                let x = b1 * es.get(r, c);
                let y = b2 * eh.get(r, c);
                assert!((out.get(r, c) - x).abs() < 1e-14);
                assert!((out.get(r, 4 + c) - x * y).abs() < 1e-14);
                assert!((out.get(r, 8 + c) - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sum_endpoints_select_one_side() {
        let store = ParamStore::new();
        let mut rng = RngState::new(2);
        let es = rng.normal_tensor(&[3, 2], 1.0);
        let eh = rng.normal_tensor(&[3, 2], 1.0);
        let mut s = Session::new(&store, Mode::Infer);
        let a = s.constant(es.clone()).unwrap();
        let b = s.constant(eh.clone()).unwrap();
        let one = s.constant(Tensor::scalar(1.0).unwrap()).unwrap();
        let zero = s.constant(Tensor::scalar(0.0).unwrap()).unwrap();
        let o1 = sum_fuse(&mut s, one, a, b).unwrap();
        let o0 = sum_fuse(&mut s, zero, a, b).unwrap();
        assert_eq!(s.g.value(o1), &es);
        assert_eq!(s.g.value(o0), &eh);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(3);
        let layer = FusionLayer::new(&mut store, &mut rng, "u", FusionKind::Sum, 1, 2, 4).unwrap();
        let mut s = Session::new(&store, Mode::Infer);
        let a = s.constant(Tensor::zeros(&[1, 4])).unwrap();
        let b = s.constant(Tensor::zeros(&[1, 3])).unwrap();
        let f = s.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(
            layer.forward(&mut s, a, b, f, 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn star_with_unit_domain_weights_is_the_shared_fc() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(4);
        let star = StarMlp::new(
            &mut store,
            &mut rng,
            "s",
            3,
            5,
            &[4, 3],
            Activation::Identity,
            None,
        )
        .unwrap();
        // A plain MLP carrying the star's shared weights.
        let mut plain_store = ParamStore::new();
        let plain = Mlp::new(
            &mut plain_store,
            &mut rng,
            "p",
            5,
            &[4, 3],
            Activation::Identity,
            None,
        )
        .unwrap();
        for (l, lin) in plain.layers().iter().enumerate() {
            let (sw, sb, _, _) = star.layer_params(l, 0);
            plain_store.set(lin.weight, store.get(sw).clone()).unwrap();
            plain_store
                .set(lin.bias, rng.normal_tensor(&[1, lin.fan_out], 1.0))
                .unwrap();
            store.set(sb, plain_store.get(lin.bias).clone()).unwrap();
        }
        let x = rng.normal_tensor(&[2, 5], 1.0);
        let mut s = Session::new(&store, Mode::Infer);
        let xv = s.constant(x.clone()).unwrap();
        let y = star.forward(&mut s, xv, 2).unwrap();
        let mut p = Session::new(&plain_store, Mode::Infer);
        let xp = p.constant(x).unwrap();
        let yp = plain.forward(&mut p, xp, 0).unwrap();
        assert!(s.g.value(y).max_abs_diff(p.g.value(yp)) < 1e-14);
    }

    #[test]
    fn star_domain_weights_multiply_shared_weights() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(5);
        let star = StarMlp::new(
            &mut store,
            &mut rng,
            "s",
            2,
            3,
            &[2],
            Activation::Identity,
            None,
        )
        .unwrap();
        let (sw, sb, dw, db) = star.layer_params(0, 1);
        let wd = rng.normal_tensor(&[3, 2], 1.0);
        let bd = rng.normal_tensor(&[1, 2], 1.0);
        store.set(dw, wd.clone()).unwrap();
        store.set(db, bd.clone()).unwrap();
        let x = rng.normal_tensor(&[1, 3], 1.0);
        let mut s = Session::new(&store, Mode::Infer);
        let xv = s.constant(x.clone()).unwrap();
        let y1 = star.forward(&mut s, xv, 1).unwrap();
        let y0 = star.forward(&mut s, xv, 0).unwrap();
        assert!(s.g.value(y1).max_abs_diff(s.g.value(y0)) > 1e-6);
        for j in 0..2 {
            let want = store.get(sb).data()[j]
                + bd.data()[j]
                + (0..3)
                    .map(|k| x.data()[k] * store.get(sw).get(k, j) * wd.get(k, j))
                    .sum::<f64>();
            assert!((s.g.value(y1).data()[j] - want).abs() < 1e-14);
        }
    }
}
