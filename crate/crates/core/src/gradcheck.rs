//! Central finite-difference checking of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Mode, ParamStore, Session};
use crate::tensor::Tensor;

/// Gradient magnitude below which a comparison is made on an absolute
/// rather than relative scale. Central differences carry rounding noise of
/// roughly `f64::EPSILON * |loss| / eps`, so a gradient that is exactly zero
/// (a bias feeding a normalization layer, say) would otherwise be compared
/// against pure noise.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares the analytic gradient of a scalar loss against central
/// differences, perturbing every element of every parameter by `eps`.
///
/// `build` receives one leaf per entry of `params` and must return a `[1,1]`
/// loss. Returns the maximum [`relative_error`] over all parameter
/// elements.
pub fn grad_check<F>(params: &[Tensor], build: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = ps
            .iter()
            .map(|p| g.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        let v = g.value(loss);
        if v.shape() != [1, 1] {
            return Err(Error::NonScalarRoot {
                op: "grad_check",
                shape: v.shape().to_vec(),
            });
        }
        if !v.data()[0].is_finite() {
            return Err(Error::NonFinite("loss during gradient probing".into()));
        }
        Ok((g, vars, loss))
    };

    let (g, vars, loss) = eval(params)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            probe[p].data_mut()[k] = orig + eps;
            let (gp, _, lp) = eval(&probe)?;
            let plus = gp.value(lp).data()[0];
            probe[p].data_mut()[k] = orig - eps;
            let (gm, _, lm) = eval(&probe)?;
            let minus = gm.value(lm).data()[0];
            probe[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[k];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// [`grad_check`] for a loss built from stored parameters through a
/// [`Session`]: every element of every trainable tensor in `store` is
/// perturbed, and buffers are left alone. Parameters the loss never reaches
/// count as having a zero analytic gradient.
pub fn grad_check_store<F>(store: &ParamStore, mode: Mode, build: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let loss_of = |st: &ParamStore| -> Result<f64> {
        let mut s = Session::new(st, mode);
        let root = build(&mut s)?;
        let v = s.g.value(root);
        if v.shape() != [1, 1] {
            return Err(Error::NonScalarRoot {
                op: "grad_check_store",
                shape: v.shape().to_vec(),
            });
        }
        if !v.data()[0].is_finite() {
            return Err(Error::NonFinite("loss during gradient probing".into()));
        }
        Ok(v.data()[0])
    };

    let analytic = {
        let mut s = Session::new(store, mode);
        let root = build(&mut s)?;
        s.param_grads(root)?
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store
        .ids()
        .filter(|&id| store.is_trainable(id))
        .collect::<Vec<_>>()
    {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + eps;
            let plus = loss_of(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - eps;
            let minus = loss_of(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
