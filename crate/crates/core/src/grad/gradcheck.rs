//! Central finite-difference checking of analytic gradients.

use super::{Graph, ParamId, ParamSet, Var};

/// Worst disagreement found by [`check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f32,
    pub max_abs_err: f32,
    pub checked: usize,
}

/// Relative error with the denominator floored at `floor`.
pub fn rel_err(analytic: f32, numeric: f32, floor: f32) -> f32 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward-pass gradients of every scalar in `params` with
/// `(L(θ+ε) − L(θ−ε)) / 2ε`. `build` must construct the same scalar loss
/// from a fresh graph each time it is called.
pub fn check(
    params: &mut ParamSet,
    eps: f32,
    floor: f32,
    build: impl Fn(&mut Graph, &ParamSet) -> Var,
) -> GradCheck {
    let mut g = Graph::new();
    let loss = build(&mut g, params);
    let grads = g.backward(loss).expect("scalar loss");
    let eval = |ps: &ParamSet| -> f64 {
        let mut g = Graph::inference();
        let l = build(&mut g, ps);
        f64::from(g.scalar_value(l))
    };
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = params.value(id).len();
        let analytic: Vec<f32> = grads
            .get(params, id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for j in 0..n {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + eps;
            let up = eval(params);
            params.value_mut(id).data_mut()[j] = orig - eps;
            let down = eval(params);
            params.value_mut(id).data_mut()[j] = orig;
            let numeric = ((up - down) / (2.0 * f64::from(eps))) as f32;
            let a = analytic[j];
            out.max_abs_err = out.max_abs_err.max((a - numeric).abs());
            out.max_rel_err = out.max_rel_err.max(rel_err(a, numeric, floor));
            out.checked += 1;
        }
    }
    out
}
