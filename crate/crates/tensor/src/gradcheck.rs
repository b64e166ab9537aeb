// SPDX-License-Identifier: Apache-2.0

//! Central finite differences against the tape's analytic gradients.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest relative error over every input scalar. Relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out);
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let (tp, _, op) = eval(&plus);
            let (tm, _, om) = eval(&minus);
            let numeric = (tp.value(op).item() - tm.value(om).item()) / (2.0 * h);
            let denom = analytic[j].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[j] - numeric).abs() / denom);
        }
    }
    worst
}
