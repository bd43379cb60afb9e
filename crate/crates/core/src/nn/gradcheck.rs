use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Gradient magnitudes below this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Entries where every probe step crossed a LeakyReLU kink.
    pub skipped: usize,
    pub worst: String,
}

impl GradCheckReport {
    /// Within tolerance, with at most a tenth of the probed entries skipped.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance && self.checked > 0 && self.skipped * 10 <= self.checked + self.skipped
    }
}

/// Step reductions tried when a probe straddles a kink.
const KINK_RETRIES: usize = 3;

/// Compares analytic gradients of `loss` against central finite differences.
///
/// Every unfrozen parameter that appears in `params` is probed; at most
/// `max_entries` evenly spaced entries per parameter are perturbed by ±`step`.
/// A difference quotient is only meaningful when both probes stay in the
/// LeakyReLU region of the base point; otherwise the step is divided by ten
/// (up to three times) and the entry is skipped if no clean step exists.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
    max_entries: usize,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (analytic, pattern) = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        (g.backward(l)?, g.activation_pattern())
    };
    let eval = |store: &ParamStore| -> Result<(f64, bool)> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok((g.scalar(l), g.activation_pattern() == pattern))
    };
    let mut report =
        GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0, worst: String::new() };
    for &id in params {
        if store.get(id).frozen {
            continue;
        }
        let n = store.value(id).len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let orig = store.value(id)[k];
            let mut numeric = None;
            let mut h = step;
            for _ in 0..=KINK_RETRIES {
                store.value_mut(id)[k] = orig + h;
                let (plus, same_plus) = eval(store)?;
                store.value_mut(id)[k] = orig - h;
                let (minus, same_minus) = eval(store)?;
                store.value_mut(id)[k] = orig;
                if same_plus && same_minus {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic.get(id).map_or(0.0, |g| g[k]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{k}]: analytic {a:e}, numeric {numeric:e}", store.get(id).name);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::blocks::{Attention, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = Mlp::new(&mut store, "m", 8, 8, &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ids = mlp.params();
        let report = gradient_check(&mut store, &ids, 1e-5, usize::MAX, |g| {
            let xv = g.input(x.clone());
            let y = mlp.forward(g, xv)?;
            let t = g.tanh(y);
            g.dot(t, y)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert_eq!(report.checked, 8 * 8 * 2 + 16);
    }

    #[test]
    fn attention_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let att = Attention::new(&mut store, "a", 6, 6, &mut rng);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let target: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let report = gradient_check(&mut store, &att.params(), 1e-5, usize::MAX, |g| {
            let r: Vec<Var> = rows.iter().map(|v| g.input(v.clone())).collect();
            let w = att.attend(g, &r)?;
            let t = g.input(target.clone());
            g.dot(w, t)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn linearity_of_backward() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mlp = Mlp::new(&mut store, "m", 3, 3, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(vec![0.2, -0.7, 1.1]);
        let y = mlp.forward(&mut g, x).unwrap();
        let a = g.sum(y);
        let yt = g.tanh(y);
        let b = g.dot(yt, yt).unwrap();
        let both = g.add(a, b).unwrap();
        let ga = g.backward(a).unwrap();
        let gb = g.backward(b).unwrap();
        let gab = g.backward(both).unwrap();
        for id in mlp.params() {
            let (x, y, z) = (ga.get(id).unwrap(), gb.get(id).unwrap(), gab.get(id).unwrap());
            for k in 0..x.len() {
                assert!((x[k] + y[k] - z[k]).abs() < 1e-12);
            }
        }
    }
}
