//! Central finite-difference gradient checking against [`Graph::backward`].

use serde::Serialize;

use super::{Float, Graph, ParamStore, Var};
use crate::error::Result;

/// Per-tensor comparison outcome.
#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Elements skipped because the stencil straddled a kink.
    pub kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: Float,
    pub tolerance: f64,
    /// Elements whose analytic and numeric gradients are both below this
    /// magnitude are skipped.
    pub min_magnitude: f64,
    /// Check at most this many evenly strided elements per tensor.
    pub max_elems: Option<usize>,
    /// Skip an element when its forward and backward one-sided slopes
    /// differ by more than this fraction, which only happens when a ReLU or
    /// max-pool switch lies within one step. `None` never skips.
    pub kink_tolerance: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            min_magnitude: 1e-6,
            max_elems: None,
            kink_tolerance: None,
        }
    }
}

/// Compare analytic parameter gradients of `loss_fn` with central
/// differences. Only parameters with `requires_grad` are checked.
pub fn check_params<F>(store: &mut ParamStore, opts: GradcheckOptions, mut loss_fn: F) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        g.backward(loss)?;
        g.accumulate_param_grads(store);
    }
    let mut eval = |store: &ParamStore| -> Result<Float> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        Ok(g.scalar(loss))
    };
    let base = eval(store)?;
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).requires_grad).collect();
    let mut tensors = Vec::new();
    for id in ids {
        let n = store.get(id).numel();
        let analytic = store.get(id).grad.clone();
        let elems: Vec<usize> = match opts.max_elems {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &e in &elems {
            let orig = store.get(id).data()[e];
            store.get_mut(id).data_mut()[e] = orig + opts.step;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig - opts.step;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[e] = orig;
            let numeric = ((up - down) / (2.0 * opts.step)) as f64;
            if let Some(tol) = opts.kink_tolerance {
                let fwd = ((up - base) / opts.step) as f64;
                let bwd = ((base - down) / opts.step) as f64;
                if (fwd - bwd).abs() > tol * fwd.abs().max(bwd.abs()).max(KINK_FLOOR) {
                    kinks += 1;
                    continue;
                }
            }
            worst = worst.max(rel_error(analytic[e] as f64, numeric, opts.min_magnitude));
        }
        tensors.push(TensorCheck {
            name: store.get(id).name.clone(),
            checked: elems.len() - kinks,
            kinks,
            max_rel_error: worst,
        });
    }
    store.zero_grad();
    Ok(GradcheckReport {
        tensors,
        tolerance: opts.tolerance,
    })
}

const KINK_FLOOR: f64 = 1e-3;

/// `|a−n| / max(|a|,|n|)`, or 0 when both are below `floor`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale <= floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}
