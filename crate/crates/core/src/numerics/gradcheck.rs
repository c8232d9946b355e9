use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Fault, Var};
use super::params::{ParamId, ParamStore, Session};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked per tensor when it is larger than this.
    pub max_coords: usize,
    pub seed: u64,
    /// Run the analytic pass with a deliberately broken backward.
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: 64, seed: 0, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    /// Worst relative error over coordinates where the function is smooth.
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    /// Coordinates whose stencil straddles a kink (ReLU, max-pool switch,
    /// neighbor change); excluded from `max_rel_error`.
    pub kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn coords(&self) -> usize {
        self.tensors.iter().map(|t| t.coords).sum()
    }

    pub fn kinks(&self) -> usize {
        self.tensors.iter().map(|t| t.kinks).sum()
    }

    pub fn get(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Relative gap between one-sided slopes above which a coordinate counts as a kink.
pub const KINK_THRESHOLD: f64 = 1e-2;

/// Compares reverse-mode gradients of a scalar `forward` against central
/// finite differences for each tensor in `targets`. Tensors larger than
/// `max_coords` are checked on a seeded random subset of coordinates.
///
/// A coordinate whose forward and backward one-sided slopes disagree by more
/// than [`KINK_THRESHOLD`] is not differentiable within the step; it is
/// counted in `kinks` instead of being scored. The test uses forward values
/// only, so it cannot mask an error in the backward pass.
pub fn grad_check<F>(
    store: &mut ParamStore,
    targets: &[ParamId],
    mut forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Session) -> Result<Var>,
{
    let analytic = {
        let mut s = match opts.fault {
            Some(f) => Session::with_fault(store, f),
            None => Session::new(store),
        };
        let out = forward(&mut s)?;
        if s.value(out).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "grad_check needs a scalar output, got shape {:?}",
                s.value(out).shape()
            )));
        }
        if !s.value(out).is_finite() {
            return Err(Error::NonFinite("grad_check output"));
        }
        let mut grads = s.backward(out)?;
        s.param_grads(&mut grads)
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut s = Session::new(store);
        let out = forward(&mut s)?;
        s.value(out).item()
    };

    let base = eval(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tensors = Vec::with_capacity(targets.len());
    for &id in targets {
        let len = store.get(id).len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut kinks = 0;
        for &c in &coords {
            let original = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = original + opts.step;
            let plus = eval(store);
            store.get_mut(id).data_mut()[c] = original - opts.step;
            let minus = eval(store);
            store.get_mut(id).data_mut()[c] = original;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[c]);
            max_abs = max_abs.max(a.abs());
            let right = (plus - base) / opts.step;
            let left = (base - minus) / opts.step;
            if (right - left).abs() > KINK_THRESHOLD * right.abs().max(left.abs()).max(1e-3) {
                kinks += 1;
                continue;
            }
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            coords: coords.len(),
            max_rel_error: max_rel,
            max_abs_grad: max_abs,
            kinks,
        });
    }
    Ok(GradCheckReport { tensors })
}
