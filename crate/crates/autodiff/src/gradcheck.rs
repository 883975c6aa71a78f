//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_tensor: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradients returned by `f` with central differences
/// of its loss. `f` must be deterministic and return one gradient per
/// parameter in `params` order.
pub fn grad_check<F>(params: &ParamStore, config: GradCheckConfig, mut f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<Tensor>), AutodiffError>,
{
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "grad_check",
            detail: format!("{} gradients for {} parameters", analytic.len(), params.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in params.ids() {
        let len = params.get(id).len();
        let coords: Vec<usize> = if len <= config.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, config.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + config.eps;
            let (plus, _) = f(&work)?;
            work.get_mut(id).data_mut()[j] = orig - config.eps;
            let (minus, _) = f(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let err = relative_error(analytic[id.0].data()[j], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
