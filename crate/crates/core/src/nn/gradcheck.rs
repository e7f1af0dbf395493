use super::{GradBuffer, ParamStore, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const STEP: f64 = 1e-5;
/// Denominator floor so coordinates with vanishing gradients compare absolutely.
const REL_FLOOR: f64 = 1e-5;
const MIN_COORDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<GradCheckWorst>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Picks the coordinates of one tensor to probe: all of them for small
/// tensors, otherwise `coords` samples with half drawn from coordinates whose
/// analytic gradient is nonzero.
fn pick(analytic: &[f64], coords: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = analytic.len();
    if n <= coords {
        return (0..n).collect();
    }
    let nonzero: Vec<usize> = (0..n).filter(|&j| analytic[j] != 0.0).collect();
    let from_nz = (coords / 2).min(nonzero.len());
    let mut out: Vec<usize> = sample(rng, nonzero.len(), from_nz)
        .into_iter()
        .map(|k| nonzero[k])
        .collect();
    for j in sample(rng, n, n.min(coords * 2)) {
        if out.len() >= coords {
            break;
        }
        if !out.contains(&j) {
            out.push(j);
        }
    }
    out.sort_unstable();
    out
}

/// Compares `analytic` against central finite differences of `loss` around
/// `store`, probing at least 64 coordinates per tensor (or every coordinate
/// in smaller tensors). Frozen tensors are skipped.
pub fn grad_check(
    store: &ParamStore,
    analytic: &GradBuffer,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        let a = analytic.get(id);
        for j in pick(a, MIN_COORDS, &mut rng) {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + STEP;
            let up = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - STEP;
            let down = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (a[j] - numeric).abs() / a[j].abs().max(numeric.abs()).max(REL_FLOOR);
            checked += 1;
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some(GradCheckWorst {
                    param: store.name(id).to_string(),
                    index: j,
                    analytic: a[j],
                    numeric,
                });
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        checked,
        tolerance,
        passed: max_rel < tolerance,
    })
}
