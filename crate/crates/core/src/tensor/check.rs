//! Finite-difference verification of tape gradients.

use rayon::prelude::*;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: Option<usize>,
    /// Gradient magnitudes below this are treated as this for normalization.
    pub scale_floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            max_entries: None,
            scale_floor: 1e-7,
        }
    }
}

impl CheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        CheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_abs_error: f64,
    /// Largest absolute discrepancy divided by the parameter's largest
    /// gradient magnitude (tape or numeric).
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradientCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<40} {:>6} entries  rel {:.3e}  {}",
                p.name,
                p.entries_checked,
                p.max_rel_error,
                if p.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every trainable parameter in `store`.
pub fn gradient_check<F>(store: &ParamStore, f: F, opts: &CheckOptions) -> Result<GradientCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.gradients(loss)?;

    let mut params = Vec::new();
    for id in store.trainable_ids() {
        let param = store.get(id);
        let len = param.value.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(max) if max < len => (0..max).map(|i| i * len / max).collect(),
            _ => (0..len).collect(),
        };
        let numeric: Vec<f64> = entries
            .par_iter()
            .map_init(
                || store.clone(),
                |local, &e| -> Result<f64> {
                    let orig = local.get(id).value.data()[e];
                    let mut eval = |v: f64| -> Result<f64> {
                        local.get_mut(id).value.data_mut()[e] = v;
                        let mut t = Tape::new();
                        let out = f(&mut t, local)?;
                        Ok(t.value(out).item())
                    };
                    let plus = eval(orig + opts.step)?;
                    let minus = eval(orig - opts.step)?;
                    local.get_mut(id).value.data_mut()[e] = orig;
                    Ok((plus - minus) / (2.0 * opts.step))
                },
            )
            .collect::<Result<_>>()?;

        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => entries.iter().map(|&e| g.data()[e]).collect(),
            None => vec![0.0; entries.len()],
        };
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(opts.scale_floor, |m, v| m.max(v.abs()));
        let max_abs_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let max_rel_error = max_abs_error / scale;
        params.push(ParamCheck {
            name: param.name.clone(),
            entries_checked: entries.len(),
            max_abs_error,
            max_rel_error,
            passed: max_rel_error <= opts.tolerance,
        });
    }
    Ok(GradientCheckReport {
        tolerance: opts.tolerance,
        params,
    })
}
