//! Finite-difference verification of reverse-mode gradients.
//!
//! For each coordinate of each named input section the checker compares the
//! tape's gradient against a central difference `(f(x+e) - f(x-e)) / 2e` of
//! the scalar loss. Coordinates whose perturbation changes the branch digest
//! (a ReLU flipping sides, a max pool changing winners between the two
//! evaluations) sit on a kink where the two-sided slope is meaningless; they
//! are skipped and counted rather than compared. Run this in 64-bit mode:
//! f32 rounding swamps the comparison.

use super::{DiffTensor, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Relative error denominator floor: coordinates whose analytic and
    /// numeric gradients are both below this magnitude are judged on
    /// absolute error against `tolerance * denom_floor`.
    pub denom_floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { epsilon: 1e-5, tolerance: 1e-4, denom_floor: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct SectionReport {
    pub name: String,
    /// Coordinates compared against finite differences.
    pub checked: usize,
    /// Coordinates skipped because the perturbation straddled a kink.
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate, when any was checked.
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub sections: Vec<SectionReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// One line per section, suitable for terminal output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let status = if s.max_rel_err <= self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{status:4} {:<28} checked {:>6}  skipped {:>3}  max rel err {:.3e}\n",
                s.name, s.checked, s.skipped_kinks, s.max_rel_err
            ));
        }
        out.push_str(&format!(
            "overall max rel err {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// One named, shaped input section for the checker.
#[derive(Debug, Clone)]
pub struct CheckSection<T> {
    pub name: String,
    pub values: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> CheckSection<T> {
    pub fn new(name: impl Into<String>, values: Vec<T>, shape: Vec<usize>) -> Self {
        CheckSection { name: name.into(), values, shape }
    }
}

/// Verifies the tape gradient of `f` at the given inputs.
///
/// `f` must build a scalar loss from the supplied tensors using one tape and
/// must be deterministic: any internal randomness has to be fixed across
/// calls, or finite differences measure noise instead of slope.
pub fn check_gradients<T, F>(
    f: &F,
    sections: &[CheckSection<T>],
    settings: &GradCheckSettings,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[DiffTensor<T>]) -> Result<DiffTensor<T>>,
{
    if sections.is_empty() {
        return Err(Error::EmptyInput("gradient check sections"));
    }

    // Reverse-mode pass over the full input set.
    let mut tape = Tape::<T>::recording();
    let handles: Vec<DiffTensor<T>> = sections
        .iter()
        .map(|s| tape.leaf(s.values.clone(), s.shape.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&mut tape, &handles)?;
    let loss_value = Scalar::as_f64(loss.item());
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { context: "gradient check loss".into() });
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = handles
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let g = tape
                .grad(h)
                .map(|g| g.iter().map(|v| v.as_f64()).collect::<Vec<f64>>())
                .unwrap_or_else(|| vec![0.0; sections[i].values.len()]);
            g
        })
        .collect();
    for (s, g) in sections.iter().zip(&analytic) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("gradient of section {}", s.name) });
        }
    }

    // Evaluates the loss with one coordinate displaced, returning the value
    // and the branch digest of the run.
    let eval = |sections_now: &[CheckSection<T>]| -> Result<(f64, super::KinkDigest)> {
        let mut tape = Tape::<T>::evaluating();
        tape.track_kinks();
        let handles: Vec<DiffTensor<T>> = sections_now
            .iter()
            .map(|s| tape.leaf(s.values.clone(), s.shape.clone()))
            .collect::<Result<_>>()?;
        let loss = f(&mut tape, &handles)?;
        let v = Scalar::as_f64(loss.item());
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "gradient check loss".into() });
        }
        Ok((v, tape.kink_digest().expect("kink tracking enabled")))
    };

    let eps = T::from_f64(settings.epsilon);
    let mut work: Vec<CheckSection<T>> = sections.to_vec();
    let mut reports = Vec::with_capacity(sections.len());
    let mut global_max = 0.0f64;

    for si in 0..sections.len() {
        let mut max_rel = 0.0f64;
        let mut worst = None;
        let mut skipped = 0usize;
        let mut checked = 0usize;

        for ci in 0..sections[si].values.len() {
            let original = work[si].values[ci];

            work[si].values[ci] = original + eps;
            let (f_plus, digest_plus) = eval(&work)?;
            work[si].values[ci] = original - eps;
            let (f_minus, digest_minus) = eval(&work)?;
            work[si].values[ci] = original;

            if digest_plus != digest_minus {
                skipped += 1;
                continue;
            }

            let fd = (f_plus - f_minus) / (2.0 * settings.epsilon);
            let a = analytic[si][ci];
            let denom = a.abs().max(fd.abs()).max(settings.denom_floor);
            let rel = (a - fd).abs() / denom;
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some(ci);
            }
        }

        global_max = global_max.max(max_rel);
        reports.push(SectionReport {
            name: sections[si].name.clone(),
            checked,
            skipped_kinks: skipped,
            max_rel_err: max_rel,
            worst_index: worst,
        });
    }

    Ok(GradCheckReport {
        sections: reports,
        max_rel_err: global_max,
        tolerance: settings.tolerance,
        passed: global_max <= settings.tolerance,
    })
}
