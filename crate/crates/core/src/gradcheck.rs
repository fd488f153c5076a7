//! Central finite-difference verification of tape gradients.
//!
//! For a scalar-valued computation `f`, every tape gradient entry is compared
//! against `(f(x+h) - f(x-h)) / 2h`. Perturbed evaluations whose kink
//! signature differs between the two sides (a relu input changed sign, a
//! column-max argmax moved) sit on a non-differentiable point; those entries
//! are reported as excluded rather than failed.

use crate::error::{Error, Result};
use crate::fmath;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Cap on elements checked per input; `None` checks all of them.
    /// Sampling is a deterministic function of `seed`.
    pub max_checks_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_checks_per_input: None,
            seed: 0,
        }
    }
}

/// Outcome for one checked input tensor.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.inputs.iter().all(|i| i.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|i| i.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn excluded(&self) -> usize {
        self.inputs.iter().map(|i| i.excluded).sum()
    }
}

/// Relative error with a unit floor: `|a - b| / max(1, |a|, |b|)`.
fn rel_err(a: f64, b: f64) -> f64 {
    fmath::fabs(a - b) / fmath::fabs(a).max(fmath::fabs(b)).max(1.0)
}

/// Checks the tape gradient of `f` with respect to every named input.
///
/// `f` must map the leased inputs to a scalar; it is re-evaluated `2m + 1`
/// times for `m` checked elements and must be a pure function of them.
pub fn grad_check<F>(
    f: F,
    inputs: &[(&str, Tensor)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    for (name, t) in inputs {
        if !t.all_finite() {
            return Err(Error::contract(
                "grad_check",
                alloc::format!("input {name} contains non-finite values"),
            ));
        }
    }

    // Analytic pass.
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        if tape.shape(loss) != [1] {
            return Err(Error::contract(
                "grad_check",
                alloc::format!("f must produce a scalar, got shape {:?}", tape.shape(loss)),
            ));
        }
        tape.backward(loss)?;
        vars.iter()
            .map(|&v| tape.grad(v).expect("leaf requires a gradient"))
            .collect()
    };

    let mut work: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut sample_rng = rng::seeded(opts.seed);
    let mut reports = Vec::with_capacity(inputs.len());

    for (i, (name, t)) in inputs.iter().enumerate() {
        let n = t.numel();
        let indices: Vec<usize> = match opts.max_checks_per_input {
            Some(m) if m < n => rng::sample_indices(&mut sample_rng, n, m),
            _ => (0..n).collect(),
        };

        let mut report = InputReport {
            name: name.to_string(),
            checked: 0,
            excluded: 0,
            max_rel_err: 0.0,
            worst_index: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };

        for &e in &indices {
            let original = work[i].data()[e];
            work[i].data_mut()[e] = original + opts.step;
            let (loss_plus, sig_plus) = evaluate(&f, &work)?;
            work[i].data_mut()[e] = original - opts.step;
            let (loss_minus, sig_minus) = evaluate(&f, &work)?;
            work[i].data_mut()[e] = original;

            if sig_plus != sig_minus {
                report.excluded += 1;
                continue;
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * opts.step);
            let a = analytic[i].data()[e];
            let err = rel_err(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_index.is_none() {
                report.max_rel_err = err;
                report.worst_index = Some(e);
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        reports.push(report);
    }

    Ok(GradCheckReport {
        tol: opts.tol,
        inputs: reports,
    })
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, crate::tape::KinkSignature)>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let value = tape.scalar_value(loss)?;
    Ok((value, tape.kink_signature()))
}
