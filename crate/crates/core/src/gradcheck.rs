//! Central finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::lm::{DecoderLM, ParamVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    /// `max |analytic - numeric| / (max |numeric| + 1e-8)` over probed entries.
    pub max_rel_error: f64,
    pub probed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives a fresh tape plus one leaf per parameter and must
/// return a scalar. `max_probes` bounds how many entries of each tensor are
/// perturbed (evenly strided) so large embeddings stay cheap to check.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &[(String, Tensor)],
    eps: f32,
    tol: f64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_with_tape(Tape::new(), loss_fn, params, eps, tol, max_probes)
}

fn check_with_tape<F>(
    mut tape: Tape,
    loss_fn: F,
    params: &[(String, Tensor)],
    eps: f32,
    tol: f64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(contract!("finite-difference step must be positive"));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NumericOverflow("finite-difference probe"));
        }
        Ok(v as f64)
    };

    let mut tensors: Vec<Tensor> = params
        .iter()
        .map(|(_, t)| t.clone().with_grad())
        .collect();
    let vars: Vec<Var> = tensors.iter().map(|p| tape.leaf(p)).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    compare(&names, &mut tensors, &analytic, eval, eps, tol, max_probes)
}

/// Gradient check of a loss over every parameter of `model`.
pub fn check_model<F>(model: &DecoderLM, loss_fn: F, eps: f32, tol: f64, max_probes: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &DecoderLM, &ParamVars) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(contract!("finite-difference step must be positive"));
    }
    let config = *model.config();
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let m = DecoderLM::from_parts(config, ps.to_vec())?;
        let mut tape = Tape::inference();
        let vars = m.attach(&mut tape);
        let loss = loss_fn(&mut tape, &m, &vars)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NumericOverflow("finite-difference probe"));
        }
        Ok(v as f64)
    };
    let mut tape = Tape::new();
    let vars = model.attach(&mut tape);
    let loss = loss_fn(&mut tape, model, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
    let names: Vec<String> = model.named_params().map(|(n, _)| n).collect();
    let mut tensors = model.params().to_vec();
    compare(&names, &mut tensors, &analytic, eval, eps, tol, max_probes)
}

fn compare<E>(
    names: &[String],
    tensors: &mut [Tensor],
    analytic: &[Vec<f32>],
    eval: E,
    eps: f32,
    tol: f64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    E: Fn(&[Tensor]) -> Result<f64>,
{
    let mut report = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let n = tensors[pi].numel();
        let stride = if max_probes == 0 || n <= max_probes {
            1
        } else {
            n.div_ceil(max_probes)
        };
        let mut max_abs = 0.0f64;
        let mut max_num = 0.0f64;
        let mut probed = 0;
        for j in (0..n).step_by(stride) {
            let orig = tensors[pi].data[j];
            tensors[pi].data[j] = orig + eps;
            let up = eval(tensors)?;
            tensors[pi].data[j] = orig - eps;
            let down = eval(tensors)?;
            tensors[pi].data[j] = orig;
            // the actual perturbation after f32 rounding
            let h = ((orig + eps) as f64) - ((orig - eps) as f64);
            let numeric = (up - down) / h;
            max_abs = max_abs.max((analytic[pi][j] as f64 - numeric).abs());
            max_num = max_num.max(numeric.abs());
            probed += 1;
        }
        report.push(ParamError {
            name: name.clone(),
            max_rel_error: max_abs / (max_num + 1e-8),
            probed,
        });
    }
    let pass = report.iter().all(|p| p.max_rel_error <= tol);
    Ok(GradCheckReport {
        params: report,
        tol,
        pass,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gelu_sum(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let y = tape.gelu(vars[0])?;
        tape.sum(y)
    }

    #[test]
    fn a_wrong_backward_rule_is_caught() {
        let x = Tensor::new(&[6], vec![-2.0, -0.7, -0.1, 0.3, 1.1, 2.5]).unwrap();
        let params = [(String::from("x"), x)];
        let good = check_with_tape(Tape::new(), gelu_sum, &params, 1e-2, 1e-2, 6).unwrap();
        assert!(good.pass, "{}", good.worst());
        let bad = check_with_tape(Tape::with_corrupted_gelu(), gelu_sum, &params, 1e-2, 1e-2, 6).unwrap();
        assert!(!bad.pass);
        assert!(bad.worst() > 0.1);
    }
}
