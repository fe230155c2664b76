//! Finite-difference verification suite.
//!
//! Checks every primitive operation against central differences at a tight
//! tolerance, then the full dual-head model — all parameters, residual on
//! and off — at the model tolerance. This suite backs the `gradcheck` CLI
//! command and the acceptance tests; an injected gradient fault must make
//! it fail, which is how the suite itself is validated.

use crate::encoder::EncoderConfig;
use crate::heads::{make_task_model, DualHeadModel, ModelError};
use crate::numerics::{FaultInjection, GradCheck, NumericsError, RngState, Tape, Tensor, Var};
use crate::task::Task;
use crate::tokenizer::TokenizedBatch;

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Tolerance for the full model sweep.
pub const MODEL_TOL: f64 = 1e-4;
/// Per-element central-difference step.
pub const FD_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape and data agree")
}

fn checker(tol: f64, fault: Option<FaultInjection>) -> GradCheck {
    let base = GradCheck::new(FD_EPS, tol);
    match fault {
        Some(f) => base.with_fault(f),
        None => base,
    }
}

type BuildFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>;

fn primitive_checks(rng: &mut RngState) -> Vec<(String, Vec<Tensor>, Box<BuildFn>)> {
    let mut checks: Vec<(String, Vec<Tensor>, Box<BuildFn>)> = Vec::new();
    let mut push = |name: &str, inputs: Vec<Tensor>, f: Box<BuildFn>| {
        checks.push((name.to_string(), inputs, f));
    };

    push(
        "matmul",
        vec![random_tensor(&[3, 4], rng), random_tensor(&[4, 2], rng)],
        Box::new(|t, v| {
            let p = t.matmul(v[0], v[1])?;
            t.sum(p)
        }),
    );
    push(
        "batch_matmul",
        vec![random_tensor(&[2, 3, 4], rng), random_tensor(&[2, 4, 2], rng)],
        Box::new(|t, v| {
            let p = t.batch_matmul(v[0], v[1], false)?;
            t.sum(p)
        }),
    );
    push(
        "batch_matmul_transposed",
        vec![random_tensor(&[2, 3, 4], rng), random_tensor(&[2, 5, 4], rng)],
        Box::new(|t, v| {
            let p = t.batch_matmul(v[0], v[1], true)?;
            t.sum(p)
        }),
    );
    push(
        "add",
        vec![random_tensor(&[3, 5], rng), random_tensor(&[3, 5], rng)],
        Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    );
    push(
        "add_bias",
        vec![random_tensor(&[4, 6], rng), random_tensor(&[6], rng)],
        Box::new(|t, v| {
            let s = t.add_bias(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    );
    push(
        "add_rows",
        vec![random_tensor(&[2, 3, 4], rng), random_tensor(&[3, 4], rng)],
        Box::new(|t, v| {
            let s = t.add_rows(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    );
    push(
        "scale",
        vec![random_tensor(&[7], rng)],
        Box::new(|t, v| {
            let s = t.scale(v[0], -1.7)?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    );
    push(
        "mul",
        vec![random_tensor(&[4, 4], rng), random_tensor(&[4, 4], rng)],
        Box::new(|t, v| {
            let p = t.mul(v[0], v[1])?;
            t.sum(p)
        }),
    );
    push(
        "gelu",
        vec![random_tensor(&[3, 6], rng)],
        Box::new(|t, v| {
            let g = t.gelu(v[0])?;
            t.sum(g)
        }),
    );
    push(
        "layer_norm",
        vec![
            random_tensor(&[3, 8], rng),
            random_tensor(&[8], rng),
            random_tensor(&[8], rng),
        ],
        Box::new(|t, v| {
            let n = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let g = t.gelu(n)?;
            t.sum(g)
        }),
    );
    push(
        "dropout",
        vec![random_tensor(&[5, 5], rng)],
        Box::new(|t, v| {
            let mut rng = RngState::new(1234);
            let d = t.dropout(v[0], 0.3, true, &mut rng)?;
            let sq = t.mul(d, d)?;
            t.sum(sq)
        }),
    );
    push(
        "softmax",
        vec![random_tensor(&[4, 5], rng)],
        Box::new(|t, v| {
            let p = t.softmax_last_dim(v[0])?;
            let sq = t.mul(p, p)?;
            t.sum(sq)
        }),
    );
    push(
        "softmax_cross_entropy",
        vec![random_tensor(&[4, 3], rng)],
        Box::new(|t, v| t.softmax_cross_entropy(v[0], &[0, 2, 1, 2])),
    );
    push(
        "embed_lookup",
        vec![random_tensor(&[6, 4], rng)],
        Box::new(|t, v| {
            let e = t.embed_lookup(v[0], &[1, 5, 1, 0], &[4])?;
            let sq = t.mul(e, e)?;
            t.sum(sq)
        }),
    );
    push(
        "reshape_permute",
        vec![random_tensor(&[2, 3, 4], rng)],
        Box::new(|t, v| {
            let p = t.permute(v[0], &[2, 0, 1])?;
            let r = t.reshape(p, vec![8, 3])?;
            let sq = t.mul(r, r)?;
            t.sum(sq)
        }),
    );
    push(
        "select_slice",
        vec![random_tensor(&[2, 3, 4], rng), random_tensor(&[5, 4], rng)],
        Box::new(|t, v| {
            let sel = t.select_position(v[0], 1)?;
            let rows = t.slice_rows(v[1], 1, 2)?;
            let joined = t.add(sel, rows)?;
            let sq = t.mul(joined, joined)?;
            t.sum(sq)
        }),
    );
    checks
}

fn gradcheck_batch() -> TokenizedBatch {
    TokenizedBatch {
        ids: vec![0, 5, 9, 14, 0, 7, 3, 1],
        mask: vec![1, 1, 1, 1, 1, 1, 1, 0],
        lengths: vec![4, 3],
        rows: 2,
        width: 4,
    }
}

/// Full finite-difference sweep over every parameter of a micro-profile
/// dual-head model, in training mode with reseeded dropout masks.
fn model_check(
    residual: bool,
    fault: Option<FaultInjection>,
) -> Result<CheckResult, VerifyError> {
    let mut rng = RngState::stream(7700 + residual as u64, 0);
    let model: DualHeadModel =
        make_task_model(Task::A, EncoderConfig::micro(24), residual, &mut rng)?;
    let batch = gradcheck_batch();
    let labels_1 = [0usize, 1];
    let labels_2 = [1usize, 0];
    let mut params: Vec<Tensor> = Vec::new();
    model.visit(&mut |_, t| params.push(t.clone()));

    let report = checker(MODEL_TOL, fault).run(
        |tape, vars| -> Result<Var, VerifyError> {
            let model_vars = model.vars_from_iter(&mut vars.iter().copied());
            let mut dropout_rng = RngState::new(4242);
            let (_, _, losses) = model.forward_with_vars(
                tape,
                &model_vars,
                &batch,
                Some((&labels_1, &labels_2)),
                true,
                &mut dropout_rng,
            )?;
            Ok(losses.expect("labels were provided").2)
        },
        &params,
    )?;
    Ok(CheckResult {
        name: format!(
            "dual_head_model_residual_{}",
            if residual { "on" } else { "off" }
        ),
        max_rel_err: report.max_rel_err(),
        tol: MODEL_TOL,
        passed: report.passed(),
    })
}

/// Runs the whole suite. `fault` injects a corrupted gradient rule into
/// every check, serving as the negative control.
pub fn run_suite(fault: Option<FaultInjection>) -> Result<VerifyReport, VerifyError> {
    let mut rng = RngState::stream(31337, 0);
    let mut report = VerifyReport::default();
    for (name, inputs, build) in primitive_checks(&mut rng) {
        let result = checker(PRIMITIVE_TOL, fault).run(&*build, &inputs)?;
        report.checks.push(CheckResult {
            name,
            max_rel_err: result.max_rel_err(),
            tol: PRIMITIVE_TOL,
            passed: result.passed(),
        });
    }
    report.checks.push(model_check(false, fault)?);
    report.checks.push(model_check(true, fault)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_clean() {
        let report = run_suite(None).unwrap();
        assert!(
            report.passed(),
            "failures: {:?}",
            report.failures().collect::<Vec<_>>()
        );
        assert_eq!(
            report
                .checks
                .iter()
                .filter(|c| c.name.starts_with("dual_head_model"))
                .count(),
            2,
            "both residual variants must be covered"
        );
    }

    #[test]
    fn corrupted_gelu_gradient_fails_and_names_gelu() {
        let report = run_suite(Some(FaultInjection::GeluGradient)).unwrap();
        assert!(!report.passed());
        let failing: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        assert!(failing.contains(&"gelu"), "failing checks: {failing:?}");
    }
}
