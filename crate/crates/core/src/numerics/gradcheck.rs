use super::{NumericsError, Tape, Tensor, Var};
use crate::numerics::tape::FaultInjection;

/// Gradient elements below this magnitude are compared on an absolute scale
/// (the denominator is floored), so finite-difference rounding noise on
/// near-zero gradients cannot produce spurious failures.
const REL_ERR_FLOOR: f64 = 1e-2;

/// Central finite-difference gradient verification.
///
/// `run` builds the scalar function once on a recording tape to obtain
/// analytic gradients, then re-evaluates it `2·numel` times with per-element
/// `±eps` perturbations. The function must be deterministic across calls:
/// anything stochastic inside (dropout) has to reseed from a fixed seed on
/// every invocation.
pub struct GradCheck {
    eps: f64,
    tol: f64,
    fault: Option<FaultInjection>,
}

/// Per-input worst-case relative error, plus the pass/fail verdict at `tol`.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub inputs: Vec<InputReport>,
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub index: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs
            .iter()
            .map(|i| i.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

impl GradCheck {
    pub fn new(eps: f64, tol: f64) -> Self {
        assert!(eps > 0.0, "finite-difference step must be positive");
        GradCheck {
            eps,
            tol,
            fault: None,
        }
    }

    /// Injects a corrupted gradient rule into the analytic pass. Used as a
    /// negative control: the resulting report must fail.
    pub fn with_fault(mut self, fault: FaultInjection) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn run<F, E>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport, E>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
        E: From<NumericsError>,
    {
        // Analytic gradients.
        let mut tape = match self.fault {
            Some(fault) => Tape::with_fault(fault),
            None => Tape::new(),
        };
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).len() != 1 {
            return Err(E::from(NumericsError::NotScalar {
                op: "grad_check",
                shape: tape.shape(loss).to_vec(),
            }));
        }
        tape.backward(loss).map_err(E::from)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.len()])
            })
            .collect();

        // Central differences, one element at a time.
        let eval = |perturbed: &[Tensor]| -> Result<f64, E> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t)).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.scalar_value(out))
        };

        let mut work: Vec<Tensor> = inputs.to_vec();
        let mut reports = Vec::with_capacity(inputs.len());
        for i in 0..inputs.len() {
            let mut max_rel = 0.0;
            let mut worst = 0;
            for e in 0..inputs[i].len() {
                let original = inputs[i].data()[e];
                work[i].data_mut()[e] = original + self.eps;
                let plus = eval(&work)?;
                work[i].data_mut()[e] = original - self.eps;
                let minus = eval(&work)?;
                work[i].data_mut()[e] = original;
                let numeric = (plus - minus) / (2.0 * self.eps);
                let err = rel_err(analytic[i][e], numeric);
                if err > max_rel {
                    max_rel = err;
                    worst = e;
                }
            }
            reports.push(InputReport {
                index: i,
                max_rel_err: max_rel,
                worst_element: worst,
            });
        }
        Ok(GradCheckReport {
            tol: self.tol,
            inputs: reports,
        })
    }
}

/// One-shot check with the default configuration.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<NumericsError>,
{
    GradCheck::new(eps, tol).run(f, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn linear_function_has_no_error() {
        let mut rng = RngState::new(11);
        let x = random_tensor(&[5], &mut rng);
        let report = grad_check(|tape, vars| tape.sum(vars[0]), &[x], 1e-6, 1e-5).unwrap();
        assert!(report.max_rel_err() < 1e-9, "{}", report.max_rel_err());
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = RngState::new(3);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        let report = grad_check(
            |tape, vars| {
                let prod = tape.matmul(vars[0], vars[1])?;
                tape.sum(prod)
            },
            &[a, b],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn layer_norm_gelu_chain_passes() {
        let mut rng = RngState::new(17);
        let x = random_tensor(&[2, 8], &mut rng);
        let gain = random_tensor(&[8], &mut rng);
        let bias = random_tensor(&[8], &mut rng);
        let report = grad_check(
            |tape, vars| {
                let normed = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                let act = tape.gelu(normed)?;
                tape.sum(act)
            },
            &[x, gain, bias],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_gelu_rule_fails() {
        let mut rng = RngState::new(17);
        let x = random_tensor(&[2, 8], &mut rng);
        let report = GradCheck::new(1e-6, 1e-5)
            .with_fault(FaultInjection::GeluGradient)
            .run(
                |tape, vars| {
                    let act = tape.gelu(vars[0])?;
                    tape.sum(act)
                },
                &[x],
            )
            .unwrap();
        assert!(
            !report.passed(),
            "negative control unexpectedly passed at {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn dropout_with_reseeded_mask_passes() {
        let mut rng = RngState::new(5);
        let x = random_tensor(&[4, 4], &mut rng);
        let report = grad_check(
            |tape, vars| {
                // Fixed seed per evaluation keeps the mask identical across
                // the finite-difference re-runs.
                let mut drop_rng = RngState::new(1234);
                let dropped = tape.dropout(vars[0], 0.3, true, &mut drop_rng)?;
                tape.sum(dropped)
            },
            &[x],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }
}
