use crate::{AutodiffError, Tape, Tensor, Var};

/// Central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale, since
/// finite differences carry ~1e-10 absolute noise in `f64`.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Analytic vs. central-difference comparison, one entry per input.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

fn eval<F, E>(f: &F, inputs: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Compare the tape's gradients of scalar `f` against central differences
/// with step `eps`, for every element of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    gradcheck_with(f, inputs, eps)
}

/// [`gradcheck`] for functions with their own error type.
pub fn gradcheck_with<F, E>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_err = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&f, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&f, &work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        let worst = analytic[i]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&a, &n)| rel_err(a, n))
            .fold(0.0, f64::max);
        max_rel_err.push(worst);
        numeric.push(grad);
    }
    Ok(GradReport {
        max_rel_err,
        analytic,
        numeric,
    })
}
