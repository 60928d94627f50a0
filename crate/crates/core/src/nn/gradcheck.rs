use super::{Graph, NnError, Tensor, Var};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-5;

/// Compares `backward` against central differences `(f(x+eps) - f(x-eps)) / 2eps`
/// for every element of every input. `f` must build a scalar.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheck, NnError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut worst = GradCheck { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.max_rel_error || !rel.is_finite() {
                worst = GradCheck { max_rel_error: rel, input: i, index: j, analytic: a, numeric };
            }
        }
    }
    Ok(worst)
}
