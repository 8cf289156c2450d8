//! Dense linear algebra, reverse-mode gradients and small numeric helpers.

mod graph;
mod matrix;
mod pca;

use serde::{Deserialize, Serialize};

pub use graph::{Graph, Var, LOG_CLAMP};
pub use matrix::{dot, norm, Matrix};
pub use pca::project_2d;

use crate::error::{Error, Result};

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine_similarity",
            expected: format!("length {}", a.len()),
            got: format!("length {}", b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::DegenerateVector { row: 0 });
    }
    if nb == 0.0 {
        return Err(Error::DegenerateVector { row: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Min-max scaling onto `[0, 1]`. A constant input maps to all `0.5`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = min_max(values).ok_or(Error::Empty("minmax_normalize"))?;
    let span = hi - lo;
    if span == 0.0 {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

pub(crate) fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    let mut it = values.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

/// A named parameter tensor with its gradient slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    #[serde(skip)]
    pub grad: Option<Matrix>,
}

/// Ordered set of named parameters.
///
/// Gradient slots always have the shape of their parameter once populated;
/// [`ParamSet::zero_grad`] clears them between steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its position.
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name:?}")))?;
        self.params[idx].value.same_shape(&value, "ParamSet::set")?;
        self.params[idx].value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Gradient of parameter `idx`, or zeros if it was unreachable.
    pub fn grad(&self, idx: usize) -> Matrix {
        let p = &self.params[idx];
        p.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Places every parameter on `graph` as a leaf, in order.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| graph.leaf(p.value.clone())).collect()
    }
}

/// Evaluates a scalar expression and stores the gradient of every parameter.
///
/// `expr` receives the graph and the parameters bound in [`ParamSet`] order
/// and returns the 1x1 output node.
pub fn evaluate_with_gradients<F>(params: &mut ParamSet, expr: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let out = expr(&mut graph, &vars)?;
    let value = graph.scalar(out);
    let mut grads = graph.backward(out)?;
    for (p, v) in params.iter_mut().zip(&vars) {
        p.grad = grads[v.index()].take();
    }
    Ok(value)
}

/// Forward-only evaluation of the same kind of expression.
pub fn evaluate<F>(params: &ParamSet, expr: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars = params.bind(&mut graph);
    let out = expr(&mut graph, &vars)?;
    Ok(graph.scalar(out))
}

/// Compares analytic gradients against central differences with the given
/// step and returns the largest `|analytic - numeric| / (|analytic| + 1e-12)`.
pub fn finite_difference_check<F>(params: &ParamSet, expr: F, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut analytic = params.clone();
    evaluate_with_gradients(&mut analytic, &expr)?;

    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for idx in 0..params.len() {
        let grad = analytic.grad(idx);
        for k in 0..params.get(idx).value.data().len() {
            let original = params.get(idx).value.data()[k];
            probe.params[idx].value.data_mut()[k] = original + step;
            let plus = evaluate(&probe, &expr)?;
            probe.params[idx].value.data_mut()[k] = original - step;
            let minus = evaluate(&probe, &expr)?;
            probe.params[idx].value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            worst = worst.max((a - numeric).abs() / (a.abs() + 1e-12));
        }
    }
    Ok(worst)
}
