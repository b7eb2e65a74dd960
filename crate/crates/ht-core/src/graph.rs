use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule of one operation: maps the gradient at the output to
/// gradients at each input (`None` for non-differentiable inputs such as
/// integer index tensors). Closures capture whatever activations they need.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Option<Tensor>>>>;

pub(crate) struct OpRecord {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

/// Gradients per leaf, keyed by tensor identity.
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    /// Gradient w.r.t. `leaf`. Leaves the graph never touched get zeros.
    pub fn get(&self, leaf: &Tensor) -> Tensor {
        match self.map.get(&leaf.id()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(leaf.shape()),
        }
    }

    pub fn contains(&self, leaf: &Tensor) -> bool {
        self.map.contains_key(&leaf.id())
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    *slot = Some(match slot.take() {
        None => grad,
        Some(prev) => {
            debug_assert_eq!(prev.shape(), grad.shape());
            let data: Vec<f64> = prev
                .data()
                .iter()
                .zip(grad.data())
                .map(|(a, b)| a + b)
                .collect();
            Tensor::from_vec(prev.shape(), data).expect("accumulate preserves shape")
        }
    });
}

/// Reverse-mode differentiation from `root`, seeded with `seed` (the
/// gradient of the overall objective w.r.t. `root`, usually ones for a
/// scalar loss). Each root may be differentiated once; a second call is a
/// lifecycle error. Gradients are accumulated into trainable leaves only.
pub fn backward(root: &Tensor, seed: &Tensor) -> Result<Gradients> {
    if seed.shape() != root.shape() {
        return Err(Error::Dimension(format!(
            "backward: seed shape {:?} does not match root shape {:?}",
            seed.shape(),
            root.shape()
        )));
    }
    if root.0.consumed.get() {
        return Err(Error::Lifecycle(
            "backward: graph already consumed by a previous backward pass".to_string(),
        ));
    }
    root.0.consumed.set(true);

    // Iterative post-order topological sort over tracked nodes.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    while let Some((node, child)) = stack.pop() {
        if child == 0 {
            if visited.contains_key(&node.id()) {
                continue;
            }
            visited.insert(node.id(), ());
        }
        let n_inputs = node.0.op.as_ref().map_or(0, |op| op.inputs.len());
        if child < n_inputs {
            stack.push((node.clone(), child + 1));
            let next = node.0.op.as_ref().expect("has op").inputs[child].clone();
            if next.tracked() && !visited.contains_key(&next.id()) {
                stack.push((next, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut grads: HashMap<u64, Option<Tensor>> = HashMap::new();
    grads.insert(root.id(), Some(seed.detach()));

    let mut out = HashMap::new();
    for node in order.iter().rev() {
        let grad = match grads.get_mut(&node.id()).and_then(|g| g.take()) {
            Some(g) => g,
            None => continue, // no gradient flowed here
        };
        if node.requires_grad() {
            out.insert(node.id(), grad.clone());
        }
        if let Some(op) = &node.0.op {
            let input_grads = (op.backward)(&grad)?;
            if input_grads.len() != op.inputs.len() {
                return Err(Error::Contract(format!(
                    "backward of `{}` returned {} gradients for {} inputs",
                    op.name,
                    input_grads.len(),
                    op.inputs.len()
                )));
            }
            for (input, g) in op.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !input.tracked() {
                    continue;
                }
                if g.shape() != input.shape() {
                    return Err(Error::Dimension(format!(
                        "backward of `{}` produced gradient shape {:?} for input shape {:?}",
                        op.name,
                        g.shape(),
                        input.shape()
                    )));
                }
                accumulate(grads.entry(input.id()).or_insert(None), g);
            }
        }
    }

    Ok(Gradients { map: out })
}

/// Central-difference gradient oracle: (f(x+eps e_i) - f(x-eps e_i)) / (2 eps)
/// per coordinate. `f` must be deterministic; this is checked by evaluating
/// it twice at `x` and demanding bit-identical results.
pub fn finite_diff_grad(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("finite_diff_grad: eps {eps} <= 0")));
    }
    let base = f(&x.detach())?;
    let again = f(&x.detach())?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(
            "finite_diff_grad: function is not deterministic at x".to_string(),
        ));
    }
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.data().to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[i] = orig - eps;
        let minus = f(&Tensor::from_vec(x.shape(), probe.clone())?)?;
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Tensor::from_vec(x.shape(), grad)
}

/// Max-norm relative error between two gradients, the metric used by all
/// finite-difference checks.
pub fn grad_rel_error(got: &Tensor, want: &Tensor) -> f64 {
    let scale = want
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    got.data()
        .iter()
        .zip(want.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}
