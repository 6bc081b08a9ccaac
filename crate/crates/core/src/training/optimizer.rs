use crate::error::{Error, Result};
use crate::model::BranchedNetwork;
use crate::tensor_core::Tensor;

/// Momentum buffers, one per parameter tensor, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn for_network(net: &BranchedNetwork) -> Self {
        let params: Vec<&Tensor> = (0..net.num_params()).map(|i| net.param_at(i)).collect();
        Self::zeros_like(&params)
    }

    pub fn from_velocities(velocity: Vec<Tensor>) -> Self {
        Self { velocity }
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v ← μv + g + λθ`, then `θ ← θ − lr·v`. Pass `weight_decay = 0` for exempt tensors.
pub fn sgd_update(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, hyper: SgdHyper) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::shape(
            "sgd_momentum_step",
            "parameter",
            format!(
                "param {:?}, grad {:?}, velocity {:?}",
                param.shape(),
                grad.shape(),
                velocity.shape()
            ),
        ));
    }
    let SgdHyper {
        lr,
        momentum,
        weight_decay,
    } = hyper;
    for ((t, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g + weight_decay * *t;
        *t -= lr * *v;
    }
    Ok(())
}

/// One optimizer step over parallel slices. `decays[i]` selects which
/// tensors receive weight decay.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    decays: &[bool],
    state: &mut OptimizerState,
    hyper: SgdHyper,
) -> Result<()> {
    check_lengths(params.len(), grads.len(), decays.len(), state.len())?;
    for (i, p) in params.iter_mut().enumerate() {
        sgd_update(p, &grads[i], &mut state.velocity[i], exempt(hyper, decays[i]))?;
    }
    Ok(())
}

/// [`sgd_momentum_step`] applied to a network's registry.
pub fn sgd_step_network(
    net: &mut BranchedNetwork,
    grads: &[Tensor],
    state: &mut OptimizerState,
    hyper: SgdHyper,
) -> Result<()> {
    let n = net.num_params();
    check_lengths(n, grads.len(), n, state.len())?;
    for (i, g) in grads.iter().enumerate() {
        let h = exempt(hyper, net.decays(i));
        sgd_update(net.param_at_mut(i), g, &mut state.velocity[i], h)?;
    }
    Ok(())
}

fn exempt(hyper: SgdHyper, decays: bool) -> SgdHyper {
    if decays {
        hyper
    } else {
        SgdHyper {
            weight_decay: 0.0,
            ..hyper
        }
    }
}

fn check_lengths(params: usize, grads: usize, decays: usize, state: usize) -> Result<()> {
    if params != grads || params != decays || params != state {
        return Err(Error::shape(
            "sgd_momentum_step",
            "tensor count",
            format!("{params} params, {grads} grads, {decays} decay flags, {state} velocity buffers"),
        ));
    }
    Ok(())
}
