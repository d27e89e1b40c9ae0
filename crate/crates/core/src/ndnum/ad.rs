//! Functional entry points: `jvp`, `vjp`, `grad`.

use super::dual::{Dual, DualOver};
use super::ops::Ops;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A map `R^shape -> R^shape'` written once against [`Ops`].
pub trait DiffMap {
    fn apply<B: Ops>(&self, b: &mut B, x: &B::V) -> B::V;
}

/// A scalar function of a parameter collection.
pub trait ParamLoss {
    fn eval<B: Ops>(&self, b: &mut B, params: &[B::V]) -> B::V;
}

fn check_fault<B: Ops>(b: &B) -> Result<()> {
    match b.fault() {
        Some(op) => Err(Error::numerical(op, "non-finite intermediate value")),
        None => Ok(()),
    }
}

/// Returns `(f(x), J_f(x) v)` by dual-number propagation.
pub fn jvp<F: DiffMap>(f: &F, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.shape() != v.shape() {
        return Err(Error::invalid(format!(
            "jvp tangent shape {:?} does not match input {:?}",
            v.shape(),
            x.shape()
        )));
    }
    let mut b = DualOver::plain();
    let out = f.apply(&mut b, &Dual::new(x.clone(), v.clone()));
    check_fault(&b)?;
    let tangent = out
        .tangent
        .unwrap_or_else(|| Tensor::zeros(out.primal.shape()));
    Ok((out.primal, tangent))
}

/// Returns `J_f(x)ᵀ w` by one reverse sweep.
pub fn vjp<F: DiffMap>(f: &F, x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let mut t = Tape::new();
    let xv = t.var(x.clone());
    let y = f.apply(&mut t, &xv);
    check_fault(&t)?;
    if t.value(y).shape() != w.shape() {
        return Err(Error::invalid(format!(
            "vjp cotangent shape {:?} does not match output {:?}",
            w.shape(),
            t.value(y).shape()
        )));
    }
    let g = t.backward_with(y, w.clone());
    Ok(g.wrt(xv))
}

/// Value and reverse-mode gradient of a scalar loss.
pub fn value_and_grad<L: ParamLoss>(loss: &L, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let mut t = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| t.var(p.clone())).collect();
    let out = loss.eval(&mut t, &vars);
    check_fault(&t)?;
    if t.value(out).len() != 1 {
        return Err(Error::invalid(format!(
            "loss must be scalar, got shape {:?}",
            t.value(out).shape()
        )));
    }
    let value = t.value(out).item();
    let mut g = t.backward(out);
    Ok((value, vars.into_iter().map(|v| g.take(v)).collect()))
}

pub fn grad<L: ParamLoss>(loss: &L, params: &[Tensor]) -> Result<Vec<Tensor>> {
    value_and_grad(loss, params).map(|(_, g)| g)
}
