use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mae,
    Mse,
}

impl Loss {
    pub fn parse(s: &str) -> Result<Loss> {
        match s {
            "mae" => Ok(Loss::Mae),
            "mse" => Ok(Loss::Mse),
            _ => Err(Error::Config(format!("unknown loss {s:?}, expected mae or mse"))),
        }
    }
}

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    Ok(())
}

/// Mean loss over every element of one head.
pub fn head_loss(loss: Loss, pred: &Tensor, target: &Tensor) -> Result<f64> {
    check(pred, target)?;
    let n = pred.len().max(1) as f64;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| match loss {
            Loss::Mae => (p - t).abs(),
            Loss::Mse => (p - t) * (p - t),
        })
        .sum();
    Ok(s / n)
}

/// Sum of per-head mean losses and its gradient with respect to every head.
/// The subgradient of `|x|` at 0 is taken as 0.
pub fn loss_and_grads(loss: Loss, preds: &[Tensor], targets: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted heads, {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        total += head_loss(loss, p, t)?;
        let n = p.len().max(1) as f64;
        let g = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| match loss {
                Loss::Mae => {
                    let d = a - b;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                Loss::Mse => 2.0 * (a - b) / n,
            })
            .collect();
        grads.push(Tensor::new(p.dims().to_vec(), g)?);
    }
    Ok((total, grads))
}
