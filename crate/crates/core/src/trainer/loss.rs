//! Cross-entropy and contrastive losses, plain and on the tape.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::math::ln;
use crate::{Error, Matrix, Result};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    /// Hinge `max(0, margin + d(a, pos) - d(a, neg))` over every negative prototype.
    Contrastive {
        margin: f64,
    },
}

fn check_targets(rows: usize, cols: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= cols) {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: cols,
        });
    }
    Ok(())
}

/// Mean `-log p_y` over rows of a probability matrix.
pub fn cross_entropy(probs: &Matrix, targets: &[usize]) -> Result<f64> {
    check_targets(probs.rows(), probs.cols(), targets)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -ln(probs.get(r, t).clamp(PROB_FLOOR, 1.0)))
        .sum();
    Ok(total / targets.len() as f64)
}

/// Mean hinge over (row, negative column) triples of a distance matrix.
pub fn contrastive(distances: &Matrix, targets: &[usize], margin: f64) -> Result<f64> {
    check_targets(distances.rows(), distances.cols(), targets)?;
    let p = distances.cols();
    if targets.is_empty() || p < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let pos = distances.get(r, t);
        for j in (0..p).filter(|&j| j != t) {
            total += (margin + pos - distances.get(r, j)).max(0.0);
        }
    }
    Ok(total / (targets.len() * (p - 1)) as f64)
}

fn one_hot(rows: usize, cols: usize, targets: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for (r, &t) in targets.iter().enumerate() {
        m.set(r, t, 1.0);
    }
    m
}

/// Records the loss of an `|H| × p` distance matrix.
pub fn record_loss(
    tape: &mut Tape,
    distances: Var,
    targets: &[usize],
    kind: LossKind,
) -> Result<Var> {
    let (rows, cols) = tape.value(distances).shape();
    check_targets(rows, cols, targets)?;
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    let hot = tape.constant(one_hot(rows, cols, targets));
    match kind {
        LossKind::CrossEntropy => {
            let neg = tape.neg(distances)?;
            let probs = tape.softmax(neg)?;
            let picked = tape.mul(probs, hot)?;
            let p_y = tape.sum_pool(picked)?;
            let p_y = tape.clamp(p_y, PROB_FLOOR, 1.0)?;
            let logs = tape.log(p_y)?;
            let total = tape.sum(logs)?;
            tape.scale(total, -1.0 / rows as f64)
        }
        LossKind::Contrastive { margin } => {
            let picked = tape.mul(distances, hot)?;
            let pos = tape.sum_pool(picked)?;
            let ones = tape.constant(Matrix::filled(rows, cols, 1.0));
            let pos = tape.mul_col(ones, pos)?;
            let gap = tape.sub(pos, distances)?;
            let gap = tape.add_scalar(gap, margin)?;
            let hinge = tape.clamp(gap, 0.0, f64::INFINITY)?;
            let mask: Vec<f64> = one_hot(rows, cols, targets)
                .as_slice()
                .iter()
                .map(|h| 1.0 - h)
                .collect();
            let mask = tape.constant(Matrix::from_vec(rows, cols, mask)?);
            let hinge = tape.mul(hinge, mask)?;
            let total = tape.sum(hinge)?;
            tape.scale(total, 1.0 / (rows * (cols - 1).max(1)) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let probs = Matrix::filled(3, 4, 0.25);
        let l = cross_entropy(&probs, &[0, 1, 3]).unwrap();
        assert!((l - ln(4.0)).abs() < 1e-15);
    }

    #[test]
    fn one_hot_logits_give_zero() {
        let probs = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(cross_entropy(&probs, &[0, 1]).unwrap(), 0.0);
        let wrong = cross_entropy(&probs, &[1, 1]).unwrap();
        assert!((wrong - 0.5 * -ln(PROB_FLOOR)).abs() < 1e-9);
    }

    #[test]
    fn inactive_hinge() {
        let d = Matrix::from_rows(&[[0.2, 1.5, 1.3]]).unwrap();
        assert_eq!(contrastive(&d, &[0], 1.0).unwrap(), 0.0);
        assert!((contrastive(&d, &[0], 1.2).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn bad_targets() {
        let probs = Matrix::filled(1, 2, 0.5);
        assert!(cross_entropy(&probs, &[2]).is_err());
        assert!(cross_entropy(&probs, &[]).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let d = Matrix::from_rows(&[[0.3, 0.9, 1.4], [1.1, 0.2, 0.25]]).unwrap();
        let targets = [0, 2];
        for kind in [
            LossKind::CrossEntropy,
            LossKind::Contrastive { margin: 0.5 },
        ] {
            let mut tape = Tape::new();
            let v = tape.leaf(d.clone(), true);
            let l = record_loss(&mut tape, v, &targets, kind).unwrap();
            let plain = match kind {
                LossKind::CrossEntropy => {
                    let probs = super::super::episode::softmax_neg_rows(&d);
                    cross_entropy(&probs, &targets).unwrap()
                }
                LossKind::Contrastive { margin } => contrastive(&d, &targets, margin).unwrap(),
            };
            assert!((tape.value(l).get(0, 0) - plain).abs() < 1e-14);
            tape.backward(l).unwrap();
            assert!(tape.grad(v).unwrap().max_abs() > 0.0);
        }
    }
}
