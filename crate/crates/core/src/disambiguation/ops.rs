//! Per-token label operations and reference (tape-free) loss evaluations.

use travgrid_nn::graph::{log_sum_exp, LOG_CLAMP};

/// Result of a masked arg-max.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedPrediction {
    pub class: usize,
    /// Every masked score was zero, so the arg-max fell back to the
    /// candidate set alone.
    pub fell_back: bool,
}

/// `argmax_j probs_j * y_j`, ties to the smallest index.
pub fn masked_predict(probs: &[f32], candidates: &[f32]) -> MaskedPrediction {
    let mut best = None;
    let mut best_v = f32::NEG_INFINITY;
    for (j, (&p, &y)) in probs.iter().zip(candidates).enumerate() {
        let v = p * y;
        if v > best_v {
            best_v = v;
            best = Some(j);
        }
    }
    if best_v > 0.0 {
        return MaskedPrediction {
            class: best.unwrap_or(0),
            fell_back: false,
        };
    }
    let class = candidates.iter().position(|&y| y > 0.0).unwrap_or(0);
    MaskedPrediction {
        class,
        fell_back: true,
    }
}

/// `y_n <- m * y_n + (1 - m) * onehot(target)`.
pub fn refine_label(soft: &mut [f32], target: usize, momentum: f32) {
    for (j, v) in soft.iter_mut().enumerate() {
        let hot = if j == target { 1.0 } else { 0.0 };
        *v = momentum * *v + (1.0 - momentum) * hot;
    }
}

/// `-sum_j t_j ln max(p_j, 1e-12)` in f64.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| -t * p.max(LOG_CLAMP).ln())
        .sum()
}

/// Contrastive loss of one query against a queue: mean over the entries
/// labelled `class` of `-log softmax(q . Q / tau)`. Zero when no entry has
/// that label.
pub fn contrastive_loss(
    query: &[f64],
    queue: &[Vec<f64>],
    labels: &[usize],
    class: usize,
    tau: f64,
) -> f64 {
    let logits: Vec<f64> = queue
        .iter()
        .map(|k| k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / tau)
        .collect();
    let lse = log_sum_exp(&logits);
    let pos: Vec<f64> = logits
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(&l, _)| lse - l)
        .collect();
    if pos.is_empty() {
        0.0
    } else {
        pos.iter().sum::<f64>() / pos.len() as f64
    }
}

/// Shannon entropy (nats) of a distribution; zero entries contribute zero.
pub fn entropy(p: &[f32]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -(v as f64) * (v as f64).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_predict_examples() {
        let f = [0.1, 0.5, 0.3, 0.1];
        assert_eq!(masked_predict(&f, &[1.0, 0.0, 0.0, 0.0]).class, 0);
        assert_eq!(masked_predict(&f, &[1.0; 4]).class, 1);
        assert_eq!(masked_predict(&[0.25; 4], &[1.0; 4]).class, 0);
        let fb = masked_predict(&[0.0, 0.5, 0.5, 0.0], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            fb,
            MaskedPrediction {
                class: 0,
                fell_back: true
            }
        );
    }

    #[test]
    fn refine_examples() {
        let mut y = [0.25f32; 4];
        refine_label(&mut y, 1, 0.99);
        let expect = [0.2475, 0.2575, 0.2475, 0.2475];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut hot = [0.0f32, 1.0, 0.0, 0.0];
        refine_label(&mut hot, 1, 0.9);
        assert_eq!(hot, [0.0, 1.0, 0.0, 0.0]);
        let mut z = [0.25f32; 4];
        refine_label(&mut z, 3, 0.0);
        assert_eq!(z, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
        assert!((cross_entropy(&[0.25; 4], &[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!(
            (cross_entropy(&[0.7, 0.1, 0.1, 0.1], &[1.0, 0.0, 0.0, 0.0]) - 0.356_674_943_9).abs()
                < 1e-9
        );
    }

    #[test]
    fn contrastive_examples() {
        let q = vec![1.0, 0.0];
        let queue = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = contrastive_loss(&q, &queue, &[2, 0], 2, 0.07);
        let expect = (1.0 + (-1.0f64 / 0.07).exp()).ln();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 6.2e-7).abs() < 1e-8);
        assert_eq!(contrastive_loss(&q, &queue, &[0, 0], 2, 0.07), 0.0);
    }
}
