use travgrid_nn::Tensor;

use crate::error::{CoreError, Result};

/// Fixed-capacity FIFO of key embeddings and their predicted classes,
/// stored index-aligned in one ring.
#[derive(Clone, Debug, PartialEq)]
pub struct QueuePair {
    dim: usize,
    capacity: usize,
    embeddings: Vec<f32>,
    labels: Vec<usize>,
    cursor: usize,
}

impl QueuePair {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(CoreError::Config(
                "queue capacity and dim must be positive".into(),
            ));
        }
        Ok(QueuePair {
            dim,
            capacity,
            embeddings: Vec::new(),
            labels: Vec::new(),
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends one pair, overwriting the oldest once full.
    pub fn push(&mut self, embedding: &[f32], label: usize) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(CoreError::Shape(format!(
                "queue expects dim {}, got {}",
                self.dim,
                embedding.len()
            )));
        }
        if self.labels.len() < self.capacity {
            self.embeddings.extend_from_slice(embedding);
            self.labels.push(label);
        } else {
            let c = self.cursor;
            self.embeddings[c * self.dim..(c + 1) * self.dim].copy_from_slice(embedding);
            self.labels[c] = label;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Stored embeddings as an `len x dim` matrix (slot order).
    pub fn embeddings_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(self.len(), self.dim, self.embeddings.clone()).expect("queue layout")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_and_keeps_pairs_aligned() {
        let mut q = QueuePair::new(3, 2).unwrap();
        for i in 0..5 {
            q.push(&[i as f32, -(i as f32)], i).unwrap();
        }
        assert_eq!(q.len(), 3);
        for s in 0..3 {
            assert_eq!(q.embedding(s)[0] as usize, q.label(s));
        }
        let mut labels = q.labels().to_vec();
        labels.sort();
        assert_eq!(labels, vec![2, 3, 4]);
        assert!(q.push(&[1.0], 0).is_err());
    }
}
