use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// `K` unit-norm class prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    /// Updates skipped because the blended vector had zero norm.
    pub degenerate_updates: usize,
}

fn unit(v: &mut [f32]) -> bool {
    let n = v
        .iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

impl PrototypeBank {
    /// Random unit vectors from `rng`.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, rng: &mut R) -> Self {
        let vectors = (0..classes)
            .map(|_| loop {
                let mut v: Vec<f32> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                    .collect();
                if unit(&mut v) {
                    break v;
                }
            })
            .collect();
        PrototypeBank {
            dim,
            vectors,
            degenerate_updates: 0,
        }
    }

    pub fn from_vectors(vectors: Vec<Vec<f32>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        let mut out = Vec::with_capacity(vectors.len());
        for mut v in vectors {
            if v.len() != dim || !unit(&mut v) {
                return Err(CoreError::Invalid(
                    "prototypes must share a dim and have non-zero norm".into(),
                ));
            }
            out.push(v);
        }
        Ok(PrototypeBank {
            dim,
            vectors: out,
            degenerate_updates: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class: usize) -> &[f32] {
        &self.vectors[class]
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    /// `psi_c <- normalize(m * psi_c + (1 - m) * z)`. A zero-norm blend
    /// leaves the prototype unchanged and is counted.
    pub fn update(&mut self, class: usize, z: &[f32], momentum: f32) {
        let psi = &mut self.vectors[class];
        let mut blend: Vec<f32> = psi
            .iter()
            .zip(z)
            .map(|(&p, &q)| momentum * p + (1.0 - momentum) * q)
            .collect();
        if unit(&mut blend) {
            *psi = blend;
        } else {
            self.degenerate_updates += 1;
        }
    }

    /// Replaces prototype `class` by the normalised vector `v`.
    pub fn set(&mut self, class: usize, v: &[f32]) -> bool {
        let mut v = v.to_vec();
        if v.len() == self.dim && unit(&mut v) {
            self.vectors[class] = v;
            true
        } else {
            false
        }
    }

    /// Index of the prototype with the largest dot product; ties go to the
    /// smallest index.
    pub fn nearest(&self, z: &[f32]) -> usize {
        let mut best = 0;
        let mut best_v = f32::NEG_INFINITY;
        for (c, psi) in self.vectors.iter().enumerate() {
            let s: f32 = psi.iter().zip(z).map(|(a, b)| a * b).sum();
            if s > best_v {
                best_v = s;
                best = c;
            }
        }
        best
    }
}
