//! Fixed-capacity store of critical vectors keyed by decaying priorities.
//!
//! Keys are gradient norms; payloads are momenta (CM) or gradients (CG).
//! When full, an incoming vector replaces the minimum-priority entry only if
//! its priority is strictly larger. Keys decay by `λ` each step; payloads
//! never do.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::vector::{dot, norm, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub priority: f64,
    pub payload: ParamVector,
    pub insertion_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InsertOutcome {
    Inserted,
    /// Carries the evicted priority.
    Replaced(f64),
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub variance: f64,
    pub cosine_agreement: f64,
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalBuffer {
    capacity: usize,
    decay: f64,
    entries: Vec<BufferEntry>,
    next_index: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    frozen: bool,
}

impl CriticalBuffer {
    pub fn new(capacity: usize, decay: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("buffer capacity must be positive".into()));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay must lie in (0, 1], got {decay}"
            )));
        }
        Ok(Self {
            capacity,
            decay,
            entries: Vec::with_capacity(capacity),
            next_index: 0,
            frozen: false,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn occupancy(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.payload.dim())
    }

    /// Test hook: a frozen buffer rejects every insertion.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Index of the entry that would be evicted next: minimum priority, oldest
    /// insertion among ties.
    fn min_entry(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.priority
                    .total_cmp(&b.priority)
                    .then(a.insertion_index.cmp(&b.insertion_index))
            })
            .map(|(i, _)| i)
    }

    pub fn min_priority(&self) -> Option<f64> {
        self.min_entry().map(|i| self.entries[i].priority)
    }

    pub fn maybe_insert(&mut self, priority: f64, payload: &[f64]) -> Result<InsertOutcome> {
        if !(priority >= 0.0) || !priority.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "priority must be finite and nonnegative, got {priority}"
            )));
        }
        if let Some(d) = self.dim() {
            check_dim(d, payload.len())?;
        }
        if self.frozen {
            return Ok(InsertOutcome::Rejected);
        }
        let entry = BufferEntry {
            priority,
            payload: ParamVector::from(payload),
            insertion_index: self.next_index,
        };
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            self.next_index += 1;
            return Ok(InsertOutcome::Inserted);
        }
        let idx = self.min_entry().expect("full buffer is nonempty");
        let evicted = self.entries[idx].priority;
        if priority > evicted {
            self.entries[idx] = entry;
            self.next_index += 1;
            Ok(InsertOutcome::Replaced(evicted))
        } else {
            Ok(InsertOutcome::Rejected)
        }
    }

    pub fn decay_priorities(&mut self) {
        for e in &mut self.entries {
            e.priority *= self.decay;
        }
    }

    /// Mean payload. An empty buffer yields the zero vector of `dim_hint`.
    pub fn mean(&self, dim_hint: usize) -> ParamVector {
        let Some(d) = self.dim() else {
            return ParamVector::zeros(dim_hint);
        };
        let mut acc = vec![0.0; d];
        for e in &self.entries {
            for (a, p) in acc.iter_mut().zip(e.payload.iter()) {
                *a += p;
            }
        }
        let n = self.entries.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    /// Spread and agreement of the stored payloads.
    ///
    /// `variance` averages the per-coordinate population variance. The
    /// agreement is the mean cosine between the largest-norm payload and each
    /// other payload; it is reported as 1 below two entries.
    pub fn stats(&self) -> BufferStats {
        let occupancy = self.entries.len();
        let Some(d) = self.dim() else {
            return BufferStats {
                variance: 0.0,
                cosine_agreement: 1.0,
                occupancy,
            };
        };
        let mean = self.mean(d);
        let n = occupancy as f64;
        let variance = (0..d)
            .map(|k| {
                self.entries
                    .iter()
                    .map(|e| (e.payload[k] - mean[k]).powi(2))
                    .sum::<f64>()
                    / n
            })
            .sum::<f64>()
            / d as f64;
        let cosine_agreement = if occupancy < 2 {
            1.0
        } else {
            let norms: Vec<f64> = self.entries.iter().map(|e| norm(&e.payload)).collect();
            let reference = (0..occupancy)
                .max_by(|&a, &b| {
                    norms[a].total_cmp(&norms[b]).then(
                        // Reverse so the smaller insertion index wins ties.
                        self.entries[b].insertion_index.cmp(&self.entries[a].insertion_index),
                    )
                })
                .unwrap();
            let total: f64 = (0..occupancy)
                .filter(|&i| i != reference)
                .map(|i| {
                    let denom = norms[i] * norms[reference];
                    if denom == 0.0 {
                        0.0
                    } else {
                        dot(&self.entries[i].payload, &self.entries[reference].payload) / denom
                    }
                })
                .sum();
            total / (occupancy - 1) as f64
        };
        BufferStats {
            variance,
            cosine_agreement,
            occupancy,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("buffer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}
