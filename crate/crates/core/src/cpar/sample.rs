use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encode::{from_minutes, Variable};
use super::model::{ContextVector, CparModel, Stepper, StepParams, VariableParams};
use super::CparError;
use crate::data_model::{CellValue, Row, Sequence, SequenceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "length")]
pub enum SampleLength {
    /// Stop when the continue head says so, capped at the configured maximum.
    Model,
    Fixed(usize),
}

pub(crate) fn draw_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let mut u = rng.random::<f64>() * probs.iter().sum::<f64>();
    for (i, p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    // rounding left a sliver past the end; take the last category with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl CparModel {
    /// Draws one row from `p`; `prev_minutes` is the previous row's index
    /// value in minutes.
    pub fn sample_row(
        &self,
        p: &StepParams,
        key: &str,
        context: &ContextVector,
        prev_minutes: Option<i64>,
        rng: &mut impl Rng,
    ) -> (Row, i64) {
        let layout = &self.layout;
        let mut row = vec![CellValue::Missing; layout.metadata.columns.len()];
        row[layout.key_position] = CellValue::category(key);
        for (pos, cell) in &context.cells {
            row[*pos] = cell.clone();
        }
        for (v, vp) in layout.variables.iter().zip(&p.variables) {
            row[v.position()] = match (v, vp) {
                (Variable::Categorical { vocabulary, .. }, VariableParams::Categorical { probs }) => {
                    CellValue::Category(vocabulary[draw_index(rng, probs)].clone())
                }
                (
                    Variable::Continuous {
                        scale, allows_missing, ..
                    },
                    VariableParams::Continuous { mu, sigma, miss_prob },
                ) => {
                    let missing = rng.random::<f64>() < *miss_prob;
                    let z: f64 = mu + sigma * rng.sample::<f64, _>(StandardNormal);
                    if missing && *allows_missing {
                        CellValue::Missing
                    } else {
                        CellValue::Number(scale.restore(z).clamp(scale.min, scale.max))
                    }
                }
                _ => unreachable!("heads follow the layout"),
            };
        }
        let z: f64 = p.index_mu + p.index_sigma * rng.sample::<f64, _>(StandardNormal);
        let m = match prev_minutes {
            None => layout.start.restore(z).clamp(layout.start.min, layout.start.max).round() as i64,
            Some(prev) => {
                let lg = layout.gap.restore(z).clamp(layout.gap.min.max(0.0), layout.gap.max.max(0.0));
                prev + lg.exp_m1().round().max(0.0) as i64
            }
        };
        row[layout.index_position] =
            CellValue::Datetime(from_minutes(m).expect("clamped to the observed time range"));
        (row, m)
    }

    pub fn sample_sequence(
        &self,
        key: &str,
        context: &ContextVector,
        length: SampleLength,
        rng: &mut impl Rng,
    ) -> Result<Sequence, CparError> {
        let cap = match length {
            SampleLength::Model => self.config.max_sequence_length,
            SampleLength::Fixed(n) => n,
        };
        let mut stepper = Stepper::new(self, context);
        let mut rows = Vec::new();
        let mut prev = None;
        while rows.len() < cap {
            let p = stepper.params();
            let (row, m) = self.sample_row(&p, key, context, prev, rng);
            let stop = rng.random::<f64>() >= p.continue_prob;
            stepper.feed(&row)?;
            rows.push(row);
            prev = Some(m);
            if length == SampleLength::Model && stop {
                break;
            }
        }
        Ok(Sequence {
            key: key.to_string(),
            rows,
        })
    }

    /// One synthetic sequence per template sequence, reusing its key and
    /// context; `Fixed` lengths are taken from the template. Sequence `i`
    /// draws from its own stream, so the result is independent of threading.
    pub fn sample_like(
        &self,
        template: &SequenceDataset,
        model_lengths: bool,
        seed: u64,
    ) -> Result<SequenceDataset, CparError> {
        let sequences = template
            .sequences
            .par_iter()
            .enumerate()
            .map(|(i, seq)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let length = if model_lengths {
                    SampleLength::Model
                } else {
                    SampleLength::Fixed(seq.len())
                };
                self.sample_sequence(&seq.key, &self.context_of(seq)?, length, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SequenceDataset {
            metadata: self.layout.metadata.clone(),
            sequences,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draw_index_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_ne!(draw_index(&mut rng, &[0.5, 0.0, 0.5]), 1);
        }
        assert_eq!(draw_index(&mut rng, &[0.0, 1.0]), 1);
    }
}
