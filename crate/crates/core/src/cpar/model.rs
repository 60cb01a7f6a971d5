use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{minutes, EncodedSequence, Layout, Target, Variable};
use super::loss::{self, bernoulli_grad, gaussian_grads, logistic, softmax_into, softplus, SIGMA_FLOOR};
use super::network::{Network, Shape, StepCache};
use super::{CparConfig, CparError};
use crate::data_model::{CellValue, Row, Sequence, SequenceDataset};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CONTINUE_TERM: &str = "(continue)";

/// Distribution parameters emitted for one step, in the model's standardized
/// space.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParams {
    pub variables: Vec<VariableParams>,
    pub index_mu: f64,
    pub index_sigma: f64,
    pub continue_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariableParams {
    Categorical { probs: Vec<f64> },
    Continuous { mu: f64, sigma: f64, miss_prob: f64 },
}

/// Per-sequence constant inputs, taken from a sequence's first row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextVector {
    pub cells: Vec<(usize, CellValue)>,
    pub encoded: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_column: IndexMap<String, f64>,
    pub per_sequence: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sum of per-sequence losses, each evaluated just before its update.
    pub loss_curve: Vec<f64>,
    pub updates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CparModel {
    pub config: CparConfig,
    pub layout: Layout,
    pub shape: Shape,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    metadata_fingerprint: String,
    model: CparModel,
}

fn sigma_bias() -> f64 {
    // softplus⁻¹(1 − floor), so σ starts at 1 in standardized units
    (1.0 - SIGMA_FLOOR).exp_m1().ln()
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-3, 1.0 - 1e-3);
    (p / (1.0 - p)).ln()
}

impl CparModel {
    /// Fits the layout on `data` and initializes weights; output biases start
    /// at the data marginals.
    pub fn new(data: &SequenceDataset, config: &CparConfig) -> Result<CparModel, CparError> {
        config.validate()?;
        let layout = Layout::fit(data, &config.context_columns)?;
        for seq in &data.sequences {
            if seq.len() > config.max_sequence_length {
                return Err(CparError::SequenceTooLong {
                    key: seq.key.clone(),
                    length: seq.len(),
                    max: config.max_sequence_length,
                });
            }
        }
        let shape = Shape {
            input: layout.input_width(),
            row: layout.row_width(),
            hidden: config.hidden_size,
            output: layout.output_width(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = shape.init(&mut rng);

        let b_o = shape.offsets().b_o;
        let mut at = b_o;
        for v in &layout.variables {
            match v {
                Variable::Categorical { position, vocabulary, .. } => {
                    let mut counts = vec![0.0; vocabulary.len()];
                    for row in data.rows() {
                        if let Some(i) = row[*position]
                            .as_category()
                            .and_then(|c| vocabulary.iter().position(|v| v == c))
                        {
                            counts[i] += 1.0;
                        }
                    }
                    let total: f64 = counts.iter().sum::<f64>() + 0.5 * counts.len() as f64;
                    for (k, c) in counts.iter().enumerate() {
                        params[at + k] = ((c + 0.5) / total).ln();
                    }
                }
                Variable::Continuous { missing_rate, .. } => {
                    params[at + 1] = sigma_bias();
                    params[at + 2] = logit(*missing_rate);
                }
            }
            at += v.output_width();
        }
        params[at + 1] = sigma_bias();
        params[at + 2] = logit((layout.mean_length - 1.0) / layout.mean_length);

        Ok(CparModel {
            config: config.clone(),
            layout,
            shape,
            params,
        })
    }

    pub(crate) fn network(&self) -> Network<'_> {
        Network::new(self.shape, &self.params)
    }

    pub fn context_of(&self, sequence: &Sequence) -> Result<ContextVector, CparError> {
        let Some(first) = sequence.rows.first() else {
            return Ok(ContextVector {
                cells: Vec::new(),
                encoded: vec![0.0; self.layout.context_width()],
            });
        };
        Ok(ContextVector {
            cells: self
                .layout
                .context
                .iter()
                .map(|v| (v.position(), first[v.position()].clone()))
                .collect(),
            encoded: self.layout.encode_context(first)?,
        })
    }

    /// Turns raw head outputs into distribution parameters.
    pub(crate) fn decode_heads(&self, o: &[f64]) -> StepParams {
        let mut at = 0;
        let mut variables = Vec::with_capacity(self.layout.variables.len());
        for v in &self.layout.variables {
            let w = v.output_width();
            let head = &o[at..at + w];
            variables.push(match v {
                Variable::Categorical { .. } => {
                    let mut probs = vec![0.0; w];
                    softmax_into(head, &mut probs);
                    VariableParams::Categorical { probs }
                }
                Variable::Continuous { .. } => VariableParams::Continuous {
                    mu: head[0],
                    sigma: softplus(head[1]) + SIGMA_FLOOR,
                    miss_prob: logistic(head[2]),
                },
            });
            at += w;
        }
        StepParams {
            variables,
            index_mu: o[at],
            index_sigma: softplus(o[at + 1]) + SIGMA_FLOOR,
            continue_prob: logistic(o[at + 2]),
        }
    }

    /// Parameters for the step following `history`, evaluated from scratch.
    pub fn forward_step(&self, context: &ContextVector, history: &[Row]) -> Result<StepParams, CparError> {
        let enc = self.layout.encode_sequence(history)?;
        let net = self.network();
        let mut h = vec![0.0; self.shape.hidden];
        let mut out = net.step(net.input(None, &context.encoded), &h);
        for input in &enc.inputs {
            h = out.h;
            out = net.step(net.input(Some(input), &context.encoded), &h);
        }
        Ok(self.decode_heads(&out.o))
    }

    /// Loss of one step and, when `go` is given, its gradient w.r.t. the
    /// head outputs. `terms` accumulates per-variable losses followed by the
    /// index and continue terms.
    fn step_loss(
        &self,
        o: &[f64],
        targets: &[Target],
        gap: f64,
        continues: bool,
        mut go: Option<&mut [f64]>,
        terms: &mut [f64],
    ) -> f64 {
        let mut total = 0.0;
        let mut at = 0;
        let mut probs = Vec::new();
        for (j, (v, t)) in self.layout.variables.iter().zip(targets).enumerate() {
            let w = v.output_width();
            let head = &o[at..at + w];
            let l = match (v, t) {
                (Variable::Categorical { .. }, Target::Category(y)) => {
                    probs.resize(w, 0.0);
                    softmax_into(head, &mut probs);
                    if let Some(g) = go.as_deref_mut() {
                        for k in 0..w {
                            g[at + k] = probs[k] - if k == *y { 1.0 } else { 0.0 };
                        }
                    }
                    loss::categorical_loss(*y, &probs)
                }
                (Variable::Continuous { .. }, Target::Value(x)) => {
                    let (miss_loss, g_m) = bernoulli_grad(head[2], x.is_none());
                    let mut l = miss_loss;
                    if let Some(x) = x {
                        let (nll, g_mu, g_s) = gaussian_grads(*x, head[0], head[1]);
                        l += nll;
                        if let Some(g) = go.as_deref_mut() {
                            g[at] = g_mu;
                            g[at + 1] = g_s;
                        }
                    }
                    if let Some(g) = go.as_deref_mut() {
                        g[at + 2] = g_m;
                    }
                    l
                }
                _ => unreachable!("targets follow the layout"),
            };
            terms[j] += l;
            total += l;
            at += w;
        }
        let (nll, g_mu, g_s) = gaussian_grads(gap, o[at], o[at + 1]);
        let (stop, g_c) = bernoulli_grad(o[at + 2], continues);
        if let Some(g) = go.as_deref_mut() {
            g[at] = g_mu;
            g[at + 1] = g_s;
            g[at + 2] = g_c;
        }
        let k = self.layout.variables.len();
        terms[k] += nll;
        terms[k + 1] += stop;
        total + nll + stop
    }

    /// Forward pass over an encoded sequence; accumulates the gradient into
    /// `grad` when given.
    pub(crate) fn sequence_pass(&self, enc: &EncodedSequence, grad: Option<&mut [f64]>, terms: &mut [f64]) -> f64 {
        let net = self.network();
        let steps = enc.targets.len();
        let mut h = vec![0.0; self.shape.hidden];
        let mut total = 0.0;
        match grad {
            None => {
                for t in 0..steps {
                    let prev = (t > 0).then(|| enc.inputs[t - 1].as_slice());
                    let c = net.step(net.input(prev, &enc.context), &h);
                    total += self.step_loss(&c.o, &enc.targets[t], enc.gaps[t], t + 1 < steps, None, terms);
                    h = c.h;
                }
            }
            Some(grad) => {
                let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
                let mut gos: Vec<Vec<f64>> = Vec::with_capacity(steps);
                for t in 0..steps {
                    let prev = (t > 0).then(|| enc.inputs[t - 1].as_slice());
                    let c = net.step(net.input(prev, &enc.context), &h);
                    let mut go = vec![0.0; self.shape.output];
                    total += self.step_loss(
                        &c.o,
                        &enc.targets[t],
                        enc.gaps[t],
                        t + 1 < steps,
                        Some(&mut go),
                        terms,
                    );
                    h = c.h.clone();
                    caches.push(c);
                    gos.push(go);
                }
                let mut gh = vec![0.0; self.shape.hidden];
                for t in (0..steps).rev() {
                    gh = net.backward_step(&caches[t], &gos[t], &gh, t == 0, grad);
                }
            }
        }
        total
    }

    fn term_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.layout.variables.iter().map(|v| v.column().to_string()).collect();
        names.push(self.layout.metadata.columns[self.layout.index_position].name.clone());
        names.push(CONTINUE_TERM.to_string());
        names
    }

    pub fn encode(&self, data: &SequenceDataset) -> Result<Vec<EncodedSequence>, CparError> {
        data.sequences
            .iter()
            .map(|s| self.layout.encode_sequence(&s.rows))
            .collect()
    }

    pub fn sequence_loss(&self, sequence: &Sequence) -> Result<LossBreakdown, CparError> {
        let data = SequenceDataset {
            metadata: self.layout.metadata.clone(),
            sequences: vec![sequence.clone()],
        };
        self.loss(&data)
    }

    /// Total loss over a dataset, broken down by column and by sequence.
    pub fn loss(&self, data: &SequenceDataset) -> Result<LossBreakdown, CparError> {
        let names = self.term_names();
        let mut terms = vec![0.0; names.len()];
        let mut per_sequence = IndexMap::new();
        for (seq, enc) in data.sequences.iter().zip(self.encode(data)?) {
            let l = self.sequence_pass(&enc, None, &mut terms);
            *per_sequence.entry(seq.key.clone()).or_insert(0.0) += l;
        }
        Ok(LossBreakdown {
            total: per_sequence.values().sum(),
            per_column: names.into_iter().zip(terms).collect(),
            per_sequence,
        })
    }

    /// Loss and its gradient w.r.t. every parameter.
    pub fn gradient(&self, data: &SequenceDataset) -> Result<(f64, Vec<f64>), CparError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut terms = vec![0.0; self.term_names().len()];
        let mut total = 0.0;
        for enc in self.encode(data)? {
            total += self.sequence_pass(&enc, Some(&mut grad), &mut terms);
        }
        Ok((total, grad))
    }

    /// Trains with Adam, one update per sequence in a seeded shuffled order.
    pub fn train(&mut self, data: &SequenceDataset) -> Result<TrainReport, CparError> {
        self.config.validate()?;
        let encoded = self.encode(data)?;
        if encoded.is_empty() {
            return Err(CparError::EmptyData);
        }
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let lr = self.config.learning_rate;
        let n = self.params.len();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut terms = vec![0.0; self.term_names().len()];
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_5eed_0000_0001);
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut curve = Vec::with_capacity(self.config.epochs);
        let mut updates = 0usize;

        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for &i in &order {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let l = self.sequence_pass(&encoded[i], Some(&mut grad), &mut terms);
                if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(CparError::NonFiniteLoss {
                        epoch,
                        sequence: data.sequences[i].key.clone(),
                    });
                }
                epoch_loss += l;
                updates += 1;
                let t = updates as i32;
                let c1 = 1.0 - f64::powi(beta1, t);
                let c2 = 1.0 - f64::powi(beta2, t);
                for k in 0..n {
                    let g = grad[k];
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    self.params[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
            curve.push(epoch_loss);
        }
        Ok(TrainReport {
            loss_curve: curve,
            updates,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CparError> {
        let doc = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            metadata_fingerprint: self.layout.metadata.fingerprint(),
            model: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&doc)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CparModel, CparError> {
        let doc: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CparError::UnsupportedVersion(doc.format_version));
        }
        let found = doc.model.layout.metadata.fingerprint();
        if found != doc.metadata_fingerprint {
            return Err(CparError::FingerprintMismatch {
                expected: doc.metadata_fingerprint,
                found,
            });
        }
        if doc.model.params.len() != doc.model.shape.parameter_count() {
            return Err(CparError::InvalidConfig("parameter count does not match the network shape".into()));
        }
        Ok(doc.model)
    }

    /// Biases of the output heads in layout order; the last entry is the
    /// continue logit.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let off = self.shape.offsets();
        &mut self.params[off.b_o..off.total]
    }

    pub fn metadata_fingerprint(&self) -> String {
        self.layout.metadata.fingerprint()
    }
}

/// Trains a fresh model on `data`.
pub fn train(data: &SequenceDataset, config: &CparConfig) -> Result<(CparModel, TrainReport), CparError> {
    let mut model = CparModel::new(data, config)?;
    let report = model.train(data)?;
    Ok((model, report))
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[f64]) -> Result<(), CparError> {
    let mut out = String::from("epoch,total_loss\n");
    for (e, l) in curve.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Compares `analytic` against central finite differences (h = 1e-5) of the
/// total loss over every parameter.
pub fn gradient_check_against(
    model: &CparModel,
    data: &SequenceDataset,
    analytic: &[f64],
) -> Result<GradientCheck, CparError> {
    const H: f64 = 1e-5;
    let encoded = model.encode(data)?;
    let mut probe = model.clone();
    let mut terms = vec![0.0; model.term_names().len()];
    let mut loss_at = |probe: &CparModel| -> f64 {
        encoded
            .iter()
            .map(|e| probe.sequence_pass(e, None, &mut terms))
            .sum()
    };
    let mut worst = (0.0, 0);
    for k in 0..model.params.len() {
        let base = probe.params[k];
        probe.params[k] = base + H;
        let up = loss_at(&probe);
        probe.params[k] = base - H;
        let down = loss_at(&probe);
        probe.params[k] = base;
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        parameters: model.params.len(),
    })
}

pub fn gradient_check(model: &CparModel, data: &SequenceDataset) -> Result<GradientCheck, CparError> {
    let (_, analytic) = model.gradient(data)?;
    gradient_check_against(model, data, &analytic)
}

/// Carries the recurrent state so each step costs one network evaluation.
pub struct Stepper<'a> {
    model: &'a CparModel,
    context: Vec<f64>,
    h: Vec<f64>,
    pending: Option<StepCache>,
    next_input: Option<Vec<f64>>,
    prev_minutes: Option<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a CparModel, context: &ContextVector) -> Self {
        Stepper {
            model,
            context: context.encoded.clone(),
            h: vec![0.0; model.shape.hidden],
            pending: None,
            next_input: None,
            prev_minutes: None,
        }
    }

    /// Parameters of the next row given everything fed so far.
    pub fn params(&mut self) -> StepParams {
        let net = self.model.network();
        let c = net.step(net.input(self.next_input.as_deref(), &self.context), &self.h);
        let p = self.model.decode_heads(&c.o);
        self.pending = Some(c);
        p
    }

    /// Appends an observed row to the history.
    pub fn feed(&mut self, row: &Row) -> Result<(), CparError> {
        let layout = &self.model.layout;
        let c = match self.pending.take() {
            Some(c) => c,
            None => {
                let net = self.model.network();
                net.step(net.input(self.next_input.as_deref(), &self.context), &self.h)
            }
        };
        self.h = c.h;
        let t = row[layout.index_position]
            .as_datetime()
            .ok_or(CparError::NoSequenceIndex)?;
        let m = minutes(&t);
        let g = match self.prev_minutes {
            None => layout.start.standardize(m),
            Some(p) => layout.gap.standardize((m - p).max(0.0).ln_1p()),
        };
        let mut input = layout.encode_row(row)?;
        input.extend([g, if self.prev_minutes.is_none() { 1.0 } else { 0.0 }]);
        self.next_input = Some(input);
        self.prev_minutes = Some(m);
        Ok(())
    }
}
