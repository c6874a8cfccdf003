//! Relational Memory Core classifier.
//!
//! A recurrent cell whose state is a `Q × P` memory matrix. At every step
//! the new (input-projected) sequence element is appended to the memory
//! rows, each memory row attends over all rows plus the element with
//! multi-head dot-product attention, a row-wise MLP refines the result, and
//! LSTM-style input/forget gates blend it into the previous memory. After
//! the last element the flattened memory goes through an MLP head that
//! scores `n_max` profile positions.
//!
//! A plain LSTM cell with hidden width `Q·P` is available as a drop-in
//! replacement for ablations.

mod gradcheck;
mod params;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::identification::IdentificationSequence;

pub use gradcheck::{check_gradients, GradientReport, TensorCheck, GRADCHECK_FLOOR};
pub use params::Parameters;

/// Which recurrent cell feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rmc,
    Lstm,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmcConfig {
    pub cell: CellKind,
    /// Maximum number of profiles; the head always emits this many scores.
    pub n_max: usize,
    /// Number of memory slots `Q`, normally `n_max + 1`.
    pub memory_slots: usize,
    /// Slot width `P`.
    pub slot_width: usize,
    pub heads: usize,
    /// Hidden width of the row-wise MLP after attention.
    pub attention_mlp_width: usize,
    pub mlp_head_layers: usize,
    pub mlp_head_width: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// LSTM hidden width; `None` uses `Q·P` so the output matches the RMC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm_hidden: Option<usize>,
}

impl RmcConfig {
    /// CPU-sized defaults: `P = 64`, two heads, a 4×256 ReLU head.
    pub fn desk(input_dim: usize, n_max: usize) -> Self {
        RmcConfig {
            cell: CellKind::Rmc,
            n_max,
            memory_slots: n_max + 1,
            slot_width: 64,
            heads: 2,
            attention_mlp_width: 64,
            mlp_head_layers: 4,
            mlp_head_width: 256,
            input_dim,
            seed: 0,
            lstm_hidden: None,
        }
    }

    /// Full-size configuration with 2048-wide memory slots.
    pub fn full(input_dim: usize, n_max: usize) -> Self {
        RmcConfig {
            slot_width: 2048,
            attention_mlp_width: 2048,
            ..Self::desk(input_dim, n_max)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.slot_width / self.heads.max(1)
    }

    /// Width of the per-step output: the flattened memory, or the LSTM
    /// hidden vector.
    pub fn output_width(&self) -> usize {
        match (self.cell, self.lstm_hidden) {
            (CellKind::Lstm, Some(h)) => h,
            _ => self.memory_slots * self.slot_width,
        }
    }

    /// LSTM variant whose hidden width brings its parameter count closest
    /// to that of the RMC built from `self`.
    pub fn matched_lstm(&self) -> Result<RmcConfig> {
        let rmc = RmcConfig {
            cell: CellKind::Rmc,
            lstm_hidden: None,
            ..self.clone()
        };
        let target = RmcModel::zeros(rmc)?.params().count();
        let count = |h: usize| -> Result<usize> {
            let cfg = RmcConfig {
                cell: CellKind::Lstm,
                lstm_hidden: Some(h),
                ..self.clone()
            };
            Ok(RmcModel::zeros(cfg)?.params().count())
        };
        let (mut lo, mut hi) = (1usize, 1usize);
        while count(hi)? < target {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if count(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let best = if target - count(lo)? <= count(hi)? - target {
            lo
        } else {
            hi
        };
        Ok(RmcConfig {
            cell: CellKind::Lstm,
            lstm_hidden: Some(best),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("memory_slots", self.memory_slots),
            ("slot_width", self.slot_width),
            ("heads", self.heads),
            ("attention_mlp_width", self.attention_mlp_width),
            ("mlp_head_width", self.mlp_head_width),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.lstm_hidden == Some(0) {
            return Err(Error::invalid("lstm_hidden must be positive"));
        }
        if self.n_max < 2 {
            return Err(Error::invalid("n_max must be at least 2"));
        }
        if self.slot_width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "slot_width {} not divisible by heads {}",
                self.slot_width, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum CellLayout {
    Rmc {
        in_w: usize,
        in_b: usize,
        ln1_g: usize,
        ln1_b: usize,
        wq: usize,
        wk: usize,
        wv: usize,
        ln2_g: usize,
        ln2_b: usize,
        mlp_w1: usize,
        mlp_b1: usize,
        mlp_w2: usize,
        mlp_b2: usize,
        gate_wx: usize,
        gate_wm: usize,
        gate_b: usize,
    },
    Lstm {
        wx: usize,
        wh: usize,
        b: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    cell: CellLayout,
    hidden: Vec<(usize, usize)>,
    out_w: usize,
    out_b: usize,
}

/// Sequences per tape when evaluating without gradients.
const FORWARD_CHUNK: usize = 256;

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum CellState {
    Memory(Array2<f64>),
    Lstm {
        hidden: Array2<f64>,
        cell: Array2<f64>,
    },
}

impl CellState {
    pub fn memory(&self) -> Option<&Array2<f64>> {
        match self {
            CellState::Memory(m) => Some(m),
            CellState::Lstm { .. } => None,
        }
    }
}

/// Result of one attention pass, with per-head attention weights
/// (`Q × (Q+1)` each).
#[derive(Debug, Clone)]
pub struct Attended {
    pub memory: Array2<f64>,
    pub weights: Vec<Array2<f64>>,
}

/// Learnable parameters plus architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct RmcModel {
    config: RmcConfig,
    params: Parameters,
    layout: Layout,
}

/// Memory with row `i` equal to the basis vector `e_i` (truncated or
/// zero-padded to the slot width).
pub fn init_memory(config: &RmcConfig) -> Array2<f64> {
    Array2::from_shape_fn((config.memory_slots, config.slot_width), |(i, j)| {
        if i == j {
            1.0
        } else {
            0.0
        }
    })
}

fn build(config: &RmcConfig, rng: Option<&mut ChaCha8Rng>) -> (Parameters, Layout) {
    let mut p = Parameters::new();
    let mut rng = rng;
    let mut weight = |rows: usize, cols: usize, gain: f64| match rng.as_deref_mut() {
        Some(r) => params::glorot(r, rows, cols, gain),
        None => Array2::zeros((rows, cols)),
    };
    let (d, pw, a) = (
        config.input_dim,
        config.slot_width,
        config.attention_mlp_width,
    );

    let cell = match config.cell {
        CellKind::Rmc => {
            let in_w = p.push("rmc.input.weight", weight(d, pw, 1.0));
            let in_b = p.push("rmc.input.bias", Array2::zeros((1, pw)));
            let ln1_g = p.push("rmc.attn_norm.gain", Array2::ones((1, pw)));
            let ln1_b = p.push("rmc.attn_norm.bias", Array2::zeros((1, pw)));
            let wq = p.push("rmc.attn.query", weight(pw, pw, 1.0));
            let wk = p.push("rmc.attn.key", weight(pw, pw, 1.0));
            let wv = p.push("rmc.attn.value", weight(pw, pw, 1.0));
            let ln2_g = p.push("rmc.mlp_norm.gain", Array2::ones((1, pw)));
            let ln2_b = p.push("rmc.mlp_norm.bias", Array2::zeros((1, pw)));
            let mlp_w1 = p.push("rmc.mlp.0.weight", weight(pw, a, std::f64::consts::SQRT_2));
            let mlp_b1 = p.push("rmc.mlp.0.bias", Array2::zeros((1, a)));
            let mlp_w2 = p.push("rmc.mlp.1.weight", weight(a, pw, 1.0));
            let mlp_b2 = p.push("rmc.mlp.1.bias", Array2::zeros((1, pw)));
            let gate_wx = p.push("rmc.gate.input_weight", weight(pw, 2 * pw, 1.0));
            let gate_wm = p.push("rmc.gate.memory_weight", weight(pw, 2 * pw, 1.0));
            // Forget half starts at +1 so memory is retained early in training.
            let mut gb = Array2::zeros((1, 2 * pw));
            gb.slice_mut(ndarray::s![.., pw..]).fill(1.0);
            let gate_b = p.push("rmc.gate.bias", gb);
            CellLayout::Rmc {
                in_w,
                in_b,
                ln1_g,
                ln1_b,
                wq,
                wk,
                wv,
                ln2_g,
                ln2_b,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
                gate_wx,
                gate_wm,
                gate_b,
            }
        }
        CellKind::Lstm => {
            let h = config.output_width();
            let wx = p.push("lstm.input_weight", weight(d, 4 * h, 1.0));
            let wh = p.push("lstm.hidden_weight", weight(h, 4 * h, 1.0));
            let mut b = Array2::zeros((1, 4 * h));
            b.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
            let b = p.push("lstm.bias", b);
            CellLayout::Lstm { wx, wh, b }
        }
    };

    let mut hidden = Vec::with_capacity(config.mlp_head_layers);
    let mut fan_in = config.output_width();
    for i in 0..config.mlp_head_layers {
        let w = p.push(
            format!("head.{i}.weight"),
            weight(fan_in, config.mlp_head_width, std::f64::consts::SQRT_2),
        );
        let b = p.push(
            format!("head.{i}.bias"),
            Array2::zeros((1, config.mlp_head_width)),
        );
        hidden.push((w, b));
        fan_in = config.mlp_head_width;
    }
    // Small output weights start the head close to uniform.
    let out_w = p.push("head.out.weight", weight(fan_in, config.n_max, 0.1));
    let out_b = p.push("head.out.bias", Array2::zeros((1, config.n_max)));

    (
        p,
        Layout {
            cell,
            hidden,
            out_w,
            out_b,
        },
    )
}

impl RmcModel {
    /// Fresh model with Glorot-uniform weights drawn from `config.seed`.
    pub fn new(config: RmcConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (params, layout) = build(&config, Some(&mut rng));
        Ok(RmcModel {
            config,
            params,
            layout,
        })
    }

    /// Every parameter zero, including gains and biases.
    pub fn zeros(config: RmcConfig) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build(&config, None);
        for t in params.tensors_mut() {
            t.fill(0.0);
        }
        Ok(RmcModel {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors; names and shapes must match
    /// what `config` implies.
    pub fn from_parameters(config: RmcConfig, params: Parameters) -> Result<Self> {
        let template = Self::zeros(config)?;
        if !template.params.is_congruent(&params) {
            return Err(Error::Format(
                "parameter names or shapes do not match the model configuration".into(),
            ));
        }
        Ok(RmcModel {
            config: template.config,
            params,
            layout: template.layout,
        })
    }

    pub fn config(&self) -> &RmcConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn initial_state(&self) -> CellState {
        match self.config.cell {
            CellKind::Rmc => CellState::Memory(init_memory(&self.config)),
            CellKind::Lstm => {
                let h = self.config.output_width();
                CellState::Lstm {
                    hidden: Array2::zeros((1, h)),
                    cell: Array2::zeros((1, h)),
                }
            }
        }
    }

    fn register<'p>(&'p self, tape: &mut Tape<'p>) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t))
            .collect()
    }

    fn input_row(&self, x: &Embedding) -> Result<Array2<f64>> {
        Error::check_dim(self.config.input_dim, x.dim())?;
        Ok(Array2::from_shape_vec((1, x.dim()), x.as_slice().to_vec()).expect("row shape"))
    }

    /// Multi-head attention of every memory row over `[memory; x]`, added
    /// residually, for a batch of `B` memories stacked as `B·Q` rows and `B`
    /// input rows. Returns the updated memory and the attention node.
    fn attend_on_tape(&self, tape: &mut Tape, pv: &[Var], memory: Var, x: Var) -> (Var, Var) {
        let CellLayout::Rmc {
            ln1_g,
            ln1_b,
            wq,
            wk,
            wv,
            ..
        } = self.layout.cell
        else {
            unreachable!("attention on a non-RMC model")
        };
        let q_rows = self.config.memory_slots;

        let stacked = tape.interleave_blocks(memory, x, q_rows);
        let normed = tape.layer_norm_rows(stacked);
        let normed = tape.mul_row(normed, pv[ln1_g]);
        let normed = tape.add_row(normed, pv[ln1_b]);

        // Queries are projected for the input rows too and then ignored.
        let queries = tape.matmul(normed, pv[wq]);
        let keys = tape.matmul(normed, pv[wk]);
        let values = tape.matmul(normed, pv[wv]);
        let attn =
            tape.block_attention(queries, keys, values, q_rows + 1, q_rows, self.config.heads);
        (tape.add(memory, attn), attn)
    }

    fn rmc_step_on_tape(&self, tape: &mut Tape, pv: &[Var], memory: Var, x_raw: Var) -> Var {
        let CellLayout::Rmc {
            in_w,
            in_b,
            ln2_g,
            ln2_b,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            gate_wx,
            gate_wm,
            gate_b,
            ..
        } = self.layout.cell
        else {
            unreachable!("rmc step on a non-RMC model")
        };
        let pw = self.config.slot_width;

        let x = tape.matmul(x_raw, pv[in_w]);
        let x = tape.add_row(x, pv[in_b]);

        let (attended, _) = self.attend_on_tape(tape, pv, memory, x);

        let normed = tape.layer_norm_rows(attended);
        let normed = tape.mul_row(normed, pv[ln2_g]);
        let normed = tape.add_row(normed, pv[ln2_b]);
        let hidden = tape.matmul(normed, pv[mlp_w1]);
        let hidden = tape.add_row(hidden, pv[mlp_b1]);
        let hidden = tape.relu(hidden);
        let refined = tape.matmul(hidden, pv[mlp_w2]);
        let refined = tape.add_row(refined, pv[mlp_b2]);
        let candidate = tape.add(attended, refined);
        let candidate = tape.tanh(candidate);

        let gx = tape.matmul(x, pv[gate_wx]);
        let gx = tape.add_row(gx, pv[gate_b]);
        let gx = tape.repeat_rows(gx, self.config.memory_slots);
        let gm = tape.matmul(memory, pv[gate_wm]);
        let gates = tape.add(gm, gx);
        let input_gate = tape.slice_cols(gates, 0, pw);
        let input_gate = tape.sigmoid(input_gate);
        let forget_gate = tape.slice_cols(gates, pw, pw);
        let forget_gate = tape.sigmoid(forget_gate);

        let kept = tape.mul(forget_gate, memory);
        let written = tape.mul(input_gate, candidate);
        tape.add(kept, written)
    }

    fn lstm_step_on_tape(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        hidden: Var,
        cell: Var,
        x_raw: Var,
    ) -> (Var, Var) {
        let CellLayout::Lstm { wx, wh, b } = self.layout.cell else {
            unreachable!("lstm step on a non-LSTM model")
        };
        let h = self.config.output_width();
        let zx = tape.matmul(x_raw, pv[wx]);
        let zh = tape.matmul(hidden, pv[wh]);
        let z = tape.add(zx, zh);
        let z = tape.add_row(z, pv[b]);
        let i = tape.slice_cols(z, 0, h);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(z, h, h);
        let f = tape.sigmoid(f);
        let o = tape.slice_cols(z, 2 * h, h);
        let o = tape.sigmoid(o);
        let g = tape.slice_cols(z, 3 * h, h);
        let g = tape.tanh(g);
        let kept = tape.mul(f, cell);
        let written = tape.mul(i, g);
        let cell = tape.add(kept, written);
        let squashed = tape.tanh(cell);
        (tape.mul(o, squashed), cell)
    }

    fn head_on_tape(&self, tape: &mut Tape, pv: &[Var], features: Var) -> Var {
        let mut h = features;
        for &(w, b) in &self.layout.hidden {
            let z = tape.matmul(h, pv[w]);
            let z = tape.add_row(z, pv[b]);
            h = tape.relu(z);
        }
        let logits = tape.matmul(h, pv[self.layout.out_w]);
        tape.add_row(logits, pv[self.layout.out_b])
    }

    /// Runs the recurrence over a batch of element lists and returns the
    /// `B × n_max` logit node. Lists may differ in length; a finished list
    /// keeps its state while longer ones continue.
    fn logits_on_tape<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        pv: &[Var],
        batch: &[&[Embedding]],
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let d = self.config.input_dim;
        let mut steps = 0;
        for elements in batch {
            if elements.is_empty() {
                return Err(Error::invalid("empty identification sequence"));
            }
            for e in *elements {
                Error::check_dim(d, e.dim())?;
            }
            steps = steps.max(elements.len());
        }
        let n = batch.len();
        let inputs = (0..steps).map(|t| {
            let mut x = Array2::zeros((n, d));
            for (b, elements) in batch.iter().enumerate() {
                if let Some(e) = elements.get(t) {
                    x.row_mut(b)
                        .assign(&ndarray::ArrayView1::from(e.as_slice()));
                }
            }
            x
        });
        let active = |t: usize, rows_per: usize| -> Option<Vec<bool>> {
            if batch.iter().all(|e| e.len() > t) {
                return None;
            }
            Some(
                (0..n * rows_per)
                    .map(|r| batch[r / rows_per].len() > t)
                    .collect(),
            )
        };
        let features = match self.config.cell {
            CellKind::Rmc => {
                let q = self.config.memory_slots;
                let init = init_memory(&self.config);
                let tiled = ndarray::concatenate(Axis(0), &vec![init.view(); n]).expect("tile");
                let mut memory = tape.input(tiled);
                for (t, row) in inputs.enumerate() {
                    let x = tape.input(row);
                    let next = self.rmc_step_on_tape(tape, pv, memory, x);
                    memory = match active(t, q) {
                        None => next,
                        Some(mask) => tape.select_rows(next, memory, mask),
                    };
                }
                tape.reshape(memory, n, q * self.config.slot_width)
            }
            CellKind::Lstm => {
                let width = self.config.output_width();
                let mut h = tape.input(Array2::zeros((n, width)));
                let mut c = tape.input(Array2::zeros((n, width)));
                for (t, row) in inputs.enumerate() {
                    let x = tape.input(row);
                    let (h_next, c_next) = self.lstm_step_on_tape(tape, pv, h, c, x);
                    (h, c) = match active(t, 1) {
                        None => (h_next, c_next),
                        Some(mask) => (
                            tape.select_rows(h_next, h, mask.clone()),
                            tape.select_rows(c_next, c, mask),
                        ),
                    };
                }
                h
            }
        };
        if !tape.value(features).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("recurrent state".into()));
        }
        Ok(self.head_on_tape(tape, pv, features))
    }

    /// One attention pass of `memory` over itself plus the projected input
    /// row `x` (width `P`).
    pub fn attend(&self, memory: &Array2<f64>, x: &[f64]) -> Result<Attended> {
        if !matches!(self.config.cell, CellKind::Rmc) {
            return Err(Error::invalid("attend requires an RMC model"));
        }
        let shape = [self.config.memory_slots, self.config.slot_width];
        if memory.shape() != shape {
            return Err(Error::invalid(format!(
                "memory shape {:?}, expected {:?}",
                memory.shape(),
                shape
            )));
        }
        Error::check_dim(self.config.slot_width, x.len())?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let m = tape.input(memory.clone());
        let xv = tape.input(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row"));
        let (out, attn) = self.attend_on_tape(&mut tape, &pv, m, xv);
        Ok(Attended {
            memory: tape.value(out).clone(),
            weights: tape.attention_weights(attn).to_vec(),
        })
    }

    /// One RMC step. The output is the flattened new memory (`Q·P` values).
    pub fn rmc_step(&self, state: &CellState, x_raw: &Embedding) -> Result<(CellState, Vec<f64>)> {
        let CellState::Memory(memory) = state else {
            return Err(Error::invalid("rmc_step needs a memory state"));
        };
        if !matches!(self.config.cell, CellKind::Rmc) {
            return Err(Error::invalid("rmc_step requires an RMC model"));
        }
        let row = self.input_row(x_raw)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let m = tape.input(memory.clone());
        let x = tape.input(row);
        let next = self.rmc_step_on_tape(&mut tape, &pv, m, x);
        let next = tape.value(next).clone();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("memory after rmc step".into()));
        }
        let output = next.iter().copied().collect();
        Ok((CellState::Memory(next), output))
    }

    /// One LSTM step; the output is the new hidden vector (`Q·P` values).
    pub fn lstm_step(&self, state: &CellState, x_raw: &Embedding) -> Result<(CellState, Vec<f64>)> {
        let CellState::Lstm { hidden, cell } = state else {
            return Err(Error::invalid("lstm_step needs an LSTM state"));
        };
        if !matches!(self.config.cell, CellKind::Lstm) {
            return Err(Error::invalid("lstm_step requires an LSTM model"));
        }
        let row = self.input_row(x_raw)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let h = tape.input(hidden.clone());
        let c = tape.input(cell.clone());
        let x = tape.input(row);
        let (h, c) = self.lstm_step_on_tape(&mut tape, &pv, h, c, x);
        let (h, c) = (tape.value(h).clone(), tape.value(c).clone());
        if !h.iter().chain(c.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("state after lstm step".into()));
        }
        let output = h.iter().copied().collect();
        Ok((CellState::Lstm { hidden: h, cell: c }, output))
    }

    /// Dispatches to the configured cell.
    pub fn step(&self, state: &CellState, x_raw: &Embedding) -> Result<(CellState, Vec<f64>)> {
        match self.config.cell {
            CellKind::Rmc => self.rmc_step(state, x_raw),
            CellKind::Lstm => self.lstm_step(state, x_raw),
        }
    }

    /// Logits over the `n_max` profile positions.
    pub fn logits(&self, elements: &[Embedding]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &pv, &[elements])?;
        Ok(tape.value(logits).iter().copied().collect())
    }

    /// Posterior over the `n_max` profile positions for a raw element list.
    pub fn forward_elements(&self, elements: &[Embedding]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[elements])?.remove(0))
    }

    /// Posteriors for several element lists evaluated together.
    pub fn forward_batch(&self, batch: &[&[Embedding]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &pv, batch)?;
        let probs = tape.softmax_rows(logits);
        Ok(tape
            .value(probs)
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect())
    }

    /// Posterior over the `n_max` profile positions.
    pub fn forward(&self, seq: &IdentificationSequence) -> Result<Vec<f64>> {
        self.check_sequence(seq)?;
        self.forward_elements(&seq.elements)
    }

    /// Posteriors for a slice of sequences, evaluated in chunks.
    pub fn forward_sequences(&self, seqs: &[IdentificationSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(FORWARD_CHUNK) {
            let mut refs = Vec::with_capacity(chunk.len());
            for seq in chunk {
                self.check_sequence(seq)?;
                refs.push(seq.elements.as_slice());
            }
            out.extend(self.forward_batch(&refs)?);
        }
        Ok(out)
    }

    fn check_sequence(&self, seq: &IdentificationSequence) -> Result<()> {
        if seq.n_profiles > self.config.n_max {
            return Err(Error::invalid(format!(
                "sequence has {} profiles, model handles at most {}",
                seq.n_profiles, self.config.n_max
            )));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.config.n_max) {
            Some(&label) => Err(Error::LabelOutOfRange {
                label,
                bound: self.config.n_max,
            }),
            None => Ok(()),
        }
    }

    /// Cross-entropy of labeled element lists; adds `weight` times the
    /// gradient of their summed loss into `grads`. Returns per-list
    /// `(loss, probabilities)`.
    pub(crate) fn accumulate_batch(
        &self,
        batch: &[&[Embedding]],
        labels: &[usize],
        weight: f64,
        grads: &mut Parameters,
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        self.check_labels(labels)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &pv, batch)?;
        let probs = tape.softmax_rows(logits);
        let losses = tape.cross_entropy_rows(logits, labels.to_vec());
        if !tape.value(losses).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }
        let weights = tape.input(Array2::from_elem((1, batch.len()), weight));
        let total = tape.matmul(weights, losses);
        tape.backward(total, grads.tensors_mut());
        Ok(tape
            .value(losses)
            .iter()
            .zip(tape.value(probs).rows())
            .map(|(&l, p)| (l, p.to_vec()))
            .collect())
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradients(
        &self,
        batch: &[(IdentificationSequence, usize)],
    ) -> Result<(f64, Parameters)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut grads = self.params.zeros_like();
        let weight = 1.0 / batch.len() as f64;
        let mut refs = Vec::with_capacity(batch.len());
        for (seq, _) in batch {
            self.check_sequence(seq)?;
            refs.push(seq.elements.as_slice());
        }
        let labels: Vec<usize> = batch.iter().map(|(_, l)| *l).collect();
        let out = self.accumulate_batch(&refs, &labels, weight, &mut grads)?;
        Ok((out.iter().map(|(l, _)| l).sum::<f64>() * weight, grads))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, batch: &[(IdentificationSequence, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for chunk in batch.chunks(FORWARD_CHUNK) {
            let refs: Vec<&[Embedding]> =
                chunk.iter().map(|(s, _)| s.elements.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
            total += self.batch_losses(&refs, labels)?.iter().sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    fn batch_losses(&self, batch: &[&[Embedding]], labels: Vec<usize>) -> Result<Vec<f64>> {
        self.check_labels(&labels)?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &pv, batch)?;
        let losses = tape.cross_entropy_rows(logits, labels);
        Ok(tape.value(losses).iter().copied().collect())
    }

    pub(crate) fn example_loss(&self, elements: &[Embedding], label: usize) -> Result<f64> {
        Ok(self.batch_losses(&[elements], vec![label])?[0])
    }

    /// Sums attention-weight rows; exposed for diagnostics.
    pub fn attention_row_sums(attended: &Attended) -> Vec<f64> {
        attended
            .weights
            .iter()
            .flat_map(|w| w.sum_axis(Axis(1)).to_vec())
            .collect()
    }
}
