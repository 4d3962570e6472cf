//! Bidirectional 1-D LSTM over frame sequences.
//!
//! Gates use the order `[input, forget, output, cell]` inside every `4H`
//! block. There are no peephole connections.

use super::linalg::{add_assign, gemm, matvec_acc, matvec_t_acc, sigmoid, Matrix};
use super::{Block, BlockInit};

/// Weights of one recurrent direction, borrowed from the flat parameter
/// vector.
struct LstmWeights<'a> {
    w_in: &'a [f64],
    w_rec: &'a [f64],
    bias: &'a [f64],
    input: usize,
    hidden: usize,
}

struct LstmGrads<'a> {
    w_in: &'a mut [f64],
    w_rec: &'a mut [f64],
    bias: &'a mut [f64],
}

/// Activations recorded by the forward pass for backpropagation.
pub(super) struct LstmTrace {
    /// Post-activation gates, `T x 4H`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
}

fn lstm_forward(w: &LstmWeights, x: &[f64], t_len: usize) -> LstmTrace {
    let h = w.hidden;
    let g4 = 4 * h;
    let mut gates = vec![0.0; t_len * g4];
    gemm(t_len, w.input, g4, x, false, w.w_in, true, 0.0, &mut gates);
    let mut cells = vec![0.0; t_len * h];
    let mut tanh_cells = vec![0.0; t_len * h];
    let mut hidden = vec![0.0; t_len * h];
    for t in 0..t_len {
        let z = &mut gates[t * g4..(t + 1) * g4];
        add_assign(z, w.bias);
        if t > 0 {
            matvec_acc(w.w_rec, h, &hidden[(t - 1) * h..t * h], z);
        }
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = sigmoid(z[2 * h + j]);
            z[3 * h + j] = z[3 * h + j].tanh();
            let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
            let c = z[h + j] * c_prev + z[j] * z[3 * h + j];
            let tc = c.tanh();
            cells[t * h + j] = c;
            tanh_cells[t * h + j] = tc;
            hidden[t * h + j] = z[2 * h + j] * tc;
        }
    }
    LstmTrace {
        gates,
        cells,
        tanh_cells,
        hidden,
    }
}

/// Backpropagates `dh` (`T x H`, gradient of the loss w.r.t. each hidden
/// output) through time, accumulating into `g`.
fn lstm_backward(
    w: &LstmWeights,
    x: &[f64],
    t_len: usize,
    tr: &LstmTrace,
    dh: &[f64],
    g: LstmGrads,
) {
    let h = w.hidden;
    let g4 = 4 * h;
    let mut dz = vec![0.0; t_len * g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..t_len).rev() {
        let a = &tr.gates[t * g4..(t + 1) * g4];
        let d = &mut dz[t * g4..(t + 1) * g4];
        for j in 0..h {
            let (i, f, o, cand) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
            let tc = tr.tanh_cells[t * h + j];
            let c_prev = if t > 0 { tr.cells[(t - 1) * h + j] } else { 0.0 };
            let dht = dh[t * h + j] + dh_next[j];
            let dc = dht * o * (1.0 - tc * tc) + dc_next[j];
            d[j] = dc * cand * i * (1.0 - i);
            d[h + j] = dc * c_prev * f * (1.0 - f);
            d[2 * h + j] = dht * tc * o * (1.0 - o);
            d[3 * h + j] = dc * i * (1.0 - cand * cand);
            dc_next[j] = dc * f;
        }
        dh_next.fill(0.0);
        if t > 0 {
            matvec_t_acc(w.w_rec, h, d, &mut dh_next);
        }
    }
    gemm(g4, t_len, w.input, &dz, true, x, false, 1.0, g.w_in);
    if t_len > 1 {
        // Row t of the previous-hidden matrix is h_{t-1}; row 0 is zero.
        gemm(
            g4,
            t_len - 1,
            h,
            &dz[g4..],
            true,
            &tr.hidden[..(t_len - 1) * h],
            false,
            1.0,
            g.w_rec,
        );
    }
    for row in dz.chunks_exact(g4) {
        add_assign(g.bias, row);
    }
}

/// Parameter layout: forward direction `(w_in, w_rec, bias)`, backward
/// direction `(w_in, w_rec, bias)`, then `out.w_fwd`, `out.w_bwd`,
/// `out.bias`.
#[derive(Debug, Clone, Copy)]
pub(super) struct BlstmShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl BlstmShape {
    fn dir_len(&self) -> usize {
        let g4 = 4 * self.hidden;
        g4 * self.input + g4 * self.hidden + g4
    }

    fn out_offset(&self) -> usize {
        2 * self.dir_len()
    }

    pub fn param_count(&self) -> usize {
        self.out_offset() + 2 * self.classes * self.hidden + self.classes
    }

    pub fn blocks(&self) -> Vec<Block> {
        let (d, h, k) = (self.input, self.hidden, self.classes);
        let mut blocks = Vec::new();
        for dir in ["fwd", "bwd"] {
            blocks.push(Block::new(format!("{dir}.w_in"), 4 * h * d, BlockInit::Uniform));
            blocks.push(Block::new(format!("{dir}.w_rec"), 4 * h * h, BlockInit::Uniform));
            blocks.push(Block::new(
                format!("{dir}.bias"),
                4 * h,
                BlockInit::GateBias { ones: h..2 * h },
            ));
        }
        blocks.push(Block::new("out.w_fwd", k * h, BlockInit::Uniform));
        blocks.push(Block::new("out.w_bwd", k * h, BlockInit::Uniform));
        blocks.push(Block::new("out.bias", k, BlockInit::Zero));
        blocks
    }

    fn split<'a>(&self, dir: &'a [f64]) -> LstmWeights<'a> {
        let g4 = 4 * self.hidden;
        let (w_in, rest) = dir.split_at(g4 * self.input);
        let (w_rec, bias) = rest.split_at(g4 * self.hidden);
        LstmWeights {
            w_in,
            w_rec,
            bias,
            input: self.input,
            hidden: self.hidden,
        }
    }

    fn split_mut<'a>(&self, dir: &'a mut [f64]) -> LstmGrads<'a> {
        let g4 = 4 * self.hidden;
        let (w_in, rest) = dir.split_at_mut(g4 * self.input);
        let (w_rec, bias) = rest.split_at_mut(g4 * self.hidden);
        LstmGrads { w_in, w_rec, bias }
    }
}

pub(super) struct BlstmTrace {
    reversed_input: Vec<f64>,
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// Backward-direction hidden states in natural frame order.
    bwd_hidden: Vec<f64>,
}

fn reverse_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .rev()
        .flat_map(|r| data[r * cols..(r + 1) * cols].iter().copied())
        .collect()
}

/// Returns pre-softmax activations, `T x K`.
pub(super) fn forward(
    shape: &BlstmShape,
    params: &[f64],
    x: &[f64],
    t_len: usize,
) -> (Matrix, BlstmTrace) {
    let (h, k) = (shape.hidden, shape.classes);
    let dl = shape.dir_len();
    let fwd_w = shape.split(&params[..dl]);
    let bwd_w = shape.split(&params[dl..2 * dl]);
    let out = &params[shape.out_offset()..];
    let (w_fwd, rest) = out.split_at(k * h);
    let (w_bwd, bias) = rest.split_at(k * h);

    let fwd = lstm_forward(&fwd_w, x, t_len);
    let reversed_input = reverse_rows(x, t_len, shape.input);
    let bwd = lstm_forward(&bwd_w, &reversed_input, t_len);
    let bwd_hidden = reverse_rows(&bwd.hidden, t_len, h);

    let mut logits = Matrix::zeros(t_len, k);
    gemm(t_len, h, k, &fwd.hidden, false, w_fwd, true, 0.0, logits.data_mut());
    gemm(t_len, h, k, &bwd_hidden, false, w_bwd, true, 1.0, logits.data_mut());
    for t in 0..t_len {
        add_assign(logits.row_mut(t), bias);
    }
    (
        logits,
        BlstmTrace {
            reversed_input,
            fwd,
            bwd,
            bwd_hidden,
        },
    )
}

/// Accumulates parameter gradients given `dlogits`, the loss gradient at the
/// pre-softmax activations.
pub(super) fn backward(
    shape: &BlstmShape,
    params: &[f64],
    x: &[f64],
    trace: &BlstmTrace,
    dlogits: &Matrix,
    grad: &mut [f64],
) {
    let (h, k) = (shape.hidden, shape.classes);
    let t_len = dlogits.rows();
    let dl = shape.dir_len();
    let out = &params[shape.out_offset()..];
    let (w_fwd, rest) = out.split_at(k * h);
    let w_bwd = &rest[..k * h];

    let (dirs, gout) = grad.split_at_mut(shape.out_offset());
    let (gw_fwd, rest) = gout.split_at_mut(k * h);
    let (gw_bwd, gbias) = rest.split_at_mut(k * h);
    let dl_data = dlogits.data();
    gemm(k, t_len, h, dl_data, true, &trace.fwd.hidden, false, 1.0, gw_fwd);
    gemm(k, t_len, h, dl_data, true, &trace.bwd_hidden, false, 1.0, gw_bwd);
    for row in dl_data.chunks_exact(k) {
        add_assign(gbias, row);
    }

    let mut dh_fwd = vec![0.0; t_len * h];
    gemm(t_len, k, h, dl_data, false, w_fwd, false, 0.0, &mut dh_fwd);
    let mut dh_bwd = vec![0.0; t_len * h];
    gemm(t_len, k, h, dl_data, false, w_bwd, false, 0.0, &mut dh_bwd);
    let dh_bwd = reverse_rows(&dh_bwd, t_len, h);

    let (g_fwd, g_bwd) = dirs.split_at_mut(dl);
    let fwd_w = shape.split(&params[..dl]);
    let bwd_w = shape.split(&params[dl..2 * dl]);
    lstm_backward(&fwd_w, x, t_len, &trace.fwd, &dh_fwd, shape.split_mut(g_fwd));
    lstm_backward(
        &bwd_w,
        &trace.reversed_input,
        t_len,
        &trace.bwd,
        &dh_bwd,
        shape.split_mut(g_bwd),
    );
}
