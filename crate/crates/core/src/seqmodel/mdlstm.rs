//! Two-dimensional LSTM with four diagonal scans and a height-collapse layer.
//!
//! The frame matrix is folded back into its `rows x frames x channels`
//! volume (`frame[t][c * rows + y]` is channel `c` at row `y`, column `t`).
//! Each scan starts at one corner and sees two predecessors per cell: the
//! cell one row back ("up") and the cell one column back ("left") in its own
//! scan orientation. Hidden states are summed over rows, projected per
//! direction and added before the softmax.
//!
//! Gates use the order `[input, forget_up, forget_left, output, cell]`.

use super::linalg::{add_assign, gemm, matvec_acc, matvec_t_acc, sigmoid, Matrix};
use super::{Block, BlockInit};

pub(super) const DIRECTIONS: usize = 4;

/// Parameter layout: for each direction `d0..d3` `(w_in, w_up, w_left,
/// bias)`, then `out.w_d0..out.w_d3` and `out.bias`. Direction `d` flips rows
/// when bit 1 is set and columns when bit 0 is set.
#[derive(Debug, Clone, Copy)]
pub(super) struct MdlstmShape {
    pub channels: usize,
    pub rows: usize,
    pub hidden: usize,
    pub classes: usize,
}

struct Weights<'a> {
    w_in: &'a [f64],
    w_up: &'a [f64],
    w_left: &'a [f64],
    bias: &'a [f64],
}

struct Grads<'a> {
    w_in: &'a mut [f64],
    w_up: &'a mut [f64],
    w_left: &'a mut [f64],
    bias: &'a mut [f64],
}

impl MdlstmShape {
    fn gates(&self) -> usize {
        5 * self.hidden
    }

    fn dir_len(&self) -> usize {
        let g = self.gates();
        g * self.channels + 2 * g * self.hidden + g
    }

    fn out_offset(&self) -> usize {
        DIRECTIONS * self.dir_len()
    }

    pub fn param_count(&self) -> usize {
        self.out_offset() + DIRECTIONS * self.classes * self.hidden + self.classes
    }

    pub fn blocks(&self) -> Vec<Block> {
        let (c, h, k) = (self.channels, self.hidden, self.classes);
        let g = self.gates();
        let mut blocks = Vec::new();
        for d in 0..DIRECTIONS {
            blocks.push(Block::new(format!("d{d}.w_in"), g * c, BlockInit::Uniform));
            blocks.push(Block::new(format!("d{d}.w_up"), g * h, BlockInit::Uniform));
            blocks.push(Block::new(format!("d{d}.w_left"), g * h, BlockInit::Uniform));
            blocks.push(Block::new(
                format!("d{d}.bias"),
                g,
                BlockInit::GateBias { ones: h..3 * h },
            ));
        }
        for d in 0..DIRECTIONS {
            blocks.push(Block::new(format!("out.w_d{d}"), k * h, BlockInit::Uniform));
        }
        blocks.push(Block::new("out.bias", k, BlockInit::Zero));
        blocks
    }

    fn weights<'a>(&self, params: &'a [f64], d: usize) -> Weights<'a> {
        let g = self.gates();
        let dir = &params[d * self.dir_len()..(d + 1) * self.dir_len()];
        let (w_in, rest) = dir.split_at(g * self.channels);
        let (w_up, rest) = rest.split_at(g * self.hidden);
        let (w_left, bias) = rest.split_at(g * self.hidden);
        Weights {
            w_in,
            w_up,
            w_left,
            bias,
        }
    }

    fn grads<'a>(&self, dir: &'a mut [f64]) -> Grads<'a> {
        let g = self.gates();
        let (w_in, rest) = dir.split_at_mut(g * self.channels);
        let (w_up, rest) = rest.split_at_mut(g * self.hidden);
        let (w_left, bias) = rest.split_at_mut(g * self.hidden);
        Grads {
            w_in,
            w_up,
            w_left,
            bias,
        }
    }

    fn out_weight<'a>(&self, params: &'a [f64], d: usize) -> &'a [f64] {
        let kh = self.classes * self.hidden;
        let base = self.out_offset() + d * kh;
        &params[base..base + kh]
    }
}

/// Grid geometry of one scan direction.
#[derive(Clone, Copy)]
struct Scan {
    rows: usize,
    cols: usize,
    flip_rows: bool,
    flip_cols: bool,
}

impl Scan {
    fn new(rows: usize, cols: usize, d: usize) -> Self {
        Scan {
            rows,
            cols,
            flip_rows: d & 2 != 0,
            flip_cols: d & 1 != 0,
        }
    }

    /// Original frame index of canonical column `x`.
    #[inline]
    fn frame(&self, x: usize) -> usize {
        if self.flip_cols {
            self.cols - 1 - x
        } else {
            x
        }
    }

    #[inline]
    fn row(&self, y: usize) -> usize {
        if self.flip_rows {
            self.rows - 1 - y
        } else {
            y
        }
    }
}

struct DirTrace {
    /// Canonical input volume, `cells x channels`.
    input: Vec<f64>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
    /// Row sums of `hidden`, in original frame order, `T x H`.
    collapsed: Vec<f64>,
}

pub(super) struct MdlstmTrace {
    dirs: Vec<DirTrace>,
}

fn dir_forward(shape: &MdlstmShape, w: &Weights, x: &[f64], scan: Scan) -> DirTrace {
    let (c_in, h, g) = (shape.channels, shape.hidden, shape.gates());
    let (rows, cols) = (scan.rows, scan.cols);
    let cells_n = rows * cols;
    let frame_dim = c_in * rows;

    let mut input = vec![0.0; cells_n * c_in];
    for y in 0..rows {
        let oy = scan.row(y);
        for xc in 0..cols {
            let frame = &x[scan.frame(xc) * frame_dim..(scan.frame(xc) + 1) * frame_dim];
            let dst = &mut input[(y * cols + xc) * c_in..(y * cols + xc + 1) * c_in];
            for (ch, v) in dst.iter_mut().enumerate() {
                *v = frame[ch * rows + oy];
            }
        }
    }

    let mut gates = vec![0.0; cells_n * g];
    gemm(cells_n, c_in, g, &input, false, w.w_in, true, 0.0, &mut gates);
    let mut cells = vec![0.0; cells_n * h];
    let mut tanh_cells = vec![0.0; cells_n * h];
    let mut hidden = vec![0.0; cells_n * h];
    for y in 0..rows {
        for xc in 0..cols {
            let n = y * cols + xc;
            let up = (y > 0).then(|| n - cols);
            let left = (xc > 0).then(|| n - 1);
            let z = &mut gates[n * g..(n + 1) * g];
            add_assign(z, w.bias);
            if let Some(u) = up {
                matvec_acc(w.w_up, h, &hidden[u * h..(u + 1) * h], z);
            }
            if let Some(l) = left {
                matvec_acc(w.w_left, h, &hidden[l * h..(l + 1) * h], z);
            }
            for j in 0..h {
                let i = sigmoid(z[j]);
                let fu = sigmoid(z[h + j]);
                let fl = sigmoid(z[2 * h + j]);
                let o = sigmoid(z[3 * h + j]);
                let cand = z[4 * h + j].tanh();
                z[j] = i;
                z[h + j] = fu;
                z[2 * h + j] = fl;
                z[3 * h + j] = o;
                z[4 * h + j] = cand;
                let mut c = i * cand;
                if let Some(u) = up {
                    c += fu * cells[u * h + j];
                }
                if let Some(l) = left {
                    c += fl * cells[l * h + j];
                }
                let tc = c.tanh();
                cells[n * h + j] = c;
                tanh_cells[n * h + j] = tc;
                hidden[n * h + j] = o * tc;
            }
        }
    }

    let mut collapsed = vec![0.0; cols * h];
    for y in 0..rows {
        for xc in 0..cols {
            let n = y * cols + xc;
            let t = scan.frame(xc);
            add_assign(&mut collapsed[t * h..(t + 1) * h], &hidden[n * h..(n + 1) * h]);
        }
    }
    DirTrace {
        input,
        gates,
        cells,
        tanh_cells,
        hidden,
        collapsed,
    }
}

/// `dcollapsed` is the loss gradient w.r.t. the collapsed states (`T x H`,
/// original frame order).
fn dir_backward(
    shape: &MdlstmShape,
    w: &Weights,
    tr: &DirTrace,
    scan: Scan,
    dcollapsed: &[f64],
    g_out: Grads,
) {
    let (c_in, h, g) = (shape.channels, shape.hidden, shape.gates());
    let (rows, cols) = (scan.rows, scan.cols);
    let cells_n = rows * cols;
    let mut dz = vec![0.0; cells_n * g];
    let mut dh_rec = vec![0.0; cells_n * h];
    let mut dc_rec = vec![0.0; cells_n * h];
    for y in (0..rows).rev() {
        for xc in (0..cols).rev() {
            let n = y * cols + xc;
            let up = (y > 0).then(|| n - cols);
            let left = (xc > 0).then(|| n - 1);
            let t = scan.frame(xc);
            let a = &tr.gates[n * g..(n + 1) * g];
            let d = &mut dz[n * g..(n + 1) * g];
            for j in 0..h {
                let (i, fu, fl, o, cand) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j], a[4 * h + j]);
                let tc = tr.tanh_cells[n * h + j];
                let dh = dcollapsed[t * h + j] + dh_rec[n * h + j];
                let dc = dh * o * (1.0 - tc * tc) + dc_rec[n * h + j];
                let c_up = up.map_or(0.0, |u| tr.cells[u * h + j]);
                let c_left = left.map_or(0.0, |l| tr.cells[l * h + j]);
                d[j] = dc * cand * i * (1.0 - i);
                d[h + j] = dc * c_up * fu * (1.0 - fu);
                d[2 * h + j] = dc * c_left * fl * (1.0 - fl);
                d[3 * h + j] = dh * tc * o * (1.0 - o);
                d[4 * h + j] = dc * i * (1.0 - cand * cand);
                if let Some(u) = up {
                    dc_rec[u * h + j] += dc * fu;
                }
                if let Some(l) = left {
                    dc_rec[l * h + j] += dc * fl;
                }
            }
            if let Some(u) = up {
                matvec_t_acc(w.w_up, h, d, &mut dh_rec[u * h..(u + 1) * h]);
            }
            if let Some(l) = left {
                matvec_t_acc(w.w_left, h, d, &mut dh_rec[l * h..(l + 1) * h]);
            }
        }
    }

    gemm(g, cells_n, c_in, &dz, true, &tr.input, false, 1.0, g_out.w_in);
    if rows > 1 {
        // Cells below the first row see the hidden state `cols` cells back.
        let shifted = cells_n - cols;
        gemm(
            g,
            shifted,
            h,
            &dz[cols * g..],
            true,
            &tr.hidden[..shifted * h],
            false,
            1.0,
            g_out.w_up,
        );
    }
    if cols > 1 {
        let mut left_hidden = vec![0.0; cells_n * h];
        for y in 0..rows {
            for xc in 1..cols {
                let n = y * cols + xc;
                left_hidden[n * h..(n + 1) * h].copy_from_slice(&tr.hidden[(n - 1) * h..n * h]);
            }
        }
        gemm(g, cells_n, h, &dz, true, &left_hidden, false, 1.0, g_out.w_left);
    }
    for row in dz.chunks_exact(g) {
        add_assign(g_out.bias, row);
    }
}

/// Returns pre-softmax activations, `T x K`.
pub(super) fn forward(
    shape: &MdlstmShape,
    params: &[f64],
    x: &[f64],
    t_len: usize,
) -> (Matrix, MdlstmTrace) {
    let (h, k) = (shape.hidden, shape.classes);
    let mut logits = Matrix::zeros(t_len, k);
    let mut dirs = Vec::with_capacity(DIRECTIONS);
    for d in 0..DIRECTIONS {
        let scan = Scan::new(shape.rows, t_len, d);
        let tr = dir_forward(shape, &shape.weights(params, d), x, scan);
        let beta = if d == 0 { 0.0 } else { 1.0 };
        gemm(
            t_len,
            h,
            k,
            &tr.collapsed,
            false,
            shape.out_weight(params, d),
            true,
            beta,
            logits.data_mut(),
        );
        dirs.push(tr);
    }
    let bias = &params[params.len() - k..];
    for t in 0..t_len {
        add_assign(logits.row_mut(t), bias);
    }
    (logits, MdlstmTrace { dirs })
}

pub(super) fn backward(
    shape: &MdlstmShape,
    params: &[f64],
    trace: &MdlstmTrace,
    dlogits: &Matrix,
    grad: &mut [f64],
) {
    let (h, k) = (shape.hidden, shape.classes);
    let t_len = dlogits.rows();
    let kh = k * h;
    let dl = dlogits.data();
    let (dir_grads, out_grads) = grad.split_at_mut(shape.out_offset());
    let (w_out_grads, bias_grad) = out_grads.split_at_mut(DIRECTIONS * kh);
    for row in dl.chunks_exact(k) {
        add_assign(bias_grad, row);
    }
    for (d, (tr, g_dir)) in trace
        .dirs
        .iter()
        .zip(dir_grads.chunks_exact_mut(shape.dir_len()))
        .enumerate()
    {
        let w_out = shape.out_weight(params, d);
        gemm(
            k,
            t_len,
            h,
            dl,
            true,
            &tr.collapsed,
            false,
            1.0,
            &mut w_out_grads[d * kh..(d + 1) * kh],
        );
        let mut dcollapsed = vec![0.0; t_len * h];
        gemm(t_len, k, h, dl, false, w_out, false, 0.0, &mut dcollapsed);
        let scan = Scan::new(shape.rows, t_len, d);
        dir_backward(
            shape,
            &shape.weights(params, d),
            tr,
            scan,
            &dcollapsed,
            shape.grads(g_dir),
        );
    }
}
