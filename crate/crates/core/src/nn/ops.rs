//! Differentiable operations over [`Tensor`]s.

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::nn::tensor::Tensor;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Block-diagonal linear operator: output rows of block `b` are
/// `M_b . x[rows of block b]`. Blocks may be rectangular, so the same type
/// covers message passing (square per-graph adjacency), pooling through
/// `S^T` (K x n_b), and mixing on the coarse graph (K x K).
#[derive(Debug)]
pub struct BlockDiag {
    blocks: Vec<Array2<f64>>,
    in_offsets: Vec<usize>,
    out_offsets: Vec<usize>,
}

impl BlockDiag {
    pub fn new(blocks: Vec<Array2<f64>>) -> Self {
        let mut in_offsets = vec![0];
        let mut out_offsets = vec![0];
        for b in &blocks {
            in_offsets.push(in_offsets.last().unwrap() + b.ncols());
            out_offsets.push(out_offsets.last().unwrap() + b.nrows());
        }
        Self {
            blocks,
            in_offsets,
            out_offsets,
        }
    }

    pub fn single(block: Array2<f64>) -> Self {
        Self::new(vec![block])
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn in_rows(&self) -> usize {
        *self.in_offsets.last().unwrap()
    }

    pub fn out_rows(&self) -> usize {
        *self.out_offsets.last().unwrap()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.out_rows(), x.ncols()));
        for (b, block) in self.blocks.iter().enumerate() {
            let xin = x.slice(ndarray::s![self.in_offsets[b]..self.in_offsets[b + 1], ..]);
            out.slice_mut(ndarray::s![self.out_offsets[b]..self.out_offsets[b + 1], ..])
                .assign(&block.dot(&xin));
        }
        out
    }

    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.in_rows(), g.ncols()));
        for (b, block) in self.blocks.iter().enumerate() {
            let gout = g.slice(ndarray::s![self.out_offsets[b]..self.out_offsets[b + 1], ..]);
            out.slice_mut(ndarray::s![self.in_offsets[b]..self.in_offsets[b + 1], ..])
                .assign(&block.t().dot(&gout));
        }
        out
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let values = &*a.values() + &*b.values();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        values,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(g);
            pb.accumulate_grad(g);
        }),
    ))
}

/// Multiplies every entry by a constant.
pub fn scale(x: &Tensor, factor: f64) -> Tensor {
    let values = x.values().mapv(|v| v * factor);
    let px = x.clone();
    Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| px.accumulate_grad(&g.mapv(|v| v * factor))),
    )
}

/// Sum of all entries, as a 1x1 tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let total = x.values().sum();
    let values = Array2::from_elem((1, 1), total);
    let px = x.clone();
    let shape = x.shape();
    Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| {
            px.accumulate_grad(&Array2::from_elem(shape, g[[0, 0]]));
        }),
    )
}

/// Dense matrix product `a . b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "matmul: {:?} . {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let values = a.values().dot(&*b.values());
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        values,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(&g.dot(&pb.values().t()));
            pb.accumulate_grad(&pa.values().t().dot(g));
        }),
    ))
}

/// Affine map `x . W^T + b`, with `W: d_out x d_in` and a `1 x d_out` bias
/// broadcast over rows. Pass `None` to skip the bias.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, d_in) = x.shape();
    let (d_out, w_in) = weight.shape();
    if d_in != w_in {
        return Err(Error::DimensionMismatch(format!(
            "linear: input has {d_in} features, weight expects {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != (1, d_out) {
            return Err(Error::DimensionMismatch(format!(
                "linear: bias shape {:?}, expected (1, {d_out})",
                b.shape()
            )));
        }
    }
    let mut values = x.values().dot(&weight.values().t());
    if let Some(b) = bias {
        let bv = b.values();
        for mut row in values.rows_mut() {
            row += &bv.row(0);
        }
    }
    let (px, pw) = (x.clone(), weight.clone());
    let pb = bias.cloned();
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let _ = n;
    Ok(Tensor::from_op(
        values,
        parents,
        Box::new(move |g| {
            px.accumulate_grad(&g.dot(&*pw.values()));
            pw.accumulate_grad(&g.t().dot(&*px.values()));
            if let Some(b) = &pb {
                let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                b.accumulate_grad(&col_sums);
            }
        }),
    ))
}

/// Applies a block-diagonal operator to the rows of `x`.
pub fn block_mix(operator: &Rc<BlockDiag>, x: &Tensor) -> Result<Tensor> {
    if operator.in_rows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "block_mix: operator expects {} rows, input has {}",
            operator.in_rows(),
            x.nrows()
        )));
    }
    let values = operator.apply(&x.values());
    let px = x.clone();
    let op = Rc::clone(operator);
    Ok(Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| px.accumulate_grad(&op.apply_transpose(g))),
    ))
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    let mask = x.values().mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let values = &*x.values() * &mask;
    let px = x.clone();
    Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| px.accumulate_grad(&(g * &mask))),
    )
}

/// Inverted dropout: in training, zeroes each entry independently with
/// probability `p` and scales survivors by `1/(1-p)`; in evaluation it is
/// the identity.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        let px = x.clone();
        return Ok(Tensor::from_op(
            x.to_array(),
            vec![x.clone()],
            Box::new(move |g| px.accumulate_grad(g)),
        ));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mask =
        Array2::from_shape_fn(x.shape(), |_| if rng.random::<f64>() < p { 0.0 } else { keep_scale });
    let values = &*x.values() * &mask;
    let px = x.clone();
    Ok(Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| px.accumulate_grad(&(g * &mask))),
    ))
}

/// Per-graph mean of node rows: row `g` of the output is the mean of the
/// rows of `x` whose `graph_index` equals `g`.
///
/// Row sums are accumulated pairwise so the result is invariant (to ~1e-12)
/// under permutations of the rows within one graph.
pub fn global_mean_pool(x: &Tensor, graph_index: &[usize], n_graphs: usize) -> Result<Tensor> {
    if graph_index.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "global_mean_pool: {} index entries for {} rows",
            graph_index.len(),
            x.nrows()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    for (row, &g) in graph_index.iter().enumerate() {
        if g >= n_graphs {
            return Err(Error::IndexOutOfRange(format!(
                "graph index {g} exceeds graph count {n_graphs}"
            )));
        }
        members[g].push(row);
    }
    if let Some(g) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "graph {g} has no nodes in the batch"
        )));
    }
    let d = x.ncols();
    let mut values = Array2::zeros((n_graphs, d));
    {
        let xv = x.values();
        let mut scratch = Vec::new();
        for (g, rows) in members.iter().enumerate() {
            for c in 0..d {
                scratch.clear();
                scratch.extend(rows.iter().map(|&r| xv[[r, c]]));
                values[[g, c]] = pairwise_sum(&scratch) / rows.len() as f64;
            }
        }
    }
    let px = x.clone();
    let index: Vec<usize> = graph_index.to_vec();
    let counts: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
    let in_shape = x.shape();
    Ok(Tensor::from_op(
        values,
        vec![x.clone()],
        Box::new(move |g| {
            let mut gx = Array2::zeros(in_shape);
            for (row, &gi) in index.iter().enumerate() {
                let scale = 1.0 / counts[gi];
                for c in 0..in_shape.1 {
                    gx[[row, c]] = g[[gi, c]] * scale;
                }
            }
            px.accumulate_grad(&gx);
        }),
    ))
}

/// Rowwise concatenation: columns of `a` followed by columns of `b`.
/// The gradient splits back to both inputs.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "concat: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let (n, da) = a.shape();
    let db = b.ncols();
    let mut values = Array2::zeros((n, da + db));
    values
        .slice_mut(ndarray::s![.., ..da])
        .assign(&*a.values());
    values
        .slice_mut(ndarray::s![.., da..])
        .assign(&*b.values());
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        values,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(&g.slice(ndarray::s![.., ..da]).to_owned());
            pb.accumulate_grad(&g.slice(ndarray::s![.., da..]).to_owned());
        }),
    ))
}

/// Row-stabilized softmax probabilities (not differentiable; helper for
/// evaluation and for the cross-entropy op).
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Mean negative log-likelihood of the true classes under the softmax of
/// the logits, as a 1x1 tensor.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "softmax_cross_entropy: {} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::IndexOutOfRange(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "softmax_cross_entropy on an empty batch".into(),
        ));
    }
    let probs = softmax_rows(&logits.values());
    let mut loss = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        loss -= probs[[row, label]].max(f64::MIN_POSITIVE).ln();
    }
    loss /= n as f64;
    let values = Array2::from_elem((1, 1), loss);
    let plogits = logits.clone();
    let labels: Vec<usize> = labels.to_vec();
    Ok(Tensor::from_op(
        values,
        vec![logits.clone()],
        Box::new(move |g| {
            let scale = g[[0, 0]] / labels.len() as f64;
            let mut grad = probs.clone();
            for (row, &label) in labels.iter().enumerate() {
                grad[[row, label]] -= 1.0;
            }
            grad.mapv_inplace(|v| v * scale);
            plogits.accumulate_grad(&grad);
        }),
    ))
}
