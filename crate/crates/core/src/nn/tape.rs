use std::borrow::Cow;

use ndarray::{s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};
use super::{masked_softmax, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<F>,
        inv_std: Vec<F>,
    },
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Rows {
        x: Var,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Transpose(Var),
    Sum(Var),
    Nll {
        x: Var,
        row: usize,
        label: usize,
        probs: Vec<F>,
        clamped: bool,
    },
}

struct Node<'p, F: Real> {
    value: Cow<'p, Array2<F>>,
    op: Op<F>,
    needs_grad: bool,
    mask: Option<Vec<bool>>,
}

/// Records a computation over parameters borrowed from a [`ParamStore`] and
/// replays it backwards to obtain parameter gradients.
pub struct Tape<'p, F: Real> {
    nodes: Vec<Node<'p, F>>,
    params: &'p ParamStore<F>,
    param_vars: Vec<Option<Var>>,
    clamp_hits: usize,
}

/// Probability floor applied inside negative log-likelihood terms.
pub const LOG_FLOOR: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            params,
            param_vars: vec![None; params.len()],
            clamp_hits: 0,
        }
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_with(Cow::Owned(value), op, needs_grad, None)
    }

    fn push_with(
        &mut self,
        value: Cow<'p, Array2<F>>,
        op: Op<F>,
        needs_grad: bool,
        mask: Option<Vec<bool>>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            mask,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of likelihood terms whose probability fell below the floor.
    pub fn clamp_hits(&self) -> usize {
        self.clamp_hits
    }

    /// Parameter leaf; recorded once per tape and borrowed, not copied.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let params = self.params;
        let v = self.push_with(
            Cow::Borrowed(params.get(id)),
            Op::Leaf(Some(id)),
            !params.is_frozen(id),
            None,
        );
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push_with(Cow::Owned(value), Op::Leaf(None), false, None)
    }

    pub fn row_constant(&mut self, values: &[F]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Row-wise normalized exponential; `mask` (one flag per column) removes
    /// columns from every row.
    pub fn softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros(x.raw_dim());
        for (mut o, row) in out.rows_mut().into_iter().zip(x.rows()) {
            let p = masked_softmax(&row.to_vec(), mask.as_deref());
            for (dst, src) in o.iter_mut().zip(p) {
                *dst = src;
            }
        }
        let needs = self.nodes[a.0].needs_grad;
        self.push_with(Cow::Owned(out), Op::Softmax(a), needs, mask)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = F::of(xv.ncols() as f64);
        let eps = F::of(LN_EPS);
        let mut xhat = Array2::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (mut h, row) in xhat.rows_mut().into_iter().zip(xv.rows()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            for (d, &v) in h.iter_mut().zip(row.iter()) {
                *d = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::Cols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::Rows { x, start }, &[x])
    }

    /// Stack `table[ids[i]]` into a `len(ids) x n` matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).t().as_standard_layout().into_owned();
        self.push(out, Op::Transpose(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Sum of several `1 x 1` scalars (zero when empty).
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(Array2::zeros((1, 1))),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// `-log softmax(x[row])[label]` over unmasked columns, with the
    /// probability floored at [`LOG_FLOOR`]. A floored term carries no
    /// gradient.
    pub fn nll(&mut self, x: Var, row: usize, label: usize, mask: Option<Vec<bool>>) -> Var {
        let xv = self.value(x);
        let logits: Vec<F> = xv.row(row).to_vec();
        assert!(
            mask.as_ref().map_or(true, |m| m[label]),
            "likelihood label points at a masked entry"
        );
        let probs = masked_softmax(&logits, mask.as_deref());
        let floor = F::of(LOG_FLOOR);
        let clamped = probs[label] < floor;
        let loss = if clamped {
            self.clamp_hits += 1;
            -floor.ln()
        } else {
            // log-sum-exp form keeps precision when p is close to one
            let keep = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
            let max = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, &v)| v)
                .fold(F::neg_infinity(), F::max);
            let lse = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, &v)| (v - max).exp())
                .sum::<F>()
                .ln()
                + max;
            lse - logits[label]
        };
        let needs = self.nodes[x.0].needs_grad && !clamped;
        self.push_with(
            Cow::Owned(Array2::from_elem((1, 1), loss)),
            Op::Nll {
                x,
                row,
                label,
                probs,
                clamped,
            },
            needs,
            mask,
        )
    }

    /// Reverse sweep from a `1 x 1` root; returns gradients of every
    /// trainable parameter that the root depends on.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Array2<F>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf(Some(id)) => out.accumulate(*id, &g),
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if needs(b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if needs(row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::Gelu(a) => {
                    let mut d = self.value(*a).mapv(gelu_grad);
                    d *= &g;
                    acc(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut d = Array2::zeros(p.raw_dim());
                    for ((mut dr, pr), gr) in d.rows_mut().into_iter().zip(p.rows()).zip(g.rows())
                    {
                        let dot: F = pr.iter().zip(gr.iter()).map(|(&p, &g)| p * g).sum();
                        for ((dst, &p), &g) in dr.iter_mut().zip(pr.iter()).zip(gr.iter()) {
                            *dst = p * (g - dot);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if needs(bias) {
                        acc(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(gain) {
                        let dg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *gain, dg);
                    }
                    if needs(x) {
                        let gain_v = self.value(*gain);
                        let n = F::of(xhat.ncols() as f64);
                        let dxhat = &g * gain_v;
                        let mut dx = Array2::zeros(xhat.raw_dim());
                        for (r, mut dr) in dx.rows_mut().into_iter().enumerate() {
                            let dh = dxhat.row(r);
                            let h = xhat.row(r);
                            let sum_dh = dh.sum();
                            let sum_dh_h: F = dh.iter().zip(h.iter()).map(|(&a, &b)| a * b).sum();
                            let scale = inv_std[r] / n;
                            for ((dst, &a), &b) in dr.iter_mut().zip(dh.iter()).zip(h.iter()) {
                                *dst = scale * (n * a - sum_dh - b * sum_dh_h);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::Cols { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if needs(p) {
                            acc(&mut grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        }
                        offset += w;
                    }
                }
                Op::Rows { x, start } => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *x, d);
                }
                Op::Gather { table, ids } => {
                    let mut d = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *table, d);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.t().as_standard_layout().into_owned()),
                Op::Sum(x) => {
                    let gv = g[[0, 0]];
                    acc(&mut grads, *x, Array2::from_elem(self.value(*x).raw_dim(), gv));
                }
                Op::Nll {
                    x,
                    row,
                    label,
                    probs,
                    clamped,
                } => {
                    if !*clamped {
                        let gv = g[[0, 0]];
                        let mut d = Array2::zeros(self.value(*x).raw_dim());
                        for (j, &p) in probs.iter().enumerate() {
                            let target = if j == *label { F::one() } else { F::zero() };
                            d[[*row, j]] = gv * (p - target);
                        }
                        acc(&mut grads, *x, d);
                    }
                }
            }
        }
        out
    }

    /// Mask recorded with a softmax or likelihood node, if any.
    pub fn mask(&self, v: Var) -> Option<&[bool]> {
        self.nodes[v.0].mask.as_deref()
    }
}

fn acc<F: Real>(grads: &mut [Option<Array2<F>>], v: Var, delta: Array2<F>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}
