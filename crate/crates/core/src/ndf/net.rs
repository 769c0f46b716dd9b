//! Parameter layout and the forward, reverse and forward-over-reverse
//! passes of the encoder/decoder network.
//!
//! Every intermediate value lives at a fixed offset of a flat tape, so one
//! [`Workspace`] serves any number of evaluations without allocating.

use crate::pose::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Act {
    Softplus,
    Identity,
}

impl Act {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Act::Softplus => softplus(z),
            Act::Identity => z,
        }
    }

    /// First and second derivative at `z`.
    #[inline]
    fn derivs(self, z: f64) -> (f64, f64) {
        match self {
            Act::Softplus => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
            Act::Identity => (1.0, 0.0),
        }
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A dense layer `out = act(W · in + b)`, `W` row-major `n_out × n_in`.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub act: Act,
    pub w: usize,
    pub b: usize,
    /// Tape offsets.
    pub input: usize,
    pub pre: usize,
    pub out: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub parents: Vec<Option<usize>>,
    pub embedding: usize,
    /// Tape offset of each encoder's input `[x_j, e_parent]`.
    pub enc_in: Vec<usize>,
    pub encoders: Vec<Vec<Dense>>,
    /// Tape offset of the concatenated embeddings.
    pub dec_in: usize,
    pub decoder: Vec<Dense>,
    pub n_params: usize,
    pub tape_len: usize,
}

impl Layout {
    pub fn new(topology: &Topology, embedding: usize, enc_hidden: &[usize], dec_hidden: &[usize]) -> Self {
        let j = topology.len();
        let (mut np, mut nt) = (0usize, 0usize);
        let stack = |input: usize, widths: &[usize], last: Act, np: &mut usize, nt: &mut usize| {
            let mut layers = Vec::with_capacity(widths.len() - 1);
            let mut input = input;
            for (k, w) in widths.windows(2).enumerate() {
                let (n_in, n_out) = (w[0], w[1]);
                let act = if k + 2 == widths.len() { last } else { Act::Softplus };
                let layer = Dense {
                    n_in,
                    n_out,
                    act,
                    w: *np,
                    b: *np + n_in * n_out,
                    input,
                    pre: *nt,
                    out: *nt + n_out,
                };
                *np += n_in * n_out + n_out;
                *nt += 2 * n_out;
                input = layer.out;
                layers.push(layer);
            }
            layers
        };
        let mut enc_in = Vec::with_capacity(j);
        let mut encoders = Vec::with_capacity(j);
        let enc_widths: Vec<usize> = std::iter::once(3 + embedding)
            .chain(enc_hidden.iter().copied())
            .chain(std::iter::once(embedding))
            .collect();
        for _ in 0..j {
            let input = nt;
            nt += 3 + embedding;
            enc_in.push(input);
            encoders.push(stack(input, &enc_widths, Act::Identity, &mut np, &mut nt));
        }
        let dec_in = nt;
        nt += j * embedding;
        let dec_widths: Vec<usize> = std::iter::once(j * embedding)
            .chain(dec_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let decoder = stack(dec_in, &dec_widths, Act::Softplus, &mut np, &mut nt);
        Self {
            parents: topology.parents().to_vec(),
            embedding,
            enc_in,
            encoders,
            dec_in,
            decoder,
            n_params: np,
            tape_len: nt,
        }
    }

    pub fn connections(&self) -> usize {
        self.parents.len()
    }

    fn enc_out(&self, j: usize) -> usize {
        self.encoders[j].last().unwrap().out
    }

    fn output(&self) -> usize {
        self.decoder.last().unwrap().out
    }

    /// Fan-in of every parameter's layer, for variance-scaled init.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoders.iter().flatten().chain(&self.decoder)
    }
}

/// Scratch buffers for one evaluation: values, tangents and the two
/// adjoint streams of the second-order reverse pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    val: Vec<f64>,
    tan: Vec<f64>,
    adj: Vec<f64>,
    adj_t: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(layout: &Layout) -> Self {
        let n = layout.tape_len;
        Self {
            val: vec![0.0; n],
            tan: vec![0.0; n],
            adj: vec![0.0; n],
            adj_t: vec![0.0; n],
        }
    }
}

fn dense_forward(l: &Dense, p: &[f64], val: &mut [f64]) {
    let (w, b) = (&p[l.w..l.w + l.n_in * l.n_out], &p[l.b..l.b + l.n_out]);
    for o in 0..l.n_out {
        let row = &w[o * l.n_in..(o + 1) * l.n_in];
        let x = &val[l.input..l.input + l.n_in];
        let z = b[o] + dot(row, x);
        val[l.pre + o] = z;
        val[l.out + o] = l.act.apply(z);
    }
}

fn dense_tangent(l: &Dense, p: &[f64], val: &[f64], tan: &mut [f64]) {
    let w = &p[l.w..l.w + l.n_in * l.n_out];
    for o in 0..l.n_out {
        let row = &w[o * l.n_in..(o + 1) * l.n_in];
        let t = dot(row, &tan[l.input..l.input + l.n_in]);
        tan[l.pre + o] = t;
        tan[l.out + o] = l.act.derivs(val[l.pre + o]).0 * t;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reverse through one layer. With `dual`, also propagates the tangent
/// adjoints and the cross terms of the forward-over-reverse pass.
fn dense_reverse(l: &Dense, p: &[f64], ws: &mut Workspace, grad: Option<&mut [f64]>, dual: bool) {
    let w = &p[l.w..l.w + l.n_in * l.n_out];
    for o in 0..l.n_out {
        let (d1, d2) = l.act.derivs(ws.val[l.pre + o]);
        let mut a = ws.adj[l.out + o] * d1;
        if dual {
            let bt = ws.adj_t[l.out + o];
            a += bt * d2 * ws.tan[l.pre + o];
            ws.adj_t[l.pre + o] = bt * d1;
        }
        ws.adj[l.pre + o] = a;
    }
    if let Some(g) = grad {
        for o in 0..l.n_out {
            let a = ws.adj[l.pre + o];
            g[l.b + o] += a;
            let row = &mut g[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
            let x = &ws.val[l.input..l.input + l.n_in];
            if dual {
                let bt = ws.adj_t[l.pre + o];
                let t = &ws.tan[l.input..l.input + l.n_in];
                for ((gi, xi), ti) in row.iter_mut().zip(x).zip(t) {
                    *gi += a * xi + bt * ti;
                }
            } else if a != 0.0 {
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += a * xi;
                }
            }
        }
    }
    for o in 0..l.n_out {
        let row = &w[o * l.n_in..(o + 1) * l.n_in];
        let a = ws.adj[l.pre + o];
        if a != 0.0 {
            for (ai, wi) in ws.adj[l.input..l.input + l.n_in].iter_mut().zip(row) {
                *ai += wi * a;
            }
        }
        if dual {
            let bt = ws.adj_t[l.pre + o];
            if bt != 0.0 {
                for (bi, wi) in ws.adj_t[l.input..l.input + l.n_in].iter_mut().zip(row) {
                    *bi += wi * bt;
                }
            }
        }
    }
}

/// Evaluates the network at the flat input `x` (`[cos, sin, r]` per
/// connection), leaving every intermediate value on the tape.
pub(crate) fn forward(layout: &Layout, p: &[f64], ws: &mut Workspace, x: &[f64]) -> f64 {
    let e = layout.embedding;
    for j in 0..layout.connections() {
        let inp = layout.enc_in[j];
        ws.val[inp..inp + 3].copy_from_slice(&x[3 * j..3 * j + 3]);
        match layout.parents[j] {
            Some(pj) => {
                let src = layout.enc_out(pj);
                ws.val.copy_within(src..src + e, inp + 3);
            }
            None => ws.val[inp + 3..inp + 3 + e].fill(0.0),
        }
        for l in &layout.encoders[j] {
            dense_forward(l, p, &mut ws.val);
        }
        let src = layout.enc_out(j);
        ws.val.copy_within(src..src + e, layout.dec_in + j * e);
    }
    for l in &layout.decoder {
        dense_forward(l, p, &mut ws.val);
    }
    ws.val[layout.output()]
}

/// Directional derivative of the output along the input tangent `v`.
/// Requires a preceding [`forward`] on the same workspace.
pub(crate) fn tangent(layout: &Layout, p: &[f64], ws: &mut Workspace, v: &[f64]) -> f64 {
    let e = layout.embedding;
    for j in 0..layout.connections() {
        let inp = layout.enc_in[j];
        ws.tan[inp..inp + 3].copy_from_slice(&v[3 * j..3 * j + 3]);
        match layout.parents[j] {
            Some(pj) => {
                let src = layout.enc_out(pj);
                ws.tan.copy_within(src..src + e, inp + 3);
            }
            None => ws.tan[inp + 3..inp + 3 + e].fill(0.0),
        }
        for l in &layout.encoders[j] {
            dense_tangent(l, p, &ws.val, &mut ws.tan);
        }
        let src = layout.enc_out(j);
        ws.tan.copy_within(src..src + e, layout.dec_in + j * e);
    }
    for l in &layout.decoder {
        dense_tangent(l, p, &ws.val, &mut ws.tan);
    }
    ws.tan[layout.output()]
}

/// Reverse pass for the scalar `seed · f + seed_t · ḟ`, where `ḟ` is the
/// tangent computed by [`tangent`] (pass `seed_t = 0` and `dual = false`
/// after a plain [`forward`]). Parameter and input gradients are added to
/// `grad` and `input_grad` when given.
pub(crate) fn reverse(
    layout: &Layout,
    p: &[f64],
    ws: &mut Workspace,
    seed: f64,
    seed_t: f64,
    dual: bool,
    mut grad: Option<&mut [f64]>,
    input_grad: Option<&mut [f64]>,
) {
    let e = layout.embedding;
    ws.adj.fill(0.0);
    if dual {
        ws.adj_t.fill(0.0);
    }
    ws.adj[layout.output()] = seed;
    if dual {
        ws.adj_t[layout.output()] = seed_t;
    }
    for l in layout.decoder.iter().rev() {
        dense_reverse(l, p, ws, grad.as_deref_mut(), dual);
    }
    for j in 0..layout.connections() {
        let (src, dst) = (layout.dec_in + j * e, layout.enc_out(j));
        for k in 0..e {
            ws.adj[dst + k] += ws.adj[src + k];
            if dual {
                ws.adj_t[dst + k] += ws.adj_t[src + k];
            }
        }
    }
    let mut input_grad = input_grad;
    for j in (0..layout.connections()).rev() {
        for l in layout.encoders[j].iter().rev() {
            dense_reverse(l, p, ws, grad.as_deref_mut(), dual);
        }
        let inp = layout.enc_in[j];
        if let Some(g) = input_grad.as_deref_mut() {
            for k in 0..3 {
                g[3 * j + k] += ws.adj[inp + k];
            }
        }
        if let Some(pj) = layout.parents[j] {
            let dst = layout.enc_out(pj);
            for k in 0..e {
                ws.adj[dst + k] += ws.adj[inp + 3 + k];
                if dual {
                    ws.adj_t[dst + k] += ws.adj_t[inp + 3 + k];
                }
            }
        }
    }
}
