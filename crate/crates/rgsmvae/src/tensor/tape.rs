//! Define-by-run computation tape.
//!
//! Every operation validates shapes, computes its output eagerly, and (when
//! the tape is recording) appends a node referencing its inputs. `backward`
//! walks the node list in reverse exactly once, accumulating gradients
//! additively across fan-out, and returns the gradients of named parameter
//! leaves. The tape is rebuilt every training step; nothing is cached across
//! steps.

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TapeRef, Tensor};

static TAPE_TOKENS: AtomicU64 = AtomicU64::new(1);

/// Operation kinds recorded on the tape. Saved attributes are whatever the
/// exact backward rule needs beyond the input/output buffers themselves.
#[derive(Debug, Clone)]
enum Op {
    Leaf { param: bool },
    MatMul { ta: bool, tb: bool },
    Bmm { tb: bool },
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    AddBias { axis: usize },
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Clamp { lo: f64, hi: f64 },
    SoftmaxLast,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape,
    Permute { axes: Vec<usize> },
    SumAll,
    MeanAll,
    SquaredL2,
    L1Norm,
    Conv1d { kernel: usize, stride: usize, pad: usize },
}

struct Node<E: Scalar> {
    op: Op,
    inputs: Vec<usize>,
    dims: Vec<usize>,
    data: Rc<Vec<E>>,
    name: Option<String>,
}

/// Deliberate backward-rule corruptions used by the verification suites to
/// prove they can detect a broken engine. Never set in normal operation.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapeFault {
    /// Use sigma'(x) = y*(1+y) instead of y*(1-y).
    SigmoidBackward,
}

/// Gradients of named parameter leaves, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct GradMap<E: Scalar = f32> {
    grads: IndexMap<String, Vec<E>>,
}

impl<E: Scalar> Default for GradMap<E> {
    fn default() -> Self {
        GradMap { grads: IndexMap::new() }
    }
}

impl<E: Scalar> GradMap<E> {
    pub fn get(&self, name: &str) -> Option<&[E]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[E])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Merge another gradient map additively (used when batch members are
    /// evaluated on independent tapes).
    pub fn merge(&mut self, other: &GradMap<E>) {
        for (name, g) in other.grads.iter() {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += *b;
                    }
                }
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }
}

/// Reverse-mode AD tape. Confined to one thread; distinct tapes may run in
/// parallel.
pub struct Tape<E: Scalar = f32> {
    token: u64,
    seed: u64,
    rng: ChaCha8Rng,
    recording: bool,
    consumed: bool,
    fault: Option<TapeFault>,
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Tape<E> {
    /// Recording tape. `seed` drives any stochastic draw requested during
    /// the forward pass, so a rebuilt tape replays identically.
    pub fn new(seed: u64) -> Self {
        Tape {
            token: TAPE_TOKENS.fetch_add(1, Ordering::Relaxed),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            recording: true,
            consumed: false,
            fault: None,
            nodes: Vec::new(),
        }
    }

    /// Non-recording tape: ops compute values only, no backward possible.
    pub fn inference(seed: u64) -> Self {
        let mut t = Tape::new(seed);
        t.recording = false;
        t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: TapeFault) {
        self.fault = Some(fault);
    }

    /// Draw i.i.d. standard-normal values from the tape's seeded stream.
    /// The result is a constant with respect to differentiation.
    pub fn draw_standard_normal(&mut self, dims: &[usize]) -> Tensor<E> {
        let numel: usize = dims.iter().product();
        let data: Vec<E> = (0..numel)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut self.rng);
                E::from_f64_lossy(v)
            })
            .collect();
        Tensor::from_vec(dims.to_vec(), data).expect("consistent dims")
    }

    /// Register a named parameter leaf. Gradients reported by `backward`
    /// are keyed by this name.
    pub fn param(&mut self, name: &str, t: &Tensor<E>) -> Result<Tensor<E>> {
        if let Some(r) = t.tape_ref() {
            if r.token == self.token {
                return Err(Error::Contract(format!(
                    "parameter {name:?} already registered on this tape"
                )));
            }
            return Err(Error::Contract(format!(
                "parameter {name:?} belongs to another tape"
            )));
        }
        if !self.recording {
            return Ok(t.detach());
        }
        let id = self.push_node(
            Op::Leaf { param: true },
            vec![],
            t.dims().to_vec(),
            t.data_rc(),
            Some(name.to_string()),
        );
        Ok(Tensor::tracked(
            t.dims().to_vec(),
            t.data_rc(),
            Some(TapeRef { token: self.token, node: id }),
        ))
    }

    fn push_node(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        dims: Vec<usize>,
        data: Rc<Vec<E>>,
        name: Option<String>,
    ) -> usize {
        self.nodes.push(Node { op, inputs, dims, data, name });
        self.nodes.len() - 1
    }

    /// Node id of an input tensor, registering untracked tensors as constant
    /// leaves. Returns an empty id list when not recording.
    fn input_ids(&mut self, tensors: &[&Tensor<E>]) -> Result<Vec<usize>> {
        if !self.recording {
            for t in tensors {
                if t.tape_ref().is_some_and(|r| r.token != self.token) {
                    return Err(Error::Contract("tensor belongs to another tape".into()));
                }
            }
            return Ok(Vec::new());
        }
        let mut ids = Vec::with_capacity(tensors.len());
        for t in tensors {
            let id = match t.tape_ref() {
                Some(r) if r.token == self.token => r.node,
                Some(_) => {
                    return Err(Error::Contract("tensor belongs to another tape".into()))
                }
                None => self.push_node(
                    Op::Leaf { param: false },
                    vec![],
                    t.dims().to_vec(),
                    t.data_rc(),
                    None,
                ),
            };
            ids.push(id);
        }
        Ok(ids)
    }

    fn emit(&mut self, op: Op, inputs: Vec<usize>, dims: Vec<usize>, data: Vec<E>) -> Tensor<E> {
        let rc = Rc::new(data);
        if self.recording {
            let id = self.push_node(op, inputs, dims.clone(), Rc::clone(&rc), None);
            Tensor::tracked(dims, rc, Some(TapeRef { token: self.token, node: id }))
        } else {
            Tensor::tracked(dims, rc, None)
        }
    }

    fn emit_shared(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        dims: Vec<usize>,
        data: Rc<Vec<E>>,
    ) -> Tensor<E> {
        if self.recording {
            let id = self.push_node(op, inputs, dims.clone(), Rc::clone(&data), None);
            Tensor::tracked(dims, data, Some(TapeRef { token: self.token, node: id }))
        } else {
            Tensor::tracked(dims, data, None)
        }
    }

    // ── Elementwise binary ─────────────────────────────────────────────

    fn ew_binary(
        &mut self,
        name: &str,
        op: Op,
        a: &Tensor<E>,
        b: &Tensor<E>,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>> {
        // Same shape, or one side is a scalar (the only allowed broadcast).
        let (dims, data) = if a.dims() == b.dims() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            (a.dims().to_vec(), data)
        } else if b.numel() == 1 {
            let y = b.data()[0];
            (a.dims().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
        } else if a.numel() == 1 {
            let x = a.data()[0];
            (b.dims().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::dim(name, a.dims(), b.dims()));
        };
        let ids = self.input_ids(&[a, b])?;
        Ok(self.emit(op, ids, dims, data))
    }

    pub fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_binary("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_binary("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_binary("mul", Op::Mul, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: &Tensor<E>, c: f64) -> Result<Tensor<E>> {
        let cc = E::from_f64_lossy(c);
        let data = a.data().iter().map(|&x| x * cc).collect();
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(Op::Scale(c), ids, a.dims().to_vec(), data))
    }

    pub fn add_scalar(&mut self, a: &Tensor<E>, c: f64) -> Result<Tensor<E>> {
        let cc = E::from_f64_lossy(c);
        let data = a.data().iter().map(|&x| x + cc).collect();
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(Op::AddScalar(c), ids, a.dims().to_vec(), data))
    }

    /// Add a rank-1 bias along `axis` of `a`.
    pub fn add_bias(&mut self, a: &Tensor<E>, bias: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
        if axis >= a.dims().len() || bias.dims().len() != 1 || bias.dims()[0] != a.dims()[axis] {
            return Err(Error::dim("add_bias", a.dims(), bias.dims()));
        }
        let (outer, mid, inner) = split3(a.dims(), axis);
        let bv = bias.data();
        let mut data = a.data().to_vec();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let b = bv[m];
                for v in &mut data[base..base + inner] {
                    *v += b;
                }
            }
        }
        let ids = self.input_ids(&[a, bias])?;
        Ok(self.emit(Op::AddBias { axis }, ids, a.dims().to_vec(), data))
    }

    // ── Elementwise unary ──────────────────────────────────────────────

    fn ew_unary(&mut self, op: Op, a: &Tensor<E>, f: impl Fn(E) -> E) -> Result<Tensor<E>> {
        let data = a.data().iter().map(|&x| f(x)).collect();
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(op, ids, a.dims().to_vec(), data))
    }

    pub fn tanh(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_unary(Op::Tanh, a, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_unary(Op::Sigmoid, a, |x| E::one() / (E::one() + (-x).exp()))
    }

    pub fn relu(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_unary(Op::Relu, a, |x| if x > E::zero() { x } else { E::zero() })
    }

    pub fn exp(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew_unary(Op::Exp, a, |x| x.exp())
    }

    pub fn log(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if !a.is_finite() {
            return Err(Error::Domain("log: non-finite input".into()));
        }
        self.ew_unary(Op::Log, a, |x| x.ln())
    }

    pub fn clamp(&mut self, a: &Tensor<E>, lo: f64, hi: f64) -> Result<Tensor<E>> {
        let (l, h) = (E::from_f64_lossy(lo), E::from_f64_lossy(hi));
        self.ew_unary(Op::Clamp { lo, hi }, a, |x| {
            if x < l {
                l
            } else if x > h {
                h
            } else {
                x
            }
        })
    }

    // ── Matrix products ────────────────────────────────────────────────

    /// 2-D matrix product with optional in-place transposition of either
    /// operand (no data movement; strides are swapped).
    pub fn matmul_ex(
        &mut self,
        a: &Tensor<E>,
        ta: bool,
        b: &Tensor<E>,
        tb: bool,
    ) -> Result<Tensor<E>> {
        if a.dims().len() != 2 || b.dims().len() != 2 {
            return Err(Error::dim("matmul", a.dims(), b.dims()));
        }
        let (m, ka) = logical2(a.dims(), ta);
        let (kb, n) = logical2(b.dims(), tb);
        if ka != kb {
            return Err(Error::dim("matmul", a.dims(), b.dims()));
        }
        let mut out = vec![E::zero(); m * n];
        unsafe {
            gemm_logical(
                m,
                ka,
                n,
                E::one(),
                a.data().as_ptr(),
                ta,
                a.dims()[1],
                b.data().as_ptr(),
                tb,
                b.dims()[1],
                E::zero(),
                out.as_mut_ptr(),
                false,
                n,
            );
        }
        let ids = self.input_ids(&[a, b])?;
        Ok(self.emit(Op::MatMul { ta, tb }, ids, vec![m, n], out))
    }

    pub fn matmul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.matmul_ex(a, false, b, false)
    }

    /// x (m,k) times w (n,k) transposed -> (m,n); the fully-connected shape.
    pub fn matmul_nt(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.matmul_ex(a, false, b, true)
    }

    /// Grouped matrix product: a (G,m,k) x b (G,k,n) -> (G,m,n).
    /// With `tb`, b is (G,n,k) and each group is multiplied transposed.
    pub fn bmm(&mut self, a: &Tensor<E>, b: &Tensor<E>, tb: bool) -> Result<Tensor<E>> {
        if a.dims().len() != 3 || b.dims().len() != 3 || a.dims()[0] != b.dims()[0] {
            return Err(Error::dim("bmm", a.dims(), b.dims()));
        }
        let (g, m, k) = (a.dims()[0], a.dims()[1], a.dims()[2]);
        let (kb, n) = logical2(&b.dims()[1..], tb);
        if k != kb {
            return Err(Error::dim("bmm", a.dims(), b.dims()));
        }
        let mut out = vec![E::zero(); g * m * n];
        let (asz, bsz) = (m * k, b.dims()[1] * b.dims()[2]);
        for gi in 0..g {
            unsafe {
                gemm_logical(
                    m,
                    k,
                    n,
                    E::one(),
                    a.data().as_ptr().add(gi * asz),
                    false,
                    k,
                    b.data().as_ptr().add(gi * bsz),
                    tb,
                    b.dims()[2],
                    E::zero(),
                    out.as_mut_ptr().add(gi * m * n),
                    false,
                    n,
                );
            }
        }
        let ids = self.input_ids(&[a, b])?;
        Ok(self.emit(Op::Bmm { tb }, ids, vec![g, m, n], out))
    }

    // ── Shape ops ──────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: &Tensor<E>, dims: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = dims.iter().product();
        if numel != a.numel() || dims.iter().any(|&d| d == 0) {
            return Err(Error::dim("reshape", a.dims(), dims));
        }
        let ids = self.input_ids(&[a])?;
        Ok(self.emit_shared(Op::Reshape, ids, dims.to_vec(), a.data_rc()))
    }

    pub fn permute(&mut self, a: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
        let rank = a.dims().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::dim("permute", a.dims(), axes));
        }
        let (dims, data) = permute_kernel(a.data(), a.dims(), axes);
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(Op::Permute { axes: axes.to_vec() }, ids, dims, data))
    }

    /// 2-D transpose (materialized; for stride-only transposition inside a
    /// product use `matmul_ex`).
    pub fn transpose(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        if a.dims().len() != 2 {
            return Err(Error::dim("transpose", a.dims(), "rank 2"));
        }
        self.permute(a, &[1, 0])
    }

    pub fn slice(
        &mut self,
        a: &Tensor<E>,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Tensor<E>> {
        if axis >= a.dims().len() || len == 0 || start + len > a.dims()[axis] {
            return Err(Error::dim(
                "slice",
                a.dims(),
                format!("axis {axis} range {start}..{}", start + len),
            ));
        }
        let (outer, mid, inner) = split3(a.dims(), axis);
        let mut dims = a.dims().to_vec();
        dims[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = a.data();
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(Op::Slice { axis, start, len }, ids, dims, data))
    }

    pub fn concat(&mut self, parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of empty list".into()))?;
        let rank = first.dims().len();
        if axis >= rank {
            return Err(Error::dim("concat", first.dims(), axis));
        }
        let mut axis_total = 0;
        for p in parts {
            if p.dims().len() != rank
                || p.dims()
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first.dims()[i])
            {
                return Err(Error::dim("concat", first.dims(), p.dims()));
            }
            axis_total += p.dims()[axis];
        }
        let mut dims = first.dims().to_vec();
        dims[axis] = axis_total;
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.dims()[axis] * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ids = self.input_ids(parts)?;
        Ok(self.emit(Op::Concat { axis }, ids, dims, data))
    }

    // ── Softmax / reductions ───────────────────────────────────────────

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let rank = a.dims().len();
        if rank == 0 {
            return Err(Error::dim("softmax", a.dims(), "rank >= 1"));
        }
        let l = a.dims()[rank - 1];
        let rows = a.numel() / l;
        let mut data = vec![E::zero(); a.numel()];
        for r in 0..rows {
            let row = &a.data()[r * l..(r + 1) * l];
            let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut sum = E::zero();
            for (o, &x) in data[r * l..(r + 1) * l].iter_mut().zip(row) {
                let e = (x - max).exp();
                *o = e;
                sum += e;
            }
            for o in &mut data[r * l..(r + 1) * l] {
                *o = *o / sum;
            }
        }
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(Op::SoftmaxLast, ids, a.dims().to_vec(), data))
    }

    fn reduce(&mut self, op: Op, a: &Tensor<E>, f: impl Fn(&[E]) -> f64) -> Result<Tensor<E>> {
        let v = f(a.data());
        let ids = self.input_ids(&[a])?;
        Ok(self.emit(op, ids, vec![1], vec![E::from_f64_lossy(v)]))
    }

    pub fn sum(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.reduce(Op::SumAll, a, |d| d.iter().map(|v| v.as_f64()).sum())
    }

    pub fn mean(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let n = a.numel() as f64;
        self.reduce(Op::MeanAll, a, move |d| {
            d.iter().map(|v| v.as_f64()).sum::<f64>() / n
        })
    }

    /// Sum of squares over all elements.
    pub fn squared_l2(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.reduce(Op::SquaredL2, a, |d| {
            d.iter().map(|v| v.as_f64() * v.as_f64()).sum()
        })
    }

    /// Sum of absolute values over all elements.
    pub fn l1_norm(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.reduce(Op::L1Norm, a, |d| d.iter().map(|v| v.as_f64().abs()).sum())
    }

    // ── Convolution ────────────────────────────────────────────────────

    /// 1-D convolution. `x` is (batch, channels_in, time), `w` is
    /// (channels_out, channels_in, kernel). Zero padding, no bias (add one
    /// with `add_bias` on axis 1).
    pub fn conv1d(
        &mut self,
        x: &Tensor<E>,
        w: &Tensor<E>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        if x.dims().len() != 3 || w.dims().len() != 3 || x.dims()[1] != w.dims()[1] {
            return Err(Error::dim("conv1d", x.dims(), w.dims()));
        }
        if stride == 0 {
            return Err(Error::Contract("conv1d: stride must be positive".into()));
        }
        let (batch, cin, t) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let (cout, kernel) = (w.dims()[0], w.dims()[2]);
        if t + 2 * pad < kernel {
            return Err(Error::dim("conv1d", x.dims(), w.dims()));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = vec![E::zero(); batch * cout * t_out];
        let mut cols = vec![E::zero(); cin * kernel * t_out];
        for b in 0..batch {
            im2col(&x.data()[b * cin * t..], cin, t, kernel, stride, pad, t_out, &mut cols);
            unsafe {
                gemm_logical(
                    cout,
                    cin * kernel,
                    t_out,
                    E::one(),
                    w.data().as_ptr(),
                    false,
                    cin * kernel,
                    cols.as_ptr(),
                    false,
                    t_out,
                    E::zero(),
                    out.as_mut_ptr().add(b * cout * t_out),
                    false,
                    t_out,
                );
            }
        }
        let ids = self.input_ids(&[x, w])?;
        Ok(self.emit(
            Op::Conv1d { kernel, stride, pad },
            ids,
            vec![batch, cout, t_out],
            out,
        ))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits every node at most once and
    /// returns the gradients of all named parameter leaves reachable from
    /// the loss. May be called once per tape.
    pub fn backward(&mut self, loss: &Tensor<E>) -> Result<GradMap<E>> {
        let r = loss
            .tape_ref()
            .ok_or_else(|| Error::Contract("backward: loss is not on a tape".into()))?;
        if r.token != self.token {
            return Err(Error::Contract("backward: loss belongs to another tape".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.dims()
            )));
        }
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice without rebuilding the tape".into(),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[r.node] = Some(vec![E::one()]);
        let mut out = GradMap::default();

        for id in (0..=r.node).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { param } => {
                    if *param {
                        let name = node.name.clone().expect("param leaves are named");
                        out.grads.insert(name, g);
                    }
                }
                Op::Add => {
                    accumulate_ew(&self.nodes, &mut grads, node.inputs[0], &g, AccSign::Pos);
                    accumulate_ew(&self.nodes, &mut grads, node.inputs[1], &g, AccSign::Pos);
                }
                Op::Sub => {
                    accumulate_ew(&self.nodes, &mut grads, node.inputs[0], &g, AccSign::Pos);
                    accumulate_ew(&self.nodes, &mut grads, node.inputs[1], &g, AccSign::Neg);
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ga = scaled_by_other(&g, &self.nodes[b].data, node.data.len());
                    let gb = scaled_by_other(&g, &self.nodes[a].data, node.data.len());
                    accumulate_ew(&self.nodes, &mut grads, a, &ga, AccSign::Pos);
                    accumulate_ew(&self.nodes, &mut grads, b, &gb, AccSign::Pos);
                }
                Op::Scale(c) => {
                    let cc = E::from_f64_lossy(*c);
                    let ga: Vec<E> = g.iter().map(|&v| v * cc).collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::AddScalar(_) => add_into(&mut grads, node.inputs[0], &self.nodes, &g),
                Op::AddBias { axis } => {
                    add_into(&mut grads, node.inputs[0], &self.nodes, &g);
                    let (outer, mid, inner) = split3(&node.dims, *axis);
                    let slot = grad_slot(&mut grads, node.inputs[1], &self.nodes);
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            let mut s = E::zero();
                            for &v in &g[base..base + inner] {
                                s += v;
                            }
                            slot[m] += s;
                        }
                    }
                }
                Op::Tanh => {
                    let y = &node.data;
                    let ga: Vec<E> =
                        g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * (E::one() - yv * yv)).collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Sigmoid => {
                    let y = &node.data;
                    let flip = self.fault == Some(TapeFault::SigmoidBackward);
                    let ga: Vec<E> = g
                        .iter()
                        .zip(y.iter())
                        .map(|(&gv, &yv)| {
                            let d = if flip { yv * (E::one() + yv) } else { yv * (E::one() - yv) };
                            gv * d
                        })
                        .collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Relu => {
                    let x = &self.nodes[node.inputs[0]].data;
                    let ga: Vec<E> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                        .collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Exp => {
                    let y = &node.data;
                    let ga: Vec<E> = g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv).collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Log => {
                    let x = &self.nodes[node.inputs[0]].data;
                    let ga: Vec<E> = g.iter().zip(x.iter()).map(|(&gv, &xv)| gv / xv).collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Clamp { lo, hi } => {
                    let (l, h) = (E::from_f64_lossy(*lo), E::from_f64_lossy(*hi));
                    let x = &self.nodes[node.inputs[0]].data;
                    let ga: Vec<E> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(&gv, &xv)| if xv >= l && xv <= h { gv } else { E::zero() })
                        .collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::SoftmaxLast => {
                    let y = &node.data;
                    let l = *node.dims.last().expect("rank checked at record time");
                    let rows = y.len() / l;
                    let mut ga = vec![E::zero(); y.len()];
                    for r0 in 0..rows {
                        let range = r0 * l..(r0 + 1) * l;
                        let yr = &y[range.clone()];
                        let gr = &g[range.clone()];
                        let mut dot = E::zero();
                        for (&gv, &yv) in gr.iter().zip(yr) {
                            dot += gv * yv;
                        }
                        for ((o, &gv), &yv) in ga[range].iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::SumAll => {
                    let g0 = g[0];
                    let n = self.nodes[node.inputs[0]].data.len();
                    let ga = vec![g0; n];
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::MeanAll => {
                    let n = self.nodes[node.inputs[0]].data.len();
                    let g0 = g[0] * E::from_f64_lossy(1.0 / n as f64);
                    let ga = vec![g0; n];
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::SquaredL2 => {
                    let x = &self.nodes[node.inputs[0]].data;
                    let two_g = g[0] * E::from_f64_lossy(2.0);
                    let ga: Vec<E> = x.iter().map(|&xv| two_g * xv).collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::L1Norm => {
                    let x = &self.nodes[node.inputs[0]].data;
                    let g0 = g[0];
                    let ga: Vec<E> = x
                        .iter()
                        .map(|&xv| {
                            if xv > E::zero() {
                                g0
                            } else if xv < E::zero() {
                                -g0
                            } else {
                                E::zero()
                            }
                        })
                        .collect();
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Reshape => add_into(&mut grads, node.inputs[0], &self.nodes, &g),
                Op::Permute { axes } => {
                    let inv = inverse_permutation(axes);
                    let (_, ga) = permute_kernel(&g, &node.dims, &inv);
                    add_into(&mut grads, node.inputs[0], &self.nodes, &ga);
                }
                Op::Slice { axis, start, len } => {
                    let src_dims = &self.nodes[node.inputs[0]].dims;
                    let (outer, mid, inner) = split3(src_dims, *axis);
                    let slot = grad_slot(&mut grads, node.inputs[0], &self.nodes);
                    for o in 0..outer {
                        let dst = (o * mid + start) * inner;
                        let src = o * len * inner;
                        for i in 0..len * inner {
                            slot[dst + i] += g[src + i];
                        }
                    }
                }
                Op::Concat { axis } => {
                    let inputs = node.inputs.clone();
                    let dims = node.dims.clone();
                    let outer: usize = dims[..*axis].iter().product();
                    let inner: usize = dims[*axis + 1..].iter().product();
                    let total = dims[*axis] * inner;
                    let mut offset = 0;
                    for inp in inputs {
                        let chunk = self.nodes[inp].dims[*axis] * inner;
                        let slot = grad_slot(&mut grads, inp, &self.nodes);
                        for o in 0..outer {
                            let src = o * total + offset;
                            let dst = o * chunk;
                            for i in 0..chunk {
                                slot[dst + i] += g[src + i];
                            }
                        }
                        offset += chunk;
                    }
                }
                Op::MatMul { ta, tb } => {
                    let (ia, ib) = (node.inputs[0], node.inputs[1]);
                    let (adims, bdims) =
                        (self.nodes[ia].dims.clone(), self.nodes[ib].dims.clone());
                    let (m, k) = logical2(&adims, *ta);
                    let n = node.dims[1];
                    let (ta, tb) = (*ta, *tb);
                    {
                        let b_data = Rc::clone(&self.nodes[ib].data);
                        let slot = grad_slot(&mut grads, ia, &self.nodes);
                        unsafe {
                            // dA = dC . B^T
                            gemm_logical(
                                m,
                                n,
                                k,
                                E::one(),
                                g.as_ptr(),
                                false,
                                n,
                                b_data.as_ptr(),
                                !tb,
                                bdims[1],
                                E::one(),
                                slot.as_mut_ptr(),
                                ta,
                                adims[1],
                            );
                        }
                    }
                    {
                        let a_data = Rc::clone(&self.nodes[ia].data);
                        let slot = grad_slot(&mut grads, ib, &self.nodes);
                        unsafe {
                            // dB = A^T . dC
                            gemm_logical(
                                k,
                                m,
                                n,
                                E::one(),
                                a_data.as_ptr(),
                                !ta,
                                adims[1],
                                g.as_ptr(),
                                false,
                                n,
                                E::one(),
                                slot.as_mut_ptr(),
                                tb,
                                bdims[1],
                            );
                        }
                    }
                }
                Op::Bmm { tb } => {
                    let (ia, ib) = (node.inputs[0], node.inputs[1]);
                    let adims = self.nodes[ia].dims.clone();
                    let bdims = self.nodes[ib].dims.clone();
                    let (gcount, m, k) = (adims[0], adims[1], adims[2]);
                    let n = node.dims[2];
                    let (asz, bsz) = (m * k, bdims[1] * bdims[2]);
                    let tb = *tb;
                    {
                        let b_data = Rc::clone(&self.nodes[ib].data);
                        let slot = grad_slot(&mut grads, ia, &self.nodes);
                        for gi in 0..gcount {
                            unsafe {
                                gemm_logical(
                                    m,
                                    n,
                                    k,
                                    E::one(),
                                    g.as_ptr().add(gi * m * n),
                                    false,
                                    n,
                                    b_data.as_ptr().add(gi * bsz),
                                    !tb,
                                    bdims[2],
                                    E::one(),
                                    slot.as_mut_ptr().add(gi * asz),
                                    false,
                                    k,
                                );
                            }
                        }
                    }
                    {
                        let a_data = Rc::clone(&self.nodes[ia].data);
                        let slot = grad_slot(&mut grads, ib, &self.nodes);
                        for gi in 0..gcount {
                            unsafe {
                                gemm_logical(
                                    k,
                                    m,
                                    n,
                                    E::one(),
                                    a_data.as_ptr().add(gi * asz),
                                    true,
                                    k,
                                    g.as_ptr().add(gi * m * n),
                                    false,
                                    n,
                                    E::one(),
                                    slot.as_mut_ptr().add(gi * bsz),
                                    tb,
                                    bdims[2],
                                );
                            }
                        }
                    }
                }
                Op::Conv1d { kernel, stride, pad } => {
                    let (ix, iw) = (node.inputs[0], node.inputs[1]);
                    let xdims = self.nodes[ix].dims.clone();
                    let wdims = self.nodes[iw].dims.clone();
                    let (batch, cin, t) = (xdims[0], xdims[1], xdims[2]);
                    let cout = wdims[0];
                    let t_out = node.dims[2];
                    let (kernel, stride, pad) = (*kernel, *stride, *pad);
                    let x_data = Rc::clone(&self.nodes[ix].data);
                    let w_data = Rc::clone(&self.nodes[iw].data);
                    let mut cols = vec![E::zero(); cin * kernel * t_out];
                    {
                        let slot = grad_slot(&mut grads, iw, &self.nodes);
                        for b in 0..batch {
                            im2col(
                                &x_data[b * cin * t..],
                                cin,
                                t,
                                kernel,
                                stride,
                                pad,
                                t_out,
                                &mut cols,
                            );
                            unsafe {
                                // dW += dY . cols^T
                                gemm_logical(
                                    cout,
                                    t_out,
                                    cin * kernel,
                                    E::one(),
                                    g.as_ptr().add(b * cout * t_out),
                                    false,
                                    t_out,
                                    cols.as_ptr(),
                                    true,
                                    t_out,
                                    E::one(),
                                    slot.as_mut_ptr(),
                                    false,
                                    cin * kernel,
                                );
                            }
                        }
                    }
                    {
                        let mut dcols = vec![E::zero(); cin * kernel * t_out];
                        let slot = grad_slot(&mut grads, ix, &self.nodes);
                        for b in 0..batch {
                            unsafe {
                                // dcols = W^T . dY
                                gemm_logical(
                                    cin * kernel,
                                    cout,
                                    t_out,
                                    E::one(),
                                    w_data.as_ptr(),
                                    true,
                                    cin * kernel,
                                    g.as_ptr().add(b * cout * t_out),
                                    false,
                                    t_out,
                                    E::zero(),
                                    dcols.as_mut_ptr(),
                                    false,
                                    t_out,
                                );
                            }
                            col2im_add(
                                &dcols,
                                cin,
                                t,
                                kernel,
                                stride,
                                pad,
                                t_out,
                                &mut slot[b * cin * t..],
                            );
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

// ── Support kernels ────────────────────────────────────────────────────

#[derive(Clone, Copy)]
enum AccSign {
    Pos,
    Neg,
}

/// (outer, axis extent, inner) factorization of `dims` around `axis`.
fn split3(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn logical2(dims: &[usize], t: bool) -> (usize, usize) {
    if t {
        (dims[1], dims[0])
    } else {
        (dims[0], dims[1])
    }
}

/// C(m,n) = alpha * A(m,k) * B(k,n) + beta * C, where each operand may be
/// stored transposed; `ld*` is the stored row length.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_logical<E: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: E,
    a: *const E,
    ta: bool,
    lda: usize,
    b: *const E,
    tb: bool,
    ldb: usize,
    beta: E,
    c: *mut E,
    tc: bool,
    ldc: usize,
) {
    let (rsa, csa) = if ta { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if tb { (1, ldb as isize) } else { (ldb as isize, 1) };
    let (rsc, csc) = if tc { (1, ldc as isize) } else { (ldc as isize, 1) };
    E::gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

/// Gradient of an elementwise product with respect to one factor: the
/// incoming gradient times the *other* factor, reduced to a scalar when the
/// target operand was a broadcast scalar.
fn scaled_by_other<E: Scalar>(g: &[E], other: &Rc<Vec<E>>, out_len: usize) -> Vec<E> {
    if other.len() == out_len {
        g.iter().zip(other.iter()).map(|(&gv, &ov)| gv * ov).collect()
    } else {
        let o = other[0];
        g.iter().map(|&gv| gv * o).collect()
    }
}

/// Accumulate an output-shaped gradient into an input that may have been a
/// broadcast scalar (in which case it is sum-reduced).
fn accumulate_ew<E: Scalar>(
    nodes: &[Node<E>],
    grads: &mut [Option<Vec<E>>],
    input: usize,
    g: &[E],
    sign: AccSign,
) {
    let n = nodes[input].data.len();
    let slot = grads[input].get_or_insert_with(|| vec![E::zero(); n]);
    if n == g.len() {
        match sign {
            AccSign::Pos => {
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
            AccSign::Neg => {
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s -= v;
                }
            }
        }
    } else {
        // scalar operand: reduce
        let mut sum = E::zero();
        for &v in g {
            sum += v;
        }
        match sign {
            AccSign::Pos => slot[0] += sum,
            AccSign::Neg => slot[0] -= sum,
        }
    }
}

fn add_into<E: Scalar>(grads: &mut [Option<Vec<E>>], input: usize, nodes: &[Node<E>], g: &[E]) {
    let n = nodes[input].data.len();
    debug_assert_eq!(n, g.len());
    let slot = grads[input].get_or_insert_with(|| vec![E::zero(); n]);
    for (s, &v) in slot.iter_mut().zip(g) {
        *s += v;
    }
}

fn grad_slot<'a, E: Scalar>(
    grads: &'a mut [Option<Vec<E>>],
    input: usize,
    nodes: &[Node<E>],
) -> &'a mut Vec<E> {
    let n = nodes[input].data.len();
    grads[input].get_or_insert_with(|| vec![E::zero(); n])
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn permute_kernel<E: Scalar>(src: &[E], dims: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<E>) {
    let out_dims: Vec<usize> = axes.iter().map(|&a| dims[a]).collect();
    let in_strides = strides(dims);
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_dims.len();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut src_off = 0usize;
    loop {
        out.push(src[src_off]);
        // odometer increment over out_dims, tracking the source offset
        let mut ax = rank;
        loop {
            if ax == 0 {
                return (out_dims, out);
            }
            ax -= 1;
            idx[ax] += 1;
            src_off += step[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            src_off -= step[ax] * out_dims[ax];
            idx[ax] = 0;
        }
    }
}

fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Unfold (cin, t) into (cin*kernel, t_out) patches with zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Scalar>(
    x: &[E],
    cin: usize,
    t: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    cols: &mut [E],
) {
    for c in 0..cin {
        for kk in 0..kernel {
            let row = (c * kernel + kk) * t_out;
            for to in 0..t_out {
                let ti = (to * stride + kk) as isize - pad as isize;
                cols[row + to] = if ti >= 0 && (ti as usize) < t {
                    x[c * t + ti as usize]
                } else {
                    E::zero()
                };
            }
        }
    }
}

/// Transpose of `im2col`: scatter-add column gradients back onto the input.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Scalar>(
    cols: &[E],
    cin: usize,
    t: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    dx: &mut [E],
) {
    for c in 0..cin {
        for kk in 0..kernel {
            let row = (c * kernel + kk) * t_out;
            for to in 0..t_out {
                let ti = (to * stride + kk) as isize - pad as isize;
                if ti >= 0 && (ti as usize) < t {
                    dx[c * t + ti as usize] += cols[row + to];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::<f32>::new(0);
        let x = t(&[1, 3], &[0.0, 0.0, 0.0]);
        let y = tape.softmax_last(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f32>::new(7);
        let x = tape.draw_standard_normal(&[5, 9]);
        let y = tape.softmax_last(&x).unwrap();
        for r in 0..5 {
            let s: f32 = y.data()[r * 9..(r + 1) * 9].iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
            assert!(y.data()[r * 9..(r + 1) * 9].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::<f32>::new(0);
        let i3 = Tensor::eye(3);
        let a = t(&[3, 4], &(0..12).map(|v| v as f32).collect::<Vec<_>>());
        let y = tape.matmul(&i3, &a).unwrap();
        assert_eq!(y.data(), a.data());
        assert_eq!(y.dims(), &[3, 4]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let mut tape = Tape::<f32>::new(0);
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 5]);
        let err = tape.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn transposed_matmul_matches_materialized_transpose() {
        let mut tape = Tape::<f32>::new(3);
        let a = tape.draw_standard_normal(&[4, 3]);
        let b = tape.draw_standard_normal(&[5, 3]);
        let y1 = tape.matmul_nt(&a, &b).unwrap();
        let bt = tape.transpose(&b).unwrap();
        let y2 = tape.matmul(&a, &bt).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::<f32>::new(0);
        let w0 = t(&[3], &[1.0, 2.0, 3.0]);
        let w = tape.param("w", &w0).unwrap();
        let sq = tape.mul(&w, &w).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get("w").unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_leaf_yields_empty_gradient_map() {
        let mut tape = Tape::<f32>::new(0);
        let c = t(&[1], &[5.0]);
        let y = tape.scale(&c, 2.0).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert!(grads.is_empty());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f32>::new(0);
        let w = tape.param("w", &t(&[2], &[1.0, 2.0])).unwrap();
        let y = tape.scale(&w, 2.0).unwrap();
        assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::<f32>::new(0);
        let w = tape.param("w", &t(&[2], &[1.0, 2.0])).unwrap();
        let loss = tape.squared_l2(&w).unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.backward(&loss), Err(Error::Contract(_))));
    }

    #[test]
    fn fanout_gradient_is_exactly_double() {
        // One path:  loss = sum(w)          -> grad 1
        // Two paths: loss = sum(w) + sum(w) -> grad exactly 2
        let w0 = t(&[4], &[0.3, -1.7, 2.9, 0.001]);
        let mut tape = Tape::<f32>::new(0);
        let w = tape.param("w", &w0).unwrap();
        let s = tape.sum(&w).unwrap();
        let g1 = {
            let mut tape1 = Tape::<f32>::new(0);
            let w1 = tape1.param("w", &w0).unwrap();
            let s1 = tape1.sum(&w1).unwrap();
            tape1.backward(&s1).unwrap().get("w").unwrap().to_vec()
        };
        let both = tape.add(&s, &s).unwrap();
        let g2 = tape.backward(&both).unwrap();
        let g2 = g2.get("w").unwrap();
        for (a, b) in g1.iter().zip(g2) {
            assert_eq!(a * 2.0, *b);
        }
    }

    #[test]
    fn reshape_and_permute_round_trip_bit_exact() {
        let mut tape = Tape::<f32>::new(9);
        let x = tape.draw_standard_normal(&[3, 4, 5]);
        let r = tape.reshape(&x, &[4, 15]).unwrap();
        let r2 = tape.reshape(&r, &[3, 4, 5]).unwrap();
        assert_eq!(x.data(), r2.data());
        let p = tape.permute(&x, &[2, 0, 1]).unwrap();
        let p2 = tape.permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(x.dims(), p2.dims());
        assert_eq!(x.data(), p2.data());
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut tape = Tape::<f32>::new(2);
        let x = tape.draw_standard_normal(&[2, 6]);
        let a = tape.slice(&x, 1, 0, 2).unwrap();
        let b = tape.slice(&x, 1, 2, 4).unwrap();
        let y = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn mixing_tapes_is_a_contract_error() {
        let mut t1 = Tape::<f32>::new(0);
        let mut t2 = Tape::<f32>::new(0);
        let x = t1.param("x", &t(&[1], &[1.0])).unwrap();
        assert!(matches!(t2.scale(&x, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn conv1d_interior_column_is_kernel_sum_on_ones() {
        // input of ones: every interior output equals the sum of all kernel
        // weights (bias-free).
        let mut tape = Tape::<f32>::new(5);
        let x = Tensor::full(&[1, 80, 64], 1.0);
        let w = tape.draw_standard_normal(&[4, 80, 5]);
        let y = tape.conv1d(&x, &w, 1, 2).unwrap();
        assert_eq!(y.dims(), &[1, 4, 64]);
        for o in 0..4 {
            let ksum: f32 = w.data()[o * 80 * 5..(o + 1) * 80 * 5].iter().sum();
            for t0 in 2..62 {
                let v = y.data()[o * 64 + t0];
                assert!((v - ksum).abs() < 2e-4, "out ch {o} t {t0}: {v} vs {ksum}");
            }
        }
    }

    #[test]
    fn conv1d_matches_naive_nested_loop() {
        let mut tape = Tape::<f32>::new(11);
        let (b, cin, t_len, cout, k, pad, stride) = (2, 3, 7, 4, 5, 2, 1);
        let x = tape.draw_standard_normal(&[b, cin, t_len]);
        let w = tape.draw_standard_normal(&[cout, cin, k]);
        let y = tape.conv1d(&x, &w, stride, pad).unwrap();
        let t_out = (t_len + 2 * pad - k) / stride + 1;
        for bi in 0..b {
            for co in 0..cout {
                for to in 0..t_out {
                    let mut acc = 0.0f64;
                    for ci in 0..cin {
                        for kk in 0..k {
                            let ti = (to * stride + kk) as isize - pad as isize;
                            if ti >= 0 && (ti as usize) < t_len {
                                acc += (x.data()[(bi * cin + ci) * t_len + ti as usize]
                                    * w.data()[(co * cin + ci) * k + kk])
                                    as f64;
                            }
                        }
                    }
                    let got = y.data()[(bi * cout + co) * t_out + to] as f64;
                    assert!((got - acc).abs() < 1e-4, "({bi},{co},{to}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn log_rejects_non_finite_input() {
        let mut tape = Tape::<f32>::new(0);
        let x = t(&[2], &[1.0, f32::NAN]);
        assert!(matches!(tape.log(&x), Err(Error::Domain(_))));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::<f32>::inference(0);
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = tape.matmul(&x, &x).unwrap();
        assert_eq!(tape.num_nodes(), 0);
        assert!(y.tape_ref().is_none());
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let mut a = Tape::<f32>::new(42);
        let mut b = Tape::<f32>::new(42);
        assert_eq!(
            a.draw_standard_normal(&[8]).data(),
            b.draw_standard_normal(&[8]).data()
        );
    }
}
