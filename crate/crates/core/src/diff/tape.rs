//! Operation tape with hand-written adjoints.
//!
//! Every node owns its forward value. [`Tape::backward`] walks the nodes in
//! reverse recording order, which is a valid reverse topological order
//! because inputs are always recorded before their consumers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use crate::error::{shape_err, Error, Result};
use crate::grid::Geometry;
use crate::scalar::Scalar;

pub const GROUPNORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the recorded operations, used for error messages and for the
/// adjoint fault-injection fixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatmulPointwise,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddConst,
    Gelu,
    Relu,
    Sqrt,
    GroupNorm,
    Interpolate,
    Concat,
    Slice,
    ConvStrided,
    ConvTransposed,
    ReduceMean,
    ReduceVar,
    Mean,
    Sum,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 20] = [
        OpKind::MatmulPointwise,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::AddConst,
        OpKind::Gelu,
        OpKind::Relu,
        OpKind::Sqrt,
        OpKind::GroupNorm,
        OpKind::Interpolate,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::ConvStrided,
        OpKind::ConvTransposed,
        OpKind::ReduceMean,
        OpKind::ReduceVar,
        OpKind::Mean,
        OpKind::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatmulPointwise => "matmul_pointwise",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale => "scale",
            OpKind::AddConst => "add_const",
            OpKind::Gelu => "gelu",
            OpKind::Relu => "relu",
            OpKind::Sqrt => "sqrt",
            OpKind::GroupNorm => "groupnorm",
            OpKind::Interpolate => "interpolate",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::ConvStrided => "conv_strided",
            OpKind::ConvTransposed => "conv_transposed",
            OpKind::ReduceMean => "reduce_mean",
            OpKind::ReduceVar => "reduce_var",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::DIFFERENTIABLE.iter().copied().find(|k| k.name() == s)
    }
}

enum Op<T> {
    Leaf,
    Pointwise { w: Var, b: Option<Var>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Warp { v: Var, disp: Var, heads: usize, geom: Geometry },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    ConvDown { x: Var, w: Var, b: Var, geom: Geometry },
    ConvUp { x: Var, w: Var, b: Var, geom: Geometry },
    ReduceMean(Var),
    ReduceVar(Var),
    Mean(Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Pointwise { .. } => OpKind::MatmulPointwise,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Scale(..) => OpKind::Scale,
            Op::AddConst(..) => OpKind::AddConst,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Relu(..) => OpKind::Relu,
            Op::Sqrt(..) => OpKind::Sqrt,
            Op::GroupNorm { .. } => OpKind::GroupNorm,
            Op::Warp { .. } => OpKind::Interpolate,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::ConvDown { .. } => OpKind::ConvStrided,
            Op::ConvUp { .. } => OpKind::ConvTransposed,
            Op::ReduceMean(..) => OpKind::ReduceMean,
            Op::ReduceVar(..) => OpKind::ReduceVar,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
        }
    }
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf did not require grad or
    /// does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but returns zeros for unreached leaves.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); len])
    }
}

/// Reverse-mode differentiation record.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    /// Test fixture: perturbs the adjoint of every `kind` node so that
    /// gradient checks can prove they detect a wrong backward rule.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, shape: &[usize], value: Vec<T>) -> Result<Var> {
        self.leaf(shape, value, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&mut self, shape: &[usize], value: Vec<T>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    pub fn leaf(&mut self, shape: &[usize], value: Vec<T>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(shape_err(
                "leaf",
                format!("shape {shape:?} needs {n} values, got {}", value.len()),
            ));
        }
        Ok(self.push(value, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// `y = W x + b` applied at every grid point (a 1x1 convolution).
    ///
    /// `x: [C_in, ...]`, `w: [C_out, C_in]`, `b: [C_out]`.
    pub fn matmul_pointwise(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 || xs.is_empty() || ws[1] != xs[0] {
            return Err(shape_err("matmul_pointwise", format!("weight {ws:?} vs input {xs:?}")));
        }
        let (c_out, c_in) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err(
                    "matmul_pointwise",
                    format!("bias {:?} vs {c_out} outputs", self.shape(b)),
                ));
            }
        }
        let p: usize = xs[1..].iter().product();
        let mut y = vec![T::zero(); c_out * p];
        if let Some(b) = b {
            let bv = self.value(b);
            for co in 0..c_out {
                y[co * p..(co + 1) * p].fill(bv[co]);
            }
        }
        T::gemm(
            c_out,
            c_in,
            p,
            T::one(),
            self.value(w),
            (c_in, 1),
            self.value(x),
            (p, 1),
            T::one(),
            &mut y,
            (p, 1),
        );
        let mut shape = xs;
        shape[0] = c_out;
        let needs = self.needs(w) || self.needs(x) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, shape, Op::Pointwise { w, b, x }, needs))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<T>, Vec<usize>, bool)> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let y: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| f(p, q))
            .collect();
        Ok((y, self.shape(a).to_vec(), self.needs(a) || self.needs(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (y, s, n) = self.binary("add", a, b, |p, q| p + q)?;
        Ok(self.push(y, s, Op::Add(a, b), n))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (y, s, n) = self.binary("sub", a, b, |p, q| p - q)?;
        Ok(self.push(y, s, Op::Sub(a, b), n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (y, s, n) = self.binary("mul", a, b, |p, q| p * q)?;
        Ok(self.push(y, s, Op::Mul(a, b), n))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (y, s, n) = self.binary("div", a, b, |p, q| p / q)?;
        Ok(self.push(y, s, Op::Div(a, b), n))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T) -> (Vec<T>, Vec<usize>, bool) {
        let y = self.value(a).iter().map(|&v| f(v)).collect();
        (y, self.shape(a).to_vec(), self.needs(a))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (y, sh, n) = self.unary(a, |v| v * s);
        self.push(y, sh, Op::Scale(a, s), n)
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let (y, sh, n) = self.unary(a, |v| v + c);
        self.push(y, sh, Op::AddConst(a), n)
    }

    /// Exact GELU, `x Φ(x)` with the Gaussian CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (y, sh, n) = self.unary(a, kernels::gelu);
        self.push(y, sh, Op::Gelu(a), n)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (y, sh, n) = self.unary(a, |v| if v > T::zero() { v } else { T::zero() });
        self.push(y, sh, Op::Relu(a), n)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let (y, sh, n) = self.unary(a, |v| v.sqrt());
        self.push(y, sh, Op::Sqrt(a), n)
    }

    /// Group normalisation over (channels-in-group x space) with a
    /// per-channel affine map.
    pub fn groupnorm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = xs[0];
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(shape_err("groupnorm", format!("{c} channels in {groups} groups")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "groupnorm",
                format!("affine {:?}/{:?} vs {c} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (y, mean, rstd) =
            kernels::groupnorm_forward(self.value(x), self.value(gamma), self.value(beta), c, groups);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            y,
            xs,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            needs,
        ))
    }

    /// Multihead pullback: head `h` of `v` sampled at `x + disp_h(x)`.
    ///
    /// `v: [H * C_h, N...]`, `disp: [H * d, N...]` in physical units of
    /// `geom`'s extent; out-of-domain samples follow `geom.bc()`.
    pub fn warp(&mut self, v: Var, disp: Var, heads: usize, geom: &Geometry) -> Result<Var> {
        let vs = self.shape(v).to_vec();
        let ds = self.shape(disp).to_vec();
        let d = geom.dim();
        if vs[1..] != *geom.shape() || ds[1..] != *geom.shape() {
            return Err(shape_err(
                "interpolate",
                format!("values {vs:?} / displacements {ds:?} vs grid {:?}", geom.shape()),
            ));
        }
        if heads == 0 || !vs[0].is_multiple_of(heads) || ds[0] != heads * d {
            return Err(shape_err(
                "interpolate",
                format!("{} value and {} displacement channels for {heads} heads", vs[0], ds[0]),
            ));
        }
        let y = kernels::warp_forward(self.value(v), self.value(disp), vs[0], heads, geom);
        let needs = self.needs(v) || self.needs(disp);
        Ok(self.push(
            y,
            vs,
            Op::Warp {
                v,
                disp,
                heads,
                geom: geom.clone(),
            },
            needs,
        ))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?)
            .to_vec();
        let mut c = 0;
        let mut y = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != first[1..] {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
            c += s[0];
            y.extend_from_slice(self.value(p));
        }
        let mut shape = first;
        shape[0] = c;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(y, shape, Op::Concat(parts.to_vec()), needs))
    }

    /// Channels `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if start + len > xs[0] || len == 0 {
            return Err(shape_err("slice", format!("{start}..{} of {}", start + len, xs[0])));
        }
        let p: usize = xs[1..].iter().product();
        let y = self.value(x)[start * p..(start + len) * p].to_vec();
        let mut shape = xs;
        shape[0] = len;
        let needs = self.needs(x);
        Ok(self.push(y, shape, Op::Slice { x, start }, needs))
    }

    /// Kernel-3, stride-2 convolution; circular padding under periodic
    /// boundaries, zero padding otherwise.
    ///
    /// `x: [C_in, N...]`, `w: [C_out, C_in, 3^d]`, `b: [C_out]`.
    pub fn conv_strided(&mut self, x: Var, w: Var, b: Var, geom: &Geometry) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let d = geom.dim();
        let taps = 3usize.pow(d as u32);
        if xs[1..] != *geom.shape() || ws.len() != 3 || ws[1] != xs[0] || ws[2] != taps {
            return Err(shape_err(
                "conv_strided",
                format!("input {xs:?}, weight {ws:?}, grid {:?}", geom.shape()),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err("conv_strided", format!("bias {:?}", self.shape(b))));
        }
        for (axis, &len) in geom.shape().iter().enumerate() {
            if len % 2 != 0 {
                return Err(Error::ShapeNotDivisible { axis, len, divisor: 2 });
            }
        }
        let out_geom = geom.rescaled(1, 2)?;
        let y = kernels::conv_down_forward(self.value(x), self.value(w), self.value(b), xs[0], ws[0], geom, &out_geom);
        let mut shape = vec![ws[0]];
        shape.extend_from_slice(out_geom.shape());
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            y,
            shape,
            Op::ConvDown {
                x,
                w,
                b,
                geom: geom.clone(),
            },
            needs,
        ))
    }

    /// Kernel-2, stride-2 transposed convolution: exact 2x upsampling.
    ///
    /// `x: [C_in, N...]`, `w: [C_out, C_in, 2^d]`, `b: [C_out]`.
    pub fn conv_transposed(&mut self, x: Var, w: Var, b: Var, geom: &Geometry) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let d = geom.dim();
        let taps = 1usize << d;
        if xs[1..] != *geom.shape() || ws.len() != 3 || ws[1] != xs[0] || ws[2] != taps {
            return Err(shape_err(
                "conv_transposed",
                format!("input {xs:?}, weight {ws:?}, grid {:?}", geom.shape()),
            ));
        }
        if self.shape(b) != [ws[0]] {
            return Err(shape_err("conv_transposed", format!("bias {:?}", self.shape(b))));
        }
        let out_geom = geom.rescaled(2, 1)?;
        let y = kernels::conv_up_forward(self.value(x), self.value(w), self.value(b), xs[0], ws[0], geom, &out_geom);
        let mut shape = vec![ws[0]];
        shape.extend_from_slice(out_geom.shape());
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            y,
            shape,
            Op::ConvUp {
                x,
                w,
                b,
                geom: geom.clone(),
            },
            needs,
        ))
    }

    /// Per-channel spatial mean, `[C, ...] -> [C]`.
    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let p: usize = xs[1..].iter().product();
        let inv = T::of(1.0 / p as f64);
        let y: Vec<T> = self
            .value(x)
            .chunks(p)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs(x);
        self.push(y, vec![xs[0]], Op::ReduceMean(x), needs)
    }

    /// Per-channel population variance, `[C, ...] -> [C]`.
    pub fn reduce_var(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let p: usize = xs[1..].iter().product();
        let inv = T::of(1.0 / p as f64);
        let y: Vec<T> = self
            .value(x)
            .chunks(p)
            .map(|ch| {
                let mu = ch.iter().copied().sum::<T>() * inv;
                ch.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv
            })
            .collect();
        let needs = self.needs(x);
        self.push(y, vec![xs[0]], Op::ReduceVar(x), needs)
    }

    /// Mean of all elements (scalar).
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let y = self.value(x).iter().copied().sum::<T>() / T::of(n as f64);
        let needs = self.needs(x);
        self.push(vec![y], Vec::new(), Op::Mean(x), needs)
    }

    /// Sum of all elements (scalar).
    pub fn sum(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().copied().sum::<T>();
        let needs = self.needs(x);
        self.push(vec![y], Vec::new(), Op::Sum(x), needs)
    }

    /// Fingerprint of every non-differentiable decision taken in the
    /// forward pass: ReLU signs and the interpolation cell of every warp
    /// query. Finite differences are only valid between evaluations that
    /// share a fingerprint.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for (i, &v) in self.value(*a).iter().enumerate() {
                        if v > T::zero() {
                            mix(i as u64);
                        }
                    }
                }
                Op::Warp { disp, heads, geom, .. } => {
                    kernels::warp_cells(self.value(*disp), *heads, geom, &mut mix);
                }
                _ => {}
            }
        }
        h
    }

    /// Populates gradients of every leaf that requires grad.
    ///
    /// Consumes the tape's backward capability: a second call returns
    /// [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NotScalarLoss { len });
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[i].take() else { continue };
            if self.fault == Some(node.op.kind()) {
                for v in g.iter_mut() {
                    *v *= T::of(1.25);
                }
            }
            self.adjoint(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn adjoint(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Pointwise { w, b, x } => {
                let ws = self.shape(*w);
                let (c_out, c_in) = (ws[0], ws[1]);
                let p = g.len() / c_out;
                if needs(*x) {
                    let dx = slot(grads, *x, c_in * p);
                    T::gemm(c_in, c_out, p, T::one(), val(*w), (1, c_in), g, (p, 1), T::one(), dx, (p, 1));
                }
                if needs(*w) {
                    let dw = slot(grads, *w, c_out * c_in);
                    T::gemm(c_out, p, c_in, T::one(), g, (p, 1), val(*x), (1, p), T::one(), dw, (c_in, 1));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let db = slot(grads, *b, c_out);
                        for co in 0..c_out {
                            db[co] += g[co * p..(co + 1) * p].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let s = slot(grads, v, g.len());
                        s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let s = slot(grads, *a, g.len());
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
                }
                if needs(*b) {
                    let s = slot(grads, *b, g.len());
                    s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b);
                    let s = slot(grads, *a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k];
                    }
                }
                if needs(*b) {
                    let av = val(*a);
                    let s = slot(grads, *b, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * av[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                if needs(*a) {
                    let s = slot(grads, *a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] / bv[k];
                    }
                }
                if needs(*b) {
                    let s = slot(grads, *b, g.len());
                    for k in 0..g.len() {
                        s[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                }
            }
            Op::Scale(a, c) => {
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * *c);
            }
            Op::AddConst(a) => {
                let s = slot(grads, *a, g.len());
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g);
            }
            Op::Gelu(a) => {
                let av = val(*a);
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    s[k] += g[k] * kernels::gelu_grad(av[k]);
                }
            }
            Op::Relu(a) => {
                let av = val(*a);
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    if av[k] > T::zero() {
                        s[k] += g[k];
                    }
                }
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    if y[k] > T::zero() {
                        s[k] += g[k] * T::of(0.5) / y[k];
                    }
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let c = self.shape(*x)[0];
                let grads_out = kernels::groupnorm_backward(val(*x), val(*gamma), g, mean, rstd, c, *groups);
                if needs(*x) {
                    let s = slot(grads, *x, g.len());
                    s.iter_mut().zip(&grads_out.dx).for_each(|(s, &d)| *s += d);
                }
                if needs(*gamma) {
                    let s = slot(grads, *gamma, c);
                    s.iter_mut().zip(&grads_out.dgamma).for_each(|(s, &d)| *s += d);
                }
                if needs(*beta) {
                    let s = slot(grads, *beta, c);
                    s.iter_mut().zip(&grads_out.dbeta).for_each(|(s, &d)| *s += d);
                }
            }
            Op::Warp { v, disp, heads, geom } => {
                let c = self.shape(*v)[0];
                let p = geom.len();
                let mut dv = if needs(*v) { Some(vec![T::zero(); c * p]) } else { None };
                let mut dd = if needs(*disp) {
                    Some(vec![T::zero(); *heads * geom.dim() * p])
                } else {
                    None
                };
                kernels::warp_backward(val(*v), val(*disp), g, c, *heads, geom, dv.as_deref_mut(), dd.as_deref_mut());
                if let Some(dv) = dv {
                    let s = slot(grads, *v, dv.len());
                    s.iter_mut().zip(&dv).for_each(|(s, &d)| *s += d);
                }
                if let Some(dd) = dd {
                    let s = slot(grads, *disp, dd.len());
                    s.iter_mut().zip(&dd).for_each(|(s, &d)| *s += d);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &pv in parts {
                    let l = val(pv).len();
                    if needs(pv) {
                        let s = slot(grads, pv, l);
                        s.iter_mut().zip(&g[off..off + l]).for_each(|(s, &d)| *s += d);
                    }
                    off += l;
                }
            }
            Op::Slice { x, start } => {
                let xs = self.shape(*x);
                let p: usize = xs[1..].iter().product();
                let total = val(*x).len();
                let s = slot(grads, *x, total);
                s[start * p..start * p + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, &d)| *s += d);
            }
            Op::ConvDown { x, w, b, geom } => {
                let c_in = self.shape(*x)[0];
                let c_out = self.shape(*w)[0];
                let out_geom = geom.rescaled(1, 2).expect("validated at record time");
                let dx = needs(*x).then(|| vec![T::zero(); c_in * geom.len()]);
                let dw = needs(*w).then(|| vec![T::zero(); val(*w).len()]);
                let (dx, dw, db) = kernels::conv_down_backward(val(*x), val(*w), g, c_in, c_out, geom, &out_geom, dx, dw);
                self.merge_conv(grads, *x, *w, *b, dx, dw, db);
            }
            Op::ConvUp { x, w, b, geom } => {
                let c_in = self.shape(*x)[0];
                let c_out = self.shape(*w)[0];
                let out_geom = geom.rescaled(2, 1).expect("validated at record time");
                let dx = needs(*x).then(|| vec![T::zero(); c_in * geom.len()]);
                let dw = needs(*w).then(|| vec![T::zero(); val(*w).len()]);
                let (dx, dw, db) = kernels::conv_up_backward(val(*x), val(*w), g, c_in, c_out, geom, &out_geom, dx, dw);
                self.merge_conv(grads, *x, *w, *b, dx, dw, db);
            }
            Op::ReduceMean(x) => {
                let total = val(*x).len();
                let c = g.len();
                let p = total / c;
                let inv = T::of(1.0 / p as f64);
                let s = slot(grads, *x, total);
                for ch in 0..c {
                    for v in &mut s[ch * p..(ch + 1) * p] {
                        *v += g[ch] * inv;
                    }
                }
            }
            Op::ReduceVar(x) => {
                let xv = val(*x);
                let total = xv.len();
                let c = g.len();
                let p = total / c;
                let inv = T::of(1.0 / p as f64);
                let s = slot(grads, *x, total);
                for ch in 0..c {
                    let chunk = &xv[ch * p..(ch + 1) * p];
                    let mu = chunk.iter().copied().sum::<T>() * inv;
                    let k = T::of(2.0) * inv * g[ch];
                    for (sv, &v) in s[ch * p..(ch + 1) * p].iter_mut().zip(chunk) {
                        *sv += k * (v - mu);
                    }
                }
            }
            Op::Mean(x) => {
                let total = val(*x).len();
                let gi = g[0] / T::of(total as f64);
                let s = slot(grads, *x, total);
                s.iter_mut().for_each(|v| *v += gi);
            }
            Op::Sum(x) => {
                let total = val(*x).len();
                let s = slot(grads, *x, total);
                s.iter_mut().for_each(|v| *v += g[0]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn merge_conv(
        &self,
        grads: &mut [Option<Vec<T>>],
        x: Var,
        w: Var,
        b: Var,
        dx: Option<Vec<T>>,
        dw: Option<Vec<T>>,
        db: Vec<T>,
    ) {
        if let Some(dx) = dx {
            let s = slot(grads, x, dx.len());
            s.iter_mut().zip(&dx).for_each(|(s, &d)| *s += d);
        }
        if let Some(dw) = dw {
            let s = slot(grads, w, dw.len());
            s.iter_mut().zip(&dw).for_each(|(s, &d)| *s += d);
        }
        if self.nodes[b.0].needs_grad {
            let s = slot(grads, b, db.len());
            s.iter_mut().zip(&db).for_each(|(s, &d)| *s += d);
        }
    }
}
