//! Reverse-mode automatic differentiation over split complex tensors.
//!
//! Every complex tensor in a computation is handled as its pair of real
//! planes, so the tape records real-valued nodes only and no Wirtinger
//! calculus is needed: the loss is real and every operation is expressed in
//! real arithmetic. A [`CVar`] is simply a pair of real node handles.
//!
//! The tape is rebuilt on every forward pass (define-by-run). Backward walks
//! the nodes once in reverse order and accumulates gradients into the
//! persistent [`Parameter`] leaves; gradients keep accumulating across
//! backward calls until explicitly zeroed.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

/// Handle to a real-valued node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RVar(usize);

/// Handle to a complex value: a pair of real nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: RVar,
    pub im: RVar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Complex,
    Real,
}

/// A trainable tensor with an accumulated gradient.
///
/// Complex parameters hold two planes (re, im); real parameters hold one.
/// The `im_frozen` flag pins the imaginary plane at zero and excludes it from
/// both optimization and gradient accumulation, which is how the
/// amplitude-only ablation turns a complex network into a real one.
pub struct Parameter<P: Scalar> {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    planes: RefCell<Vec<Vec<P>>>,
    grads: RefCell<Vec<Vec<P>>>,
    trainable: Cell<bool>,
    im_frozen: Cell<bool>,
}

impl<P: Scalar> Parameter<P> {
    pub fn complex(name: impl Into<String>, value: ComplexTensor<P>, trainable: bool) -> Rc<Self> {
        let len = value.len();
        Rc::new(Parameter {
            name: name.into(),
            shape: value.shape().to_vec(),
            kind: ParamKind::Complex,
            planes: RefCell::new(vec![value.re().to_vec(), value.im().to_vec()]),
            grads: RefCell::new(vec![vec![P::ZERO; len], vec![P::ZERO; len]]),
            trainable: Cell::new(trainable),
            im_frozen: Cell::new(false),
        })
    }

    pub fn real(name: impl Into<String>, value: RealTensor<P>, trainable: bool) -> Rc<Self> {
        let len = value.len();
        Rc::new(Parameter {
            name: name.into(),
            shape: value.shape().to_vec(),
            kind: ParamKind::Real,
            planes: RefCell::new(vec![value.to_vec()]),
            grads: RefCell::new(vec![vec![P::ZERO; len]]),
            trainable: Cell::new(trainable),
            im_frozen: Cell::new(false),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn plane_len(&self) -> usize {
        self.planes.borrow()[0].len()
    }

    pub fn num_planes(&self) -> usize {
        self.planes.borrow().len()
    }

    pub fn trainable(&self) -> bool {
        self.trainable.get()
    }

    pub fn set_trainable(&self, trainable: bool) {
        self.trainable.set(trainable);
    }

    pub fn im_frozen(&self) -> bool {
        self.im_frozen.get()
    }

    /// Zero the imaginary plane and permanently exclude it from training.
    pub fn freeze_im(&self) {
        if self.kind == ParamKind::Complex {
            let mut planes = self.planes.borrow_mut();
            for v in planes[1].iter_mut() {
                *v = P::ZERO;
            }
            self.im_frozen.set(true);
        }
    }

    /// Is this plane updated by the optimizer and checked by grad_check?
    pub fn plane_trainable(&self, plane: usize) -> bool {
        self.trainable.get() && !(plane == 1 && self.im_frozen.get())
    }

    pub fn plane_tensor(&self, plane: usize) -> RealTensor<P> {
        RealTensor::new(self.shape.clone(), self.planes.borrow()[plane].clone())
            .expect("plane length matches shape")
    }

    pub fn grad_plane(&self, plane: usize) -> Vec<P> {
        self.grads.borrow()[plane].clone()
    }

    pub fn value_complex(&self) -> ComplexTensor<P> {
        assert_eq!(self.kind, ParamKind::Complex, "{} is not complex", self.name);
        let planes = self.planes.borrow();
        ComplexTensor::from_planes(self.shape.clone(), planes[0].clone(), planes[1].clone())
            .expect("plane lengths match shape")
    }

    pub fn value_real(&self) -> RealTensor<P> {
        assert_eq!(self.kind, ParamKind::Real, "{} is not real", self.name);
        self.plane_tensor(0)
    }

    pub fn set_plane(&self, plane: usize, data: &[P]) {
        let mut planes = self.planes.borrow_mut();
        assert_eq!(planes[plane].len(), data.len());
        planes[plane].copy_from_slice(data);
    }

    /// Overwrite one coordinate, returning the previous value (used by
    /// finite-difference checks).
    pub fn nudge(&self, plane: usize, index: usize, value: P) -> P {
        let mut planes = self.planes.borrow_mut();
        let old = planes[plane][index];
        planes[plane][index] = value;
        old
    }

    pub fn accumulate_grad(&self, plane: usize, contribution: &[P]) {
        if plane == 1 && self.im_frozen.get() {
            return;
        }
        let mut grads = self.grads.borrow_mut();
        for (g, &c) in grads[plane].iter_mut().zip(contribution) {
            *g = g.add(c);
        }
    }

    pub fn zero_grad(&self) {
        let mut grads = self.grads.borrow_mut();
        for plane in grads.iter_mut() {
            for g in plane.iter_mut() {
                *g = P::ZERO;
            }
        }
    }

    /// Total real coordinates stored (both planes for complex).
    pub fn real_count(&self) -> usize {
        self.plane_len() * self.num_planes()
    }

    /// Real coordinates the optimizer may move.
    pub fn trainable_real_count(&self) -> usize {
        if !self.trainable.get() {
            return 0;
        }
        let planes = if self.kind == ParamKind::Complex && self.im_frozen.get() {
            1
        } else {
            self.num_planes()
        };
        self.plane_len() * planes
    }
}

/// Zero the accumulated gradient of every listed parameter.
pub fn zero_grads<P: Scalar>(params: &[Rc<Parameter<P>>]) {
    for p in params {
        p.zero_grad();
    }
}

type BackwardFn<P> = Box<dyn Fn(&RealTensor<P>) -> Vec<(usize, Vec<P>)>>;

struct Node<P: Scalar> {
    value: RealTensor<P>,
    backward: Option<BackwardFn<P>>,
    requires_grad: bool,
    param: Option<(Rc<Parameter<P>>, usize)>,
}

/// Define-by-run tape.
pub struct Graph<P: Scalar> {
    nodes: Vec<Node<P>>,
    grads: Vec<Option<RealTensor<P>>>,
}

impl<P: Scalar> Default for Graph<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Scalar> Graph<P> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: RealTensor<P>,
        requires_grad: bool,
        backward: Option<BackwardFn<P>>,
        param: Option<(Rc<Parameter<P>>, usize)>,
    ) -> RVar {
        self.nodes.push(Node {
            value,
            backward,
            requires_grad,
            param,
        });
        RVar(self.nodes.len() - 1)
    }

    fn requires(&self, v: RVar) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: RVar) -> &RealTensor<P> {
        &self.nodes[v.0].value
    }

    pub fn cvalue(&self, v: CVar) -> ComplexTensor<P> {
        ComplexTensor::new(self.value(v.re).clone(), self.value(v.im).clone())
            .expect("complex var planes share a shape")
    }

    /// Gradient of the last backward pass with respect to node `v`.
    pub fn grad(&self, v: RVar) -> Option<&RealTensor<P>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: RealTensor<P>) -> RVar {
        self.push(value, false, None, None)
    }

    pub fn complex_constant(&mut self, value: &ComplexTensor<P>) -> CVar {
        CVar {
            re: self.constant(value.re().clone()),
            im: self.constant(value.im().clone()),
        }
    }

    /// Bind a complex parameter as a pair of leaves.
    pub fn complex_param(&mut self, param: &Rc<Parameter<P>>) -> CVar {
        assert_eq!(param.kind(), ParamKind::Complex);
        let re = self.push(
            param.plane_tensor(0),
            param.plane_trainable(0),
            None,
            Some((Rc::clone(param), 0)),
        );
        let im = self.push(
            param.plane_tensor(1),
            param.plane_trainable(1),
            None,
            Some((Rc::clone(param), 1)),
        );
        CVar { re, im }
    }

    /// Bind a real parameter as a leaf.
    pub fn real_param(&mut self, param: &Rc<Parameter<P>>) -> RVar {
        assert_eq!(param.kind(), ParamKind::Real);
        self.push(
            param.plane_tensor(0),
            param.plane_trainable(0),
            None,
            Some((Rc::clone(param), 0)),
        )
    }

    // ---- elementwise primitives ----

    fn binary_elementwise(
        &mut self,
        op: &'static str,
        a: RVar,
        b: RVar,
        f: impl Fn(P, P) -> P,
        back: impl Fn(P, P, P) -> (P, P) + 'static,
    ) -> Result<RVar> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let out = va.zip_map(&vb, op, f)?;
        let (need_a, need_b) = (self.requires(a), self.requires(b));
        let requires = need_a || need_b;
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut contribs = Vec::new();
                if need_a {
                    let da: Vec<P> = g
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(&gi, (&ai, &bi))| back(gi, ai, bi).0)
                        .collect();
                    contribs.push((a.0, da));
                }
                if need_b {
                    let db: Vec<P> = g
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data()))
                        .map(|(&gi, (&ai, &bi))| back(gi, ai, bi).1)
                        .collect();
                    contribs.push((b.0, db));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    pub fn add(&mut self, a: RVar, b: RVar) -> Result<RVar> {
        self.binary_elementwise("add", a, b, |x, y| x.add(y), |g, _, _| (g, g))
    }

    pub fn sub(&mut self, a: RVar, b: RVar) -> Result<RVar> {
        self.binary_elementwise("sub", a, b, |x, y| x.sub(y), |g, _, _| (g, g.neg()))
    }

    pub fn mul(&mut self, a: RVar, b: RVar) -> Result<RVar> {
        self.binary_elementwise(
            "mul",
            a,
            b,
            |x, y| x.mul(y),
            |g, x, y| (g.mul(y), g.mul(x)),
        )
    }

    fn unary_elementwise(
        &mut self,
        x: RVar,
        f: impl Fn(P) -> P,
        // (upstream, input, output) -> downstream
        back: impl Fn(P, P, P) -> P + 'static,
    ) -> RVar {
        let vx = self.value(x).clone();
        let out = vx.map(f);
        let requires = self.requires(x);
        let backward: Option<BackwardFn<P>> = if requires {
            let vy = out.clone();
            Some(Box::new(move |g: &RealTensor<P>| {
                let dx: Vec<P> = g
                    .data()
                    .iter()
                    .zip(vx.data().iter().zip(vy.data()))
                    .map(|(&gi, (&xi, &yi))| back(gi, xi, yi))
                    .collect();
                vec![(x.0, dx)]
            }))
        } else {
            None
        };
        self.push(out, requires, backward, None)
    }

    pub fn scalar_mul(&mut self, x: RVar, c: P) -> RVar {
        self.unary_elementwise(x, |v| v.mul(c), move |g, _, _| g.mul(c))
    }

    pub fn scalar_add(&mut self, x: RVar, c: P) -> RVar {
        self.unary_elementwise(x, |v| v.add(c), |g, _, _| g)
    }

    pub fn sqrt(&mut self, x: RVar) -> RVar {
        self.unary_elementwise(
            x,
            |v| v.sqrt(),
            |g, _, y| g.div(y.add(y)),
        )
    }

    pub fn recip(&mut self, x: RVar) -> RVar {
        self.unary_elementwise(x, |v| P::ONE.div(v), |g, _, y| g.mul(y.mul(y)).neg())
    }

    /// ReLU with the right-hand derivative at the kink (gradient 1 at 0).
    pub fn relu(&mut self, x: RVar) -> RVar {
        self.unary_elementwise(
            x,
            |v| if v > P::ZERO { v } else { P::ZERO },
            |g, x, _| if x >= P::ZERO { g } else { P::ZERO },
        )
    }

    pub fn tanh(&mut self, x: RVar) -> RVar {
        self.unary_elementwise(x, |v| v.tanh(), |g, _, y| g.mul(P::ONE.sub(y.mul(y))))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: RVar) -> RVar {
        self.unary_elementwise(
            x,
            |v| if v >= P::ZERO { v } else { v.exp().sub(P::ONE) },
            |g, x, y| if x >= P::ZERO { g } else { g.mul(y.add(P::ONE)) },
        )
    }

    /// Identity forward with a deliberately wrong backward rule
    /// (gradients scaled by `factor`). Negative control for gradient checks.
    pub fn faulty_identity(&mut self, x: RVar, factor: P) -> RVar {
        self.unary_elementwise(x, |v| v, move |g, _, _| g.mul(factor))
    }

    // ---- structure ----

    pub fn reshape(&mut self, x: RVar, shape: &[usize]) -> Result<RVar> {
        let out = self.value(x).reshape(shape)?;
        let requires = self.requires(x);
        let in_shape = self.value(x).shape().to_vec();
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let _ = &in_shape;
                vec![(x.0, g.to_vec())]
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// `out[i] = x[indices[i]]`; backward scatter-adds. Used for pooling
    /// selection routing.
    pub fn gather(
        &mut self,
        x: RVar,
        indices: Arc<Vec<usize>>,
        out_shape: Vec<usize>,
    ) -> Result<RVar> {
        let vx = self.value(x).clone();
        let expected: usize = out_shape.iter().product();
        if indices.len() != expected {
            return Err(Error::invalid(
                "gather",
                format!("{} indices for output shape {:?}", indices.len(), out_shape),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vx.len()) {
            return Err(Error::invalid(
                "gather",
                format!("index {} out of bounds for {} elements", bad, vx.len()),
            ));
        }
        let data: Vec<P> = indices.iter().map(|&i| vx.data()[i]).collect();
        let out = RealTensor::new(out_shape, data)?;
        let requires = self.requires(x);
        let in_len = vx.len();
        let backward: Option<BackwardFn<P>> = if requires {
            let indices = Arc::clone(&indices);
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut dx = vec![P::ZERO; in_len];
                for (&i, &gi) in indices.iter().zip(g.data()) {
                    dx[i] = dx[i].add(gi);
                }
                vec![(x.0, dx)]
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    // ---- channel ops (axis 1 broadcast/reduce) ----

    fn channel_dims(&self, op: &'static str, x: RVar) -> Result<(usize, usize, usize)> {
        let shape = self.value(x).shape();
        if shape.len() < 2 {
            return Err(Error::invalid(
                op,
                format!("need at least 2 axes, got {shape:?}"),
            ));
        }
        let n = shape[0];
        let c = shape[1];
        let s: usize = shape[2..].iter().product();
        Ok((n, c, s))
    }

    /// Mean over every axis except the channel axis (axis 1).
    pub fn channel_mean(&mut self, x: RVar) -> Result<RVar> {
        let (n, c, s) = self.channel_dims("channel_mean", x)?;
        let count = n * s;
        if count == 0 {
            return Err(Error::invalid("channel_mean", "empty population"));
        }
        let vx = self.value(x).clone();
        // Accumulate in f64 for precision and determinism in both modes.
        let mut acc = vec![0.0f64; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * s;
                let mut sum = 0.0f64;
                for i in 0..s {
                    sum += vx.data()[base + i].to_f64();
                }
                acc[ci] += sum;
            }
        }
        let inv = 1.0 / count as f64;
        let data: Vec<P> = acc.iter().map(|&v| P::from_f64(v * inv)).collect();
        let out = RealTensor::new(vec![c], data)?;
        let requires = self.requires(x);
        let backward: Option<BackwardFn<P>> = if requires {
            let scale = P::from_f64(inv);
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut dx = vec![P::ZERO; n * c * s];
                for ni in 0..n {
                    for ci in 0..c {
                        let gi = g.data()[ci].mul(scale);
                        let base = (ni * c + ci) * s;
                        for i in 0..s {
                            dx[base + i] = gi;
                        }
                    }
                }
                vec![(x.0, dx)]
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// `out[n,c,..] = x[n,c,..] * w[c]`.
    pub fn mul_channel(&mut self, x: RVar, w: RVar) -> Result<RVar> {
        let (n, c, s) = self.channel_dims("mul_channel", x)?;
        let vw = self.value(w).clone();
        if vw.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "mul_channel",
                left: self.value(x).shape().to_vec(),
                right: vw.shape().to_vec(),
            });
        }
        let vx = self.value(x).clone();
        let mut data = vec![P::ZERO; n * c * s];
        for ni in 0..n {
            for ci in 0..c {
                let wv = vw.data()[ci];
                let base = (ni * c + ci) * s;
                for i in 0..s {
                    data[base + i] = vx.data()[base + i].mul(wv);
                }
            }
        }
        let out = RealTensor::new(vx.shape().to_vec(), data)?;
        let (need_x, need_w) = (self.requires(x), self.requires(w));
        let requires = need_x || need_w;
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut contribs = Vec::new();
                if need_x {
                    let mut dx = vec![P::ZERO; n * c * s];
                    for ni in 0..n {
                        for ci in 0..c {
                            let wv = vw.data()[ci];
                            let base = (ni * c + ci) * s;
                            for i in 0..s {
                                dx[base + i] = g.data()[base + i].mul(wv);
                            }
                        }
                    }
                    contribs.push((x.0, dx));
                }
                if need_w {
                    let mut dw = vec![0.0f64; c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * s;
                            let mut sum = 0.0f64;
                            for i in 0..s {
                                sum += g.data()[base + i].to_f64() * vx.data()[base + i].to_f64();
                            }
                            dw[ci] += sum;
                        }
                    }
                    contribs.push((w.0, dw.iter().map(|&v| P::from_f64(v)).collect()));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// `out[n,c,..] = x[n,c,..] + b[c]`.
    pub fn add_channel(&mut self, x: RVar, b: RVar) -> Result<RVar> {
        let (n, c, s) = self.channel_dims("add_channel", x)?;
        let vb = self.value(b).clone();
        if vb.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_channel",
                left: self.value(x).shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let vx = self.value(x).clone();
        let mut data = vec![P::ZERO; n * c * s];
        for ni in 0..n {
            for ci in 0..c {
                let bv = vb.data()[ci];
                let base = (ni * c + ci) * s;
                for i in 0..s {
                    data[base + i] = vx.data()[base + i].add(bv);
                }
            }
        }
        let out = RealTensor::new(vx.shape().to_vec(), data)?;
        let (need_x, need_b) = (self.requires(x), self.requires(b));
        let requires = need_x || need_b;
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut contribs = Vec::new();
                if need_x {
                    contribs.push((x.0, g.to_vec()));
                }
                if need_b {
                    let mut db = vec![0.0f64; c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * s;
                            let mut sum = 0.0f64;
                            for i in 0..s {
                                sum += g.data()[base + i].to_f64();
                            }
                            db[ci] += sum;
                        }
                    }
                    contribs.push((b.0, db.iter().map(|&v| P::from_f64(v)).collect()));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    // ---- linear algebra ----

    /// `out[n,o] = sum_f x[n,f] * w[o,f]`.
    pub fn matmul_nt(&mut self, x: RVar, w: RVar) -> Result<RVar> {
        let vx = self.value(x).clone();
        let vw = self.value(w).clone();
        if vx.ndim() != 2 || vw.ndim() != 2 || vx.shape()[1] != vw.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: vx.shape().to_vec(),
                right: vw.shape().to_vec(),
            });
        }
        let (n, f) = (vx.shape()[0], vx.shape()[1]);
        let o = vw.shape()[0];
        let out = RealTensor::new(vec![n, o], kernels::matmul_nt(vx.data(), n, f, vw.data(), o))?;
        let (need_x, need_w) = (self.requires(x), self.requires(w));
        let requires = need_x || need_w;
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut contribs = Vec::new();
                if need_x {
                    // dx[n,f] = g[n,o] * w[o,f]
                    contribs.push((x.0, kernels::matmul_nn(g.data(), n, o, vw.data(), f)));
                }
                if need_w {
                    // dw[o,f] = g^T[o,n] * x[n,f]
                    contribs.push((w.0, kernels::matmul_tn(g.data(), n, o, vx.data(), f)));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// Real 2-D cross-correlation with stride and zero padding.
    pub fn conv2d(
        &mut self,
        x: RVar,
        k: RVar,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<RVar> {
        let vx = self.value(x).clone();
        let vk = self.value(k).clone();
        let geom = ConvGeom::resolve(vx.shape(), vk.shape(), stride, padding)?;
        let out = RealTensor::new(geom.out_shape(), kernels::conv_forward(vx.data(), vk.data(), &geom))?;
        let (need_x, need_k) = (self.requires(x), self.requires(k));
        let requires = need_x || need_k;
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let mut contribs = Vec::new();
                if need_x {
                    contribs.push((x.0, kernels::conv_grad_input(vk.data(), g.data(), &geom)));
                }
                if need_k {
                    contribs.push((k.0, kernels::conv_grad_kernel(vx.data(), g.data(), &geom)));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    // ---- complex/real boundary and losses ----

    /// Element-wise modulus of a complex pair; the gradient convention at
    /// `z = 0` is zero.
    pub fn modulus(&mut self, z: CVar) -> Result<RVar> {
        let vre = self.value(z.re).clone();
        let vim = self.value(z.im).clone();
        if vre.shape() != vim.shape() {
            return Err(Error::ShapeMismatch {
                op: "modulus",
                left: vre.shape().to_vec(),
                right: vim.shape().to_vec(),
            });
        }
        let data: Vec<P> = vre
            .data()
            .iter()
            .zip(vim.data())
            .map(|(&a, &b)| a.mul(a).add(b.mul(b)).sqrt())
            .collect();
        let out = RealTensor::new(vre.shape().to_vec(), data)?;
        let (need_re, need_im) = (self.requires(z.re), self.requires(z.im));
        let requires = need_re || need_im;
        let backward: Option<BackwardFn<P>> = if requires {
            let vm = out.clone();
            Some(Box::new(move |g: &RealTensor<P>| {
                let ratio = |num: P, m: P| if m > P::ZERO { num.div(m) } else { P::ZERO };
                let mut contribs = Vec::new();
                if need_re {
                    let dre: Vec<P> = g
                        .data()
                        .iter()
                        .zip(vre.data().iter().zip(vm.data()))
                        .map(|(&gi, (&a, &m))| gi.mul(ratio(a, m)))
                        .collect();
                    contribs.push((z.re.0, dre));
                }
                if need_im {
                    let dim: Vec<P> = g
                        .data()
                        .iter()
                        .zip(vim.data().iter().zip(vm.data()))
                        .map(|(&gi, (&b, &m))| gi.mul(ratio(b, m)))
                        .collect();
                    contribs.push((z.im.0, dim));
                }
                contribs
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// Weighted sum against a constant tensor; yields a `[1]` scalar.
    pub fn dot_const(&mut self, x: RVar, weights: RealTensor<P>) -> Result<RVar> {
        let vx = self.value(x).clone();
        if vx.shape() != weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "dot_const",
                left: vx.shape().to_vec(),
                right: weights.shape().to_vec(),
            });
        }
        let mut acc = 0.0f64;
        for (&a, &w) in vx.data().iter().zip(weights.data()) {
            acc += a.to_f64() * w.to_f64();
        }
        let out = RealTensor::scalar(P::from_f64(acc));
        let requires = self.requires(x);
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let g0 = g.data()[0];
                vec![(x.0, weights.data().iter().map(|&w| w.mul(g0)).collect())]
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    /// Plain sum of all elements; yields a `[1]` scalar.
    pub fn sum(&mut self, x: RVar) -> Result<RVar> {
        let ones = RealTensor::full(self.value(x).shape(), P::ONE);
        self.dot_const(x, ones)
    }

    /// Mean cross-entropy of softmax(logits) against integer labels,
    /// computed with max subtraction for stability. Yields a `[1]` scalar.
    pub fn softmax_cross_entropy(&mut self, logits: RVar, labels: Arc<Vec<usize>>) -> Result<RVar> {
        let vl = self.value(logits).clone();
        if vl.ndim() != 2 {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("logits must be 2-D, got {:?}", vl.shape()),
            ));
        }
        let (n, k) = (vl.shape()[0], vl.shape()[1]);
        if labels.len() != n {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("{} labels for batch of {}", labels.len(), n),
            ));
        }
        if n == 0 || k == 0 {
            return Err(Error::invalid("softmax_cross_entropy", "empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let mut probs = vec![P::ZERO; n * k];
        let mut loss = 0.0f64;
        for row in 0..n {
            let base = row * k;
            let xs = &vl.data()[base..base + k];
            let mut max = xs[0];
            for &v in xs.iter() {
                max = max.max(v);
            }
            let mut denom = 0.0f64;
            for &v in xs.iter() {
                denom += v.sub(max).exp().to_f64();
            }
            for (j, &v) in xs.iter().enumerate() {
                probs[base + j] = P::from_f64(v.sub(max).exp().to_f64() / denom);
            }
            loss += denom.ln() - (xs[labels[row]].sub(max)).to_f64();
        }
        let out = RealTensor::scalar(P::from_f64(loss / n as f64));
        let requires = self.requires(logits);
        let backward: Option<BackwardFn<P>> = if requires {
            Some(Box::new(move |g: &RealTensor<P>| {
                let g0 = g.data()[0].to_f64() / n as f64;
                let mut dl = vec![P::ZERO; n * k];
                for row in 0..n {
                    let base = row * k;
                    for j in 0..k {
                        let indicator = if labels[row] == j { 1.0 } else { 0.0 };
                        dl[base + j] =
                            P::from_f64((probs[base + j].to_f64() - indicator) * g0);
                    }
                }
                vec![(logits.0, dl)]
            }))
        } else {
            None
        };
        Ok(self.push(out, requires, backward, None))
    }

    // ---- complex helpers ----

    pub fn c_add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    /// Backpropagate from a scalar loss. Gradients accumulate into every
    /// reachable trainable [`Parameter`]; node-local gradients are readable
    /// through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, loss: RVar) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut pending: Vec<Option<Vec<P>>> = vec![None; n];
        self.grads = (0..n).map(|_| None).collect();
        pending[loss.0] = Some(vec![P::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(gvec) = pending[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = RealTensor::new(self.nodes[i].value.shape().to_vec(), gvec)?;
            if let Some(back) = &self.nodes[i].backward {
                for (pid, contrib) in back(&g) {
                    debug_assert_eq!(contrib.len(), self.nodes[pid].value.len());
                    match &mut pending[pid] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(contrib) {
                                *a = a.add(c);
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            if let Some((param, plane)) = &self.nodes[i].param {
                param.accumulate_grad(*plane, g.data());
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

// ---- gradient checking ----

/// Per-parameter outcome of a finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// (plane, flat index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_err >= self.tolerance)
            .collect()
    }
}

fn eval_loss<F>(build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>) -> Result<RVar>,
{
    let mut g = Graph::new();
    let loss = build(&mut g)?;
    g.value(loss).item()
}

/// Compare analytic gradients against central finite differences for every
/// trainable coordinate of `params`. `build` must assemble the loss from the
/// same parameter objects on each call and be deterministic; this is verified
/// with a double forward pass. Relative error is
/// `|ga - gn| / max(|ga|, |gn|, 1e-8)` per coordinate.
pub fn grad_check<F>(
    build: F,
    params: &[Rc<Parameter<f64>>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<RVar>,
{
    let first = eval_loss(&build)?;
    let second = eval_loss(&build)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    zero_grads(params);
    let mut g = Graph::new();
    let loss = build(&mut g)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<Vec<f64>>> = params
        .iter()
        .map(|p| (0..p.num_planes()).map(|pl| p.grad_plane(pl)).collect())
        .collect();

    let mut entries = Vec::new();
    for (pi, param) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut worst = None;
        let mut checked = 0usize;
        for plane in 0..param.num_planes() {
            if !param.plane_trainable(plane) {
                continue;
            }
            for idx in 0..param.plane_len() {
                let orig = param.nudge(plane, idx, 0.0);
                param.nudge(plane, idx, orig + step);
                let plus = eval_loss(&build)?;
                param.nudge(plane, idx, orig - step);
                let minus = eval_loss(&build)?;
                param.nudge(plane, idx, orig);
                let numeric = (plus - minus) / (2.0 * step);
                let exact = analytic[pi][plane][idx];
                let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
                checked += 1;
                if rel > max_rel {
                    max_rel = rel;
                    worst = Some((plane, idx));
                }
            }
        }
        entries.push(GradCheckEntry {
            name: param.name().to_string(),
            max_rel_err: max_rel,
            checked,
            worst,
        });
    }
    Ok(GradCheckReport {
        entries,
        step,
        tolerance,
    })
}
