//! Layer primitives with explicit forward and backward passes.
//!
//! Training forwards push per-layer caches onto a [`Tape`]; backward pops
//! them in reverse and writes parameter gradients into a [`Grads`] map.
//! Inference forwards are pure (`&self`) and cache nothing, so a built
//! network can serve concurrent `infer` calls.

use super::scalar::Scalar;
use crate::rng::SeededRng;
use ndarray::{Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use std::collections::BTreeMap;

/// Whether an archive entry is optimized or is a batch-norm running
/// statistic carried along for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    RunningStat,
}

/// Named parameter gradients from one backward pass.
pub type Grads<F> = BTreeMap<String, ndarray::ArrayD<F>>;

/// Per-layer activation caches, pushed in forward order.
pub struct Tape<F: Scalar> {
    entries: Vec<Cache<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, cache: Cache<F>) {
        self.entries.push(cache);
    }

    fn pop(&mut self) -> Cache<F> {
        self.entries.pop().expect("tape underflow: backward does not match forward")
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

enum Cache<F: Scalar> {
    Conv {
        cols: Array2<F>,
        x_dim: (usize, usize, usize, usize),
    },
    Depthwise {
        x: Array4<F>,
    },
    Pointwise {
        x2: Array2<F>,
        dim: (usize, usize, usize, usize),
    },
    BatchNorm {
        x_hat: Array4<F>,
        inv_std: Array1<F>,
    },
    Relu {
        out_positive: Array4<F>,
    },
    MaxPool {
        argmax: Vec<usize>,
        x_dim: (usize, usize, usize, usize),
        out_dim: (usize, usize),
    },
    Gap {
        x_dim: (usize, usize, usize, usize),
    },
    Linear {
        x: Array2<F>,
    },
}

fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// Fan-in-scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
fn uniform_init<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> ndarray::ArrayD<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::cast_from_f64(rng.uniform(-bound, bound)))
        .collect();
    ndarray::ArrayD::from_shape_vec(shape.to_vec(), data).expect("init shape")
}

// ---------------------------------------------------------------------------
// Full convolution (stem convs and 1x1 residual projections). No bias:
// batch norm always follows.
// ---------------------------------------------------------------------------

pub struct Conv2d<F: Scalar> {
    pub weight: Array4<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = uniform_init(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng)
            .into_dimensionality()
            .expect("conv weight rank");
        Self {
            weight,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.pad),
            conv_out(w, self.kernel, self.stride, self.pad),
        )
    }

    fn im2col(&self, x: &Array4<F>) -> Array2<F> {
        let (b, c, h, w) = x.dim();
        let k = self.kernel;
        let (oh, ow) = self.out_hw(h, w);
        let mut cols = Array2::<F>::zeros((c * k * k, b * oh * ow));
        for bi in 0..b {
            for ci in 0..c {
                for kh in 0..k {
                    for kw in 0..k {
                        let row = (ci * k + kh) * k + kw;
                        for ohi in 0..oh {
                            let ih = (ohi * self.stride + kh) as isize - self.pad as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for owi in 0..ow {
                                let iw = (owi * self.stride + kw) as isize - self.pad as isize;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                cols[[row, (bi * oh + ohi) * ow + owi]] =
                                    x[[bi, ci, ih as usize, iw as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
        let (b, _, h, w) = x.dim();
        let out_ch = self.weight.dim().0;
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((out_ch, self.weight.len() / out_ch))
            .expect("conv weight reshape");
        let y2 = w2.dot(&cols);
        let mut y = Array4::<F>::zeros((b, out_ch, oh, ow));
        for bi in 0..b {
            for co in 0..out_ch {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        y[[bi, co, ohi, owi]] = y2[[co, (bi * oh + ohi) * ow + owi]];
                    }
                }
            }
        }
        if let Some(tape) = tape {
            tape.push(Cache::Conv {
                cols,
                x_dim: x.dim(),
            });
        }
        y
    }

    pub fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let Cache::Conv { cols, x_dim } = tape.pop() else {
            panic!("tape mismatch: expected conv cache");
        };
        let (b, _c, h, w) = x_dim;
        let (ob, out_ch, oh, ow) = dy.dim();
        debug_assert_eq!(b, ob);

        let mut dy2 = Array2::<F>::zeros((out_ch, b * oh * ow));
        for bi in 0..b {
            for co in 0..out_ch {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        dy2[[co, (bi * oh + ohi) * ow + owi]] = dy[[bi, co, ohi, owi]];
                    }
                }
            }
        }

        let dw2 = dy2.dot(&cols.t());
        grads.insert(
            format!("{name}.weight"),
            dw2.into_shape_with_order(self.weight.raw_dim())
                .expect("conv grad reshape")
                .into_dyn(),
        );

        let w2 = self
            .weight
            .view()
            .into_shape_with_order((out_ch, self.weight.len() / out_ch))
            .expect("conv weight reshape");
        let dcols = w2.t().dot(&dy2);

        // col2im scatter-add.
        let k = self.kernel;
        let c = x_dim.1;
        let mut dx = Array4::<F>::zeros(x_dim);
        for bi in 0..b {
            for ci in 0..c {
                for kh in 0..k {
                    for kw in 0..k {
                        let row = (ci * k + kh) * k + kw;
                        for ohi in 0..oh {
                            let ih = (ohi * self.stride + kh) as isize - self.pad as isize;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for owi in 0..ow {
                                let iw = (owi * self.stride + kw) as isize - self.pad as isize;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                dx[[bi, ci, ih as usize, iw as usize]] =
                                    dx[[bi, ci, ih as usize, iw as usize]]
                                        + dcols[[row, (bi * oh + ohi) * ow + owi]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view().into_dyn(),
        );
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// Depthwise 3x3 convolution, stride 1, pad 1 (spatial mixing per channel).
// ---------------------------------------------------------------------------

pub struct Depthwise<F: Scalar> {
    pub weight: ndarray::Array3<F>,
}

impl<F: Scalar> Depthwise<F> {
    pub fn new(channels: usize, rng: &mut SeededRng) -> Self {
        let weight = uniform_init(&[channels, 3, 3], 9, rng)
            .into_dimensionality()
            .expect("depthwise weight rank");
        Self { weight }
    }

    pub fn forward(&self, x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let mut y = Array4::<F>::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for oh in 0..h {
                    for ow in 0..w {
                        let mut acc = F::zero();
                        for kh in 0..3usize {
                            let ih = (oh + kh) as isize - 1;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..3usize {
                                let iw = (ow + kw) as isize - 1;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                acc = acc
                                    + self.weight[[ci, kh, kw]]
                                        * x[[bi, ci, ih as usize, iw as usize]];
                            }
                        }
                        y[[bi, ci, oh, ow]] = acc;
                    }
                }
            }
        }
        if let Some(tape) = tape {
            tape.push(Cache::Depthwise { x: x.clone() });
        }
        y
    }

    pub fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let Cache::Depthwise { x } = tape.pop() else {
            panic!("tape mismatch: expected depthwise cache");
        };
        let (b, c, h, w) = x.dim();
        let mut dw = ndarray::Array3::<F>::zeros((c, 3, 3));
        let mut dx = Array4::<F>::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for oh in 0..h {
                    for ow in 0..w {
                        let g = dy[[bi, ci, oh, ow]];
                        for kh in 0..3usize {
                            let ih = (oh + kh) as isize - 1;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..3usize {
                                let iw = (ow + kw) as isize - 1;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                dw[[ci, kh, kw]] =
                                    dw[[ci, kh, kw]] + g * x[[bi, ci, ih as usize, iw as usize]];
                                dx[[bi, ci, ih as usize, iw as usize]] =
                                    dx[[bi, ci, ih as usize, iw as usize]]
                                        + g * self.weight[[ci, kh, kw]];
                            }
                        }
                    }
                }
            }
        }
        grads.insert(format!("{name}.weight"), dw.into_dyn());
        dx
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view().into_dyn(),
        );
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution as a channel-mixing GEMM.
// ---------------------------------------------------------------------------

pub struct Pointwise<F: Scalar> {
    /// `(out_ch, in_ch)`.
    pub weight: Array2<F>,
}

impl<F: Scalar> Pointwise<F> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut SeededRng) -> Self {
        let weight = uniform_init(&[out_ch, in_ch], in_ch, rng)
            .into_dimensionality()
            .expect("pointwise weight rank");
        Self { weight }
    }

    fn flatten(x: &Array4<F>) -> Array2<F> {
        let (b, c, h, w) = x.dim();
        let mut x2 = Array2::<F>::zeros((c, b * h * w));
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        x2[[ci, (bi * h + hi) * w + wi]] = x[[bi, ci, hi, wi]];
                    }
                }
            }
        }
        x2
    }

    fn unflatten(y2: &Array2<F>, dim: (usize, usize, usize, usize)) -> Array4<F> {
        let (b, c, h, w) = dim;
        let mut y = Array4::<F>::zeros(dim);
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        y[[bi, ci, hi, wi]] = y2[[ci, (bi * h + hi) * w + wi]];
                    }
                }
            }
        }
        y
    }

    pub fn forward(&self, x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
        let (b, _c, h, w) = x.dim();
        let out_ch = self.weight.dim().0;
        let x2 = Self::flatten(x);
        let y2 = self.weight.dot(&x2);
        let y = Self::unflatten(&y2, (b, out_ch, h, w));
        if let Some(tape) = tape {
            tape.push(Cache::Pointwise { x2, dim: x.dim() });
        }
        y
    }

    pub fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let Cache::Pointwise { x2, dim } = tape.pop() else {
            panic!("tape mismatch: expected pointwise cache");
        };
        let dy2 = Self::flatten(dy);
        grads.insert(format!("{name}.weight"), dy2.dot(&x2.t()).into_dyn());
        let dx2 = self.weight.t().dot(&dy2);
        Self::unflatten(&dx2, dim)
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view().into_dyn(),
        );
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// Separable convolution: depthwise 3x3 then pointwise 1x1.
// ---------------------------------------------------------------------------

pub struct SepConv<F: Scalar> {
    pub depthwise: Depthwise<F>,
    pub pointwise: Pointwise<F>,
}

impl<F: Scalar> SepConv<F> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut SeededRng) -> Self {
        Self {
            depthwise: Depthwise::new(in_ch, rng),
            pointwise: Pointwise::new(in_ch, out_ch, rng),
        }
    }

    pub fn forward(&self, x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
        match tape {
            Some(tape) => {
                let mid = self.depthwise.forward(x, Some(tape));
                self.pointwise.forward(&mid, Some(tape))
            }
            None => {
                let mid = self.depthwise.forward(x, None);
                self.pointwise.forward(&mid, None)
            }
        }
    }

    pub fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let dmid = self
            .pointwise
            .backward(dy, tape, &format!("{name}.pointwise"), grads);
        self.depthwise
            .backward(&dmid, tape, &format!("{name}.depthwise"), grads)
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        self.depthwise.visit(&format!("{prefix}.depthwise"), f);
        self.pointwise.visit(&format!("{prefix}.pointwise"), f);
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        self.depthwise.visit_mut(&format!("{prefix}.depthwise"), f);
        self.pointwise.visit_mut(&format!("{prefix}.pointwise"), f);
    }
}

// ---------------------------------------------------------------------------
// Batch norm: per-batch statistics while training, running averages
// (momentum 0.9) at evaluation.
// ---------------------------------------------------------------------------

pub struct BatchNorm<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    momentum: f64,
    eps: f64,
}

/// Default EMA momentum for running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            momentum: BN_MOMENTUM,
            eps: 1e-5,
        }
    }

    /// Swap the running-stat momentum; `i/(i+1)` over a pass of frozen
    /// forward calls turns the EMA into a plain average (stat refresh).
    pub(crate) fn set_momentum(&mut self, momentum: f64) {
        self.momentum = momentum;
    }

    pub fn forward_train(&mut self, x: &Array4<F>, tape: &mut Tape<F>) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let n = F::cast_from_f64((b * h * w) as f64);
        let mut y = Array4::<F>::zeros((b, c, h, w));
        let mut x_hat = Array4::<F>::zeros((b, c, h, w));
        let mut inv_std = Array1::<F>::zeros(c);
        let momentum = F::cast_from_f64(self.momentum);
        let one_minus = F::one() - momentum;
        for ci in 0..c {
            let mut mean = F::zero();
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        mean = mean + x[[bi, ci, hi, wi]];
                    }
                }
            }
            mean = mean / n;
            let mut var = F::zero();
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        let d = x[[bi, ci, hi, wi]] - mean;
                        var = var + d * d;
                    }
                }
            }
            var = var / n;
            let istd = (var + F::cast_from_f64(self.eps)).sqrt().recip();
            inv_std[ci] = istd;
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        let xh = (x[[bi, ci, hi, wi]] - mean) * istd;
                        x_hat[[bi, ci, hi, wi]] = xh;
                        y[[bi, ci, hi, wi]] = self.gamma[ci] * xh + self.beta[ci];
                    }
                }
            }
            self.running_mean[ci] = momentum * self.running_mean[ci] + one_minus * mean;
            self.running_var[ci] = momentum * self.running_var[ci] + one_minus * var;
        }
        tape.push(Cache::BatchNorm { x_hat, inv_std });
        y
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let mut y = Array4::<F>::zeros((b, c, h, w));
        for ci in 0..c {
            let istd = (self.running_var[ci] + F::cast_from_f64(self.eps)).sqrt().recip();
            let mean = self.running_mean[ci];
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        y[[bi, ci, hi, wi]] =
                            self.gamma[ci] * (x[[bi, ci, hi, wi]] - mean) * istd + self.beta[ci];
                    }
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let Cache::BatchNorm { x_hat, inv_std } = tape.pop() else {
            panic!("tape mismatch: expected batch-norm cache");
        };
        let (b, c, h, w) = dy.dim();
        let n = F::cast_from_f64((b * h * w) as f64);
        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        let mut dx = Array4::<F>::zeros((b, c, h, w));
        for ci in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        let g = dy[[bi, ci, hi, wi]];
                        sum_dy = sum_dy + g;
                        sum_dy_xhat = sum_dy_xhat + g * x_hat[[bi, ci, hi, wi]];
                    }
                }
            }
            dgamma[ci] = sum_dy_xhat;
            dbeta[ci] = sum_dy;
            let scale = self.gamma[ci] * inv_std[ci] / n;
            for bi in 0..b {
                for hi in 0..h {
                    for wi in 0..w {
                        let g = dy[[bi, ci, hi, wi]];
                        dx[[bi, ci, hi, wi]] = scale
                            * (n * g - sum_dy - x_hat[[bi, ci, hi, wi]] * sum_dy_xhat);
                    }
                }
            }
        }
        grads.insert(format!("{name}.gamma"), dgamma.into_dyn());
        grads.insert(format!("{name}.beta"), dbeta.into_dyn());
        dx
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        f(
            format!("{prefix}.gamma"),
            ParamKind::Trainable,
            self.gamma.view().into_dyn(),
        );
        f(
            format!("{prefix}.beta"),
            ParamKind::Trainable,
            self.beta.view().into_dyn(),
        );
        f(
            format!("{prefix}.running_mean"),
            ParamKind::RunningStat,
            self.running_mean.view().into_dyn(),
        );
        f(
            format!("{prefix}.running_var"),
            ParamKind::RunningStat,
            self.running_var.view().into_dyn(),
        );
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        f(
            format!("{prefix}.gamma"),
            ParamKind::Trainable,
            self.gamma.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.beta"),
            ParamKind::Trainable,
            self.beta.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.running_mean"),
            ParamKind::RunningStat,
            self.running_mean.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.running_var"),
            ParamKind::RunningStat,
            self.running_var.view_mut().into_dyn(),
        );
    }
}

// ---------------------------------------------------------------------------
// ReLU (functional).
// ---------------------------------------------------------------------------

pub fn relu<F: Scalar>(x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
    let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
    if let Some(tape) = tape {
        tape.push(Cache::Relu {
            out_positive: y.clone(),
        });
    }
    y
}

pub fn relu_backward<F: Scalar>(dy: &Array4<F>, tape: &mut Tape<F>) -> Array4<F> {
    let Cache::Relu { out_positive } = tape.pop() else {
        panic!("tape mismatch: expected relu cache");
    };
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(&out_positive).for_each(|g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
    dx
}

// ---------------------------------------------------------------------------
// Max pooling 3x3, stride 2, pad 1. Padding counts as -inf; ties go to the
// first window cell in scan order.
// ---------------------------------------------------------------------------

pub struct MaxPool;

impl MaxPool {
    pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
        (conv_out(h, 3, 2, 1), conv_out(w, 3, 2, 1))
    }

    pub fn forward<F: Scalar>(&self, x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = Self::out_hw(h, w);
        let mut y = Array4::<F>::zeros((b, c, oh, ow));
        let mut argmax = vec![0usize; b * c * oh * ow];
        for bi in 0..b {
            for ci in 0..c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0usize;
                        for kh in 0..3usize {
                            let ih = (ohi * 2 + kh) as isize - 1;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..3usize {
                                let iw = (owi * 2 + kw) as isize - 1;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                let v = x[[bi, ci, ih as usize, iw as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = ih as usize * w + iw as usize;
                                }
                            }
                        }
                        y[[bi, ci, ohi, owi]] = best;
                        argmax[((bi * c + ci) * oh + ohi) * ow + owi] = best_idx;
                    }
                }
            }
        }
        if let Some(tape) = tape {
            tape.push(Cache::MaxPool {
                argmax,
                x_dim: x.dim(),
                out_dim: (oh, ow),
            });
        }
        y
    }

    pub fn backward<F: Scalar>(&self, dy: &Array4<F>, tape: &mut Tape<F>) -> Array4<F> {
        let Cache::MaxPool {
            argmax,
            x_dim,
            out_dim,
        } = tape.pop()
        else {
            panic!("tape mismatch: expected max-pool cache");
        };
        let (b, c, _h, w) = x_dim;
        let (oh, ow) = out_dim;
        let mut dx = Array4::<F>::zeros(x_dim);
        for bi in 0..b {
            for ci in 0..c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let flat = argmax[((bi * c + ci) * oh + ohi) * ow + owi];
                        let (ih, iw) = (flat / w, flat % w);
                        dx[[bi, ci, ih, iw]] =
                            dx[[bi, ci, ih, iw]] + dy[[bi, ci, ohi, owi]];
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Global average pool over both spatial axes.
// ---------------------------------------------------------------------------

pub fn global_avg_pool<F: Scalar>(x: &Array4<F>, tape: Option<&mut Tape<F>>) -> Array2<F> {
    let y = x
        .mean_axis(Axis(3))
        .expect("nonempty W")
        .mean_axis(Axis(2))
        .expect("nonempty H");
    if let Some(tape) = tape {
        tape.push(Cache::Gap { x_dim: x.dim() });
    }
    y
}

pub fn global_avg_pool_backward<F: Scalar>(dy: &Array2<F>, tape: &mut Tape<F>) -> Array4<F> {
    let Cache::Gap { x_dim } = tape.pop() else {
        panic!("tape mismatch: expected gap cache");
    };
    let scale = F::cast_from_f64(1.0 / (x_dim.2 * x_dim.3) as f64);
    let mut dx = Array4::<F>::zeros(x_dim);
    for bi in 0..x_dim.0 {
        for ci in 0..x_dim.1 {
            let g = dy[[bi, ci]] * scale;
            for hi in 0..x_dim.2 {
                for wi in 0..x_dim.3 {
                    dx[[bi, ci, hi, wi]] = g;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Linear head (the only layer with a bias).
// ---------------------------------------------------------------------------

pub struct Linear<F: Scalar> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Self {
        let weight = uniform_init(&[out_features, in_features], in_features, rng)
            .into_dimensionality()
            .expect("linear weight rank");
        Self {
            weight,
            bias: Array1::zeros(out_features),
        }
    }

    pub fn forward(&self, x: &Array2<F>, tape: Option<&mut Tape<F>>) -> Array2<F> {
        let y = x.dot(&self.weight.t()) + &self.bias;
        if let Some(tape) = tape {
            tape.push(Cache::Linear { x: x.clone() });
        }
        y
    }

    pub fn backward(
        &self,
        dy: &Array2<F>,
        tape: &mut Tape<F>,
        name: &str,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let Cache::Linear { x } = tape.pop() else {
            panic!("tape mismatch: expected linear cache");
        };
        grads.insert(format!("{name}.weight"), dy.t().dot(&x).into_dyn());
        grads.insert(format!("{name}.bias"), dy.sum_axis(Axis(0)).into_dyn());
        dy.dot(&self.weight)
    }

    pub fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view().into_dyn(),
        );
        f(
            format!("{prefix}.bias"),
            ParamKind::Trainable,
            self.bias.view().into_dyn(),
        );
    }

    pub fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        f(
            format!("{prefix}.weight"),
            ParamKind::Trainable,
            self.weight.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.bias"),
            ParamKind::Trainable,
            self.bias.view_mut().into_dyn(),
        );
    }
}
