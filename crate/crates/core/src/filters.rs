//! Convolution layers over adjacency stacks, plus the small dense building
//! blocks (batch norm, activations, pooling, affine layers) of the network.
//!
//! A convolution is always evaluated as `y = sum_k (A_k x) W_k + b`, where the
//! `A_k` are the adjacency slots implied by a [`FilterPattern`]. A pixel CNN
//! kernel is the special case of one unnormalised slot per stencil offset.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshgraph::{
    add_self_loops, build_adjacency, grid_coords, grid_index, kernel_adjacency_stack,
    normalize_symmetric, normalize_symmetric_allow_isolated, stencil_offsets, CellComplex,
    ComplexKind, NeighborClass, Offset, SparseAdjacency,
};
use crate::scalar::Scalar;

/// Weight-sharing layout of a filter (pixel, `*`, `#`, `O`, `X`, `+`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Pixel,
    Star,
    Hash,
    O,
    X,
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfWeight {
    Tied,
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterPattern {
    pub kind: PatternKind,
    pub self_weight: SelfWeight,
}

/// What a single weight slot multiplies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotSpec {
    /// Only the node itself.
    SelfOnly,
    /// Union of neighbour classes, optionally with self-loops, symmetrically normalised.
    Group {
        classes: Vec<NeighborClass>,
        with_self: bool,
    },
    /// One stencil offset of a pixel kernel, unnormalised.
    Offset(Offset),
}

impl FilterPattern {
    pub const fn new(kind: PatternKind, self_weight: SelfWeight) -> Self {
        Self { kind, self_weight }
    }

    /// The standard GCN filter.
    pub const fn gcn() -> Self {
        Self::new(PatternKind::Plus, SelfWeight::Tied)
    }

    pub const fn pixel() -> Self {
        Self::new(PatternKind::Pixel, SelfWeight::Independent)
    }

    /// `Pixel` and `Hash` always carry an independent centre weight.
    pub fn effective_self_weight(&self) -> SelfWeight {
        match self.kind {
            PatternKind::Pixel | PatternKind::Hash => SelfWeight::Independent,
            _ => self.self_weight,
        }
    }

    /// Canonical form: `#` is `+` with an independent self weight.
    pub fn canonical(&self) -> Self {
        match self.kind {
            PatternKind::Hash => Self::new(PatternKind::Plus, SelfWeight::Independent),
            PatternKind::Pixel => Self::pixel(),
            _ => *self,
        }
    }

    /// Slot layout. Independent self weights come first; `*` orders its
    /// slots `[self, face, vertex]`. Tied self-loops join the face group for
    /// `+` and `*`, the vertex group for `X`, and the full neighbourhood for `O`.
    pub fn slots(&self, spatial_dim: Option<usize>) -> Result<Vec<SlotSpec>> {
        use NeighborClass::{Face, Vertex};
        let indep = self.effective_self_weight() == SelfWeight::Independent;
        let tied = !indep;
        let mut out = Vec::new();
        if indep && self.kind != PatternKind::Pixel {
            out.push(SlotSpec::SelfOnly);
        }
        match self.kind {
            PatternKind::Pixel => {
                let d = spatial_dim.ok_or_else(|| {
                    Error::UnsupportedTopology("pixel filters need a structured grid".into())
                })?;
                out.extend(stencil_offsets(d).into_iter().map(SlotSpec::Offset));
            }
            PatternKind::Plus | PatternKind::Hash => out.push(SlotSpec::Group {
                classes: vec![Face],
                with_self: tied,
            }),
            PatternKind::X => out.push(SlotSpec::Group {
                classes: vec![Vertex],
                with_self: tied,
            }),
            PatternKind::O => out.push(SlotSpec::Group {
                classes: vec![Face, Vertex],
                with_self: tied,
            }),
            PatternKind::Star => {
                out.push(SlotSpec::Group {
                    classes: vec![Face],
                    with_self: tied,
                });
                out.push(SlotSpec::Group {
                    classes: vec![Vertex],
                    with_self: false,
                });
            }
        }
        Ok(out)
    }

    pub fn slot_count(&self, spatial_dim: Option<usize>) -> Result<usize> {
        Ok(self.slots(spatial_dim)?.len())
    }

    pub fn symbol(&self) -> &'static str {
        match self.kind {
            PatternKind::Pixel => "pixel",
            PatternKind::Star => "*",
            PatternKind::Hash => "#",
            PatternKind::O => "O",
            PatternKind::X => "X",
            PatternKind::Plus => "+",
        }
    }

    /// Every pattern of the filter comparison: pixel plus each graph pattern
    /// in both self-weight modes (`#` and `+`/independent coincide).
    pub fn comparison_set() -> Vec<Self> {
        use PatternKind::*;
        let mut v = vec![Self::pixel()];
        for k in [Star, Hash, O, X, Plus] {
            v.push(Self::new(k, SelfWeight::Tied));
            v.push(Self::new(k, SelfWeight::Independent));
        }
        v
    }
}

impl fmt::Display for FilterPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.effective_self_weight()) {
            (PatternKind::Pixel | PatternKind::Hash, _) => f.write_str(self.symbol()),
            (_, SelfWeight::Tied) => f.write_str(self.symbol()),
            (_, SelfWeight::Independent) => write!(f, "{}s", self.symbol()),
        }
    }
}

impl FromStr for FilterPattern {
    type Err = Error;

    /// Accepts `pixel`, `*`, `#`, `O`, `X`, `+` (or `star`, `hash`, `o`, `x`,
    /// `plus`), with a trailing `s` (or `/self`) for an independent self weight.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (base, indep) = if let Some(b) = t.strip_suffix("/self") {
            (b, true)
        } else if t.len() > 1 && t.ends_with('s') && !t.eq_ignore_ascii_case("hash") {
            (&t[..t.len() - 1], true)
        } else {
            (t, false)
        };
        let kind = match base.to_ascii_lowercase().as_str() {
            "pixel" | "cnn" => PatternKind::Pixel,
            "*" | "star" => PatternKind::Star,
            "#" | "hash" => PatternKind::Hash,
            "o" => PatternKind::O,
            "x" => PatternKind::X,
            "+" | "plus" | "gcn" => PatternKind::Plus,
            _ => return Err(Error::Parse(format!("unknown filter pattern '{s}'"))),
        };
        let sw = if indep { SelfWeight::Independent } else { SelfWeight::Tied };
        Ok(Self::new(kind, sw))
    }
}

/// Node data: `n_nodes x n_channels` with channel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures<T> {
    pub values: Array2<T>,
    pub labels: Vec<String>,
}

impl<T: Scalar> NodeFeatures<T> {
    pub fn new(values: Array2<T>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} labels for {} channels",
                labels.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("node features".into()));
        }
        Ok(Self { values, labels })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Adjacency slots of a pattern bound to one complex.
#[derive(Clone, Debug)]
pub struct AdjacencySlots<T> {
    pub pattern: FilterPattern,
    mats: Vec<SparseAdjacency<T>>,
    transposes: Vec<SparseAdjacency<T>>,
}

impl<T: Scalar> AdjacencySlots<T> {
    pub fn bind(complex: &CellComplex, pattern: FilterPattern) -> Result<Self> {
        let specs = pattern.slots(complex.spatial_dim())?;
        let n = complex.len();
        let mut mats = Vec::with_capacity(specs.len());
        for spec in specs {
            let m = match spec {
                SlotSpec::SelfOnly => SparseAdjacency::identity(n),
                SlotSpec::Offset(o) => build_adjacency(complex, NeighborClass::KernelOffset(o))?,
                SlotSpec::Group { classes, with_self } => {
                    let mut a = SparseAdjacency::zeros(n);
                    for c in classes {
                        a = a.add(&build_adjacency(complex, c)?)?;
                    }
                    if with_self {
                        normalize_symmetric(&add_self_loops(&a)?)?
                    } else {
                        normalize_symmetric_allow_isolated(&a)?
                    }
                }
            };
            mats.push(m);
        }
        Ok(Self::from_mats(pattern, mats))
    }

    pub fn from_mats(pattern: FilterPattern, mats: Vec<SparseAdjacency<T>>) -> Self {
        let transposes = mats.iter().map(|m| m.transpose()).collect();
        Self {
            pattern,
            mats,
            transposes,
        }
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.mats.first().map_or(0, |m| m.n())
    }

    pub fn mats(&self) -> &[SparseAdjacency<T>] {
        &self.mats
    }

    /// `sum_k W_k A_k` for scalar slot weights (single-channel view).
    pub fn weighted_sum(&self, w: &[T]) -> Result<SparseAdjacency<T>> {
        let mut acc = SparseAdjacency::zeros(self.n_nodes());
        for (m, &wk) in self.mats.iter().zip(w) {
            acc = acc.add(&m.scaled(wk))?;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer<T> {
    pub pattern: FilterPattern,
    pub in_channels: usize,
    pub out_channels: usize,
    /// One `in x out` matrix per adjacency slot.
    pub weights: Vec<Array2<T>>,
    pub bias: Array1<T>,
}

fn glorot<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| T::lit(rng.gen_range(-limit..limit)))
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(pattern: FilterPattern, slots: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            pattern,
            in_channels,
            out_channels,
            weights: vec![Array2::zeros((in_channels, out_channels)); slots],
            bias: Array1::zeros(out_channels),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        pattern: FilterPattern,
        slots: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let weights = (0..slots)
            .map(|_| glorot(rng, in_channels, out_channels, in_channels * slots, out_channels * slots))
            .collect();
        Self {
            pattern,
            in_channels,
            out_channels,
            weights,
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() * self.in_channels * self.out_channels + self.out_channels
    }
}

/// Intermediate products kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    /// `A_k x` per slot.
    pub propagated: Vec<Array2<T>>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub weights: Vec<Array2<T>>,
    pub bias: Array1<T>,
    pub input: Option<Array2<T>>,
}

fn check_conv<T: Scalar>(x: &Array2<T>, layer: &ConvLayer<T>, slots: &AdjacencySlots<T>) -> Result<()> {
    if slots.len() != layer.weights.len() {
        return Err(Error::UnboundAdjacency {
            expected: layer.weights.len(),
            got: slots.len(),
        });
    }
    if x.ncols() != layer.in_channels {
        return Err(Error::Shape(format!(
            "conv expects {} channels, got {}",
            layer.in_channels,
            x.ncols()
        )));
    }
    if x.nrows() != slots.n_nodes() {
        return Err(Error::Shape(format!(
            "{} nodes for an adjacency of {}",
            x.nrows(),
            slots.n_nodes()
        )));
    }
    Ok(())
}

/// `y_I = sum_J [sum_k W_k A^(k)_IJ] x_J + b`.
pub fn graph_conv<T: Scalar>(
    x: &Array2<T>,
    layer: &ConvLayer<T>,
    slots: &AdjacencySlots<T>,
) -> Result<Array2<T>> {
    Ok(graph_conv_cached(x, layer, slots)?.0)
}

pub fn graph_conv_cached<T: Scalar>(
    x: &Array2<T>,
    layer: &ConvLayer<T>,
    slots: &AdjacencySlots<T>,
) -> Result<(Array2<T>, ConvCache<T>)> {
    check_conv(x, layer, slots)?;
    let mut y = Array2::zeros((x.nrows(), layer.out_channels));
    let mut propagated = Vec::with_capacity(slots.len());
    for (a, w) in slots.mats.iter().zip(&layer.weights) {
        let ax = a.spmm(x);
        ndarray::linalg::general_mat_mul(T::one(), &ax, w, T::one(), &mut y);
        propagated.push(ax);
    }
    y += &layer.bias;
    Ok((y, ConvCache { propagated }))
}

pub fn graph_conv_backward<T: Scalar>(
    cache: &ConvCache<T>,
    layer: &ConvLayer<T>,
    slots: &AdjacencySlots<T>,
    dy: &Array2<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let weights = cache.propagated.iter().map(|ax| ax.t().dot(dy)).collect();
    let bias = dy.sum_axis(Axis(0));
    let input = need_input.then(|| {
        let mut dx = Array2::zeros((dy.nrows(), layer.in_channels));
        for (at, w) in slots.transposes.iter().zip(&layer.weights) {
            let g = dy.dot(&w.t());
            at.spmm_acc(&g, &mut dx);
        }
        dx
    });
    ConvGrads { weights, bias, input }
}

/// Direct grid-indexed cross-correlation with a width-3 kernel and zero
/// padding. `kernel[k]` is the `in x out` weight of stencil offset `k` in
/// [`stencil_offsets`] order.
pub fn pixel_conv<T: Scalar>(
    x: &Array2<T>,
    grid: &CellComplex,
    kernel: &[Array2<T>],
    bias: &Array1<T>,
) -> Result<Array2<T>> {
    if grid.kind() != ComplexKind::Structured {
        return Err(Error::UnsupportedTopology("pixel convolution needs a structured grid".into()));
    }
    let dims = grid.dims();
    let offsets = stencil_offsets(dims.len());
    if kernel.len() != offsets.len() {
        return Err(Error::Shape(format!("{} kernel taps for {} offsets", kernel.len(), offsets.len())));
    }
    let out_ch = bias.len();
    if x.nrows() != grid.len() || kernel.iter().any(|w| w.dim() != (x.ncols(), out_ch)) {
        return Err(Error::Shape("pixel kernel / input mismatch".into()));
    }
    let mut y = Array2::zeros((x.nrows(), out_ch));
    for i in 0..x.nrows() {
        let c = grid_coords(dims, i);
        let mut acc = bias.clone();
        for (o, w) in offsets.iter().zip(kernel) {
            let mut nc = Vec::with_capacity(dims.len());
            let mut inside = true;
            for a in 0..dims.len() {
                let v = c[a] as isize + o[a] as isize;
                if grid.is_periodic() {
                    nc.push(v.rem_euclid(dims[a] as isize) as usize);
                } else if v < 0 || v >= dims[a] as isize {
                    inside = false;
                    break;
                } else {
                    nc.push(v as usize);
                }
            }
            if inside {
                let j = grid_index(dims, &nc);
                acc += &x.row(j).dot(w);
            }
        }
        y.row_mut(i).assign(&acc);
    }
    Ok(y)
}

/// The flattened pixel convolution: `y = sum_K (A^(K) x) W_K + b` over a
/// kernel adjacency stack.
pub fn masked_pixel_conv<T: Scalar>(
    x: &Array2<T>,
    stack: &[(Offset, SparseAdjacency<T>)],
    weights: &[Array2<T>],
    bias: &Array1<T>,
) -> Result<Array2<T>> {
    if stack.len() != weights.len() {
        return Err(Error::UnboundAdjacency {
            expected: weights.len(),
            got: stack.len(),
        });
    }
    let mut y = Array2::zeros((x.nrows(), bias.len()));
    for ((_, a), w) in stack.iter().zip(weights) {
        if w.dim() != (x.ncols(), bias.len()) || a.n() != x.nrows() {
            return Err(Error::Shape("masked kernel / input mismatch".into()));
        }
        let ax = a.spmm(x);
        ndarray::linalg::general_mat_mul(T::one(), &ax, w, T::one(), &mut y);
    }
    y += bias;
    Ok(y)
}

/// Convenience: masked pixel convolution on a grid.
pub fn masked_pixel_conv_on_grid<T: Scalar>(
    x: &Array2<T>,
    grid: &CellComplex,
    weights: &[Array2<T>],
    bias: &Array1<T>,
) -> Result<Array2<T>> {
    masked_pixel_conv(x, &kernel_adjacency_stack(grid)?, weights, bias)
}

/// Propagation operator used by the Chebyshev filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChebyshevForm {
    /// `L = I - D^-1/2 A D^-1/2` on the bare adjacency.
    Laplacian,
    /// The same with `A + I` in place of `A` (self-loop renormalisation).
    Renormalized,
}

/// `y = sum_k theta_k T_k(L~) x` with `L~ = L - I` (largest eigenvalue taken as 2).
/// `adjacency` is binary without self-loops.
pub fn chebyshev_conv<T: Scalar>(
    x: &Array2<T>,
    adjacency: &SparseAdjacency<T>,
    thetas: &[T],
    form: ChebyshevForm,
) -> Result<Array2<T>> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("Chebyshev order must be at least 0".into()));
    }
    if x.nrows() != adjacency.n() {
        return Err(Error::Shape("Chebyshev input / adjacency mismatch".into()));
    }
    let prop = match form {
        ChebyshevForm::Laplacian => normalize_symmetric_allow_isolated(adjacency)?,
        ChebyshevForm::Renormalized => normalize_symmetric(&add_self_loops(adjacency)?)?,
    };
    // L~ x = (L - I) x = -P x
    let apply = |v: &Array2<T>| prop.spmm(v).mapv(|e| -e);
    let mut t_prev = x.clone();
    let mut y = t_prev.mapv(|e| e * thetas[0]);
    if thetas.len() == 1 {
        return Ok(y);
    }
    let mut t_cur = apply(x);
    y.scaled_add(thetas[1], &t_cur);
    for &th in &thetas[2..] {
        let mut next = apply(&t_cur);
        next.mapv_inplace(|e| e + e);
        next -= &t_prev;
        y.scaled_add(th, &next);
        t_prev = t_cur;
        t_cur = next;
    }
    Ok(y)
}

/// Element-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the activation output.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Linear => T::one(),
        }
    }
}

pub fn activate<T: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<T, D>,
    f: Activation,
) -> ndarray::Array<T, D> {
    x.mapv(|v| f.apply(v))
}

pub fn activate_backward<T: Scalar, D: ndarray::Dimension>(
    y: &ndarray::Array<T, D>,
    dy: &ndarray::Array<T, D>,
    f: Activation,
) -> ndarray::Array<T, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &o| *d *= f.derivative_from_output(o));
    dx
}

/// Channel-wise mean over nodes.
pub fn global_average_pool<T: Scalar>(x: &Array2<T>) -> Result<Array1<T>> {
    x.mean_axis(Axis(0))
        .ok_or_else(|| Error::Empty("pooling over an empty graph".into()))
}

pub fn global_average_pool_backward<T: Scalar>(n_nodes: usize, dpool: &Array1<T>) -> Array2<T> {
    let scale = T::one() / T::lit(n_nodes as f64);
    let row = dpool.mapv(|v| v * scale);
    let mut dx = Array2::zeros((n_nodes, dpool.len()));
    dx.rows_mut().into_iter().for_each(|mut r| r.assign(&row));
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    /// Normalise with statistics of the current batch (all nodes of all samples).
    Batch,
    /// Normalise with the running statistics.
    Running,
}

/// Per-channel batch normalisation with learned scale and shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub normalized: Vec<Array2<T>>,
    pub inv_std: Array1<T>,
    pub mode: BnMode,
    pub batch_mean: Array1<T>,
    pub batch_var: Array1<T>,
    pub count: usize,
}

pub const BN_EPS: f64 = 1e-5;

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalises each sample in `xs`; in batch mode statistics pool every
    /// node of every sample.
    pub fn forward(&self, xs: &[&Array2<T>], mode: BnMode) -> Result<(Vec<Array2<T>>, BnCache<T>)> {
        let c = self.channels();
        if xs.iter().any(|x| x.ncols() != c) {
            return Err(Error::Shape("batch norm channel mismatch".into()));
        }
        let count: usize = xs.iter().map(|x| x.nrows()).sum();
        if count == 0 {
            return Err(Error::Empty("batch norm input".into()));
        }
        let eps = T::lit(self.eps);
        let (batch_mean, batch_var) = batch_moments(xs, count);
        let (mean, var) = match mode {
            BnMode::Batch => (batch_mean.clone(), batch_var.clone()),
            BnMode::Running => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let mut normalized = Vec::with_capacity(xs.len());
        let mut outs = Vec::with_capacity(xs.len());
        for x in xs {
            let xh = (*x - &mean) * &inv_std;
            let y = &xh * &self.gamma + &self.beta;
            normalized.push(xh);
            outs.push(y);
        }
        Ok((
            outs,
            BnCache {
                normalized,
                inv_std,
                mode,
                batch_mean,
                batch_var,
                count,
            },
        ))
    }

    /// Folds the statistics of the batch seen in `cache` into the running estimates.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let m = T::lit(self.momentum);
        let unbias = if cache.count > 1 {
            T::lit(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            T::one()
        };
        self.running_mean = &self.running_mean * (T::one() - m) + &cache.batch_mean * m;
        self.running_var = &self.running_var * (T::one() - m) + &cache.batch_var * (m * unbias);
    }

    /// Returns `(d_gamma, d_beta, d_inputs)`.
    pub fn backward(&self, cache: &BnCache<T>, dys: &[Array2<T>]) -> (Array1<T>, Array1<T>, Vec<Array2<T>>) {
        let c = self.channels();
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for (xh, dy) in cache.normalized.iter().zip(dys) {
            dgamma += &(dy * xh).sum_axis(Axis(0));
            dbeta += &dy.sum_axis(Axis(0));
        }
        let scale = &self.gamma * &cache.inv_std;
        let dxs = match cache.mode {
            BnMode::Running => dys.iter().map(|dy| dy * &scale).collect(),
            BnMode::Batch => {
                // dx = gamma*inv_std/m * (m*dy - sum(dy) - xh*sum(dy*xh))
                let m = T::lit(cache.count as f64);
                cache
                    .normalized
                    .iter()
                    .zip(dys)
                    .map(|(xh, dy)| {
                        let t = dy * m - &dbeta - &(xh * &dgamma);
                        t * &scale / m
                    })
                    .collect()
            }
        };
        (dgamma, dbeta, dxs)
    }

    pub fn trainable_count(&self) -> usize {
        2 * self.channels()
    }
}

fn batch_moments<T: Scalar>(xs: &[&Array2<T>], count: usize) -> (Array1<T>, Array1<T>) {
    let c = xs[0].ncols();
    let n = T::lit(count as f64);
    let mut mean = Array1::zeros(c);
    for x in xs {
        mean += &x.sum_axis(Axis(0));
    }
    mean.mapv_inplace(|v| v / n);
    let mut var = Array1::zeros(c);
    for x in xs {
        let d = *x - &mean;
        var += &(&d * &d).sum_axis(Axis(0));
    }
    var.mapv_inplace(|v| v / n);
    (mean, var)
}

/// Fully connected layer `f(x W + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: glorot(rng, inputs, outputs, inputs, outputs),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn dense<T: Scalar>(x: &Array1<T>, layer: &Dense<T>) -> Result<Array1<T>> {
    if x.len() != layer.weight.nrows() || layer.bias.len() != layer.weight.ncols() {
        return Err(Error::Shape(format!(
            "dense layer {}x{} applied to {} inputs",
            layer.weight.nrows(),
            layer.weight.ncols(),
            x.len()
        )));
    }
    Ok(activate(&(x.dot(&layer.weight) + &layer.bias), layer.activation))
}

/// Returns `(d_weight, d_bias, d_input)` given the layer output `y`.
pub fn dense_backward<T: Scalar>(
    x: &Array1<T>,
    y: &Array1<T>,
    layer: &Dense<T>,
    dy: &Array1<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let dz = activate_backward(y, dy, layer.activation);
    let dw = outer(x, &dz);
    let dx = layer.weight.dot(&dz);
    (dw, dz, dx)
}

pub(crate) fn outer<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_node() -> CellComplex {
        CellComplex::unstructured(vec![crate::meshgraph::Cell {
            volume: 1.0,
            face_neighbors: vec![],
            vertex_neighbors: vec![],
        }])
        .unwrap()
    }

    #[test]
    fn slot_counts() {
        use PatternKind::*;
        use SelfWeight::*;
        let c = |k, s| FilterPattern::new(k, s).slot_count(Some(2)).unwrap();
        assert_eq!(c(Plus, Tied), 1);
        assert_eq!(c(Hash, Tied), 2);
        assert_eq!(c(Hash, Independent), 2);
        assert_eq!(c(Star, Independent), 3);
        assert_eq!(c(Star, Tied), 2);
        assert_eq!(c(Pixel, Tied), 9);
        assert_eq!(FilterPattern::pixel().slot_count(Some(3)).unwrap(), 27);
        assert!(FilterPattern::pixel().slot_count(None).is_err());
    }

    #[test]
    fn pattern_parse_round_trip() {
        for p in FilterPattern::comparison_set() {
            let back: FilterPattern = p.to_string().parse().unwrap();
            assert_eq!(back.canonical(), p.canonical());
        }
        assert_eq!("+".parse::<FilterPattern>().unwrap(), FilterPattern::gcn());
        assert!("?".parse::<FilterPattern>().is_err());
    }

    #[test]
    fn isolated_node_reduces_to_affine_map() {
        let g = single_node();
        let slots = AdjacencySlots::<f64>::bind(&g, FilterPattern::gcn()).unwrap();
        let mut layer = ConvLayer::zeros(FilterPattern::gcn(), 1, 2, 1);
        layer.weights[0] = array![[2.0], [3.0]];
        layer.bias = array![0.5];
        let y = graph_conv(&array![[1.0, -1.0]], &layer, &slots).unwrap();
        assert_eq!(y, array![[2.0 - 3.0 + 0.5]]);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let p = FilterPattern::new(PatternKind::Star, SelfWeight::Independent);
        let slots = AdjacencySlots::<f64>::bind(&g, p).unwrap();
        let mut layer = ConvLayer::zeros(p, 3, 1, 2);
        layer.bias = array![1.0, -2.0];
        let x = Array2::from_shape_fn((9, 1), |(i, _)| i as f64);
        let y = graph_conv(&x, &layer, &slots).unwrap();
        assert!(y.rows().into_iter().all(|r| r == array![1.0, -2.0]));
    }

    #[test]
    fn two_clique_gcn() {
        let g = CellComplex::grid(&[2]).unwrap();
        let slots = AdjacencySlots::<f64>::bind(&g, FilterPattern::gcn()).unwrap();
        let mut layer = ConvLayer::zeros(FilterPattern::gcn(), 1, 1, 1);
        layer.weights[0] = array![[1.0]];
        let y = graph_conv(&array![[1.0], [0.0]], &layer, &slots).unwrap();
        assert_eq!(y, array![[0.5], [0.5]]);
    }

    #[test]
    fn conv_errors() {
        let g = CellComplex::grid(&[2]).unwrap();
        let slots = AdjacencySlots::<f64>::bind(&g, FilterPattern::gcn()).unwrap();
        let layer = ConvLayer::<f64>::zeros(FilterPattern::gcn(), 2, 1, 1);
        assert!(matches!(
            graph_conv(&array![[1.0], [0.0]], &layer, &slots),
            Err(Error::UnboundAdjacency { .. })
        ));
        let layer = ConvLayer::<f64>::zeros(FilterPattern::gcn(), 1, 2, 1);
        assert!(matches!(graph_conv(&array![[1.0], [0.0]], &layer, &slots), Err(Error::Shape(_))));
    }

    #[test]
    fn pixel_identity_and_box_filter() {
        let g = CellComplex::grid(&[4, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Array2<f64> = Array2::from_shape_fn((16, 1), |_| rng.gen::<f64>());
        let mut k = vec![Array2::zeros((1, 1)); 9];
        k[4] = array![[1.0]];
        assert_eq!(pixel_conv(&x, &g, &k, &array![0.0]).unwrap(), x);
        let c = Array2::from_elem((16, 1), 0.7);
        let ones = vec![array![[1.0]]; 9];
        let y: Array2<f64> = pixel_conv(&c, &g, &ones, &array![0.0]).unwrap();
        assert!((y[[grid_index(&[4, 4], &[1, 2]), 0]] - 9.0 * 0.7).abs() < 1e-14);
        let u = g.permuted(&(0..16).collect::<Vec<_>>()).unwrap();
        assert!(pixel_conv(&x, &u, &k, &array![0.0]).is_err());
    }

    #[test]
    fn masked_conv_boundary_and_errors() {
        let g = CellComplex::grid(&[3]).unwrap();
        let stack = kernel_adjacency_stack::<f64>(&g).unwrap();
        let w = vec![array![[0.0]], array![[0.0]], array![[1.0]]];
        let y = masked_pixel_conv(&array![[1.0], [2.0], [3.0]], &stack, &w, &array![0.0]).unwrap();
        assert_eq!(y, array![[2.0], [3.0], [0.0]]);
        let id = vec![array![[0.0]], array![[1.0]], array![[0.0]]];
        let x = array![[4.0], [5.0], [6.0]];
        assert_eq!(masked_pixel_conv(&x, &stack, &id, &array![0.0]).unwrap(), x);
        assert!(masked_pixel_conv(&x, &stack, &id[..2], &array![0.0]).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        let g = CellComplex::grid(&[2]).unwrap();
        let a = build_adjacency::<f64>(&g, NeighborClass::Face).unwrap();
        let x = array![[1.0], [3.0]];
        let y0 = chebyshev_conv(&x, &a, &[2.5], ChebyshevForm::Laplacian).unwrap();
        assert_eq!(y0, x.mapv(|v| 2.5 * v));
        let z = chebyshev_conv(&x, &a, &[0.0, 0.0, 0.0], ChebyshevForm::Laplacian).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(chebyshev_conv(&x, &a, &[], ChebyshevForm::Laplacian).is_err());
        // K=1, theta1 = -theta0 on the 2-clique equals the GCN filter with W = 2 theta0
        let th = 0.3;
        let y = chebyshev_conv(&x, &a, &[th, -th], ChebyshevForm::Laplacian).unwrap();
        let slots = AdjacencySlots::<f64>::bind(&g, FilterPattern::gcn()).unwrap();
        let mut layer = ConvLayer::zeros(FilterPattern::gcn(), 1, 1, 1);
        layer.weights[0] = array![[2.0 * th]];
        let gc = graph_conv(&x, &layer, &slots).unwrap();
        assert!((&y - &gc).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn batch_norm_examples() {
        let bn = BatchNorm::<f64>::new(1);
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let (y, _) = bn.forward(&[&x], BnMode::Batch).unwrap();
        let expect = [-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738];
        for (a, b) in y[0].iter().zip(expect) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut bn2 = BatchNorm::<f64>::new(1);
        bn2.beta = array![0.25];
        let c = Array2::from_elem((5, 1), 3.0);
        let (y, _) = bn2.forward(&[&c], BnMode::Batch).unwrap();
        assert!(y[0].iter().all(|&v| v == 0.25));
        let z = array![[-1.0], [1.0]];
        let (y, _) = bn.forward(&[&z], BnMode::Batch).unwrap();
        assert!((&y[0] - &z).iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn running_statistics_update() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.momentum = 1.0;
        let x = array![[1.0], [3.0]];
        let (_, cache) = bn.forward(&[&x], BnMode::Batch).unwrap();
        bn.update_running(&cache);
        assert_eq!(bn.running_mean, array![2.0]);
        assert_eq!(bn.running_var, array![2.0]);
        let (y, _) = bn.forward(&[&x], BnMode::Running).unwrap();
        assert!((y[0][[1, 0]] - 1.0 / (2.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn activations_and_pooling() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Linear.apply(1.7), 1.7);
        assert_eq!(global_average_pool(&array![[1.0, 2.0]]).unwrap(), array![1.0, 2.0]);
        assert_eq!(global_average_pool(&array![[0.0], [2.0]]).unwrap(), array![1.0]);
        assert_eq!(global_average_pool(&Array2::from_elem((7, 1), 0.3)).unwrap()[0], 0.3);
        assert!(global_average_pool(&Array2::<f64>::zeros((0, 2))).is_err());
    }

    #[test]
    fn dense_examples() {
        let id = Dense {
            weight: Array2::eye(2),
            bias: array![0.0, 0.0],
            activation: Activation::Linear,
        };
        assert_eq!(dense(&array![3.0, -4.0], &id).unwrap(), array![3.0, -4.0]);
        let b = Dense {
            weight: Array2::zeros((2, 2)),
            bias: array![1.0, 2.0],
            activation: Activation::Linear,
        };
        assert_eq!(dense(&array![3.0, -4.0], &b).unwrap(), array![1.0, 2.0]);
        let h = Dense {
            weight: array![[1.0, 2.0], [3.0, 4.0]],
            bias: array![0.5, -10.0],
            activation: Activation::Relu,
        };
        // [1, 1] W = [4, 6]; + b = [4.5, -4]; relu -> [4.5, 0]
        assert_eq!(dense(&array![1.0, 1.0], &h).unwrap(), array![4.5, 0.0]);
        assert!(dense(&array![1.0], &h).is_err());
    }
}
