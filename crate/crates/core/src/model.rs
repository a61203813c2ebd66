//! Network assembly, forward/backward passes, parameter accounting and the
//! symmetry test harness.
//!
//! Wiring: `[conv -> batch norm -> relu] x N_c -> mean pool -> dense x N_d`
//! (last dense linear) `-> LSTM(N_f) -> linear head`, with the pooled
//! features concatenated to the strain at every step.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    activate, activate_backward, dense, dense_backward, global_average_pool,
    global_average_pool_backward, graph_conv_backward, graph_conv_cached, Activation,
    AdjacencySlots, BatchNorm, BnCache, BnMode, ConvCache, ConvLayer, Dense, FilterPattern,
    PatternKind,
};
use crate::meshgraph::{CellComplex, ComplexKind, GridRotation};
use crate::recurrent::{
    linear_head, linear_head_backward, unroll_backward, unroll_cached, LinearHead, LstmParams,
    StepCache,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cnn,
    Dgcnn,
    Rgcnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cnn => "cnn",
            Variant::Dgcnn => "dgcnn",
            Variant::Rgcnn => "rgcnn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnn" => Ok(Variant::Cnn),
            "dgcnn" => Ok(Variant::Dgcnn),
            "rgcnn" => Ok(Variant::Rgcnn),
            _ => Err(Error::Parse(format!("unknown variant '{s}'"))),
        }
    }
}

/// Architecture `N_f/N_c/N_d` plus variant and filter pattern.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub n_filters: usize,
    pub n_conv: usize,
    pub n_dense: usize,
    pub variant: Variant,
    pub pattern: FilterPattern,
    #[serde(default)]
    pub boost_channels: Vec<String>,
}

impl ArchSpec {
    pub fn new(n_filters: usize, n_conv: usize, n_dense: usize, variant: Variant) -> Result<Self> {
        if n_filters == 0 || n_conv == 0 || n_dense == 0 {
            return Err(Error::InvalidArgument(format!(
                "architecture sizes must be positive, got {n_filters}/{n_conv}/{n_dense}"
            )));
        }
        let pattern = match variant {
            Variant::Cnn => FilterPattern::pixel(),
            _ => FilterPattern::gcn(),
        };
        Ok(Self {
            n_filters,
            n_conv,
            n_dense,
            variant,
            pattern,
            boost_channels: Vec::new(),
        })
    }

    pub fn with_pattern(mut self, pattern: FilterPattern) -> Self {
        self.pattern = pattern;
        self
    }

    /// The `N_f/N_c/N_d` triple as text.
    pub fn arch_string(&self) -> String {
        format!("{}/{}/{}", self.n_filters, self.n_conv, self.n_dense)
    }

    /// Parses `4/2/1` or `\arch{4}{2}{1}` into `(N_f, N_c, N_d)`.
    pub fn parse_triple(s: &str) -> Result<(usize, usize, usize)> {
        let t = s.trim();
        let parts: Vec<&str> = if let Some(rest) = t.strip_prefix("\\arch") {
            rest.trim_start_matches('{')
                .trim_end_matches('}')
                .split("}{")
                .collect()
        } else {
            t.split('/').collect()
        };
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("bad architecture '{s}'")))?;
        match nums[..] {
            [a, b, c] if a > 0 && b > 0 && c > 0 => Ok((a, b, c)),
            _ => Err(Error::Parse(format!("bad architecture '{s}'"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.n_conv == 0 || self.n_dense == 0 {
            return Err(Error::InvalidArgument("architecture sizes must be positive".into()));
        }
        let pixel = self.pattern.kind == PatternKind::Pixel;
        if (self.variant == Variant::Cnn) != pixel {
            return Err(Error::VariantMismatch {
                variant: self.variant.to_string(),
                detail: format!("pattern {} not allowed", self.pattern),
            });
        }
        Ok(())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.variant, self.arch_string())?;
        if self.variant != Variant::Cnn {
            write!(f, ":{}", self.pattern)?;
        }
        Ok(())
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    /// `[variant:]triple[:pattern]`, e.g. `dgcnn:4/2/1:O`, `cnn:\arch{3}{2}{1}`
    /// or plain `4/1/1` (dGCNN with the GCN filter).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let (variant, triple, pattern) = match parts[..] {
            [t] => (Variant::Dgcnn, t, None),
            [v, t] => (v.parse()?, t, None),
            [v, t, p] => (v.parse()?, t, Some(p.parse::<FilterPattern>()?)),
            _ => return Err(Error::Parse(format!("bad architecture spec '{s}'"))),
        };
        let (a, b, c) = Self::parse_triple(triple)?;
        let mut spec = Self::new(a, b, c, variant)?;
        if let Some(p) = pattern {
            spec.pattern = p;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Full parameter set of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub spec: ArchSpec,
    pub in_channels: usize,
    pub spatial_dim: Option<usize>,
    pub convs: Vec<ConvLayer<T>>,
    pub bns: Vec<BatchNorm<T>>,
    pub dense: Vec<Dense<T>>,
    pub lstm: LstmParams<T>,
    pub head: LinearHead<T>,
}

fn check_complex(spec: &ArchSpec, complex: &CellComplex) -> Result<()> {
    spec.validate()?;
    match (spec.variant, complex.kind()) {
        (Variant::Cnn, ComplexKind::Unstructured) => Err(Error::VariantMismatch {
            variant: "cnn".into(),
            detail: "pixel convolution needs a structured grid".into(),
        }),
        (Variant::Rgcnn, ComplexKind::Structured) => Err(Error::VariantMismatch {
            variant: "rgcnn".into(),
            detail: "expects a grain graph, got a grid".into(),
        }),
        _ => Ok(()),
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialisation for the given complex and input channel count.
    pub fn build(spec: &ArchSpec, complex: &CellComplex, n_channels: usize, seed: u64) -> Result<Self> {
        check_complex(spec, complex)?;
        Self::init(spec, n_channels, complex.spatial_dim(), seed)
    }

    pub fn init(spec: &ArchSpec, n_channels: usize, spatial_dim: Option<usize>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_channels == 0 {
            return Err(Error::InvalidArgument("at least one input channel is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = spec.pattern.slot_count(spatial_dim)?;
        let nf = spec.n_filters;
        let mut convs = Vec::with_capacity(spec.n_conv);
        let mut bns = Vec::with_capacity(spec.n_conv);
        for l in 0..spec.n_conv {
            let cin = if l == 0 { n_channels } else { nf };
            convs.push(ConvLayer::init(spec.pattern, slots, cin, nf, &mut rng));
            bns.push(BatchNorm::new(nf));
        }
        let dense = (0..spec.n_dense)
            .map(|k| {
                let act = if k + 1 == spec.n_dense {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                Dense::init(nf, nf, act, &mut rng)
            })
            .collect();
        let lstm = LstmParams::init(nf + 1, nf, &mut rng);
        let head = LinearHead::init(nf, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            in_channels: n_channels,
            spatial_dim,
            convs,
            bns,
            dense,
            lstm,
            head,
        })
    }

    /// Same shapes, every trainable entry zero and running statistics reset.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, s) in z.named_slices_mut(true) {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Binds this model's adjacency slots to a complex.
    pub fn bind(&self, complex: &CellComplex) -> Result<AdjacencySlots<T>> {
        check_complex(&self.spec, complex)?;
        if self.spec.variant == Variant::Cnn && complex.spatial_dim() != self.spatial_dim {
            return Err(Error::VariantMismatch {
                variant: "cnn".into(),
                detail: "grid dimension differs from the build grid".into(),
            });
        }
        AdjacencySlots::bind(complex, self.spec.pattern)
    }

    /// `(name, values)` for every parameter block, trainable first, then the
    /// batch-norm running statistics when requested.
    pub fn named_slices(&self, include_running: bool) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (l, c) in self.convs.iter().enumerate() {
            for (k, w) in c.weights.iter().enumerate() {
                out.push((format!("conv{l}.w{k}"), w.as_slice().expect("standard layout")));
            }
            out.push((format!("conv{l}.b"), c.bias.as_slice().expect("standard layout")));
        }
        for (l, b) in self.bns.iter().enumerate() {
            out.push((format!("bn{l}.gamma"), b.gamma.as_slice().expect("standard layout")));
            out.push((format!("bn{l}.beta"), b.beta.as_slice().expect("standard layout")));
        }
        for (k, d) in self.dense.iter().enumerate() {
            out.push((format!("dense{k}.w"), d.weight.as_slice().expect("standard layout")));
            out.push((format!("dense{k}.b"), d.bias.as_slice().expect("standard layout")));
        }
        out.push(("lstm.w".into(), self.lstm.w.as_slice().expect("standard layout")));
        out.push(("lstm.u".into(), self.lstm.u.as_slice().expect("standard layout")));
        out.push(("lstm.b".into(), self.lstm.b.as_slice().expect("standard layout")));
        out.push(("head.w".into(), self.head.weight.as_slice().expect("standard layout")));
        out.push(("head.b".into(), std::slice::from_ref(&self.head.bias)));
        if include_running {
            for (l, b) in self.bns.iter().enumerate() {
                out.push((format!("bn{l}.running_mean"), b.running_mean.as_slice().expect("standard layout")));
                out.push((format!("bn{l}.running_var"), b.running_var.as_slice().expect("standard layout")));
            }
        }
        out
    }

    pub fn named_slices_mut(&mut self, include_running: bool) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        for (l, c) in self.convs.iter_mut().enumerate() {
            for (k, w) in c.weights.iter_mut().enumerate() {
                out.push((format!("conv{l}.w{k}"), w.as_slice_mut().expect("standard layout")));
            }
            out.push((format!("conv{l}.b"), c.bias.as_slice_mut().expect("standard layout")));
        }
        let mut running = Vec::new();
        for (l, b) in self.bns.iter_mut().enumerate() {
            out.push((format!("bn{l}.gamma"), b.gamma.as_slice_mut().expect("standard layout")));
            out.push((format!("bn{l}.beta"), b.beta.as_slice_mut().expect("standard layout")));
            if include_running {
                running.push((format!("bn{l}.running_mean"), b.running_mean.as_slice_mut().expect("standard layout")));
                running.push((format!("bn{l}.running_var"), b.running_var.as_slice_mut().expect("standard layout")));
            }
        }
        for (k, d) in self.dense.iter_mut().enumerate() {
            out.push((format!("dense{k}.w"), d.weight.as_slice_mut().expect("standard layout")));
            out.push((format!("dense{k}.b"), d.bias.as_slice_mut().expect("standard layout")));
        }
        out.push(("lstm.w".into(), self.lstm.w.as_slice_mut().expect("standard layout")));
        out.push(("lstm.u".into(), self.lstm.u.as_slice_mut().expect("standard layout")));
        out.push(("lstm.b".into(), self.lstm.b.as_slice_mut().expect("standard layout")));
        out.push(("head.w".into(), self.head.weight.as_slice_mut().expect("standard layout")));
        out.push(("head.b".into(), std::slice::from_mut(&mut self.head.bias)));
        out.extend(running);
        out
    }

    /// Trainable parameters concatenated in layer order.
    pub fn flatten(&self) -> Vec<T> {
        self.named_slices(false).into_iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.trainable_len();
        if flat.len() != n {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), n)));
        }
        let mut off = 0;
        for (_, s) in self.named_slices_mut(false) {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub fn trainable_len(&self) -> usize {
        self.named_slices(false).iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_slices(true).iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Element-wise `self += other`, trainable blocks only.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.named_slices_mut(false).into_iter().zip(other.named_slices(false)) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::init(&self.spec, self.in_channels, self.spatial_dim, 0)
            .expect("spec already validated");
        for ((_, dst), (_, src)) in out.named_slices_mut(true).into_iter().zip(self.named_slices(true)) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = U::lit(s.to_f64_lossy()));
        }
        out
    }
}

/// One sample as seen by the network.
#[derive(Clone, Copy, Debug)]
pub struct SampleRef<'a, T> {
    pub features: &'a Array2<T>,
    pub slots: &'a AdjacencySlots<T>,
    pub strain: &'a [T],
}

#[derive(Clone, Debug)]
struct SampleCache<T> {
    conv: Vec<ConvCache<T>>,
    act: Vec<Array2<T>>,
    pooled: Array1<T>,
    dense_out: Vec<Array1<T>>,
    lstm: Vec<StepCache<T>>,
    hidden: Array2<T>,
}

/// Everything the backward pass needs from a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchCache<T> {
    samples: Vec<SampleCache<T>>,
    bn: Vec<BnCache<T>>,
}

impl<T> BatchCache<T> {
    pub fn bn_caches(&self) -> &[BnCache<T>] {
        &self.bn
    }
}

fn finite_or<T: Scalar, D: ndarray::Dimension>(a: &ndarray::Array<T, D>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Batched forward pass. Batch-norm statistics in [`BnMode::Batch`] pool all
/// nodes of all samples; adjacency is never shared between samples.
pub fn forward_batch<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[SampleRef<'_, T>],
    bn_mode: BnMode,
) -> Result<(Vec<Array1<T>>, BatchCache<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    for s in batch {
        if s.features.ncols() != params.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, sample has {}",
                params.in_channels,
                s.features.ncols()
            )));
        }
    }
    let mut convs: Vec<Vec<ConvCache<T>>> = vec![Vec::new(); batch.len()];
    let mut acts: Vec<Vec<Array2<T>>> = vec![Vec::new(); batch.len()];
    let mut bn_caches = Vec::with_capacity(params.convs.len());
    let mut current: Vec<Array2<T>> = batch.iter().map(|s| s.features.clone()).collect();
    for (l, (layer, bn)) in params.convs.iter().zip(&params.bns).enumerate() {
        let mut pre = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            let (y, c) = graph_conv_cached(&current[i], layer, s.slots)?;
            finite_or(&y, || format!("conv{l}"))?;
            pre.push(y);
            convs[i].push(c);
        }
        let refs: Vec<&Array2<T>> = pre.iter().collect();
        let (normed, bc) = bn.forward(&refs, bn_mode)?;
        bn_caches.push(bc);
        current = normed.iter().map(|y| activate(y, Activation::Relu)).collect();
        for (i, a) in current.iter().enumerate() {
            finite_or(a, || format!("bn{l}"))?;
            acts[i].push(a.clone());
        }
    }
    let mut outputs = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let pooled = global_average_pool(&current[i])?;
        let mut x = pooled.clone();
        let mut dense_out = Vec::with_capacity(params.dense.len());
        for (k, d) in params.dense.iter().enumerate() {
            x = dense(&x, d)?;
            finite_or(&x, || format!("dense{k}"))?;
            dense_out.push(x.clone());
        }
        let (hidden, lstm) = unroll_cached(&x, s.strain, &params.lstm)?;
        finite_or(&hidden, || "lstm".to_string())?;
        let y = linear_head(&hidden, &params.head)?;
        finite_or(&y, || "head".to_string())?;
        outputs.push(y);
        samples.push(SampleCache {
            conv: std::mem::take(&mut convs[i]),
            act: std::mem::take(&mut acts[i]),
            pooled,
            dense_out,
            lstm,
            hidden,
        });
    }
    Ok((
        outputs,
        BatchCache {
            samples,
            bn: bn_caches,
        },
    ))
}

/// Reverse pass: gradients of `sum_i <d_outputs[i], y_i>` with respect to
/// every trainable parameter, in a record shaped like `params`.
pub fn backward_batch<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[SampleRef<'_, T>],
    cache: &BatchCache<T>,
    d_outputs: &[Array1<T>],
) -> Result<ModelParams<T>> {
    if d_outputs.len() != batch.len() || cache.samples.len() != batch.len() {
        return Err(Error::Shape("gradient batch size mismatch".into()));
    }
    let mut g = params.zeros_like();
    let mut d_act: Vec<Array2<T>> = Vec::with_capacity(batch.len());
    for (sc, dy) in cache.samples.iter().zip(d_outputs) {
        let (dw, db, dh) = linear_head_backward(&sc.hidden, &params.head, dy.view());
        g.head.weight += &dw;
        g.head.bias += db;
        let lg = unroll_backward(&sc.lstm, &dh, &params.lstm);
        g.lstm.w += &lg.w;
        g.lstm.u += &lg.u;
        g.lstm.b += &lg.b;
        let mut d = lg.features;
        for k in (0..params.dense.len()).rev() {
            let x = if k == 0 { &sc.pooled } else { &sc.dense_out[k - 1] };
            let (dw, db, dx) = dense_backward(x, &sc.dense_out[k], &params.dense[k], &d);
            g.dense[k].weight += &dw;
            g.dense[k].bias += &db;
            d = dx;
        }
        let n = sc.act.last().map_or(0, |a| a.nrows());
        d_act.push(global_average_pool_backward(n, &d));
    }
    for l in (0..params.convs.len()).rev() {
        let d_bn: Vec<Array2<T>> = cache
            .samples
            .iter()
            .zip(&d_act)
            .map(|(sc, da)| activate_backward(&sc.act[l], da, Activation::Relu))
            .collect();
        let (dgamma, dbeta, dxs) = params.bns[l].backward(&cache.bn[l], &d_bn);
        g.bns[l].gamma += &dgamma;
        g.bns[l].beta += &dbeta;
        let mut next = Vec::with_capacity(batch.len());
        for ((sc, s), dx) in cache.samples.iter().zip(batch).zip(&dxs) {
            let cg = graph_conv_backward(&sc.conv[l], &params.convs[l], s.slots, dx, l > 0);
            for (acc, w) in g.convs[l].weights.iter_mut().zip(&cg.weights) {
                *acc += w;
            }
            g.convs[l].bias += &cg.bias;
            if let Some(di) = cg.input {
                next.push(di);
            }
        }
        d_act = next;
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(g)
}

/// Inference on one sample with running batch-norm statistics.
pub fn forward<T: Scalar>(params: &ModelParams<T>, sample: SampleRef<'_, T>) -> Result<Array1<T>> {
    forward_with(params, sample, BnMode::Running)
}

pub fn forward_with<T: Scalar>(params: &ModelParams<T>, sample: SampleRef<'_, T>, mode: BnMode) -> Result<Array1<T>> {
    let (mut out, _) = forward_batch(params, &[sample], mode)?;
    Ok(out.remove(0))
}

/// Published counts of the 2D crystal-plasticity architectures with GCN filters.
pub const REFERENCE_COUNTS: [ReferenceRow; 8] = [
    ReferenceRow { arch: (1, 1, 1), cnn: 41, dgcnn: 26, rgcnn: 27 },
    ReferenceRow { arch: (2, 1, 1), cnn: 99, dgcnn: 75, rgcnn: 71 },
    ReferenceRow { arch: (4, 1, 1), cnn: 269, dgcnn: 209, rgcnn: 213 },
    ReferenceRow { arch: (6, 1, 1), cnn: 511, dgcnn: 421, rgcnn: 427 },
    ReferenceRow { arch: (1, 2, 1), cnn: 55, dgcnn: 32, rgcnn: 33 },
    ReferenceRow { arch: (2, 2, 1), cnn: 145, dgcnn: 69, rgcnn: 85 },
    ReferenceRow { arch: (4, 2, 1), cnn: 433, dgcnn: 245, rgcnn: 249 },
    ReferenceRow { arch: (6, 2, 1), cnn: 865, dgcnn: 487, rgcnn: 493 },
];

/// How batch-norm layers enter the count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnCounting {
    /// Scale and shift only.
    Affine,
    /// Scale, shift, running mean and running variance.
    Full,
}

/// Options of the parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Accounting {
    pub bn: BnCounting,
    pub include_recurrent: bool,
    /// Counts the first pixel layer as if its kernel had this many taps.
    pub cnn_first_layer_taps: Option<usize>,
}

impl Default for Accounting {
    fn default() -> Self {
        Self {
            bn: BnCounting::Full,
            include_recurrent: true,
            cnn_first_layer_taps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub shape: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub total: usize,
    pub layers: Vec<LayerCount>,
}

impl CountReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,shape,count\n");
        for l in &self.layers {
            s.push_str(&format!("{},{},{}\n", l.layer, l.shape, l.count));
        }
        s.push_str(&format!("total,,{}\n", self.total));
        s
    }
}

pub fn param_count<T: Scalar>(params: &ModelParams<T>, accounting: &Accounting) -> CountReport {
    let mut layers = Vec::new();
    for (l, c) in params.convs.iter().enumerate() {
        let slots = match (l, params.spec.variant, accounting.cnn_first_layer_taps) {
            (0, Variant::Cnn, Some(taps)) => taps,
            _ => c.weights.len(),
        };
        layers.push(LayerCount {
            layer: format!("conv{l}"),
            shape: format!("{}x{}x{}+{}", slots, c.in_channels, c.out_channels, c.out_channels),
            count: slots * c.in_channels * c.out_channels + c.out_channels,
        });
        let per = match accounting.bn {
            BnCounting::Affine => 2,
            BnCounting::Full => 4,
        };
        layers.push(LayerCount {
            layer: format!("bn{l}"),
            shape: format!("{}x{}", per, params.bns[l].channels()),
            count: per * params.bns[l].channels(),
        });
    }
    for (k, d) in params.dense.iter().enumerate() {
        layers.push(LayerCount {
            layer: format!("dense{k}"),
            shape: format!("{}x{}+{}", d.weight.nrows(), d.weight.ncols(), d.bias.len()),
            count: d.param_count(),
        });
    }
    if accounting.include_recurrent {
        let p = &params.lstm;
        layers.push(LayerCount {
            layer: "lstm".into(),
            shape: format!("4x({}+{}+1)x{}", p.input_size, p.hidden_size, p.hidden_size),
            count: p.param_count(),
        });
        layers.push(LayerCount {
            layer: "head".into(),
            shape: format!("{}+1", params.head.weight.len()),
            count: params.head.param_count(),
        });
    }
    CountReport {
        total: layers.iter().map(|l| l.count).sum(),
        layers,
    }
}

/// A published `(architecture -> CNN, dGCNN, rGCNN)` count row to reconcile against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub arch: (usize, usize, usize),
    pub cnn: usize,
    pub dgcnn: usize,
    pub rgcnn: usize,
}

/// Input-channel layout of the three variants on 2D orientation data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub cnn: usize,
    pub dgcnn: usize,
    pub rgcnn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowComparison {
    pub arch: String,
    pub computed: [usize; 3],
    pub reference: [usize; 3],
    pub discrepancy: [i64; 3],
}

impl RowComparison {
    pub fn exact(&self) -> bool {
        self.discrepancy.iter().all(|&d| d == 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub accounting: Accounting,
    pub channels: ChannelLayout,
    pub rows: Vec<RowComparison>,
    pub total_abs_discrepancy: u64,
}

impl Reconciliation {
    pub fn exact_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.exact()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("arch,cnn,dgcnn,rgcnn,ref_cnn,ref_dgcnn,ref_rgcnn,d_cnn,d_dgcnn,d_rgcnn\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.arch,
                r.computed[0],
                r.computed[1],
                r.computed[2],
                r.reference[0],
                r.reference[1],
                r.reference[2],
                r.discrepancy[0],
                r.discrepancy[1],
                r.discrepancy[2]
            ));
        }
        s
    }
}

/// Structural count of one variant in 2D under an accounting.
pub fn count_for(arch: (usize, usize, usize), variant: Variant, channels: usize, accounting: &Accounting) -> Result<usize> {
    let spec = ArchSpec::new(arch.0, arch.1, arch.2, variant)?;
    let m = ModelParams::<f64>::init(&spec, channels, Some(2), 0)?;
    Ok(param_count(&m, accounting).total)
}

/// Evaluates one accounting/channel configuration against the reference rows.
pub fn compare_rows(rows: &[ReferenceRow], accounting: Accounting, channels: ChannelLayout) -> Result<Reconciliation> {
    let mut out = Vec::with_capacity(rows.len());
    let mut total = 0u64;
    for r in rows {
        let computed = [
            count_for(r.arch, Variant::Cnn, channels.cnn, &accounting)?,
            count_for(r.arch, Variant::Dgcnn, channels.dgcnn, &accounting)?,
            count_for(r.arch, Variant::Rgcnn, channels.rgcnn, &accounting)?,
        ];
        let reference = [r.cnn, r.dgcnn, r.rgcnn];
        let discrepancy = [0, 1, 2].map(|i| computed[i] as i64 - reference[i] as i64);
        total += discrepancy.iter().map(|d| d.unsigned_abs()).sum::<u64>();
        out.push(RowComparison {
            arch: format!("{}/{}/{}", r.arch.0, r.arch.1, r.arch.2),
            computed,
            reference,
            discrepancy,
        });
    }
    Ok(Reconciliation {
        accounting,
        channels,
        rows: out,
        total_abs_discrepancy: total,
    })
}

/// Searches batch-norm counting, recurrent inclusion, the first pixel-layer
/// tap count and 2D input channel layouts for the configuration with the
/// smallest total discrepancy (ties broken by more exact rows).
pub fn reconcile(rows: &[ReferenceRow]) -> Result<Reconciliation> {
    let mut best: Option<Reconciliation> = None;
    for bn in [BnCounting::Affine, BnCounting::Full] {
        for include_recurrent in [false, true] {
            for taps in [None, Some(16), Some(25)] {
                for c in 1..=3 {
                    for extra in [0, 1] {
                        let acc = Accounting {
                            bn,
                            include_recurrent,
                            cnn_first_layer_taps: taps,
                        };
                        let ch = ChannelLayout {
                            cnn: c,
                            dgcnn: c,
                            rgcnn: c + extra,
                        };
                        let r = compare_rows(rows, acc, ch)?;
                        let better = match &best {
                            None => true,
                            Some(b) => (r.total_abs_discrepancy, std::cmp::Reverse(r.exact_rows()))
                                < (b.total_abs_discrepancy, std::cmp::Reverse(b.exact_rows())),
                        };
                        if better {
                            best = Some(r);
                        }
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::Empty("reference rows".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub max_abs_deviation: f64,
}

fn max_dev<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(0.0, f64::max)
}

/// Rotates grid data by exact index remapping and reports the largest
/// output change.
pub fn check_equivariance<T: Scalar>(
    params: &ModelParams<T>,
    grid: &CellComplex,
    features: &Array2<T>,
    strain: &[T],
    rotation: &GridRotation,
) -> Result<SymmetryReport> {
    if grid.kind() != ComplexKind::Structured {
        return Err(Error::UnsupportedTopology("rotation needs a structured grid".into()));
    }
    if rotation.dim() != grid.dims().len() {
        return Err(Error::NotGridRotation);
    }
    let slots = params.bind(grid)?;
    let base = forward(params, SampleRef { features, slots: &slots, strain })?;
    let rotated = rotation.apply_to_grid(grid)?;
    let map = rotation.cell_map(grid.dims())?;
    let mut rf = Array2::zeros(features.dim());
    for (old, &new) in map.iter().enumerate() {
        rf.row_mut(new).assign(&features.row(old));
    }
    let rslots = params.bind(&rotated)?;
    let out = forward(params, SampleRef { features: &rf, slots: &rslots, strain })?;
    Ok(SymmetryReport {
        max_abs_deviation: max_dev(&base, &out),
    })
}

/// Relabels nodes by `perm[old] = new` and reports the largest output change.
pub fn check_permutation<T: Scalar>(
    params: &ModelParams<T>,
    complex: &CellComplex,
    features: &Array2<T>,
    strain: &[T],
    perm: &[usize],
) -> Result<SymmetryReport> {
    let slots = params.bind(complex)?;
    let base = forward(params, SampleRef { features, slots: &slots, strain })?;
    let pc = complex.permuted(perm)?;
    let mut pf = Array2::zeros(features.dim());
    for (old, &new) in perm.iter().enumerate() {
        pf.row_mut(new).assign(&features.row(old));
    }
    let pslots = AdjacencySlots::bind(&pc, params.spec.pattern)?;
    let out = forward(params, SampleRef { features: &pf, slots: &pslots, strain })?;
    Ok(SymmetryReport {
        max_abs_deviation: max_dev(&base, &out),
    })
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerIndexEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub spec: ArchSpec,
    pub in_channels: usize,
    pub spatial_dim: Option<usize>,
    pub accounting: Accounting,
    pub param_count: usize,
    pub layers: Vec<LayerIndexEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Writes `manifest.json`, `params.bin` (little-endian f64) and
/// `param_table.csv` into `dir`.
pub fn save_checkpoint<T: Scalar>(dir: &Path, params: &ModelParams<T>, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut layers = Vec::new();
    let mut offset = 0;
    for (name, s) in params.named_slices(true) {
        for v in s {
            blob.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        layers.push(LayerIndexEntry {
            name,
            offset,
            len: s.len(),
        });
        offset += s.len();
    }
    let accounting = Accounting::default();
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        spec: params.spec.clone(),
        in_channels: params.in_channels,
        spatial_dim: params.spatial_dim,
        accounting,
        param_count: param_count(params, &accounting).total,
        layers,
        extra,
    };
    fs::write(dir.join("params.bin"), blob)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("param_table.csv"), param_count(params, &accounting).to_csv())?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(ModelParams<T>, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {}", manifest.version)));
    }
    let blob = fs::read(dir.join("params.bin"))?;
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = ModelParams::<T>::init(&manifest.spec, manifest.in_channels, manifest.spatial_dim, 0)?;
    let slices = params.named_slices_mut(true);
    if slices.len() != manifest.layers.len() {
        return Err(Error::Parse("checkpoint layer index does not match the architecture".into()));
    }
    for ((name, dst), entry) in slices.into_iter().zip(&manifest.layers) {
        if name != entry.name || dst.len() != entry.len || entry.offset + entry.len > values.len() {
            return Err(Error::Parse(format!("checkpoint layer '{}' is inconsistent", entry.name)));
        }
        for (d, &v) in dst.iter_mut().zip(&values[entry.offset..entry.offset + entry.len]) {
            *d = T::lit(v);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::SelfWeight;

    #[test]
    fn arch_notation_round_trip() {
        assert_eq!(ArchSpec::parse_triple("4/2/1").unwrap(), (4, 2, 1));
        assert_eq!(ArchSpec::parse_triple("\\arch{4}{2}{1}").unwrap(), (4, 2, 1));
        assert!(ArchSpec::parse_triple("4/0/1").is_err());
        assert!(ArchSpec::parse_triple("4/2").is_err());
        let s: ArchSpec = "dgcnn:8/2/1:O".parse().unwrap();
        assert_eq!(s.pattern.kind, PatternKind::O);
        let back: ArchSpec = s.to_string().parse().unwrap();
        assert_eq!(back, s);
        let c: ArchSpec = "cnn:\\arch{3}{2}{1}".parse().unwrap();
        assert_eq!(c.to_string(), "cnn:3/2/1");
        assert!("cnn:3/2/1:+".parse::<ArchSpec>().is_err());
    }

    #[test]
    fn minimal_dgcnn_has_one_slot() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let spec = ArchSpec::new(1, 1, 1, Variant::Dgcnn).unwrap();
        let m = ModelParams::<f64>::build(&spec, &g, 1, 0).unwrap();
        assert_eq!(m.convs[0].weights.len(), 1);
    }

    #[test]
    fn cnn_shapes_chain() {
        let g = CellComplex::grid(&[4, 4]).unwrap();
        let spec = ArchSpec::new(3, 2, 1, Variant::Cnn).unwrap();
        let m = ModelParams::<f64>::build(&spec, &g, 1, 0).unwrap();
        assert_eq!(m.convs[0].param_count(), (9 + 1) * 3);
        assert_eq!(m.convs[1].in_channels, 3);
        let u = g.permuted(&(0..16).rev().collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            ModelParams::<f64>::build(&spec, &u, 1, 0),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn layer_counts() {
        let d: Dense<f64> = Dense {
            weight: Array2::zeros((4, 4)),
            bias: Array1::zeros(4),
            activation: Activation::Linear,
        };
        assert_eq!(d.param_count(), 20);
        let c = ConvLayer::<f64>::zeros(FilterPattern::gcn(), 1, 2, 4);
        assert_eq!(c.param_count(), 12);
        assert_eq!(count_for((4, 1, 1), Variant::Dgcnn, 1, &Accounting::default()).unwrap(), 209);
    }

    #[test]
    fn zero_params_emit_head_bias() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let spec = ArchSpec::new(2, 1, 1, Variant::Dgcnn)
            .unwrap()
            .with_pattern(FilterPattern::new(PatternKind::Star, SelfWeight::Independent));
        let mut m = ModelParams::<f64>::build(&spec, &g, 1, 0).unwrap().zeros_like();
        m.head.bias = 0.42;
        for b in &mut m.bns {
            b.running_var.fill(1.0);
        }
        let slots = m.bind(&g).unwrap();
        let x = Array2::from_elem((9, 1), 0.5);
        let y = forward(&m, SampleRef { features: &x, slots: &slots, strain: &[0.1, 0.2, 0.3] }).unwrap();
        assert!(y.iter().all(|&v| v == 0.42));
    }

    #[test]
    fn flat_round_trip_and_checkpoint() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let spec = ArchSpec::new(2, 2, 2, Variant::Dgcnn).unwrap();
        let m = ModelParams::<f64>::build(&spec, &g, 2, 7).unwrap();
        let flat = m.flatten();
        assert_eq!(flat.len(), m.trainable_len());
        let mut z = m.zeros_like();
        z.set_flat(&flat).unwrap();
        assert_eq!(z.flatten(), flat);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &m, serde_json::json!({"seed": 7})).unwrap();
        let (back, man) = load_checkpoint::<f64>(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(man.extra["seed"], 7);
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let spec = ArchSpec::new(2, 1, 1, Variant::Dgcnn).unwrap();
        let a = ModelParams::<f64>::build(&spec, &g, 1, 11).unwrap();
        let b = ModelParams::<f64>::build(&spec, &g, 1, 11).unwrap();
        let c = ModelParams::<f64>::build(&spec, &g, 1, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
