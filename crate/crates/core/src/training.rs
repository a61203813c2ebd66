//! Conditioning, loss, optimisation and dataset splitting.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::filters::{AdjacencySlots, BnMode};
use crate::meshgraph::CellComplex;
use crate::metrics::{correlation_curve, EvalReport};
use crate::microgen::{segment_to_grain_graph, GrainFeatureSet};
use crate::model::{backward_batch, forward_batch, BatchCache, ModelParams, SampleRef};
use crate::scalar::Scalar;

/// A realization in the form the network consumes: a complex, raw node
/// channels and the labelled trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub complex: CellComplex,
    pub features: Array2<f64>,
    pub labels: Vec<String>,
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

impl ModelInput {
    pub fn from_sample(s: &Sample) -> Self {
        Self {
            complex: s.micro.complex.clone(),
            features: s.micro.features.values.clone(),
            labels: s.micro.features.labels.clone(),
            strain: s.trajectory.strain.clone(),
            stress: s.trajectory.stress.clone(),
        }
    }

    /// The reduced grain graph of a polycrystal with the selected per-grain features.
    pub fn grain_graph(s: &Sample, set: GrainFeatureSet) -> Result<Self> {
        let g = segment_to_grain_graph(&s.micro, set)?;
        Ok(Self {
            complex: g.complex,
            features: g.features.values,
            labels: g.features.labels,
            strain: s.trajectory.strain.clone(),
            stress: s.trajectory.stress.clone(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.strain.len()
    }
}

/// How the single target scale is formed from the centred trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdBasis {
    /// Standard deviation over time of each centred trajectory, averaged over realizations.
    #[default]
    PerRealization,
    /// Standard deviation over all realizations and steps together.
    Pooled,
}

/// Scalings fitted on the training split; applying them is invertible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningStats {
    pub channel_max: Vec<f64>,
    pub strain_max: f64,
    pub trend: Vec<f64>,
    pub scale: f64,
    pub basis: StdBasis,
}

fn std_of(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = v.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let m = s / n as f64;
    (v.map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt()
}

impl ConditioningStats {
    pub fn fit(train: &[ModelInput], basis: StdBasis) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Empty("training split".into()))?;
        let c = first.features.ncols();
        let t = first.n_steps();
        let mut channel_max = vec![0.0f64; c];
        let mut strain_max = 0.0f64;
        let mut trend = vec![0.0; t];
        for s in train {
            if s.features.ncols() != c {
                return Err(Error::Shape("realizations disagree on channel count".into()));
            }
            if s.n_steps() != t || s.stress.len() != t {
                return Err(Error::Shape("realizations disagree on step count".into()));
            }
            for row in s.features.rows() {
                for (m, v) in channel_max.iter_mut().zip(row) {
                    *m = m.max(v.abs());
                }
            }
            strain_max = s.strain.iter().fold(strain_max, |m, e| m.max(e.abs()));
            for (acc, v) in trend.iter_mut().zip(&s.stress) {
                *acc += v / train.len() as f64;
            }
        }
        if let Some(k) = channel_max.iter().position(|&m| m <= 0.0 || !m.is_finite()) {
            return Err(Error::ZeroMaximum(first.labels.get(k).cloned().unwrap_or_else(|| k.to_string())));
        }
        if strain_max <= 0.0 {
            return Err(Error::ZeroMaximum("strain".into()));
        }
        let centred = |s: &ModelInput| s.stress.iter().zip(&trend).map(|(v, m)| v - m).collect::<Vec<_>>();
        let scale = match basis {
            StdBasis::PerRealization => {
                train.iter().map(|s| std_of(centred(s).into_iter())).sum::<f64>() / train.len() as f64
            }
            StdBasis::Pooled => {
                let all: Vec<f64> = train.iter().flat_map(centred).collect();
                std_of(all.into_iter())
            }
        };
        let magnitude = trend.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        if !(scale > 1e-12 * magnitude) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self {
            channel_max,
            strain_max,
            trend,
            scale,
            basis,
        })
    }

    pub fn condition_features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.channel_max.len() {
            return Err(Error::Shape(format!("{} channels, stats have {}", x.ncols(), self.channel_max.len())));
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.channel_max).for_each(|(v, m)| *v /= m);
        }
        Ok(out)
    }

    pub fn condition_strain(&self, strain: &[f64]) -> Vec<f64> {
        strain.iter().map(|e| e / self.strain_max).collect()
    }

    pub fn condition_target(&self, stress: &[f64]) -> Result<Vec<f64>> {
        self.check_len(stress.len())?;
        Ok(stress.iter().zip(&self.trend).map(|(v, m)| (v - m) / self.scale).collect())
    }

    pub fn uncondition_target(&self, target: &[f64]) -> Result<Vec<f64>> {
        self.check_len(target.len())?;
        Ok(target.iter().zip(&self.trend).map(|(v, m)| v * self.scale + m).collect())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.trend.len() {
            return Err(Error::Shape(format!("{n} steps, trend has {}", self.trend.len())));
        }
        Ok(())
    }

    /// Largest magnitude of the mean trend, the natural stress unit of an ensemble.
    pub fn trend_max(&self) -> f64 {
        self.trend.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A conditioned sample with its adjacency bound for a particular model.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub features: Array2<T>,
    pub slots: Arc<AdjacencySlots<T>>,
    pub strain: Vec<T>,
    pub target: Array1<T>,
}

impl<T: Scalar> Prepared<T> {
    pub fn as_ref(&self) -> SampleRef<'_, T> {
        SampleRef {
            features: &self.features,
            slots: &self.slots,
            strain: &self.strain,
        }
    }
}

/// Conditions `inputs` and binds adjacency. Realizations on an identical
/// complex share one bound slot set; distinct complexes never share.
pub fn prepare<T: Scalar>(inputs: &[ModelInput], stats: &ConditioningStats, params: &ModelParams<T>) -> Result<Vec<Prepared<T>>> {
    let mut bound: Vec<(&CellComplex, Arc<AdjacencySlots<T>>)> = Vec::new();
    let mut out = Vec::with_capacity(inputs.len());
    for s in inputs {
        let slots = match bound.iter().rev().take(4).find(|(c, _)| *c == &s.complex) {
            Some((_, a)) => a.clone(),
            None => {
                let a = Arc::new(params.bind(&s.complex)?);
                bound.push((&s.complex, a.clone()));
                a
            }
        };
        let x = stats.condition_features(&s.features)?;
        if x.nrows() != slots.n_nodes() {
            return Err(Error::UnboundAdjacency {
                expected: slots.n_nodes(),
                got: x.nrows(),
            });
        }
        out.push(Prepared {
            features: x.mapv(T::lit),
            slots,
            strain: stats.condition_strain(&s.strain).into_iter().map(T::lit).collect(),
            target: stats.condition_target(&s.stress)?.into_iter().map(T::lit).collect(),
        });
    }
    Ok(out)
}

/// Mean squared error over every realization and step.
pub fn mse<T: Scalar>(preds: &[Array1<T>], targets: &[&Array1<T>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::Shape("prediction and target lengths differ".into()));
        }
        sum += p.iter().zip(t.iter()).map(|(a, b)| (*a - *b).to_f64_lossy().powi(2)).sum::<f64>();
        count += p.len();
    }
    Ok(sum / count as f64)
}

/// Loss and exact parameter gradients of one batch.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&Prepared<T>],
    mode: BnMode,
) -> Result<(f64, ModelParams<T>, BatchCache<T>)> {
    let refs: Vec<SampleRef<'_, T>> = batch.iter().map(|p| p.as_ref()).collect();
    let (outs, cache) = forward_batch(params, &refs, mode)?;
    let targets: Vec<&Array1<T>> = batch.iter().map(|p| &p.target).collect();
    let loss = mse(&outs, &targets)?;
    let count: usize = outs.iter().map(|o| o.len()).sum();
    let k = T::lit(2.0 / count as f64);
    let d: Vec<Array1<T>> = outs.iter().zip(&targets).map(|(o, t)| (o - *t) * k).collect();
    let grads = backward_batch(params, &refs, &cache, &d)?;
    Ok((loss, grads, cache))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the model".into()));
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let mut p = params.flatten();
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
        params.set_flat(&p)
    }
}

/// Optimisation and data-handling settings, readable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    pub bn_mode: BnMode,
    /// Estimate running statistics from the training split before the first epoch.
    pub calibrate_bn: bool,
    pub std_basis: StdBasis,
    /// Epoch number of the first epoch of this run (for resumed runs).
    pub start_epoch: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            max_epochs: 100,
            patience: 20,
            split: [0.7, 0.1, 0.2],
            seed: 0,
            bn_mode: BnMode::Running,
            calibrate_bn: true,
            std_basis: StdBasis::PerRealization,
            start_epoch: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidArgument(format!("split ratios {:?} must be non-negative and sum to 1", self.split)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut into rounded train/validation sizes, the
/// test split taking the remainder.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?}")));
    }
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train - n_val;
    for (name, size, r) in [("train", n_train, ratios[0]), ("validation", n_val, ratios[1]), ("test", n_test, ratios[2])] {
        if size == 0 && r > 0.0 {
            return Err(Error::Empty(format!("{name} split of {n} items")));
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_corr_mean: Option<f64>,
    pub val_corr_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("epoch,train_loss,val_loss,val_corr_mean,val_corr_min\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.val_loss,
                opt(r.val_corr_mean),
                opt(r.val_corr_min)
            ));
        }
        s
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.records.last().map(|r| r.epoch)
    }
}

/// Conditioned predictions in inference mode.
pub fn predict<T: Scalar>(params: &ModelParams<T>, data: &[Prepared<T>]) -> Result<Vec<Array1<T>>> {
    data.iter()
        .map(|p| crate::model::forward(params, p.as_ref()))
        .collect()
}

fn validation<T: Scalar>(params: &ModelParams<T>, val: &[Prepared<T>]) -> Result<(f64, Option<f64>, Option<f64>)> {
    let preds = predict(params, val)?;
    let targets: Vec<&Array1<T>> = val.iter().map(|p| &p.target).collect();
    let loss = mse(&preds, &targets)?;
    if val.len() < 2 {
        return Ok((loss, None, None));
    }
    let t = preds[0].len();
    let pm = Array2::from_shape_fn((val.len(), t), |(i, k)| preds[i][k].to_f64_lossy());
    let tm = Array2::from_shape_fn((val.len(), t), |(i, k)| val[i].target[k].to_f64_lossy());
    let c: Vec<f64> = correlation_curve(&pm, &tm)?.into_iter().flatten().collect();
    if c.is_empty() {
        return Ok((loss, None, None));
    }
    Ok((
        loss,
        Some(c.iter().sum::<f64>() / c.len() as f64),
        c.iter().copied().reduce(f64::min),
    ))
}

/// Sets every running statistic to the average batch moments of the
/// training data, computed layer by layer in chunks of `chunk` samples.
pub fn calibrate_bn<T: Scalar>(params: &mut ModelParams<T>, data: &[Prepared<T>], chunk: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("calibration data".into()));
    }
    for l in 0..params.bns.len() {
        let c = params.bns[l].channels();
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        let mut total = 0usize;
        for group in data.chunks(chunk.max(1)) {
            let refs: Vec<SampleRef<'_, T>> = group.iter().map(|p| p.as_ref()).collect();
            let (_, cache) = forward_batch(params, &refs, BnMode::Running)?;
            let bc = &cache.bn_caches()[l];
            let w = bc.count as f64;
            mean += &(bc.batch_mean.mapv(|v| v.to_f64_lossy()) * w);
            var += &(bc.batch_var.mapv(|v| v.to_f64_lossy()) * w);
            total += bc.count;
        }
        params.bns[l].running_mean = (mean / total as f64).mapv(T::lit);
        params.bns[l].running_var = (var / total as f64).mapv(T::lit);
    }
    Ok(())
}

fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&Prepared<T>],
    mode: BnMode,
    workers: usize,
) -> Result<(f64, ModelParams<T>, Vec<BatchCache<T>>)> {
    if mode == BnMode::Batch || workers <= 1 || batch.len() < 2 {
        let (l, g, c) = loss_and_grad(params, batch, mode)?;
        return Ok((l, g, vec![c]));
    }
    // Contiguous chunks, summed in chunk order: each chunk's loss and
    // gradient are means over its own samples, reweighted by its share.
    let size = batch.len().div_ceil(workers);
    let parts: Vec<Result<(f64, ModelParams<T>, BatchCache<T>)>> = std::thread::scope(|s| {
        let hs: Vec<_> = batch
            .chunks(size)
            .map(|ch| s.spawn(move || loss_and_grad(params, ch, mode)))
            .collect();
        hs.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    let mut caches = Vec::new();
    for (part, ch) in parts.into_iter().zip(batch.chunks(size)) {
        let (l, mut g, c) = part?;
        let w = ch.len() as f64 / batch.len() as f64;
        loss += l * w;
        for (_, s) in g.named_slices_mut(false) {
            s.iter_mut().for_each(|v| *v *= T::lit(w));
        }
        grad.add_assign(&g);
        caches.push(c);
    }
    Ok((loss, grad, caches))
}

/// Trains `params` in place. On success `params` holds the weights of the
/// best validation epoch; on divergence they hold the last finite weights and
/// [`Error::Diverged`] is returned.
pub fn fit<T: Scalar>(
    params: &mut ModelParams<T>,
    train: &[Prepared<T>],
    val: &[Prepared<T>],
    config: &TrainConfig,
    history: &mut History,
) -> Result<()> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation split".into()));
    }
    if config.calibrate_bn && config.bn_mode == BnMode::Running {
        calibrate_bn(params, train, 32)?;
    }
    let mut opt = Adam::new(params.trainable_len(), config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let (mut best_loss, _, _) = validation(params, val)?;
    let mut best = params.clone();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for e in 0..config.max_epochs {
        let epoch = config.start_epoch + e;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut last_finite = params.clone();
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let step = batch_gradient(params, &batch, config.bn_mode, config.workers);
            let (loss, grads, caches) = match step {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    *params = last_finite;
                    return Err(Error::Diverged { epoch });
                }
                Err(e) => return Err(e),
            };
            sum += loss * batch.len() as f64;
            opt.apply(params, &grads)?;
            for c in &caches {
                for (bn, bc) in params.bns.iter_mut().zip(c.bn_caches()) {
                    bn.update_running(bc);
                }
            }
            if params.is_finite() {
                last_finite.clone_from(params);
            } else {
                *params = last_finite;
                return Err(Error::Diverged { epoch });
            }
        }
        let (val_loss, cmean, cmin) = match validation(params, val) {
            Ok(v) if v.0.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => {
                *params = last_finite;
                return Err(Error::Diverged { epoch });
            }
            Err(e) => return Err(e),
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            val_corr_mean: cmean,
            val_corr_min: cmin,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best.clone_from(params);
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    *params = best;
    Ok(())
}

/// Metrics of a trained model on raw inputs, in stress units. RMSE is
/// normalised by the largest mean-trend stress of the evaluated set.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, inputs: &[ModelInput], stats: &ConditioningStats) -> Result<(EvalReport, Array2<f64>, Array2<f64>)> {
    let data = prepare(inputs, stats, params)?;
    let preds = predict(params, &data)?;
    let t = stats.trend.len();
    let mut pm = Array2::zeros((inputs.len(), t));
    let mut tm = Array2::zeros((inputs.len(), t));
    for (i, (p, s)) in preds.iter().zip(inputs).enumerate() {
        let raw: Vec<f64> = p.iter().map(|v| v.to_f64_lossy()).collect();
        let un = stats.uncondition_target(&raw)?;
        for k in 0..t {
            pm[[i, k]] = un[k];
            tm[[i, k]] = s.stress[k];
        }
    }
    let normalizer = (0..t)
        .map(|k| tm.column(k).mean().unwrap_or(0.0).abs())
        .fold(0.0f64, f64::max);
    let report = EvalReport::compute(&pm, &tm, &inputs[0].strain, normalizer)?;
    Ok((report, pm, tm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgraph::CellComplex;
    use crate::model::{ArchSpec, Variant};

    fn input(stress: Vec<f64>) -> ModelInput {
        let c = CellComplex::grid(&[2, 2]).unwrap();
        ModelInput {
            complex: c,
            features: Array2::from_elem((4, 1), 2.0),
            labels: vec!["phi".into()],
            strain: (1..=stress.len()).map(|i| i as f64 * 0.1).collect(),
            stress,
        }
    }

    #[test]
    fn split_sizes_round() {
        let s = split(10, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert!(split(2, [0.8, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn identical_trajectories_have_zero_variance() {
        let d = vec![input(vec![1.0, 2.0, 3.0]), input(vec![1.0, 2.0, 3.0])];
        assert!(matches!(ConditioningStats::fit(&d, StdBasis::PerRealization), Err(Error::ZeroVariance)));
    }

    #[test]
    fn symmetric_trajectories_condition_to_opposite_curves() {
        let d = vec![input(vec![1.0, 3.0, 4.0]), input(vec![3.0, 5.0, 10.0])];
        let st = ConditioningStats::fit(&d, StdBasis::PerRealization).unwrap();
        let a = st.condition_target(&d[0].stress).unwrap();
        let b = st.condition_target(&d[1].stress).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y).abs() < 1e-15);
        }
        assert_eq!(st.condition_features(&d[0].features).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d: Vec<ModelInput> = (0..6).map(|i| input(vec![1.0, 2.0 + i as f64, 3.0 * i as f64])).collect();
        let st = ConditioningStats::fit(&d, StdBasis::Pooled).unwrap();
        let spec = ArchSpec::new(2, 1, 1, Variant::Dgcnn).unwrap();
        let mut p = ModelParams::<f64>::build(&spec, &d[0].complex, 1, 3).unwrap();
        let data = prepare(&d, &st, &p).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            calibrate_bn: false,
            ..TrainConfig::default()
        };
        let before = p.flatten();
        let mut h = History::default();
        fit(&mut p, &data[..4], &data[4..], &cfg, &mut h).unwrap();
        assert_eq!(p.flatten(), before);
    }
}
