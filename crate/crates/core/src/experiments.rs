//! Grids of independent train/evaluate cells and their aggregation.
//!
//! Each experiment expands to a list of [`Cell`]s. Cells share datasets
//! through `Arc`, run on a small worker pool, and fail independently.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate, Dataset, DatasetSpec, Sample};
use crate::error::{Error, Result};
use crate::filters::FilterPattern;
use crate::metrics::EvalReport;
use crate::microgen::{boost_volume_fraction, GrainFeatureSet};
use crate::model::{param_count, Accounting, ArchSpec, ModelParams, Variant};
use crate::training::{evaluate, fit, prepare, split, ConditioningStats, History, ModelInput, Split, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    UnstructuredDemo,
    ArchSweep,
    FilterCompare,
    RgcnnFeatures,
    DataEfficiency,
    Boost,
    Generalizability,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            Self::UnstructuredDemo => "unstructured-demo",
            Self::ArchSweep => "arch-sweep",
            Self::FilterCompare => "filter-compare",
            Self::RgcnnFeatures => "rgcnn-features",
            Self::DataEfficiency => "data-efficiency",
            Self::Boost => "boost",
            Self::Generalizability => "generalizability",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Parse(format!("unknown experiment '{s}'")))
    }
}

/// A dataset on disk or a generation recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path { path: PathBuf },
    Generate { generate: DatasetSpec },
}

impl DatasetRef {
    pub fn resolve(&self, base: &Path, workers: usize) -> Result<Dataset> {
        match self {
            DatasetRef::Path { path } => {
                let p = if path.is_absolute() { path.clone() } else { base.join(path) };
                if !p.join("manifest.json").exists() {
                    return Err(Error::InvalidArgument(format!("dataset '{}' does not exist", p.display())));
                }
                Dataset::load(&p)
            }
            DatasetRef::Generate { generate: spec } => generate(spec, workers),
        }
    }
}

/// A declarative experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub seeds: Vec<u64>,
    pub dataset: DatasetRef,
    /// Second ensemble of the generalizability study (the high-variance one).
    #[serde(default)]
    pub contrast: Option<DatasetRef>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Architectures such as `dgcnn:8/2/1:O`; the first is used where one is needed.
    #[serde(default)]
    pub archs: Vec<String>,
    /// Filter patterns of the comparison; defaults to the full comparison set.
    #[serde(default)]
    pub patterns: Vec<String>,
    /// Training-set fractions of the data-efficiency sweep.
    #[serde(default)]
    pub fractions: Vec<f64>,
    /// Per-grain feature set sizes (1 to 4) of the reduced-graph study.
    #[serde(default)]
    pub feature_sets: Vec<usize>,
    /// Seed of the train/validation/test split, shared by all cells.
    #[serde(default)]
    pub split_seed: u64,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.id == ExperimentId::Generalizability && self.contrast.is_none() {
            return Err(Error::InvalidArgument("generalizability needs a contrast dataset".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidArgument("fractions must lie in (0, 1]".into()));
        }
        self.train.validate()?;
        for a in &self.archs {
            a.parse::<ArchSpec>()?;
        }
        for p in &self.patterns {
            p.parse::<FilterPattern>()?;
        }
        Ok(())
    }

    fn first_arch(&self, default: &str) -> Result<ArchSpec> {
        self.archs.first().map(String::as_str).unwrap_or(default).parse()
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(serde_json::to_string(self).expect("spec serializes").as_bytes());
        hex::encode(&d[..8])
    }
}

/// A single training run: architecture, data and optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: String,
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub split_seed: u64,
    /// Per-grain feature set size for reduced-graph models.
    #[serde(default = "default_grain_features")]
    pub grain_features: usize,
    pub dataset: DatasetRef,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_grain_features() -> usize {
    2
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.arch()?;
        GrainFeatureSet::first(c.grain_features)?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        self.arch.parse()
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        hex::encode(&d[..8])
    }
}

/// Network inputs of `samples` for the given variant: the cell complex, or
/// the grain graph for reduced-graph models.
pub fn model_inputs(arch: &ArchSpec, samples: &[Sample], grain_features: usize) -> Result<Vec<ModelInput>> {
    if arch.variant == Variant::Rgcnn {
        let set = GrainFeatureSet::first(grain_features)?;
        samples.iter().map(|s| ModelInput::grain_graph(s, set)).collect()
    } else {
        Ok(samples.iter().map(ModelInput::from_sample).collect())
    }
}

/// One independent train/evaluate unit.
#[derive(Clone, Debug)]
pub struct Cell {
    /// Aggregation key; cells differing only in seed share a group.
    pub group: String,
    /// Numeric axis of the group (training-set size, feature count, ...).
    pub x: f64,
    pub seed: u64,
    pub arch: ArchSpec,
    pub data: Arc<Vec<ModelInput>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_data: Arc<Vec<ModelInput>>,
    pub test: Vec<usize>,
    /// Multiplies the epoch budget and patience, keeping the number of
    /// optimizer steps fixed when the training set shrinks.
    pub epoch_scale: f64,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub group: String,
    pub x: f64,
    pub seed: u64,
    pub arch: String,
    pub param_count: usize,
    pub train_size: usize,
    pub history: History,
    pub report: EvalReport,
    pub preds: Array2<f64>,
    pub truths: Array2<f64>,
}

fn pick(data: &[ModelInput], idx: &[usize]) -> Vec<ModelInput> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

pub fn run_cell(cell: &Cell, config: &TrainConfig) -> Result<CellOutcome> {
    let train = pick(&cell.data, &cell.train);
    let val = pick(&cell.data, &cell.val);
    let test = pick(&cell.test_data, &cell.test);
    let first = train.first().ok_or_else(|| Error::Empty("training split".into()))?;
    let stats = ConditioningStats::fit(&train, config.std_basis)?;
    let mut params = ModelParams::<f64>::build(&cell.arch, &first.complex, first.features.ncols(), cell.seed)?;
    let ptrain = prepare(&train, &stats, &params)?;
    let pval = prepare(&val, &stats, &params)?;
    let scaled = |n: usize| ((n as f64 * cell.epoch_scale).round() as usize).max(1);
    let cfg = TrainConfig {
        seed: cell.seed,
        workers: 1,
        max_epochs: scaled(config.max_epochs),
        patience: scaled(config.patience),
        ..config.clone()
    };
    let mut history = History::default();
    fit(&mut params, &ptrain, &pval, &cfg, &mut history)?;
    let (report, preds, truths) = evaluate(&params, &test, &stats)?;
    Ok(CellOutcome {
        group: cell.group.clone(),
        x: cell.x,
        seed: cell.seed,
        arch: cell.arch.to_string(),
        param_count: param_count(&params, &Accounting::default()).total,
        train_size: train.len(),
        history,
        report,
        preds,
        truths,
    })
}

/// Runs every cell on `workers` threads; results keep the cell order and a
/// failing or panicking cell does not affect the others.
pub fn run_grid(cells: &[Cell], config: &TrainConfig, workers: usize) -> Vec<Result<CellOutcome>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellOutcome>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = catch_unwind(AssertUnwindSafe(|| run_cell(&cells[i], config)))
                    .unwrap_or_else(|_| Err(Error::InvalidArgument("cell panicked".into())));
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

/// Seed-averaged results of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub x: f64,
    pub arch: String,
    pub param_count: usize,
    pub train_size: usize,
    pub seeds: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_correlation: Option<f64>,
    pub min_correlation: Option<f64>,
    pub rmse_curve: Vec<f64>,
    pub correlation_curve: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub group: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub strain: Vec<f64>,
    pub groups: Vec<GroupSummary>,
    pub failures: Vec<Failure>,
    pub outcomes: Vec<CellOutcome>,
}

fn mean_opt(vals: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = vals.iter().flatten().copied().collect();
    (v.len() == vals.len() && !v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(id: ExperimentId, cells: &[Cell], results: Vec<Result<CellOutcome>>) -> ExperimentReport {
    let mut failures = Vec::new();
    let mut outcomes = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(Failure {
                group: c.group.clone(),
                seed: c.seed,
                message: e.to_string(),
            }),
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_group: BTreeMap<String, Vec<&CellOutcome>> = BTreeMap::new();
    for o in &outcomes {
        if !by_group.contains_key(&o.group) {
            order.push(o.group.clone());
        }
        by_group.entry(o.group.clone()).or_default().push(o);
    }
    let groups = order
        .iter()
        .map(|g| {
            let os = &by_group[g];
            let n = os.len() as f64;
            let t = os[0].report.rmse.len();
            let rm: Vec<f64> = os.iter().map(|o| o.report.mean_rmse()).collect();
            let mean_rmse = rm.iter().sum::<f64>() / n;
            let std_rmse = (rm.iter().map(|r| (r - mean_rmse).powi(2)).sum::<f64>() / n).sqrt();
            let rmse_curve = (0..t).map(|k| os.iter().map(|o| o.report.rmse[k]).sum::<f64>() / n).collect();
            let correlation_curve: Vec<Option<f64>> = (0..t)
                .map(|k| mean_opt(&os.iter().map(|o| o.report.correlation[k]).collect::<Vec<_>>()))
                .collect();
            let cs: Vec<f64> = correlation_curve.iter().flatten().copied().collect();
            GroupSummary {
                group: g.clone(),
                x: os[0].x,
                arch: os[0].arch.clone(),
                param_count: os[0].param_count,
                train_size: os[0].train_size,
                seeds: os.len(),
                mean_rmse,
                std_rmse,
                mean_correlation: (!cs.is_empty()).then(|| cs.iter().sum::<f64>() / cs.len() as f64),
                min_correlation: cs.iter().copied().reduce(f64::min),
                rmse_curve,
                correlation_curve,
            }
        })
        .collect();
    ExperimentReport {
        id,
        strain: outcomes.first().map(|o| o.report.strain.clone()).unwrap_or_default(),
        groups,
        failures,
        outcomes,
    }
}

/// Prefixes a CSV body with a provenance comment line.
pub fn with_provenance(csv: &str, config_hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("# config_hash={config_hash} seeds={}\n{csv}", seeds.join(";"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl ExperimentReport {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("group,x,arch,param_count,train_size,seeds,mean_rmse,std_rmse,mean_correlation,min_correlation\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                g.group,
                g.x,
                g.arch,
                g.param_count,
                g.train_size,
                g.seeds,
                g.mean_rmse,
                g.std_rmse,
                opt(g.mean_correlation),
                opt(g.min_correlation)
            ));
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("group,step,strain,rmse,correlation\n");
        for g in &self.groups {
            for (k, (r, c)) in g.rmse_curve.iter().zip(&g.correlation_curve).enumerate() {
                let e = self.strain.get(k).copied().unwrap_or(f64::NAN);
                s.push_str(&format!("{},{k},{e},{r},{}\n", g.group, opt(*c)));
            }
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("group,seed,message\n");
        for f in &self.failures {
            s.push_str(&format!("{},{},\"{}\"\n", f.group, f.seed, f.message.replace('"', "'")));
        }
        s
    }

    /// Predicted and true trajectories of every test realization of the first seed of each group.
    pub fn overlays_csv(&self) -> String {
        let mut s = String::from("group,sample,step,strain,true_MPa,pred_MPa\n");
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.outcomes {
            if !seen.insert(o.group.clone()) {
                continue;
            }
            for i in 0..o.truths.nrows() {
                for k in 0..o.truths.ncols() {
                    s.push_str(&format!(
                        "{},{i},{k},{},{},{}\n",
                        o.group, o.report.strain[k], o.truths[[i, k]], o.preds[[i, k]]
                    ));
                }
            }
        }
        s
    }

    pub fn write(&self, dir: &Path, config_hash: &str, seeds: &[u64]) -> Result<()> {
        fs::create_dir_all(dir)?;
        let w = |name: &str, body: String| fs::write(dir.join(name), with_provenance(&body, config_hash, seeds));
        w("summary.csv", self.summary_csv())?;
        w("curves.csv", self.curves_csv())?;
        w("failures.csv", self.failures_csv())?;
        w("overlays.csv", self.overlays_csv())?;
        let json = serde_json::json!({
            "experiment": self.id.name(),
            "config_hash": config_hash,
            "seeds": seeds,
            "groups": self.groups,
            "failures": self.failures,
        });
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }
}

fn cell_inputs(samples: &[Sample]) -> Arc<Vec<ModelInput>> {
    Arc::new(samples.iter().map(ModelInput::from_sample).collect())
}

fn grain_inputs(samples: &[Sample], set: GrainFeatureSet) -> Result<Arc<Vec<ModelInput>>> {
    Ok(Arc::new(samples.iter().map(|s| ModelInput::grain_graph(s, set)).collect::<Result<_>>()?))
}

fn boosted(samples: &[Sample]) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            Ok(Sample {
                micro: boost_volume_fraction(&s.micro)?,
                ..s.clone()
            })
        })
        .collect()
}

fn same_split_cells(group: &str, x: f64, arch: &ArchSpec, data: Arc<Vec<ModelInput>>, sp: &Split, seeds: &[u64]) -> Vec<Cell> {
    seeds
        .iter()
        .map(|&seed| Cell {
            group: group.to_string(),
            x,
            seed,
            arch: arch.clone(),
            data: data.clone(),
            train: sp.train.clone(),
            val: sp.val.clone(),
            test_data: data.clone(),
            test: sp.test.clone(),
            epoch_scale: 1.0,
        })
        .collect()
}

/// Expands an experiment into its cells. `contrast` is required for the
/// generalizability study only.
pub fn build_cells(spec: &ExperimentSpec, primary: &Dataset, contrast: Option<&Dataset>) -> Result<Vec<Cell>> {
    spec.validate()?;
    let samples = &primary.samples;
    let sp = split(samples.len(), spec.train.split, spec.split_seed)?;
    let mut cells = Vec::new();
    match spec.id {
        ExperimentId::UnstructuredDemo => {
            let arch = spec.first_arch("dgcnn:8/2/1:O")?;
            cells.extend(same_split_cells(&arch.to_string(), 0.0, &arch, cell_inputs(samples), &sp, &spec.seeds));
        }
        ExperimentId::ArchSweep => {
            let cells_in = cell_inputs(samples);
            let mut grains = None;
            for a in &spec.archs {
                let arch: ArchSpec = a.parse()?;
                let data = if arch.variant == Variant::Rgcnn {
                    let set = GrainFeatureSet::first(*spec.feature_sets.first().unwrap_or(&2))?;
                    if grains.is_none() {
                        grains = Some(grain_inputs(samples, set)?);
                    }
                    grains.clone().expect("grain inputs built")
                } else {
                    cells_in.clone()
                };
                cells.extend(same_split_cells(&arch.to_string(), arch.n_filters as f64, &arch, data, &sp, &spec.seeds));
            }
        }
        ExperimentId::FilterCompare => {
            let base = spec.first_arch("dgcnn:8/2/1")?;
            let patterns: Vec<FilterPattern> = if spec.patterns.is_empty() {
                FilterPattern::comparison_set()
            } else {
                spec.patterns.iter().map(|p| p.parse()).collect::<Result<_>>()?
            };
            let data = cell_inputs(samples);
            for p in patterns {
                let variant = if p == FilterPattern::pixel() { Variant::Cnn } else { Variant::Dgcnn };
                let arch = ArchSpec::new(base.n_filters, base.n_conv, base.n_dense, variant)?.with_pattern(p);
                cells.extend(same_split_cells(&p.to_string(), 0.0, &arch, data.clone(), &sp, &spec.seeds));
            }
        }
        ExperimentId::RgcnnFeatures => {
            let arch = spec.first_arch("rgcnn:8/2/1")?;
            let sets = if spec.feature_sets.is_empty() { vec![1, 2, 3, 4] } else { spec.feature_sets.clone() };
            for k in sets {
                let data = grain_inputs(samples, GrainFeatureSet::first(k)?)?;
                cells.extend(same_split_cells(&format!("features{k}"), k as f64, &arch, data, &sp, &spec.seeds));
            }
        }
        ExperimentId::DataEfficiency => {
            let arch = spec.first_arch("dgcnn:4/1/1")?;
            let fractions = if spec.fractions.is_empty() {
                vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
            } else {
                spec.fractions.clone()
            };
            let data = cell_inputs(samples);
            for f in fractions {
                let n = ((sp.train.len() as f64 * f).round() as usize).max(2);
                let n = n.min(sp.train.len());
                let sub = Split {
                    train: sp.train[..n].to_vec(),
                    ..sp.clone()
                };
                let scale = sp.train.len() as f64 / n as f64;
                cells.extend(
                    same_split_cells(&format!("n{n}"), n as f64, &arch, data.clone(), &sub, &spec.seeds)
                        .into_iter()
                        .map(|c| Cell { epoch_scale: scale, ..c }),
                );
            }
        }
        ExperimentId::Boost => {
            let arch = spec.first_arch("dgcnn:8/2/1:#")?;
            cells.extend(same_split_cells("baseline", 0.0, &arch, cell_inputs(samples), &sp, &spec.seeds));
            let boosted_arch = ArchSpec {
                boost_channels: vec!["volume_fraction".into()],
                ..arch.clone()
            };
            cells.extend(same_split_cells("boost", 1.0, &boosted_arch, cell_inputs(&boosted(samples)?), &sp, &spec.seeds));
        }
        ExperimentId::Generalizability => {
            let arch = spec.first_arch("dgcnn:8/2/1:#")?;
            let other = contrast.ok_or_else(|| Error::InvalidArgument("missing contrast dataset".into()))?;
            let sp2 = split(other.samples.len(), spec.train.split, spec.split_seed)?;
            let low = cell_inputs(samples);
            let high = cell_inputs(&other.samples);
            let combos = [
                ("low->low", &low, &sp, &low, &sp),
                ("low->high", &low, &sp, &high, &sp2),
                ("high->high", &high, &sp2, &high, &sp2),
                ("high->low", &high, &sp2, &low, &sp),
            ];
            for (name, tr, trs, te, tes) in combos {
                for &seed in &spec.seeds {
                    cells.push(Cell {
                        group: name.into(),
                        x: 0.0,
                        seed,
                        arch: arch.clone(),
                        data: tr.clone(),
                        train: trs.train.clone(),
                        val: trs.val.clone(),
                        test_data: te.clone(),
                        test: tes.test.clone(),
                        epoch_scale: 1.0,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Resolves datasets, runs the grid and aggregates.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path, workers: usize) -> Result<ExperimentReport> {
    let primary = spec.dataset.resolve(base, workers)?;
    let contrast = spec.contrast.as_ref().map(|c| c.resolve(base, workers)).transpose()?;
    let cells = build_cells(spec, &primary, contrast.as_ref())?;
    let results = run_grid(&cells, &spec.train, workers);
    Ok(aggregate(spec.id, &cells, results))
}

/// Training-set size at which the largest error drop between consecutive
/// sizes is realized, from `(size, error)` pairs sorted by size.
pub fn largest_drop(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    points
        .windows(2)
        .map(|w| (w[1].0, w[0].1 - w[1].1))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_ids_parse() {
        for id in ["unstructured-demo", "arch-sweep", "filter-compare", "rgcnn-features", "data-efficiency", "boost", "generalizability"] {
            assert_eq!(id.parse::<ExperimentId>().unwrap().name(), id);
        }
        assert!("nope".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn largest_drop_location() {
        let p = [(10.0, 1.0), (20.0, 0.9), (40.0, 0.3), (80.0, 0.25)];
        assert_eq!(largest_drop(&p).unwrap().0, 40.0);
    }

    #[test]
    fn spec_requires_seeds() {
        let t = r#"
id = "boost"
seeds = []
[dataset]
path = "data"
"#;
        assert!(ExperimentSpec::from_toml(t).is_err());
    }
}
