//! Labelled realizations, the generation pipeline and the on-disk layout.
//!
//! A dataset directory holds `manifest.json` and one sub-directory per
//! realization with `mesh.json`, `channels.bin` (little-endian f64,
//! row-major nodes x channels), `channels.json` and `trajectory.csv`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filters::NodeFeatures;
use crate::meshgraph::CellComplex;
use crate::microgen::{
    boost_volume_fraction, generate_polycrystal, generate_porous, GrainCount, Microstructure,
    OrientationMode, PolycrystalSpec, PorousInfo, PorousSpec,
};
use crate::oracle::{label, ConstitutiveModel, CpParams, J2Params, Knockdown, LoadingProgram};
use crate::recurrent::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub micro: Microstructure,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Polycrystal(PolycrystalSpec),
    Porous(PorousSpec),
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub samples: usize,
    pub seed: u64,
    pub generator: GeneratorSpec,
    pub program: LoadingProgram,
    pub model: ConstitutiveModel,
    #[serde(default)]
    pub knockdown: Knockdown,
    /// Append the grain volume-fraction channel.
    #[serde(default)]
    pub boost: bool,
}

impl DatasetSpec {
    /// 2D polycrystals on a `side x side` grid with in-plane orientations.
    pub fn polycrystal_2d(samples: usize, side: usize, grains: GrainCount, seed: u64) -> Self {
        Self {
            samples,
            seed,
            generator: GeneratorSpec::Polycrystal(PolycrystalSpec {
                dims: vec![side, side],
                grains,
                lloyd_steps: 1,
                orientation: OrientationMode::InPlaneAngle,
            }),
            program: LoadingProgram::cp_2d(),
            model: ConstitutiveModel::Cp(CpParams::default()),
            knockdown: Knockdown::default(),
            boost: false,
        }
    }

    pub fn polycrystal_3d(samples: usize, side: usize, grains: GrainCount, seed: u64) -> Self {
        Self {
            samples,
            seed,
            generator: GeneratorSpec::Polycrystal(PolycrystalSpec {
                dims: vec![side, side, side],
                grains,
                lloyd_steps: 1,
                orientation: OrientationMode::AxisAngle,
            }),
            program: LoadingProgram::cp_3d(),
            model: ConstitutiveModel::Cp(CpParams::default()),
            knockdown: Knockdown::default(),
            boost: false,
        }
    }

    /// 2D polycrystals labelled with the linear reference task on the orientation channel.
    pub fn solvable_2d(samples: usize, side: usize, grains: GrainCount, seed: u64) -> Self {
        let mut s = Self::polycrystal_2d(samples, side, grains, seed);
        s.model = ConstitutiveModel::Linear {
            modulus: 1.0e5,
            channel: 0,
        };
        s
    }

    pub fn porous(samples: usize, side: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            generator: GeneratorSpec::Porous(PorousSpec::standard(vec![side, side, side])),
            program: LoadingProgram::porous(),
            model: ConstitutiveModel::J2(J2Params::default()),
            knockdown: Knockdown::default(),
            boost: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.program.validate()?;
        Ok(s)
    }

    /// Stable short hash of the serialized spec.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Seed of realization `index`: a dedicated ChaCha stream of the base seed.
pub fn realization_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    let mut rng = realization_rng(spec.seed, index);
    let mut micro = match &spec.generator {
        GeneratorSpec::Polycrystal(p) => generate_polycrystal(p, &mut rng)?,
        GeneratorSpec::Porous(p) => generate_porous(p, &mut rng)?,
    };
    let trajectory = label(&micro, &spec.program, &spec.model, &spec.knockdown)?;
    if spec.boost {
        micro = boost_volume_fraction(&micro)?;
    }
    Ok(Sample {
        name: format!("r{index:05}"),
        micro,
        trajectory,
    })
}

/// Generates and labels every realization. Work is split into contiguous
/// chunks over `workers` threads; the result does not depend on `workers`.
pub fn generate(spec: &DatasetSpec, workers: usize) -> Result<Dataset> {
    spec.program.validate()?;
    if spec.samples == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let workers = workers.clamp(1, spec.samples);
    let chunk = spec.samples.div_ceil(workers);
    let results: Vec<Result<Vec<Sample>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w * chunk..((w + 1) * chunk).min(spec.samples))
                        .map(|i| generate_sample(spec, i))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator thread panicked")).collect()
    });
    let mut samples = Vec::with_capacity(spec.samples);
    for r in results {
        samples.extend(r?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

/// Per-step mean, standard deviation, minimum and maximum of the stress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub strain: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl EnsembleStats {
    pub fn compute(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Empty("ensemble".into()))?;
        let t = first.trajectory.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; t];
        let mut min = vec![f64::INFINITY; t];
        let mut max = vec![f64::NEG_INFINITY; t];
        for s in samples {
            if s.trajectory.len() != t {
                return Err(Error::Shape("trajectories differ in length".into()));
            }
            for (k, &v) in s.trajectory.stress.iter().enumerate() {
                mean[k] += v / n;
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        let mut std = vec![0.0; t];
        for s in samples {
            for (k, &v) in s.trajectory.stress.iter().enumerate() {
                std[k] += (v - mean[k]).powi(2) / n;
            }
        }
        std.iter_mut().for_each(|v| *v = v.sqrt());
        Ok(Self {
            strain: first.trajectory.strain.clone(),
            mean,
            std,
            min,
            max,
        })
    }

    /// Largest `(max - min) / mean` over the program.
    pub fn relative_spread(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .filter(|(m, _)| m.abs() > 0.0)
            .map(|(m, (lo, hi))| (hi - lo) / m.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,strain,mean,std,min,max\n");
        for k in 0..self.mean.len() {
            s.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                self.strain[k], self.mean[k], self.std[k], self.min[k], self.max[k]
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ChannelManifest {
    labels: Vec<String>,
    n_nodes: usize,
    n_channels: usize,
    #[serde(default)]
    orientation: Option<OrientationMode>,
    #[serde(default)]
    grain_labels: Option<Vec<usize>>,
    #[serde(default)]
    porous: Option<PorousInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: DatasetSpec,
    pub spec_hash: String,
    pub realizations: Vec<String>,
    pub channels: Vec<String>,
}

pub fn trajectory_csv(t: &Trajectory, rate: f64) -> String {
    let mut s = String::from("step,time,strain,stress_MPa\n");
    for (k, (e, v)) in t.strain.iter().zip(&t.stress).enumerate() {
        s.push_str(&format!("{k},{},{e},{v}\n", e / rate));
    }
    s
}

fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut strain = Vec::new();
    let mut stress = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!("trajectory row '{line}'")));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
        strain.push(num(cols[2])?);
        stress.push(num(cols[3])?);
    }
    Trajectory::new(strain, stress)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.samples {
            let d = dir.join(&s.name);
            fs::create_dir_all(&d)?;
            s.micro.complex.save(&d.join("mesh.json"))?;
            let mut blob = Vec::with_capacity(s.micro.features.values.len() * 8);
            for v in s.micro.features.values.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(d.join("channels.bin"), blob)?;
            let cm = ChannelManifest {
                labels: s.micro.features.labels.clone(),
                n_nodes: s.micro.features.n_nodes(),
                n_channels: s.micro.features.n_channels(),
                orientation: s.micro.orientation,
                grain_labels: s.micro.grain_labels.clone(),
                porous: s.micro.porous.clone(),
            };
            fs::write(d.join("channels.json"), serde_json::to_string(&cm)?)?;
            fs::write(d.join("trajectory.csv"), trajectory_csv(&s.trajectory, self.spec.program.rate))?;
        }
        let manifest = DatasetManifest {
            version: 1,
            spec: self.spec.clone(),
            spec_hash: self.spec.hash(),
            realizations: self.samples.iter().map(|s| s.name.clone()).collect(),
            channels: self.samples.first().map(|s| s.micro.features.labels.clone()).unwrap_or_default(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut samples = Vec::with_capacity(manifest.realizations.len());
        for name in &manifest.realizations {
            let d = dir.join(name);
            let complex = CellComplex::load(&d.join("mesh.json"))?;
            let cm: ChannelManifest = serde_json::from_str(&fs::read_to_string(d.join("channels.json"))?)?;
            let blob = fs::read(d.join("channels.bin"))?;
            if blob.len() != cm.n_nodes * cm.n_channels * 8 || cm.n_nodes != complex.len() {
                return Err(Error::Parse(format!("channel blob of '{name}' has the wrong size")));
            }
            let vals: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let values = Array2::from_shape_vec((cm.n_nodes, cm.n_channels), vals).map_err(|e| Error::Shape(e.to_string()))?;
            let trajectory = parse_trajectory_csv(&fs::read_to_string(d.join("trajectory.csv"))?)?;
            samples.push(Sample {
                name: name.clone(),
                micro: Microstructure {
                    complex,
                    features: NodeFeatures::new(values, cm.labels)?,
                    grain_labels: cm.grain_labels,
                    grain_rotations: None,
                    orientation: cm.orientation,
                    porous: cm.porous,
                },
                trajectory,
            });
        }
        Ok(Self {
            spec: manifest.spec,
            samples,
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.samples[i].clone()).collect()
    }
}
