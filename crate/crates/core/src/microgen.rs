//! Synthetic microstructures: Voronoi polycrystals with orientation fields,
//! porous meshes made by removing cells from a jittered grid, grain graphs
//! and boosted feature channels.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::NodeFeatures;
use crate::meshgraph::{grid_coords, Cell, CellComplex, ComplexKind};

pub type Rotation = [[f64; 3]; 3];

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Rotation, b: &Rotation) -> Rotation {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn transpose(a: &Rotation) -> Rotation {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn determinant(a: &Rotation) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Uniform random rotation from a uniformly sampled unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    ];
    quaternion_to_matrix(q)
}

/// `q = (w, x, y, z)`, assumed unit.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Rotation {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotation_z(theta: f64) -> Rotation {
    let (s, c) = theta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rodrigues reconstruction of `R` from `phi = theta p`.
pub fn rotation_from_vector(phi: [f64; 3]) -> Rotation {
    let theta = (phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]).sqrt();
    if theta == 0.0 {
        return IDENTITY;
    }
    let p = [phi[0] / theta, phi[1] / theta, phi[2] / theta];
    let (s, c) = theta.sin_cos();
    let k = [[0.0, -p[2], p[1]], [p[2], 0.0, -p[0]], [-p[1], p[0], 0.0]];
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * k[i][j] + (1.0 - c) * (p[i] * p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    r
}

fn canonical_sign(p: &mut [f64; 3]) {
    if let Some(&first) = p.iter().find(|v| v.abs() > 1e-12) {
        if first < 0.0 {
            p.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Axis-angle vector `phi = theta p` with `R p = p`, `theta` in `[0, pi]`.
/// At `theta = pi` the axis sign makes the first nonzero component positive.
pub fn orientation_vector(r: &Rotation) -> Result<[f64; 3]> {
    let rrt = mat_mul(r, &transpose(r));
    let off: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (rrt[i][j] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if off > 1e-8 || (determinant(r) - 1.0).abs() > 1e-8 {
        return Err(Error::NonOrthogonal);
    }
    let w = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let sin2 = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let cos = (r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0;
    let theta = sin2.atan2(2.0 * cos).clamp(0.0, PI);
    if theta == 0.0 {
        return Ok([0.0; 3]);
    }
    let mut p = if cos >= 0.0 {
        [w[0] / sin2, w[1] / sin2, w[2] / sin2]
    } else {
        // symmetric part: (R + R^T)/2 - cos I = (1 - cos) p p^T
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = 0.5 * (r[i][j] + r[j][i]) - if i == j { cos } else { 0.0 };
            }
        }
        let k = (0..3).max_by(|&a, &c| b[a][a].total_cmp(&b[c][c])).unwrap_or(0);
        let col = [b[0][k], b[1][k], b[2][k]];
        let n = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
        let mut p = [col[0] / n, col[1] / n, col[2] / n];
        let dot = p[0] * w[0] + p[1] * w[1] + p[2] * w[2];
        if dot < 0.0 {
            p.iter_mut().for_each(|v| *v = -*v);
        }
        if sin2 < 1e-12 {
            canonical_sign(&mut p);
        }
        p
    };
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    p.iter_mut().for_each(|v| *v *= theta / n);
    Ok(p)
}

/// In-plane angle reduced to `[0, pi/4]` under the square symmetry of a
/// cubic crystal viewed along z.
pub fn reduce_in_plane_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(FRAC_PI_2);
    if t > FRAC_PI_4 {
        FRAC_PI_2 - t
    } else {
        t
    }
}

/// Orientation encoding of the node channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    /// One channel: rotation about z reduced to `[0, pi/4]`.
    InPlaneAngle,
    /// Three channels: the full axis-angle vector of a uniform rotation.
    AxisAngle,
}

impl OrientationMode {
    pub fn channels(self) -> usize {
        match self {
            OrientationMode::InPlaneAngle => 1,
            OrientationMode::AxisAngle => 3,
        }
    }
}

/// Per-realization grain count drawn uniformly from `mean +/- spread`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrainCount {
    pub mean: usize,
    pub spread: usize,
}

impl GrainCount {
    pub fn fixed(n: usize) -> Self {
        Self { mean: n, spread: 0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let lo = self.mean.saturating_sub(self.spread).max(1);
        let hi = (self.mean + self.spread).max(lo);
        rng.gen_range(lo..=hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolycrystalSpec {
    pub dims: Vec<usize>,
    pub grains: GrainCount,
    #[serde(default)]
    pub lloyd_steps: usize,
    pub orientation: OrientationMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorousInfo {
    pub porosity: f64,
    pub box_volume: f64,
    pub n_pores: usize,
    /// Removed face neighbours of each remaining cell.
    pub void_faces: Vec<usize>,
    /// Face neighbours of each remaining cell inside the box before removal.
    pub box_faces: Vec<usize>,
}

/// A realization: cell complex, per-cell channels and optional grain data.
#[derive(Clone, Debug, PartialEq)]
pub struct Microstructure {
    pub complex: CellComplex,
    pub features: NodeFeatures<f64>,
    pub grain_labels: Option<Vec<usize>>,
    pub grain_rotations: Option<Vec<Rotation>>,
    pub orientation: Option<OrientationMode>,
    pub porous: Option<PorousInfo>,
}

impl Microstructure {
    pub fn n_grains(&self) -> Option<usize> {
        self.grain_rotations.as_ref().map(|r| r.len())
    }

    /// Orientation channels of one cell (empty without orientation data).
    pub fn orientation_of(&self, cell: usize) -> &[f64] {
        let k = self.orientation.map_or(0, |m| m.channels());
        &self.features.values.as_slice().expect("standard layout")
            [cell * self.features.n_channels()..cell * self.features.n_channels() + k]
    }
}

fn nearest_site(x: &[f64], sites: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (s, p) in sites.iter().enumerate() {
        let d: f64 = x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < bd {
            bd = d;
            best = s;
        }
    }
    best
}

/// Voronoi tessellation of the grid cell centres around seeded sites, with
/// optional Lloyd relaxation. Labels are compacted to `0..k` in order of
/// first appearance.
pub fn voronoi_labels<R: Rng + ?Sized>(dims: &[usize], n_grains: usize, lloyd_steps: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n: usize = dims.iter().product();
    if n_grains == 0 || n_grains > n {
        return Err(Error::InvalidArgument(format!("{n_grains} grains for {n} cells")));
    }
    let centres: Vec<Vec<f64>> = (0..n)
        .map(|i| grid_coords(dims, i).iter().map(|&c| c as f64 + 0.5).collect())
        .collect();
    let mut sites: Vec<Vec<f64>> = if n_grains == n {
        centres.clone()
    } else {
        let mut s: Vec<Vec<f64>> = Vec::with_capacity(n_grains);
        while s.len() < n_grains {
            let p: Vec<f64> = dims.iter().map(|&d| rng.gen::<f64>() * d as f64).collect();
            if s.iter().all(|q| q != &p) {
                s.push(p);
            }
        }
        s
    };
    let mut labels: Vec<usize> = centres.iter().map(|c| nearest_site(c, &sites)).collect();
    for _ in 0..lloyd_steps {
        let mut sum = vec![vec![0.0; dims.len()]; sites.len()];
        let mut cnt = vec![0usize; sites.len()];
        for (c, &l) in centres.iter().zip(&labels) {
            cnt[l] += 1;
            sum[l].iter_mut().zip(c).for_each(|(s, v)| *s += v);
        }
        for (s, (acc, &k)) in sites.iter_mut().zip(sum.iter().zip(&cnt)) {
            if k > 0 {
                *s = acc.iter().map(|v| v / k as f64).collect();
            }
        }
        labels = centres.iter().map(|c| nearest_site(c, &sites)).collect();
    }
    let mut remap = BTreeMap::new();
    Ok(labels
        .into_iter()
        .map(|l| {
            let next = remap.len();
            *remap.entry(l).or_insert(next)
        })
        .collect())
}

/// Seeded polycrystal: Voronoi grains, one uniform random rotation per grain,
/// orientation channels per cell.
pub fn generate_polycrystal<R: Rng + ?Sized>(spec: &PolycrystalSpec, rng: &mut R) -> Result<Microstructure> {
    let complex = CellComplex::grid(&spec.dims)?;
    let n_grains = spec.grains.sample(rng).min(complex.len());
    let labels = voronoi_labels(&spec.dims, n_grains, spec.lloyd_steps, rng)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let rotations: Vec<Rotation> = (0..k)
        .map(|_| match spec.orientation {
            OrientationMode::InPlaneAngle => rotation_z(rng.gen::<f64>() * 2.0 * PI),
            OrientationMode::AxisAngle => random_rotation(rng),
        })
        .collect();
    let grain_channels: Vec<Vec<f64>> = rotations
        .iter()
        .map(|r| -> Result<Vec<f64>> {
            Ok(match spec.orientation {
                OrientationMode::InPlaneAngle => vec![reduce_in_plane_angle(r[1][0].atan2(r[0][0]))],
                OrientationMode::AxisAngle => orientation_vector(r)?.to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let nc = spec.orientation.channels();
    let values = Array2::from_shape_fn((complex.len(), nc), |(i, c)| grain_channels[labels[i]][c]);
    let names = match spec.orientation {
        OrientationMode::InPlaneAngle => vec!["angle".to_string()],
        OrientationMode::AxisAngle => vec!["phi_x".into(), "phi_y".into(), "phi_z".into()],
    };
    Ok(Microstructure {
        complex,
        features: NodeFeatures::new(values, names)?,
        grain_labels: Some(labels),
        grain_rotations: Some(rotations),
        orientation: Some(spec.orientation),
        porous: None,
    })
}

/// Porosity distribution and pore geometry of the porous generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorousSpec {
    pub dims: Vec<usize>,
    pub beta_a: f64,
    pub beta_b: f64,
    pub max_pores: usize,
    /// Preferred pore radius in cell widths.
    pub pore_radius: f64,
    /// Relative half-width of the uniform cell-volume jitter.
    pub volume_jitter: f64,
    /// Fixed porosity instead of a beta draw.
    #[serde(default)]
    pub porosity: Option<f64>,
}

impl PorousSpec {
    /// Beta parameters with the given mean and standard deviation.
    pub fn beta_from_moments(mean: f64, std: f64) -> Result<(f64, f64)> {
        let var = std * std;
        if !(0.0 < mean && mean < 1.0) || var <= 0.0 || var >= mean * (1.0 - mean) {
            return Err(Error::InvalidArgument(format!("no beta law with mean {mean} and std {std}")));
        }
        let k = mean * (1.0 - mean) / var - 1.0;
        Ok((mean * k, (1.0 - mean) * k))
    }

    pub fn standard(dims: Vec<usize>) -> Self {
        let (a, b) = Self::beta_from_moments(0.09, 0.03).expect("valid moments");
        Self {
            dims,
            beta_a: a,
            beta_b: b,
            max_pores: 20,
            pore_radius: 1.6,
            volume_jitter: 0.2,
            porosity: None,
        }
    }
}

/// A spherical void in grid coordinates (cell centres at `i + 0.5`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pore {
    pub center: [f64; 3],
    pub radius: f64,
}

fn jittered_volumes<R: Rng + ?Sized>(n: usize, jitter: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| if jitter > 0.0 { 1.0 + rng.gen_range(-jitter..jitter) } else { 1.0 })
        .collect()
}

fn centre3(dims: &[usize], i: usize) -> [f64; 3] {
    let c = grid_coords(dims, i);
    let mut x = [0.0; 3];
    for (a, v) in c.iter().enumerate() {
        x[a] = *v as f64 + 0.5;
    }
    x
}

fn finish_porous(grid: CellComplex, keep: &[bool], n_pores: usize) -> Result<Microstructure> {
    let box_volume = grid.total_volume();
    let removed: f64 = grid
        .cells()
        .iter()
        .zip(keep)
        .filter(|(_, &k)| !k)
        .map(|(c, _)| c.volume)
        .sum();
    if keep.iter().all(|&k| !k) {
        return Err(Error::InfeasiblePorosity(1.0));
    }
    let mut void_faces = Vec::new();
    let mut box_faces = Vec::new();
    for (i, cell) in grid.cells().iter().enumerate() {
        if keep[i] {
            box_faces.push(cell.face_neighbors.len());
            void_faces.push(cell.face_neighbors.iter().filter(|&&j| !keep[j]).count());
        }
    }
    let complex = grid.restricted(keep)?;
    let n = complex.len();
    let vols = complex.volumes();
    let values = Array2::from_shape_fn((n, 3), |(i, c)| match c {
        0 => 1.0,
        1 => 1.0 - void_faces[i] as f64 / box_faces[i].max(1) as f64,
        _ => vols[i],
    });
    Ok(Microstructure {
        complex,
        features: NodeFeatures::new(values, vec!["density".into(), "solid_fraction".into(), "volume".into()])?,
        grain_labels: None,
        grain_rotations: None,
        orientation: None,
        porous: Some(PorousInfo {
            porosity: removed / box_volume,
            box_volume,
            n_pores,
            void_faces,
            box_faces,
        }),
    })
}

/// Removes every cell whose centre lies inside one of `pores`.
pub fn carve_pores(dims: &[usize], volumes: Option<&[f64]>, pores: &[Pore]) -> Result<Microstructure> {
    let mut grid = CellComplex::grid(dims)?;
    if let Some(v) = volumes {
        grid.set_volumes(v)?;
    }
    let keep: Vec<bool> = (0..grid.len())
        .map(|i| {
            let x = centre3(dims, i);
            !pores.iter().any(|p| {
                let d2: f64 = (0..3).map(|a| (x[a] - p.center[a]).powi(2)).sum();
                d2 <= p.radius * p.radius
            })
        })
        .collect();
    finish_porous(grid, &keep, pores.len())
}

/// Porous realization: a porosity target from the beta law, up to
/// `max_pores` non-overlapping spheres away from the boundary, and removal of
/// cells in order of normalised distance to the nearest pore centre until
/// the target void volume is reached.
pub fn generate_porous<R: Rng + ?Sized>(spec: &PorousSpec, rng: &mut R) -> Result<Microstructure> {
    let mut grid = CellComplex::grid(&spec.dims)?;
    let n = grid.len();
    grid.set_volumes(&jittered_volumes(n, spec.volume_jitter, rng))?;
    let target = match spec.porosity {
        Some(p) => p,
        None => Beta::new(spec.beta_a, spec.beta_b)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng),
    };
    if !(0.0..0.9).contains(&target) {
        return Err(Error::InfeasiblePorosity(target));
    }
    if target == 0.0 {
        return finish_porous(grid, &vec![true; n], 0);
    }
    let box_volume = grid.total_volume();
    let void_target = target * box_volume;
    let sphere = |r: f64| 4.0 / 3.0 * PI * r.powi(3);
    let max_pores = spec.max_pores.max(1);
    let n_pores = ((void_target / sphere(spec.pore_radius)).round() as usize).clamp(1, max_pores);
    let radius = (3.0 * void_target / (4.0 * PI * n_pores as f64)).cbrt();
    let d = spec.dims.len();
    let mut centres: Vec<[f64; 3]> = Vec::with_capacity(n_pores);
    let mut min_sep = 2.0 * radius;
    let mut attempts = 0;
    while centres.len() < n_pores {
        let mut c = [0.5; 3];
        for a in 0..d {
            let lo = (radius + 0.5).min(spec.dims[a] as f64 / 2.0);
            let hi = (spec.dims[a] as f64 - radius - 0.5).max(lo + 1e-9);
            c[a] = rng.gen_range(lo..hi);
        }
        let ok = centres
            .iter()
            .all(|q| (0..3).map(|a| (q[a] - c[a]).powi(2)).sum::<f64>().sqrt() >= min_sep);
        if ok {
            centres.push(c);
        }
        attempts += 1;
        if attempts % 2000 == 0 {
            min_sep *= 0.9;
        }
    }
    let mut ranked: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let x = centre3(&spec.dims, i);
            let dist = centres
                .iter()
                .map(|q| (0..3).map(|a| (q[a] - x[a]).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            (dist / radius, i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut keep = vec![true; n];
    let mut removed = 0.0;
    let vols = grid.volumes();
    for &(_, i) in &ranked {
        if removed >= void_target {
            break;
        }
        let v = vols[i];
        if removed + v - void_target > void_target - removed {
            break;
        }
        keep[i] = false;
        removed += v;
    }
    finish_porous(grid, &keep, n_pores)
}

/// Per-grain feature selection for the reduced graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrainFeatureSet {
    pub angle: bool,
    pub volume: bool,
    pub boundary_area: bool,
    pub surface_area: bool,
}

impl GrainFeatureSet {
    /// The nested sets of sizes 1 to 4: angle, +volume, +area, +surface area.
    pub fn first(n: usize) -> Result<Self> {
        if !(1..=4).contains(&n) {
            return Err(Error::InvalidArgument(format!("grain feature set size {n}")));
        }
        Ok(Self {
            angle: true,
            volume: n >= 2,
            boundary_area: n >= 3,
            surface_area: n >= 4,
        })
    }
}

/// Reduced graph with one node per grain.
#[derive(Clone, Debug, PartialEq)]
pub struct GrainGraph {
    pub complex: CellComplex,
    pub features: NodeFeatures<f64>,
    pub grain_volumes: Vec<f64>,
    pub boundary_area: Vec<f64>,
    pub surface_area: Vec<f64>,
}

/// Grains as nodes, shared faces as edges. Face area is one cell width squared.
pub fn segment_to_grain_graph(micro: &Microstructure, set: GrainFeatureSet) -> Result<GrainGraph> {
    let labels = micro.grain_labels.as_ref().ok_or(Error::MissingLabels)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut vol = vec![0.0; k];
    let mut boundary = vec![0.0; k];
    let mut surface = vec![0.0; k];
    let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    let full_faces = 2 * micro.complex.dims().len();
    for (i, cell) in micro.complex.cells().iter().enumerate() {
        let g = labels[i];
        vol[g] += cell.volume;
        for &j in &cell.face_neighbors {
            if labels[j] != g {
                boundary[g] += 1.0;
                edges[g].insert(labels[j]);
            }
        }
        if micro.complex.kind() == ComplexKind::Structured && !micro.complex.is_periodic() {
            surface[g] += (full_faces - cell.face_neighbors.len()) as f64;
        }
    }
    let total: f64 = vol.iter().sum();
    let cells: Vec<Cell> = (0..k)
        .map(|g| Cell {
            volume: vol[g],
            face_neighbors: edges[g].iter().copied().collect(),
            vertex_neighbors: Vec::new(),
        })
        .collect();
    let complex = CellComplex::unstructured(cells)?;
    let mut first_cell = vec![usize::MAX; k];
    for (i, &g) in labels.iter().enumerate() {
        if first_cell[g] == usize::MAX {
            first_cell[g] = i;
        }
    }
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    if set.angle {
        let nc = micro.orientation.map_or(0, |m| m.channels());
        for c in 0..nc {
            let name = micro.features.labels[c].clone();
            cols.push((name, (0..k).map(|g| micro.features.values[[first_cell[g], c]]).collect()));
        }
    }
    if set.volume {
        cols.push(("volume".into(), vol.iter().map(|v| v / total).collect()));
    }
    if set.boundary_area {
        cols.push(("boundary_area".into(), boundary.clone()));
    }
    if set.surface_area {
        cols.push(("surface_area".into(), surface.clone()));
    }
    if cols.is_empty() {
        return Err(Error::InvalidArgument("empty grain feature set".into()));
    }
    let values = Array2::from_shape_fn((k, cols.len()), |(g, c)| cols[c].1[g]);
    Ok(GrainGraph {
        complex,
        features: NodeFeatures::new(values, cols.into_iter().map(|c| c.0).collect())?,
        grain_volumes: vol,
        boundary_area: boundary,
        surface_area: surface,
    })
}

/// Appends a channel holding each cell's grain volume fraction.
pub fn boost_volume_fraction(micro: &Microstructure) -> Result<Microstructure> {
    let labels = micro.grain_labels.as_ref().ok_or(Error::MissingLabels)?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut vol = vec![0.0; k];
    for (c, &g) in micro.complex.cells().iter().zip(labels) {
        vol[g] += c.volume;
    }
    let total: f64 = vol.iter().sum();
    let old = &micro.features.values;
    let nc = old.ncols();
    let values = Array2::from_shape_fn((old.nrows(), nc + 1), |(i, c)| {
        if c < nc {
            old[[i, c]]
        } else {
            vol[labels[i]] / total
        }
    });
    let mut names = micro.features.labels.clone();
    names.push("grain_volume_fraction".into());
    let mut out = micro.clone();
    out.features = NodeFeatures::new(values, names)?;
    Ok(out)
}

/// Number of cells in each grain.
pub fn grain_sizes(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut s = vec![0; k];
    labels.iter().for_each(|&l| s[l] += 1);
    s
}
