//! Cell complexes and the sparse adjacency operators derived from them.
//!
//! Every graph used by the networks comes from a [`CellComplex`]: a structured
//! grid or an unstructured cell mesh with per-cell volumes and face/vertex
//! incidence. Structured grids are indexed row-major (first axis slowest).

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexKind {
    Structured,
    Unstructured,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub volume: f64,
    /// Cells sharing a face (an edge in 2D), sorted.
    pub face_neighbors: Vec<usize>,
    /// Cells sharing only a vertex or edge, sorted.
    pub vertex_neighbors: Vec<usize>,
}

/// Stencil offset of a structured grid, one component per axis (unused axes are 0).
pub type Offset = [i8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborClass {
    SelfLoop,
    Face,
    Vertex,
    KernelOffset(Offset),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellComplex {
    kind: ComplexKind,
    dims: Vec<usize>,
    periodic: bool,
    cells: Vec<Cell>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Row-major linear index of grid coordinates.
pub fn grid_index(dims: &[usize], coords: &[usize]) -> usize {
    coords
        .iter()
        .zip(strides(dims))
        .map(|(&c, s)| c * s)
        .sum()
}

/// Inverse of [`grid_index`].
pub fn grid_coords(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut c = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        c[a] = index % dims[a];
        index /= dims[a];
    }
    c
}

/// All stencil offsets of a width-3 kernel in `d` dimensions, lexicographic
/// with the first axis slowest. The centre offset sits at index `(3^d - 1) / 2`.
pub fn stencil_offsets(d: usize) -> Vec<Offset> {
    let count = 3usize.pow(d as u32);
    (0..count)
        .map(|mut k| {
            let mut o = [0i8; 3];
            for a in (0..d).rev() {
                o[a] = (k % 3) as i8 - 1;
                k /= 3;
            }
            o
        })
        .collect()
}

fn shift(dims: &[usize], coords: &[usize], off: &Offset, periodic: bool) -> Option<usize> {
    let mut idx = 0;
    let st = strides(dims);
    for a in 0..dims.len() {
        let n = dims[a] as isize;
        let mut c = coords[a] as isize + off[a] as isize;
        if c < 0 || c >= n {
            if !periodic {
                return None;
            }
            c = c.rem_euclid(n);
        }
        idx += c as usize * st[a];
    }
    Some(idx)
}

impl CellComplex {
    /// Non-periodic structured grid with unit cell volumes.
    pub fn grid(dims: &[usize]) -> Result<Self> {
        Self::grid_with(dims, false)
    }

    pub fn grid_with(dims: &[usize], periodic: bool) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 || dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidComplex(format!("bad grid extents {dims:?}")));
        }
        let n: usize = dims.iter().product();
        let offsets: Vec<Offset> = stencil_offsets(dims.len())
            .into_iter()
            .filter(|o| o.iter().any(|&c| c != 0))
            .collect();
        let cells = (0..n)
            .map(|i| {
                let c = grid_coords(dims, i);
                let mut face = BTreeSet::new();
                let mut vertex = BTreeSet::new();
                for o in &offsets {
                    if let Some(j) = shift(dims, &c, o, periodic) {
                        if j == i {
                            continue;
                        }
                        if o.iter().filter(|&&v| v != 0).count() == 1 {
                            face.insert(j);
                        } else {
                            vertex.insert(j);
                        }
                    }
                }
                // wrap-around on short periodic axes can make a cell both
                let vertex = vertex.difference(&face).copied().collect();
                Cell {
                    volume: 1.0,
                    face_neighbors: face.into_iter().collect(),
                    vertex_neighbors: vertex,
                }
            })
            .collect();
        Ok(Self {
            kind: ComplexKind::Structured,
            dims: dims.to_vec(),
            periodic,
            cells,
        })
    }

    /// Unstructured complex from explicit cell records. Neighbour lists are
    /// sorted and the invariants checked.
    pub fn unstructured(mut cells: Vec<Cell>) -> Result<Self> {
        for c in &mut cells {
            c.face_neighbors.sort_unstable();
            c.vertex_neighbors.sort_unstable();
        }
        let complex = Self {
            kind: ComplexKind::Unstructured,
            dims: Vec::new(),
            periodic: false,
            cells,
        };
        complex.validate()?;
        Ok(complex)
    }

    pub fn kind(&self) -> ComplexKind {
        self.kind
    }

    /// Grid extents; empty for unstructured complexes.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.volume).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn set_volumes(&mut self, volumes: &[f64]) -> Result<()> {
        if volumes.len() != self.cells.len() {
            return Err(Error::Shape(format!(
                "{} volumes for {} cells",
                volumes.len(),
                self.cells.len()
            )));
        }
        if volumes.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidComplex("volumes must be positive".into()));
        }
        for (c, &v) in self.cells.iter_mut().zip(volumes) {
            c.volume = v;
        }
        Ok(())
    }

    /// Spatial dimension of a structured grid.
    pub fn spatial_dim(&self) -> Option<usize> {
        match self.kind {
            ComplexKind::Structured => Some(self.dims.len()),
            ComplexKind::Unstructured => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cells.len();
        for (i, c) in self.cells.iter().enumerate() {
            if !(c.volume > 0.0) || !c.volume.is_finite() {
                return Err(Error::InvalidComplex(format!("cell {i} has volume {}", c.volume)));
            }
            for list in [&c.face_neighbors, &c.vertex_neighbors] {
                if list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidComplex(format!(
                        "cell {i} neighbour list not strictly sorted"
                    )));
                }
                if list.iter().any(|&j| j >= n || j == i) {
                    return Err(Error::InvalidComplex(format!(
                        "cell {i} has an out-of-range or self neighbour"
                    )));
                }
            }
            if c
                .face_neighbors
                .iter()
                .any(|j| c.vertex_neighbors.binary_search(j).is_ok())
            {
                return Err(Error::InvalidComplex(format!(
                    "cell {i} lists a neighbour as both face and vertex"
                )));
            }
            for &j in &c.face_neighbors {
                if self.cells[j].face_neighbors.binary_search(&i).is_err() {
                    return Err(Error::InvalidComplex(format!("face relation {i}-{j} not symmetric")));
                }
            }
            for &j in &c.vertex_neighbors {
                if self.cells[j].vertex_neighbors.binary_search(&i).is_err() {
                    return Err(Error::InvalidComplex(format!(
                        "vertex relation {i}-{j} not symmetric"
                    )));
                }
            }
        }
        if self.kind == ComplexKind::Structured && self.dims.iter().product::<usize>() != n {
            return Err(Error::InvalidComplex("grid extents do not match cell count".into()));
        }
        Ok(())
    }

    /// Relabels cells so that old cell `i` becomes `perm[i]`. The result is
    /// unstructured since grid addressing no longer applies.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let mut cells = vec![
            Cell {
                volume: 0.0,
                face_neighbors: Vec::new(),
                vertex_neighbors: Vec::new(),
            };
            self.len()
        ];
        for (old, c) in self.cells.iter().enumerate() {
            let mut face: Vec<usize> = c.face_neighbors.iter().map(|&j| perm[j]).collect();
            let mut vertex: Vec<usize> = c.vertex_neighbors.iter().map(|&j| perm[j]).collect();
            face.sort_unstable();
            vertex.sort_unstable();
            cells[perm[old]] = Cell {
                volume: c.volume,
                face_neighbors: face,
                vertex_neighbors: vertex,
            };
        }
        Ok(Self {
            kind: ComplexKind::Unstructured,
            dims: Vec::new(),
            periodic: false,
            cells,
        })
    }

    /// Keeps only the cells flagged in `keep`, renumbered in order. The result
    /// is unstructured.
    pub fn restricted(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::Shape("keep mask length".into()));
        }
        let mut new_index = vec![usize::MAX; self.len()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_index[i] = next;
                next += 1;
            }
        }
        let remap = |list: &[usize]| -> Vec<usize> {
            list.iter()
                .filter(|&&j| keep[j])
                .map(|&j| new_index[j])
                .collect()
        };
        let cells = self
            .cells
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(c, _)| Cell {
                volume: c.volume,
                face_neighbors: remap(&c.face_neighbors),
                vertex_neighbors: remap(&c.vertex_neighbors),
            })
            .collect();
        Ok(Self {
            kind: ComplexKind::Unstructured,
            dims: Vec::new(),
            periodic: false,
            cells,
        })
    }

    pub fn to_mesh_file(&self) -> MeshFile {
        MeshFile {
            kind: self.kind,
            dims: match self.kind {
                ComplexKind::Structured => Some(self.dims.clone()),
                ComplexKind::Unstructured => None,
            },
            periodic: self.periodic,
            volumes: self.volumes(),
            face_neighbors: self.cells.iter().map(|c| c.face_neighbors.clone()).collect(),
            vertex_neighbors: self.cells.iter().map(|c| c.vertex_neighbors.clone()).collect(),
        }
    }

    pub fn from_mesh_file(file: MeshFile) -> Result<Self> {
        let n = file.volumes.len();
        if file.face_neighbors.len() != n || file.vertex_neighbors.len() != n {
            return Err(Error::InvalidComplex("mesh arrays have different lengths".into()));
        }
        let dims = match (file.kind, file.dims) {
            (ComplexKind::Structured, Some(d)) => d,
            (ComplexKind::Structured, None) => {
                return Err(Error::InvalidComplex("structured mesh without dims".into()))
            }
            (ComplexKind::Unstructured, _) => Vec::new(),
        };
        let cells = file
            .volumes
            .into_iter()
            .zip(file.face_neighbors)
            .zip(file.vertex_neighbors)
            .map(|((volume, face_neighbors), vertex_neighbors)| Cell {
                volume,
                face_neighbors,
                vertex_neighbors,
            })
            .collect();
        let complex = Self {
            kind: file.kind,
            dims,
            periodic: file.periodic,
            cells,
        };
        complex.validate()?;
        Ok(complex)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_mesh_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_mesh_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// On-disk mesh document shared by every dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub kind: ComplexKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub periodic: bool,
    pub volumes: Vec<f64>,
    pub face_neighbors: Vec<Vec<usize>>,
    pub vertex_neighbors: Vec<Vec<usize>>,
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} items", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Square sparse matrix in canonical sorted row-major coordinate form
/// (stored compressed by row).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    symmetric: bool,
}

impl<T: Scalar> SparseAdjacency<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are rejected.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateEntry { row: w[0].0, col: w[0].1 });
            }
        }
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
            return Err(Error::Shape(format!("entry ({r}, {c}) outside {n}x{n}")));
        }
        let mut row_ptr = vec![0; n + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = triplets.iter().map(|t| t.1).collect();
        let vals = triplets.iter().map(|t| t.2).collect();
        let mut a = Self {
            n,
            row_ptr,
            cols,
            vals,
            symmetric: false,
        };
        a.symmetric = a.check_symmetric();
        Ok(a)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![T::one(); n],
            symmetric: true,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            symmetric: true,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => T::zero(),
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    fn check_symmetric(&self) -> bool {
        self.entries().all(|(i, j, v)| self.get(j, i) == v)
    }

    pub fn transpose(&self) -> Self {
        if self.symmetric {
            return self.clone();
        }
        let t = self.entries().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n, t).expect("transpose of a valid matrix")
    }

    /// Entrywise sum; entries present in both are added.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Shape(format!("{} vs {}", self.n, other.n)));
        }
        let mut trip: Vec<(usize, usize, T)> = self.entries().chain(other.entries()).collect();
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(trip.len());
        for t in trip {
            match merged.last_mut() {
                Some(last) if last.0 == t.0 && last.1 == t.1 => last.2 += t.2,
                _ => merged.push(t),
            }
        }
        Self::from_triplets(self.n, merged)
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `P A P^T` where old index `i` maps to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let t = self.entries().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        Self::from_triplets(self.n, t)
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut d = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.entries() {
            d[[i, j]] = v;
        }
        d
    }

    pub fn from_dense(d: &Array2<T>) -> Result<Self> {
        let (r, c) = d.dim();
        if r != c {
            return Err(Error::Shape(format!("{r}x{c} is not square")));
        }
        let t = d
            .indexed_iter()
            .filter(|(_, &v)| v != T::zero())
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        Self::from_triplets(r, t)
    }

    /// `A x` for a dense node-by-channel block.
    pub fn spmm(&self, x: &Array2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.n, x.ncols()));
        self.spmm_acc(x, &mut out);
        out
    }

    /// `out += A x`.
    pub fn spmm_acc(&self, x: &Array2<T>, out: &mut Array2<T>) {
        debug_assert_eq!(x.nrows(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut orow = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                orow.scaled_add(v, &x.row(j));
            }
        }
    }

    pub fn diagonal_nonzero(&self) -> Option<usize> {
        (0..self.n).find(|&i| self.get(i, i) != T::zero())
    }
}

/// Binary adjacency for one neighbour class.
pub fn build_adjacency<T: Scalar>(
    complex: &CellComplex,
    class: NeighborClass,
) -> Result<SparseAdjacency<T>> {
    let n = complex.len();
    match class {
        NeighborClass::SelfLoop => Ok(SparseAdjacency::identity(n)),
        NeighborClass::Face | NeighborClass::Vertex => {
            let trip = complex
                .cells
                .iter()
                .enumerate()
                .flat_map(|(i, c)| {
                    let list = if class == NeighborClass::Face {
                        &c.face_neighbors
                    } else {
                        &c.vertex_neighbors
                    };
                    list.iter().map(move |&j| (i, j, T::one()))
                })
                .collect();
            SparseAdjacency::from_triplets(n, trip)
        }
        NeighborClass::KernelOffset(off) => {
            if complex.kind != ComplexKind::Structured {
                return Err(Error::UnsupportedTopology(
                    "kernel offsets need a structured grid".into(),
                ));
            }
            let d = complex.dims.len();
            if off.iter().skip(d).any(|&c| c != 0) || off.iter().any(|c| c.abs() > 1) {
                return Err(Error::InvalidArgument(format!("offset {off:?} for a {d}D grid")));
            }
            let trip = (0..n)
                .filter_map(|i| {
                    let c = grid_coords(&complex.dims, i);
                    shift(&complex.dims, &c, &off, complex.periodic).map(|j| (i, j, T::one()))
                })
                .collect();
            SparseAdjacency::from_triplets(n, trip)
        }
    }
}

/// `A + I`; fails if any diagonal entry is already present.
pub fn add_self_loops<T: Scalar>(a: &SparseAdjacency<T>) -> Result<SparseAdjacency<T>> {
    if let Some(i) = a.diagonal_nonzero() {
        return Err(Error::DuplicateEntry { row: i, col: i });
    }
    a.add(&SparseAdjacency::identity(a.n))
}

/// `D^-1/2 A D^-1/2` with `D` the row sums of `A`.
pub fn normalize_symmetric<T: Scalar>(a: &SparseAdjacency<T>) -> Result<SparseAdjacency<T>> {
    if !a.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    let deg = a.row_sums();
    if let Some(i) = deg.iter().position(|&d| d <= T::zero()) {
        return Err(Error::SingularDegree(i));
    }
    Ok(scale_by_degree(a, &deg))
}

/// Like [`normalize_symmetric`] but rows with zero degree stay empty. Used for
/// neighbour groups without self-loops, where isolated cells are legitimate.
pub fn normalize_symmetric_allow_isolated<T: Scalar>(
    a: &SparseAdjacency<T>,
) -> Result<SparseAdjacency<T>> {
    if !a.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    let deg = a.row_sums();
    Ok(scale_by_degree(a, &deg))
}

fn scale_by_degree<T: Scalar>(a: &SparseAdjacency<T>, deg: &[T]) -> SparseAdjacency<T> {
    let mut out = a.clone();
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let dd = deg[i] * deg[a.cols[k]];
            out.vals[k] = if dd > T::zero() { a.vals[k] / dd.sqrt() } else { T::zero() };
        }
    }
    out.symmetric = a.symmetric;
    out
}

/// One binary masking matrix per width-3 stencil offset, in
/// [`stencil_offsets`] order.
pub fn kernel_adjacency_stack<T: Scalar>(
    grid: &CellComplex,
) -> Result<Vec<(Offset, SparseAdjacency<T>)>> {
    let d = grid.spatial_dim().ok_or_else(|| {
        Error::UnsupportedTopology("kernel stack needs a structured grid".into())
    })?;
    stencil_offsets(d)
        .into_iter()
        .map(|o| Ok((o, build_adjacency(grid, NeighborClass::KernelOffset(o))?)))
        .collect()
}

/// An exact symmetry of the cubic lattice: a signed axis permutation with
/// determinant +1. Output axis `a` takes input axis `perm[a]` with sign `signs[a]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridRotation {
    d: usize,
    perm: [usize; 3],
    signs: [i8; 3],
}

fn permutation_parity(p: &[usize]) -> i8 {
    let mut s = 1;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                s = -s;
            }
        }
    }
    s
}

impl GridRotation {
    pub fn identity(d: usize) -> Self {
        Self {
            d,
            perm: [0, 1, 2],
            signs: [1, 1, 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The 4 (2D) or 24 (3D) proper rotations mapping the grid onto itself.
    pub fn all(d: usize) -> Vec<Self> {
        let perms: Vec<Vec<usize>> = match d {
            1 => vec![vec![0]],
            2 => vec![vec![0, 1], vec![1, 0]],
            3 => vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0],
            ],
            _ => return Vec::new(),
        };
        let mut out = Vec::new();
        for p in perms {
            for mask in 0..(1u32 << d) {
                let mut signs = [1i8; 3];
                for (a, s) in signs.iter_mut().enumerate().take(d) {
                    if mask & (1 << a) != 0 {
                        *s = -1;
                    }
                }
                let det = permutation_parity(&p) * signs[..d].iter().product::<i8>();
                if det == 1 {
                    let mut perm = [0, 1, 2];
                    perm[..d].copy_from_slice(&p);
                    out.push(Self { d, perm, signs });
                }
            }
        }
        out
    }

    /// Accepts a `d x d` matrix (row-major); it must be a signed permutation
    /// with determinant +1.
    pub fn from_matrix(m: &[Vec<f64>]) -> Result<Self> {
        let d = m.len();
        if d == 0 || d > 3 || m.iter().any(|r| r.len() != d) {
            return Err(Error::NotGridRotation);
        }
        let mut perm = [0, 1, 2];
        let mut signs = [1i8; 3];
        for a in 0..d {
            let nz: Vec<usize> = (0..d).filter(|&b| m[a][b].abs() > 1e-12).collect();
            if nz.len() != 1 || (m[a][nz[0]].abs() - 1.0).abs() > 1e-12 {
                return Err(Error::NotGridRotation);
            }
            perm[a] = nz[0];
            signs[a] = m[a][nz[0]].signum() as i8;
        }
        let mut seen = [false; 3];
        for &p in &perm[..d] {
            if seen[p] {
                return Err(Error::NotGridRotation);
            }
            seen[p] = true;
        }
        if permutation_parity(&perm[..d]) * signs[..d].iter().product::<i8>() != 1 {
            return Err(Error::NotGridRotation);
        }
        Ok(Self { d, perm, signs })
    }

    pub fn rotated_dims(&self, dims: &[usize]) -> Vec<usize> {
        (0..self.d).map(|a| dims[self.perm[a]]).collect()
    }

    /// `map[old_index] = new_index` for a grid of extents `dims`.
    pub fn cell_map(&self, dims: &[usize]) -> Result<Vec<usize>> {
        if dims.len() != self.d {
            return Err(Error::Shape(format!("{}D rotation on {}D grid", self.d, dims.len())));
        }
        let nd = self.rotated_dims(dims);
        let n: usize = dims.iter().product();
        Ok((0..n)
            .map(|i| {
                let c = grid_coords(dims, i);
                let nc: Vec<usize> = (0..self.d)
                    .map(|a| {
                        let src = c[self.perm[a]];
                        if self.signs[a] > 0 {
                            src
                        } else {
                            dims[self.perm[a]] - 1 - src
                        }
                    })
                    .collect();
                grid_index(&nd, &nc)
            })
            .collect())
    }

    /// Rotates a structured grid complex (volumes follow their cells).
    pub fn apply_to_grid(&self, grid: &CellComplex) -> Result<CellComplex> {
        if grid.kind != ComplexKind::Structured {
            return Err(Error::UnsupportedTopology("rotation needs a structured grid".into()));
        }
        let map = self.cell_map(&grid.dims)?;
        let mut out = CellComplex::grid_with(&self.rotated_dims(&grid.dims), grid.periodic)?;
        let mut vols = vec![0.0; grid.len()];
        for (old, &new) in map.iter().enumerate() {
            vols[new] = grid.cells[old].volume;
        }
        out.set_volumes(&vols)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(a: &SparseAdjacency<f64>) -> Vec<Vec<f64>> {
        a.to_dense().outer_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn face_adjacency_of_two_cells() {
        let g = CellComplex::grid(&[1, 2]).unwrap();
        let a = build_adjacency::<f64>(&g, NeighborClass::Face).unwrap();
        assert_eq!(dense(&a), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn self_loop_class_is_identity() {
        let g = CellComplex::grid(&[3, 4]).unwrap();
        let a = build_adjacency::<f64>(&g, NeighborClass::SelfLoop).unwrap();
        assert_eq!(a.to_dense(), Array2::<f64>::eye(12));
    }

    #[test]
    fn corner_vertex_neighbor_of_three_by_three() {
        let g = CellComplex::grid(&[3, 3]).unwrap();
        let a = build_adjacency::<f64>(&g, NeighborClass::Vertex).unwrap();
        let (cols, _) = a.row(0);
        assert_eq!(cols, &[4]);
    }

    #[test]
    fn kernel_offset_rejected_on_unstructured() {
        let g = CellComplex::grid(&[2, 2]).unwrap().permuted(&[0, 1, 2, 3]).unwrap();
        let err = build_adjacency::<f64>(&g, NeighborClass::KernelOffset([0, 1, 0]));
        assert!(matches!(err, Err(Error::UnsupportedTopology(_))));
        assert!(matches!(
            kernel_adjacency_stack::<f64>(&g),
            Err(Error::UnsupportedTopology(_))
        ));
    }

    #[test]
    fn self_loops() {
        let a = SparseAdjacency::<f64>::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(dense(&add_self_loops(&a).unwrap()), vec![vec![1.0; 2]; 2]);
        let z = SparseAdjacency::<f64>::zeros(3);
        assert_eq!(add_self_loops(&z).unwrap().to_dense(), Array2::<f64>::eye(3));
        let g = CellComplex::grid(&[2, 2]).unwrap();
        let f = add_self_loops(&build_adjacency::<f64>(&g, NeighborClass::Face).unwrap()).unwrap();
        assert!(f.row_sums().iter().all(|&s| s == 3.0));
        let bad = SparseAdjacency::<f64>::identity(2);
        assert!(matches!(add_self_loops(&bad), Err(Error::DuplicateEntry { .. })));
    }

    #[test]
    fn symmetric_normalization_examples() {
        let full = SparseAdjacency::<f64>::from_dense(&Array2::ones((2, 2))).unwrap();
        assert_eq!(dense(&normalize_symmetric(&full).unwrap()), vec![vec![0.5; 2]; 2]);
        let id = SparseAdjacency::<f64>::identity(4);
        assert_eq!(normalize_symmetric(&id).unwrap(), id);
        // path 0-1-2 with self loops, degrees {2, 3, 2}
        let p = CellComplex::grid(&[3]).unwrap();
        let a = add_self_loops(&build_adjacency::<f64>(&p, NeighborClass::Face).unwrap()).unwrap();
        let n = normalize_symmetric(&a).unwrap();
        assert!((n.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(n.is_symmetric());
    }

    #[test]
    fn zero_degree_is_an_error() {
        let z = SparseAdjacency::<f64>::zeros(2);
        assert!(matches!(normalize_symmetric(&z), Err(Error::SingularDegree(0))));
        assert_eq!(normalize_symmetric_allow_isolated(&z).unwrap().nnz(), 0);
    }

    #[test]
    fn one_dimensional_kernel_stack() {
        let g = CellComplex::grid(&[3]).unwrap();
        let stack = kernel_adjacency_stack::<f64>(&g).unwrap();
        assert_eq!(stack.len(), 3);
        assert_eq!(stack[1].1.to_dense(), Array2::<f64>::eye(3));
        let plus: Vec<(usize, usize)> = stack[2].1.entries().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(plus, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn kernel_stack_sums_to_full_neighbourhood() {
        let g = CellComplex::grid(&[4, 4]).unwrap();
        let stack = kernel_adjacency_stack::<f64>(&g).unwrap();
        let mut sum = SparseAdjacency::zeros(16);
        for (_, a) in &stack {
            sum = sum.add(a).unwrap();
        }
        let expect = build_adjacency::<f64>(&g, NeighborClass::Face)
            .unwrap()
            .add(&build_adjacency(&g, NeighborClass::Vertex).unwrap())
            .unwrap()
            .add(&SparseAdjacency::identity(16))
            .unwrap();
        assert_eq!(sum.to_dense(), expect.to_dense());
    }

    #[test]
    fn interior_row_sums() {
        let g2 = CellComplex::grid(&[5, 5]).unwrap();
        let c = grid_index(&[5, 5], &[2, 2]);
        assert_eq!(g2.cells()[c].face_neighbors.len(), 4);
        assert_eq!(g2.cells()[c].vertex_neighbors.len(), 4);
        let g3 = CellComplex::grid(&[4, 4, 4]).unwrap();
        let c = grid_index(&[4, 4, 4], &[1, 2, 1]);
        assert_eq!(g3.cells()[c].face_neighbors.len(), 6);
        assert_eq!(g3.cells()[c].vertex_neighbors.len(), 20);
        g3.validate().unwrap();
    }

    #[test]
    fn periodic_grid_has_uniform_degree() {
        let g = CellComplex::grid_with(&[4, 5], true).unwrap();
        g.validate().unwrap();
        assert!(g
            .cells()
            .iter()
            .all(|c| c.face_neighbors.len() == 4 && c.vertex_neighbors.len() == 4));
    }

    #[test]
    fn mesh_json_round_trip() {
        let g = CellComplex::grid(&[3, 2]).unwrap();
        let back = CellComplex::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
        let u = g.permuted(&[5, 4, 3, 2, 1, 0]).unwrap();
        let back = CellComplex::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(u, back);
        assert!(!u.to_json().unwrap().contains("dims"));
    }

    #[test]
    fn rejects_asymmetric_mesh() {
        let cells = vec![
            Cell {
                volume: 1.0,
                face_neighbors: vec![1],
                vertex_neighbors: vec![],
            },
            Cell {
                volume: 1.0,
                face_neighbors: vec![],
                vertex_neighbors: vec![],
            },
        ];
        assert!(CellComplex::unstructured(cells).is_err());
    }

    #[test]
    fn grid_rotation_group_sizes() {
        assert_eq!(GridRotation::all(2).len(), 4);
        assert_eq!(GridRotation::all(3).len(), 24);
        let r = GridRotation::from_matrix(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(r.cell_map(&[2, 2]).unwrap().len(), 4);
        assert!(GridRotation::from_matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_err());
        let c = 0.5f64.sqrt();
        assert!(GridRotation::from_matrix(&[vec![c, -c], vec![c, c]]).is_err());
    }

    #[test]
    fn rotated_grid_adjacency_is_conjugate() {
        let g = CellComplex::grid(&[3, 4]).unwrap();
        for r in GridRotation::all(2) {
            let map = r.cell_map(g.dims()).unwrap();
            let rg = r.apply_to_grid(&g).unwrap();
            for class in [NeighborClass::Face, NeighborClass::Vertex] {
                let a = build_adjacency::<f64>(&g, class).unwrap().permuted(&map).unwrap();
                let b = build_adjacency::<f64>(&rg, class).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}
