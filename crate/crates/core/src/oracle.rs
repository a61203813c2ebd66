//! Constitutive label generator. Each cell (or grain) follows the
//! macroscopic uniaxial strain; a neighbour-dependent knockdown lowers the
//! stress near voids and grain boundaries before volume averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microgen::{rotation_from_vector, rotation_z, Microstructure, OrientationMode, Rotation};
use crate::recurrent::Trajectory;

/// Isotropic elastic-plastic parameters. Moduli in GPa, stresses in MPa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct J2Params {
    pub e: f64,
    pub nu: f64,
    pub y: f64,
    pub h: f64,
    pub alpha: f64,
}

impl Default for J2Params {
    fn default() -> Self {
        Self {
            e: 59.2,
            nu: 0.33,
            y: 200.0,
            h: 163.6,
            alpha: 73.3,
        }
    }
}

/// Cubic crystal parameters. Moduli in GPa, stresses in MPa, rates in 1/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpParams {
    pub c11: f64,
    pub c12: f64,
    pub c44: f64,
    pub gamma0: f64,
    pub m: f64,
    pub g0: f64,
    pub h: f64,
    pub rd: f64,
    /// Bound on `|tau/g|` inside the power law.
    pub rate_clip: f64,
}

impl Default for CpParams {
    fn default() -> Self {
        Self {
            c11: 204.6,
            c12: 137.7,
            c44: 126.2,
            gamma0: 1.0,
            m: 20.0,
            g0: 122.0,
            h: 355.0,
            rd: 2.9,
            rate_clip: 1.2,
        }
    }
}

/// Monotone tension at a constant strain rate, sampled at `steps` points
/// `max_strain * i / steps`, `i = 1..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingProgram {
    pub rate: f64,
    pub max_strain: f64,
    pub steps: usize,
}

impl LoadingProgram {
    pub fn new(rate: f64, max_strain: f64, steps: usize) -> Result<Self> {
        if steps < 2 || !(max_strain > 0.0) || !(rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loading program needs steps >= 2 and positive strain and rate (got {steps}, {max_strain}, {rate})"
            )));
        }
        Ok(Self {
            rate,
            max_strain,
            steps,
        })
    }

    pub fn cp_2d() -> Self {
        Self::new(1.0, 0.003, 31).expect("valid preset")
    }

    pub fn cp_3d() -> Self {
        Self::new(1.0, 0.004, 51).expect("valid preset")
    }

    pub fn porous() -> Self {
        Self::new(1.0, 0.20, 400).expect("valid preset")
    }

    pub fn strains(&self) -> Vec<f64> {
        (1..=self.steps)
            .map(|i| self.max_strain * i as f64 / self.steps as f64)
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.strains().iter().map(|e| e / self.rate).collect()
    }

    pub fn dt(&self) -> f64 {
        self.max_strain / (self.steps as f64 * self.rate)
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.rate, self.max_strain, self.steps).map(|_| ())
    }
}

/// `Y - H exp(-alpha eps_p)`.
pub fn voce_yield(eps_p: f64, params: &J2Params) -> Result<f64> {
    if eps_p < 0.0 || !eps_p.is_finite() {
        return Err(Error::InvalidArgument(format!("equivalent plastic strain {eps_p}")));
    }
    Ok(params.y - params.h * (-params.alpha * eps_p).exp())
}

pub const RETURN_MAP_TOL: f64 = 1e-10;
pub const RETURN_MAP_MAX_ITER: usize = 50;

/// One-dimensional implicit return mapping under uniaxial stress.
/// Returns the stress at every program step together with the equivalent
/// plastic strain history.
pub fn j2_uniaxial_with_plastic(program: &LoadingProgram, params: &J2Params) -> Result<(Vec<f64>, Vec<f64>)> {
    program.validate()?;
    let e = params.e * 1000.0;
    let mut ep = 0.0; // axial plastic strain
    let mut ebar = 0.0; // equivalent plastic strain
    let mut stress = Vec::with_capacity(program.steps);
    let mut plastic = Vec::with_capacity(program.steps);
    for eps in program.strains() {
        let trial = e * (eps - ep);
        let f = trial.abs() - voce_yield(ebar, params)?;
        let sigma = if f <= 0.0 {
            trial
        } else {
            let mut dl = 0.0;
            let mut converged = false;
            let mut res = f;
            for _ in 0..RETURN_MAP_MAX_ITER {
                let ex = (-params.alpha * (ebar + dl)).exp();
                res = trial.abs() - e * dl - (params.y - params.h * ex);
                if res.abs() <= RETURN_MAP_TOL {
                    converged = true;
                    break;
                }
                let d = -e - params.h * params.alpha * ex;
                let next = (dl - res / d).max(0.0);
                if next == dl {
                    converged = res.abs() <= 1e-8;
                    break;
                }
                dl = next;
            }
            if !converged {
                return Err(Error::NonConvergent {
                    iterations: RETURN_MAP_MAX_ITER,
                    residual: res,
                });
            }
            let s = trial.signum();
            ep += s * dl;
            ebar += dl;
            s * (trial.abs() - e * dl)
        };
        stress.push(sigma);
        plastic.push(ebar);
    }
    Ok((stress, plastic))
}

pub fn j2_uniaxial(program: &LoadingProgram, params: &J2Params) -> Result<Trajectory> {
    let (s, _) = j2_uniaxial_with_plastic(program, params)?;
    Trajectory::new(program.strains(), s)
}

/// The twelve `{111}<110>` systems as unnormalised `(direction, normal)` pairs.
pub const FCC_SLIP_SYSTEMS: [([f64; 3], [f64; 3]); 12] = [
    ([0.0, 1.0, -1.0], [1.0, 1.0, 1.0]),
    ([1.0, 0.0, -1.0], [1.0, 1.0, 1.0]),
    ([1.0, -1.0, 0.0], [1.0, 1.0, 1.0]),
    ([0.0, 1.0, -1.0], [-1.0, 1.0, 1.0]),
    ([1.0, 0.0, 1.0], [-1.0, 1.0, 1.0]),
    ([1.0, 1.0, 0.0], [-1.0, 1.0, 1.0]),
    ([0.0, 1.0, 1.0], [1.0, -1.0, 1.0]),
    ([1.0, 0.0, -1.0], [1.0, -1.0, 1.0]),
    ([1.0, 1.0, 0.0], [1.0, -1.0, 1.0]),
    ([0.0, 1.0, 1.0], [1.0, 1.0, -1.0]),
    ([1.0, 0.0, 1.0], [1.0, 1.0, -1.0]),
    ([1.0, -1.0, 0.0], [1.0, 1.0, -1.0]),
];

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Schmid factors for tension along lab x of a crystal rotated by `r`.
pub fn schmid_factors(r: &Rotation) -> [f64; 12] {
    let d = r[0];
    let mut m = [0.0; 12];
    for (k, (s, n)) in FCC_SLIP_SYSTEMS.iter().enumerate() {
        m[k] = dot(s, &d) * dot(n, &d) / (dot(s, s) * dot(n, n)).sqrt();
    }
    m
}

/// Young's modulus (MPa) of a cubic crystal along lab x.
pub fn axial_modulus(r: &Rotation, params: &CpParams) -> f64 {
    let (c11, c12, c44) = (params.c11 * 1000.0, params.c12 * 1000.0, params.c44 * 1000.0);
    let den = (c11 - c12) * (c11 + 2.0 * c12);
    let s11 = (c11 + c12) / den;
    let s12 = -c12 / den;
    let s44 = 1.0 / c44;
    let l = r[0];
    let j = l[0] * l[0] * l[1] * l[1] + l[1] * l[1] * l[2] * l[2] + l[2] * l[2] * l[0] * l[0];
    1.0 / (s11 - 2.0 * (s11 - s12 - 0.5 * s44) * j)
}

struct CpCell {
    e: f64,
    schmid: [f64; 12],
}

impl CpCell {
    /// `(sum_a m_a gdot_a, d/dsigma of it, sum_a |gdot_a|)`.
    fn rates(&self, sigma: f64, g: f64, p: &CpParams) -> (f64, f64, f64) {
        let (mut flow, mut dflow, mut total) = (0.0, 0.0, 0.0);
        for &m in &self.schmid {
            let x = m * sigma / g;
            let clipped = x.abs() > p.rate_clip;
            let xc = x.clamp(-p.rate_clip, p.rate_clip);
            let mag = xc.abs().powf(p.m - 1.0);
            let gd = p.gamma0 * mag * xc;
            flow += m * gd;
            total += gd.abs();
            if !clipped {
                dflow += m * p.gamma0 * p.m * mag * m / g;
            }
        }
        (flow, dflow, total)
    }
}

/// Uniaxial response of one crystal under the imposed strain program, with
/// backward-Euler slip and a scalar slip resistance.
pub fn cp_cell_uniaxial(program: &LoadingProgram, r: &Rotation, params: &CpParams) -> Result<Trajectory> {
    Trajectory::new(program.strains(), cp_stress(program, r, params)?)
}

pub fn cp_stress(program: &LoadingProgram, r: &Rotation, params: &CpParams) -> Result<Vec<f64>> {
    program.validate()?;
    let cell = CpCell {
        e: axial_modulus(r, params),
        schmid: schmid_factors(r),
    };
    let dt = program.dt();
    let (mut sigma, mut ep, mut g) = (0.0f64, 0.0f64, params.g0);
    let mut out = Vec::with_capacity(program.steps);
    for eps in program.strains() {
        let trial = cell.e * (eps - ep);
        let mut g_new = g;
        let mut converged_g = false;
        for _ in 0..RETURN_MAP_MAX_ITER {
            sigma = solve_stress(&cell, trial, sigma, g_new, dt, params)?;
            let (_, _, total) = cell.rates(sigma, g_new, params);
            let g_next = (g + dt * params.h * total) / (1.0 + dt * params.rd * total);
            let done = (g_next - g_new).abs() <= 1e-13 * g_new.abs();
            g_new = g_next;
            if done {
                converged_g = true;
                break;
            }
        }
        if !converged_g {
            return Err(Error::NonConvergent {
                iterations: RETURN_MAP_MAX_ITER,
                residual: f64::NAN,
            });
        }
        sigma = solve_stress(&cell, trial, sigma, g_new, dt, params)?;
        let (flow, _, _) = cell.rates(sigma, g_new, params);
        ep += dt * flow;
        g = g_new;
        out.push(sigma);
    }
    Ok(out)
}

/// Root of `sigma - E (eps - ep_n - dt * flow(sigma))`, which is strictly
/// increasing in `sigma` and bracketed by `0` and the elastic trial stress.
fn solve_stress(cell: &CpCell, trial: f64, guess: f64, g: f64, dt: f64, p: &CpParams) -> Result<f64> {
    let (mut lo, mut hi) = if trial >= 0.0 { (0.0, trial) } else { (trial, 0.0) };
    if lo == hi {
        return Ok(trial);
    }
    let mut s = guess.clamp(lo, hi);
    let tol = RETURN_MAP_TOL * trial.abs().max(1.0);
    let mut res = f64::NAN;
    for _ in 0..RETURN_MAP_MAX_ITER {
        let (flow, dflow, _) = cell.rates(s, g, p);
        res = s - trial + cell.e * dt * flow;
        if res.abs() <= tol {
            return Ok(s);
        }
        if res > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = 1.0 + cell.e * dt * dflow;
        let next = s - res / d;
        s = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
            return Ok(s);
        }
    }
    Err(Error::NonConvergent {
        iterations: RETURN_MAP_MAX_ITER,
        residual: res,
    })
}

/// Volume average `sum_c v_c s_c(t) / (sum_c v_c + void_volume)`.
pub fn homogenize(cells: &[Vec<f64>], volumes: &[f64], void_volume: f64) -> Result<Vec<f64>> {
    if cells.len() != volumes.len() {
        return Err(Error::Shape(format!("{} trajectories for {} volumes", cells.len(), volumes.len())));
    }
    if cells.is_empty() {
        return Err(Error::Empty("cell trajectories".into()));
    }
    let t = cells[0].len();
    if cells.iter().any(|c| c.len() != t) {
        return Err(Error::Shape("cell trajectories differ in length".into()));
    }
    let total: f64 = volumes.iter().sum::<f64>() + void_volume;
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("total volume must be positive".into()));
    }
    let mut out = vec![0.0; t];
    for (c, &v) in cells.iter().zip(volumes) {
        for (o, s) in out.iter_mut().zip(c) {
            *o += v * s;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Strength of the neighbour-coupling knockdown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knockdown {
    /// Maximum relative loss at a cell surrounded by strongly misoriented neighbours.
    pub grain_boundary: f64,
    /// Maximum relative loss at a cell whose face neighbours are all void.
    pub void: f64,
    /// Orientation difference at which the grain-boundary loss saturates.
    pub misorientation_scale: f64,
}

impl Default for Knockdown {
    fn default() -> Self {
        Self {
            grain_boundary: 0.5,
            void: 0.5,
            misorientation_scale: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl Knockdown {
    pub fn none() -> Self {
        Self {
            grain_boundary: 0.0,
            void: 0.0,
            ..Self::default()
        }
    }
}

/// Per-cell stress factor `k_c`.
pub fn cell_knockdown(micro: &Microstructure, kd: &Knockdown) -> Vec<f64> {
    if let Some(p) = &micro.porous {
        return p
            .void_faces
            .iter()
            .zip(&p.box_faces)
            .map(|(&v, &b)| 1.0 - kd.void * v as f64 / b.max(1) as f64)
            .collect();
    }
    let n = micro.complex.len();
    if micro.orientation.is_none() || kd.grain_boundary == 0.0 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|c| {
            let nb = &micro.complex.cells()[c].face_neighbors;
            if nb.is_empty() {
                return 1.0;
            }
            let pc = micro.orientation_of(c);
            let s: f64 = nb
                .iter()
                .map(|&j| {
                    let pj = micro.orientation_of(j);
                    let d = pc.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    (d / kd.misorientation_scale).min(1.0)
                })
                .sum();
            1.0 - kd.grain_boundary * s / nb.len() as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstitutiveModel {
    J2(J2Params),
    Cp(CpParams),
    /// `modulus * <phi_channel> * strain` with a volume-weighted channel mean;
    /// a smooth, exactly learnable reference task.
    Linear { modulus: f64, channel: usize },
}

fn grain_rotations(micro: &Microstructure) -> Result<Vec<Rotation>> {
    if let Some(r) = &micro.grain_rotations {
        return Ok(r.clone());
    }
    let labels = micro.grain_labels.as_ref().ok_or(Error::MissingLabels)?;
    let mode = micro
        .orientation
        .ok_or_else(|| Error::InvalidArgument("crystal labels need orientation channels".into()))?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut rots = vec![None; k];
    for (c, &g) in labels.iter().enumerate() {
        if rots[g].is_none() {
            let o = micro.orientation_of(c);
            rots[g] = Some(match mode {
                OrientationMode::InPlaneAngle => rotation_z(o[0]),
                OrientationMode::AxisAngle => rotation_from_vector([o[0], o[1], o[2]]),
            });
        }
    }
    Ok(rots.into_iter().map(|r| r.expect("every grain has a cell")).collect())
}

/// Homogenized stress history of one realization.
pub fn label(micro: &Microstructure, program: &LoadingProgram, model: &ConstitutiveModel, kd: &Knockdown) -> Result<Trajectory> {
    let k = cell_knockdown(micro, kd);
    let vols = micro.complex.volumes();
    let void_volume = micro
        .porous
        .as_ref()
        .map_or(0.0, |p| (p.box_volume - micro.complex.total_volume()).max(0.0));
    let weights: Vec<f64> = vols.iter().zip(&k).map(|(v, k)| v * k).collect();
    let total = micro.complex.total_volume() + void_volume;
    let stress = match model {
        ConstitutiveModel::J2(p) => {
            let (s, _) = j2_uniaxial_with_plastic(program, p)?;
            let f: f64 = weights.iter().sum::<f64>() / total;
            s.iter().map(|v| v * f).collect()
        }
        ConstitutiveModel::Cp(p) => {
            let rots = grain_rotations(micro)?;
            let labels = micro.grain_labels.as_ref().ok_or(Error::MissingLabels)?;
            let mut w = vec![0.0; rots.len()];
            for (&g, &wc) in labels.iter().zip(&weights) {
                w[g] += wc;
            }
            let grains: Vec<Vec<f64>> = rots.iter().map(|r| cp_stress(program, r, p)).collect::<Result<_>>()?;
            let mut out = vec![0.0; program.steps];
            for (gs, wg) in grains.iter().zip(&w) {
                for (o, s) in out.iter_mut().zip(gs) {
                    *o += wg * s;
                }
            }
            out.iter_mut().for_each(|o| *o /= total);
            out
        }
        ConstitutiveModel::Linear { modulus, channel } => {
            let x = &micro.features.values;
            if *channel >= x.ncols() {
                return Err(Error::Shape(format!("channel {channel} of {}", x.ncols())));
            }
            let m: f64 = vols.iter().zip(x.column(*channel)).map(|(v, p)| v * p).sum::<f64>()
                / micro.complex.total_volume();
            program.strains().iter().map(|e| modulus * m * e).collect()
        }
    };
    Trajectory::new(program.strains(), stress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgen::{mat_mul, IDENTITY};

    #[test]
    fn voce_values() {
        let p = J2Params::default();
        assert!((voce_yield(0.0, &p).unwrap() - 36.4).abs() < 1e-12);
        assert!((voce_yield(1.0 / p.alpha, &p).unwrap() - (200.0 - 163.6 / std::f64::consts::E)).abs() < 1e-12);
        assert!((voce_yield(1.0, &p).unwrap() - 200.0).abs() < 1e-12);
        assert!(voce_yield(-1e-3, &p).is_err());
    }

    #[test]
    fn program_presets() {
        let p = LoadingProgram::cp_2d();
        let s = p.strains();
        assert_eq!(s.len(), 31);
        assert!((s[30] - 0.003).abs() < 1e-18);
        assert!(s[0] > 0.0);
        assert!(LoadingProgram::new(1.0, 0.1, 1).is_err());
    }

    #[test]
    fn j2_pure_elastic() {
        let p = J2Params::default();
        let prog = LoadingProgram::new(1.0, 0.5 * 36.4 / 59200.0, 10).unwrap();
        let t = j2_uniaxial(&prog, &p).unwrap();
        for (e, s) in t.strain.iter().zip(&t.stress) {
            assert!((s - 59200.0 * e).abs() < 1e-9);
        }
    }

    #[test]
    fn j2_stays_on_yield_surface() {
        let p = J2Params::default();
        let (s, ep) = j2_uniaxial_with_plastic(&LoadingProgram::porous(), &p).unwrap();
        for (si, ei) in s.iter().zip(&ep) {
            assert!(*si <= voce_yield(*ei, &p).unwrap() + 1e-8);
        }
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
        assert!((s.last().unwrap() - 200.0).abs() < 2.0);
    }

    #[test]
    fn cp_zero_strain_and_fixed_point() {
        let p = CpParams::default();
        assert!((p.h / p.rd - 122.41379310344827).abs() < 1e-12);
        let prog = LoadingProgram::cp_2d();
        let s = cp_stress(&prog, &IDENTITY, &p).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!(s.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn cp_cubic_reorientation() {
        let p = CpParams::default();
        let prog = LoadingProgram::cp_3d();
        let r = crate::microgen::rotation_from_vector([0.3, -0.7, 1.1]);
        let q = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let a = cp_stress(&prog, &r, &p).unwrap();
        let b = cp_stress(&prog, &mat_mul(&r, &q), &p).unwrap();
        let dev = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn homogenize_examples() {
        let t = vec![1.0, 2.0, 3.0];
        assert_eq!(homogenize(&[t.clone(), t.clone()], &[1.0, 1.0], 0.0).unwrap(), t);
        assert_eq!(homogenize(&[t.clone()], &[1.0], 1.0).unwrap(), vec![0.5, 1.0, 1.5]);
        assert!(homogenize(&[t], &[1.0, 2.0], 0.0).is_err());
    }
}
