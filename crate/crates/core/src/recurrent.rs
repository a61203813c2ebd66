//! LSTM over the loading history and the linear stress head.
//!
//! Gate layout follows the common fused convention: one input matrix
//! `W (input x 4H)`, one recurrent matrix `U (H x 4H)` and a single bias of
//! length `4H`, with column blocks ordered input, forget, cell, output.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::outer;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<T> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Array2<T>,
    pub u: Array2<T>,
    pub b: Array1<T>,
}

/// Per-step time series of strain and stress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

impl Trajectory {
    pub fn new(strain: Vec<f64>, stress: Vec<f64>) -> Result<Self> {
        if strain.len() != stress.len() {
            return Err(Error::Shape(format!(
                "{} strain steps but {} stress steps",
                strain.len(),
                stress.len()
            )));
        }
        if strain.len() < 2 {
            return Err(Error::InvalidArgument("a trajectory needs at least two steps".into()));
        }
        if strain.iter().chain(&stress).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(Self { strain, stress })
    }

    pub fn len(&self) -> usize {
        self.strain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strain.is_empty()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: Array2::zeros((input_size, 4 * hidden_size)),
            u: Array2::zeros((hidden_size, 4 * hidden_size)),
            b: Array1::zeros(4 * hidden_size),
        }
    }

    /// Glorot-uniform input weights, uniform recurrent weights scaled by
    /// `1/sqrt(H)`, forget bias 1.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let h4 = 4 * hidden_size;
        let lw = (6.0 / (input_size + h4) as f64).sqrt();
        let lu = 1.0 / (hidden_size as f64).sqrt();
        let w = Array2::from_shape_fn((input_size, h4), |_| T::lit(rng.gen_range(-lw..lw)));
        let u = Array2::from_shape_fn((hidden_size, h4), |_| T::lit(rng.gen_range(-lu..lu)));
        let mut b = Array1::zeros(h4);
        b.slice_mut(s![hidden_size..2 * hidden_size]).fill(T::one());
        Self {
            input_size,
            hidden_size,
            w,
            u,
            b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }
}

/// Activated gates and states of one step, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct StepCache<T> {
    pub input: Array1<T>,
    pub h_prev: Array1<T>,
    pub c_prev: Array1<T>,
    pub gates: Array1<T>,
    pub c: Array1<T>,
    pub h: Array1<T>,
}

pub fn lstm_step<T: Scalar>(
    state: (&Array1<T>, &Array1<T>),
    input: &Array1<T>,
    params: &LstmParams<T>,
) -> Result<(Array1<T>, Array1<T>)> {
    let cache = lstm_step_cached(state, input, params)?;
    Ok((cache.h, cache.c))
}

pub fn lstm_step_cached<T: Scalar>(
    state: (&Array1<T>, &Array1<T>),
    input: &Array1<T>,
    params: &LstmParams<T>,
) -> Result<StepCache<T>> {
    let hs = params.hidden_size;
    let (h, c) = state;
    if input.len() != params.input_size || h.len() != hs || c.len() != hs {
        return Err(Error::Shape(format!(
            "LSTM expects input {} / hidden {}, got {} / {}",
            params.input_size,
            hs,
            input.len(),
            h.len()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM input".into()));
    }
    let mut z = input.dot(&params.w) + h.dot(&params.u) + &params.b;
    for k in 0..hs {
        z[k] = sigmoid(z[k]);
        z[hs + k] = sigmoid(z[hs + k]);
        z[2 * hs + k] = z[2 * hs + k].tanh();
        z[3 * hs + k] = sigmoid(z[3 * hs + k]);
    }
    let mut c_new = Array1::zeros(hs);
    let mut h_new = Array1::zeros(hs);
    for k in 0..hs {
        c_new[k] = z[hs + k] * c[k] + z[k] * z[2 * hs + k];
        h_new[k] = z[3 * hs + k] * c_new[k].tanh();
    }
    Ok(StepCache {
        input: input.clone(),
        h_prev: h.clone(),
        c_prev: c.clone(),
        gates: z,
        c: c_new,
        h: h_new,
    })
}

/// Runs the LSTM from a zero state over `[features, strain_t]` for each step
/// and returns the `T x H` hidden series.
pub fn unroll<T: Scalar>(features: &Array1<T>, strain: &[T], params: &LstmParams<T>) -> Result<Array2<T>> {
    Ok(unroll_cached(features, strain, params)?.0)
}

pub fn unroll_cached<T: Scalar>(
    features: &Array1<T>,
    strain: &[T],
    params: &LstmParams<T>,
) -> Result<(Array2<T>, Vec<StepCache<T>>)> {
    if strain.is_empty() {
        return Err(Error::Empty("strain series".into()));
    }
    let hs = params.hidden_size;
    let mut h = Array1::zeros(hs);
    let mut c = Array1::zeros(hs);
    let mut input = Array1::zeros(features.len() + 1);
    input.slice_mut(s![..features.len()]).assign(features);
    let mut hidden = Array2::zeros((strain.len(), hs));
    let mut caches = Vec::with_capacity(strain.len());
    for (t, &e) in strain.iter().enumerate() {
        input[features.len()] = e;
        let step = lstm_step_cached((&h, &c), &input, params)?;
        hidden.row_mut(t).assign(&step.h);
        h = step.h.clone();
        c = step.c.clone();
        caches.push(step);
    }
    Ok((hidden, caches))
}

#[derive(Clone, Debug)]
pub struct LstmGrads<T> {
    pub w: Array2<T>,
    pub u: Array2<T>,
    pub b: Array1<T>,
    /// Gradient with respect to the time-constant feature vector.
    pub features: Array1<T>,
}

/// Backpropagation through time given `dL/dh_t` for every step.
pub fn unroll_backward<T: Scalar>(
    caches: &[StepCache<T>],
    d_hidden: &Array2<T>,
    params: &LstmParams<T>,
) -> LstmGrads<T> {
    let hs = params.hidden_size;
    let n_feat = params.input_size - 1;
    let mut dw = Array2::zeros(params.w.dim());
    let mut du = Array2::zeros(params.u.dim());
    let mut db = Array1::zeros(params.b.len());
    let mut dfeat = Array1::zeros(n_feat);
    let mut dh_next = Array1::<T>::zeros(hs);
    let mut dc_next = Array1::<T>::zeros(hs);
    let one = T::one();
    for (t, sc) in caches.iter().enumerate().rev() {
        let dh = &d_hidden.row(t) + &dh_next;
        let g = &sc.gates;
        let mut dz = Array1::zeros(4 * hs);
        let mut dc_prev = Array1::zeros(hs);
        for k in 0..hs {
            let (i, f, gg, o) = (g[k], g[hs + k], g[2 * hs + k], g[3 * hs + k]);
            let tc = sc.c[k].tanh();
            let dc = dc_next[k] + dh[k] * o * (one - tc * tc);
            dz[k] = dc * gg * i * (one - i);
            dz[hs + k] = dc * sc.c_prev[k] * f * (one - f);
            dz[2 * hs + k] = dc * i * (one - gg * gg);
            dz[3 * hs + k] = dh[k] * tc * o * (one - o);
            dc_prev[k] = dc * f;
        }
        dw += &outer(&sc.input, &dz);
        du += &outer(&sc.h_prev, &dz);
        db += &dz;
        let dx = params.w.dot(&dz);
        dfeat += &dx.slice(s![..n_feat]);
        dh_next = params.u.dot(&dz);
        dc_next = dc_prev;
    }
    LstmGrads {
        w: dw,
        u: du,
        b: db,
        features: dfeat,
    }
}

/// Affine per-step readout `y_t = h_t . w + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead<T> {
    pub weight: Array1<T>,
    pub bias: T,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            weight: Array1::zeros(hidden_size),
            bias: T::zero(),
        }
    }

    pub fn init<R: Rng + ?Sized>(hidden_size: usize, rng: &mut R) -> Self {
        let l = (6.0 / (hidden_size + 1) as f64).sqrt();
        Self {
            weight: Array1::from_shape_fn(hidden_size, |_| T::lit(rng.gen_range(-l..l))),
            bias: T::zero(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + 1
    }
}

pub fn linear_head<T: Scalar>(hidden: &Array2<T>, head: &LinearHead<T>) -> Result<Array1<T>> {
    if hidden.ncols() != head.weight.len() {
        return Err(Error::Shape(format!(
            "head of width {} applied to hidden size {}",
            head.weight.len(),
            hidden.ncols()
        )));
    }
    Ok(hidden.dot(&head.weight) + head.bias)
}

/// Returns `(d_weight, d_bias, d_hidden)`.
pub fn linear_head_backward<T: Scalar>(
    hidden: &Array2<T>,
    head: &LinearHead<T>,
    dy: ArrayView1<T>,
) -> (Array1<T>, T, Array2<T>) {
    let dw = hidden.t().dot(&dy);
    let db = dy.sum();
    let dh = dy.insert_axis(Axis(1)).dot(&head.weight.view().insert_axis(Axis(0)));
    (dw, db, dh)
}
