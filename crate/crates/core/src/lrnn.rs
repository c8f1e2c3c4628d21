//! Layer-recurrent (Elman-style) network: tanh hidden layer fed back through
//! a bank of unit delays, linear output. Forward simulation and the exact
//! Jacobian of the residuals with respect to all weights.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LrnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Architecture of the network. The hidden transfer is tanh, the output
/// transfer linear; delay taps apply to the hidden layer only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LrnnConfig {
    /// Number of driving input channels.
    pub n_inputs: usize,
    pub hidden_units: usize,
    /// Recurrent feedback taps on the hidden layer, 1-based depth.
    pub delays: usize,
}

impl LrnnConfig {
    pub fn new(n_inputs: usize, hidden_units: usize, delays: usize) -> Self {
        assert!(n_inputs >= 1 && hidden_units >= 1 && delays >= 1);
        Self {
            n_inputs,
            hidden_units,
            delays,
        }
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_units;
        h * self.n_inputs + h * h * self.delays + h + h + 1
    }

    fn offset_w_in(&self) -> usize {
        0
    }
    fn offset_w_rec(&self, d: usize) -> usize {
        let h = self.hidden_units;
        h * self.n_inputs + d * h * h
    }
    fn offset_b_h(&self) -> usize {
        let h = self.hidden_units;
        h * self.n_inputs + self.delays * h * h
    }
    fn offset_w_out(&self) -> usize {
        self.offset_b_h() + self.hidden_units
    }
    fn offset_b_out(&self) -> usize {
        self.offset_w_out() + self.hidden_units
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LrnnWeights {
    /// hidden_units x n_inputs.
    pub w_in: DMatrix<f64>,
    /// One hidden_units x hidden_units matrix per delay tap.
    pub w_rec: Vec<DMatrix<f64>>,
    pub b_h: DVector<f64>,
    pub w_out: DVector<f64>,
    pub b_out: f64,
}

impl LrnnWeights {
    pub fn zeros(config: &LrnnConfig) -> Self {
        let h = config.hidden_units;
        Self {
            w_in: DMatrix::zeros(h, config.n_inputs),
            w_rec: (0..config.delays).map(|_| DMatrix::zeros(h, h)).collect(),
            b_h: DVector::zeros(h),
            w_out: DVector::zeros(h),
            b_out: 0.0,
        }
    }

    /// Flattens into the parameter vector used by the optimizer. The layout
    /// is w_in (row-major), w_rec per tap (row-major), b_h, w_out, b_out.
    pub fn to_vector(&self, config: &LrnnConfig) -> DVector<f64> {
        let mut v = DVector::zeros(config.param_count());
        let h = config.hidden_units;
        let mut p = 0;
        for i in 0..h {
            for j in 0..config.n_inputs {
                v[p] = self.w_in[(i, j)];
                p += 1;
            }
        }
        for d in 0..config.delays {
            for i in 0..h {
                for j in 0..h {
                    v[p] = self.w_rec[d][(i, j)];
                    p += 1;
                }
            }
        }
        for i in 0..h {
            v[p] = self.b_h[i];
            p += 1;
        }
        for i in 0..h {
            v[p] = self.w_out[i];
            p += 1;
        }
        v[p] = self.b_out;
        v
    }

    pub fn from_vector(config: &LrnnConfig, v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), config.param_count());
        let h = config.hidden_units;
        let mut w = Self::zeros(config);
        let mut p = 0;
        for i in 0..h {
            for j in 0..config.n_inputs {
                w.w_in[(i, j)] = v[p];
                p += 1;
            }
        }
        for d in 0..config.delays {
            for i in 0..h {
                for j in 0..h {
                    w.w_rec[d][(i, j)] = v[p];
                    p += 1;
                }
            }
        }
        for i in 0..h {
            w.b_h[i] = v[p];
            p += 1;
        }
        for i in 0..h {
            w.w_out[i] = v[p];
            p += 1;
        }
        w.b_out = v[p];
        w
    }
}

/// Nguyen-Widrow initialization: hidden input-side weight rows drawn uniform
/// and renormalized to magnitude 0.7 * H^(1/n) with n the input fan-in,
/// biases spread uniformly across the active region, recurrent and output
/// layers small uniform. Deterministic per seed.
pub fn init_nguyen_widrow(config: &LrnnConfig, seed: u64) -> LrnnWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_units;
    let n = config.n_inputs;
    let magnitude = 0.7 * (h as f64).powf(1.0 / n as f64);

    let mut w = LrnnWeights::zeros(config);
    for i in 0..h {
        let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for v in &mut row {
            *v *= magnitude / norm;
        }
        for (j, &v) in row.iter().enumerate() {
            w.w_in[(i, j)] = v;
        }
        // Spread biases over [-magnitude, magnitude]; a lone unit sits at 0.
        w.b_h[i] = if h == 1 {
            0.0
        } else {
            magnitude * (2.0 * i as f64 / (h - 1) as f64 - 1.0)
        };
    }
    let rec_scale = 0.5 / ((h * config.delays) as f64).sqrt();
    for d in 0..config.delays {
        for i in 0..h {
            for j in 0..h {
                w.w_rec[d][(i, j)] = rng.gen_range(-rec_scale..rec_scale);
            }
        }
    }
    for i in 0..h {
        w.w_out[i] = rng.gen_range(-0.5..0.5);
    }
    w.b_out = rng.gen_range(-0.5..0.5);
    w
}

/// One training sequence: a K x n_inputs input matrix and K targets.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
}

fn check_inputs(config: &LrnnConfig, inputs: &DMatrix<f64>) -> Result<(), LrnnError> {
    if inputs.ncols() != config.n_inputs {
        return Err(LrnnError::ShapeMismatch(format!(
            "inputs have {} channels, config expects {}",
            inputs.ncols(),
            config.n_inputs
        )));
    }
    if inputs.nrows() == 0 {
        return Err(LrnnError::ShapeMismatch("empty input sequence".into()));
    }
    Ok(())
}

/// Simulates the network over one sequence from a zero initial state:
/// h(t) = tanh(W_in u(t) + sum_d W_rec,d h(t-d) + b_h), y(t) = W_out h(t) + b_out,
/// with h(t-d) = 0 for t-d < 0.
pub fn forward(
    config: &LrnnConfig,
    weights: &LrnnWeights,
    inputs: &DMatrix<f64>,
) -> Result<DVector<f64>, LrnnError> {
    check_inputs(config, inputs)?;
    let k = inputs.nrows();
    let h = config.hidden_units;
    let mut history: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut y = DVector::zeros(k);
    for t in 0..k {
        let u = inputs.row(t).transpose();
        let mut z = &weights.w_in * u + &weights.b_h;
        for d in 0..config.delays {
            if t > d {
                z += &weights.w_rec[d] * &history[t - d - 1];
            } else if t == d {
                // h(-1) and earlier are zero; nothing to add.
            }
        }
        let ht = z.map(f64::tanh);
        y[t] = weights.w_out.dot(&ht) + weights.b_out;
        history.push(ht);
        let _ = h;
    }
    Ok(y)
}

/// Residuals (model output minus target) and the exact Jacobian of the
/// residuals with respect to the flattened parameter vector, accumulated over
/// all sequences. Sensitivities are propagated forward through the delay
/// taps, which yields the same matrix as backpropagation through time.
pub fn jacobian(
    config: &LrnnConfig,
    weights: &LrnnWeights,
    data: &[Sequence],
) -> Result<(DVector<f64>, DMatrix<f64>), LrnnError> {
    if data.is_empty() {
        return Err(LrnnError::ShapeMismatch("empty dataset".into()));
    }
    let p = config.param_count();
    let n_rows: usize = data.iter().map(|s| s.inputs.nrows()).sum();
    let mut jac = DMatrix::zeros(n_rows, p);
    let mut res = DVector::zeros(n_rows);
    let h = config.hidden_units;
    let n_in = config.n_inputs;

    let mut row0 = 0;
    for seq in data {
        check_inputs(config, &seq.inputs)?;
        if seq.targets.len() != seq.inputs.nrows() {
            return Err(LrnnError::ShapeMismatch(format!(
                "{} targets for {} input steps",
                seq.targets.len(),
                seq.inputs.nrows()
            )));
        }
        let k = seq.inputs.nrows();
        let mut h_hist: Vec<DVector<f64>> = Vec::with_capacity(k);
        // S(t) = dh(t)/dtheta, H x P.
        let mut s_hist: Vec<DMatrix<f64>> = Vec::with_capacity(k);

        for t in 0..k {
            let u = seq.inputs.row(t).transpose();
            let mut z = &weights.w_in * &u + &weights.b_h;
            let mut zs = DMatrix::zeros(h, p);
            for d in 0..config.delays {
                if t > d {
                    let prev_h = &h_hist[t - d - 1];
                    let prev_s = &s_hist[t - d - 1];
                    z += &weights.w_rec[d] * prev_h;
                    zs += &weights.w_rec[d] * prev_s;
                    // explicit partials wrt this tap's own weights
                    let off = config.offset_w_rec(d);
                    for i in 0..h {
                        for j in 0..h {
                            zs[(i, off + i * h + j)] += prev_h[j];
                        }
                    }
                }
            }
            // explicit partials wrt input weights and hidden bias
            let off_in = config.offset_w_in();
            let off_b = config.offset_b_h();
            for i in 0..h {
                for j in 0..n_in {
                    zs[(i, off_in + i * n_in + j)] += u[j];
                }
                zs[(i, off_b + i)] += 1.0;
            }

            let ht = z.map(f64::tanh);
            // S = diag(1 - h^2) * dz/dtheta
            let mut st = zs;
            for i in 0..h {
                let g = 1.0 - ht[i] * ht[i];
                for c in 0..p {
                    st[(i, c)] *= g;
                }
            }

            let y = weights.w_out.dot(&ht) + weights.b_out;
            res[row0 + t] = y - seq.targets[t];
            // dy/dtheta = w_out^T S + e(w_out)*h + e(b_out)
            let dy = weights.w_out.transpose() * &st;
            for c in 0..p {
                jac[(row0 + t, c)] = dy[(0, c)];
            }
            let off_out = config.offset_w_out();
            for i in 0..h {
                jac[(row0 + t, off_out + i)] += ht[i];
            }
            jac[(row0 + t, config.offset_b_out())] += 1.0;

            h_hist.push(ht);
            s_hist.push(st);
        }
        row0 += k;
    }
    Ok((res, jac))
}
