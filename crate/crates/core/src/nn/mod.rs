//! LeNet-style CNN whose five linear layers run as im2col matrix products,
//! with optional additive Gaussian noise on every MVM output.

mod mnist;
mod train;
mod weights;

pub use mnist::{load_mnist, load_mnist_test, read_idx_images, read_idx_labels, Dataset, Mnist, Splits, IMAGE_SIDE};
pub use train::{train, train_or_load, TrainConfig};
pub use weights::{read_weights, write_weights, MAGIC};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};

pub const NUM_LAYERS: usize = 5;
pub const NUM_CLASSES: usize = 10;
/// `(M, N)` of each MVM.
pub const SHAPES: [(usize, usize); NUM_LAYERS] = [(6, 25), (16, 150), (120, 400), (84, 120), (10, 84)];
/// Windows per image for each layer.
pub const WINDOWS: [usize; NUM_LAYERS] = [784, 100, 1, 1, 1];
const KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// conv(6) → ReLU → avgpool → conv(16) → ReLU → avgpool → fc 120 → fc 84 → fc 10.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub layers: Vec<Linear>,
}

impl CnnModel {
    pub fn zeros() -> Self {
        let layers =
            SHAPES.iter().map(|&(m, n)| Linear { w: DMatrix::zeros(m, n), b: DVector::zeros(m) }).collect();
        Self { layers }
    }

    /// He-uniform initialisation.
    pub fn init(rng: &mut StreamRng) -> Self {
        let layers = SHAPES
            .iter()
            .map(|&(m, n)| {
                let lim = (6.0 / n as f64).sqrt();
                Linear { w: DMatrix::from_fn(m, n, |_, _| rng.random_range(-lim..lim)), b: DVector::zeros(m) }
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != NUM_LAYERS {
            return Err(Error::ShapeMismatch {
                expected: format!("{NUM_LAYERS} layers"),
                found: format!("{} layers", self.layers.len()),
            });
        }
        for (l, (layer, &(m, n))) in self.layers.iter().zip(&SHAPES).enumerate() {
            if layer.w.shape() != (m, n) || layer.b.len() != m {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {} as {m}x{n}", l + 1),
                    found: format!("{}x{} with {} biases", layer.w.nrows(), layer.w.ncols(), layer.b.len()),
                });
            }
            if layer.w.iter().chain(layer.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("layer {} has non-finite weights", l + 1)));
            }
        }
        Ok(())
    }
}

/// Unfolds the `k × k` windows of a `c × h × w` map into columns with row
/// index `ci·k² + ky·k + kx`.
pub fn im2col(fm: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize) -> Result<DMatrix<f64>> {
    if fm.len() != c * h * w {
        return Err(Error::LengthMismatch { left: fm.len(), right: c * h * w });
    }
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::ShapeMismatch { expected: format!("kernel <= {h}x{w}"), found: format!("{k}x{k}") });
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = DMatrix::zeros(c * k * k, oh * ow);
    unfold_into(fm, c, h, w, k, stride, &mut out, 0);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn unfold_into(fm: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, out: &mut DMatrix<f64>, col0: usize) {
    let ow = (w - k) / stride + 1;
    let oh = (h - k) / stride + 1;
    for oy in 0..oh {
        for ox in 0..ow {
            let col = col0 + oy * ow + ox;
            for ci in 0..c {
                for ky in 0..k {
                    let src = ci * h * w + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        out[(ci * k * k + ky * k + kx, col)] = fm[src + kx];
                    }
                }
            }
        }
    }
}

/// Feature maps of a batch: row = channel, column = `b·h·w + y·w + x`.
fn batch_im2col(maps: &DMatrix<f64>, c: usize, side: usize, b: usize) -> DMatrix<f64> {
    let o = side - KERNEL + 1;
    let mut out = DMatrix::zeros(c * KERNEL * KERNEL, b * o * o);
    let mut buf = vec![0.0; c * side * side];
    for n in 0..b {
        for ci in 0..c {
            for s in 0..side * side {
                buf[ci * side * side + s] = maps[(ci, n * side * side + s)];
            }
        }
        unfold_into(&buf, c, side, side, KERNEL, 1, &mut out, n * o * o);
    }
    out
}

/// Adjoint of [`batch_im2col`].
fn batch_col2im(cols: &DMatrix<f64>, c: usize, side: usize, b: usize) -> DMatrix<f64> {
    let o = side - KERNEL + 1;
    let mut out = DMatrix::zeros(c, b * side * side);
    for n in 0..b {
        for oy in 0..o {
            for ox in 0..o {
                let col = n * o * o + oy * o + ox;
                for ci in 0..c {
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            out[(ci, n * side * side + (oy + ky) * side + ox + kx)] +=
                                cols[(ci * KERNEL * KERNEL + ky * KERNEL + kx, col)];
                        }
                    }
                }
            }
        }
    }
    out
}

fn avg_pool(maps: &DMatrix<f64>, side: usize, b: usize) -> DMatrix<f64> {
    let h = side / 2;
    DMatrix::from_fn(maps.nrows(), b * h * h, |c, j| {
        let (n, y, x) = (j / (h * h), (j % (h * h)) / h, j % h);
        let base = n * side * side + 2 * y * side + 2 * x;
        0.25 * (maps[(c, base)] + maps[(c, base + 1)] + maps[(c, base + side)] + maps[(c, base + side + 1)])
    })
}

fn avg_unpool(grad: &DMatrix<f64>, side: usize, b: usize) -> DMatrix<f64> {
    let h = side / 2;
    DMatrix::from_fn(grad.nrows(), b * side * side, |c, j| {
        let (n, y, x) = (j / (side * side), (j % (side * side)) / side, j % side);
        0.25 * grad[(c, n * h * h + (y / 2) * h + x / 2)]
    })
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Per-layer, per-sample noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLevels {
    /// `sigma[l][n]`.
    pub sigma: Vec<Vec<f64>>,
}

impl NoiseLevels {
    /// `σ_ℓ = ε_ℓ sqrt(S_ref^(ℓ))` for every sample.
    pub fn uniform(eps: &[f64], stats: &CalibrationStats, batch: usize) -> Self {
        let sigma = eps.iter().zip(&stats.s_ref).map(|(e, s)| vec![e * s.sqrt(); batch]).collect();
        Self { sigma }
    }

    /// `eps[l][n]` per layer and sample.
    pub fn per_sample(eps: &[Vec<f64>], stats: &CalibrationStats) -> Self {
        let sigma = eps.iter().zip(&stats.s_ref).map(|(e, s)| e.iter().map(|v| v * s.sqrt()).collect()).collect();
        Self { sigma }
    }
}

/// Intermediate values of one batch forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub batch: usize,
    /// MVM inputs (`N × B·P`).
    pub inputs: Vec<DMatrix<f64>>,
    /// Noiseless MVM outputs `W x` (`M × B·P`).
    pub mvm: Vec<DMatrix<f64>>,
    /// Unit Gaussian draws behind the noise, when noise was applied.
    pub draws: Vec<Option<DMatrix<f64>>>,
    /// `W x + b + noise`.
    pub pre: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn logits(&self) -> &DMatrix<f64> {
        &self.pre[NUM_LAYERS - 1]
    }
}

/// Computes one layer's `W x` from `(layer index, W, x)`.
pub type MvmFn<'a> = dyn FnMut(usize, &DMatrix<f64>, &DMatrix<f64>) -> Result<DMatrix<f64>> + 'a;

struct Pass<'a, 'b> {
    noise: Option<(&'a NoiseLevels, &'a mut StreamRng)>,
    mvm: &'b mut MvmFn<'b>,
}

fn linear(layer: &Linear, x: DMatrix<f64>, l: usize, pass: &mut Pass, tape: &mut Tape) -> Result<()> {
    let mvm = (pass.mvm)(l, &layer.w, &x)?;
    if mvm.shape() != (layer.w.nrows(), x.ncols()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", layer.w.nrows(), x.ncols()),
            found: format!("{}x{}", mvm.nrows(), mvm.ncols()),
        });
    }
    let noise = &mut pass.noise;
    let mut pre = mvm.clone();
    for mut col in pre.column_iter_mut() {
        col += &layer.b;
    }
    let mut draw = None;
    if let Some((lv, rng)) = noise.as_mut() {
        let per = mvm.ncols() / tape.batch;
        let sig = &lv.sigma[l];
        if sig.iter().any(|s| *s != 0.0) {
            let g = DMatrix::from_fn(mvm.nrows(), mvm.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            for (j, mut col) in pre.column_iter_mut().enumerate() {
                col.axpy(sig[j / per], &g.column(j), 1.0);
            }
            draw = Some(g);
        }
    }
    tape.inputs.push(x);
    tape.mvm.push(mvm);
    tape.draws.push(draw);
    tape.pre.push(pre);
    Ok(())
}

/// Forward pass over images given as columns of `32·32` pixels.
pub fn forward_tape(
    model: &CnnModel,
    images: &DMatrix<f64>,
    noise: Option<(&NoiseLevels, &mut StreamRng)>,
) -> Result<Tape> {
    forward_with(model, images, noise, &mut |_, w, x| Ok(w * x))
}

/// [`forward_tape`] with the layer products supplied by `mvm`, e.g. an
/// emulated analog computation.
pub fn forward_with<'b>(
    model: &CnnModel,
    images: &DMatrix<f64>,
    noise: Option<(&NoiseLevels, &mut StreamRng)>,
    mvm: &'b mut MvmFn<'b>,
) -> Result<Tape> {
    let side = IMAGE_SIDE;
    if images.nrows() != side * side {
        return Err(Error::ShapeMismatch { expected: format!("{} rows", side * side), found: images.nrows().to_string() });
    }
    let b = images.ncols();
    if let Some((lv, _)) = &noise {
        if lv.sigma.len() != NUM_LAYERS || lv.sigma.iter().any(|s| s.len() != b) {
            return Err(Error::ShapeMismatch {
                expected: format!("{NUM_LAYERS} x {b} noise levels"),
                found: format!("{} layers", lv.sigma.len()),
            });
        }
    }
    let mut tape = Tape {
        batch: b,
        inputs: Vec::with_capacity(NUM_LAYERS),
        mvm: Vec::with_capacity(NUM_LAYERS),
        draws: Vec::with_capacity(NUM_LAYERS),
        pre: Vec::with_capacity(NUM_LAYERS),
    };
    let mut pass = Pass { noise, mvm };
    let l = &model.layers;
    let maps = DMatrix::from_column_slice(1, b * side * side, images.as_slice());
    linear(&l[0], batch_im2col(&maps, 1, side, b), 0, &mut pass, &mut tape)?;
    let p1 = avg_pool(&relu(&tape.pre[0]), 28, b);
    linear(&l[1], batch_im2col(&p1, 6, 14, b), 1, &mut pass, &mut tape)?;
    let p2 = avg_pool(&relu(&tape.pre[1]), 10, b);
    let flat = DMatrix::from_fn(400, b, |r, n| p2[(r / 25, n * 25 + r % 25)]);
    linear(&l[2], flat, 2, &mut pass, &mut tape)?;
    let a3 = relu(&tape.pre[2]);
    linear(&l[3], a3, 3, &mut pass, &mut tape)?;
    let a4 = relu(&tape.pre[3]);
    linear(&l[4], a4, 4, &mut pass, &mut tape)?;
    Ok(tape)
}

pub fn forward(model: &CnnModel, images: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(forward_tape(model, images, None)?.pre.swap_remove(NUM_LAYERS - 1))
}

pub fn forward_noisy(
    model: &CnnModel,
    images: &DMatrix<f64>,
    levels: &NoiseLevels,
    rng: &mut StreamRng,
) -> Result<DMatrix<f64>> {
    Ok(forward_tape(model, images, Some((levels, rng)))?.pre.swap_remove(NUM_LAYERS - 1))
}

/// Mean cross entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[u8]) -> (f64, DMatrix<f64>) {
    let b = logits.ncols();
    let mut grad = DMatrix::zeros(logits.nrows(), b);
    let mut loss = 0.0;
    for (n, col) in logits.column_iter().enumerate() {
        let mx = col.max();
        let z: f64 = col.iter().map(|v| (v - mx).exp()).sum();
        let y = labels[n] as usize;
        loss += z.ln() + mx - col[y];
        for c in 0..col.len() {
            grad[(c, n)] = (col[c] - mx).exp() / z / b as f64;
        }
        grad[(y, n)] -= 1.0 / b as f64;
    }
    (loss / b as f64, grad)
}

pub fn argmax(col: nalgebra::DVectorView<f64>) -> usize {
    col.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best }).0
}

/// Gradients of the loss with respect to each layer's pre-activation.
pub fn backward(model: &CnnModel, tape: &Tape, dlogits: DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let b = tape.batch;
    let l = &model.layers;
    let gate = |d: DMatrix<f64>, pre: &DMatrix<f64>| d.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 });
    let d5 = dlogits;
    let d4 = gate(l[4].w.tr_mul(&d5), &tape.pre[3]);
    let d3 = gate(l[3].w.tr_mul(&d4), &tape.pre[2]);
    let df = l[2].w.tr_mul(&d3);
    let dp2 = DMatrix::from_fn(16, b * 25, |c, j| df[(c * 25 + j % 25, j / 25)]);
    let d2 = gate(avg_unpool(&dp2, 10, b), &tape.pre[1]);
    let dp1 = batch_col2im(&l[1].w.tr_mul(&d2), 6, 14, b);
    let d1 = gate(avg_unpool(&dp1, 28, b), &tape.pre[0]);
    vec![d1, d2, d3, d4, d5]
}

/// `(dW, db)` per layer from the pre-activation gradients.
pub fn weight_gradients(tape: &Tape, deltas: &[DMatrix<f64>]) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    deltas
        .iter()
        .zip(&tape.inputs)
        .map(|(d, x)| (d * x.transpose(), d.column_sum()))
        .collect()
}

/// Reference output power per decoded entry of each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    pub s_ref: Vec<f64>,
}

/// `s_ref = mean over samples and windows of ‖W x‖² / M` along the clean
/// forward pass.
pub fn calibrate_sref(model: &CnnModel, calib: &Dataset) -> Result<CalibrationStats> {
    if calib.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one sample".into()));
    }
    let mut acc = [0.0; NUM_LAYERS];
    for (images, _) in calib.batches(256) {
        let tape = forward_tape(model, &images, None)?;
        for (a, m) in acc.iter_mut().zip(&tape.mvm) {
            *a += m.norm_squared();
        }
    }
    let s_ref = acc
        .iter()
        .enumerate()
        .map(|(l, a)| a / (SHAPES[l].0 * WINDOWS[l] * calib.len()) as f64)
        .collect();
    Ok(CalibrationStats { s_ref })
}

/// Noise level assignment used by [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum EvalNoise {
    Clean,
    /// One root-NMSE target per layer.
    Uniform(Vec<f64>),
    /// `eps[l][k]` for clients `k`; sample `n` is served by client `n mod K`.
    PerClient(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub cross_entropy: f64,
}

/// Accuracy and mean cross entropy, averaged over `trials` noise draws.
/// Noise for batch `i` of trial `t` comes from substream `(t, i)` of
/// `seeds`, so results do not depend on evaluation order.
pub fn evaluate(
    model: &CnnModel,
    data: &Dataset,
    noise: &EvalNoise,
    stats: &CalibrationStats,
    trials: usize,
    seeds: &SeedStream,
) -> Result<EvalResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let trials = if matches!(noise, EvalNoise::Clean) { 1 } else { trials };
    let (mut correct, mut ce) = (0usize, 0.0);
    const BATCH: usize = 250;
    for t in 0..trials {
        let trial = seeds.child("trial", t as u64);
        for (i, (images, labels)) in data.batches(BATCH).enumerate() {
            let b = images.ncols();
            let logits = match noise {
                EvalNoise::Clean => forward(model, &images)?,
                EvalNoise::Uniform(eps) => {
                    let lv = NoiseLevels::uniform(eps, stats, b);
                    forward_noisy(model, &images, &lv, &mut trial.substream("batch", i as u64))?
                }
                EvalNoise::PerClient(eps) => {
                    let per: Vec<Vec<f64>> =
                        eps.iter().map(|e| (0..b).map(|n| e[(i * BATCH + n) % e.len()]).collect()).collect();
                    let lv = NoiseLevels::per_sample(&per, stats);
                    forward_noisy(model, &images, &lv, &mut trial.substream("batch", i as u64))?
                }
            };
            let (loss, _) = cross_entropy(&logits, &labels);
            ce += loss * b as f64;
            correct += logits.column_iter().zip(&labels).filter(|(c, y)| argmax(c.as_view()) == **y as usize).count();
        }
    }
    let n = (trials * data.len()) as f64;
    Ok(EvalResult { accuracy: correct as f64 / n, cross_entropy: ce / n })
}

/// Writes `eps_profile_id,trial,accuracy,cross_entropy` rows.
pub fn write_eval_csv<W: Write>(rows: &[(String, usize, EvalResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps_profile_id", "trial", "accuracy", "cross_entropy"])?;
    for (id, trial, r) in rows {
        w.write_record([id.clone(), trial.to_string(), format!("{:.6}", r.accuracy), format!("{:.6}", r.cross_entropy)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
