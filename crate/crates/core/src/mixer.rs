//! Block-attention denoiser.
//!
//! One layer, one head. Every latent block in a window is flattened to a
//! vector, embedded linearly, offset by sinusoidal codes of its absolute
//! block index and of the noise level, mixed by scaled dot-product attention
//! across the window, and read out linearly as a velocity prediction:
//!
//! ```text
//! E = X·W_in + pos(i) + code(σ)
//! A = softmax(E·W_q (E·W_k)ᵀ / √d + mask)
//! Y = (E + A·E·W_v)·W_out
//! ```
//!
//! The kernels are generic over the float type. Inference and training run in
//! `f32`; gradient checks instantiate `f64`.

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::grid::{load_siv1, save_siv1, Rng, Video};
use crate::{Error, Result};

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Global gradient-norm ceiling applied by [`MixerParams::descend`].
pub const GRAD_CLIP: f64 = 100.0;

fn lit<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("float literal")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F = f32> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            ShapeMismatch,
            "{} values for a {rows}x{cols} matrix",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[F]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure!(r.len() == cols, ShapeMismatch, "ragged rows");
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[F] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · other`; each output row depends only on the same row of `self`.
    pub fn matmul(&self, other: &Matrix<F>) -> Matrix<F> {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == F::zero() {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj = *oj + aik * bkj;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix<F>) -> Matrix<F> {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == F::zero() {
                    continue;
                }
                let o = out.row_mut(i);
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj = *oj + ai * bj;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix<F>) -> Matrix<F> {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let s = self
                    .row(i)
                    .iter()
                    .zip(other.row(j))
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                out.set(i, j, s);
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix<F>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| G::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or_else(G::zero))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Bidirectional,
    Causal,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bi" | "bidirectional" => Ok(MaskMode::Bidirectional),
            "causal" => Ok(MaskMode::Causal),
            other => Err(Error::InvalidArgument(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// Sinusoidal code of a scalar position at width `d`.
fn sinusoid<F: Scalar>(pos: f64, d: usize) -> impl Iterator<Item = F> {
    (0..d).map(move |k| {
        let freq = 10000f64.powf(-((2 * (k / 2)) as f64) / d as f64);
        let arg = pos * freq;
        lit(if k % 2 == 0 { arg.sin() } else { arg.cos() })
    })
}

/// Fixed code of the absolute (1-based) block index.
pub fn position_code<F: Scalar>(index: usize, d: usize) -> Vec<F> {
    sinusoid(index as f64, d).collect()
}

/// Fixed code of the noise level, on the usual 0..1000 timestep scale.
pub fn sigma_code<F: Scalar>(sigma: F, d: usize) -> Vec<F> {
    sinusoid(sigma.to_f64().unwrap_or(0.0) * 1000.0, d).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerParams<F = f32> {
    /// `in_dim × d`
    pub w_in: Matrix<F>,
    pub w_q: Matrix<F>,
    pub w_k: Matrix<F>,
    pub w_v: Matrix<F>,
    /// `d × out_dim`
    pub w_out: Matrix<F>,
    pub mask_mode: MaskMode,
}

impl MixerParams<f32> {
    pub fn init(rng: &mut Rng, in_dim: usize, out_dim: usize, hidden: usize, mask_mode: MaskMode) -> Result<Self> {
        ensure!(
            in_dim > 0 && out_dim > 0 && hidden > 0,
            InvalidArgument,
            "mixer widths must be positive"
        );
        let mut gauss = |rows: usize, cols: usize, scale: f32| {
            let data = (0..rows * cols).map(|_| rng.normal() * scale).collect();
            Matrix { rows, cols, data }
        };
        let s_in = (1.0 / in_dim as f32).sqrt();
        let s_h = (1.0 / hidden as f32).sqrt();
        Ok(Self {
            w_in: gauss(in_dim, hidden, s_in),
            w_q: gauss(hidden, hidden, s_h),
            w_k: gauss(hidden, hidden, s_h),
            w_v: gauss(hidden, hidden, s_h),
            w_out: gauss(hidden, out_dim, s_h),
            mask_mode,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, hidden: usize, mask_mode: MaskMode) -> Self {
        Self {
            w_in: Matrix::zeros(in_dim, hidden),
            w_q: Matrix::zeros(hidden, hidden),
            w_k: Matrix::zeros(hidden, hidden),
            w_v: Matrix::zeros(hidden, hidden),
            w_out: Matrix::zeros(hidden, out_dim),
            mask_mode,
        }
    }
}

impl<F: Scalar> MixerParams<F> {
    pub fn in_dim(&self) -> usize {
        self.w_in.rows
    }
    pub fn out_dim(&self) -> usize {
        self.w_out.cols
    }
    pub fn hidden(&self) -> usize {
        self.w_in.cols
    }

    /// Zeroes the embedding rows selected by `pred` (input feature index).
    pub fn zero_input_rows(&mut self, pred: impl Fn(usize) -> bool) {
        let d = self.hidden();
        for r in 0..self.in_dim() {
            if pred(r) {
                self.w_in.row_mut(r).iter_mut().for_each(|v| *v = F::zero());
            }
        }
        debug_assert_eq!(d, self.w_in.cols);
    }

    pub fn cast<G: Scalar>(&self) -> MixerParams<G> {
        MixerParams {
            w_in: self.w_in.cast(),
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_out: self.w_out.cast(),
            mask_mode: self.mask_mode,
        }
    }

    fn matrices(&self) -> [(&'static str, &Matrix<F>); 5] {
        [
            ("w_in", &self.w_in),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_out", &self.w_out),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix<F>); 5] {
        [
            ("w_in", &mut self.w_in),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_out", &mut self.w_out),
        ]
    }

    /// Plain gradient descent. When the global gradient norm exceeds
    /// `GRAD_CLIP` the whole gradient is rescaled to that norm.
    pub fn descend(&mut self, grads: &Gradients<F>, lr: F) {
        let gs = grads.matrices();
        let norm = grads.global_norm();
        let clip = lit::<F>(GRAD_CLIP);
        let lr = if norm > clip { lr * clip / norm } else { lr };
        for ((_, p), (_, g)) in self.matrices_mut().into_iter().zip(gs) {
            for (a, &b) in p.data.iter_mut().zip(&g.data) {
                *a = *a - lr * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.matrices()
            .iter()
            .all(|(_, m)| m.data.iter().all(|v| v.is_finite()))
    }
}

/// One window of blocks handed to the mixer.
#[derive(Debug, Clone)]
pub struct WindowInput<F = f32> {
    /// One row per block, `in_dim` wide.
    pub blocks: Matrix<F>,
    /// 1-based absolute block index of each row.
    pub positions: Vec<usize>,
    pub sigma: F,
}

struct Cache<F> {
    e: Matrix<F>,
    q: Matrix<F>,
    k: Matrix<F>,
    v: Matrix<F>,
    a: Matrix<F>,
    r: Matrix<F>,
    y: Matrix<F>,
}

fn check_input<F: Scalar>(params: &MixerParams<F>, input: &WindowInput<F>) -> Result<()> {
    ensure!(input.blocks.rows >= 1, ShapeMismatch, "window has no blocks");
    ensure!(
        input.blocks.cols == params.in_dim(),
        ShapeMismatch,
        "block width {} vs mixer input {}",
        input.blocks.cols,
        params.in_dim()
    );
    ensure!(
        input.positions.len() == input.blocks.rows,
        ShapeMismatch,
        "{} positions for {} blocks",
        input.positions.len(),
        input.blocks.rows
    );
    ensure!(
        input.sigma >= F::zero() && input.sigma <= F::one(),
        InvalidArgument,
        "sigma {:?} outside [0, 1]",
        input.sigma
    );
    Ok(())
}

fn forward_cached<F: Scalar>(params: &MixerParams<F>, input: &WindowInput<F>) -> Result<Cache<F>> {
    check_input(params, input)?;
    let n = input.blocks.rows;
    let d = params.hidden();
    let mut e = input.blocks.matmul(&params.w_in);
    let sc = sigma_code::<F>(input.sigma, d);
    for (j, &pos) in input.positions.iter().enumerate() {
        let pc = position_code::<F>(pos, d);
        for ((x, p), s) in e.row_mut(j).iter_mut().zip(pc).zip(&sc) {
            *x = *x + p + *s;
        }
    }
    let q = e.matmul(&params.w_q);
    let k = e.matmul(&params.w_k);
    let v = e.matmul(&params.w_v);
    let scale = F::one() / lit::<F>(d as f64).sqrt();
    let mut a = Matrix::zeros(n, n);
    for j in 0..n {
        let visible = match params.mask_mode {
            MaskMode::Bidirectional => n,
            MaskMode::Causal => j + 1,
        };
        let logits: Vec<F> = (0..visible)
            .map(|l| {
                q.row(j)
                    .iter()
                    .zip(k.row(l))
                    .fold(F::zero(), |acc, (&x, &y)| acc + x * y)
                    * scale
            })
            .collect();
        let m = logits.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let exps: Vec<F> = logits.iter().map(|&x| (x - m).exp()).collect();
        let z = exps.iter().fold(F::zero(), |s, &x| s + x);
        for (l, ex) in exps.into_iter().enumerate() {
            a.set(j, l, ex / z);
        }
    }
    let mut r = a.matmul(&v);
    r.add_assign(&e);
    let y = r.matmul(&params.w_out);
    Ok(Cache { e, q, k, v, a, r, y })
}

/// One velocity prediction per window block (`out_dim` wide rows).
pub fn forward<F: Scalar>(params: &MixerParams<F>, input: &WindowInput<F>) -> Result<Matrix<F>> {
    Ok(forward_cached(params, input)?.y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F = f32> {
    pub w_in: Matrix<F>,
    pub w_q: Matrix<F>,
    pub w_k: Matrix<F>,
    pub w_v: Matrix<F>,
    pub w_out: Matrix<F>,
    /// Gradient of the loss with respect to each block's prediction.
    pub output: Matrix<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn matrices(&self) -> [(&'static str, &Matrix<F>); 5] {
        [
            ("w_in", &self.w_in),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_out", &self.w_out),
        ]
    }

    /// Euclidean norm over all five parameter gradients.
    pub fn global_norm(&self) -> F {
        self.matrices()
            .iter()
            .flat_map(|(_, m)| m.data.iter())
            .fold(F::zero(), |s, &g| s + g * g)
            .sqrt()
    }
}

fn check_targets<F: Scalar>(
    params: &MixerParams<F>,
    input: &WindowInput<F>,
    clean: &Matrix<F>,
    eps: &Matrix<F>,
    noisy: &[bool],
) -> Result<usize> {
    let n = input.blocks.rows;
    for m in [clean, eps] {
        ensure!(
            m.rows == n && m.cols == params.out_dim(),
            ShapeMismatch,
            "targets are {}x{}, expected {n}x{}",
            m.rows,
            m.cols,
            params.out_dim()
        );
    }
    ensure!(
        noisy.len() == n,
        ShapeMismatch,
        "mask has {} entries for {n} blocks",
        noisy.len()
    );
    let count = noisy.iter().filter(|&&b| b).count();
    ensure!(count > 0, InvalidArgument, "loss mask selects no noisy block");
    Ok(count)
}

/// Masked flow-matching loss: mean over noisy blocks of `‖v̂ − (ε − x₀)‖²`.
pub fn loss<F: Scalar>(
    params: &MixerParams<F>,
    input: &WindowInput<F>,
    clean: &Matrix<F>,
    eps: &Matrix<F>,
    noisy: &[bool],
) -> Result<F> {
    let count = check_targets(params, input, clean, eps, noisy)?;
    let y = forward(params, input)?;
    Ok(masked_loss(&y, clean, eps, noisy, count).0)
}

fn masked_loss<F: Scalar>(
    y: &Matrix<F>,
    clean: &Matrix<F>,
    eps: &Matrix<F>,
    noisy: &[bool],
    count: usize,
) -> (F, Matrix<F>) {
    let inv = F::one() / lit::<F>(count as f64);
    let two = lit::<F>(2.0);
    let mut total = F::zero();
    let mut dy = Matrix::zeros(y.rows, y.cols);
    for (j, _) in noisy.iter().enumerate().filter(|(_, &b)| b) {
        let row = dy.row_mut(j);
        for (c, g) in row.iter_mut().enumerate() {
            let diff = y.get(j, c) - (eps.get(j, c) - clean.get(j, c));
            total = total + diff * diff;
            *g = two * diff * inv;
        }
    }
    (total * inv, dy)
}

/// Loss plus analytic gradients for every parameter matrix.
pub fn loss_and_grad<F: Scalar>(
    params: &MixerParams<F>,
    input: &WindowInput<F>,
    clean: &Matrix<F>,
    eps: &Matrix<F>,
    noisy: &[bool],
) -> Result<(F, Gradients<F>)> {
    let count = check_targets(params, input, clean, eps, noisy)?;
    let c = forward_cached(params, input)?;
    let (loss, dy) = masked_loss(&c.y, clean, eps, noisy, count);
    let n = input.blocks.rows;
    let scale = F::one() / lit::<F>(params.hidden() as f64).sqrt();

    let d_out = c.r.t_matmul(&dy);
    let dr = dy.matmul_t(&params.w_out);
    // R = E + A·V
    let mut de = dr.clone();
    let da = dr.matmul_t(&c.v);
    let dv = c.a.t_matmul(&dr);
    // softmax backward, row-wise; masked entries have A = 0 and stay 0
    let mut dl = Matrix::zeros(n, n);
    for j in 0..n {
        let dot = (0..n).fold(F::zero(), |s, l| s + c.a.get(j, l) * da.get(j, l));
        for l in 0..n {
            let a = c.a.get(j, l);
            dl.set(j, l, a * (da.get(j, l) - dot) * scale);
        }
    }
    let dq = dl.matmul(&c.k);
    let dk = dl.t_matmul(&c.q);
    let d_wq = c.e.t_matmul(&dq);
    let d_wk = c.e.t_matmul(&dk);
    let d_wv = c.e.t_matmul(&dv);
    de.add_assign(&dq.matmul_t(&params.w_q));
    de.add_assign(&dk.matmul_t(&params.w_k));
    de.add_assign(&dv.matmul_t(&params.w_v));
    let d_win = input.blocks.t_matmul(&de);

    Ok((
        loss,
        Gradients {
            w_in: d_win,
            w_q: d_wq,
            w_k: d_wk,
            w_v: d_wv,
            w_out: d_out,
            output: dy,
        },
    ))
}

/// Rectified-flow Euler step `z' = z + (σ_to − σ_from)·v̂`.
pub fn sampler_step(z: &[f32], v_hat: &[f32], sigma_from: f32, sigma_to: f32) -> Result<Vec<f32>> {
    ensure!(
        sigma_to < sigma_from,
        InvalidArgument,
        "sigma must decrease ({sigma_from} -> {sigma_to})"
    );
    ensure!(
        z.len() == v_hat.len(),
        ShapeMismatch,
        "{} latents vs {} velocities",
        z.len(),
        v_hat.len()
    );
    let dt = sigma_to - sigma_from;
    Ok(z.iter().zip(v_hat).map(|(&a, &v)| a + dt * v).collect())
}

/// Noise levels visited by the sampler, strictly decreasing to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigmas: Vec<f32>,
}

impl SigmaSchedule {
    /// `steps` uniform steps from 1 to 0.
    pub fn uniform(steps: usize) -> Result<Self> {
        Self::truncated(1.0, steps)
    }

    /// `steps` uniform steps from `start` to 0.
    pub fn truncated(start: f32, steps: usize) -> Result<Self> {
        ensure!(steps >= 1, InvalidArgument, "schedule needs at least one step");
        ensure!(
            start > 0.0 && start <= 1.0,
            InvalidArgument,
            "schedule start {start} outside (0, 1]"
        );
        let sigmas = (0..=steps).map(|k| start * (steps - k) as f32 / steps as f32).collect();
        Self::from_sigmas(sigmas)
    }

    pub fn from_sigmas(sigmas: Vec<f32>) -> Result<Self> {
        ensure!(sigmas.len() >= 2, InvalidArgument, "schedule needs two boundaries");
        ensure!(
            sigmas.windows(2).all(|w| w[1] < w[0]),
            InvalidArgument,
            "schedule must be strictly decreasing"
        );
        ensure!(
            sigmas[0] <= 1.0 && *sigmas.last().unwrap_or(&1.0) == 0.0,
            InvalidArgument,
            "schedule must start at most at 1 and end at 0"
        );
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f32] {
        &self.sigmas
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// `(σ_from, σ_to)` for each step.
    pub fn pairs(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        self.sigmas.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    hidden: usize,
    mask_mode: MaskMode,
    matrices: Vec<MatrixEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    file: String,
    rows: usize,
    cols: usize,
}

fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

/// Writes `<stem>.<matrix>.siv1` per matrix (stored as a `1×rows×cols×1`
/// tensor) and the `<stem>.json` sidecar. `extra` is stored verbatim.
pub fn save_params(params: &MixerParams<f32>, stem: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
    let stem = stem.as_ref();
    let base = stem
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad checkpoint path {}", stem.display())))?;
    let mut entries = Vec::new();
    for (name, m) in params.matrices() {
        let file = format!("{base}.{name}.siv1");
        let t = Video::new(1, m.rows, m.cols, 1, m.data.clone())?;
        save_siv1(&t, stem.with_file_name(&file))?;
        entries.push(MatrixEntry {
            name: name.to_string(),
            file,
            rows: m.rows,
            cols: m.cols,
        });
    }
    let sidecar = Sidecar {
        hidden: params.hidden(),
        mask_mode: params.mask_mode,
        matrices: entries,
        extra,
    };
    fs::write(sidecar_path(stem), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_params(stem: impl AsRef<Path>) -> Result<(MixerParams<f32>, serde_json::Value)> {
    let stem = stem.as_ref();
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(stem))?)?;
    let mut params = MixerParams::zeros(1, 1, 1, sidecar.mask_mode);
    for (name, slot) in params.matrices_mut() {
        let entry = sidecar
            .matrices
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks matrix {name}")))?;
        let t = load_siv1(stem.with_file_name(&entry.file))?;
        ensure!(
            t.dims() == [1, entry.rows, entry.cols, 1],
            Format,
            "matrix {name} has dims {:?}",
            t.dims()
        );
        *slot = Matrix::from_vec(entry.rows, entry.cols, t.into_data())?;
    }
    ensure!(
        params.hidden() == sidecar.hidden && params.w_q.rows == sidecar.hidden,
        Format,
        "inconsistent hidden width"
    );
    Ok((params, sidecar.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rng: &mut Rng, n: usize, width: usize, sigma: f32) -> WindowInput {
        let data = (0..n * width).map(|_| rng.normal()).collect();
        WindowInput {
            blocks: Matrix::from_vec(n, width, data).unwrap(),
            positions: (1..=n).collect(),
            sigma,
        }
    }

    fn uniform_grads(params: &MixerParams<f64>, value: f64) -> Gradients<f64> {
        let fill = |m: &Matrix<f64>| Matrix::from_vec(m.rows(), m.cols(), vec![value; m.data().len()]).unwrap();
        Gradients {
            w_in: fill(&params.w_in),
            w_q: fill(&params.w_q),
            w_k: fill(&params.w_k),
            w_v: fill(&params.w_v),
            w_out: fill(&params.w_out),
            output: Matrix::zeros(1, 1),
        }
    }

    #[test]
    fn descend_clips_global_norm() {
        let params = MixerParams::zeros(3, 2, 2, MaskMode::Bidirectional).cast::<f64>();
        let count: usize = params.matrices().iter().map(|(_, m)| m.data().len()).sum();
        let small = uniform_grads(&params, 1.0);
        let mut p = params.clone();
        p.descend(&small, 0.5);
        assert!(p.w_in.data().iter().all(|&v| v == -0.5));

        let big = uniform_grads(&params, 1e3);
        let norm = big.global_norm();
        assert!((norm - 1e3 * (count as f64).sqrt()).abs() < 1e-6);
        let mut q = params.clone();
        q.descend(&big, 1.0);
        let step: f64 = q
            .matrices()
            .iter()
            .flat_map(|(_, m)| m.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((step - GRAD_CLIP).abs() < 1e-9, "step norm {step}");
    }

    #[test]
    fn single_block_masks_agree() {
        let mut rng = Rng::new(1);
        let bi = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Bidirectional).unwrap();
        let causal = MixerParams {
            mask_mode: MaskMode::Causal,
            ..bi.clone()
        };
        let x = random_input(&mut rng, 1, 12, 0.5);
        assert_eq!(forward(&bi, &x).unwrap(), forward(&causal, &x).unwrap());
    }

    #[test]
    fn causal_ignores_later_blocks() {
        let mut rng = Rng::new(2);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Causal).unwrap();
        let x = random_input(&mut rng, 3, 12, 0.25);
        let mut x2 = x.clone();
        x2.blocks.row_mut(2).iter_mut().for_each(|v| *v += 1.0);
        let (a, b) = (forward(&p, &x).unwrap(), forward(&p, &x2).unwrap());
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn bidirectional_propagates_backwards() {
        let mut rng = Rng::new(3);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Bidirectional).unwrap();
        let x = random_input(&mut rng, 3, 12, 0.25);
        let mut x2 = x.clone();
        x2.blocks.row_mut(2).iter_mut().for_each(|v| *v += 1e-2);
        let (a, b) = (forward(&p, &x).unwrap(), forward(&p, &x2).unwrap());
        let delta = a
            .row(0)
            .iter()
            .zip(b.row(0))
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f32::max);
        assert!(delta > 1e-8, "delta {delta}");
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let mut rng = Rng::new(4);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Causal).unwrap();
        assert!(forward(&p, &random_input(&mut rng, 2, 10, 0.5)).is_err());
        let mut x = random_input(&mut rng, 2, 12, 0.5);
        x.positions.pop();
        assert!(forward(&p, &x).is_err());
        assert!(forward(&p, &random_input(&mut rng, 2, 12, 1.5)).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_grad() {
        let mut rng = Rng::new(5);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Bidirectional).unwrap();
        let x = random_input(&mut rng, 3, 12, 0.5);
        let y = forward(&p, &x).unwrap();
        let clean = Matrix::zeros(3, 6);
        let (l, g) = loss_and_grad(&p, &x, &clean, &y, &[true, true, true]).unwrap();
        assert_eq!(l, 0.0);
        for (_, m) in g.matrices() {
            assert_eq!(m.max_abs(), 0.0);
        }
    }

    #[test]
    fn conditioning_targets_do_not_matter() {
        let mut rng = Rng::new(6);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Bidirectional).unwrap();
        let x = random_input(&mut rng, 3, 12, 0.5);
        let clean = Matrix::from_vec(3, 6, rng.gaussian_vec(18)).unwrap();
        let eps = Matrix::from_vec(3, 6, rng.gaussian_vec(18)).unwrap();
        let mask = [false, true, true];
        let (l1, g1) = loss_and_grad(&p, &x, &clean, &eps, &mask).unwrap();
        let mut clean2 = clean.clone();
        clean2.row_mut(0).iter_mut().for_each(|v| *v += 3.0);
        let (l2, g2) = loss_and_grad(&p, &x, &clean2, &eps, &mask).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        assert!(g1.output.row(0).iter().all(|&v| v == 0.0));
        assert!(loss_and_grad(&p, &x, &clean, &eps, &[false; 3]).is_err());
    }

    #[test]
    fn sampler_step_cases() {
        let z = [0.3f32, -1.0];
        assert_eq!(sampler_step(&z, &[0.0, 0.0], 1.0, 0.5).unwrap(), z.to_vec());
        // z = σε + (1−σ)x₀ with the exact velocity lands on x₀
        let (eps, x0, s) = ([0.7f32, -0.2], [0.25f32, 0.5], 0.5f32);
        let zs: Vec<f32> = eps.iter().zip(&x0).map(|(e, x)| s * e + (1.0 - s) * x).collect();
        let v: Vec<f32> = eps.iter().zip(&x0).map(|(e, x)| e - x).collect();
        assert_eq!(sampler_step(&zs, &v, s, 0.0).unwrap(), x0.to_vec());
        assert!(sampler_step(&z, &z, 0.5, 0.5).is_err());
    }

    #[test]
    fn euler_steps_compose_under_constant_velocity() {
        let z = [0.75f32, -0.5];
        let v = [0.5f32, 0.25];
        let two = sampler_step(&sampler_step(&z, &v, 1.0, 0.5).unwrap(), &v, 0.5, 0.0).unwrap();
        let one = sampler_step(&z, &v, 1.0, 0.0).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn schedules() {
        assert_eq!(
            SigmaSchedule::uniform(4).unwrap().sigmas(),
            &[1.0, 0.75, 0.5, 0.25, 0.0]
        );
        let t = SigmaSchedule::truncated(0.1, 1).unwrap();
        assert_eq!(t.sigmas(), &[0.1, 0.0]);
        assert!(SigmaSchedule::truncated(0.0, 1).is_err());
        assert!(SigmaSchedule::uniform(0).is_err());
        assert!(SigmaSchedule::from_sigmas(vec![1.0, 1.0, 0.0]).is_err());
        assert!(SigmaSchedule::from_sigmas(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(8);
        let p = MixerParams::init(&mut rng, 12, 6, 8, MaskMode::Causal).unwrap();
        let stem = dir.path().join("model");
        save_params(&p, &stem, serde_json::json!({"k": 4})).unwrap();
        let (q, extra) = load_params(&stem).unwrap();
        assert_eq!(p, q);
        assert_eq!(extra["k"], 4);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
        assert_eq!(side["hidden"], 8);
        assert_eq!(side["mask_mode"], "causal");
    }
}
