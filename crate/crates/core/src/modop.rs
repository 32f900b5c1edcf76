//! Moving-horizon modulation `int_0^T K(t - T + sigma, sigma) xi(t - T + sigma) d sigma`
//! realized as ring buffers plus quadrature-weighted FIR taps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::horizon_samples;

/// Timestamps must advance by exactly one step up to this tolerance.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-9;

/// How slots older than the first pushed sample are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FillPolicy {
    /// Constant initial function: every missing slot repeats the first sample.
    #[default]
    PadWithFirst,
    ZeroPad,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Composite Simpson; requires an odd number of samples.
    Simpson,
}

/// Composite quadrature weights for `count` equidistant samples with spacing `step`.
pub fn quadrature_weights(count: usize, step: f64, rule: Quadrature) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidArgument(format!("need at least two samples, got {count}")));
    }
    let mut w = vec![step; count];
    match rule {
        Quadrature::Trapezoid => {
            w[0] = 0.5 * step;
            w[count - 1] = 0.5 * step;
        }
        Quadrature::Simpson => {
            if count.is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!(
                    "Simpson's rule needs an odd number of samples, got {count}"
                )));
            }
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = if k == 0 || k == count - 1 {
                    step / 3.0
                } else if k % 2 == 1 {
                    4.0 * step / 3.0
                } else {
                    2.0 * step / 3.0
                };
            }
        }
    }
    Ok(w)
}

/// Ring buffer of the last `round(T / h) + 1` samples of a vector signal.
#[derive(Clone, Debug)]
pub struct HorizonBuffer {
    horizon: f64,
    step: f64,
    capacity: usize,
    dim: usize,
    fill_policy: FillPolicy,
    last: Option<f64>,
    /// Channel-major ring storage, `dim` runs of `capacity` values; slot `head` is the oldest.
    data: Vec<f64>,
    head: usize,
    len: usize,
    first: Option<DVector<f64>>,
}

impl HorizonBuffer {
    pub fn new(horizon: f64, step: f64, dim: usize, fill_policy: FillPolicy) -> Result<Self> {
        let capacity = horizon_samples(horizon, step)?;
        Ok(Self {
            horizon,
            step,
            capacity,
            dim,
            fill_policy,
            last: None,
            data: vec![0.0; capacity * dim],
            head: 0,
            len: 0,
            first: None,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill_policy(&self) -> FillPolicy {
        self.fill_policy
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last
    }

    pub fn push(&mut self, t: f64, value: DVector<f64>) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::Dimension(format!(
                "buffer holds {}-vectors, got {}",
                self.dim,
                value.len()
            )));
        }
        if let Some(last) = self.last_time() {
            let expected = last + self.step;
            if (t - expected).abs() > ALIGNMENT_TOLERANCE {
                return Err(Error::SamplingMisalignment { expected, got: t });
            }
        }
        if self.first.is_none() {
            self.first = Some(value.clone());
        }
        let idx = if self.is_full() {
            let idx = self.head;
            self.head = (self.head + 1) % self.capacity;
            idx
        } else {
            self.len += 1;
            (self.head + self.len - 1) % self.capacity
        };
        for (c, v) in value.iter().enumerate() {
            self.data[c * self.capacity + idx] = *v;
        }
        self.last = Some(t);
        Ok(())
    }

    /// Sample in slot `k` (slot 0 at `t_now - T`, last slot at `t_now`) after padding.
    fn slot(&self, k: usize) -> DVector<f64> {
        let missing = self.capacity - self.len;
        if k >= missing {
            let idx = (self.head + k - missing) % self.capacity;
            return DVector::from_fn(self.dim, |c, _| self.data[c * self.capacity + idx]);
        }
        match self.fill_policy {
            FillPolicy::PadWithFirst => self.first.clone().expect("non-empty buffer"),
            FillPolicy::ZeroPad => DVector::zeros(self.dim),
        }
    }

    /// Stored samples of channel `c`, oldest first, as two contiguous runs of the ring.
    fn segments(&self, c: usize) -> (&[f64], &[f64]) {
        let ring = &self.data[c * self.capacity..(c + 1) * self.capacity];
        if self.head + self.len <= self.capacity {
            (&ring[self.head..self.head + self.len], &[])
        } else {
            let wrap = self.head + self.len - self.capacity;
            (&ring[self.head..], &ring[..wrap])
        }
    }

    fn check_query(&self, t_now: f64) -> Result<()> {
        let last = self.last_time().ok_or(Error::HorizonNotInitialized)?;
        if (last - t_now).abs() > ALIGNMENT_TOLERANCE {
            return Err(Error::HorizonMisalignment { buffer: last, query: t_now });
        }
        Ok(())
    }

    /// All `capacity` slots, oldest first; the newest must be stamped `t_now`.
    pub fn window(&self, t_now: f64) -> Result<Vec<DVector<f64>>> {
        self.check_query(t_now)?;
        Ok((0..self.capacity).map(|k| self.slot(k)).collect())
    }

    pub fn clear(&mut self) {
        self.last = None;
        self.head = 0;
        self.len = 0;
        self.first = None;
    }
}

/// Quadrature of `kernel(tau, sigma) * sample(tau)` over the horizon ending at `t_now`.
pub fn modulate<K>(buf: &HorizonBuffer, kernel: K, t_now: f64, rule: Quadrature) -> Result<DVector<f64>>
where
    K: Fn(f64, f64) -> DMatrix<f64>,
{
    let window = buf.window(t_now)?;
    let w = quadrature_weights(buf.capacity, buf.step, rule)?;
    let mut acc: Option<DVector<f64>> = None;
    for (k, (sample, wk)) in window.iter().zip(&w).enumerate() {
        let sigma = k as f64 * buf.step;
        let tau = t_now - buf.horizon + sigma;
        let term = kernel(tau, sigma) * sample * *wk;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    Ok(acc.expect("non-empty window"))
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Precomputed taps `w_k K(sigma_k)` for kernels that depend on `sigma` only.
#[derive(Clone, Debug)]
pub struct FirBank {
    rows: usize,
    channels: usize,
    /// Tap sequences over the slots, one contiguous run per `(row, channel)` pair.
    taps: Vec<f64>,
}

impl FirBank {
    pub fn new<K>(rows: usize, channels: usize, horizon: f64, step: f64, rule: Quadrature, kernel: K) -> Result<Self>
    where
        K: Fn(f64) -> DMatrix<f64>,
    {
        let count = horizon_samples(horizon, step)?;
        let w = quadrature_weights(count, step, rule)?;
        let mut taps = vec![0.0; count * rows * channels];
        for (k, wk) in w.iter().enumerate() {
            let m = kernel(k as f64 * step);
            if m.shape() != (rows, channels) {
                return Err(Error::Dimension(format!(
                    "tap is {:?}, expected {rows}x{channels}",
                    m.shape()
                )));
            }
            for i in 0..rows {
                for c in 0..channels {
                    taps[(i * channels + c) * count + k] = m[(i, c)] * wk;
                }
            }
        }
        Ok(Self { rows, channels, taps })
    }

    pub fn len(&self) -> usize {
        self.taps.len() / (self.rows * self.channels).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn apply(&self, buf: &HorizonBuffer, t_now: f64) -> Result<DVector<f64>> {
        buf.check_query(t_now)?;
        if buf.dim != self.channels || buf.capacity != self.len() {
            return Err(Error::Dimension(format!(
                "FIR bank ({} slots, {} channels) does not match buffer ({} slots, {} channels)",
                self.len(),
                self.channels,
                buf.capacity,
                buf.dim
            )));
        }
        let mut out = DVector::zeros(self.rows);
        let missing = buf.capacity - buf.len;
        let zero = vec![0.0; self.channels];
        let pad = match buf.fill_policy {
            FillPolicy::PadWithFirst => buf.first.as_ref().expect("non-empty buffer").as_slice(),
            FillPolicy::ZeroPad => &zero[..],
        };
        let count = buf.capacity;
        for (c, &pad_c) in pad.iter().enumerate().take(self.channels) {
            let (older, newer) = buf.segments(c);
            for i in 0..self.rows {
                let taps = &self.taps[(i * self.channels + c) * count..(i * self.channels + c + 1) * count];
                let (pad_taps, rest) = taps.split_at(missing);
                let (t_old, t_new) = rest.split_at(older.len());
                out[i] += pad_c * pad_taps.iter().sum::<f64>() + dot(t_old, older) + dot(t_new, newer);
            }
        }
        Ok(out)
    }
}
