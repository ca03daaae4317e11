//! Spectral codec for flattened layer weights.
//!
//! Forward transform: `Ŵ_k = Σ_j w_j exp(-2πi k j / N)`, keeping `k < p`.
//!
//! Two inverse conventions are provided:
//!
//! * [`spectrum_to_weights`] is the literal truncated inverse
//!   `Re[(1/N) Σ_{k<p} Ŵ_k exp(2πi k n / N)]`, used on the hypernetwork path.
//! * [`hermitian_reconstruct`] pairs every retained `k ≥ 1` with its conjugate
//!   at `N - k` before inverting, so real inputs round-trip exactly once the
//!   retained set covers the whole spectrum. The truncation analysis uses it.

use std::cell::RefCell;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("truncation p = {p} outside 1..={n}")]
    Truncation { p: usize, n: usize },
    #[error("spectrum has {re} real and {im} imaginary parts")]
    Ragged { re: usize, im: usize },
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized forward DFT of a real vector.
pub fn dft(w: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        plan(buf.len(), false).process(&mut buf);
    }
    buf
}

/// Unnormalized inverse DFT (no `1/N`).
pub fn idft_unnormalized(mut buf: Vec<Complex64>) -> Vec<Complex64> {
    if !buf.is_empty() {
        plan(buf.len(), true).process(&mut buf);
    }
    buf
}

/// First `p` Fourier coefficients of one layer's flattened weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub n_weights: usize,
}

impl WeightSpectrum {
    pub fn zeros(p: usize, n_weights: usize) -> Self {
        Self {
            re: vec![0.0; p],
            im: vec![0.0; p],
            n_weights,
        }
    }

    /// Assembles a spectrum from `2p` reals: real parts then imaginary parts.
    pub fn from_split(raw: &[f64], n_weights: usize) -> Result<Self, CodecError> {
        if !raw.len().is_multiple_of(2) {
            return Err(CodecError::Ragged {
                re: raw.len() / 2 + 1,
                im: raw.len() / 2,
            });
        }
        let p = raw.len() / 2;
        let s = Self {
            re: raw[..p].to_vec(),
            im: raw[p..].to_vec(),
            n_weights,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.re.len()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.re.len() != self.im.len() {
            return Err(CodecError::Ragged {
                re: self.re.len(),
                im: self.im.len(),
            });
        }
        check_truncation(self.p(), self.n_weights)
    }

    pub fn coeff(&self, k: usize) -> Complex64 {
        Complex64::new(self.re[k], self.im[k])
    }
}

fn check_truncation(p: usize, n: usize) -> Result<(), CodecError> {
    if p == 0 || p > n {
        return Err(CodecError::Truncation { p, n });
    }
    Ok(())
}

pub fn weights_to_spectrum(w: &[f64], p: usize) -> Result<WeightSpectrum, CodecError> {
    check_truncation(p, w.len())?;
    let full = dft(w);
    Ok(WeightSpectrum {
        re: full[..p].iter().map(|c| c.re).collect(),
        im: full[..p].iter().map(|c| c.im).collect(),
        n_weights: w.len(),
    })
}

/// Literal truncated inverse with real projection.
pub fn spectrum_to_weights(spec: &WeightSpectrum) -> Result<Vec<f64>, CodecError> {
    spec.validate()?;
    let n = spec.n_weights;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, slot) in buf.iter_mut().enumerate().take(spec.p()) {
        *slot = spec.coeff(k);
    }
    let inv_n = 1.0 / n as f64;
    Ok(idft_unnormalized(buf)
        .into_iter()
        .map(|c| c.re * inv_n)
        .collect())
}

/// Hermitian-completed inverse, returned before the real projection.
pub fn hermitian_reconstruct(spec: &WeightSpectrum) -> Result<Vec<Complex64>, CodecError> {
    spec.validate()?;
    let n = spec.n_weights;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..spec.p() {
        buf[k] = spec.coeff(k);
    }
    for k in 1..spec.p() {
        let mirror = n - k;
        if mirror >= spec.p() {
            buf[mirror] = spec.coeff(k).conj();
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok(idft_unnormalized(buf)
        .into_iter()
        .map(|c| c * inv_n)
        .collect())
}

pub fn hermitian_weights(spec: &WeightSpectrum) -> Result<Vec<f64>, CodecError> {
    Ok(hermitian_reconstruct(spec)?
        .into_iter()
        .map(|c| c.re)
        .collect())
}

/// Whether DFT index `k` survives truncation to `p` under Hermitian completion.
pub fn retained(k: usize, p: usize, n: usize) -> bool {
    k < p || (k > 0 && n - k < p)
}

/// `‖w − reconstruct(truncate(w, p))‖₂` under Hermitian completion.
pub fn codec_roundtrip_error(w: &[f64], p: usize) -> Result<f64, CodecError> {
    let rec = hermitian_weights(&weights_to_spectrum(w, p)?)?;
    Ok(w.iter()
        .zip(&rec)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Parseval tail energy `(1/N) Σ_{k dropped} |Ŵ_k|²` for every `p = 1..=N`.
///
/// Entry `p - 1` is the squared round-trip error at truncation `p`.
pub fn tail_energies(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let inv_n = 1.0 / n as f64;
    let power: Vec<f64> = dft(w).iter().map(|c| c.norm_sqr() * inv_n).collect();
    // Raising p by one admits index p-1 and its mirror N-(p-1).
    let mut kept = vec![false; n];
    let mut n_kept = 0;
    let mut tail: f64 = power.iter().sum();
    let mut out = Vec::with_capacity(n);
    for p in 1..=n {
        for k in [p - 1, (n - (p - 1)) % n] {
            if !kept[k] {
                kept[k] = true;
                n_kept += 1;
                tail -= power[k];
            }
        }
        // Exactly zero once nothing is dropped, rather than cancellation residue.
        if n_kept == n {
            tail = 0.0;
        }
        out.push(tail.max(0.0));
    }
    out
}

/// Writes spectra as CSV rows `layer,k,re,im`.
pub fn write_spectrum_csv<W: Write>(mut out: W, spectra: &[WeightSpectrum]) -> std::io::Result<()> {
    writeln!(out, "layer,k,re,im")?;
    for (layer, s) in spectra.iter().enumerate() {
        for k in 0..s.p() {
            writeln!(out, "{layer},{k},{},{}", s.re[k], s.im[k])?;
        }
    }
    Ok(())
}
