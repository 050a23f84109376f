use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tensor;
use crate::error::{shape_err, Result};
use crate::pga::{Multivector, DIM};

/// Dense `(time, channel, 16)` stack of multivectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MvStack {
    time: usize,
    channels: usize,
    data: Vec<f64>,
}

impl MvStack {
    pub fn new(time: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if time == 0 || channels == 0 {
            return Err(shape_err!("stack dims must be >= 1, got ({time}, {channels})"));
        }
        if data.len() != time * channels * DIM {
            return Err(shape_err!(
                "stack ({time}, {channels}, 16) needs {} values, got {}",
                time * channels * DIM,
                data.len()
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(shape_err!("stack contains non-finite values"));
        }
        Ok(Self { time, channels, data })
    }

    pub fn zeros(time: usize, channels: usize) -> Self {
        Self {
            time: time.max(1),
            channels: channels.max(1),
            data: vec![0.0; time.max(1) * channels.max(1) * DIM],
        }
    }

    pub fn from_multivectors(time: usize, channels: usize, mvs: &[Multivector]) -> Result<Self> {
        let data = mvs.iter().flat_map(|m| m.0).collect();
        Self::new(time, channels, data)
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.time, self.channels, DIM]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, t: usize, c: usize) -> Multivector {
        Multivector::from_slice(&self.data[(t * self.channels + c) * DIM..][..DIM])
    }

    pub fn set(&mut self, t: usize, c: usize, m: &Multivector) {
        self.data[(t * self.channels + c) * DIM..][..DIM].copy_from_slice(&m.0);
    }

    /// Applies `f` to every multivector.
    pub fn map(&self, mut f: impl FnMut(&Multivector) -> Multivector) -> Self {
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(DIM) {
            let m = f(&Multivector::from_slice(chunk));
            chunk.copy_from_slice(&m.0);
        }
        out
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.time, self.channels, DIM], self.data.clone())
    }

    /// Accepts any tensor whose last axis is 16 and whose size is `time * channels * 16`.
    pub fn from_tensor(t: &Tensor, time: usize, channels: usize) -> Result<Self> {
        if t.shape().last() != Some(&DIM) {
            return Err(shape_err!("tensor {:?} has no trailing multivector axis", t.shape()));
        }
        Self::new(time, channels, t.data().to_vec())
    }

    /// Sum of squared coefficients.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(MvStack::new(0, 1, vec![]).is_err());
        assert!(MvStack::new(1, 1, vec![0.0; 15]).is_err());
        assert!(MvStack::new(1, 1, vec![f64::NAN; 16]).is_err());
        let s = MvStack::new(2, 3, vec![0.5; 96]).unwrap();
        assert_eq!(s.shape(), [2, 3, 16]);
    }

    #[test]
    fn get_set() {
        let mut s = MvStack::zeros(2, 2);
        s.set(1, 0, &Multivector::blade(3));
        assert_eq!(s.get(1, 0), Multivector::blade(3));
        assert_eq!(s.data()[(2) * 16 + 3], 1.0);
    }
}
