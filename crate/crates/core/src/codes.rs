use crate::error::{Error, Result};
use crate::numerics::{sign_bit, Matrix};

/// Binary code matrix with entries in `{-1, +1}`, one code per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    bits: usize,
    samples: usize,
    /// Column-major.
    entries: Vec<i8>,
}

impl CodeMatrix {
    /// Validates that every entry is exactly `-1` or `+1`.
    pub fn from_entries(bits: usize, samples: usize, entries: Vec<i8>) -> Result<Self> {
        if bits == 0 || samples == 0 {
            return Err(Error::InvalidArgument(format!(
                "code matrix must be non-empty, got {bits}x{samples}"
            )));
        }
        if entries.len() != bits * samples {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {bits}x{samples} code matrix",
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(format!("code entry {v} is not +1 or -1")));
        }
        Ok(Self {
            bits,
            samples,
            entries,
        })
    }

    /// Element-wise `sgn` of a real matrix, with `sgn(0) = +1`.
    pub fn from_signs(h: &Matrix) -> Result<Self> {
        crate::numerics::ensure_valid(h, "code layer output")?;
        Ok(Self {
            bits: h.nrows(),
            samples: h.ncols(),
            entries: h.iter().map(|&v| sign_bit(v)).collect(),
        })
    }

    pub fn filled(bits: usize, samples: usize, value: i8) -> Result<Self> {
        Self::from_entries(bits, samples, vec![value; bits * samples])
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    #[inline]
    pub fn get(&self, bit: usize, sample: usize) -> i8 {
        self.entries[sample * self.bits + bit]
    }

    /// Overwrites one entry; `value` must be `+1` or `-1`.
    pub fn set(&mut self, bit: usize, sample: usize, value: i8) {
        assert!(value == 1 || value == -1, "code entry must be +1 or -1");
        self.entries[sample * self.bits + bit] = value;
    }

    /// The code of one sample.
    pub fn column(&self, sample: usize) -> &[i8] {
        &self.entries[sample * self.bits..(sample + 1) * self.bits]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_iterator(
            self.bits,
            self.samples,
            self.entries.iter().map(|&v| f64::from(v)),
        )
    }

    /// Fraction of entries on which `self` and `other` agree.
    pub fn agreement(&self, other: &CodeMatrix) -> Result<f64> {
        if self.bits != other.bits || self.samples != other.samples {
            return Err(Error::Dimension(format!(
                "cannot compare {}x{} codes with {}x{}",
                self.bits, self.samples, other.bits, other.samples
            )));
        }
        let same = self
            .entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.entries.len() as f64)
    }

    /// Keeps the listed samples, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(indices.len() * self.bits);
        for &j in indices {
            if j >= self.samples {
                return Err(Error::Dimension(format!("sample {j} out of range")));
            }
            entries.extend_from_slice(self.column(j));
        }
        Self::from_entries(self.bits, indices.len(), entries)
    }
}
