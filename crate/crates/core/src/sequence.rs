use nalgebra::DVector;

use crate::error::{Result, VbError};

/// An ordered, non-empty list of equally sized finite observation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    obs: Vec<DVector<f64>>,
}

impl ObservationSequence {
    pub fn new(obs: Vec<DVector<f64>>) -> Result<Self> {
        let first = obs.first().ok_or(VbError::EmptySequence)?;
        let d = first.len();
        if d == 0 {
            return Err(VbError::domain("observations must have at least one dimension"));
        }
        for x in &obs {
            VbError::check_dim(d, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(VbError::domain("observation contains a non-finite value"));
            }
        }
        Ok(ObservationSequence { obs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    /// Always false; kept for the usual `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.obs[0].len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DVector<f64>> {
        self.obs.iter()
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.obs
    }

    pub fn reversed(&self) -> Self {
        ObservationSequence {
            obs: self.obs.iter().rev().cloned().collect(),
        }
    }
}

impl std::ops::Index<usize> for ObservationSequence {
    type Output = DVector<f64>;

    fn index(&self, i: usize) -> &DVector<f64> {
        &self.obs[i]
    }
}

/// Checks that `data` is non-empty and dimensionally uniform; returns D.
pub fn common_dim(data: &[ObservationSequence]) -> Result<usize> {
    let d = data.first().ok_or(VbError::EmptyData)?.dim();
    for seq in data {
        VbError::check_dim(d, seq.dim())?;
    }
    Ok(d)
}
