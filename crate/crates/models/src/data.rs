//! Training-matrix preparation: column selection, z-scoring, label packing.

use handstate_core::model_state::{Normalization, OUTPUTS};
use handstate_core::types::{AlignedSample, FeatureSubset, FEATURES};
use handstate_core::Scalar;

use crate::error::{ModelError, Result};

/// Row-major design matrix with its targets.
#[derive(Clone, Debug)]
pub struct Rows<T: Scalar> {
    pub dim: usize,
    /// `n x dim`, already normalized.
    pub x: Vec<T>,
    /// `n x 2`
    pub y: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    pub fn len(&self) -> usize {
        self.y.len() / OUTPUTS
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> &[T] {
        &self.y[i * OUTPUTS..(i + 1) * OUTPUTS]
    }
}

/// One normalized sequence for recurrent training.
#[derive(Clone, Debug)]
pub struct SeqRows<T: Scalar> {
    pub dim: usize,
    pub x: Vec<T>,
    /// Per step target, absent where the tracker had no data.
    pub y: Vec<Option<[T; OUTPUTS]>>,
}

impl<T: Scalar> SeqRows<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn labeled(&self) -> usize {
        self.y.iter().filter(|y| y.is_some()).count()
    }
}

pub fn subset_row<T: Scalar>(s: &AlignedSample<T>, subset: FeatureSubset) -> Vec<T> {
    s.features()[subset.columns()].to_vec()
}

fn check_finite<T: Scalar>(s: &AlignedSample<T>) -> Result<()> {
    if s.features().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::Validation(format!("non-finite feature at t={}", s.t)))
    }
}

/// Fits normalization on labeled rows only.
pub fn fit_norm<'a, T: Scalar + 'a>(
    samples: impl IntoIterator<Item = &'a AlignedSample<T>>,
    subset: FeatureSubset,
) -> Result<Normalization<T>> {
    let mut rows = Vec::new();
    for s in samples {
        if s.y.is_some() {
            check_finite(s)?;
            rows.push(subset_row(s, subset));
        }
    }
    Ok(Normalization::fit(rows.iter().map(|r| r.as_slice()), subset.width()))
}

/// Labeled rows of `samples`, normalized with `norm`.
pub fn labeled_rows<'a, T: Scalar + 'a>(
    samples: impl IntoIterator<Item = &'a AlignedSample<T>>,
    subset: FeatureSubset,
    norm: &Normalization<T>,
) -> Result<Rows<T>> {
    let dim = subset.width();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut buf = vec![T::zero(); dim];
    for s in samples {
        let Some(target) = s.y else { continue };
        check_finite(s)?;
        norm.apply(&s.features()[subset.columns()], &mut buf);
        x.extend_from_slice(&buf);
        y.push(target.y_o);
        y.push(target.y_c);
    }
    Ok(Rows { dim, x, y })
}

pub fn sequence_rows<T: Scalar>(
    samples: &[AlignedSample<T>],
    subset: FeatureSubset,
    norm: &Normalization<T>,
) -> Result<SeqRows<T>> {
    let dim = subset.width();
    let mut x = vec![T::zero(); samples.len() * dim];
    let mut y = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        check_finite(s)?;
        norm.apply(&s.features()[subset.columns()], &mut x[i * dim..(i + 1) * dim]);
        y.push(s.y.map(|t| [t.y_o, t.y_c]));
    }
    Ok(SeqRows { dim, x, y })
}

/// Checks that a full-width feature row has the expected dimension.
pub fn check_row<T: Scalar>(row: &[T]) -> Result<()> {
    if row.len() != FEATURES {
        return Err(ModelError::Validation(format!(
            "feature row has {} components, expected {FEATURES}",
            row.len()
        )));
    }
    Ok(())
}
