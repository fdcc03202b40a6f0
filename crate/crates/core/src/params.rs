//! Flat, layer-segmented parameter and gradient storage.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub layer_id: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl SegmentMeta {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered segment list shared by every vector of the same model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<SegmentMeta>,
}

impl Layout {
    /// Build a layout from `(layer_id, shape)` pairs, assigning contiguous offsets.
    pub fn from_shapes<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let segments = items
            .into_iter()
            .map(|(id, shape)| {
                let meta = SegmentMeta { layer_id: id.into(), shape, offset };
                offset += meta.len();
                meta
            })
            .collect();
        Self { segments }
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn find(&self, layer_id: &str) -> Option<&SegmentMeta> {
        self.segments.iter().find(|s| s.layer_id == layer_id)
    }
}

/// Model parameters, gradients or updates as one contiguous `f64` buffer.
///
/// Arithmetic between two vectors requires identical layouts; reductions walk
/// the buffer front to back so results are reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        Self { layout, values: vec![0.0; n] }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch(format!(
                "layout expects {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segment(&self, layer_id: &str) -> Option<&[f64]> {
        self.layout.find(layer_id).map(|m| &self.values[m.offset..m.offset + m.len()])
    }

    pub fn segment_mut(&mut self, layer_id: &str) -> Option<&mut [f64]> {
        let m = self.layout.find(layer_id)?.clone();
        Some(&mut self.values[m.offset..m.offset + m.len()])
    }

    /// Iterate `(meta, values)` in layout order.
    pub fn segments(&self) -> impl Iterator<Item = (&SegmentMeta, &[f64])> {
        self.layout.segments.iter().map(|m| (m, &self.values[m.offset..m.offset + m.len()]))
    }

    pub fn is_compatible(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    fn check(&self, other: &ParamVector) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} segments / {} values vs {} segments / {} values",
                self.layout.segments.len(),
                self.len(),
                other.layout.segments.len(),
                other.len()
            )))
        }
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(ParamVector { layout: self.layout.clone(), values })
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        self.check(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> ParamVector {
        ParamVector { layout: self.layout.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Little-endian `f64` blob.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(layout: Arc<Layout>, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::DimensionMismatch(format!("blob length {} is not a multiple of 8", bytes.len())));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_values(layout, values)
    }

    /// Write `<stem>.bin` (values) and `<stem>.json` (layout sidecar).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.bin")), self.to_le_bytes())?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&*self.layout)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let layout: Layout = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
        Self::from_le_bytes(Arc::new(layout), &bytes)
    }
}

/// `Σ_k w_k · v_k`, accumulated in input order.
pub fn weighted_sum(items: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    let (_, first) = items.first().ok_or_else(|| Error::invalid("weighted sum of zero vectors"))?;
    let mut acc = first.zeros_like();
    for (w, v) in items {
        acc.axpy(*w, v)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<Layout> {
        Arc::new(Layout::from_shapes([("0.weight", vec![2, 3]), ("0.bias", vec![2])]))
    }

    #[test]
    fn offsets_are_contiguous() {
        let l = layout();
        assert_eq!(l.total_len(), 8);
        assert_eq!(l.find("0.bias").unwrap().offset, 6);
    }

    #[test]
    fn mismatched_layouts_refuse_arithmetic() {
        let a = ParamVector::zeros(layout());
        let b = ParamVector::zeros(Arc::new(Layout::from_shapes([("x", vec![8])])));
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn weighted_average_of_two_vectors() {
        let l = Arc::new(Layout::from_shapes([("w", vec![2])]));
        let a = ParamVector::from_values(l.clone(), vec![1.0, 3.0]).unwrap();
        let b = ParamVector::from_values(l, vec![3.0, 5.0]).unwrap();
        let avg = weighted_sum(&[(0.25, &a), (0.75, &b)]).unwrap();
        assert_eq!(avg.as_slice(), &[2.5, 4.5]);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let v = ParamVector::from_values(layout(), (0..8).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap();
        v.save(dir.path(), "theta").unwrap();
        let back = ParamVector::load(dir.path(), "theta").unwrap();
        assert_eq!(v, back);
    }

    proptest! {
        #[test]
        fn blob_roundtrip_is_bitwise(values in proptest::collection::vec(-1e6f64..1e6, 8)) {
            let v = ParamVector::from_values(layout(), values).unwrap();
            let back = ParamVector::from_le_bytes(layout(), &v.to_le_bytes()).unwrap();
            prop_assert_eq!(v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            back.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
