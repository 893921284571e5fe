use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named block inside a flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Segment table of a [`ParamVector`]. Segments are contiguous, disjoint and
/// cover the buffer exactly; the builder is the only way to make one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        self.segment(name)
            .map(Segment::range)
            .ok_or_else(|| Error::invalid(format!("no parameter segment named {name:?}")))
    }

    /// Rebuilds a layout from a serialized segment table, re-validating the
    /// disjoint/covering invariant.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut b = LayoutBuilder::default();
        for s in &segments {
            if s.offset != b.len {
                return Err(Error::Format(format!(
                    "segment {:?} starts at {} but the previous segment ends at {}",
                    s.name, s.offset, b.len
                )));
            }
            b.push(&s.name, &s.shape);
        }
        Ok(b.build())
    }
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            segments: Vec<Segment>,
        }
        let raw = Raw::deserialize(d)?;
        Layout::from_segments(raw.segments).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    len: usize,
}

impl LayoutBuilder {
    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: &str, shape: &[usize]) -> usize {
        assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate segment name {name:?}"
        );
        let offset = self.len;
        let seg = Segment { name: name.to_string(), offset, shape: shape.to_vec() };
        self.len += seg.len();
        self.segments.push(seg);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn build(self) -> Layout {
        Layout { segments: self.segments, len: self.len }
    }
}

/// Flat `f64` parameter store with a named segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        ParamVector { layout, values }
    }

    pub fn from_flat(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(format!(
                "layout holds {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    /// Plain vector without named structure, handy for toy objectives.
    pub fn unstructured(values: Vec<f64>) -> Self {
        let mut b = Layout::builder();
        b.push("x", &[values.len()]);
        ParamVector { layout: Arc::new(b.build()), values }
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

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let r = self.layout.range(name)?;
        Ok(&self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.layout.range(name)?;
        Ok(&mut self.values[r])
    }

    /// Splits the buffer into `(name, values)` pairs in layout order.
    pub fn unflatten(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .segments()
            .iter()
            .map(|s| (s.name.clone(), self.values[s.range()].to_vec()))
            .collect()
    }

    pub fn from_segments(layout: Arc<Layout>, parts: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut p = ParamVector::zeros(layout);
        if parts.len() != p.layout.segments().len() {
            return Err(Error::shape("segment count does not match layout"));
        }
        for (name, vals) in parts {
            let dst = p.segment_mut(name)?;
            if dst.len() != vals.len() {
                return Err(Error::shape(format!("segment {name:?} has wrong length")));
            }
            dst.copy_from_slice(vals);
        }
        Ok(p)
    }

    /// `self + alpha * direction`, same layout.
    pub fn offset(&self, alpha: f64, direction: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(alpha, direction)?;
        Ok(out)
    }

    pub fn add_scaled(&mut self, alpha: f64, direction: &[f64]) -> Result<()> {
        if direction.len() != self.values.len() {
            return Err(Error::shape(format!(
                "update of length {} for {} parameters",
                direction.len(),
                self.values.len()
            )));
        }
        super::axpy(alpha, direction, &mut self.values);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        super::norm(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Arc<Layout> {
        let mut b = Layout::builder();
        b.push("w", &[2, 3]);
        b.push("b", &[2]);
        b.push("v", &[4]);
        Arc::new(b.build())
    }

    #[test]
    fn segments_cover_the_buffer() {
        let l = layout();
        assert_eq!(l.len(), 12);
        assert_eq!(l.range("b").unwrap(), 6..8);
        assert!(l.range("missing").is_err());
        let mut covered = vec![false; l.len()];
        for s in l.segments() {
            for i in s.range() {
                assert!(!covered[i]);
                covered[i] = true;
            }
        }
        assert!(covered.into_iter().all(|c| c));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(ParamVector::from_flat(layout(), vec![0.0; 5]).is_err());
        let p = ParamVector::zeros(layout());
        assert!(p.offset(1.0, &[1.0]).is_err());
    }

    #[test]
    fn serialized_layout_is_revalidated() {
        let l = layout();
        let json = serde_json::to_string(&*l).unwrap();
        let back: Layout = serde_json::from_str(&json).unwrap();
        assert_eq!(back, *l);
        let bad = json.replace("\"offset\":6", "\"offset\":7");
        assert!(serde_json::from_str::<Layout>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f64>(), 12)) {
            let p = ParamVector::from_flat(layout(), vals.clone()).unwrap();
            let parts = p.unflatten();
            let q = ParamVector::from_segments(layout(), &parts).unwrap();
            let flat = q.flatten();
            prop_assert_eq!(flat.len(), vals.len());
            for (a, b) in flat.iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
