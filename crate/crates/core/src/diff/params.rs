//! Flat parameter vectors with named, shaped segments.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One named segment of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of (name, shape) segments; immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(segments: Vec<(String, Vec<usize>)>) -> Self {
        Layout {
            segments: segments
                .into_iter()
                .map(|(name, shape)| Segment { name, shape })
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Layout { segments: vec![] }
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// (offset, length) of the i-th segment.
    pub fn range(&self, i: usize) -> (usize, usize) {
        let offset = self.segments[..i].iter().map(Segment::len).sum();
        (offset, self.segments[i].len())
    }
}

/// A flat vector of 64-bit parameters tied to a [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Self {
        assert_eq!(
            layout.total_len(),
            values.len(),
            "value length does not match layout"
        );
        ParamVector { layout, values }
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn constant(layout: Arc<Layout>, c: f64) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![c; n],
        }
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// Elementwise map into a new vector with the same layout.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ParamVector {
            layout: self.layout.clone(),
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }
}
