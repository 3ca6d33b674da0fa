//! Uniform view over a model's learnable arrays, used by the optimizer, the
//! checkpoint codec, L2 regularization and the finite-difference oracle.

use std::collections::BTreeMap;

/// Read-only view of one learnable array.
#[derive(Debug)]
pub struct Slot<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> Slot<'a> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: &'a [f64]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Slot {
            name: name.into(),
            dims,
            data,
        }
    }
}

#[derive(Debug)]
pub struct SlotMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

impl<'a> SlotMut<'a> {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: &'a mut [f64]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        SlotMut {
            name: name.into(),
            dims,
            data,
        }
    }
}

/// A fixed, ordered collection of named `f64` arrays.
pub trait Parameters {
    fn slots(&self) -> Vec<Slot<'_>>;
    fn slots_mut(&mut self) -> Vec<SlotMut<'_>>;

    /// `‖Θ‖_F²` over every slot.
    fn squared_norm(&self) -> f64 {
        self.slots()
            .iter()
            .map(|s| s.data.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.slots().iter().all(|s| s.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradient of one slot. Embedding tables get row-sparse gradients so that
/// entries a batch never touched stay exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub enum SlotGrad {
    Dense(Vec<f64>),
    Rows {
        row_len: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl SlotGrad {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            SlotGrad::Dense(v) => {
                debug_assert_eq!(v.len(), len);
                v.clone()
            }
            SlotGrad::Rows { row_len, rows } => {
                let mut out = vec![0.0; len];
                for (&r, vals) in rows {
                    out[r * row_len..(r + 1) * row_len].copy_from_slice(vals);
                }
                out
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            SlotGrad::Dense(v) => v.iter().all(|x| x.is_finite()),
            SlotGrad::Rows { rows, .. } => rows.values().flatten().all(|x| x.is_finite()),
        }
    }

    /// Adds `other` into `self`; both must describe the same slot.
    pub fn accumulate(&mut self, other: &SlotGrad) {
        match (self, other) {
            (SlotGrad::Dense(a), SlotGrad::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (SlotGrad::Rows { rows: a, row_len }, SlotGrad::Rows { rows: b, .. }) => {
                for (&r, vals) in b {
                    let dst = a.entry(r).or_insert_with(|| vec![0.0; *row_len]);
                    dst.iter_mut().zip(vals).for_each(|(x, y)| *x += y);
                }
            }
            _ => panic!("accumulating mismatched gradient layouts"),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SlotGrad::Dense(v) => v.iter().all(|&x| x == 0.0),
            SlotGrad::Rows { rows, .. } => rows.values().flatten().all(|&x| x == 0.0),
        }
    }
}

/// Adds row `values` into a row-sparse map.
pub(crate) fn add_row(rows: &mut BTreeMap<usize, Vec<f64>>, row: usize, scale: f64, values: &[f64]) {
    let dst = rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
    for (d, v) in dst.iter_mut().zip(values) {
        *d += scale * v;
    }
}

/// Dense gradient of `loss + λ‖Θ‖²`: the sparse loss gradient plus `2λΘ`.
pub fn regularized_dense<P: Parameters>(params: &P, grads: &[SlotGrad], lambda: f64) -> Vec<Vec<f64>> {
    params
        .slots()
        .iter()
        .zip(grads)
        .map(|(slot, g)| {
            let mut dense = g.to_dense(slot.data.len());
            for (d, theta) in dense.iter_mut().zip(slot.data) {
                *d += 2.0 * lambda * theta;
            }
            dense
        })
        .collect()
}
