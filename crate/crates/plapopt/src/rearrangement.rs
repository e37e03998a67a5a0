//! Rearrangement classes of piecewise-constant fields on equal-measure cells.
//!
//! Two cell fields are rearrangements of each other exactly when their value
//! multisets coincide; on equal-measure cells every permutation of values is
//! measure-preserving and no other discrete rearrangements exist. The
//! extremal rearrangements against a reference profile are obtained by
//! sorting, and comonotonicity defects certify extremality after the fact.

use crate::mesh::{CellField, Mesh};
use crate::{Error, Result};

/// A rearrangement class: the sorted value multiset of a generator field
/// together with the (uniform) cell measure it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct RearrangementClass {
    /// Values in ascending order (ties kept; length equals the cell count).
    pub sorted_values: Vec<f64>,
    /// Common measure of every cell.
    pub cell_measure: f64,
}

impl RearrangementClass {
    pub fn n_cells(&self) -> usize {
        self.sorted_values.len()
    }

    /// The field assigning the sorted values in cell-index order; the
    /// canonical representative used as a default starting assignment.
    pub fn canonical_field(&self) -> CellField {
        CellField::new(self.sorted_values.clone())
    }
}

/// Direction of an extremal rearrangement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    /// Largest values onto the largest reference values (maximizes the
    /// integral of field times reference).
    Max,
    /// Largest values onto the smallest reference values (minimizes it).
    Min,
}

/// Extract the class of a field. Errors when cells do not all have the same
/// measure, since then sorting is no longer measure-preserving.
pub fn class_of(mesh: &Mesh, f: &CellField) -> Result<RearrangementClass> {
    f.validate(mesh)?;
    if !mesh.equal_measure() {
        return Err(Error::UnequalMeasure);
    }
    let mut sorted_values = f.values.clone();
    sorted_values.sort_by(f64::total_cmp);
    Ok(RearrangementClass { sorted_values, cell_measure: mesh.cell_measure() })
}

/// Exact multiset equality of two fields' values.
pub fn is_rearrangement_of(mesh: &Mesh, f: &CellField, g: &CellField) -> Result<bool> {
    f.validate(mesh)?;
    g.validate(mesh)?;
    if !mesh.equal_measure() {
        return Err(Error::UnequalMeasure);
    }
    let mut a = f.values.clone();
    let mut b = g.values.clone();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a == b)
}

/// Membership of a field in a class (exact value-multiset equality).
pub fn in_class(mesh: &Mesh, class: &RearrangementClass, f: &CellField) -> Result<bool> {
    f.validate(mesh)?;
    if !mesh.equal_measure() {
        return Err(Error::UnequalMeasure);
    }
    if class.n_cells() != f.len() || class.cell_measure != mesh.cell_measure() {
        return Ok(false);
    }
    let mut a = f.values.clone();
    a.sort_by(f64::total_cmp);
    Ok(a == class.sorted_values)
}

/// The extremal rearrangement of `class` against `reference`.
///
/// Cells are ranked by reference value with ties broken by ascending cell
/// index, so the result is deterministic; the class values are laid onto
/// that ranking in ascending (`Max`) or descending (`Min`) order. Among all
/// permutations of the class values this maximizes/minimizes
/// `sum_c f_c * reference_c` (the classical sorting inequality).
pub fn extremal_rearrangement(
    mesh: &Mesh,
    class: &RearrangementClass,
    reference: &CellField,
    sense: Extremum,
) -> Result<CellField> {
    reference.validate(mesh)?;
    if !mesh.equal_measure() {
        return Err(Error::UnequalMeasure);
    }
    if class.n_cells() != mesh.n_cells() {
        return Err(Error::SizeMismatch { expected: mesh.n_cells(), got: class.n_cells() });
    }
    let n = mesh.n_cells();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by reference value; equal references keep ascending index.
    order.sort_by(|&a, &b| reference.values[a].total_cmp(&reference.values[b]));
    let mut out = vec![0.0; n];
    for (rank, &cell) in order.iter().enumerate() {
        let v = match sense {
            Extremum::Max => class.sorted_values[rank],
            Extremum::Min => class.sorted_values[n - 1 - rank],
        };
        out[cell] = v;
    }
    Ok(CellField::new(out))
}

/// Average pairwise comonotonicity violation between `f` and `reference`:
///
/// `sum_{i<j} max(0, -sign * (r_i - r_j) * (f_i - f_j)) / (n(n-1)/2)`.
///
/// Zero exactly when `f` is comonotone (`sign = +1`) or antitone
/// (`sign = -1`) with the reference up to ties. Pairwise by definition, so
/// O(n^2); it is evaluated once per certificate, not in inner loops.
pub fn comonotonicity_defect(
    mesh: &Mesh,
    f: &CellField,
    reference: &CellField,
    sign: f64,
) -> Result<f64> {
    f.validate(mesh)?;
    reference.validate(mesh)?;
    let n = f.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let viol = -sign * (reference.values[i] - reference.values[j]) * (f.values[i] - f.values[j]);
            if viol > 0.0 {
                acc += viol;
            }
        }
    }
    Ok(acc / (0.5 * n as f64 * (n as f64 - 1.0)))
}
