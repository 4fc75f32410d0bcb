use nalgebra::{DMatrix, DVector};

/// A d×n block whose column `i` is the vector held by node `i`.
///
/// Primal iterates Θ and every dual iterate (x, y, z, ...) share this layout,
/// and communication is always a right-multiplication by an n×n matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock(DMatrix<f64>);

impl ParameterBlock {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self(DMatrix::zeros(d, n))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    /// Every column set to `v`.
    pub fn replicated(v: &DVector<f64>, n: usize) -> Self {
        Self(DMatrix::from_fn(v.len(), n, |r, _| v[r]))
    }

    pub fn from_columns(cols: &[DVector<f64>]) -> Self {
        Self(DMatrix::from_columns(cols))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.0.column(i).into_owned()
    }

    pub fn set_column(&mut self, i: usize, v: &DVector<f64>) {
        self.0.set_column(i, v);
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product tr(selfᵀ other).
    pub fn dot(&self, other: &ParameterBlock) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Sum of the columns, i.e. `self · 𝟙`.
    pub fn column_sum(&self) -> DVector<f64> {
        self.0.column_sum()
    }

    pub fn column_mean(&self) -> DVector<f64> {
        self.0.column_mean()
    }

    /// Largest index (1-based) of a coordinate that is exactly non-zero in column `i`;
    /// 0 when the column is identically zero.
    pub fn last_nonzero(&self, i: usize) -> usize {
        self.0
            .column(i)
            .iter()
            .rposition(|&v| v != 0.0)
            .map_or(0, |p| p + 1)
    }
}

impl From<DMatrix<f64>> for ParameterBlock {
    fn from(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}
