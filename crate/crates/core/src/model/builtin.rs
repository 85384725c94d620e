//! Builtin model manifolds. Each supplies its full frame together with
//! analytic first and second derivatives.

use nalgebra::DMatrix;

use super::VectorFields;

/// Euclidean space with the first `m` coordinate directions horizontal.
#[derive(Debug, Clone)]
pub struct Flat {
    pub n: usize,
    pub m: usize,
}

impl VectorFields for Flat {
    fn dim(&self) -> usize {
        self.n
    }
    fn rank(&self) -> usize {
        self.m
    }
    fn fields(&self, _q: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn jacobians(&self, _q: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.n, self.n); self.n])
    }
    fn second_derivatives(&self, _q: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        Some(vec![vec![DMatrix::zeros(self.n, self.n); self.n]; self.n])
    }
}

/// First Heisenberg group: `X1 = dx - y/2 dz`, `X2 = dy + x/2 dz`, complement `dz`.
#[derive(Debug, Clone, Copy)]
pub struct Heisenberg;

impl VectorFields for Heisenberg {
    fn dim(&self) -> usize {
        3
    }
    fn rank(&self) -> usize {
        2
    }
    fn fields(&self, q: &[f64]) -> DMatrix<f64> {
        let (x, y) = (q[0], q[1]);
        #[rustfmt::skip]
        let f = DMatrix::from_row_slice(3, 3, &[
            1.0,      0.0,     0.0,
            0.0,      1.0,     0.0,
            -y / 2.0, x / 2.0, 1.0,
        ]);
        f
    }
    fn jacobians(&self, _q: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let mut j1 = DMatrix::zeros(3, 3);
        j1[(2, 1)] = -0.5;
        let mut j2 = DMatrix::zeros(3, 3);
        j2[(2, 0)] = 0.5;
        Some(vec![j1, j2, DMatrix::zeros(3, 3)])
    }
    fn second_derivatives(&self, _q: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        Some(vec![vec![DMatrix::zeros(3, 3); 3]; 3])
    }
}

/// Martinet distribution: `X1 = dx`, `X2 = dy + x^2/2 dz`, complement `dz`.
/// Abnormal curves run along the surface `x = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Martinet;

impl VectorFields for Martinet {
    fn dim(&self) -> usize {
        3
    }
    fn rank(&self) -> usize {
        2
    }
    fn fields(&self, q: &[f64]) -> DMatrix<f64> {
        let x = q[0];
        #[rustfmt::skip]
        let f = DMatrix::from_row_slice(3, 3, &[
            1.0, 0.0,           0.0,
            0.0, 1.0,           0.0,
            0.0, x * x / 2.0,   1.0,
        ]);
        f
    }
    fn jacobians(&self, q: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let mut j2 = DMatrix::zeros(3, 3);
        j2[(2, 0)] = q[0];
        Some(vec![DMatrix::zeros(3, 3), j2, DMatrix::zeros(3, 3)])
    }
    fn second_derivatives(&self, _q: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        let mut d = vec![vec![DMatrix::zeros(3, 3); 3]; 3];
        d[1][0][(2, 0)] = 1.0;
        Some(d)
    }
}
