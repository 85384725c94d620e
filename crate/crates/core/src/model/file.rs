use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::{ChartModel, DomainBox, JacobianSource, VectorFields};
use crate::error::{Error, Result};
use crate::linalg;

/// JSON model definition. Frame and complement fields are lists of
/// component expressions in the variables `q1 .. qn`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub frame: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<JacobianSource>,
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_model(self) -> Result<ChartModel> {
        let frame = ExpressionFrame::from_file(&self)?;
        let mut model = ChartModel::new(self.name.clone(), Arc::new(frame))?;
        if let Some(source) = self.jacobian {
            model = model.with_jacobian_source(source);
        }
        if let Some(b) = self.domain_box {
            if b.len() != self.n {
                return Err(Error::invalid("domain_box must have one interval per coordinate"));
            }
            model = model.with_domain(DomainBox(b));
        }
        Ok(model)
    }
}

/// Frame whose components are parsed expressions, with symbolic derivatives.
#[derive(Debug, Clone)]
pub struct ExpressionFrame {
    n: usize,
    m: usize,
    /// `fields[i][j]` is component `j` of `X_i`.
    fields: Vec<Vec<Expr>>,
    /// `jac[i][j][k] = ∂(X_i)_j/∂q_k`.
    jac: Vec<Vec<Vec<Expr>>>,
    /// `second[i][k][j][l] = ∂²(X_i)_j/∂q_l∂q_k`.
    second: Vec<Vec<Vec<Vec<Expr>>>>,
    complement_pivots: Option<Vec<usize>>,
}

impl ExpressionFrame {
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let (n, m) = (file.n, file.m);
        if m == 0 || m > n {
            return Err(Error::invalid(format!("need 0 < m <= n, got n = {n}, m = {m}")));
        }
        if file.frame.len() != m {
            return Err(Error::invalid(format!("expected {m} frame fields, got {}", file.frame.len())));
        }
        let parse_field = |field: &Vec<String>| -> Result<Vec<Expr>> {
            if field.len() != n {
                return Err(Error::invalid(format!("field has {} components, expected {n}", field.len())));
            }
            field.iter().map(|s| Expr::parse_indexed(s, "q", n)).collect()
        };
        let mut fields: Vec<Vec<Expr>> = file.frame.iter().map(parse_field).collect::<Result<_>>()?;
        let mut complement_pivots = None;
        match &file.complement {
            Some(c) => {
                if c.len() != n - m {
                    return Err(Error::invalid(format!("expected {} complement fields, got {}", n - m, c.len())));
                }
                for field in c {
                    fields.push(parse_field(field)?);
                }
            }
            None => {
                let reference: Vec<f64> = match &file.domain_box {
                    Some(b) => b.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect(),
                    None => vec![0.0; n],
                };
                let pivots = complete_by_pivoting(&fields, &reference, n)?;
                for &axis in &pivots {
                    fields.push((0..n).map(|j| Expr::Const(if j == axis { 1.0 } else { 0.0 })).collect());
                }
                complement_pivots = Some(pivots);
            }
        }
        let jac: Vec<Vec<Vec<Expr>>> = fields.iter().map(|f| f.iter().map(|c| (0..n).map(|k| c.diff(k)).collect()).collect()).collect();
        let second = jac
            .iter()
            .map(|ji| (0..n).map(|k| ji.iter().map(|row| row.iter().map(|e| e.diff(k)).collect()).collect()).collect())
            .collect();
        Ok(ExpressionFrame {
            n,
            m,
            fields,
            jac,
            second,
            complement_pivots,
        })
    }

    /// Coordinate axes chosen to complete the frame when the file gave no complement.
    pub fn complement_pivots(&self) -> Option<&[usize]> {
        self.complement_pivots.as_deref()
    }
}

/// Picks `n - m` coordinate axes completing the horizontal frame at `q`:
/// column pivoting on the annihilator basis, deterministic lowest-index ties.
fn complete_by_pivoting(fields: &[Vec<Expr>], q: &[f64], n: usize) -> Result<Vec<usize>> {
    let m = fields.len();
    let h = DMatrix::from_fn(n, m, |j, i| fields[i][j].eval(q));
    let annihilator = linalg::null_space(&h.transpose(), 1e-12 * h.amax().max(1.0));
    if annihilator.ncols() != n - m {
        return Err(Error::DegenerateFrame { point: q.to_vec(), ratio: 0.0 });
    }
    let mut rows = annihilator.transpose();
    let mut pivots = Vec::with_capacity(n - m);
    for _ in 0..(n - m) {
        let mut best = (0, -1.0);
        for col in 0..n {
            if pivots.contains(&col) {
                continue;
            }
            let norm = rows.column(col).norm();
            if norm > best.1 + 1e-12 {
                best = (col, norm);
            }
        }
        let (col, norm) = best;
        if norm < 1e-12 {
            return Err(Error::DegenerateFrame { point: q.to_vec(), ratio: 0.0 });
        }
        let v: DVector<f64> = rows.column(col) / norm;
        // Deflate the chosen direction out of the remaining columns.
        let proj = v.transpose() * &rows;
        rows -= &v * proj;
        pivots.push(col);
    }
    Ok(pivots)
}

impl VectorFields for ExpressionFrame {
    fn dim(&self) -> usize {
        self.n
    }
    fn rank(&self) -> usize {
        self.m
    }
    fn fields(&self, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |j, i| self.fields[i][j].eval(q))
    }
    fn jacobians(&self, q: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some(self.jac.iter().map(|ji| DMatrix::from_fn(self.n, self.n, |j, k| ji[j][k].eval(q))).collect())
    }
    fn second_derivatives(&self, q: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        Some(
            self.second
                .iter()
                .map(|si| si.iter().map(|sk| DMatrix::from_fn(self.n, self.n, |j, l| sk[j][l].eval(q))).collect())
                .collect(),
        )
    }
}
