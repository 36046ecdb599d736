//! TOML model files.
//!
//! ```toml
//! schema = "qnet-model/1"
//!
//! [dims]
//! n = 2
//! m0 = 2
//! axes = 1
//! m_plus = [1]
//! m_minus = [1]
//! boundary = "periodic"
//!
//! [matrices]
//! A = [[-1.0, 0.0], [0.0, -1.0]]
//! B = [[1.0, 0.0], [0.0, 1.0]]
//! J = [[0.0, 1.0], [-1.0, 0.0]]
//! Theta = [[0.0, 0.5], [-0.5, 0.0]]   # optional
//!
//! [[matrices.axis]]
//! C_plus = [[0.0, 0.0]]
//! C_minus = [[0.0, 0.0]]
//! D_plus = [[0.0, 0.0]]
//! D_minus = [[0.0, 0.0]]
//! E_plus = [[0.0], [0.0]]
//! E_minus = [[0.0], [0.0]]
//!
//! [weights]
//! kind = "geometric"          # or "finite" with [[weights.block]] offset/matrix
//! rho = 0.5
//! base = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [run]
//! N = 8
//! grid = 64
//! ```

use serde::{Deserialize, Serialize};

use crate::cmatrix::{self, RMatrix};
use crate::error::{Error, Result};
use crate::network_model::{self, AxisCoupling, BlockParams, Dims};
use crate::performance::{WeightKind, WeightSequence};
use crate::realizability;

pub const SCHEMA: &str = "qnet-model/1";

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: String,
    pub dims: DimsSection,
    pub matrices: MatricesSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub n: usize,
    pub m0: usize,
    pub axes: usize,
    pub m_plus: Vec<usize>,
    pub m_minus: Vec<usize>,
    #[serde(default = "periodic")]
    pub boundary: String,
}

fn periodic() -> String {
    "periodic".into()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatricesSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "J")]
    pub j: Rows,
    #[serde(rename = "Theta", default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Rows>,
    pub axis: Vec<AxisSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    #[serde(rename = "C_plus")]
    pub c_plus: Rows,
    #[serde(rename = "C_minus")]
    pub c_minus: Rows,
    #[serde(rename = "D_plus")]
    pub d_plus: Rows,
    #[serde(rename = "D_minus")]
    pub d_minus: Rows,
    #[serde(rename = "E_plus")]
    pub e_plus: Rows,
    #[serde(rename = "E_minus")]
    pub e_minus: Rows,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsSection {
    Finite {
        #[serde(default)]
        tail_bound: f64,
        block: Vec<WeightBlock>,
    },
    Geometric {
        rho: f64,
        base: Rows,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightBlock {
    pub offset: Vec<i64>,
    pub matrix: Rows,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    File,
    Solved,
    Missing,
}

#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub params: BlockParams,
    pub weights: Option<WeightSequence>,
    pub run: RunSection,
    pub theta_source: ThetaSource,
    /// Residual of the Θ fit when Θ was solved for.
    pub theta_residual: Option<f64>,
}

fn matrix(name: &str, rows: &Rows, expected_cols: usize) -> Result<RMatrix> {
    let cols = rows.first().map_or(expected_cols, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{name} has rows of different lengths")));
    }
    Ok(RMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.schema != SCHEMA {
            return Err(Error::Parse(format!("unsupported schema {:?}, expected {SCHEMA:?}", file.schema)));
        }
        if file.dims.boundary != "periodic" {
            return Err(Error::Parse(format!(
                "boundary {:?} is not supported; only periodic boundaries are modelled",
                file.dims.boundary
            )));
        }
        let d = &file.dims;
        if d.m_plus.len() != d.axes || d.m_minus.len() != d.axes || file.matrices.axis.len() != d.axes {
            return Err(Error::Parse(format!(
                "axes = {} but m_plus, m_minus and [[matrices.axis]] list {}, {} and {} entries",
                d.axes,
                d.m_plus.len(),
                d.m_minus.len(),
                file.matrices.axis.len()
            )));
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Block parameters exactly as written, without validation.
    pub fn block_params(&self) -> Result<BlockParams> {
        let d = &self.dims;
        let m = &self.matrices;
        let axes = m
            .axis
            .iter()
            .enumerate()
            .map(|(k, ax)| {
                let tag = |s: &str| format!("{s}[{}]", k + 1);
                Ok(AxisCoupling {
                    c_plus: matrix(&tag("C_plus"), &ax.c_plus, d.n)?,
                    c_minus: matrix(&tag("C_minus"), &ax.c_minus, d.n)?,
                    d_plus: matrix(&tag("D_plus"), &ax.d_plus, d.m0)?,
                    d_minus: matrix(&tag("D_minus"), &ax.d_minus, d.m0)?,
                    e_plus: matrix(&tag("E_plus"), &ax.e_plus, d.m_plus.get(k).copied().unwrap_or(0))?,
                    e_minus: matrix(&tag("E_minus"), &ax.e_minus, d.m_minus.get(k).copied().unwrap_or(0))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockParams {
            dims: Dims { n: d.n, m0: d.m0, m_plus: d.m_plus.clone(), m_minus: d.m_minus.clone() },
            a: matrix("A", &m.a, d.n)?,
            b: matrix("B", &m.b, d.m0)?,
            j: matrix("J", &m.j, d.m0)?,
            theta: m.theta.as_ref().map(|t| matrix("Theta", t, d.n)).transpose()?,
            axes,
        })
    }

    pub fn weight_sequence(&self) -> Result<Option<WeightSequence>> {
        let (n, axes) = (self.dims.n, self.dims.axes);
        self.weights
            .as_ref()
            .map(|w| match w {
                WeightsSection::Finite { tail_bound, block } => {
                    let blocks = block
                        .iter()
                        .map(|b| Ok((b.offset.clone(), matrix("weights.block.matrix", &b.matrix, n)?)))
                        .collect::<Result<Vec<_>>>()?;
                    WeightSequence::finite_with_tail(axes, n, blocks, *tail_bound)
                }
                WeightsSection::Geometric { rho, base } => {
                    WeightSequence::geometric(axes, *rho, matrix("weights.base", base, n)?)
                }
            })
            .transpose()
    }

    /// Parses, validates and completes the model. A missing Θ is solved for
    /// on chains.
    pub fn load(&self) -> Result<LoadedModel> {
        let mut params = self.block_params()?;
        let violations = network_model::validate(&params);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
            return Err(Error::Parse(format!("model violates {} constraint(s):\n{}", violations.len(), list.join("\n"))));
        }
        let weights = self.weight_sequence()?;
        let (theta_source, theta_residual) = if params.theta.is_some() {
            (ThetaSource::File, None)
        } else if params.axis_count() == 1 {
            let s = realizability::solve_theta(&params)?;
            params.theta = Some(s.theta);
            (ThetaSource::Solved, Some(s.residual))
        } else {
            (ThetaSource::Missing, None)
        };
        Ok(LoadedModel { params, weights, run: self.run.clone(), theta_source, theta_residual })
    }

    pub fn from_params(params: &BlockParams, weights: Option<&WeightSequence>, run: RunSection) -> Self {
        let rows = cmatrix::real_rows;
        let weights = weights.map(|w| match &w.kind {
            WeightKind::Finite(map) => WeightsSection::Finite {
                tail_bound: w.tail_bound,
                block: map
                    .iter()
                    .map(|(k, m)| WeightBlock { offset: k.clone(), matrix: rows(m) })
                    .collect(),
            },
            WeightKind::Geometric { rho, base } => WeightsSection::Geometric { rho: *rho, base: rows(base) },
        });
        ModelFile {
            schema: SCHEMA.into(),
            dims: DimsSection {
                n: params.n(),
                m0: params.m0(),
                axes: params.axis_count(),
                m_plus: params.dims.m_plus.clone(),
                m_minus: params.dims.m_minus.clone(),
                boundary: periodic(),
            },
            matrices: MatricesSection {
                a: rows(&params.a),
                b: rows(&params.b),
                j: rows(&params.j),
                theta: params.theta.as_ref().map(rows),
                axis: params
                    .axes
                    .iter()
                    .map(|ax| AxisSection {
                        c_plus: rows(&ax.c_plus),
                        c_minus: rows(&ax.c_minus),
                        d_plus: rows(&ax.d_plus),
                        d_minus: rows(&ax.d_minus),
                        e_plus: rows(&ax.e_plus),
                        e_minus: rows(&ax.e_minus),
                    })
                    .collect(),
            },
            weights,
            run,
        }
    }
}
