//! Trained-model container and its versioned text serialization.
//!
//! ```text
//! gwquant-model 1
//! kind sgpr|vhgpr
//! dim D
//! columns damage[,load[,switch]]
//! target_offset v
//! kernel_f log_var log_l1 .. log_lD
//! log_noise_variance v          (sgpr)
//! kernel_g log_var log_l1 ..    (vhgpr)
//! mu0 v                         (vhgpr)
//! n N
//! row x_1 .. x_D y [lambda]     (N lines; lambda for vhgpr only)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Every real is written with 17 significant digits so a reload rebuilds
//! bit-identical caches.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::{
    train_sgpr, train_vhgpr, KernelParams, PredictiveMoments, Regressor, SgprModel, TrainOptions,
    VhgprModel, VhgprParams,
};
use crate::io::{fmt_exact, write_atomic};

pub const SCHEMA_ID: &str = "gwquant-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sgpr,
    Vhgpr,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Sgpr => "sgpr",
            ModelKind::Vhgpr => "vhgpr",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgpr" => Ok(ModelKind::Sgpr),
            "vhgpr" => Ok(ModelKind::Vhgpr),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Sgpr(SgprModel),
    Vhgpr(VhgprModel),
}

impl TrainedModel {
    pub fn train(
        kind: ModelKind,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        options: &TrainOptions,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::Sgpr => TrainedModel::Sgpr(train_sgpr(x, y, options)?),
            ModelKind::Vhgpr => TrainedModel::Vhgpr(train_vhgpr(x, y, options)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Sgpr(_) => ModelKind::Sgpr,
            TrainedModel::Vhgpr(_) => ModelKind::Vhgpr,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            TrainedModel::Sgpr(m) => &m.warnings,
            TrainedModel::Vhgpr(m) => &m.warnings,
        }
    }

    fn as_regressor(&self) -> &(dyn Regressor + Sync) {
        match self {
            TrainedModel::Sgpr(m) => m,
            TrainedModel::Vhgpr(m) => m,
        }
    }

    pub fn to_text(&self, columns: &[String]) -> String {
        let mut out = format!("{SCHEMA_ID} {SCHEMA_VERSION}\nkind {}\n", self.kind());
        let x = self.train_inputs();
        let y = self.train_targets();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| fmt_exact(*x))
                .collect::<Vec<_>>()
                .join(" ")
        };
        out += &format!("dim {}\ncolumns {}\n", x.ncols(), columns.join(","));
        let lambda: Option<&[f64]> = match self {
            TrainedModel::Sgpr(m) => {
                out += &format!("target_offset {}\n", fmt_exact(m.target_offset));
                out += &format!("kernel_f {}\n", join(&m.kernel.to_vec()));
                out += &format!("log_noise_variance {}\n", fmt_exact(m.log_noise_variance));
                None
            }
            TrainedModel::Vhgpr(m) => {
                out += &format!("target_offset {}\n", fmt_exact(m.target_offset));
                out += &format!("kernel_f {}\n", join(&m.params.kernel_f.to_vec()));
                out += &format!("kernel_g {}\n", join(&m.params.kernel_g.to_vec()));
                out += &format!("mu0 {}\n", fmt_exact(m.params.mu0));
                Some(m.variational_lambda())
            }
        };
        out += &format!("n {}\n", y.len());
        for i in 0..y.len() {
            let mut row: Vec<f64> = x.row(i).iter().copied().collect();
            row.push(y[i]);
            if let Some(l) = lambda {
                row.push(l[i]);
            }
            out += &format!("row {}\n", join(&row));
        }
        out
    }

    /// Parse a serialized model; returns it with its column names.
    pub fn from_text(text: &str) -> Result<(Self, Vec<String>)> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, msg: String| Error::Parse {
            line: line + 1,
            msg,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Schema("empty model file".into()))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(SCHEMA_ID) {
            return Err(Error::Schema(format!(
                "not a model file (expected '{SCHEMA_ID}' header)"
            )));
        }
        let version = head.next().unwrap_or("");
        if version != SCHEMA_VERSION.to_string() {
            return Err(Error::Schema(format!(
                "unsupported schema version '{version}' (expected {SCHEMA_VERSION})"
            )));
        }
        let mut field = |name: &str| -> Result<(usize, Vec<String>)> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::Schema(format!("missing field '{name}'")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(Error::Schema(format!(
                    "line {}: expected field '{name}'",
                    i + 1
                )));
            }
            Ok((i, parts.map(str::to_string).collect()))
        };
        let reals = |i: usize, v: &[String]| -> Result<Vec<f64>> {
            v.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| parse_err(i, format!("'{s}': {e}")))
                })
                .collect()
        };
        let scalar = |i: usize, v: &[String]| -> Result<f64> {
            match reals(i, v)?.as_slice() {
                [x] => Ok(*x),
                _ => Err(parse_err(i, "expected one value".into())),
            }
        };

        let (i, kind) = field("kind")?;
        let kind: ModelKind = kind
            .first()
            .ok_or_else(|| parse_err(i, "missing kind".into()))?
            .parse()
            .map_err(|_| Error::Schema(format!("line {}: unknown model kind", i + 1)))?;
        let (i, dim) = field("dim")?;
        let dim = scalar(i, &dim)? as usize;
        let (_, columns) = field("columns")?;
        let columns: Vec<String> = columns
            .first()
            .map(|c| c.split(',').map(str::to_string).collect())
            .unwrap_or_default();
        if columns.len() != dim {
            return Err(Error::Schema(format!(
                "{} column names for dimension {dim}",
                columns.len()
            )));
        }
        let (i, v) = field("target_offset")?;
        let offset = scalar(i, &v)?;
        let (i, v) = field("kernel_f")?;
        let kernel_f = reals(i, &v)?;
        let extra = match kind {
            ModelKind::Sgpr => {
                let (i, v) = field("log_noise_variance")?;
                (scalar(i, &v)?, Vec::new())
            }
            ModelKind::Vhgpr => {
                let (i, v) = field("kernel_g")?;
                let kg = reals(i, &v)?;
                let (i, v) = field("mu0")?;
                (scalar(i, &v)?, kg)
            }
        };
        let (i, v) = field("n")?;
        let n = scalar(i, &v)? as usize;
        let width = dim + 1 + usize::from(kind == ModelKind::Vhgpr);
        let mut data = Vec::with_capacity(n * width);
        for _ in 0..n {
            let (i, v) = field("row")?;
            let r = reals(i, &v)?;
            if r.len() != width {
                return Err(parse_err(
                    i,
                    format!("expected {width} values, found {}", r.len()),
                ));
            }
            data.extend(r);
        }
        if let Some((i, _)) = lines.next() {
            return Err(parse_err(i, "unexpected trailing content".into()));
        }
        if kernel_f.len() != dim + 1 || (kind == ModelKind::Vhgpr && extra.1.len() != dim + 1) {
            return Err(Error::Schema(
                "kernel parameter count does not match dimension".into(),
            ));
        }
        let x = DMatrix::from_fn(n, dim, |r, c| data[r * width + c]);
        let y = DVector::from_fn(n, |r, _| data[r * width + dim]);
        let model = match kind {
            ModelKind::Sgpr => TrainedModel::Sgpr(SgprModel::fit(
                KernelParams::from_slice(&kernel_f),
                extra.0,
                x,
                y,
                offset,
            )?),
            ModelKind::Vhgpr => {
                let params = VhgprParams {
                    kernel_f: KernelParams::from_slice(&kernel_f),
                    kernel_g: KernelParams::from_slice(&extra.1),
                    mu0: extra.0,
                    variational_lambda: (0..n).map(|r| data[r * width + dim + 1]).collect(),
                };
                TrainedModel::Vhgpr(VhgprModel::fit(params, x, y, offset)?)
            }
        };
        Ok((model, columns))
    }

    pub fn write(&self, path: &Path, columns: &[String]) -> Result<()> {
        write_atomic(path, self.to_text(columns).as_bytes())
    }

    pub fn read(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl Regressor for TrainedModel {
    fn dim(&self) -> usize {
        self.as_regressor().dim()
    }
    fn train_inputs(&self) -> &DMatrix<f64> {
        self.as_regressor().train_inputs()
    }
    fn train_targets(&self) -> &DVector<f64> {
        self.as_regressor().train_targets()
    }
    fn predict(&self, xq: &DMatrix<f64>) -> Result<PredictiveMoments> {
        self.as_regressor().predict(xq)
    }
}
