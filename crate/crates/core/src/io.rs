//! JSON problem and report files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::FeedbackProfile;
use crate::game::{CostParameters, DescriptorGame};
use crate::inverse::Constraints;
use crate::linalg::{Mat, SymMat};

/// Row-major nested arrays.
pub type JsonMatrix = Vec<Vec<f64>>;

pub fn to_json_matrix(m: &Mat) -> JsonMatrix {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_json_matrix(rows: &JsonMatrix, what: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!(
            "{what}: rows have different lengths"
        )));
    }
    let m = Mat::from_fn(r, c, |i, j| rows[i][j]);
    if !crate::linalg::all_finite(&m) {
        return Err(Error::NonFinite);
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostsJson {
    #[serde(rename = "Q")]
    pub q: Vec<JsonMatrix>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<JsonMatrix>>,
}

impl CostsJson {
    pub fn from_costs(c: &CostParameters) -> Self {
        Self {
            q: c.q.iter().map(|q| to_json_matrix(q)).collect(),
            r: c.r
                .iter()
                .map(|ri| ri.iter().map(|r| to_json_matrix(r)).collect())
                .collect(),
        }
    }

    pub fn to_costs(&self) -> Result<CostParameters> {
        let sym = |m: &JsonMatrix, what: String| -> Result<SymMat> {
            SymMat::new(from_json_matrix(m, &what)?)
        };
        let q = self
            .q
            .iter()
            .enumerate()
            .map(|(i, m)| sym(m, format!("Q[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let r = self
            .r
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, m)| sym(m, format!("R[{i}][{j}]")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CostParameters::new(q, r))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintsJson {
    #[serde(default)]
    pub diagonal_q: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

impl From<&ConstraintsJson> for Constraints {
    fn from(c: &ConstraintsJson) -> Self {
        Constraints {
            diagonal_q: c.diagonal_q,
            support: c.support.clone(),
        }
    }
}

/// Input file of every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(rename = "E")]
    pub e: JsonMatrix,
    #[serde(rename = "A")]
    pub a: JsonMatrix,
    #[serde(rename = "B")]
    pub b: Vec<JsonMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostsJson>,
    /// Additional named cost tuples, selectable from the command line.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_sets: BTreeMap<String, CostsJson>,
    /// Observed feedback, one `mᵢ × n` block per player.
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<JsonMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintsJson>,
}

impl ProblemFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn matrices(&self) -> Result<(Mat, Mat, Vec<Mat>)> {
        let e = from_json_matrix(&self.e, "E")?;
        let a = from_json_matrix(&self.a, "A")?;
        let b = self
            .b
            .iter()
            .enumerate()
            .map(|(i, m)| from_json_matrix(m, &format!("B[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        Ok((e, a, b))
    }

    pub fn game(&self) -> Result<DescriptorGame> {
        let (e, a, b) = self.matrices()?;
        DescriptorGame::new(e, a, b)
    }

    /// `costs`, or the named entry of `cost_sets`.
    pub fn cost_set(&self, name: Option<&str>) -> Result<Option<CostParameters>> {
        match name {
            None => self.costs.as_ref().map(CostsJson::to_costs).transpose(),
            Some(n) => self
                .cost_sets
                .get(n)
                .ok_or_else(|| Error::InvalidArgument(format!("no cost set named {n:?}")))
                .and_then(|c| c.to_costs().map(Some)),
        }
    }

    pub fn feedback(&self) -> Result<Option<FeedbackProfile>> {
        self.f
            .as_ref()
            .map(|blocks| {
                blocks
                    .iter()
                    .enumerate()
                    .map(|(i, m)| from_json_matrix(m, &format!("F[{i}]")))
                    .collect::<Result<Vec<_>>>()
                    .map(FeedbackProfile::new)
            })
            .transpose()
    }

    pub fn constraints(&self) -> Constraints {
        self.constraints
            .as_ref()
            .map(Constraints::from)
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

pub fn spectrum_json(ev: &[Complex64]) -> Vec<ComplexJson> {
    ev.iter()
        .map(|z| ComplexJson { re: z.re, im: z.im })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PencilReport {
    pub regular: bool,
    pub index: usize,
    pub r: usize,
    pub finite_spectrum: Vec<ComplexJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedReport {
    #[serde(rename = "J")]
    pub j: JsonMatrix,
    #[serde(rename = "B1")]
    pub b1: Vec<JsonMatrix>,
    #[serde(rename = "B2")]
    pub b2: Vec<JsonMatrix>,
    #[serde(rename = "X1")]
    pub x1: JsonMatrix,
    #[serde(rename = "X2")]
    pub x2: JsonMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualsJson {
    pub lyapunov: Vec<f64>,
    pub stationarity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionReport {
    pub f_bar: JsonMatrix,
    #[serde(rename = "P")]
    pub p: Vec<JsonMatrix>,
    pub spectrum: Vec<ComplexJson>,
    pub residuals: ResidualsJson,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerInverseReport {
    pub player: usize,
    pub residual: f64,
    pub pd_margin: f64,
    pub feasible: bool,
    pub theta: Vec<f64>,
    pub kernel_dim: usize,
    /// `L − r·mᵢ`.
    pub bound: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehaviorJson {
    pub f_bar: JsonMatrix,
    pub spectrum: Vec<ComplexJson>,
    pub matched: bool,
    pub input_distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehaviorsReport {
    pub count: usize,
    pub matched: Vec<bool>,
    pub details: Vec<BehaviorJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyPlayerReport {
    pub player: usize,
    pub residual: f64,
    pub pd_margin: f64,
    pub member: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub players: Vec<VerifyPlayerReport>,
    pub member: bool,
    /// Local best-response check on the forward equilibria of the candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_nash: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisspecifyReport {
    /// Weights identified under `E = I`.
    pub theta: Vec<Vec<f64>>,
    /// `‖𝓜ᵢθᵢ‖₂` against the descriptor conditions.
    pub descriptor_residuals: Vec<f64>,
    pub state_error_sup: Vec<f64>,
    pub input_error_sup: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub command: String,
    pub seed: u64,
    pub tol: f64,
    pub starts: usize,
    pub eps_pd: Option<f64>,
    pub version: String,
}

/// Output of every command; absent sections are omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pencil: Option<PencilReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<ReducedReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<Vec<SolutionReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<Vec<PlayerInverseReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behaviors: Option<BehaviorsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misspecify: Option<MisspecifyReport>,
    pub meta: Meta,
}

impl ReportFile {
    pub fn new(meta: Meta) -> Self {
        Self {
            pencil: None,
            reduced: None,
            forward: None,
            inverse: None,
            behaviors: None,
            verify: None,
            misspecify: None,
            meta,
        }
    }
}

/// Pretty printer that writes every float with 17 significant digits.
struct Sig17<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Sig17(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Io(e)
    })
}
