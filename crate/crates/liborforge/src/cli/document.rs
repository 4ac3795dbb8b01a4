//! Declarative model documents: JSON schema, validation and conversion to
//! an executable model. Parsing is strict; unknown or malformed fields are
//! schema errors naming the offending path, violated model invariants are
//! reported separately.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affine::{calibrate_u, AffineDriverSpec, AffineModelSpec};
use crate::core::{
    AtomicJumpMeasure, InitialCurve, JumpAtom, LocalCharacteristics, ModelSpec, PiecewiseVector,
    Segment, TenorStructure, Truncation,
};
use crate::drift_engine::{FpmSpec, LmmSpec};
use crate::simulation::SimulationConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub schema_version: String,
    /// Tenor dates starting at zero.
    pub tenor: Vec<f64>,
    /// Optional explicit accruals, validated against the dates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accruals: Option<Vec<f64>>,
    /// `(date, bond price)` pairs covering every tenor date past zero.
    pub initial_curve: Vec<(f64, f64)>,
    /// Factor-process characteristics; required for the lmm and fpm
    /// families, ignored by the affine family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverDoc>,
    pub family: FamilyDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverDoc {
    pub dimension: usize,
    pub segments: Vec<SegmentDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDoc {
    pub t_start: f64,
    pub t_end: f64,
    pub drift: Vec<f64>,
    pub diffusion: Vec<Vec<f64>>,
    #[serde(default)]
    pub atoms: Vec<AtomDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDoc {
    pub size: Vec<f64>,
    pub intensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarAtomDoc {
    pub size: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FamilyDoc {
    #[serde(rename = "lmm")]
    Lmm {
        volatilities: Vec<VolatilityDoc>,
        bound_m: f64,
        epsilon: f64,
    },
    #[serde(rename = "fpm")]
    Fpm {
        volatilities: Vec<VolatilityDoc>,
        bound_m: f64,
        epsilon: f64,
    },
    #[serde(rename = "affine")]
    Affine {
        b_tilde: f64,
        beta: f64,
        alpha: f64,
        #[serde(default)]
        jumps_const: Vec<ScalarAtomDoc>,
        #[serde(default)]
        jumps_linear: Vec<ScalarAtomDoc>,
        u: TerminalParams,
    },
}

/// Terminal parameters: explicit values or the string `"calibrate"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalParams {
    Keyword(String),
    Given(Vec<f64>),
}

/// One volatility function: either a constant vector on `[0, T_k]` or
/// explicit piecewise-constant segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolatilityDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<VolSegmentDoc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolSegmentDoc {
    pub t_start: f64,
    pub t_end: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
}

fn default_paths() -> usize {
    100_000
}

fn default_seed() -> u64 {
    42
}

impl Default for SimulationDoc {
    fn default() -> Self {
        SimulationDoc {
            paths: default_paths(),
            time_step: None,
            seed: default_seed(),
            workers: 0,
        }
    }
}

/// Parsed document with the executable model and run defaults.
pub struct ParsedModel {
    pub document: SpecDocument,
    pub model: ModelSpec,
    pub simulation: SimulationConfig,
}

/// Canonical serialized form of a document; parse then serialize is a
/// fixpoint.
pub fn canonical_json(doc: &SpecDocument) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("document serializes");
    text.push('\n');
    text
}

pub fn parse_spec(path: &Path) -> Result<ParsedModel> {
    let text = std::fs::read_to_string(path)?;
    let document: SpecDocument =
        serde_json::from_str(&text).map_err(|e| Error::schema(e.to_string()))?;
    build_model(document)
}

pub fn build_model(document: SpecDocument) -> Result<ParsedModel> {
    if document.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(format!(
            "schema_version: expected \"{SCHEMA_VERSION}\", got \"{}\"",
            document.schema_version
        )));
    }
    let tenor = match &document.accruals {
        Some(accruals) => {
            TenorStructure::with_accruals(document.tenor.clone(), accruals.clone())?
        }
        None => TenorStructure::new(document.tenor.clone())?,
    };
    let curve = InitialCurve::from_pairs(&tenor, &document.initial_curve)?;

    let model = match &document.family {
        FamilyDoc::Lmm {
            volatilities,
            bound_m,
            epsilon,
        } => {
            let levy = build_driver(&document, "lmm")?;
            let vols = build_volatilities(volatilities, &tenor, levy.dimension())?;
            ModelSpec::lmm(
                tenor.clone(),
                curve,
                LmmSpec::new(levy, vols, *bound_m, *epsilon)?,
            )?
        }
        FamilyDoc::Fpm {
            volatilities,
            bound_m,
            epsilon,
        } => {
            let levy = build_driver(&document, "fpm")?;
            let vols = build_volatilities(volatilities, &tenor, levy.dimension())?;
            ModelSpec::fpm(
                tenor.clone(),
                curve,
                FpmSpec::new(levy, vols, *bound_m, *epsilon)?,
            )?
        }
        FamilyDoc::Affine {
            b_tilde,
            beta,
            alpha,
            jumps_const,
            jumps_linear,
            u,
        } => {
            let driver = AffineDriverSpec::new(
                *b_tilde,
                *beta,
                *alpha,
                scalar_measure(jumps_const)?,
                scalar_measure(jumps_linear)?,
            )?;
            let u_values = match u {
                TerminalParams::Keyword(word) if word == "calibrate" => {
                    calibrate_u(&driver, &curve, &tenor)?
                }
                TerminalParams::Keyword(word) => {
                    return Err(Error::schema(format!(
                        "family.u: expected \"calibrate\" or a list of numbers, got \"{word}\""
                    )))
                }
                TerminalParams::Given(values) => values.clone(),
            };
            let affine = AffineModelSpec::new(driver, u_values, tenor.horizon())?;
            ModelSpec::affine(tenor.clone(), curve, affine)?
        }
    };

    let sim_doc = document.simulation.clone().unwrap_or_default();
    let step = sim_doc
        .time_step
        .unwrap_or_else(|| SimulationConfig::default_step(&tenor));
    let simulation = SimulationConfig::new(sim_doc.paths, step, sim_doc.seed)?
        .with_workers(sim_doc.workers);

    Ok(ParsedModel {
        document,
        model,
        simulation,
    })
}

fn build_driver(document: &SpecDocument, family: &str) -> Result<LocalCharacteristics> {
    let doc = document.driver.as_ref().ok_or_else(|| {
        Error::schema(format!("driver: required for the {family} family"))
    })?;
    let d = doc.dimension;
    let segments = doc
        .segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            if seg.diffusion.len() != d || seg.diffusion.iter().any(|row| row.len() != d) {
                return Err(Error::schema(format!(
                    "driver.segments[{i}].diffusion: expected a {d}x{d} matrix"
                )));
            }
            let flat: Vec<f64> = seg.diffusion.iter().flatten().cloned().collect();
            let atoms = seg
                .atoms
                .iter()
                .map(|a| JumpAtom {
                    size: a.size.clone(),
                    intensity: a.intensity,
                })
                .collect();
            Ok(Segment {
                t_start: seg.t_start,
                t_end: seg.t_end,
                drift: seg.drift.clone(),
                diffusion: DMatrix::from_row_slice(d, d, &flat),
                jumps: AtomicJumpMeasure::new(d, atoms)?,
            })
        })
        .collect::<Result<Vec<Segment>>>()?;
    LocalCharacteristics::new(d, segments, Truncation::Identity)
}

fn build_volatilities(
    docs: &[VolatilityDoc],
    tenor: &TenorStructure,
    dimension: usize,
) -> Result<Vec<PiecewiseVector>> {
    if docs.len() != tenor.rate_count() {
        return Err(Error::invariant(format!(
            "family.volatilities: expected {} entries, got {}",
            tenor.rate_count(),
            docs.len()
        )));
    }
    docs.iter()
        .enumerate()
        .map(|(idx, doc)| {
            let k = idx + 1;
            match (&doc.constant, &doc.segments) {
                (Some(value), None) => {
                    if value.len() != dimension {
                        return Err(Error::schema(format!(
                            "family.volatilities[{idx}].constant: expected {dimension} entries"
                        )));
                    }
                    PiecewiseVector::constant(value.clone(), tenor.date(k))
                }
                (None, Some(segments)) => {
                    if segments.is_empty() {
                        return Err(Error::schema(format!(
                            "family.volatilities[{idx}].segments: must be non-empty"
                        )));
                    }
                    let mut breakpoints = vec![segments[0].t_start];
                    let mut values = Vec::new();
                    for (j, s) in segments.iter().enumerate() {
                        if s.value.len() != dimension {
                            return Err(Error::schema(format!(
                                "family.volatilities[{idx}].segments[{j}].value: expected {dimension} entries"
                            )));
                        }
                        breakpoints.push(s.t_end);
                        values.push(s.value.clone());
                    }
                    PiecewiseVector::new(breakpoints, values)
                }
                _ => Err(Error::schema(format!(
                    "family.volatilities[{idx}]: exactly one of `constant` or `segments` required"
                ))),
            }
        })
        .collect()
}

fn scalar_measure(docs: &[ScalarAtomDoc]) -> Result<AtomicJumpMeasure> {
    let pairs: Vec<(f64, f64)> = docs.iter().map(|a| (a.size, a.intensity)).collect();
    AtomicJumpMeasure::scalar(&pairs)
}
