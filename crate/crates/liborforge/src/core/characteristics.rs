use nalgebra::DMatrix;

use crate::core::math;
use crate::{Error, Result};

const PARTITION_TOL: f64 = 1e-12;
const EIGEN_FLOOR: f64 = -1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// One jump atom: a displacement vector and its arrival intensity per year.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom {
    pub size: Vec<f64>,
    pub intensity: f64,
}

/// Finite atomic jump measure (compound-Poisson form). Every jump integral
/// against this measure is an exact finite sum, so drift conditions evaluate
/// to machine precision and simulation of the jump component is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicJumpMeasure {
    dimension: usize,
    atoms: Vec<JumpAtom>,
}

impl AtomicJumpMeasure {
    pub fn new(dimension: usize, atoms: Vec<JumpAtom>) -> Result<Self> {
        for (i, atom) in atoms.iter().enumerate() {
            if atom.size.len() != dimension {
                return Err(Error::invariant(format!(
                    "jump atom {i} has dimension {} instead of {dimension}",
                    atom.size.len()
                )));
            }
            if !(atom.intensity >= 0.0) || !atom.intensity.is_finite() {
                return Err(Error::invariant(format!(
                    "jump atom {i} has invalid intensity {}",
                    atom.intensity
                )));
            }
            if atom.size.iter().all(|v| *v == 0.0) {
                return Err(Error::invariant(format!(
                    "jump atom {i} sits at the zero vector"
                )));
            }
            if atom.size.iter().any(|v| !v.is_finite()) {
                return Err(Error::invariant(format!("jump atom {i} has non-finite size")));
            }
        }
        Ok(AtomicJumpMeasure { dimension, atoms })
    }

    pub fn empty(dimension: usize) -> Self {
        AtomicJumpMeasure {
            dimension,
            atoms: Vec::new(),
        }
    }

    /// Scalar convenience constructor from `(size, intensity)` pairs.
    pub fn scalar(pairs: &[(f64, f64)]) -> Result<Self> {
        let atoms = pairs
            .iter()
            .map(|(size, intensity)| JumpAtom {
                size: vec![*size],
                intensity: *intensity,
            })
            .collect();
        AtomicJumpMeasure::new(1, atoms)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }
}

/// Which truncation convention the drift of a characteristics triplet is
/// quoted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// `h(x) = x`; the only convention accepted by the measure-change and
    /// drift-condition machinery.
    Identity,
    /// `h(x) = 1 ∧ x`, used when quoting the affine driver block.
    Bounded,
}

/// Characteristics on one time interval with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub drift: Vec<f64>,
    pub diffusion: DMatrix<f64>,
    pub jumps: AtomicJumpMeasure,
}

/// Time-dependent triplet `(b, c, F)` of a driver, piecewise constant on
/// declared segments that partition `[0, T_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCharacteristics {
    dimension: usize,
    segments: Vec<Segment>,
    truncation: Truncation,
}

impl LocalCharacteristics {
    pub fn new(
        dimension: usize,
        segments: Vec<Segment>,
        truncation: Truncation,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invariant("characteristics need at least one segment"));
        }
        if segments[0].t_start.abs() > PARTITION_TOL {
            return Err(Error::invariant(format!(
                "first segment starts at {} instead of 0",
                segments[0].t_start
            )));
        }
        for (i, seg) in segments.iter().enumerate() {
            if seg.t_end - seg.t_start <= 0.0 {
                return Err(Error::invariant(format!(
                    "segment {i} has non-positive length [{}, {}]",
                    seg.t_start, seg.t_end
                )));
            }
            if i > 0 && (seg.t_start - segments[i - 1].t_end).abs() > PARTITION_TOL {
                return Err(Error::invariant(format!(
                    "segments {} and {i} leave a gap or overlap at t = {}",
                    i - 1,
                    seg.t_start
                )));
            }
            if seg.drift.len() != dimension {
                return Err(Error::invariant(format!(
                    "segment {i} drift has dimension {} instead of {dimension}",
                    seg.drift.len()
                )));
            }
            if seg.jumps.dimension() != dimension {
                return Err(Error::invariant(format!(
                    "segment {i} jump measure has dimension {} instead of {dimension}",
                    seg.jumps.dimension()
                )));
            }
            check_diffusion(&seg.diffusion, dimension, i)?;
        }
        Ok(LocalCharacteristics {
            dimension,
            segments,
            truncation,
        })
    }

    /// Zero driver over `[0, horizon]`.
    pub fn zero(dimension: usize, horizon: f64) -> Result<Self> {
        LocalCharacteristics::new(
            dimension,
            vec![Segment {
                t_start: 0.0,
                t_end: horizon,
                drift: vec![0.0; dimension],
                diffusion: DMatrix::zeros(dimension, dimension),
                jumps: AtomicJumpMeasure::empty(dimension),
            }],
            Truncation::Identity,
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn horizon(&self) -> f64 {
        self.segments.last().expect("non-empty").t_end
    }

    /// Segment in force at time `t`; the right endpoint belongs to the last
    /// segment.
    pub fn segment_at(&self, t: f64) -> Result<&Segment> {
        if t < -PARTITION_TOL || t > self.horizon() + PARTITION_TOL {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        let idx = self
            .segments
            .partition_point(|seg| seg.t_end <= t)
            .min(self.segments.len() - 1);
        Ok(&self.segments[idx])
    }

    /// Triplet at `(t)` as an owned point value.
    pub fn point_at(&self, t: f64) -> Result<CharacteristicsPoint> {
        let seg = self.segment_at(t)?;
        Ok(CharacteristicsPoint {
            drift: seg.drift.clone(),
            diffusion: seg.diffusion.clone(),
            jumps: seg.jumps.clone(),
        })
    }
}

fn check_diffusion(c: &DMatrix<f64>, dimension: usize, seg_index: usize) -> Result<()> {
    if c.nrows() != dimension || c.ncols() != dimension {
        return Err(Error::invariant(format!(
            "segment {seg_index} diffusion is {}x{} instead of {dimension}x{dimension}",
            c.nrows(),
            c.ncols()
        )));
    }
    let scale = math::frobenius_norm(c).max(1.0);
    for i in 0..dimension {
        for j in (i + 1)..dimension {
            if (c[(i, j)] - c[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invariant(format!(
                    "segment {seg_index} diffusion is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let min_eig = c
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < EIGEN_FLOOR * scale {
        return Err(Error::invariant(format!(
            "segment {seg_index} diffusion has eigenvalue {min_eig}, not positive semidefinite"
        )));
    }
    Ok(())
}

/// A characteristics triplet evaluated at an explicit `(t, x)`. Tilted
/// measures make the triplet state dependent, so point evaluations are the
/// natural return type of the measure-change operations.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicsPoint {
    pub drift: Vec<f64>,
    pub diffusion: DMatrix<f64>,
    pub jumps: AtomicJumpMeasure,
}

impl CharacteristicsPoint {
    pub fn dimension(&self) -> usize {
        self.drift.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(t0: f64, t1: f64, d: usize) -> Segment {
        Segment {
            t_start: t0,
            t_end: t1,
            drift: vec![0.0; d],
            diffusion: DMatrix::zeros(d, d),
            jumps: AtomicJumpMeasure::empty(d),
        }
    }

    #[test]
    fn rejects_zero_atom_and_negative_intensity() {
        assert!(AtomicJumpMeasure::scalar(&[(0.0, 1.0)]).is_err());
        assert!(AtomicJumpMeasure::scalar(&[(0.5, -1.0)]).is_err());
        assert!(AtomicJumpMeasure::scalar(&[(0.5, 1.0)]).is_ok());
    }

    #[test]
    fn rejects_gapped_partition() {
        let err = LocalCharacteristics::new(
            1,
            vec![seg(0.0, 1.0, 1), seg(1.5, 2.0, 1)],
            Truncation::Identity,
        )
        .unwrap_err();
        assert!(err.to_string().contains("gap or overlap"));
    }

    #[test]
    fn rejects_indefinite_diffusion() {
        let mut s = seg(0.0, 1.0, 2);
        s.diffusion = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(LocalCharacteristics::new(2, vec![s], Truncation::Identity).is_err());
    }

    #[test]
    fn segment_lookup_covers_boundaries() {
        let chars = LocalCharacteristics::new(
            1,
            vec![seg(0.0, 1.0, 1), seg(1.0, 2.0, 1)],
            Truncation::Identity,
        )
        .unwrap();
        assert_eq!(chars.segment_at(0.0).unwrap().t_end, 1.0);
        assert_eq!(chars.segment_at(0.999).unwrap().t_end, 1.0);
        assert_eq!(chars.segment_at(1.0).unwrap().t_end, 2.0);
        assert_eq!(chars.segment_at(2.0).unwrap().t_end, 2.0);
        assert!(chars.segment_at(2.5).is_err());
    }
}
