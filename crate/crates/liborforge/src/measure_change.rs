//! Characteristics of `f(t, X_t)`, exponential measure tilts, and their
//! backward-induction composition giving the driver's triplet under each
//! forward measure.
//!
//! Tilted characteristics are state dependent in general, so every operation
//! evaluates at an explicit `(t, x)`. All formulas assume the identity
//! truncation; triplets quoted under a bounded truncation are rejected.

use crate::core::math::{dot, mat_vec, quad_form};
use crate::core::{
    AtomicJumpMeasure, CharacteristicsPoint, ForwardFunctional, JumpAtom, LocalCharacteristics,
    ModelSpec, Truncation,
};
use crate::{Error, Result};

/// The pair describing an exponential change of measure at one `(t, x)`:
/// the drift shift direction `beta = Df(t, x)` and the positive jump
/// multiplier `Y(jump) = exp(f(t, x + jump) - f(t, x))` per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovTilt {
    pub beta: Vec<f64>,
    pub atom_multipliers: Vec<f64>,
}

impl GirsanovTilt {
    /// Evaluate the tilt induced by `f` at `(t, x)` against the atoms of the
    /// supplied jump measure. For affine functionals both components are
    /// state independent by construction.
    pub fn evaluate(
        f: &ForwardFunctional,
        t: f64,
        x: &[f64],
        jumps: &AtomicJumpMeasure,
    ) -> GirsanovTilt {
        let beta = f.gradient(t, x);
        let atom_multipliers = jumps
            .atoms()
            .iter()
            .map(|atom| f.increment(t, x, &atom.size).exp())
            .collect();
        GirsanovTilt {
            beta,
            atom_multipliers,
        }
    }
}

/// Triplet of the scalar semimartingale `f(t, X_t)` at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCharacteristics {
    pub drift: f64,
    pub diffusion: f64,
    pub jumps: AtomicJumpMeasure,
}

fn require_identity(chars: &LocalCharacteristics) -> Result<()> {
    if chars.truncation() != Truncation::Identity {
        return Err(Error::contract(
            "characteristics must be quoted under the identity truncation",
        ));
    }
    Ok(())
}

/// Local characteristics of the scalar process `f(t, X_t)` evaluated at
/// `(t, x)`:
///
/// * drift: `d/dt f + <Df, b> + 1/2 sum D2f_ij c_ij
///   + sum_atoms ((f(t, x + xi) - f(t, x)) - <Df, xi>) lambda`
/// * diffusion: `<Df, c Df>`
/// * jumps: atom `(f(t, x + xi) - f(t, x), lambda)`, dropping images at zero.
pub fn characteristics_of_functional(
    chars: &LocalCharacteristics,
    f: &ForwardFunctional,
    t: f64,
    x: &[f64],
) -> Result<ScalarCharacteristics> {
    require_identity(chars)?;
    let seg = chars.segment_at(t)?;
    let grad = f.gradient(t, x);
    let hess = f.hessian(t, x);

    let mut drift = f.time_derivative(t, x) + dot(&grad, &seg.drift);
    for i in 0..grad.len() {
        for j in 0..grad.len() {
            drift += 0.5 * hess[(i, j)] * seg.diffusion[(i, j)];
        }
    }
    let mut atoms = Vec::new();
    for atom in seg.jumps.atoms() {
        let inc = f.increment(t, x, &atom.size);
        drift += (inc - dot(&grad, &atom.size)) * atom.intensity;
        if inc != 0.0 {
            atoms.push(JumpAtom {
                size: vec![inc],
                intensity: atom.intensity,
            });
        }
    }
    let diffusion = quad_form(&seg.diffusion, &grad, &grad).max(0.0);
    Ok(ScalarCharacteristics {
        drift,
        diffusion,
        jumps: AtomicJumpMeasure::new(1, atoms)?,
    })
}

/// Apply an exponential tilt with density exponent `f` to a triplet point:
///
/// * `b' = b + c Df + sum_atoms (Y(xi) - 1) xi lambda`
/// * `c' = c` (unchanged object)
/// * intensities scale by `Y(xi)`; atom positions are untouched.
pub fn girsanov_tilt_point(
    point: &CharacteristicsPoint,
    f: &ForwardFunctional,
    t: f64,
    x: &[f64],
) -> Result<CharacteristicsPoint> {
    let tilt = GirsanovTilt::evaluate(f, t, x, &point.jumps);
    let c_beta = mat_vec(&point.diffusion, &tilt.beta);
    let mut drift: Vec<f64> = point
        .drift
        .iter()
        .zip(&c_beta)
        .map(|(b, cb)| b + cb)
        .collect();
    let mut atoms = Vec::with_capacity(point.jumps.atoms().len());
    for (atom, y) in point.jumps.atoms().iter().zip(&tilt.atom_multipliers) {
        for (d, xi) in drift.iter_mut().zip(&atom.size) {
            *d += (y - 1.0) * xi * atom.intensity;
        }
        atoms.push(JumpAtom {
            size: atom.size.clone(),
            intensity: y * atom.intensity,
        });
    }
    Ok(CharacteristicsPoint {
        drift,
        diffusion: point.diffusion.clone(),
        jumps: AtomicJumpMeasure::new(point.jumps.dimension(), atoms)?,
    })
}

/// [`girsanov_tilt_point`] reading the base triplet from piecewise-constant
/// characteristics at time `t`.
pub fn girsanov_tilt_apply(
    chars: &LocalCharacteristics,
    f: &ForwardFunctional,
    t: f64,
    x: &[f64],
) -> Result<CharacteristicsPoint> {
    require_identity(chars)?;
    girsanov_tilt_point(&chars.point_at(t)?, f, t, x)
}

/// Driver triplet under the forward measure attached to `T_{k+1}`, evaluated
/// at `(t, x)`:
///
/// * `b = b_N + c_N sum_{j>k} Df_j + sum_atoms (prod_{j>k} e^{inc_j} - 1) xi lambda`
/// * `c = c_N`
/// * intensities scale by the same product of positive multipliers.
///
/// Products are accumulated in log space (sum of increments, one
/// exponential). Identical to iterating one-step tilts from the terminal
/// index down to `k+1`.
pub fn forward_measure_characteristics(
    spec: &ModelSpec,
    k: usize,
    t: f64,
    x: &[f64],
) -> Result<CharacteristicsPoint> {
    spec.tenor().check_rate_index(k)?;
    let backward = spec.backward_functionals()?;
    let base = spec.characteristics_at(t, x)?;

    let mut drift = base.drift.clone();
    // j runs over tenor indices k+1 ..= N-1; functionals are zero-indexed
    let tail = &backward[k..];
    for f in tail {
        let grad = f.gradient(t, x);
        let c_grad = mat_vec(&base.diffusion, &grad);
        for (d, cg) in drift.iter_mut().zip(&c_grad) {
            *d += cg;
        }
    }
    let mut atoms = Vec::with_capacity(base.jumps.atoms().len());
    for atom in base.jumps.atoms() {
        let log_mult: f64 = tail.iter().map(|f| f.increment(t, x, &atom.size)).sum();
        let mult = log_mult.exp();
        for (d, xi) in drift.iter_mut().zip(&atom.size) {
            *d += log_mult.exp_m1() * xi * atom.intensity;
        }
        atoms.push(JumpAtom {
            size: atom.size.clone(),
            intensity: mult * atom.intensity,
        });
    }
    Ok(CharacteristicsPoint {
        drift,
        diffusion: base.diffusion,
        jumps: AtomicJumpMeasure::new(base.jumps.dimension(), atoms)?,
    })
}

/// Residual of the exponential local-martingale condition for `e^{f(t, X_t)}`
/// against an explicit triplet point: zero iff the drift condition holds at
/// `(t, x)`.
pub fn local_martingale_residual(
    point: &CharacteristicsPoint,
    f: &ForwardFunctional,
    t: f64,
    x: &[f64],
) -> f64 {
    let grad = f.gradient(t, x);
    let hess = f.hessian(t, x);
    let mut residual = dot(&grad, &point.drift) + f.time_derivative(t, x);
    for i in 0..grad.len() {
        for j in 0..grad.len() {
            residual += 0.5 * hess[(i, j)] * point.diffusion[(i, j)];
        }
    }
    residual += 0.5 * quad_form(&point.diffusion, &grad, &grad);
    for atom in point.jumps.atoms() {
        let inc = f.increment(t, x, &atom.size);
        residual += (inc.exp_m1() - dot(&grad, &atom.size)) * atom.intensity;
    }
    residual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{ForwardFunctional, Segment};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn scalar_chars(b: f64, c: f64, atoms: &[(f64, f64)]) -> LocalCharacteristics {
        LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: 2.0,
                drift: vec![b],
                diffusion: DMatrix::from_element(1, 1, c),
                jumps: AtomicJumpMeasure::scalar(atoms).unwrap(),
            }],
            Truncation::Identity,
        )
        .unwrap()
    }

    struct Square;
    impl crate::core::FunctionalEval for Square {
        fn dimension(&self) -> usize {
            1
        }
        fn value(&self, _t: f64, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
            0.0
        }
        fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0]]
        }
        fn hessian(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0)
        }
    }

    #[test]
    fn constant_functional_has_trivial_characteristics() {
        let chars = scalar_chars(0.3, 0.2, &[(0.5, 1.5)]);
        let f = ForwardFunctional::affine_const(4.2, vec![0.0]).unwrap();
        let sc = characteristics_of_functional(&chars, &f, 0.5, &[1.0]).unwrap();
        assert_eq!(sc.drift, 0.0);
        assert_eq!(sc.diffusion, 0.0);
        assert!(sc.jumps.is_empty());
    }

    #[test]
    fn identity_functional_passes_triplet_through() {
        let chars = scalar_chars(0.1, 0.04, &[(0.5, 2.0)]);
        let f = ForwardFunctional::affine_const(0.0, vec![1.0]).unwrap();
        let sc = characteristics_of_functional(&chars, &f, 0.0, &[0.7]).unwrap();
        assert!((sc.drift - 0.1).abs() < 1e-15);
        assert!((sc.diffusion - 0.04).abs() < 1e-15);
        assert_eq!(sc.jumps.atoms().len(), 1);
        assert!((sc.jumps.atoms()[0].size[0] - 0.5).abs() < 1e-15);
        assert_eq!(sc.jumps.atoms()[0].intensity, 2.0);
    }

    #[test]
    fn quadratic_functional_matches_hand_calculation() {
        let chars = scalar_chars(0.0, 1.0, &[]);
        let f = ForwardFunctional::custom(Arc::new(Square), 20.0).unwrap();
        let sc = characteristics_of_functional(&chars, &f, 0.0, &[1.0]).unwrap();
        assert!((sc.drift - 1.0).abs() < 1e-15);
        assert!((sc.diffusion - 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bounded_truncation() {
        let chars = LocalCharacteristics::new(
            1,
            vec![Segment {
                t_start: 0.0,
                t_end: 1.0,
                drift: vec![0.0],
                diffusion: DMatrix::zeros(1, 1),
                jumps: AtomicJumpMeasure::empty(1),
            }],
            Truncation::Bounded,
        )
        .unwrap();
        let f = ForwardFunctional::affine_const(0.0, vec![1.0]).unwrap();
        assert!(matches!(
            characteristics_of_functional(&chars, &f, 0.0, &[0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_functional_tilt_is_identity() {
        let chars = scalar_chars(0.2, 0.3, &[(0.5, 1.0), (-0.25, 2.0)]);
        let f = ForwardFunctional::affine_const(0.0, vec![0.0]).unwrap();
        let tilted = girsanov_tilt_apply(&chars, &f, 0.3, &[0.0]).unwrap();
        let base = chars.point_at(0.3).unwrap();
        assert_eq!(tilted, base);
    }

    #[test]
    fn unit_slope_tilt_matches_hand_arithmetic() {
        let chars = scalar_chars(0.0, 1.0, &[(0.5, 1.0)]);
        let f = ForwardFunctional::affine_const(0.0, vec![1.0]).unwrap();
        let tilted = girsanov_tilt_apply(&chars, &f, 0.0, &[0.0]).unwrap();
        assert!((tilted.drift[0] - 1.3243606353500641).abs() < 1e-14);
        assert_eq!(tilted.diffusion, chars.point_at(0.0).unwrap().diffusion);
        assert!((tilted.jumps.atoms()[0].intensity - 1.6487212707001282).abs() < 1e-14);
        assert_eq!(tilted.jumps.atoms()[0].size[0], 0.5);
    }

    #[test]
    fn affine_tilt_is_state_independent() {
        let chars = LocalCharacteristics::new(
            2,
            vec![Segment {
                t_start: 0.0,
                t_end: 1.0,
                drift: vec![0.05, -0.02],
                diffusion: DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.09]),
                jumps: AtomicJumpMeasure::new(
                    2,
                    vec![JumpAtom {
                        size: vec![0.1, 0.2],
                        intensity: 1.5,
                    }],
                )
                .unwrap(),
            }],
            Truncation::Identity,
        )
        .unwrap();
        let f = ForwardFunctional::affine_const(0.0, vec![0.0, 1.0]).unwrap();
        let a = girsanov_tilt_apply(&chars, &f, 0.5, &[0.3, -0.8]).unwrap();
        let b = girsanov_tilt_apply(&chars, &f, 0.5, &[-2.0, 4.0]).unwrap();
        assert_eq!(a, b);
        // diagonal diffusion shifts the tilted coordinate only
        assert!((a.drift[0] - 0.05 - ((0.2f64).exp() - 1.0) * 0.1 * 1.5).abs() < 1e-15);
        assert!(
            (a.drift[1] - (-0.02 + 0.09 + ((0.2f64).exp() - 1.0) * 0.2 * 1.5)).abs() < 1e-15
        );
    }

    #[test]
    fn tilt_and_inverse_tilt_restore_the_triplet() {
        let chars = scalar_chars(0.2, 0.5, &[(0.4, 1.0), (-0.3, 0.7)]);
        let f = ForwardFunctional::affine_const(0.0, vec![0.8]).unwrap();
        let neg = ForwardFunctional::affine_const(0.0, vec![-0.8]).unwrap();
        let there = girsanov_tilt_apply(&chars, &f, 0.1, &[0.0]).unwrap();
        let back = girsanov_tilt_point(&there, &neg, 0.1, &[0.0]).unwrap();
        let base = chars.point_at(0.1).unwrap();
        assert!((back.drift[0] - base.drift[0]).abs() < 1e-12);
        for (a, b) in back.jumps.atoms().iter().zip(base.jumps.atoms()) {
            assert!((a.intensity - b.intensity).abs() < 1e-12);
        }
    }
}
