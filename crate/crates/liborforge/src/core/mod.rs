//! Domain vocabulary: tenor structures, semimartingale characteristics,
//! forward-price functionals, initial curves and the elementary
//! LIBOR / forward-price conversions.
//!
//! Everything here is immutable after construction and safe to share across
//! threads; the free functions are pure.

mod characteristics;
mod curve;
mod functional;
pub(crate) mod math;
mod model;
mod piecewise;
mod tenor;

pub use characteristics::{
    AtomicJumpMeasure, CharacteristicsPoint, JumpAtom, LocalCharacteristics, Segment, Truncation,
};
pub use curve::{
    forward_price_from_curve, forward_price_from_libor, libor_from_forward_price, InitialCurve,
};
pub use functional::{
    audit_derivatives, audit_lipschitz, f_from_g, g_from_f, ConstantFn, DerivativeAudit,
    ForwardFunctional, FunctionalEval, FunctionalKind, LipschitzAudit, TimeFunction,
};
pub use model::{ModelFamily, ModelSpec};
pub use piecewise::PiecewiseVector;
pub use tenor::TenorStructure;
