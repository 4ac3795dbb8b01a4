use crate::affine::AffineModelSpec;
use crate::core::{
    f_from_g, g_from_f, CharacteristicsPoint, ForwardFunctional, InitialCurve,
    LocalCharacteristics, TenorStructure,
};
use crate::drift_engine::{FpmSpec, LmmSpec};
use crate::{Error, Result};

/// Which functional family the model belongs to. The rate family is quoted
/// through per-period functionals under the backward measure chain, the
/// other two through terminal-quoted functionals under the terminal measure.
#[derive(Debug, Clone)]
pub enum ModelFamily {
    Lmm(LmmSpec),
    Fpm(FpmSpec),
    Affine(AffineModelSpec),
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Lmm(_) => "lmm",
            ModelFamily::Fpm(_) => "fpm",
            ModelFamily::Affine(_) => "affine",
        }
    }
}

/// A complete declarative model: tenor structure, driver characteristics
/// under the terminal measure, the functional family, and the initial curve.
///
/// `driver` holds the deterministic reference triplet of the driving process.
/// For the rate family the drift entries are placeholders (the no-arbitrage
/// drift is state dependent and computed on demand); for the affine family
/// the triplet is quoted at the initial state. Use [`ModelSpec::characteristics_at`]
/// for the exact triplet at a given `(t, x)`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    tenor: TenorStructure,
    initial_curve: InitialCurve,
    driver: LocalCharacteristics,
    functionals: Vec<ForwardFunctional>,
    family: ModelFamily,
}

impl ModelSpec {
    /// Rate-family model: per-period functionals `log(1 + delta_k L(0,T_k) e^{x_k})`
    /// on an `N-1`-dimensional driver built from the factor process and the
    /// volatility structure.
    pub fn lmm(tenor: TenorStructure, curve: InitialCurve, lmm: LmmSpec) -> Result<Self> {
        let lmm = lmm.assemble(&tenor, &curve)?;
        let driver = lmm.build_driver(&tenor)?;
        let functionals = lmm.functionals(&tenor)?;
        Self::finish(tenor, curve, driver, functionals, ModelFamily::Lmm(lmm))
    }

    /// Forward-price family: terminal-quoted affine functionals
    /// `log F(0,T_k,T_N) + x_k` with deterministic drifts.
    pub fn fpm(tenor: TenorStructure, curve: InitialCurve, fpm: FpmSpec) -> Result<Self> {
        let fpm = fpm.assemble(&tenor, &curve)?;
        let driver = fpm.build_driver(&tenor)?;
        let functionals = fpm.functionals()?;
        Self::finish(tenor, curve, driver, functionals, ModelFamily::Fpm(fpm))
    }

    /// Affine family on the positive half-line. The terminal parameters must
    /// already be resolved (given or calibrated) inside `affine`.
    pub fn affine(
        tenor: TenorStructure,
        curve: InitialCurve,
        affine: AffineModelSpec,
    ) -> Result<Self> {
        if affine.parameter_count() != tenor.rate_count() {
            return Err(Error::invariant(format!(
                "affine model has {} terminal parameters, tenor needs {}",
                affine.parameter_count(),
                tenor.rate_count()
            )));
        }
        if (affine.horizon() - tenor.horizon()).abs() > 1e-9 {
            return Err(Error::invariant(format!(
                "affine horizon {} does not match tenor horizon {}",
                affine.horizon(),
                tenor.horizon()
            )));
        }
        let driver = affine.reference_characteristics()?;
        let functionals = affine.functionals()?;
        Self::finish(tenor, curve, driver, functionals, ModelFamily::Affine(affine))
    }

    fn finish(
        tenor: TenorStructure,
        curve: InitialCurve,
        driver: LocalCharacteristics,
        functionals: Vec<ForwardFunctional>,
        family: ModelFamily,
    ) -> Result<Self> {
        if curve.len() != tenor.interval_count() {
            return Err(Error::invariant(format!(
                "curve has {} prices, tenor needs {}",
                curve.len(),
                tenor.interval_count()
            )));
        }
        if functionals.len() != tenor.rate_count() {
            return Err(Error::invariant(format!(
                "model has {} functionals, tenor needs {}",
                functionals.len(),
                tenor.rate_count()
            )));
        }
        if functionals
            .iter()
            .any(|f| f.dimension() != driver.dimension())
        {
            return Err(Error::invariant(
                "functional dimension does not match driver dimension",
            ));
        }
        Ok(ModelSpec {
            tenor,
            initial_curve: curve,
            driver,
            functionals,
            family,
        })
    }

    pub fn tenor(&self) -> &TenorStructure {
        &self.tenor
    }

    pub fn initial_curve(&self) -> &InitialCurve {
        &self.initial_curve
    }

    pub fn driver(&self) -> &LocalCharacteristics {
        &self.driver
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    /// The declared functionals: backward `f^k` for the rate family,
    /// terminal `g^k` for the other two.
    pub fn functionals(&self) -> &[ForwardFunctional] {
        &self.functionals
    }

    pub fn dimension(&self) -> usize {
        self.driver.dimension()
    }

    /// State the driver starts from.
    pub fn initial_state(&self) -> Vec<f64> {
        match &self.family {
            ModelFamily::Affine(a) => vec![a.initial_state()],
            _ => vec![0.0; self.dimension()],
        }
    }

    /// Per-period functionals `f^k`, converting terminal families via the
    /// pairwise differences.
    pub fn backward_functionals(&self) -> Result<Vec<ForwardFunctional>> {
        match &self.family {
            ModelFamily::Lmm(_) => Ok(self.functionals.clone()),
            _ => f_from_g(&self.functionals),
        }
    }

    /// Terminal-quoted functionals `g^k`, converting the rate family via the
    /// telescoping sums.
    pub fn terminal_functionals(&self) -> Result<Vec<ForwardFunctional>> {
        match &self.family {
            ModelFamily::Lmm(_) => g_from_f(&self.functionals),
            _ => Ok(self.functionals.clone()),
        }
    }

    /// Exact driver triplet under the terminal measure at `(t, x)`.
    ///
    /// Rate family: the no-arbitrage drift is evaluated at the supplied
    /// state. Forward-price family: fully deterministic. Affine family:
    /// drift, diffusion and jump intensities are affine in the state, quoted
    /// under the identity truncation.
    pub fn characteristics_at(&self, t: f64, x: &[f64]) -> Result<CharacteristicsPoint> {
        if x.len() != self.dimension() {
            return Err(Error::domain(format!(
                "state has dimension {}, driver needs {}",
                x.len(),
                self.dimension()
            )));
        }
        match &self.family {
            ModelFamily::Lmm(lmm) => {
                let mut point = self.driver.point_at(t)?;
                point.drift = crate::drift_engine::lmm_drift_vector(lmm, &self.tenor, t, x)?;
                Ok(point)
            }
            ModelFamily::Fpm(_) => self.driver.point_at(t),
            ModelFamily::Affine(a) => a.characteristics_at(x[0]),
        }
    }
}
