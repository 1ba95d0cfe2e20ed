//! Model parameters and their key-value config representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry, inertia and spring parameters of the elastic kinematic snake.
///
/// Body 1 is the central link, body 2 the link behind joint 1 and body 3 the
/// link ahead of joint 2. The joints sit at `∓h` along the central link and
/// each outer link has its wheel (and center of mass) at distance `r` from its
/// joint, so the central link is `2h` long and the outer links `2r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<S = f64> {
    pub h: S,
    pub r: S,
    pub mass: [S; 3],
    pub inertia: [S; 3],
    /// Diagonal of the joint stiffness matrix [N·m/rad].
    pub stiffness: [S; 2],
    /// Spring equilibrium angles [rad].
    pub r_eq: [S; 2],
    pub g: S,
    /// Shapes with `|Q| <` this value are rejected as singular.
    pub q_guard: S,
    /// Upper bound on the condition number of the reduced mass matrix.
    pub cond_limit: S,
}

impl Default for ModelParams<f64> {
    fn default() -> Self {
        Self {
            stiffness: [10.0, 10.0],
            r_eq: [0.6, -0.6],
            ..Self::table1()
        }
    }
}

impl ModelParams<f64> {
    /// Unit links of unit mass with uniform-rod inertia and no springs.
    pub fn table1() -> Self {
        Self {
            h: 1.0,
            r: 1.0,
            mass: [1.0; 3],
            inertia: [1.0 / 3.0; 3],
            stiffness: [0.0; 2],
            r_eq: [0.0; 2],
            g: 9.81,
            q_guard: 1e-9,
            cond_limit: 1e12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        let finite = [self.h, self.r, self.g]
            .iter()
            .chain(&self.mass)
            .chain(&self.inertia)
            .chain(&self.stiffness)
            .chain(&self.r_eq)
            .all(|v| v.is_finite());
        if !finite {
            return bad("all parameters must be finite");
        }
        if self.h <= 0.0 || self.r <= 0.0 {
            return bad("link lengths must be positive");
        }
        if self.mass.iter().any(|&m| m <= 0.0) {
            return bad("masses must be positive");
        }
        if self.inertia.iter().any(|&i| i <= 0.0) {
            return bad("inertias must be positive");
        }
        if self.stiffness.iter().any(|&k| k < 0.0) {
            return bad("stiffnesses must be nonnegative");
        }
        if self.g <= 0.0 {
            return bad("gravity must be positive");
        }
        if self.r_eq.iter().any(|a| a.abs() >= std::f64::consts::PI) {
            return bad("spring equilibria must satisfy |alpha| < pi");
        }
        if !(self.q_guard > 0.0) || !(self.cond_limit > 1.0) {
            return bad("guards must be positive");
        }
        Ok(())
    }

    /// Same model with the springs removed.
    pub fn rigid(&self) -> Self {
        Self {
            stiffness: [0.0; 2],
            ..*self
        }
    }

    pub fn with_r_eq(&self, r_eq: [f64; 2]) -> Self {
        Self { r_eq, ..*self }
    }

    /// Equilibrium on the diagonal `α1 = -α2` at `(c, -c)`.
    pub fn with_diagonal_eq(&self, c: f64) -> Self {
        self.with_r_eq([c, -c])
    }

    pub fn with_stiffness(&self, k: f64) -> Self {
        Self {
            stiffness: [k, k],
            ..*self
        }
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        self.map(T::lit)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ParamsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_params()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ParamsFile::from(self)).expect("params serialize")
    }
}

impl<S: Scalar> ModelParams<S> {
    pub fn total_mass(&self) -> S {
        self.mass[0] + self.mass[1] + self.mass[2]
    }

    /// Converts every field with `f` (used to lift parameters into dual numbers).
    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> ModelParams<T> {
        ModelParams {
            h: f(self.h),
            r: f(self.r),
            mass: self.mass.map(&f),
            inertia: self.inertia.map(&f),
            stiffness: self.stiffness.map(&f),
            r_eq: self.r_eq.map(&f),
            g: f(self.g),
            q_guard: f(self.q_guard),
            cond_limit: f(self.cond_limit),
        }
    }
}

/// Flat key-value form of [`ModelParams`] used in config files.
///
/// Omitted inertias default to the uniform-rod value `m·L²/3`, with `L = h`
/// for the central link and `L = r` for the outer links.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub h: Option<f64>,
    pub r: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m3: Option<f64>,
    pub i1: Option<f64>,
    pub i2: Option<f64>,
    pub i3: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub alpha_eq1: Option<f64>,
    pub alpha_eq2: Option<f64>,
    pub g: Option<f64>,
    pub q_guard: Option<f64>,
    pub cond_limit: Option<f64>,
}

impl ParamsFile {
    pub fn into_params(self) -> Result<ModelParams> {
        let d = ModelParams::default();
        let h = self.h.unwrap_or(d.h);
        let r = self.r.unwrap_or(d.r);
        let mass = [
            self.m1.unwrap_or(d.mass[0]),
            self.m2.unwrap_or(d.mass[1]),
            self.m3.unwrap_or(d.mass[2]),
        ];
        let rod = |m: f64, l: f64| m * l * l / 3.0;
        let p = ModelParams {
            h,
            r,
            mass,
            inertia: [
                self.i1.unwrap_or_else(|| rod(mass[0], h)),
                self.i2.unwrap_or_else(|| rod(mass[1], r)),
                self.i3.unwrap_or_else(|| rod(mass[2], r)),
            ],
            stiffness: [self.k1.unwrap_or(d.stiffness[0]), self.k2.unwrap_or(d.stiffness[1])],
            r_eq: [self.alpha_eq1.unwrap_or(d.r_eq[0]), self.alpha_eq2.unwrap_or(d.r_eq[1])],
            g: self.g.unwrap_or(d.g),
            q_guard: self.q_guard.unwrap_or(d.q_guard),
            cond_limit: self.cond_limit.unwrap_or(d.cond_limit),
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<&ModelParams> for ParamsFile {
    fn from(p: &ModelParams) -> Self {
        Self {
            h: Some(p.h),
            r: Some(p.r),
            m1: Some(p.mass[0]),
            m2: Some(p.mass[1]),
            m3: Some(p.mass[2]),
            i1: Some(p.inertia[0]),
            i2: Some(p.inertia[1]),
            i3: Some(p.inertia[2]),
            k1: Some(p.stiffness[0]),
            k2: Some(p.stiffness[1]),
            alpha_eq1: Some(p.r_eq[0]),
            alpha_eq2: Some(p.r_eq[1]),
            g: Some(p.g),
            q_guard: Some(p.q_guard),
            cond_limit: Some(p.cond_limit),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_table_values_with_springs() {
        let p = ModelParams::default();
        p.validate().unwrap();
        assert_eq!(p.h, 1.0);
        assert_eq!(p.mass, [1.0; 3]);
        assert_eq!(p.stiffness, [10.0, 10.0]);
        for (m, i) in p.mass.iter().zip(&p.inertia) {
            assert!((i - m * p.h * p.h / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_config_gives_defaults() {
        let p = ModelParams::from_toml_str("").unwrap();
        assert_eq!(p, ModelParams::default());
    }

    #[test]
    fn negative_mass_is_rejected() {
        let err = ModelParams::from_toml_str("m2 = -1.0").unwrap_err();
        assert!(matches!(err, Error::InvalidParams(_)));
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = ModelParams::from_toml_str("mass = 3.0").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rod_inertia_follows_link_length() {
        let p = ModelParams::from_toml_str("h = 2.0\nr = 0.5\nm1 = 3.0").unwrap();
        assert!((p.inertia[0] - 3.0 * 4.0 / 3.0).abs() < 1e-15);
        assert!((p.inertia[1] - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let p = ModelParams::default().with_stiffness(4.0).with_diagonal_eq(0.9);
        let back = ModelParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p, back);
    }
}
