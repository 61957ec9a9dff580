//! Potential outcomes, patient types, principal strata and the observation map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm. Arm 0 is the reference ("Access") group that matching pairs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Zero,
    One,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Zero, Arm::One];

    pub fn index(self) -> usize {
        match self {
            Arm::Zero => 0,
            Arm::One => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Arm> {
        match i {
            0 => Ok(Arm::Zero),
            1 => Ok(Arm::One),
            _ => Err(Error::validation(format!("arm must be 0 or 1, got {i}"))),
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Zero => Arm::One,
            Arm::One => Arm::Zero,
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = Error;
    fn try_from(v: u8) -> Result<Arm> {
        Arm::from_index(v as usize)
    }
}

/// Serde helper writing non-finite times as `null`.
pub mod time_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_f64(*t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One subject's cross-world event times. `t1_a = +inf` means no infection
/// under arm `a`; `t2_a = +inf` is allowed for worlds with no death hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomeProfile {
    #[serde(with = "time_or_null")]
    pub t1_0: f64,
    #[serde(with = "time_or_null")]
    pub t2_0: f64,
    #[serde(with = "time_or_null")]
    pub t1_1: f64,
    #[serde(with = "time_or_null")]
    pub t2_1: f64,
}

impl PotentialOutcomeProfile {
    pub fn new(t1_0: f64, t2_0: f64, t1_1: f64, t2_1: f64) -> Result<Self> {
        let p = PotentialOutcomeProfile { t1_0, t2_0, t1_1, t2_1 };
        p.validate()?;
        Ok(p)
    }

    pub fn t1(&self, a: Arm) -> f64 {
        match a {
            Arm::Zero => self.t1_0,
            Arm::One => self.t1_1,
        }
    }

    pub fn t2(&self, a: Arm) -> f64 {
        match a {
            Arm::Zero => self.t2_0,
            Arm::One => self.t2_1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in Arm::BOTH {
            let (t1, t2) = (self.t1(a), self.t2(a));
            if t1.is_nan() || t2.is_nan() || t1 <= 0.0 || t2 <= 0.0 {
                return Err(Error::validation(format!("arm {}: event times must be positive (t1={t1}, t2={t2})", a.index())));
            }
            if t1.is_finite() && t1 > t2 {
                return Err(Error::validation(format!("arm {}: infection at {t1} after death at {t2}", a.index())));
            }
        }
        Ok(())
    }
}

/// Infection and survival indicators of both worlds at horizon `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndicatorQuadruple {
    pub i0: bool,
    pub s0: bool,
    pub i1: bool,
    pub s1: bool,
}

impl IndicatorQuadruple {
    pub fn new(i0: bool, s0: bool, i1: bool, s1: bool) -> Self {
        IndicatorQuadruple { i0, s0, i1, s1 }
    }

    pub fn infected(&self, a: Arm) -> bool {
        match a {
            Arm::Zero => self.i0,
            Arm::One => self.i1,
        }
    }

    pub fn survived(&self, a: Arm) -> bool {
        match a {
            Arm::Zero => self.s0,
            Arm::One => self.s1,
        }
    }
}

pub fn validate_horizon(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("horizon must lie in (0, 1], got {r}")))
    }
}

pub fn indicators_from_profile(profile: &PotentialOutcomeProfile, r: f64) -> Result<IndicatorQuadruple> {
    validate_horizon(r)?;
    profile.validate()?;
    Ok(IndicatorQuadruple { i0: profile.t1_0 <= r, s0: profile.t2_0 > r, i1: profile.t1_1 <= r, s1: profile.t2_1 > r })
}

/// Patient type 1..=16, numbered in the canonical table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub struct PatientType(u8);

/// `(I0, S0, I1, S1)` for patient types 1..=16.
const TYPE_TABLE: [[bool; 4]; 16] = [
    [false, false, false, false],
    [true, false, false, false],
    [false, true, false, false],
    [false, false, true, false],
    [false, false, false, true],
    [true, true, false, false],
    [false, false, true, true],
    [true, false, false, true],
    [false, true, true, false],
    [true, false, true, false],
    [false, true, false, true],
    [true, true, true, false],
    [true, false, true, true],
    [true, true, false, true],
    [false, true, true, true],
    [true, true, true, true],
];

impl PatientType {
    pub fn new(pt: u8) -> Result<Self> {
        if (1..=16).contains(&pt) {
            Ok(PatientType(pt))
        } else {
            Err(Error::validation(format!("patient type must be in 1..=16, got {pt}")))
        }
    }

    pub fn all() -> impl Iterator<Item = PatientType> {
        (1..=16).map(PatientType)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position, handy for 16-vectors.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn quadruple(self) -> IndicatorQuadruple {
        let [i0, s0, i1, s1] = TYPE_TABLE[self.index()];
        IndicatorQuadruple { i0, s0, i1, s1 }
    }
}

impl From<PatientType> for u8 {
    fn from(p: PatientType) -> u8 {
        p.0
    }
}

impl TryFrom<u8> for PatientType {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        PatientType::new(v)
    }
}

pub fn classify_patient_type(q: IndicatorQuadruple) -> PatientType {
    let key = [q.i0, q.s0, q.i1, q.s1];
    let pos = TYPE_TABLE.iter().position(|row| *row == key).expect("type table covers all 16 quadruples");
    PatientType(pos as u8 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumFlags {
    pub is_as: bool,
    pub is_ai: bool,
    pub is_ios: bool,
}

impl StratumFlags {
    /// Direct set definitions on the indicators.
    pub fn from_quadruple(q: IndicatorQuadruple) -> Self {
        StratumFlags { is_as: q.s0 && q.s1, is_ai: q.i0 && q.i1, is_ios: (q.i0 || q.s0) && (q.i1 || q.s1) }
    }
}

pub fn stratum_flags(pt: PatientType) -> StratumFlags {
    let p = pt.get();
    StratumFlags { is_as: matches!(p, 11 | 14 | 15 | 16), is_ai: matches!(p, 10 | 12 | 13 | 16), is_ios: p >= 8 }
}

/// Cross-world order-preservation assumptions and monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    Orp,
    IosOrp,
    WeakOrp,
    Monotonicity,
}

pub fn excluded_by(pt: PatientType, assumption: Assumption) -> bool {
    let excluded: &[u8] = match assumption {
        Assumption::Orp => &[2, 6, 8, 14],
        Assumption::IosOrp => &[2, 3, 6],
        Assumption::WeakOrp => &[2, 6],
        Assumption::Monotonicity => &[3, 6, 9, 12],
    };
    excluded.contains(&pt.get())
}

/// Observed data for one subject. Times are in years on `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRecord {
    pub id: String,
    pub treat: Arm,
    pub y1: f64,
    pub d1: bool,
    pub y2: f64,
    pub d2: bool,
    pub covariates: Vec<f64>,
}

impl ObservedRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::validation(format!("record {}: {msg}", self.id)));
        if !(self.y1 > 0.0 && self.y1 <= self.y2 && self.y2 <= 1.0) {
            return bad(&format!("need 0 < y1 <= y2 <= 1 (y1={}, y2={})", self.y1, self.y2));
        }
        if self.d1 && self.y1 == self.y2 && !self.d2 {
            return bad("infection at the exit time requires a recorded death");
        }
        if !self.d1 && self.y1 != self.y2 {
            return bad("without infection y1 must equal y2");
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return bad("covariates must be finite");
        }
        Ok(())
    }

    /// Number of observed events, 0..=2.
    pub fn delta_prime(&self) -> u8 {
        self.d1 as u8 + self.d2 as u8
    }
}

/// Observed times and event flags produced by [`observe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedTimes {
    pub y1: f64,
    pub d1: bool,
    pub y2: f64,
    pub d2: bool,
}

/// Consistency map from potential outcomes to observed data, with administrative
/// end of follow-up at 1. Ties between an event and censoring go to the event.
pub fn observe(profile: &PotentialOutcomeProfile, treat: Arm, censor: Option<f64>) -> ObservedTimes {
    let t1 = profile.t1(treat);
    let t2 = profile.t2(treat);
    let limit = censor.map_or(1.0, |c| c.min(1.0));
    let d1 = t1 <= limit && t1 <= t2;
    let d2 = t2 <= limit;
    let y2 = t2.min(limit);
    let y1 = if d1 { t1 } else { y2 };
    ObservedTimes { y1, d1, y2, d2 }
}
