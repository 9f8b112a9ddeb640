//! Summability exponents, conjugates and regime thresholds.
//!
//! Every formula is generic over [`Scalar`], so the same code runs in `f64`
//! and in exact rational arithmetic (`num::BigRational`).
//!
//! ```
//! use num::BigRational;
//! use plapsys::exponents::{m1, sobolev_conjugate, dual_exponent};
//!
//! let q = |a: i64, b: i64| BigRational::new(a.into(), b.into());
//! // at N = 3, p = 2 the threshold m1 is 6r/(5 + 4r)
//! assert_eq!(m1(3, q(2, 1), q(7, 1)).unwrap(), q(42, 33));
//! assert_eq!(dual_exponent(sobolev_conjugate(3, q(2, 1)).unwrap()).unwrap(), q(6, 5));
//! ```

use std::fmt;

use num::traits::FromPrimitive;
use num::Num;

use crate::error::{Error, Result};

/// Number type the formulas are evaluated in.
pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + fmt::Debug {}

impl<T: Num + Clone + PartialOrd + FromPrimitive + fmt::Debug> Scalar for T {}

fn int<T: Scalar>(n: u32) -> T {
    T::from_u32(n).expect("small integers are representable")
}

fn bad(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

fn check_sobolev<T: Scalar>(n: u32, p: &T) -> Result<()> {
    if n < 2 {
        return Err(bad(format!("dimension must satisfy N >= 2, got {n}")));
    }
    if !(*p > T::one() && *p < int(n)) {
        return Err(bad(format!("need 1 < p < N, got p = {p:?}, N = {n}")));
    }
    Ok(())
}

fn check_r<T: Scalar>(r: &T) -> Result<()> {
    if *r > T::one() {
        Ok(())
    } else {
        Err(bad(format!("need r > 1, got {r:?}")))
    }
}

/// p* = Np/(N−p).
pub fn sobolev_conjugate<T: Scalar>(n: u32, p: T) -> Result<T> {
    check_sobolev(n, &p)?;
    let nn: T = int(n);
    Ok(nn.clone() * p.clone() / (nn - p))
}

/// Hölder conjugate q' = q/(q−1).
pub fn dual_exponent<T: Scalar>(q: T) -> Result<T> {
    if q > T::one() {
        Ok(q.clone() / (q - T::one()))
    } else {
        Err(bad(format!("dual exponent needs q > 1, got {q:?}")))
    }
}

/// (N(p−1)+p)/(N−p), the smallest r for which (r+1)' < (p*)'.
pub fn r_threshold<T: Scalar>(n: u32, p: T) -> Result<T> {
    check_sobolev(n, &p)?;
    let nn: T = int(n);
    Ok((nn.clone() * (p.clone() - T::one()) + p.clone()) / (nn - p))
}

fn m_denominator<T: Scalar>(n: u32, p: &T, r: &T) -> T {
    let nn: T = int(n);
    let pm1 = p.clone() - T::one();
    nn * pm1.clone() * pm1.clone() + p.clone() * pm1 + p.clone() * p.clone() * r.clone()
}

/// m1 = Npr/(N(p−1)² + p(p−1) + p²r).
pub fn m1<T: Scalar>(n: u32, p: T, r: T) -> Result<T> {
    check_sobolev(n, &p)?;
    check_r(&r)?;
    let den = m_denominator(n, &p, &r);
    Ok(int::<T>(n) * p * r / den)
}

/// m2 = Npr/(N(p−1)² + p(p−1) + p²r − θ(p−1)(N−p)); equals m1 at θ = 0.
pub fn m2<T: Scalar>(n: u32, p: T, r: T, theta: T) -> Result<T> {
    check_sobolev(n, &p)?;
    check_r(&r)?;
    check_theta(&p, &theta)?;
    let nn: T = int(n);
    let den = m_denominator(n, &p, &r) - theta * (p.clone() - T::one()) * (nn.clone() - p.clone());
    Ok(nn * p * r / den)
}

fn check_theta<T: Scalar>(p: &T, theta: &T) -> Result<()> {
    if *theta >= T::zero() && *theta < p.clone() - T::one() {
        Ok(())
    } else {
        Err(bad(format!("need 0 <= theta < p - 1, got theta = {theta:?}, p = {p:?}")))
    }
}

/// An exponent together with whether its input lies inside the hypothesis
/// under which the formula was derived.
#[derive(Clone, Debug, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub in_hypothesis: bool,
}

/// s = m(pr+p−1)/(m(p−1)+1). Flagged outside m ≥ (r+1)'.
pub fn s_exponent<T: Scalar>(m: T, p: T, r: T) -> Result<Flagged<T>> {
    check_sm(&m, &p, &r)?;
    let one = T::one();
    let value = m.clone() * (p.clone() * r.clone() + p.clone() - one.clone()) / (m.clone() * (p - one.clone()) + one);
    Ok(Flagged { value, in_hypothesis: m >= dual_exponent(r + T::one())? })
}

/// γ = (r(m−1)+m(p−1))/(m(p−1)+1), the test-function power with s = r + γ.
/// Flagged when γ < 1, which happens exactly when m < (r+1)'.
pub fn gamma_exponent<T: Scalar>(m: T, p: T, r: T) -> Result<Flagged<T>> {
    check_sm(&m, &p, &r)?;
    let one = T::one();
    let value = (r * (m.clone() - one.clone()) + m.clone() * (p.clone() - one.clone())) / (m * (p - one.clone()) + one.clone());
    let in_hypothesis = value >= one;
    Ok(Flagged { value, in_hypothesis })
}

fn check_sm<T: Scalar>(m: &T, p: &T, r: &T) -> Result<()> {
    if *m < T::one() {
        return Err(bad(format!("need m >= 1, got {m:?}")));
    }
    if *p <= T::one() {
        return Err(bad(format!("need p > 1, got {p:?}")));
    }
    check_r(r)
}

/// t = Nm(p−1)/(N−pm). `None` when m ≥ N/p, where the data is bounded-type
/// and the formula has no meaning.
pub fn t_exponent<T: Scalar>(n: u32, m: T, p: T) -> Result<Option<T>> {
    check_sobolev(n, &p)?;
    if m < T::one() {
        return Err(bad(format!("need m >= 1, got {m:?}")));
    }
    let nn: T = int(n);
    let den = nn.clone() - p.clone() * m.clone();
    if den <= T::zero() {
        return Ok(None);
    }
    Ok(Some(nn * m * (p - T::one()) / den))
}

/// Validated `(N, p, r, θ, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeInput<T = f64> {
    n: u32,
    p: T,
    r: T,
    theta: T,
    m: T,
}

impl<T: Scalar> RegimeInput<T> {
    pub fn new(n: u32, p: T, r: T, theta: T, m: T) -> Result<Self> {
        check_sobolev(n, &p)?;
        check_r(&r)?;
        check_theta(&p, &theta)?;
        if m < T::one() {
            return Err(bad(format!("need m >= 1, got {m:?}")));
        }
        Ok(RegimeInput { n, p, r, theta, m })
    }

    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn p(&self) -> &T {
        &self.p
    }
    pub fn r(&self) -> &T {
        &self.r
    }
    pub fn theta(&self) -> &T {
        &self.theta
    }
    pub fn m(&self) -> &T {
        &self.m
    }
}

impl RegimeInput<f64> {
    /// Non-finite floats are rejected here as well.
    pub fn from_f64(n: u32, p: f64, r: f64, theta: f64, m: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("r", r), ("theta", theta), ("m", m)] {
            if !v.is_finite() {
                return Err(bad(format!("{name} must be finite, got {v}")));
            }
        }
        Self::new(n, p, r, theta, m)
    }
}

/// Strongest theorem whose hypotheses hold, strongest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// m > N/p: bounded solutions.
    BoundedData,
    /// m ≥ (p*)': data in the dual space, standard variational theory.
    DualData,
    /// θ = 0 and (r+1)' ≤ m < (p*)': finite energy through the coupling.
    RegularizingTheta0,
    /// m ≥ (r+1+θ)' with r > p*−1−θ: the conditional case of the conjecture.
    ConjectureRegime,
    OutsideTheory,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::BoundedData => "bounded_data",
            Regime::DualData => "dual_data",
            Regime::RegularizingTheta0 => "regularizing_theta0",
            Regime::ConjectureRegime => "conjecture_regime",
            Regime::OutsideTheory => "outside_theory",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Individual hypotheses checked by [`classify`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    /// m > N/p
    BoundedData,
    /// m ≥ (p*)'
    DualData,
    /// r > p*−1, equivalently (r+1)' < (p*)'
    RThreshold,
    /// θ = 0 and m ≥ (r+1)'
    ExistenceTheta0,
    /// θ = 0 and (r+1)' ≤ m < (p*)'
    RegularizingTheta0,
    /// m ≥ (r+1+θ)' and r > p*−1−θ
    Conjecture,
    /// (p*)' ≤ m < m2: φ has finite energy although |u|^r φ^θ need not be dual data
    PhiRegularizing,
}

impl Hypothesis {
    pub fn describe(self) -> &'static str {
        match self {
            Hypothesis::BoundedData => "m > N/p",
            Hypothesis::DualData => "m >= (p*)'",
            Hypothesis::RThreshold => "r > p* - 1",
            Hypothesis::ExistenceTheta0 => "theta = 0, m >= (r+1)'",
            Hypothesis::RegularizingTheta0 => "theta = 0, (r+1)' <= m < (p*)'",
            Hypothesis::Conjecture => "m >= (r+1+theta)', r > p* - 1 - theta",
            Hypothesis::PhiRegularizing => "(p*)' <= m < m2",
        }
    }
}

/// Best known summability of u.
#[derive(Clone, Debug, PartialEq)]
pub enum Summability<T = f64> {
    /// u ∈ L^s with s from the coupled estimate.
    S(T),
    /// u ∈ L^t from the single-equation theory.
    T(T),
    /// m = N/p: u in every L^q, q < ∞.
    EveryFinite,
    /// m > N/p: u ∈ L^∞.
    Bounded,
    /// Nothing known.
    Unknown,
}

impl<T: fmt::Display> fmt::Display for Summability<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Summability::S(s) => write!(f, "L^s, s = {s}"),
            Summability::T(t) => write!(f, "L^t, t = {t}"),
            Summability::EveryFinite => f.write_str("L^q for all q < inf"),
            Summability::Bounded => f.write_str("L^inf"),
            Summability::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeReport<T = f64> {
    pub input: RegimeInput<T>,
    pub regime: Regime,
    pub satisfied: Vec<Hypothesis>,
    pub pstar: T,
    pub pstar_dual: T,
    pub r1_dual: T,
    /// (r+1+θ)'
    pub r1theta_dual: T,
    pub m1: T,
    pub m2: T,
    pub s: Flagged<T>,
    pub gamma: Flagged<T>,
    /// Only when (p*)' ≤ m < N/p.
    pub t: Option<T>,
    pub r_threshold: T,
    pub best_summability: Summability<T>,
}

/// Classify `(N, p, r, θ, m)` against every hypothesis and pick the strongest regime.
pub fn classify<T: Scalar>(input: &RegimeInput<T>) -> RegimeReport<T> {
    let RegimeInput { n, p, r, theta, m } = input.clone();
    let one = T::one();
    let nn: T = int(n);
    let n_over_p = nn / p.clone();
    let pstar = sobolev_conjugate(n, p.clone()).expect("validated");
    let pstar_dual = dual_exponent(pstar.clone()).expect("p* > 1");
    let r1_dual = dual_exponent(r.clone() + one.clone()).expect("r + 1 > 1");
    let r1theta_dual = dual_exponent(r.clone() + one.clone() + theta.clone()).expect("r + 1 + θ > 1");
    let m1v = m1(n, p.clone(), r.clone()).expect("validated");
    let m2v = m2(n, p.clone(), r.clone(), theta.clone()).expect("validated");
    let s = s_exponent(m.clone(), p.clone(), r.clone()).expect("validated");
    let gamma = gamma_exponent(m.clone(), p.clone(), r.clone()).expect("validated");
    let r_thr = r_threshold(n, p.clone()).expect("validated");
    let theta0 = theta == T::zero();
    let t = if m >= pstar_dual {
        t_exponent(n, m.clone(), p.clone()).expect("validated")
    } else {
        None
    };

    let mut satisfied = Vec::new();
    let bounded = m > n_over_p;
    let dual = m >= pstar_dual;
    let regularizing = theta0 && m >= r1_dual && m < pstar_dual;
    let conjecture = m >= r1theta_dual && r > pstar.clone() - one.clone() - theta.clone();
    if bounded {
        satisfied.push(Hypothesis::BoundedData);
    }
    if dual {
        satisfied.push(Hypothesis::DualData);
    }
    if r > r_thr {
        satisfied.push(Hypothesis::RThreshold);
    }
    if theta0 && m >= r1_dual {
        satisfied.push(Hypothesis::ExistenceTheta0);
    }
    if regularizing {
        satisfied.push(Hypothesis::RegularizingTheta0);
    }
    if conjecture {
        satisfied.push(Hypothesis::Conjecture);
    }
    if dual && m < m2v {
        satisfied.push(Hypothesis::PhiRegularizing);
    }

    let regime = if bounded {
        Regime::BoundedData
    } else if dual {
        Regime::DualData
    } else if regularizing {
        Regime::RegularizingTheta0
    } else if conjecture {
        Regime::ConjectureRegime
    } else {
        Regime::OutsideTheory
    };

    // s is the coupled estimate of the θ = 0 system; t comes from the single
    // equation and needs dual data. Where both hold, s ≥ t exactly when m ≤ m1.
    let s_ok = theta0 && s.in_hypothesis;
    let best_summability = if bounded {
        Summability::Bounded
    } else if m == n_over_p {
        Summability::EveryFinite
    } else {
        match (&t, s_ok) {
            (Some(tv), true) if m >= m1v => Summability::T(tv.clone()),
            (_, true) => Summability::S(s.value.clone()),
            (Some(tv), false) => Summability::T(tv.clone()),
            (None, false) => Summability::Unknown,
        }
    };

    RegimeReport {
        input: input.clone(),
        regime,
        satisfied,
        pstar,
        pstar_dual,
        r1_dual,
        r1theta_dual,
        m1: m1v,
        m2: m2v,
        s,
        gamma,
        t,
        r_threshold: r_thr,
        best_summability,
    }
}
