//! Posterior certificates: normal forms of interface aggregates that a third
//! party can check with rational arithmetic alone.

use crate::model::NetModel;
use crate::rational::{fmt_ratio, parse_rational, Rational};
use crate::stabilizer::{PauliCoefficients, PauliString};
use crate::verifier::{ObservationAggregates, PosteriorAggregate};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CertificateError {
    #[error("interface mismatch: certificate has {0} registers, aggregate has {1}")]
    InterfaceMismatch(usize, usize),
    #[error("malformed certificate: {0}")]
    Malformed(String),
    #[error("report has no observation `{0}`")]
    UnknownObservation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalForm {
    /// Pure stabilizer state given by signed generators.
    PureStabilizer { generators: Vec<String> },
    /// Identity on the listed registers, normalized.
    MaximallyMixed { registers: Vec<String> },
    General,
}

impl NormalForm {
    pub fn class_name(&self) -> &'static str {
        match self {
            NormalForm::PureStabilizer { .. } => "pure-stabilizer",
            NormalForm::MaximallyMixed { .. } => "maximally-mixed",
            NormalForm::General => "general",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosteriorCertificate {
    pub observation: String,
    pub secret_bit: bool,
    pub interface: Vec<String>,
    /// Trace of the aggregate.
    pub weight: Rational,
    pub form: NormalForm,
    /// Raw Pauli coefficients of the unnormalized aggregate.
    pub coefficients: BTreeMap<String, Rational>,
}

fn scale_for(k: usize) -> Rational {
    Rational::from_integer(BigInt::one() << k)
}

/// Signed Pauli group generated by `gens` on `k` qubits, as `label -> sign`.
fn group(gens: &[PauliString], k: usize) -> Option<BTreeMap<String, i8>> {
    let regs: Vec<usize> = (0..k).collect();
    let mut elems = vec![PauliString::identity(k)];
    for g in gens {
        let more: Vec<PauliString> = elems.iter().map(|e| e.mul(g)).collect();
        elems.extend(more);
    }
    let mut out = BTreeMap::new();
    for e in elems {
        let sign = e.sign()?;
        if out.insert(e.label_on(&regs), sign).is_some() {
            return None;
        }
    }
    Some(out)
}

/// Recognizes a normalized operator that is a pure stabilizer state.
fn pure_generators(normalized: &PauliCoefficients) -> Option<Vec<String>> {
    let k = normalized.registers.len();
    let unit = Rational::one() / scale_for(k);
    if normalized.coeffs.len() != 1usize << k || normalized.coeffs.values().any(|v| v.abs() != unit) {
        return None;
    }
    let signed = |label: &str| {
        let s = if normalized.get(label).is_positive() { "+" } else { "-" };
        PauliString::parse(&format!("{s}{label}")).expect("coefficient labels are Pauli letters")
    };
    let mut gens: Vec<PauliString> = Vec::new();
    let mut span: BTreeSet<String> = [normalized.identity_label()].into();
    let regs: Vec<usize> = (0..k).collect();
    for label in normalized.coeffs.keys() {
        if span.contains(label) {
            continue;
        }
        let g = signed(label);
        let more: Vec<String> = span
            .iter()
            .map(|s| PauliString::parse(s).unwrap().mul(&g).label_on(&regs))
            .collect();
        span.extend(more);
        gens.push(g);
    }
    if gens.iter().any(|a| gens.iter().any(|b| !a.commutes(b))) {
        return None;
    }
    let g = group(&gens, k)?;
    let matches = g.iter().all(|(label, &s)| {
        let c = normalized.get(label);
        (s > 0 && c == unit) || (s < 0 && c == -unit.clone())
    });
    matches.then(|| gens.iter().map(|g| g.to_string()).collect())
}

pub fn emit_certificate(m: &NetModel, observation: &str, agg: &PosteriorAggregate) -> PosteriorCertificate {
    let interface: Vec<String> = agg.omega.registers.iter().map(|&q| m.registers[q].clone()).collect();
    let form = match agg.omega.normalized() {
        None => NormalForm::MaximallyMixed { registers: Vec::new() },
        Some(n) if n.coeffs.len() == 1 => NormalForm::MaximallyMixed { registers: interface.clone() },
        Some(n) => match pure_generators(&n) {
            Some(generators) => NormalForm::PureStabilizer { generators },
            None => NormalForm::General,
        },
    };
    PosteriorCertificate {
        observation: observation.to_string(),
        secret_bit: agg.secret,
        interface,
        weight: agg.p.clone(),
        form,
        coefficients: agg.omega.coeffs.clone(),
    }
}

/// Both classes of an observation.
pub fn emit_pair(m: &NetModel, a: &ObservationAggregates) -> [PosteriorCertificate; 2] {
    [0, 1].map(|b| emit_certificate(m, &a.name, &a.classes[b]))
}

impl PosteriorCertificate {
    /// Denotation rebuilt from the normal form and the weight alone (the raw
    /// coefficients are used only for the general class).
    pub fn reconstruct(&self) -> Result<BTreeMap<String, Rational>, CertificateError> {
        let k = self.interface.len();
        let unit = &self.weight / scale_for(k);
        match &self.form {
            NormalForm::MaximallyMixed { registers } => {
                if self.weight.is_zero() {
                    return Ok(BTreeMap::new());
                }
                if registers != &self.interface {
                    return Err(CertificateError::Malformed("mixed class must cover the interface".into()));
                }
                Ok([("I".repeat(k), unit)].into())
            }
            NormalForm::PureStabilizer { generators } => {
                let gens = generators
                    .iter()
                    .map(|g| {
                        PauliString::parse(g)
                            .filter(|p| p.n() == k)
                            .ok_or_else(|| CertificateError::Malformed(format!("bad generator `{g}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if gens.len() != k || gens.iter().any(|a| gens.iter().any(|b| !a.commutes(b))) {
                    return Err(CertificateError::Malformed("generators do not define a pure state".into()));
                }
                let g = group(&gens, k)
                    .ok_or_else(|| CertificateError::Malformed("generators are dependent".into()))?;
                Ok(g.into_iter()
                    .filter(|_| !unit.is_zero())
                    .map(|(l, s)| (l, if s > 0 { unit.clone() } else { -unit.clone() }))
                    .collect())
            }
            NormalForm::General => Ok(self.coefficients.clone()),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "observation": self.observation,
            "secret_bit": self.secret_bit as u8,
            "interface": self.interface,
            "weight": fmt_ratio(&self.weight),
            "class": self.form.class_name(),
            "coefficients": self.coefficients.iter().map(|(k, c)| (k.clone(), fmt_ratio(c))).collect::<BTreeMap<_, _>>(),
        });
        match &self.form {
            NormalForm::PureStabilizer { generators } => v["generators"] = json!(generators),
            NormalForm::MaximallyMixed { registers } => v["registers"] = json!(registers),
            NormalForm::General => {}
        }
        v
    }

    pub fn from_json(v: &Value) -> Result<Self, CertificateError> {
        let bad = |what: &str| CertificateError::Malformed(what.to_string());
        let s = |key: &str| v.get(key).and_then(Value::as_str).ok_or_else(|| bad(key));
        let strings = |key: &str| -> Result<Vec<String>, CertificateError> {
            v.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| bad(key))?
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad(key)))
                .collect()
        };
        let rat = |t: &str| parse_rational(t).map_err(|e| CertificateError::Malformed(e.to_string()));
        let form = match s("class")? {
            "pure-stabilizer" => NormalForm::PureStabilizer { generators: strings("generators")? },
            "maximally-mixed" => NormalForm::MaximallyMixed { registers: strings("registers")? },
            "general" => NormalForm::General,
            other => return Err(bad(&format!("class `{other}`"))),
        };
        let mut coefficients = BTreeMap::new();
        for (k, c) in v.get("coefficients").and_then(Value::as_object).ok_or_else(|| bad("coefficients"))? {
            coefficients.insert(k.clone(), rat(c.as_str().ok_or_else(|| bad("coefficients"))?)?);
        }
        let secret_bit = match v.get("secret_bit").and_then(Value::as_u64) {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(bad("secret_bit")),
        };
        Ok(PosteriorCertificate {
            observation: s("observation")?.to_string(),
            secret_bit,
            interface: strings("interface")?,
            weight: rat(s("weight")?)?,
            form,
            coefficients,
        })
    }

    /// Coefficients and weight match an aggregate given as raw data.
    pub fn check_coefficients(&self, coeffs: &BTreeMap<String, Rational>, k: usize) -> Result<bool, CertificateError> {
        if self.interface.len() != k {
            return Err(CertificateError::InterfaceMismatch(self.interface.len(), k));
        }
        let rebuilt = self.reconstruct()?;
        let trace = coeffs.get(&"I".repeat(k)).cloned().unwrap_or_else(Rational::zero) * scale_for(k);
        Ok(&rebuilt == coeffs && &self.coefficients == coeffs && self.weight == trace)
    }
}

/// Exact comparison of the certificate's denotation with the aggregate.
pub fn check_certificate(cert: &PosteriorCertificate, agg: &PosteriorAggregate) -> Result<bool, CertificateError> {
    Ok(cert.secret_bit == agg.secret
        && cert.weight == agg.p
        && cert.check_coefficients(&agg.omega.coeffs, agg.omega.registers.len())?)
}

/// Checks a certificate against an entry of a verification report.
pub fn check_against_report(cert: &PosteriorCertificate, report: &Value) -> Result<bool, CertificateError> {
    let per = report
        .get("per_observation")
        .and_then(Value::as_array)
        .ok_or_else(|| CertificateError::Malformed("report lacks per_observation".into()))?;
    let entry = per
        .iter()
        .find(|o| o.get("obs").and_then(Value::as_str) == Some(cert.observation.as_str()))
        .ok_or_else(|| CertificateError::UnknownObservation(cert.observation.clone()))?;
    let key = if cert.secret_bit { "omega1" } else { "omega0" };
    let mut coeffs = BTreeMap::new();
    for (k, c) in entry.get(key).and_then(Value::as_object).ok_or_else(|| CertificateError::Malformed(key.into()))? {
        let text = c.as_str().ok_or_else(|| CertificateError::Malformed(key.into()))?;
        coeffs.insert(k.clone(), parse_rational(text).map_err(|e| CertificateError::Malformed(e.to_string()))?);
    }
    let iface: Vec<String> = report
        .get("interface")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    if iface != cert.interface {
        return Err(CertificateError::InterfaceMismatch(cert.interface.len(), iface.len()));
    }
    cert.check_coefficients(&coeffs, iface.len())
}

/// Scalar `alpha` with `den(c1) = alpha * den(c0)`, if one exists.
pub fn check_zero_leakage(c1: &PosteriorCertificate, c0: &PosteriorCertificate) -> Option<Rational> {
    if !c1.weight.is_positive() || !c0.weight.is_positive() || c1.interface != c0.interface {
        return None;
    }
    let d1 = c1.reconstruct().ok()?;
    let d0 = c0.reconstruct().ok()?;
    if d1.keys().ne(d0.keys()) {
        return None;
    }
    let mut alpha: Option<Rational> = None;
    for (k, v1) in &d1 {
        let r = v1 / &d0[k];
        match &alpha {
            None => alpha = Some(r),
            Some(a) if *a == r => {}
            Some(_) => return None,
        }
    }
    alpha.filter(|a| a.is_positive())
}
