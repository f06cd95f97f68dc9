//! Static checks on a resolved model.

use super::*;
use crate::baseline::dense;
use std::collections::HashSet;

/// Models with at most this many registers get their instruments checked for
/// trace preservation by the dense simulator.
pub const ORACLE_REGISTER_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiagnosticKind {
    IdClash,
    AccessViolation,
    UnknownLabel,
    DuplicateOutcome,
    NoBranches,
    MaskingMustBeInvisible,
    NotTracePreserving,
    NotOracleChecked,
    EmptySecret,
}

impl DiagnosticKind {
    pub fn title(self) -> &'static str {
        match self {
            DiagnosticKind::IdClash => "id clash",
            DiagnosticKind::AccessViolation => "access violation",
            DiagnosticKind::UnknownLabel => "label not in observable alphabet",
            DiagnosticKind::DuplicateOutcome => "duplicate outcome",
            DiagnosticKind::NoBranches => "transition without branches",
            DiagnosticKind::MaskingMustBeInvisible => "masking must be invisible",
            DiagnosticKind::NotTracePreserving => "instrument not trace preserving",
            DiagnosticKind::NotOracleChecked => "not oracle-checked",
            DiagnosticKind::EmptySecret => "empty secret",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub severity: Severity,
    /// Offending id (transition, place or register).
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {} [{}]: {}", self.kind.title(), self.subject, self.message)
    }
}

fn diag(kind: DiagnosticKind, severity: Severity, subject: &str, message: String) -> Diagnostic {
    Diagnostic { kind, severity, subject: subject.to_string(), message }
}

pub fn validate_model(m: &NetModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = m.n_registers();

    let places: HashSet<&str> = m.places.iter().map(String::as_str).collect();
    for r in &m.registers {
        if places.contains(r.as_str()) {
            out.push(diag(
                DiagnosticKind::IdClash,
                Severity::Error,
                r,
                "identifier is declared both as a place and as a register".into(),
            ));
        }
    }

    let mut tp_checkable = Vec::new();
    for t in &m.transitions {
        if t.branches.is_empty() {
            out.push(diag(DiagnosticKind::NoBranches, Severity::Error, &t.id, "at least one branch is required".into()));
        }
        let mut outcomes = HashSet::new();
        let mut access_ok = true;
        for b in &t.branches {
            if !outcomes.insert(b.outcome.as_str()) {
                out.push(diag(
                    DiagnosticKind::DuplicateOutcome,
                    Severity::Error,
                    &t.id,
                    format!("outcome `{}` appears more than once", b.outcome),
                ));
            }
            if let Label::Obs(l) = &b.label {
                if !m.alphabet.contains(l) {
                    out.push(diag(
                        DiagnosticKind::UnknownLabel,
                        Severity::Error,
                        &t.id,
                        format!("branch `{}` emits `{l}`", b.outcome),
                    ));
                }
                if t.masking {
                    out.push(diag(
                        DiagnosticKind::MaskingMustBeInvisible,
                        Severity::Error,
                        &t.id,
                        format!("branch `{}` of a masking transition emits `{l}`", b.outcome),
                    ));
                }
            }
            for step in &b.program {
                for q in step.registers(n) {
                    if !t.access.contains(&q) {
                        access_ok = false;
                        out.push(diag(
                            DiagnosticKind::AccessViolation,
                            Severity::Error,
                            &t.id,
                            format!(
                                "branch `{}` touches register `{}` outside the access set",
                                b.outcome, m.registers[q]
                            ),
                        ));
                    }
                }
            }
        }
        if access_ok && !t.branches.is_empty() {
            tp_checkable.push(t);
        }
    }

    match &m.secret {
        SecretSpec::MarkingSet(ms) if ms.is_empty() => out.push(diag(
            DiagnosticKind::EmptySecret,
            Severity::Warning,
            "secret",
            "no secret markings declared".into(),
        )),
        SecretSpec::EventPredicate(ts) if ts.is_empty() => out.push(diag(
            DiagnosticKind::EmptySecret,
            Severity::Warning,
            "secret",
            "no secret transitions declared".into(),
        )),
        _ => {}
    }

    if n <= ORACLE_REGISTER_LIMIT {
        for t in tp_checkable {
            let regs: Vec<usize> = t.access.iter().copied().collect();
            let defect = dense::trace_preservation_defect(t, &regs, n);
            if defect > 1e-9 {
                out.push(diag(
                    DiagnosticKind::NotTracePreserving,
                    Severity::Error,
                    &t.id,
                    format!("branch maps do not sum to a channel (deviation {defect:.3e})"),
                ));
            }
        }
    } else if !m.transitions.is_empty() {
        out.push(diag(
            DiagnosticKind::NotOracleChecked,
            Severity::Warning,
            "model",
            format!("{n} registers exceed the oracle limit of {ORACLE_REGISTER_LIMIT}; instruments not checked"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn kinds(m: &NetModel) -> Vec<DiagnosticKind> {
        validate_model(m).into_iter().map(|d| d.kind).collect()
    }

    #[test]
    fn repeater_is_clean() {
        assert_eq!(validate_model(&bundled::repeater()), vec![]);
    }

    #[test]
    fn gate_outside_access_is_flagged() {
        let mut m = bundled::repeater();
        let t = m.transition_index("t_ok_nonsec").unwrap();
        let q1 = m.register_index("q1").unwrap();
        let q4 = m.register_index("q4").unwrap();
        m.transitions[t].branches[0].program.push(Step::Gate(Gate::new(GateKind::Cnot, [q4, q1])));
        assert_eq!(kinds(&m), vec![DiagnosticKind::AccessViolation]);
    }

    #[test]
    fn observable_masking_is_flagged() {
        let mut m = bundled::repeater();
        let t = m.transition_index("t_cal").unwrap();
        m.transitions[t].masking = true;
        assert_eq!(kinds(&m), vec![DiagnosticKind::MaskingMustBeInvisible]);
    }

    #[test]
    fn incomplete_instrument_is_flagged() {
        let mut m = bundled::repeater();
        let t = m.transition_index("t_swap_nonsec").unwrap();
        m.transitions[t].branches.pop();
        assert_eq!(kinds(&m), vec![DiagnosticKind::NotTracePreserving]);
    }

    #[test]
    fn duplicate_outcome_and_unknown_label() {
        let mut m = bundled::repeater();
        let t = m.transition_index("t_swap_nonsec").unwrap();
        let o = m.transitions[t].branches[0].outcome.clone();
        m.transitions[t].branches[1].outcome = o;
        let r = m.transition_index("t_req").unwrap();
        m.transitions[r].branches[0].label = Label::Obs("bogus".into());
        let k = kinds(&m);
        assert!(k.contains(&DiagnosticKind::DuplicateOutcome));
        assert!(k.contains(&DiagnosticKind::UnknownLabel));
    }

    #[test]
    fn large_models_carry_a_warning() {
        let mut m = bundled::repeater();
        for i in 0..2 {
            m.registers.push(format!("extra{i}"));
            m.initial_state.assign.push(Basis::Zero);
        }
        let reset = m.transition_index("t_reset").unwrap();
        m.transitions[reset].access.extend([5, 6]);
        m.transitions[reset].branches[0].program = vec![Step::ReplaceAll(m.initial_state.clone())];
        let d = validate_model(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::NotOracleChecked);
        assert_eq!(d[0].severity, Severity::Warning);
    }
}
