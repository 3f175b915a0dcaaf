use serde::{Deserialize, Serialize};

use crate::dynamics::{Boundary, Dynamics, TrajectoryLog};

/// Tolerance on expected-position checks.
pub const AUDIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub violation_steps: usize,
    pub first_violation_t: Option<usize>,
    /// Largest `|a* x_t + b* u_t|` over the log (0 for an empty log).
    pub max_excursion: f64,
}

/// Recompute `a* x_t + b* u_t` from the logged pairs and count steps outside
/// `[d_lower, d_upper]` beyond [`AUDIT_SLACK`].
pub fn safety_audit(log: &TrajectoryLog, truth: &Dynamics, boundary: &Boundary) -> SafetyAudit {
    let mut audit = SafetyAudit { violation_steps: 0, first_violation_t: None, max_excursion: 0.0 };
    for rec in &log.records {
        let y = truth.mean_next(rec.x, rec.u);
        audit.max_excursion = audit.max_excursion.max(y.abs());
        if !boundary.contains(y, AUDIT_SLACK) {
            audit.violation_steps += 1;
            audit.first_violation_t.get_or_insert(rec.t);
        }
    }
    audit
}
