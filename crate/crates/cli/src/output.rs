//! CSV and JSON emitters. Reals in CSV use `{:.16e}` (17 significant digits,
//! `.` separator, `\n` line endings) regardless of locale.

use std::fmt::Write as _;

use quench_core::analysis::quench_time_bound;
use quench_core::fields::eval_field;
use quench_core::pmp::PMPCertificate;
use quench_core::{AdjointPath, ControlSignal, ProblemSpec, SearchResult, Trajectory, Vec2};
use serde::Serialize;
use serde_json::{json, Value};

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let field = traj.field();
    let mut out = String::from("t,y1,y2,f1,f2,dist\n");
    for ((&t, &y), &d) in traj.times.iter().zip(&traj.states).zip(&traj.distances) {
        let f = eval_field(field, y).unwrap_or(Vec2::new(f64::NAN, f64::NAN));
        writeln!(
            out,
            "{},{},{},{},{},{}",
            real(t),
            real(y.x1),
            real(y.x2),
            real(f.x1),
            real(f.x2),
            real(d)
        )
        .unwrap();
    }
    if let Some(q) = &traj.quench {
        writeln!(
            out,
            "# t_hat={} bracket={},{}",
            real(q.t_hat),
            real(q.bracket_lo),
            real(q.bracket_hi)
        )
        .unwrap();
    }
    out
}

/// Adjoint samples in increasing time order.
pub fn adjoint_csv(adj: &AdjointPath) -> String {
    let mut out = String::from("t,psi1,psi2,ratio\n");
    let ratios = adj.ratios();
    for i in (0..adj.times.len()).rev() {
        let p = adj.psi[i];
        writeln!(
            out,
            "{},{},{},{}",
            real(adj.times[i]),
            real(p.x1),
            real(p.x2),
            real(ratios[i])
        )
        .unwrap();
    }
    out
}

pub fn quench_json(p: &ProblemSpec, traj: &Trajectory) -> Value {
    let q = traj.quench.as_ref().expect("quenched run");
    json!({
        "t_hat": q.t_hat,
        "bracket": [q.bracket_lo, q.bracket_hi],
        "bound": quench_time_bound(p),
        "steps": traj.stats.accepted,
        "rejected": traj.stats.rejected,
    })
}

pub fn certificate_json(c: &PMPCertificate) -> Value {
    json!({
        "max_residual": c.max_residual,
        "worst_t": c.worst_t,
        "terminal_norm": c.terminal_norm,
        "terminal_error": c.terminal_error,
        "nontriviality_ratio": c.nontriviality_ratio,
        "passed": c.passed,
    })
}

fn control_json(u: &ControlSignal) -> Value {
    match u {
        ControlSignal::Zero => json!({"kind": "zero"}),
        ControlSignal::Constant(v) => json!({"kind": "constant", "value": v}),
        ControlSignal::Piecewise(pc) => json!({
            "kind": "piecewise",
            "grid_step": pc.grid_step,
            "values": pc.values,
            "extension": format!("{:?}", pc.extension).to_lowercase(),
        }),
        ControlSignal::Feedback(_) => json!({"kind": "feedback"}),
    }
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    t_hat: f64,
    step: Option<f64>,
}

pub fn search_json(r: &SearchResult) -> Value {
    let history: Vec<HistoryRow> = r
        .history
        .iter()
        .map(|h| HistoryRow {
            iteration: h.iteration,
            t_hat: h.t_hat,
            step: h.step,
        })
        .collect();
    json!({
        "method": r.method.name(),
        "best_t": r.best_t,
        "bracket": [r.bracket.0, r.bracket.1],
        "bound": r.bound,
        "zero_control_t": r.zero_control_t,
        "evaluations": r.evaluations,
        "converged": r.converged,
        "warning": r.warning,
        "certificate": r.certificate.as_ref().map(certificate_json),
        "best_control": control_json(&r.best_control),
        "history": history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use quench_core::integrator::integrate_to_quench;
    use quench_core::{FieldKind, IntegratorConfig, Matrix2, MatrixSignal};

    #[test]
    fn trajectory_csv_layout() {
        let p = ProblemSpec::new(
            FieldKind::F2,
            Vec2::new(0.75, 0.0),
            1.0,
            MatrixSignal::Constant(Matrix2::new(1.0, 0.0, 0.0, 0.0)),
        )
        .unwrap();
        let traj =
            integrate_to_quench(&p, &ControlSignal::Zero, &IntegratorConfig::default()).unwrap();
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,y1,y2,f1,f2,dist");
        assert_eq!(lines.len(), traj.len() + 2);
        assert_eq!(lines[1], "0.0000000000000000e0,7.5000000000000000e-1,0.0000000000000000e0,3.0000000000000000e0,0.0000000000000000e0,2.5000000000000000e-1");
        assert!(lines.last().unwrap().starts_with("# t_hat="));
        assert!(!csv.contains('\r'));
        for row in &lines[1..lines.len() - 1] {
            for cell in row.split(',') {
                let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
                assert_eq!(mantissa.len(), 18, "{cell}");
            }
        }
    }
}
