//! Per-run record keeping.

use std::io::Write;

use crate::error::Result;
use crate::scalar::Scalar;

/// One recorded iteration.
#[derive(Clone, Debug)]
pub struct TraceRow<T> {
    pub iteration: u64,
    /// Mini-batch estimate of the objective at this iteration.
    pub objective: Option<T>,
    /// `||w_{t+1} - w_t||`.
    pub step_norm: T,
    /// Mean per-block estimator error against the exact oracle, when enabled.
    pub est_error: Option<T>,
    /// Moreau-envelope gradient-norm estimate, when enabled.
    pub moreau_grad: Option<T>,
}

/// Run metadata kept out of the trace body so that trace bytes depend only
/// on (problem, config, seed).
#[derive(Clone, Debug, Default)]
pub struct RunMeta {
    pub seed: u64,
    pub iterations: u64,
    pub trace_every: u64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace<T> {
    pub rows: Vec<TraceRow<T>>,
    pub meta: RunMeta,
}

impl<T: Scalar> RunTrace<T> {
    pub fn new(seed: u64, trace_every: u64) -> Self {
        RunTrace {
            rows: Vec::new(),
            meta: RunMeta {
                seed,
                trace_every,
                ..RunMeta::default()
            },
        }
    }

    pub fn push(&mut self, row: TraceRow<T>) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes the trace as CSV. Floats use the shortest round-trip form, so
    /// two runs with identical iterates produce byte-identical output.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "iter,objective,step_norm,est_error,moreau_grad")?;
        for row in &self.rows {
            let obj = row
                .objective
                .map(|v| format!("{:?}", v.as_f64()))
                .unwrap_or_default();
            let est = row
                .est_error
                .map(|v| format!("{:?}", v.as_f64()))
                .unwrap_or_default();
            let moreau = row
                .moreau_grad
                .map(|v| format!("{:?}", v.as_f64()))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{:?},{},{}",
                row.iteration,
                obj,
                row.step_norm.as_f64(),
                est,
                moreau
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_bytes_are_deterministic() {
        let mut trace = RunTrace::new(7, 1);
        trace.push(TraceRow {
            iteration: 0,
            objective: Some(0.125f64),
            step_norm: 1.0 / 3.0,
            est_error: None,
            moreau_grad: None,
        });
        let mut a = Vec::new();
        trace.write_csv(&mut a).unwrap();
        let mut b = Vec::new();
        trace.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("iter,objective,step_norm,est_error,moreau_grad\n"));
        assert!(text.contains("0,0.125,0.3333333333333333,,"));
    }
}
