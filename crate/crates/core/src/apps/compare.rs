//! Checking simulated outputs against reference results.

use thiserror::Error;

/// Relative tolerance for floating-point outputs.
pub const REL_TOL: f64 = 1e-6;
/// Elements much smaller than the largest reference magnitude are compared
/// against this fraction of it instead of their own magnitude.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Int(Vec<u64>),
    Float(Vec<f64>),
}

impl Output {
    pub fn len(&self) -> usize {
        match self {
            Output::Int(v) => v.len(),
            Output::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("shape mismatch: got {got} elements, expected {want}")]
    Shape { got: usize, want: usize },
    #[error("output kinds differ (integer vs floating point)")]
    Kind,
    #[error("{label} {index}: got {got}, expected {want}")]
    Value { label: String, index: usize, got: String, want: String },
}

fn show_int(v: u64) -> String {
    if v == u64::MAX {
        "unreached".into()
    } else {
        v.to_string()
    }
}

/// Compare `got` with `want`: exact for integers, within [`REL_TOL`] for
/// floats. `label` names the element kind in the error ("vertex", "bin").
pub fn compare_out(got: &Output, want: &Output, label: &str) -> Result<(), CompareError> {
    if got.len() != want.len() {
        return Err(CompareError::Shape { got: got.len(), want: want.len() });
    }
    match (got, want) {
        (Output::Int(g), Output::Int(w)) => match g.iter().zip(w).position(|(a, b)| a != b) {
            None => Ok(()),
            Some(i) => Err(CompareError::Value { label: label.into(), index: i, got: show_int(g[i]), want: show_int(w[i]) }),
        },
        (Output::Float(g), Output::Float(w)) => {
            let max_abs = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let floor = MAGNITUDE_FLOOR * max_abs;
            let bad = g.iter().zip(w).position(|(a, b)| !((a - b).abs() <= REL_TOL * b.abs().max(floor)));
            match bad {
                None => Ok(()),
                Some(i) => Err(CompareError::Value { label: label.into(), index: i, got: g[i].to_string(), want: w[i].to_string() }),
            }
        }
        _ => Err(CompareError::Kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arrays_pass() {
        assert!(compare_out(&Output::Int(vec![1, 2]), &Output::Int(vec![1, 2]), "vertex").is_ok());
    }

    #[test]
    fn off_by_one_names_the_vertex() {
        let e = compare_out(&Output::Int(vec![0, 1, 3]), &Output::Int(vec![0, 1, 2]), "vertex").unwrap_err();
        assert_eq!(e.to_string(), "vertex 2: got 3, expected 2");
    }

    #[test]
    fn float_tolerance() {
        let w = Output::Float(vec![0.5, 0.25]);
        assert!(compare_out(&Output::Float(vec![0.5 * (1.0 + 1e-9), 0.25]), &w, "vertex").is_ok());
        assert!(compare_out(&Output::Float(vec![0.5 * (1.0 + 1e-5), 0.25]), &w, "vertex").is_err());
        assert!(compare_out(&Output::Float(vec![f64::NAN, 0.25]), &w, "vertex").is_err());
    }

    #[test]
    fn shape_mismatch() {
        let e = compare_out(&Output::Int(vec![1]), &Output::Int(vec![1, 2]), "bin").unwrap_err();
        assert_eq!(e, CompareError::Shape { got: 1, want: 2 });
    }
}
