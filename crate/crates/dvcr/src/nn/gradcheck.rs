//! Central finite-difference verification of analytic gradients. Slow and
//! exhaustive on purpose: it walks every entry of every parameter tensor.

use super::ParamSet;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    /// Entries compared against a numeric estimate.
    pub checked: usize,
    /// Entries skipped because both analytic and numeric were ~0.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `name[r,c]` of the worst entry.
    pub worst: String,
}

/// Compares `analytic` (a same-typed gradient struct) against central
/// differences of `loss` at the model's current parameters. Entries where
/// both |analytic| and |numeric| fall below 1e-10 are skipped — comparing
/// relative error between two zeros is noise, not signal.
///
/// Central differences of an O(s)-magnitude loss carry cancellation noise of
/// roughly `s·ε/h` absolute (≈1e-11 for s=1, h=1e-5 in f64), so a difference
/// below that floor is recorded as an exact match: the method cannot resolve
/// it, regardless of how small the relative denominator is.
pub fn finite_difference_check<M: ParamSet>(
    model: &mut M,
    analytic: &M,
    mut loss: impl FnMut(&M) -> f64,
    h: f64,
) -> CheckOutcome {
    let n_tensors = model.params().len();
    let noise_floor = 1e-10 * loss(model).abs().max(1.0);
    let mut outcome = CheckOutcome {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for ti in 0..n_tensors {
        let (name, shape) = {
            let ps = model.params();
            (ps[ti].0.clone(), ps[ti].1.raw_dim())
        };
        let a_tensor = {
            let gs = analytic.params();
            assert_eq!(gs[ti].0, name, "gradient/parameter order mismatch");
            gs[ti].1.clone()
        };
        for r in 0..shape[0] {
            for c in 0..shape[1] {
                let orig = model.params()[ti].1[[r, c]];
                *model.params_mut()[ti].1.get_mut((r, c)).unwrap() = orig + h;
                let plus = loss(model);
                *model.params_mut()[ti].1.get_mut((r, c)).unwrap() = orig - h;
                let minus = loss(model);
                *model.params_mut()[ti].1.get_mut((r, c)).unwrap() = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = a_tensor[[r, c]];
                let denom = a.abs().max(numeric.abs());
                if denom < 1e-10 {
                    outcome.skipped += 1;
                    continue;
                }
                let diff = (a - numeric).abs();
                let rel = if diff < noise_floor { 0.0 } else { diff / denom };
                if rel > outcome.max_rel_err {
                    outcome.max_rel_err = rel;
                    outcome.worst = format!("{name}[{r},{c}]");
                }
                outcome.checked += 1;
            }
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    struct Quad(Array2<f64>);

    impl ParamSet for Quad {
        fn params(&self) -> Vec<(String, &Array2<f64>)> {
            vec![("w".to_string(), &self.0)]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
            vec![("w".to_string(), &mut self.0)]
        }
    }

    #[test]
    fn accepts_correct_quadratic_gradient() {
        // loss = sum(w²), gradient 2w.
        let mut model = Quad(Array2::from_shape_fn((2, 3), |(i, j)| i as f64 + 0.5 * j as f64));
        let analytic = Quad(model.0.mapv(|v| 2.0 * v));
        let outcome =
            finite_difference_check(&mut model, &analytic, |m| m.0.mapv(|v| v * v).sum(), 1e-5);
        assert!(outcome.max_rel_err < 1e-8, "{}", outcome.max_rel_err);
        // w[0,0] = 0 has zero gradient: skipped.
        assert_eq!(outcome.skipped, 1);
        assert_eq!(outcome.checked, 5);
    }

    #[test]
    fn flags_a_wrong_gradient() {
        let mut model = Quad(Array2::ones((1, 2)));
        let wrong = Quad(Array2::from_elem((1, 2), 3.0)); // truth is 2.0
        let outcome =
            finite_difference_check(&mut model, &wrong, |m| m.0.mapv(|v| v * v).sum(), 1e-5);
        assert!(outcome.max_rel_err > 0.3);
        assert_eq!(outcome.worst, "w[0,0]");
    }

    #[test]
    fn leaves_parameters_unchanged() {
        let mut model = Quad(Array2::from_elem((3, 3), 0.75));
        let before = model.0.clone();
        let analytic = Quad(model.0.mapv(|v| 2.0 * v));
        finite_difference_check(&mut model, &analytic, |m| m.0.mapv(|v| v * v).sum(), 1e-5);
        assert_eq!(model.0, before);
    }
}
