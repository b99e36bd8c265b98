//! Clamped uniform B-spline bases on `[0, 1]`.
//!
//! `nelems` equal elements with `(degree + 1)`-fold end knots give
//! `nelems + degree` basis functions. Intervals are half-open `[t_i, t_{i+1})`
//! except the last, which is closed, so evaluation is defined on all of
//! `[0, 1]` and derivatives at interior knots are right-hand (left-hand at 1).

use crate::error::{Result, SpanError};

/// Largest supported degree; bounds the stack buffers used during evaluation.
pub const MAX_DEGREE: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    nelems: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(degree: usize, nelems: usize) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE || nelems == 0 {
            return Err(SpanError::Config(format!(
                "spline basis needs 1 <= degree <= {MAX_DEGREE} and nelems >= 1, got degree {degree}, nelems {nelems}"
            )));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..nelems).map(|i| i as f64 / nelems as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            nelems,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nelems(&self) -> usize {
        self.nelems
    }

    pub fn nbasis(&self) -> usize {
        self.nelems + self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All `nbasis` values at `x`.
    pub fn eval_basis(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nbasis()];
        let mut vals = [0.0; MAX_DEGREE + 1];
        let first = self.eval_local(x, &mut vals, None)?;
        out[first..=first + self.degree].copy_from_slice(&vals[..=self.degree]);
        Ok(out)
    }

    /// All `nbasis` first derivatives `dB_i/dx` at `x`.
    pub fn eval_basis_deriv(&self, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nbasis()];
        let mut vals = [0.0; MAX_DEGREE + 1];
        let mut ders = [0.0; MAX_DEGREE + 1];
        let first = self.eval_local(x, &mut vals, Some(&mut ders))?;
        out[first..=first + self.degree].copy_from_slice(&ders[..=self.degree]);
        Ok(out)
    }

    /// Element containing `x` (0-based, closed at the right end).
    fn element(&self, x: f64) -> usize {
        let e = (x * self.nelems as f64).floor() as usize;
        let mut e = e.min(self.nelems - 1);
        // Floor of x·N can land one element off at knot values; settle with
        // exact knot comparisons so the half-open convention holds.
        while e > 0 && x < self.knots[self.degree + e] {
            e -= 1;
        }
        while e + 1 < self.nelems && x >= self.knots[self.degree + e + 1] {
            e += 1;
        }
        e
    }

    /// The `degree + 1` potentially nonzero basis values at `x`, written to
    /// `vals[..=degree]`, optionally with derivatives. Returns the index of
    /// the first of them.
    pub fn eval_local(
        &self,
        x: f64,
        vals: &mut [f64; MAX_DEGREE + 1],
        ders: Option<&mut [f64; MAX_DEGREE + 1]>,
    ) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(SpanError::Domain { value: x });
        }
        let k = self.degree;
        let e = self.element(x);
        let span = e + k;
        let t = &self.knots;

        // Triangular Cox–de Boor table: after pass `r`, vals[..=r] holds the
        // degree-r basis functions nonzero on the span.
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        vals[0] = 1.0;
        let mut lower = [0.0; MAX_DEGREE + 1];
        for r in 1..=k {
            if r == k {
                lower[..k].copy_from_slice(&vals[..k]);
            }
            left[r] = x - t[span + 1 - r];
            right[r] = t[span + r] - x;
            let mut saved = 0.0;
            for j in 0..r {
                let denom = right[j + 1] + left[r - j];
                let temp = vals[j] / denom;
                vals[j] = saved + right[j + 1] * temp;
                saved = left[r - j] * temp;
            }
            vals[r] = saved;
        }

        if let Some(ders) = ders {
            // dB_{i,k} = k/(t_{i+k} − t_i)·B_{i,k−1} − k/(t_{i+k+1} − t_{i+1})·B_{i+1,k−1},
            // with the degree k−1 functions B_{span−k+1..=span} held in `lower`.
            let first = span - k;
            let kf = k as f64;
            for (j, d) in ders.iter_mut().enumerate().take(k + 1) {
                let i = first + j;
                let from_left = if j >= 1 {
                    let w = t[i + k] - t[i];
                    if w > 0.0 { kf / w * lower[j - 1] } else { 0.0 }
                } else {
                    0.0
                };
                let from_right = if j < k {
                    let w = t[i + k + 1] - t[i + 1];
                    if w > 0.0 { kf / w * lower[j] } else { 0.0 }
                } else {
                    0.0
                };
                *d = from_left - from_right;
            }
        }
        Ok(span - k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive Cox–de Boor with the same interval convention.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            let last = *t.last().unwrap();
            let in_span = (t[i] <= x && x < t[i + 1])
                || (x == last && t[i] < t[i + 1] && t[i + 1] == last);
            return if in_span { 1.0 } else { 0.0 };
        }
        let mut out = 0.0;
        let w1 = t[i + k] - t[i];
        if w1 > 0.0 {
            out += (x - t[i]) / w1 * cox_de_boor(t, i, k - 1, x);
        }
        let w2 = t[i + k + 1] - t[i + 1];
        if w2 > 0.0 {
            out += (t[i + k + 1] - x) / w2 * cox_de_boor(t, i + 1, k - 1, x);
        }
        out
    }

    #[test]
    fn knot_layout() {
        let b = SplineBasis::new(2, 4).unwrap();
        assert_eq!(
            b.knots(),
            &[0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
        );
        assert_eq!(b.nbasis(), 6);
    }

    #[test]
    fn hat_functions() {
        let b = SplineBasis::new(1, 2).unwrap();
        assert_eq!(b.eval_basis(0.0).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(b.eval_basis(0.25).unwrap(), vec![0.5, 0.5, 0.0]);
        assert_eq!(b.eval_basis(1.0).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(b.eval_basis_deriv(0.25).unwrap(), vec![-2.0, 2.0, 0.0]);
    }

    #[test]
    fn one_sided_derivatives_at_knots() {
        let b = SplineBasis::new(1, 2).unwrap();
        // Right-hand slope at the interior knot, left-hand at the end.
        assert_eq!(b.eval_basis_deriv(0.5).unwrap(), vec![0.0, -2.0, 2.0]);
        assert_eq!(b.eval_basis_deriv(1.0).unwrap(), vec![0.0, -2.0, 2.0]);
        assert_eq!(b.eval_basis_deriv(0.0).unwrap(), vec![-2.0, 2.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_domain() {
        let b = SplineBasis::new(3, 3).unwrap();
        assert!(matches!(b.eval_basis(-1e-9), Err(SpanError::Domain { .. })));
        assert!(b.eval_basis(1.0 + 1e-12).is_err());
        assert!(b.eval_basis(f64::NAN).is_err());
        assert!(SplineBasis::new(0, 2).is_err());
        assert!(SplineBasis::new(1, 0).is_err());
    }

    #[test]
    fn matches_recursive_definition() {
        for k in 1..=4 {
            for n in [1, 2, 3, 5, 8] {
                let b = SplineBasis::new(k, n).unwrap();
                for step in 0..=200 {
                    let x = step as f64 / 200.0;
                    let fast = b.eval_basis(x).unwrap();
                    for (i, v) in fast.iter().enumerate() {
                        let slow = cox_de_boor(b.knots(), i, k, x);
                        assert!((v - slow).abs() < 1e-13, "k={k} n={n} x={x} i={i}");
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_sums_to_zero() {
        let b = SplineBasis::new(3, 4).unwrap();
        for step in 0..=100 {
            let s: f64 = b.eval_basis_deriv(step as f64 / 100.0).unwrap().iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
