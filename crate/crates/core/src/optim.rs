//! One-dimensional Nelder-Mead simplex minimizer.
//!
//! In one dimension the simplex is a pair of points; the centroid of the
//! non-worst vertices is simply the best vertex.

use crate::scalar::Scalar;

/// Simplex coefficients and stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions<T> {
    /// Distance of the second vertex from the starting point.
    pub initial_spread: T,
    pub reflection: T,
    pub expansion: T,
    pub contraction: T,
    pub shrink: T,
    /// Converged once the simplex extent drops below this.
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Scalar> Default for NelderMeadOptions<T> {
    fn default() -> Self {
        Self {
            initial_spread: T::lit(50.0),
            reflection: T::one(),
            expansion: T::lit(2.0),
            contraction: T::lit(0.5),
            shrink: T::lit(0.5),
            tolerance: T::one(),
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum<T> {
    pub x: T,
    pub value: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Final simplex extent.
    pub extent: T,
}

/// 1-D Nelder-Mead minimizer.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead1d<T> {
    pub options: NelderMeadOptions<T>,
}

impl<T: Scalar> Default for NelderMead1d<T> {
    fn default() -> Self {
        Self { options: NelderMeadOptions::default() }
    }
}

impl<T: Scalar> NelderMead1d<T> {
    pub fn new(options: NelderMeadOptions<T>) -> Self {
        Self { options }
    }

    /// Minimizes `f` starting from `x0`.
    pub fn minimize<F: FnMut(T) -> T>(&self, mut f: F, x0: T) -> Minimum<T> {
        let o = &self.options;
        let mut evals = 0usize;
        let mut eval = |x: T, evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                T::infinity()
            } else {
                v
            }
        };

        let mut best = (x0, eval(x0, &mut evals));
        let x1 = x0 + o.initial_spread;
        let mut worst = (x1, eval(x1, &mut evals));
        let mut iterations = 0;

        loop {
            if worst.1 < best.1 {
                std::mem::swap(&mut best, &mut worst);
            }
            let extent = (worst.0 - best.0).abs();
            if extent < o.tolerance {
                return Minimum { x: best.0, value: best.1, iterations, evaluations: evals, converged: true, extent };
            }
            if iterations >= o.max_iterations {
                return Minimum { x: best.0, value: best.1, iterations, evaluations: evals, converged: false, extent };
            }
            iterations += 1;

            let c = best.0;
            let xr = c + o.reflection * (c - worst.0);
            let fr = eval(xr, &mut evals);
            if fr < best.1 {
                let xe = c + o.expansion * (xr - c);
                let fe = eval(xe, &mut evals);
                worst = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            // In 1-D the second-worst vertex is the best one, so a reflection
            // that does not beat it always falls through to contraction.
            if fr < worst.1 {
                let xc = c + o.contraction * (xr - c);
                let fc = eval(xc, &mut evals);
                if fc <= fr {
                    worst = (xc, fc);
                    continue;
                }
            } else {
                let xc = c + o.contraction * (worst.0 - c);
                let fc = eval(xc, &mut evals);
                if fc < worst.1 {
                    worst = (xc, fc);
                    continue;
                }
            }
            let xs = best.0 + o.shrink * (worst.0 - best.0);
            worst = (xs, eval(xs, &mut evals));
        }
    }
}
