use super::LltView;
use crate::error::{Error, Result};

/// ψ, ψ′, ψ″ on a uniform grid with quintic Hermite interpolation.
///
/// The backward samplers evaluate ψ hundreds of times per draw, each a full
/// quadrature; the table replaces those by polynomial evaluations with an
/// interpolation error of order `h⁶ ψ⁽⁶⁾`.
#[derive(Clone, Debug)]
pub struct PsiTable {
    lo: f64,
    h: f64,
    nodes: Vec<[f64; 3]>,
}

impl PsiTable {
    pub fn new(view: &LltView, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if view.dim() != 1 || !(lo < hi) || n < 2 {
            return Err(Error::invalid("ψ table needs a one-dimensional view, lo < hi and n ≥ 2"));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|i| {
                let x = if i + 1 == n { hi } else { lo + i as f64 * h };
                let m = view.moments1(x)?;
                Ok([m.log_mass, m.mean, m.var])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PsiTable { lo, h, nodes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.h * (self.nodes.len() - 1) as f64)
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.range();
        x >= lo && x <= hi
    }

    /// Interpolated `(ψ, ψ′)`, or `None` outside the table.
    pub fn eval(&self, x: f64) -> Option<(f64, f64)> {
        if !self.contains(x) {
            return None;
        }
        let pos = (x - self.lo) / self.h;
        let i = (pos.floor() as usize).min(self.nodes.len() - 2);
        let t = pos - i as f64;
        let [f0, d0, s0] = self.nodes[i];
        let [f1, d1, s1] = self.nodes[i + 1];
        let h = self.h;
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5;
        let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 0.5 * t3 - t4 + 0.5 * t5;
        let value = f0 * h0 + h * d0 * h1 + h * h * s0 * h2 + f1 * h3 + h * d1 * h4 + h * h * s1 * h5;
        let g0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
        let g1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
        let g2 = t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4;
        let g4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
        let g5 = 1.5 * t2 - 4.0 * t3 + 2.5 * t4;
        let slope = (f0 * g0 - f1 * g0) / h + d0 * g1 + h * s0 * g2 + d1 * g4 + h * s1 * g5;
        Some((value, slope))
    }

    /// Interpolated ψ, falling back to quadrature outside the table.
    pub fn value_or(&self, view: &LltView, x: f64) -> Result<f64> {
        match self.eval(x) {
            Some((v, _)) => Ok(v),
            None => view.value1(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Potential, Scalar};

    #[test]
    fn interpolates_laplace_llt() {
        let view = LltView::new(Potential::separable(vec![Scalar::abs()]).unwrap().shifted(2f64.ln())).unwrap();
        let table = PsiTable::new(&view, -0.8, 0.8, 257).unwrap();
        for i in 0..97 {
            let x = -0.8 + 1.6 * (i as f64 + 0.37) / 97.0;
            let (v, g) = table.eval(x).unwrap();
            let exact = -(1.0 - x * x).ln();
            assert!((v - exact).abs() < 1e-11, "x={x}");
            assert!((g - 2.0 * x / (1.0 - x * x)).abs() < 1e-8, "x={x}");
        }
        assert!(table.eval(0.81).is_none());
        assert!((table.value_or(&view, 0.85).unwrap() + (1.0 - 0.85f64 * 0.85).ln()).abs() < 1e-11);
    }
}
