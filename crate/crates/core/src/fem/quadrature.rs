//! Tensor Gauss rules and Q1 shape functions on the reference square [0,1]^2.

/// Tensor-product quadrature rule on the reference square.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `n x n` Gauss-Legendre rule, exact for polynomials of degree `2n-1`
    /// in each variable. Supported for `n` in 1..=4.
    pub fn gauss(n: usize) -> Self {
        let (t, w): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (3.0f64 / 5.0).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            4 => {
                let s = (6.0f64 / 5.0).sqrt();
                let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
                let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
                let wa = (18.0 + 30f64.sqrt()) / 36.0;
                let wb = (18.0 - 30f64.sqrt()) / 36.0;
                (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
            }
            _ => panic!("unsupported Gauss order {n}"),
        };
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (ty, wy) in t.iter().zip(&w) {
            for (tx, wx) in t.iter().zip(&w) {
                points.push([0.5 * (tx + 1.0), 0.5 * (ty + 1.0)]);
                weights.push(0.25 * wx * wy);
            }
        }
        QuadratureRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Q1 shape functions at a reference point.
pub fn shape_values(p: [f64; 2]) -> [f64; 4] {
    let [x, y] = p;
    [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]
}

/// Reference gradients of the Q1 shape functions.
pub fn shape_gradients(p: [f64; 2]) -> [[f64; 2]; 4] {
    let [x, y] = p;
    [[-(1.0 - y), -(1.0 - x)], [1.0 - y, -x], [y, x], [-y, 1.0 - x]]
}

/// Shape values and reference gradients tabulated at the points of a rule.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub rule: QuadratureRule,
    pub values: Vec<[f64; 4]>,
    pub gradients: Vec<[[f64; 2]; 4]>,
}

impl ShapeTable {
    pub fn new(rule: QuadratureRule) -> Self {
        let values = rule.points.iter().map(|&p| shape_values(p)).collect();
        let gradients = rule.points.iter().map(|&p| shape_gradients(p)).collect();
        ShapeTable { rule, values, gradients }
    }

    pub fn gauss(n: usize) -> Self {
        Self::new(QuadratureRule::gauss(n))
    }

    /// Interpolated value at quadrature point `q`.
    pub fn value(&self, q: usize, nodal: &[f64; 4]) -> f64 {
        let n = &self.values[q];
        n[0] * nodal[0] + n[1] * nodal[1] + n[2] * nodal[2] + n[3] * nodal[3]
    }

    /// Physical gradient at quadrature point `q` on a square cell of size `h`.
    pub fn gradient(&self, q: usize, nodal: &[f64; 4], h: f64) -> [f64; 2] {
        let g = &self.gradients[q];
        let mut out = [0.0; 2];
        for a in 0..4 {
            out[0] += g[a][0] * nodal[a];
            out[1] += g[a][1] * nodal[a];
        }
        [out[0] / h, out[1] / h]
    }
}
