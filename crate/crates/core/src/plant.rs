//! Stable LTI plants `x' = Ax + Bu + B_w w`, `z = Cx + Du + D_w w` and their
//! steady-state input/output map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// Condition number of `A` above which the DC gains carry a warning.
pub const DC_CONDITION_WARN: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: Matrix,
    b: Matrix,
    b_w: Matrix,
    c: Matrix,
    d: Matrix,
    d_w: Matrix,
    max_real_part: f64,
}

/// Steady-state gains `G_u = -C A^-1 B + D` and `G_w = -C A^-1 B_w + D_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcGains {
    pub g_u: Matrix,
    pub g_w: Matrix,
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl DcGains {
    /// Gains given directly, e.g. from a structured model.
    pub fn from_matrices(g_u: Matrix, g_w: Matrix) -> Result<Self> {
        if g_u.nrows() != g_w.nrows() {
            return Err(invalid("G_u and G_w must have the same number of rows"));
        }
        Ok(Self {
            g_u,
            g_w,
            condition: 1.0,
            warnings: vec![],
        })
    }

    pub fn outputs(&self) -> usize {
        self.g_u.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.g_u.ncols()
    }

    pub fn disturbances(&self) -> usize {
        self.g_w.ncols()
    }

    /// Quasi-steady output for constant `u` and `w`.
    pub fn steady_output(&self, u: &Vector, w: &Vector) -> Vector {
        &self.g_u * u + &self.g_w * w
    }
}

impl Plant {
    pub fn new(a: Matrix, b: Matrix, b_w: Matrix, c: Matrix, d: Matrix, d_w: Matrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(invalid(format!("A must be square, got {}x{}", n, a.ncols())));
        }
        if n == 0 {
            return Err(invalid("plant must have at least one state"));
        }
        let m = b.ncols();
        let r = c.nrows();
        let n_w = b_w.ncols();
        let check = |name: &str, mat: &Matrix, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                Err(invalid(format!(
                    "{name} has shape {}x{}, expected {rows}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        check("B", &b, n, m)?;
        check("B_w", &b_w, n, n_w)?;
        check("C", &c, r, n)?;
        check("D", &d, r, m)?;
        check("D_w", &d_w, r, n_w)?;
        for (name, mat) in [("A", &a), ("B", &b), ("B_w", &b_w), ("C", &c), ("D", &d), ("D_w", &d_w)] {
            if !numerics::all_finite(mat) {
                return Err(invalid(format!("{name} contains non-finite entries")));
            }
        }
        let spec = numerics::max_eig_real(&a)?;
        if spec.max_real_part >= 0.0 {
            return Err(Error::StabilityAssumption {
                max_real_part: spec.max_real_part,
            });
        }
        Ok(Self {
            a,
            b,
            b_w,
            c,
            d,
            d_w,
            max_real_part: spec.max_real_part,
        })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn b_w(&self) -> &Matrix {
        &self.b_w
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }
    pub fn d_w(&self) -> &Matrix {
        &self.d_w
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn disturbances(&self) -> usize {
        self.b_w.ncols()
    }

    /// Largest real part of the spectrum of `A` (negative).
    pub fn stability_margin(&self) -> f64 {
        self.max_real_part
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0)
    }

    pub fn state_derivative(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.b_w * w
    }

    pub fn output(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.c * x + &self.d * u + &self.d_w * w
    }

    /// `C x + D_w w`, the output without the feedthrough of `u`.
    pub fn output_without_feedthrough(&self, x: &Vector, w: &Vector) -> Vector {
        &self.c * x + &self.d_w * w
    }

    pub fn dc_gains(&self) -> Result<DcGains> {
        let (a_inv, condition) = numerics::inverse_with_condition(&self.a)?;
        let c_ainv = &self.c * &a_inv;
        let g_u = -&c_ainv * &self.b + &self.d;
        let g_w = -&c_ainv * &self.b_w + &self.d_w;
        let mut warnings = vec![];
        if condition > DC_CONDITION_WARN {
            warnings.push(format!(
                "A is nearly singular (condition number {condition:.3e}); DC gains may be inaccurate"
            ));
        }
        Ok(DcGains {
            g_u,
            g_w,
            condition,
            warnings,
        })
    }

    /// Steady state `x = -A^-1 (B u + B_w w)` for constant inputs.
    pub fn equilibrium_state(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        let rhs = -(&self.b * u + &self.b_w * w);
        numerics::solve_square(&self.a, &rhs).ok_or_else(|| invalid("A is singular"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOptions {
    /// Distance kept between the spectrum of `A` and the imaginary axis.
    pub margin: f64,
    /// Standard deviation of the entries of the raw state matrix, times `sqrt(n)`.
    pub spectral_scale: f64,
    /// Resample until `G_u` has full rank `min(r, m)`.
    pub full_rank: bool,
    /// Rescale `C` so that the largest singular value of `G_u` equals this value.
    pub dc_gain_norm: Option<f64>,
    /// Keep `D = 0` so there is no direct feedthrough.
    pub strictly_proper: bool,
    pub max_attempts: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            margin: 0.2,
            spectral_scale: 1.0,
            full_rank: true,
            dc_gain_norm: None,
            strictly_proper: true,
            max_attempts: 100,
        }
    }
}

/// Seeded random stable plant. The raw state matrix is shifted left so its
/// spectral abscissa equals `-margin`.
pub fn generate_stable_plant(
    seed: u64,
    n: usize,
    m: usize,
    r: usize,
    n_w: usize,
    opts: &GeneratorOptions,
) -> Result<Plant> {
    if n < m.max(r) {
        return Err(invalid(format!("need n >= max(m, r), got n={n}, m={m}, r={r}")));
    }
    if !(opts.margin > 0.0) || !(opts.spectral_scale > 0.0) {
        return Err(invalid("margin and spectral_scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize, scale: f64| {
        Matrix::from_fn(rows, cols, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
    };
    for _ in 0..opts.max_attempts.max(1) {
        let raw = gauss(n, n, opts.spectral_scale / (n as f64).sqrt());
        let b = gauss(n, m, 1.0);
        let b_w = gauss(n, n_w, 1.0);
        let mut c = gauss(r, n, 1.0);
        let mut d = gauss(r, m, 1.0);
        let mut d_w = gauss(r, n_w, 1.0);
        if opts.strictly_proper {
            d.fill(0.0);
            d_w.fill(0.0);
        }
        let shift = numerics::max_eig_real(&raw)?.max_real_part + opts.margin;
        let a = raw - Matrix::identity(n, n) * shift;
        let plant = Plant::new(a.clone(), b.clone(), b_w.clone(), c.clone(), d.clone(), d_w.clone())?;
        let gains = plant.dc_gains()?;
        if !gains.warnings.is_empty() {
            continue;
        }
        if opts.full_rank && numerics::rank_default(&gains.g_u)? < m.min(r) {
            continue;
        }
        if let Some(target) = opts.dc_gain_norm {
            let s = numerics::norm2(&gains.g_u);
            if !(s > 0.0) {
                continue;
            }
            // Scaling C and D scales both gains; G_w follows the same factor.
            c *= target / s;
            d *= target / s;
            d_w *= target / s;
            return Plant::new(a, b, b_w, c, d, d_w);
        }
        return Ok(plant);
    }
    Err(Error::Generation(format!(
        "no admissible plant after {} attempts",
        opts.max_attempts
    )))
}
