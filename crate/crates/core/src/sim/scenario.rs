//! Registry of structural equation models used in the simulation studies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::crossfit::ConditionalMeans;
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::stats::{normal_cdf, normal_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// One-dimensional model with a nonlinear instrument effect.
    IntroSem,
    /// Two instruments, discontinuous nuisance functions.
    ForestSem,
    /// Linear model with confounding strength `chi`.
    StrongConfounding,
    /// `W` drives the hidden variable, noise scale `kappa_noise`.
    WhNoise,
    /// The hidden variable drives `W`, noise scale `kappa_noise`.
    HwNoise,
    /// Twenty correlated covariates; used for the raw-instrument comparison.
    NaiveInstrumentSem,
    /// Linear Gaussian model with closed-form conditional means.
    LinearGaussianOracle,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::IntroSem,
        ScenarioKind::ForestSem,
        ScenarioKind::StrongConfounding,
        ScenarioKind::WhNoise,
        ScenarioKind::HwNoise,
        ScenarioKind::NaiveInstrumentSem,
        ScenarioKind::LinearGaussianOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::IntroSem => "intro_sem",
            ScenarioKind::ForestSem => "forest_sem",
            ScenarioKind::StrongConfounding => "strong_confounding",
            ScenarioKind::WhNoise => "wh_noise",
            ScenarioKind::HwNoise => "hw_noise",
            ScenarioKind::NaiveInstrumentSem => "naive_instrument_sem",
            ScenarioKind::LinearGaussianOracle => "linear_gaussian_oracle",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown scenario '{s}'")))
    }
}

/// A scenario together with its coefficient and strength parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub beta0: f64,
    /// Confounding strength of `strong_confounding`.
    pub chi: f64,
    /// Noise scale of `wh_noise` and `hw_noise`.
    pub kappa_noise: f64,
    /// Coefficient of `A` in `X` for `linear_gaussian_oracle`.
    pub alpha_link: f64,
    /// `intro_sem` draws `W` uniformly on `[-w_scale, w_scale]`.
    pub w_scale: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        let beta0 = match kind {
            ScenarioKind::IntroSem | ScenarioKind::ForestSem | ScenarioKind::NaiveInstrumentSem => 1.0,
            ScenarioKind::StrongConfounding | ScenarioKind::WhNoise | ScenarioKind::HwNoise => 0.0,
            ScenarioKind::LinearGaussianOracle => 0.5,
        };
        let kappa_noise = match kind {
            ScenarioKind::WhNoise => 2.0,
            _ => 1.0,
        };
        Self {
            kind,
            beta0,
            chi: 15.0,
            kappa_noise,
            alpha_link: 1.0,
            w_scale: PI,
        }
    }

    pub fn with_beta0(mut self, beta0: f64) -> Self {
        self.beta0 = beta0;
        self
    }

    /// Whether the generator can supply the true conditional means given `W`.
    pub fn has_known_means(&self) -> bool {
        !matches!(self.kind, ScenarioKind::ForestSem | ScenarioKind::HwNoise)
    }

    /// `(q, d, v)` of generated datasets.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self.kind {
            ScenarioKind::ForestSem => (2, 1, 2),
            ScenarioKind::NaiveInstrumentSem => (1, 1, NAIVE_V),
            _ => (1, 1, 1),
        }
    }
}

/// Source of the exogenous noise; swapping it out exposes the deterministic
/// skeleton of each model.
pub trait NoiseSource {
    fn normal(&mut self) -> f64;
    /// Uniform on `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

/// Noise drawn from a random number generator.
pub struct RngNoise<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> NoiseSource for RngNoise<'_, R> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(self.0)
    }
    fn uniform(&mut self) -> f64 {
        self.0.random()
    }
}

/// Every normal draw is 0 and every uniform draw is 1/2 (the centre).
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self) -> f64 {
        0.0
    }
    fn uniform(&mut self) -> f64 {
        0.5
    }
}

/// A generated dataset with the latent confounder and, where available, the
/// true conditional means given `W`.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub hidden: DVector<f64>,
    pub means: Option<ConditionalMeans>,
}

const NAIVE_V: usize = 20;
const NAIVE_RHO: f64 = 0.7;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Lower Cholesky factor `L` of the Toeplitz matrix `ρ^{|i−j|}`.
fn toeplitz_cholesky(v: usize, rho: f64) -> DMatrix<f64> {
    let t = DMatrix::from_fn(v, v, |i, j| rho.powi(i.abs_diff(j) as i32));
    t.cholesky().expect("AR(1) Toeplitz matrix is positive definite").l()
}

/// `E|Z|` for `Z ~ N(μ, 1)`.
fn folded_normal_mean(mu: f64) -> f64 {
    mu * (1.0 - 2.0 * normal_cdf(-mu)) + 2.0 * normal_pdf(mu)
}

struct Rows {
    a: DMatrix<f64>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    y: DVector<f64>,
    h: DVector<f64>,
    means: Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)>,
}

impl Rows {
    fn new(n: usize, (q, d, v): (usize, usize, usize), with_means: bool) -> Self {
        Self {
            a: DMatrix::zeros(n, q),
            x: DMatrix::zeros(n, d),
            w: DMatrix::zeros(n, v),
            y: DVector::zeros(n),
            h: DVector::zeros(n),
            means: with_means.then(|| (DMatrix::zeros(n, q), DMatrix::zeros(n, d), DVector::zeros(n))),
        }
    }

    fn set_means(&mut self, i: usize, ma: f64, mx: f64, my: f64) {
        if let Some((a, x, y)) = self.means.as_mut() {
            a[(i, 0)] = ma;
            x[(i, 0)] = mx;
            y[i] = my;
        }
    }
}

/// Draws `n` observations from the scenario using the given noise source.
pub fn generate_with(spec: &ScenarioSpec, n: usize, noise: &mut dyn NoiseSource) -> Result<Simulated> {
    if n < 1 {
        return Err(invalid("N must be at least 1"));
    }
    let b0 = spec.beta0;
    let has_means = spec.has_known_means();
    let mut r = Rows::new(n, spec.dims(), has_means);
    let chol = (spec.kind == ScenarioKind::NaiveInstrumentSem).then(|| toeplitz_cholesky(NAIVE_V, NAIVE_RHO));

    for i in 0..n {
        match spec.kind {
            ScenarioKind::IntroSem => {
                let w = spec.w_scale * (2.0 * noise.uniform() - 1.0);
                let a = 3.0 * (2.0 * w).tanh() + noise.normal();
                let h = 2.0 * w.sin() + noise.normal();
                let x = -a.abs() - 2.0 * w.tanh() - h + noise.normal();
                let y = b0 * x + 0.5 * w * w - 3.0 * (0.25 * PI * h).cos() + noise.normal();
                let (ma, mh) = (3.0 * (2.0 * w).tanh(), 2.0 * w.sin());
                let mx = -folded_normal_mean(ma) - 2.0 * w.tanh() - mh;
                let c = 0.25 * PI;
                let my = b0 * mx + 0.5 * w * w - 3.0 * (c * mh).cos() * (-0.5 * c * c).exp();
                r.set_means(i, ma, mx, my);
                r.w[(i, 0)] = w;
                r.a[(i, 0)] = a;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::ForestSem => {
                let a1 = if noise.normal() <= 0.0 { 1.0 } else { 0.0 };
                let a2 = -4.0 * a1 + noise.normal();
                let w1 = 2.0 * a2 + noise.normal();
                let w2 = noise.normal();
                let ind = |c: bool| if c { 1.0 } else { 0.0 };
                let h = 2.0 * ind((PI * w1).sin() * w2.tanh() >= 0.0) + noise.normal();
                let x = 1.5 * a1 - 0.5 * a2 + h.tanh() - 2.0 * ind(w1 >= 0.0) * ind(w2 <= 0.0) + noise.normal();
                let y = b0 * x + ind(w2 <= 0.0) + (PI * h).sin() + noise.normal();
                r.a[(i, 0)] = a1;
                r.a[(i, 1)] = a2;
                r.w[(i, 0)] = w1;
                r.w[(i, 1)] = w2;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::StrongConfounding => {
                let a = noise.normal();
                let w = noise.normal();
                let h = noise.normal();
                let x = a + w + spec.chi * h + 0.25 * noise.normal();
                let y = b0 * x + w + h + 0.25 * noise.normal();
                r.set_means(i, 0.0, w, b0 * w + w);
                r.a[(i, 0)] = a;
                r.w[(i, 0)] = w;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::WhNoise => {
                let a = noise.normal();
                let w = noise.normal();
                let h = w + spec.kappa_noise * noise.normal();
                let x = 0.5 * a + 3.0 * (2.0 * w).tanh() + 1.5 * h + 0.25 * noise.normal();
                let y = b0 * x - w.tanh() + h + 0.25 * noise.normal();
                let mx = 3.0 * (2.0 * w).tanh() + 1.5 * w;
                r.set_means(i, 0.0, mx, b0 * mx - w.tanh() + w);
                r.a[(i, 0)] = a;
                r.w[(i, 0)] = w;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::HwNoise => {
                let h = noise.normal();
                let w = 2.0 * h + spec.kappa_noise * noise.normal();
                let a = (-0.5 * w).exp() + 0.5 * noise.normal();
                let x = -a - 0.1 * w.powi(3) - 0.2 * w * w + 0.4 * w + 7.0 / (1.0 + (-4.0 * h).exp())
                    + 0.25 * noise.normal();
                let y = b0 * x + 0.5 * w + 0.5 * h + noise.normal();
                r.a[(i, 0)] = a;
                r.w[(i, 0)] = w;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::NaiveInstrumentSem => {
                let l = chol.as_ref().expect("factor built for this scenario");
                let eps = DVector::from_fn(NAIVE_V, |_, _| noise.normal());
                let w = l * eps;
                let h = noise.normal();
                let ma = logistic(w[0]) + w[1] + w[2];
                let a = ma + noise.normal();
                let g = w[0] + 0.25 * logistic(w[2]);
                let x = 2.0 * a + g + h + noise.normal();
                let gy = logistic(w[0]) + 0.25 * w[2];
                let y = b0 * x + gy + h + noise.normal();
                let mx = 2.0 * ma + g;
                r.set_means(i, ma, mx, b0 * mx + gy);
                r.w.row_mut(i).copy_from(&w.transpose());
                r.a[(i, 0)] = a;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
            ScenarioKind::LinearGaussianOracle => {
                let w = noise.normal();
                let ma = 1.0 + w;
                let a = ma + noise.normal();
                let h = noise.normal();
                let x = spec.alpha_link * a + w + h + noise.normal();
                let y = b0 * x + w + h + noise.normal();
                let mx = spec.alpha_link * ma + w;
                r.set_means(i, ma, mx, b0 * mx + w);
                r.a[(i, 0)] = a;
                r.w[(i, 0)] = w;
                r.x[(i, 0)] = x;
                r.y[i] = y;
                r.h[i] = h;
            }
        }
    }

    let data = Dataset::new(r.a, r.x, r.w, r.y)?;
    let means = r.means.map(|(a, x, y)| ConditionalMeans { a, x, y });
    Ok(Simulated {
        data,
        hidden: r.h,
        means,
    })
}

/// Draws `n` observations, keeping the latent variable and true means.
pub fn simulate<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Result<Simulated> {
    generate_with(spec, n, &mut RngNoise(rng))
}

/// Draws `n` observations of the observed variables only.
pub fn generate<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    Ok(simulate(spec, n, rng)?.data)
}
