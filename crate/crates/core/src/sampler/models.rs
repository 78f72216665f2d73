//! Builtin models with closed-form gradients.
//!
//! Positive parameters are sampled on the log scale with the Jacobian term
//! included, so every sampler works on an unconstrained vector.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{DependencyEdge, ModelDescriptor, Slot, Support, VariableDecl, VariableKind};

/// An unnormalized log density on an unconstrained vector.
pub trait LogDensity {
    fn dim(&self) -> usize;

    fn log_density(&self, q: &[f64]) -> f64 {
        self.log_density_and_gradient(q).0
    }

    fn log_density_and_gradient(&self, q: &[f64]) -> (f64, Vec<f64>);
}

/// Classic eight-schools data (Rubin, 1981): observed effects and standard errors.
pub const SCHOOLS_Y: [f64; 8] = [28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0];
pub const SCHOOLS_SIGMA: [f64; 8] = [15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0];

const LINREG_X: [f64; 20] = [
    -1.9, -1.7, -1.5, -1.3, -1.1, -0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3,
    1.5, 1.7, 1.9,
];
const LINREG_Y: [f64; 20] = [
    1.0, -1.138, 0.509, 0.176, 0.394, 0.672, -0.07, 0.984, 0.827, 3.081, 1.693, 1.564, 1.759,
    1.726, 1.692, 2.185, 2.781, 2.581, 3.339, 2.92,
];

const FUNNEL_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    Linreg,
    EightSchoolsCentered,
    EightSchoolsNoncentered,
    NealFunnel,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 4] = [
        BuiltinModel::Linreg,
        BuiltinModel::EightSchoolsCentered,
        BuiltinModel::EightSchoolsNoncentered,
        BuiltinModel::NealFunnel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinModel::Linreg => "linreg",
            BuiltinModel::EightSchoolsCentered => "eight_schools_centered",
            BuiltinModel::EightSchoolsNoncentered => "eight_schools_noncentered",
            BuiltinModel::NealFunnel => "neal_funnel",
        }
    }

    fn file(self) -> String {
        format!("{}.model", self.name())
    }

    /// Model listing that the descriptor's source spans point into.
    pub fn source(self) -> &'static str {
        match self {
            BuiltinModel::Linreg => {
                "alpha ~ Normal(0, 10)\n\
                 beta ~ Normal(0, 10)\n\
                 sigma ~ HalfNormal(5)\n\
                 y ~ Normal(alpha + beta * x, sigma), observed\n"
            }
            BuiltinModel::EightSchoolsCentered => {
                "mu ~ Normal(0, 10)\n\
                 tau ~ HalfCauchy(5)\n\
                 theta ~ Normal(mu, tau), shape=(8,)\n\
                 y ~ Normal(theta, sigma), observed\n"
            }
            BuiltinModel::EightSchoolsNoncentered => {
                "mu ~ Normal(0, 10)\n\
                 tau ~ HalfCauchy(5)\n\
                 Z ~ Normal(0, 1), shape=(8,)\n\
                 theta = mu + tau * Z\n\
                 y ~ Normal(theta, sigma), observed\n"
            }
            BuiltinModel::NealFunnel => {
                "y ~ Normal(0, 3)\n\
                 sigma_x = exp(y / 2)\n\
                 x ~ Normal(0, sigma_x), shape=(9,)\n"
            }
        }
    }

    pub fn descriptor(self) -> ModelDescriptor {
        let f = self.file();
        let latent = |name: &str, dist: &str, line: u32| {
            VariableDecl::new(name, VariableKind::Latent)
                .distribution(dist)
                .span(&f, line, line)
        };
        let observed = |name: &str, line: u32, n: usize| {
            VariableDecl::new(name, VariableKind::Observed)
                .distribution("Normal")
                .shape([n])
                .span(&f, line, line)
        };
        let det = |name: &str, line: u32| {
            VariableDecl::new(name, VariableKind::Deterministic).span(&f, line, line)
        };
        match self {
            BuiltinModel::Linreg => ModelDescriptor::new(
                vec![
                    latent("alpha", "Normal", 1),
                    latent("beta", "Normal", 2),
                    latent("sigma", "HalfNormal", 3).support(Support::Positive),
                    observed("y", 4, LINREG_Y.len()),
                ],
                vec![
                    DependencyEdge::new("alpha", "y", Slot::Location),
                    DependencyEdge::new("beta", "y", Slot::Location),
                    DependencyEdge::new("sigma", "y", Slot::Scale),
                ],
            ),
            BuiltinModel::EightSchoolsCentered => ModelDescriptor::new(
                vec![
                    latent("mu", "Normal", 1),
                    latent("tau", "HalfCauchy", 2).support(Support::Positive),
                    latent("theta", "Normal", 3).shape([8]),
                    observed("y", 4, 8),
                ],
                vec![
                    DependencyEdge::new("mu", "theta", Slot::Location),
                    DependencyEdge::new("tau", "theta", Slot::Scale),
                    DependencyEdge::new("theta", "y", Slot::Location),
                ],
            ),
            BuiltinModel::EightSchoolsNoncentered => ModelDescriptor::new(
                vec![
                    latent("mu", "Normal", 1),
                    latent("tau", "HalfCauchy", 2).support(Support::Positive),
                    latent("Z", "Normal", 3).shape([8]),
                    det("theta", 4).shape([8]),
                    observed("y", 5, 8),
                ],
                vec![
                    DependencyEdge::new("mu", "theta", Slot::DeterministicInput),
                    DependencyEdge::new("tau", "theta", Slot::DeterministicInput),
                    DependencyEdge::new("Z", "theta", Slot::DeterministicInput),
                    DependencyEdge::new("theta", "y", Slot::Location),
                ],
            ),
            BuiltinModel::NealFunnel => ModelDescriptor::new(
                vec![
                    latent("y", "Normal", 1),
                    det("sigma_x", 2).support(Support::Positive),
                    latent("x", "Normal", 3).shape([FUNNEL_DIM]),
                ],
                vec![
                    DependencyEdge::new("y", "sigma_x", Slot::DeterministicInput),
                    DependencyEdge::new("sigma_x", "x", Slot::Scale),
                ],
            ),
        }
    }

    /// Maps an unconstrained point to the reported variables, keyed by name.
    pub fn constrain(self, q: &[f64]) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        let mut put = |name: &str, v: Vec<f64>| {
            out.insert(name.to_string(), v);
        };
        match self {
            BuiltinModel::Linreg => {
                put("alpha", vec![q[0]]);
                put("beta", vec![q[1]]);
                put("sigma", vec![q[2].exp()]);
            }
            BuiltinModel::EightSchoolsCentered => {
                put("mu", vec![q[0]]);
                put("tau", vec![q[1].exp()]);
                put("theta", q[2..10].to_vec());
            }
            BuiltinModel::EightSchoolsNoncentered => {
                let tau = q[1].exp();
                put("mu", vec![q[0]]);
                put("tau", vec![tau]);
                put("Z", q[2..10].to_vec());
                put("theta", q[2..10].iter().map(|z| q[0] + tau * z).collect());
            }
            BuiltinModel::NealFunnel => {
                put("y", vec![q[0]]);
                put("sigma_x", vec![(q[0] / 2.0).exp()]);
                put("x", q[1..].to_vec());
            }
        }
        out
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = BuiltinModel::ALL.iter().map(|m| m.name()).collect();
                format!("unknown model `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// `log HalfCauchy(exp(s); scale) + s` up to a constant, and its derivative in `s`.
fn half_cauchy_log(s: f64, scale: f64) -> (f64, f64) {
    let r = (s.exp() / scale).powi(2);
    (-(1.0 + r).ln() + s, -2.0 * r / (1.0 + r) + 1.0)
}

impl LogDensity for BuiltinModel {
    fn dim(&self) -> usize {
        match self {
            BuiltinModel::Linreg => 3,
            BuiltinModel::EightSchoolsCentered | BuiltinModel::EightSchoolsNoncentered => 10,
            BuiltinModel::NealFunnel => 1 + FUNNEL_DIM,
        }
    }

    fn log_density_and_gradient(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; q.len()];
        let lp = match self {
            BuiltinModel::Linreg => {
                let (alpha, beta, s) = (q[0], q[1], q[2]);
                let sigma2 = (2.0 * s).exp();
                let mut lp = -alpha * alpha / 200.0 - beta * beta / 200.0;
                // HalfNormal(5) on sigma plus the log-scale Jacobian.
                lp += -sigma2 / 50.0 + s;
                g[0] = -alpha / 100.0;
                g[1] = -beta / 100.0;
                g[2] = -sigma2 / 25.0 + 1.0;
                for (x, y) in LINREG_X.iter().zip(LINREG_Y) {
                    let r = y - alpha - beta * x;
                    lp += -s - r * r / (2.0 * sigma2);
                    g[0] += r / sigma2;
                    g[1] += r * x / sigma2;
                    g[2] += -1.0 + r * r / sigma2;
                }
                lp
            }
            BuiltinModel::EightSchoolsCentered => {
                let (mu, s) = (q[0], q[1]);
                let tau2 = (2.0 * s).exp();
                let (hc, dhc) = half_cauchy_log(s, 5.0);
                let mut lp = -mu * mu / 200.0 + hc;
                g[0] = -mu / 100.0;
                g[1] = dhc;
                for i in 0..8 {
                    let theta = q[2 + i];
                    let d = theta - mu;
                    let r = SCHOOLS_Y[i] - theta;
                    let v = SCHOOLS_SIGMA[i] * SCHOOLS_SIGMA[i];
                    lp += -s - d * d / (2.0 * tau2) - r * r / (2.0 * v);
                    g[0] += d / tau2;
                    g[1] += -1.0 + d * d / tau2;
                    g[2 + i] = -d / tau2 + r / v;
                }
                lp
            }
            BuiltinModel::EightSchoolsNoncentered => {
                let (mu, s) = (q[0], q[1]);
                let tau = s.exp();
                let (hc, dhc) = half_cauchy_log(s, 5.0);
                let mut lp = -mu * mu / 200.0 + hc;
                g[0] = -mu / 100.0;
                g[1] = dhc;
                for i in 0..8 {
                    let z = q[2 + i];
                    let r = SCHOOLS_Y[i] - mu - tau * z;
                    let v = SCHOOLS_SIGMA[i] * SCHOOLS_SIGMA[i];
                    lp += -z * z / 2.0 - r * r / (2.0 * v);
                    g[0] += r / v;
                    g[1] += r * tau * z / v;
                    g[2 + i] = -z + r * tau / v;
                }
                lp
            }
            BuiltinModel::NealFunnel => {
                let y = q[0];
                let inv = (-y).exp();
                let mut lp = -y * y / 18.0;
                g[0] = -y / 9.0;
                for (i, x) in q[1..].iter().enumerate() {
                    lp += -y / 2.0 - x * x * inv / 2.0;
                    g[0] += -0.5 + x * x * inv / 2.0;
                    g[1 + i] = -x * inv;
                }
                lp
            }
        };
        (lp, g)
    }
}

/// Isotropic Gaussian `-½ Σ (qᵢ/sᵢ)²`, exact under finite differences.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub scales: Vec<f64>,
}

impl LogDensity for Quadratic {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn log_density_and_gradient(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let mut lp = 0.0;
        let g = q
            .iter()
            .zip(&self.scales)
            .map(|(x, s)| {
                lp -= 0.5 * (x / s) * (x / s);
                -x / (s * s)
            })
            .collect();
        (lp, g)
    }
}
