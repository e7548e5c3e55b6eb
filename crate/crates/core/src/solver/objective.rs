//! The variational objective in quantile coordinates.
//!
//! Probability nodes `x_j = j / (m - 1)` carry trapezoid weights `w_j`. For a
//! non-decreasing `G` with gaps `s_j = (m - 1)(G_{j+1} - G_j)`:
//!
//! ```text
//! sum_j w_j C(H_j - G_j)                      transport to the source quantile H
//! + sum_j Psi(s_j) / (m - 1)                  congestion, Psi(s) = s F(1/s)
//! + sum_j w_j v(G_j)                          potential
//! + iota sum_j sum_k w_j w_k phi(G_j, G_k)    interaction, iota = 1/2
//! ```
//!
//! The social cost uses `Psi(s) = f(1/s)` and `iota = 1`. A proximal term
//! `sum_j w_j (G_j - A_j)^2 / (2 tau)` turns either into a minimizing
//! movement step.

use super::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Integrand {
    Equilibrium,
    Social,
}

pub(crate) struct QuantileProblem<'a> {
    pub scenario: &'a Scenario,
    pub integrand: Integrand,
    pub source: &'a [f64],
    pub weights: Vec<f64>,
    pub prox: Option<(f64, &'a [f64])>,
}

impl<'a> QuantileProblem<'a> {
    pub fn new(scenario: &'a Scenario, integrand: Integrand, source: &'a [f64]) -> Self {
        let weights = crate::measures::NodeLayout::Endpoint.weights(source.len());
        Self {
            scenario,
            integrand,
            source,
            weights,
            prox: None,
        }
    }

    pub fn with_prox(mut self, tau: f64, anchor: &'a [f64]) -> Self {
        self.prox = Some((tau, anchor));
        self
    }

    fn iota(&self) -> f64 {
        match self.integrand {
            Integrand::Equilibrium => 0.5,
            Integrand::Social => 1.0,
        }
    }

    fn psi(&self, s: f64) -> f64 {
        let c = &self.scenario.model.congestion;
        match self.integrand {
            Integrand::Equilibrium => c.quantile_energy(s),
            Integrand::Social => c.quantile_social(s),
        }
    }

    fn psi_prime(&self, s: f64) -> f64 {
        let c = &self.scenario.model.congestion;
        match self.integrand {
            Integrand::Equilibrium => c.quantile_energy_derivative(s),
            Integrand::Social => c.quantile_social_derivative(s),
        }
    }

    /// The objective; `+inf` when a gap closes or inverts.
    pub fn value(&self, g: &[f64]) -> f64 {
        self.terms(g).total()
    }

    pub fn terms(&self, g: &[f64]) -> Terms {
        let m = g.len();
        let scale = (m - 1) as f64;
        let sc = self.scenario;
        let w = &self.weights;
        let transport = g
            .iter()
            .zip(self.source)
            .zip(w)
            .map(|((gj, hj), wj)| wj * sc.cost.profile(hj - gj))
            .sum();
        let mut congestion = 0.0;
        for j in 0..m - 1 {
            congestion += self.psi(scale * (g[j + 1] - g[j]));
        }
        congestion /= scale;
        let potential = match &sc.model.potential {
            None => 0.0,
            Some(p) => g.iter().zip(w).map(|(gj, wj)| wj * p.value(*gj)).sum(),
        };
        let interaction = match &sc.model.kernel {
            None => 0.0,
            Some(k) => self.iota() * k.pair_energy(g, w),
        };
        let prox = match self.prox {
            None => 0.0,
            Some((tau, a)) => {
                g.iter()
                    .zip(a)
                    .zip(w)
                    .map(|((gj, aj), wj)| wj * (gj - aj) * (gj - aj))
                    .sum::<f64>()
                    / (2.0 * tau)
            }
        };
        Terms {
            transport,
            congestion,
            potential,
            interaction,
            prox,
        }
    }

    /// Exact gradient of [`QuantileProblem::value`] with respect to `G`.
    pub fn gradient(&self, g: &[f64]) -> Vec<f64> {
        let m = g.len();
        let scale = (m - 1) as f64;
        let sc = self.scenario;
        let w = &self.weights;
        let mut grad: Vec<f64> = g
            .iter()
            .zip(self.source)
            .zip(w)
            .map(|((gj, hj), wj)| -wj * sc.cost.profile_derivative(hj - gj))
            .collect();
        for j in 0..m - 1 {
            let d = self.psi_prime(scale * (g[j + 1] - g[j]));
            grad[j] -= d;
            grad[j + 1] += d;
        }
        if let Some(p) = &sc.model.potential {
            for j in 0..m {
                grad[j] += w[j] * p.derivative(g[j]);
            }
        }
        if let Some(k) = &sc.model.kernel {
            let (_, d1) = k.field(g, w, true);
            let c = 2.0 * self.iota();
            for j in 0..m {
                grad[j] += c * w[j] * d1[j];
            }
        }
        if let Some((tau, a)) = self.prox {
            for j in 0..m {
                grad[j] += w[j] * (g[j] - a[j]) / tau;
            }
        }
        grad
    }
}

/// Objective split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub transport: f64,
    pub congestion: f64,
    pub potential: f64,
    pub interaction: f64,
    pub prox: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        let t = self.transport + self.congestion + self.potential + self.interaction + self.prox;
        if t.is_nan() {
            f64::INFINITY
        } else {
            t
        }
    }
}
