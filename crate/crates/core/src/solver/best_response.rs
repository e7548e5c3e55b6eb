use super::Scenario;
use crate::error::{Error, Result};
use crate::measures::DiscreteDensity;
use crate::transport::kantorovich_potential_1d;

/// One best response: the density `f^{-1}(M - phi^c - U - v)` with `M`
/// chosen so that it has unit mass.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub nu: DiscreteDensity,
    pub multiplier: f64,
}

/// Best response to the aggregate `nu`, where `phi^c` is the c-transform
/// of the Kantorovich potential from the source to `nu`.
pub fn best_response_map(scenario: &Scenario, nu: &DiscreteDensity) -> Result<BestResponse> {
    let congestion = &scenario.model().congestion;
    if !congestion.has_inverse() {
        return Err(Error::Precondition("congestion has no inverse marginal cost".into()));
    }
    let pair = kantorovich_potential_1d(scenario.mu(), nu, scenario.cost(), None)?;
    let field = scenario.model().interaction_field(nu);
    let pot = scenario.model().potential_values();
    let base: Vec<f64> = pair
        .phi_c
        .iter()
        .zip(field.iter().zip(&pot))
        .map(|(a, (b, c))| a + b + c)
        .collect();
    let dx = scenario.grid().spacing();
    let density = |m: f64| -> Vec<f64> {
        base.iter()
            .map(|b| congestion.f_inv(m - b).unwrap_or(f64::NAN))
            .collect()
    };
    let mass = |m: f64| -> f64 { density(m).iter().sum::<f64>() * dx };

    // M such that f^{-1}(M - base) integrates to one; mass is non-decreasing in M
    let target_level = congestion.f(1.0 / scenario.interval().length());
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let mut lo = target_level + mean;
    let mut hi = lo;
    let mut width = 1.0 + base.iter().fold(0.0_f64, |a, b| a.max((b - mean).abs()));
    for _ in 0..200 {
        if mass(lo) < 1.0 {
            break;
        }
        lo -= width;
        width *= 2.0;
    }
    width = 1.0;
    for _ in 0..200 {
        if mass(hi) > 1.0 {
            break;
        }
        hi += width;
        width *= 2.0;
    }
    let (mlo, mhi) = (mass(lo), mass(hi));
    if !(mlo < 1.0 && mhi > 1.0) || !mlo.is_finite() || !mhi.is_finite() {
        return Err(Error::MassEquationUnsolvable { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    let nu = DiscreteDensity::normalized(*scenario.grid(), density(m))?;
    Ok(BestResponse { nu, multiplier: m })
}

/// Damped best-response iteration `nu <- (1 - damping) nu + damping BR(nu)`,
/// `iterations` times.
pub fn best_response_iterate(
    scenario: &Scenario,
    nu0: &DiscreteDensity,
    damping: f64,
    iterations: usize,
) -> Result<DiscreteDensity> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid(format!("damping must lie in (0, 1], got {damping}")));
    }
    if nu0.grid() != scenario.grid() {
        return Err(Error::invalid("initial density is not on the scenario grid"));
    }
    let mut nu = nu0.clone();
    for _ in 0..iterations {
        let br = best_response_map(scenario, &nu)?;
        let mixed: Vec<f64> = nu
            .values()
            .iter()
            .zip(br.nu.values())
            .map(|(a, b)| (1.0 - damping) * a + damping * b)
            .collect();
        nu = DiscreteDensity::normalized(*scenario.grid(), mixed)?;
    }
    Ok(nu)
}
