//! Online federated learning environment: client arrivals, signal
//! realization, participation, a toy global model and the experiment sweeps.

mod heatmap;
mod population;
mod run;
mod toy;

pub use heatmap::{heatmap_sweep, GridRange, HeatCell, Heatmap, Surface};
pub use population::{ClientPopulation, Shift};
pub use run::{run_seed_batch, run_simulation, Policy, RoundRecord, SimMetrics, SimOutput, SimSetup};
pub use toy::{ToyConfig, ToyModel, ToyTask};

use rand::Rng;

use crate::mechanism::SignalScheme;
use crate::model::{CommPrior, CostModel};

/// Draw a posterior mean from the scheme's conditional row for `true_tau`.
///
/// Consumes exactly one uniform so paired runs stay aligned regardless of
/// the scheme.
pub fn realize_signal<R: Rng + ?Sized>(scheme: &SignalScheme, true_tau: f64, prior: &CommPrior, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let atom = prior
        .atom_index(true_tau)
        .unwrap_or_else(|| panic!("tau {true_tau} is not a prior atom"));
    let row = scheme.row(atom);
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return scheme.support[k].mu;
        }
    }
    // Rounding left a sliver above the last cumulative sum.
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
    scheme.support[last].mu
}

/// A client joins iff the reward covers its cost at the posterior mean.
#[inline]
pub fn client_decide(gamma: f64, mu: f64, theta: f64, cost: &CostModel) -> bool {
    gamma >= cost.eval(theta, mu)
}
