//! Simulation scenarios and the Monte Carlo harness.

pub mod monte_carlo;
pub mod scenario;

pub use monte_carlo::{run_monte_carlo, run_with, Learner, MethodSummary, MonteCarloConfig, SimulationReport};
pub use scenario::{generate, generate_with, simulate, NoiseSource, RngNoise, ScenarioKind, ScenarioSpec, Simulated, ZeroNoise};
