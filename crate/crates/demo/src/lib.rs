//! Browser bindings for three small interactive views: the clipped value
//! along a mixture path, the value shift of a greedy version, and the
//! uncertainty/safety trace of a tabular exploration run.
//!
//! Each view has a plain Rust function returning flat `f64` rows, which the
//! `wasm_bindgen` wrappers hand to JavaScript as a `Float64Array`.

use sweet_core::harness::config::{AlgorithmSpec, ExperimentConfig, InstanceSpec, Mode};
use sweet_core::harness::envgen::{random_kernel, random_utility};
use sweet_core::harness::experiment::run_seed;
use sweet_core::mdp::{greedy_version, mixture_to_markov, policy_value, MixturePolicy};
use sweet_core::rng::{random_policy, seeded};
use sweet_core::truncated::truncated_evaluate;
use sweet_core::Result;
use wasm_bindgen::prelude::*;

const S: usize = 4;
const A: usize = 3;
const H: usize = 4;

/// Rows `[γ, V̄(π^γ), γV̄(π) + (1−γ)V̄(π′)]` for `points` evenly spaced `γ`.
/// `load` scales a normalized utility; above 1 the clip becomes active.
pub fn mixture_profile_rows(seed: u64, load: f64, points: usize) -> Result<Vec<f64>> {
    let mut rng = seeded(seed);
    let mdp = random_kernel(S, A, H, &mut rng)?;
    let mut u = random_utility(&mdp, &mut rng)?;
    u.scale(load.max(0.0));
    let (p, q) = (random_policy(H, S, A, &mut rng), random_policy(H, S, A, &mut rng));
    let alpha = 1.0 + 1.0 / H as f64;
    let vp = truncated_evaluate(&mdp, &p, &u, alpha)?.value();
    let vq = truncated_evaluate(&mdp, &q, &u, alpha)?.value();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let gamma = i as f64 / (points.max(2) - 1) as f64;
        let mix = mixture_to_markov(&mdp, &MixturePolicy::pair(p.clone(), q.clone(), gamma)?)?;
        out.extend([gamma, truncated_evaluate(&mdp, &mix, &u, alpha)?.value(), gamma * vp + (1.0 - gamma) * vq]);
    }
    Ok(out)
}

/// Rows `[ε0, |V(G π) − V(π)|, ε0·t]` over `points` values of `ε0 ∈ [0, 1]`,
/// randomizing the first `t` steps.
pub fn greedy_deviation_rows(seed: u64, t: usize, points: usize) -> Result<Vec<f64>> {
    let mut rng = seeded(seed);
    let mdp = random_kernel(S, A, H, &mut rng)?;
    let u = random_utility(&mdp, &mut rng)?;
    let pi = random_policy(H, S, A, &mut rng);
    let base = policy_value(&mdp, &pi, &u)?;
    let steps: Vec<usize> = (0..t.min(H)).collect();
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let eps = i as f64 / (points.max(2) - 1) as f64;
        let g = greedy_version(&pi, eps, &steps)?;
        out.extend([eps, (policy_value(&mdp, &g, &u)? - base).abs(), eps * steps.len() as f64]);
    }
    Ok(out)
}

/// Rows `[episode, U⁽ⁿ⁾, τ − V_{P*,c}(executed)]` of a small tabular run.
/// `scale` multiplies the uncertainty functional (1 is the theoretical one).
pub fn exploration_rows(seed: u64, episodes: usize, scale: f64) -> Result<Vec<f64>> {
    let config = ExperimentConfig {
        version: 1,
        mode: Mode::Tabular,
        seeds: vec![seed],
        workers: 1,
        output: None,
        instance: InstanceSpec {
            states: S,
            actions: A,
            horizon: H,
            dim: 2,
            class_size: 4,
            generator_seed: seed,
            zero_cost: false,
        },
        algorithm: AlgorithmSpec {
            epsilon: 0.1,
            delta: 0.1,
            tau: 0.5,
            kappa: 0.1,
            episode_cap: Some(episodes.max(1)),
            uncertainty_scale: scale,
            beta3: 1.0,
        },
        planning: Vec::new(),
        check_utilities: 0,
        check_policies: 0,
    };
    config.validate()?;
    let records = run_seed(&config, seed)?.records;
    let mut out = Vec::with_capacity(3 * records.len());
    for r in records {
        out.extend([r.episode as f64, r.uncertainty, 0.5 - r.exact_cost.unwrap_or(f64::NAN)]);
    }
    Ok(out)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn mixture_profile(seed: u32, load: f64, points: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(mixture_profile_rows(seed.into(), load, points as usize))
}

#[wasm_bindgen]
pub fn greedy_deviation(seed: u32, t: u32, points: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(greedy_deviation_rows(seed.into(), t as usize, points as usize))
}

#[wasm_bindgen]
pub fn exploration_trace(seed: u32, episodes: u32, scale: f64) -> std::result::Result<Vec<f64>, JsError> {
    js(exploration_rows(seed.into(), episodes as usize, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_rows_are_concave_over_chord() {
        let rows = mixture_profile_rows(3, 2.5, 11).unwrap();
        assert_eq!(rows.len(), 33);
        for r in rows.chunks(3) {
            assert!(r[1] >= r[2] - 1e-9);
        }
    }

    #[test]
    fn greedy_rows_respect_bound() {
        let rows = greedy_deviation_rows(4, 2, 6).unwrap();
        for r in rows.chunks(3) {
            assert!(r[1] <= r[2] + 1e-9);
        }
    }

    #[test]
    fn exploration_rows_are_safe() {
        let rows = exploration_rows(5, 30, 1.0).unwrap();
        assert_eq!(rows.len(), 90);
        assert!(rows.chunks(3).all(|r| r[2] >= 0.0));
    }
}
