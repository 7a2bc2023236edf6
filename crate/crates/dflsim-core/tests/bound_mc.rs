//! Monte Carlo verification of the one-round convergence bound on a small
//! quadratic testbed: along a reference trajectory, the conditional
//! expectation of the next round's distance to the optimum must stay below
//! the bound evaluated from the previous round's state.

use dflsim_core::analysis::{
    default_tau_rho, norm_bound_from_rho, spectral_factor, one_round_bound, zeta_constants,
};
use dflsim_core::learning::{local_train, task_constants, ModelVector, QuadraticTask, Task, Weights};
use dflsim_core::linalg::{self, Mat};
use dflsim_core::netmodel::{ChannelParams, Link, NetworkGraph, Node, NodeKind};
use dflsim_core::protocol::{aggregate_raa, sample_successes, AggregationScheme};
use dflsim_core::routing::min_per_routes;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn lossy_triangle() -> NetworkGraph {
    let nodes: Vec<Node> = (0..3)
        .map(|id| Node { id, x_m: id as f64, y_m: 0.0, kind: NodeKind::Participant })
        .collect();
    let links = vec![
        Link { m: 0, n: 1, distance_m: 1.0, path_loss_db: 0.0, snr_linear: 1.0, bit_success: 0.995 },
        Link { m: 1, n: 2, distance_m: 1.0, path_loss_db: 0.0, snr_linear: 1.0, bit_success: 0.99 },
        Link { m: 0, n: 2, distance_m: 1.0, path_loss_db: 0.0, snr_linear: 1.0, bit_success: 0.985 },
    ];
    let channel = ChannelParams { bits_per_element: 1, ..ChannelParams::default() };
    NetworkGraph::from_parts(nodes, links, 1.0, channel).unwrap()
}

fn weighted_average(models: &[ModelVector], p: &Weights) -> Vec<f64> {
    let dim = models[0].dim();
    let mut acc = vec![0.0; dim];
    for (n, m) in models.iter().enumerate() {
        for (a, v) in acc.iter_mut().zip(m.params()) {
            *a += p.get(n) * v;
        }
    }
    acc
}

fn sum_w2(models: &[ModelVector]) -> f64 {
    let n = models.len();
    let mut acc = 0.0;
    for l in 0..models[0].num_segments() {
        let width = models[0].elements_in_segment(l);
        let mut w = Mat::zeros(n, width);
        for (row, m) in models.iter().enumerate() {
            for (col, v) in m.segment(l).iter().enumerate() {
                w[(row, col)] = *v;
            }
        }
        acc += linalg::spectral_norm_sq(&w);
    }
    acc
}

#[test]
fn one_round_bound_holds_along_a_trajectory() {
    let mut task_rng = ChaCha12Rng::seed_from_u64(1601);
    let quad =
        QuadraticTask::random(3, 6, 0.5, 1.0, 1.0, Weights::new(vec![0.5, 0.3, 0.2]).unwrap(), &mut task_rng)
            .unwrap();
    let task = Task::Quadratic(quad);
    let p = task.weights().clone();
    let consts = task_constants(&task).unwrap();
    let (eta, epochs, k) = (0.05, 1usize, 2usize);
    assert!(eta < 1.0 / (2.0 * consts.l_smooth));

    let graph = lossy_triangle();
    let plan = min_per_routes(&graph, k).unwrap();
    let rho = plan.e2e_matrix();
    let tau = default_tau_rho(&rho);
    let z = zeta_constants(consts.l_smooth, consts.mu, eta, epochs as u32, tau);
    let factor = spectral_factor(&z, &p, eta, consts.l_smooth);
    let objective = norm_bound_from_rho(&p, &rho);
    let wstar = task.optimum().unwrap();

    let train_all = |models: &[ModelVector]| -> Vec<ModelVector> {
        (0..3).map(|n| local_train(&task, n, &models[n], epochs, eta).unwrap()).collect()
    };

    // Reference trajectory state: the per-client aggregated models.
    let mut state: Vec<ModelVector> = vec![ModelVector::new(vec![1.5; 6], k); 3];
    let mut ref_rng = ChaCha12Rng::seed_from_u64(77);
    let branches = 10_000u32;

    for round in 0..20 {
        let locals = train_all(&state);
        let global = weighted_average(&locals, &p);
        let delta_prev = {
            let d = linalg::dist2(&global, &wstar);
            d * d
        };
        let w2 = sum_w2(&locals);
        let rhs = one_round_bound(&z, factor, delta_prev, consts.sigma_bar_sq, w2, objective);

        // Conditional expectation over this round's communication errors.
        let mut mean = 0.0;
        let mut mean_sq = 0.0;
        for b in 0..branches {
            let mut rng = ChaCha12Rng::seed_from_u64(90_000 + round as u64 * 100_000 + b as u64);
            let tensor = sample_successes(&plan, 6, &mut rng);
            let agg = aggregate_raa(&locals, &p, &tensor, AggregationScheme::CoeffNormalization);
            let next_locals = train_all(&agg.models);
            let next_global = weighted_average(&next_locals, &p);
            let d = linalg::dist2(&next_global, &wstar);
            mean += d * d;
            mean_sq += d * d * d * d;
        }
        mean /= branches as f64;
        let var = (mean_sq / branches as f64 - mean * mean).max(0.0);
        let se = (var / branches as f64).sqrt();
        assert!(
            mean <= rhs + 4.0 * se,
            "round {round}: E[delta] = {mean} exceeds bound {rhs} (se {se})"
        );

        // Advance the reference trajectory with its own draw.
        let tensor = sample_successes(&plan, 6, &mut ref_rng);
        let agg = aggregate_raa(&locals, &p, &tensor, AggregationScheme::CoeffNormalization);
        state = agg.models;
    }
}
