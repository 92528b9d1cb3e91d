// Scratch calibration harness; not part of the deliverable surface.

use std::time::Instant;

use tdil::config::{EnvSelection, RewardFn, TrainConfig};
use tdil::env::{fig1_world, Env, GridWorld};
use tdil::rewards::TdilBackend;
use tdil::trainer::{
    blind_select, correlation_report, oracle_agreement, run_disc_training, run_training,
};

fn bfs_mean(env: &GridWorld) -> f64 {
    let n = env.num_states();
    (0..n).map(|s| env.shortest_path_len(s) as f64).sum::<f64>() / n as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("disc");

    match mode {
        "disc" => {
            let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
            let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(20000);
            let bc_cb: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);
            for (envname, sel) in [
                ("grid", EnvSelection::GridShipped),
                ("chain", EnvSelection::Chain(10)),
            ] {
                for alpha in [0.99, 0.9, 0.67, 0.5] {
                    for seed in [0u64, 1, 2, 3, 4] {
                        let t0 = Instant::now();
                        let mut cfg = TrainConfig {
                            env: sel.clone(),
                            total_env_steps: steps,
                            seed,
                            batch_contrastive: bc_cb,
                            batch_reversed: bc_cb,
                            ..TrainConfig::default()
                        };
                        cfg.disc.alpha = alpha;
                        cfg.disc.learning_rate = lr;
                        let (art, chain_env, grid_env);
                        let agreement = match &cfg.env {
                            EnvSelection::Chain(n) => {
                                chain_env = tdil::env::Chain::new(*n);
                                art = run_disc_training(&chain_env, &cfg).unwrap();
                                f64::NAN
                            }
                            _ => {
                                grid_env = fig1_world();
                                art = run_disc_training(&grid_env, &cfg).unwrap();
                                oracle_agreement(&art.discriminator, &grid_env, 0.5).unwrap()
                            }
                        };
                        let acc = &art.accuracy;
                        println!(
                            "{envname} alpha={alpha} lr={lr} steps={steps} nb={bc_cb} seed={seed}: pos={:?} con={:?} rev={:?} (n_rev={}) agree={agreement:.4} noise={:.3} [{:.1}s]",
                            acc.acc_positive, acc.acc_contrastive, acc.acc_reversed,
                            acc.n_reversed, art.contrastive_noise,
                            t0.elapsed().as_secs_f64()
                        );
                    }
                }
            }
        }
        "tdil" => {
            let env = fig1_world();
            let bar = 1.25 * bfs_mean(&env);
            println!("bfs mean = {:.3}, bar = {:.3}", bfs_mean(&env), bar);
            let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(25_000);
            for seed in 0..5u64 {
                let t0 = Instant::now();
                let cfg = TrainConfig {
                    total_env_steps: steps,
                    eval_interval: 500,
                    eval_episodes: 20,
                    seed,
                    ..TrainConfig::default()
                };
                let art = run_training(&cfg, None).unwrap();
                let conv = art
                    .metrics
                    .iter()
                    .find(|m| m.steps_per_episode <= bar)
                    .map(|m| m.env_steps as i64)
                    .unwrap_or(-1);
                let last = art.metrics.last().unwrap();
                let (rho, _) = correlation_report(&art.registry).unwrap();
                let blind = blind_select(&art.registry).unwrap();
                let oracle_gt = art
                    .registry
                    .iter()
                    .map(|r| r.gt_return)
                    .fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "tdil seed={seed}: conv@{conv} last(steps={:.2} succ={:.2} gt={:.2}) rho={rho:.3} blind_gt={:.2} oracle_gt={oracle_gt:.2} acc=({:.3},{:.3}) [{:.1}s]",
                    last.steps_per_episode,
                    last.success_rate,
                    last.gt_return,
                    blind.gt_return,
                    last.acc_positive,
                    last.acc_contrastive,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "irl" => {
            let env = fig1_world();
            let bar = 1.25 * bfs_mean(&env);
            for seed in 0..3u64 {
                let t0 = Instant::now();
                let mut cfg = TrainConfig {
                    total_env_steps: 60_000,
                    eval_interval: 500,
                    eval_episodes: 20,
                    seed,
                    ..TrainConfig::default()
                };
                cfg.reward.beta = 1.0;
                let art = run_training(&cfg, None).unwrap();
                let conv = art
                    .metrics
                    .iter()
                    .find(|m| m.steps_per_episode <= bar)
                    .map(|m| m.env_steps as i64)
                    .unwrap_or(-1);
                let last = art.metrics.last().unwrap();
                println!(
                    "irl seed={seed}: conv@{conv} last(steps={:.2} succ={:.2}) [{:.1}s]",
                    last.steps_per_episode,
                    last.success_rate,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "l2" => {
            for seed in 0..3u64 {
                let t0 = Instant::now();
                let cfg = TrainConfig {
                    reward_fn: RewardFn::L2,
                    total_env_steps: 40_000,
                    eval_interval: 2000,
                    eval_episodes: 20,
                    seed,
                    ..TrainConfig::default()
                };
                let art = run_training(&cfg, None).unwrap();
                let last = art.metrics.last().unwrap();
                // Bottom-left evaluation.
                let env = fig1_world().with_fixed_start(tdil::env::Cell::new(0, 7));
                let eval = tdil::trainer::evaluate(&art.agent, &env, 10, 50, 99);
                let trap: Vec<usize> = tdil::env::fig1_trap_cells()
                    .iter()
                    .map(|c| fig1_world().id_of(*c))
                    .collect();
                let entered = eval
                    .episodes
                    .iter()
                    .filter(|e| {
                        !e.success()
                            && e.trajectory
                                .transitions
                                .iter()
                                .any(|tr| trap.contains(&tr.s_next.id))
                    })
                    .count();
                println!(
                    "l2 seed={seed}: uniform succ={:.2}; bottom-left succ={:.2} entered_trap={}/10 [{:.1}s]",
                    last.success_rate,
                    eval.success_rate,
                    entered,
                    t0.elapsed().as_secs_f64()
                );
                println!("{}", art.agent.policy_arrows(&fig1_world()));
            }
        }
        "beta" => {
            let env = fig1_world();
            let bar = 1.25 * bfs_mean(&env);
            for beta in [0.1, 0.5, 0.9, 1.0] {
                let t0 = Instant::now();
                let mut cfg = TrainConfig {
                    total_env_steps: 40_000,
                    eval_interval: 500,
                    eval_episodes: 20,
                    seed: 11,
                    ..TrainConfig::default()
                };
                cfg.reward.beta = beta;
                if beta >= 1.0 {
                    cfg.reward.tdil_backend = TdilBackend::Oracle; // unused at beta=1
                }
                let art = run_training(&cfg, None).unwrap();
                let conv = art
                    .metrics
                    .iter()
                    .find(|m| m.steps_per_episode <= bar)
                    .map(|m| m.env_steps as i64)
                    .unwrap_or(-1);
                let last = art.metrics.last().unwrap();
                println!(
                    "beta={beta}: conv@{conv} last(steps={:.2} succ={:.2}) [{:.1}s]",
                    last.steps_per_episode,
                    last.success_rate,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "trace" => {
            // Accuracy trajectory of one disc-only grid run.
            let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
            let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
            let alpha: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.99);
            let lambda: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
            let env = fig1_world();
            for checkpoint in [10_000usize, 20_000, 25_000, 40_000] {
                let mut cfg = TrainConfig {
                    total_env_steps: checkpoint,
                    seed,
                    batch_contrastive: 32,
                    batch_reversed: 32,
                    ..TrainConfig::default()
                };
                cfg.disc.alpha = alpha;
                cfg.disc.learning_rate = lr;
                cfg.disc.lambda = lambda;
                let art = run_disc_training(&env, &cfg).unwrap();
                let agree = oracle_agreement(&art.discriminator, &env, 0.5).unwrap();
                println!(
                    "seed={seed} alpha={alpha} lr={lr} lambda={lambda} steps={checkpoint}: con={:?} agree={agree:.4}",
                    art.accuracy.acc_contrastive
                );
            }
        }
        "debug" => {
            let bc: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(25_000);
            let temp: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.05);
            let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);
            let mut cfg = TrainConfig {
                total_env_steps: steps,
                eval_interval: 500,
                eval_episodes: 20,
                seed,
                ent_temp: temp,
                ..TrainConfig::default()
            };
            cfg.bc_weight = bc;
            let art = run_training(&cfg, None).unwrap();
            let env = fig1_world();
            println!("bc_weight={bc} steps={steps}");
            let curve: Vec<String> = art
                .metrics
                .iter()
                .map(|m| format!("{}:{:.0}", m.env_steps / 1000, m.steps_per_episode))
                .collect();
            println!("steps curve: {}", curve.join(" "));
            let last = art.metrics.last().unwrap();
            println!(
                "last: steps={:.2} succ={:.2} raw={:.2} rel={:.3}",
                last.steps_per_episode, last.success_rate, last.raw_return, last.relative_return
            );
            println!("{}", art.agent.policy_arrows(&env));
            // Q rows on the support and nearby.
            for s in [7usize, 4, 1, 15, 23] {
                let q = art.agent.q_row(s);
                let pi = art.agent.policy(s);
                println!(
                    "s={s:2} Q=[{:7.2} {:7.2} {:7.2} {:7.2}] pi=[{:.2} {:.2} {:.2} {:.2}]",
                    q[0], q[1], q[2], q[3], pi[0], pi[1], pi[2], pi[3]
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
