use judgeflow_core::grpo::{
    grpo_step, surrogate_gradient, surrogate_objective, train_toy, BanditEnv, JudgmentTask, PolicyGroup,
    RolloutGroup, StepParams, ToyPolicy, ToySample, ToyTrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn toy_task_converges() {
    let task = JudgmentTask::generate(4, 7);
    let out = train_toy(&task, &ToyTrainConfig::default()).unwrap();
    assert_eq!(out.trace.len(), 200);
    let last = out.trace.last().unwrap();
    assert!(last.mean_reward >= 0.9, "final mean reward {}", last.mean_reward);
    assert!(out.trace[0].mean_reward < 0.8);
    // Deterministic under the seed.
    assert_eq!(train_toy(&task, &ToyTrainConfig::default()).unwrap(), out);
}

#[test]
fn zero_learning_rate_is_flat() {
    let task = JudgmentTask::generate(4, 7);
    let cfg = ToyTrainConfig { learning_rate: 0.0, iterations: 20, ..Default::default() };
    let out = train_toy(&task, &cfg).unwrap();
    let e = out.trace[0].expected_reward.unwrap();
    assert!(out.trace.iter().all(|t| t.expected_reward == Some(e) && t.kl == 0.0));
}

#[test]
fn huge_kl_beta_pins_policy_to_reference() {
    let env = BanditEnv { rewards: vec![vec![1.0, 0.0]] };
    let cfg = ToyTrainConfig { kl_beta: 1e3, ..Default::default() };
    let out = train_toy(&env, &cfg).unwrap();
    assert!(out.policy.max_tv_to_reference() <= 0.05);
    let free = train_toy(&env, &ToyTrainConfig { kl_beta: 0.0, ..Default::default() }).unwrap();
    assert!(free.policy.max_tv_to_reference() > 0.3);
}

fn random_instance(rng: &mut ChaCha8Rng) -> (ToyPolicy, Vec<PolicyGroup>, f64) {
    let inputs = rng.gen_range(1..=2);
    let shape: Vec<Vec<usize>> = (0..inputs).map(|_| (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=4)).collect()).collect();
    let logits = shape
        .iter()
        .map(|s| s.iter().map(|&n| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect())
        .collect();
    let reference = shape
        .iter()
        .map(|s| s.iter().map(|&n| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect())
        .collect();
    let policy = ToyPolicy { logits, reference };
    let groups = (0..inputs)
        .map(|input| {
            let g = rng.gen_range(2..=4);
            let samples: Vec<ToySample> = (0..g)
                .map(|_| {
                    let choices: Vec<usize> = shape[input].iter().map(|&n| rng.gen_range(0..n)).collect();
                    ToySample { log_prob: policy.log_prob(input, &choices), choices }
                })
                .collect();
            let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
            let rollout = RolloutGroup::new(format!("x{input}"), "t", vec![String::new(); g], rewards, 1e-6).unwrap();
            PolicyGroup { input, samples, rollout }
        })
        .collect();
    (policy, groups, rng.gen_range(0.0..1.0))
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for _ in 0..100 {
        let (policy, groups, beta) = random_instance(&mut rng);
        let grad = surrogate_gradient(&policy, &groups, beta, None).unwrap();
        for i in 0..policy.logits.len() {
            for s in 0..policy.logits[i].len() {
                for j in 0..policy.logits[i][s].len() {
                    let mut p = policy.clone();
                    p.logits[i][s][j] += h;
                    let mut m = policy.clone();
                    m.logits[i][s][j] -= h;
                    let fd = (surrogate_objective(&p, &groups, beta, None) - surrogate_objective(&m, &groups, beta, None))
                        / (2.0 * h);
                    let a = grad[i][s][j];
                    let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
                    assert!(rel < 1e-5, "analytic {a} vs fd {fd}");
                }
            }
        }
        // The step applies exactly lr * gradient.
        let mut stepped = policy.clone();
        grpo_step(&mut stepped, &groups, &StepParams::new(0.1, beta)).unwrap();
        for ((a, b), g) in stepped.logits.iter().flatten().flatten().zip(policy.logits.iter().flatten().flatten()).zip(grad.iter().flatten().flatten()) {
            assert!((a - (b + 0.1 * g)).abs() < 1e-12);
        }
    }
}
