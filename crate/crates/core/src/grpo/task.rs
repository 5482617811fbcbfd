//! Toy environments for the policy trainer.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GrpoError, ToyEnv};
use crate::corpus::{CaseRecord, Verdict};
use crate::rubric::{total_reward, CompiledPatterns, PatternSet, RewardConfig, TokenOverlapScorer};

/// Shape of a generated reasoning trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceShape {
    pub tokens: usize,
    /// All tokens distinct, or one token repeated.
    pub distinct: bool,
}

impl TraceShape {
    fn render(&self) -> Option<String> {
        if self.tokens == 0 {
            return None;
        }
        let words: Vec<String> = (0..self.tokens)
            .map(|i| if self.distinct { format!("step{i}") } else { "again".to_owned() })
            .collect();
        Some(words.join(" "))
    }
}

/// One synthetic case. Slot order: statute set, charge, prison months,
/// fine amount, trace shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInput {
    pub id: String,
    pub statute_options: Vec<Vec<String>>,
    pub charge_options: Vec<String>,
    pub prison_options: Vec<u32>,
    pub fine_options: Vec<u32>,
    pub trace_options: Vec<TraceShape>,
    /// Index of the correct option in each slot.
    pub gold: Vec<usize>,
    pub case: CaseRecord,
}

impl TaskInput {
    pub fn slot_sizes(&self) -> Vec<usize> {
        vec![
            self.statute_options.len(),
            self.charge_options.len(),
            self.prison_options.len(),
            self.fine_options.len(),
            self.trace_options.len(),
        ]
    }

    /// Renders a joint choice in the tagged judgment grammar.
    pub fn render(&self, c: &[usize]) -> String {
        let mut out = String::new();
        if let Some(trace) = self.trace_options[c[4]].render() {
            out.push_str(&format!("<think>{trace}</think>\n"));
        }
        let laws: Vec<String> = self.statute_options[c[0]].iter().map(|s| format!("[LAW:{s}]")).collect();
        out.push_str(&format!("[REASONING] The conduct falls under {}.\n", laws.join(" ")));
        out.push_str(&format!(
            "[JUDGMENT] Guilty of [CHARGE:{}]. Sentenced to [PRISON:{}] months and a fine of [FINE:{}]. [VERDICT:conviction]",
            self.charge_options[c[1]], self.prison_options[c[2]], self.fine_options[c[3]]
        ));
        out
    }
}

/// Judgment-writing task whose reward is the rubric score of the rendered
/// text against the gold judgment. The gold choice renders to the gold text
/// exactly, so the optimum reward is 1.
#[derive(Debug, Clone)]
pub struct JudgmentTask {
    pub inputs: Vec<TaskInput>,
    pub reward_config: RewardConfig,
    patterns: CompiledPatterns,
    scorer: TokenOverlapScorer,
}

const CHARGES: [&str; 8] = [
    "theft", "fraud", "robbery", "embezzlement", "assault", "bribery", "smuggling", "extortion",
];

impl JudgmentTask {
    pub fn generate(n_inputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..n_inputs).map(|i| Self::input(i, &mut rng)).collect();
        Self::from_inputs(inputs, RewardConfig::default())
    }

    pub fn from_inputs(inputs: Vec<TaskInput>, reward_config: RewardConfig) -> Self {
        Self {
            inputs,
            reward_config,
            patterns: PatternSet::tagged().compile().expect("bundled patterns compile"),
            scorer: TokenOverlapScorer::default(),
        }
    }

    fn input(i: usize, rng: &mut ChaCha8Rng) -> TaskInput {
        let mut ids: Vec<String> = (0..40).map(|k| format!("S{k}")).collect();
        ids.shuffle(rng);
        let n_gold = rng.gen_range(2..=3);
        let gold_set: Vec<String> = ids[..n_gold].to_vec();
        let mut partial = gold_set[1..].to_vec();
        partial.push(ids[n_gold].clone());
        let disjoint = ids[n_gold + 1..n_gold + 3].to_vec();
        let mut superset = gold_set.clone();
        superset.push(ids[n_gold + 3].clone());
        let mut statute_options = vec![gold_set.clone(), partial, disjoint, superset];
        for o in &mut statute_options {
            o.sort();
        }

        let mut charges: Vec<&str> = CHARGES.to_vec();
        charges.shuffle(rng);
        let charge_options: Vec<String> = charges[..4].iter().map(|s| s.to_string()).collect();
        let mut prison_options = vec![6, 12, 24, 36];
        prison_options.shuffle(rng);
        let mut fine_options = vec![1000, 3000, 5000, 20000];
        fine_options.shuffle(rng);
        let mut trace_options = vec![
            TraceShape { tokens: 0, distinct: true },
            TraceShape { tokens: 20, distinct: true },
            TraceShape { tokens: 300, distinct: false },
            TraceShape { tokens: 300, distinct: true },
        ];
        trace_options.shuffle(rng);
        statute_options.shuffle(rng);

        let gold = vec![
            statute_options.iter().position(|o| {
                let mut g = gold_set.clone();
                g.sort();
                *o == g
            }).expect("gold set present"),
            rng.gen_range(0..4),
            rng.gen_range(0..4),
            rng.gen_range(0..4),
            trace_options
                .iter()
                .position(|t| t.tokens == 300 && t.distinct)
                .expect("optimal trace present"),
        ];
        let mut input = TaskInput {
            id: format!("toy-{i:03}"),
            statute_options,
            charge_options,
            prison_options,
            fine_options,
            trace_options,
            gold,
            case: CaseRecord {
                id: format!("toy-{i:03}"),
                facts: String::new(),
                gold_evidence_ids: BTreeSet::new(),
                gold_charges: BTreeSet::new(),
                gold_prison_months: None,
                gold_fine_amount: None,
                gold_verdict: Verdict::Conviction,
                gold_judgment_text: String::new(),
            },
        };
        let g = input.gold.clone();
        input.case.facts = format!("Synthetic facts for case {i}.");
        input.case.gold_evidence_ids = input.statute_options[g[0]].iter().cloned().collect();
        input.case.gold_charges = BTreeSet::from([input.charge_options[g[1]].clone()]);
        input.case.gold_prison_months = Some(input.prison_options[g[2]]);
        input.case.gold_fine_amount = Some(f64::from(input.fine_options[g[3]]));
        input.case.gold_judgment_text = input.render(&g);
        input
    }
}

impl ToyEnv for JudgmentTask {
    fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    fn input_id(&self, input: usize) -> String {
        self.inputs[input].id.clone()
    }

    fn slot_sizes(&self, input: usize) -> Vec<usize> {
        self.inputs[input].slot_sizes()
    }

    fn render(&self, input: usize, choices: &[usize]) -> String {
        self.inputs[input].render(choices)
    }

    fn reward(&self, input: usize, _choices: &[usize], text: &str) -> Result<f64, GrpoError> {
        total_reward(text, &self.inputs[input].case, &self.reward_config, &self.patterns, &self.scorer)
            .map(|b| b.total)
            .map_err(|e| GrpoError::Reward(e.to_string()))
    }

    fn optimum(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// One slot per input with a fixed reward per option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditEnv {
    pub rewards: Vec<Vec<f64>>,
}

impl ToyEnv for BanditEnv {
    fn n_inputs(&self) -> usize {
        self.rewards.len()
    }

    fn input_id(&self, input: usize) -> String {
        format!("arm-{input}")
    }

    fn slot_sizes(&self, input: usize) -> Vec<usize> {
        vec![self.rewards[input].len()]
    }

    fn render(&self, _input: usize, choices: &[usize]) -> String {
        format!("option {}", choices[0])
    }

    fn reward(&self, input: usize, choices: &[usize], _text: &str) -> Result<f64, GrpoError> {
        Ok(self.rewards[input][choices[0]])
    }

    fn optimum(&self) -> Option<f64> {
        let n = self.rewards.len().max(1) as f64;
        Some(self.rewards.iter().map(|r| r.iter().copied().fold(f64::MIN, f64::max)).sum::<f64>() / n)
    }
}
