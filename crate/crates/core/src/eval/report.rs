use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Rollout, RolloutConfig, SuitePair, HELD_OUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub pairs: usize,
    pub successes: usize,
    pub accuracy: f64,
    /// Accuracy when a rollout ends at its first rejected action.
    pub strict_accuracy: f64,
    pub failures: BTreeMap<String, usize>,
}

/// Lengths of one successful rollout and of the oracle plan for its pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub suite: String,
    pub goal_id: String,
    pub scene_seed: u64,
    pub model: usize,
    pub oracle: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub epsilon: f64,
    pub pairs: usize,
    pub closed_loop: f64,
    pub open_loop: f64,
    /// Closed-loop rollouts in which at least one drop happened.
    pub perturbed_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy_hash: String,
    pub catalog_hash: String,
    pub rollout: RolloutConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite_seed: Option<u64>,
    /// Teacher-forced accuracy on the corpus test split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_accuracy: Option<f64>,
    /// Success rate on the held-out suite.
    pub plan_exec_accuracy: f64,
    pub plan_exec_accuracy_strict: f64,
    pub suites: BTreeMap<String, SuiteResult>,
    pub plan_lengths: Vec<LengthPoint>,
    /// Failure reasons over every suite.
    pub error_histogram: BTreeMap<String, usize>,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<Robustness>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ablations: BTreeMap<String, f64>,
}

/// Median of `values`; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

impl EvalReport {
    pub fn new(rollout: &RolloutConfig) -> Self {
        EvalReport {
            policy_hash: String::new(),
            catalog_hash: String::new(),
            rollout: *rollout,
            suite_seed: None,
            action_accuracy: None,
            plan_exec_accuracy: 0.0,
            plan_exec_accuracy_strict: 0.0,
            suites: BTreeMap::new(),
            plan_lengths: Vec::new(),
            error_histogram: BTreeMap::new(),
            failures: 0,
            random_baseline: None,
            robustness: None,
            ablations: BTreeMap::new(),
        }
    }

    pub fn add_suite(&mut self, name: &str, pairs: &[SuitePair], rollouts: &[Rollout]) {
        let n = rollouts.len();
        let successes = rollouts.iter().filter(|r| r.success).count();
        let strict = rollouts.iter().filter(|r| r.strict_success()).count();
        let mut failures = BTreeMap::new();
        for f in rollouts.iter().filter_map(Rollout::failure) {
            *failures.entry(f.name().to_string()).or_insert(0) += 1;
            *self.error_histogram.entry(f.name().to_string()).or_insert(0) += 1;
            self.failures += 1;
        }
        for (p, r) in pairs.iter().zip(rollouts).filter(|(_, r)| r.success) {
            self.plan_lengths.push(LengthPoint {
                suite: name.to_string(),
                goal_id: p.goal_id.clone(),
                scene_seed: p.scene_seed,
                model: r.len(),
                oracle: p.oracle_plan.len(),
            });
        }
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        if name == HELD_OUT {
            self.plan_exec_accuracy = frac(successes);
            self.plan_exec_accuracy_strict = frac(strict);
        }
        self.suites.insert(name.to_string(), SuiteResult { pairs: n, successes, accuracy: frac(successes), strict_accuracy: frac(strict), failures });
    }

    /// Median model plan length over the median oracle plan length, on the
    /// successful rollouts of `suite`.
    pub fn length_ratio(&self, suite: &str) -> Option<f64> {
        let pts: Vec<&LengthPoint> = self.plan_lengths.iter().filter(|p| p.suite == suite).collect();
        let model = median(&pts.iter().map(|p| p.model as f64).collect::<Vec<_>>())?;
        let oracle = median(&pts.iter().map(|p| p.oracle as f64).collect::<Vec<_>>())?;
        Some(model / oracle)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |x: f64| format!("{:6.1}%", 100.0 * x);
        if let Some(a) = self.action_accuracy {
            let _ = writeln!(s, "action accuracy (test split)   {}", pct(a));
        }
        let _ = writeln!(s, "plan execution (held-out)      {}", pct(self.plan_exec_accuracy));
        let _ = writeln!(s, "  ending at first rejection    {}", pct(self.plan_exec_accuracy_strict));
        if let Some(r) = self.length_ratio(HELD_OUT) {
            let _ = writeln!(s, "median plan length vs oracle    {r:.2}x");
        }
        let _ = writeln!(s, "\n{:<12} {:>6} {:>9} {:>9}", "suite", "pairs", "success", "strict");
        for (name, r) in &self.suites {
            let _ = writeln!(s, "{:<12} {:>6} {:>9} {:>9}", name, r.pairs, pct(r.accuracy), pct(r.strict_accuracy));
        }
        if let Some(b) = self.random_baseline {
            let _ = writeln!(s, "\nrandom policy (held-out)       {}", pct(b));
        }
        if let Some(r) = &self.robustness {
            let _ = writeln!(s, "drop noise {:.2}: closed loop {}, open-loop oracle {}", r.epsilon, pct(r.closed_loop), pct(r.open_loop));
        }
        for (name, acc) in &self.ablations {
            let _ = writeln!(s, "ablation {name:<12} {}", pct(*acc));
        }
        let _ = writeln!(s, "\nfailures: {}", self.failures);
        for (k, v) in &self.error_histogram {
            let _ = writeln!(s, "  {k:<20} {v}");
        }
        s
    }

    /// `suite,goal,scene_seed,model,oracle` rows for a length scatter plot.
    pub fn lengths_csv(&self) -> String {
        let mut s = String::from("suite,goal,scene_seed,model,oracle\n");
        for p in &self.plan_lengths {
            let _ = writeln!(s, "{},{},{},{},{}", p.suite, p.goal_id, p.scene_seed, p.model, p.oracle);
        }
        s
    }

    /// `suite,reason,count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("suite,reason,count\n");
        for (name, r) in &self.suites {
            for (k, v) in &r.failures {
                let _ = writeln!(s, "{name},{k},{v}");
            }
        }
        s
    }
}
