use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::LrMode;

/// One optimizer step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: usize,
    pub level: String,
    pub lr: f64,
    pub loss: f64,
    pub cum_flops: f64,
    /// Milliseconds since the run (or resume) started. Ignored by equality.
    pub wall_ms: f64,
}

impl PartialEq for StepRecord {
    fn eq(&self, o: &Self) -> bool {
        self.step == o.step
            && self.phase == o.phase
            && self.level == o.level
            && self.lr.to_bits() == o.lr.to_bits()
            && self.loss.to_bits() == o.loss.to_bits()
            && self.cum_flops.to_bits() == o.cum_flops.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub step: u64,
    pub from: String,
    pub to: String,
    pub lr_mode: LrMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub level: String,
    pub rmse: f64,
    pub diverged: usize,
}

/// Line-delimited record as written to the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step(StepRecord),
    Switch(SwitchEvent),
    Eval(EvalRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub switches: Vec<SwitchEvent>,
    pub evals: Vec<EvalRecord>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn lrs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lr).collect()
    }

    pub fn final_flops(&self) -> f64 {
        self.steps.last().map(|s| s.cum_flops).unwrap_or(0.0)
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let k = n.min(self.steps.len()).max(1);
        self.steps.iter().rev().take(k).map(|s| s.loss).sum::<f64>() / k as f64
    }

    /// All records in step order, switches before the step they precede.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.steps.len() + self.switches.len() + self.evals.len());
        let (mut si, mut ei) = (0, 0);
        for s in &self.steps {
            while si < self.switches.len() && self.switches[si].step <= s.step {
                out.push(Record::Switch(self.switches[si].clone()));
                si += 1;
            }
            out.push(Record::Step(s.clone()));
            while ei < self.evals.len() && self.evals[ei].step <= s.step {
                out.push(Record::Eval(self.evals[ei].clone()));
                ei += 1;
            }
        }
        out.extend(self.switches[si..].iter().cloned().map(Record::Switch));
        out.extend(self.evals[ei..].iter().cloned().map(Record::Eval));
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        for r in self.records() {
            serde_json::to_writer(&mut buf, &r)?;
            buf.push(b'\n');
        }
        std::fs::File::create(path)?.write_all(&buf)
    }

    pub fn read_jsonl(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut out = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                Record::Step(s) => out.steps.push(s),
                Record::Switch(s) => out.switches.push(s),
                Record::Eval(e) => out.evals.push(e),
            }
        }
        Ok(out)
    }
}
