//! The fixed scenario bank shown to study participants.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resistkit_core::corpus::{read_jsonl, synthetic, Speaker, Turn};
use resistkit_core::taxonomy::Label;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PER_FINE_LABEL: usize = 2;
pub const COLLABORATIVE: usize = 4;
pub const BANK_SIZE: usize = PER_FINE_LABEL * 13 + COLLABORATIVE;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("scenario file: {0}")]
    Read(#[from] resistkit_core::corpus::CorpusError),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario {0} appears more than once")]
    DuplicateId(String),
    #[error("scenario {id}: {message}")]
    Malformed { id: String, message: String },
    #[error("bank composition: {0}")]
    Composition(String),
}

/// A dialogue snippet ending in the client turn the participant answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    /// Context up to and including the counselor turn the client answers.
    pub history: Vec<Turn>,
    pub response: String,
    pub gold: Label,
    pub rationale: String,
}

/// What a participant sees: no gold label, no gold rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioView {
    pub scenario_id: String,
    pub turns: Vec<Turn>,
}

impl Scenario {
    pub fn view(&self) -> ScenarioView {
        let mut turns = self.history.clone();
        turns.push(Turn { speaker: Speaker::Client, text: self.response.clone() });
        ScenarioView { scenario_id: self.scenario_id.clone(), turns }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBank {
    scenarios: Vec<Scenario>,
}

impl ScenarioBank {
    /// Checks the 2-per-fine-label plus 4-collaborative composition.
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self, BankError> {
        let mut seen = HashSet::new();
        let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
        for s in &scenarios {
            if !seen.insert(s.scenario_id.clone()) {
                return Err(BankError::DuplicateId(s.scenario_id.clone()));
            }
            let malformed = |message: &str| BankError::Malformed { id: s.scenario_id.clone(), message: message.into() };
            if s.scenario_id.trim().is_empty() {
                return Err(malformed("empty scenario_id"));
            }
            if s.history.last().map(|t| t.speaker) != Some(Speaker::Counselor) {
                return Err(malformed("history must end with a counselor turn"));
            }
            if s.response.trim().is_empty() {
                return Err(malformed("empty client response"));
            }
            if s.gold == Label::Resistance {
                return Err(malformed("gold must be a fine label or Collaboration"));
            }
            *counts.entry(s.gold).or_default() += 1;
        }
        for l in Label::FINE {
            let n = counts.get(&l).copied().unwrap_or(0);
            if n != PER_FINE_LABEL {
                return Err(BankError::Composition(format!("{} has {n} scenarios, expected {PER_FINE_LABEL}", l.name())));
            }
        }
        let collab = counts.get(&Label::Collaboration).copied().unwrap_or(0);
        if collab != COLLABORATIVE {
            return Err(BankError::Composition(format!("{collab} collaborative scenarios, expected {COLLABORATIVE}")));
        }
        debug_assert_eq!(scenarios.len(), BANK_SIZE);
        Ok(ScenarioBank { scenarios })
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self, BankError> {
        let rows: Vec<(usize, Scenario)> = read_jsonl(source)?;
        Self::new(rows.into_iter().map(|(_, s)| s).collect())
    }

    pub fn load_path(path: &Path) -> Result<Self, BankError> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// A bank built from the synthetic corpus phrase lists.
    pub fn synthetic() -> Self {
        let mut scenarios = Vec::new();
        let lines = synthetic::COUNSELOR_LINES;
        for (i, label) in Label::FINE.into_iter().enumerate() {
            for (j, text) in synthetic::client_lines(label).iter().take(PER_FINE_LABEL).enumerate() {
                scenarios.push(Scenario {
                    scenario_id: format!("sc{:02}", scenarios.len() + 1),
                    history: vec![
                        Turn { speaker: Speaker::Client, text: "Things have been hard at home lately.".into() },
                        Turn { speaker: Speaker::Counselor, text: lines[(i + j) % lines.len()].into() },
                    ],
                    response: text.to_string(),
                    gold: label,
                    rationale: format!("The client's reply shows {}: {}", label.name(), label.definition()),
                });
            }
        }
        let mut collaborative: Vec<&str> = synthetic::client_lines(Label::Collaboration).to_vec();
        collaborative.push("Okay, I will write that down and try it tonight.");
        for (j, text) in collaborative.into_iter().enumerate() {
            scenarios.push(Scenario {
                scenario_id: format!("sc{:02}", scenarios.len() + 1),
                history: vec![
                    Turn { speaker: Speaker::Client, text: "I argued with my partner again.".into() },
                    Turn { speaker: Speaker::Counselor, text: lines[j % lines.len()].into() },
                ],
                response: text.to_string(),
                gold: Label::Collaboration,
                rationale: "The client engages with the counselor's suggestion.".into(),
            });
        }
        ScenarioBank::new(scenarios).expect("synthetic bank composition")
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn get(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.scenario_id == id)
    }

    /// Presentation order for a participant, seeded by the participant id.
    pub fn order_for(&self, participant_id: &str) -> Vec<&Scenario> {
        let digest = Sha256::digest(participant_id.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut order: Vec<&Scenario> = self.scenarios.iter().collect();
        order.shuffle(&mut ChaCha8Rng::from_seed(seed));
        order
    }
}
