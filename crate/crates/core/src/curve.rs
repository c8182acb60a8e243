use serde::{Deserialize, Serialize};

/// One episode of a learning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub context: usize,
    /// Discounted return.
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
}

/// Per-episode returns of one seeded run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn new(seed: u64) -> Self {
        LearningCurve {
            seed,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ret).collect()
    }

    pub fn push(&mut self, context: usize, ret: f64, steps: usize) {
        let episode = self.records.len();
        self.records.push(EpisodeRecord {
            episode,
            context,
            ret,
            steps,
        });
    }

    /// `self` followed by `other`, renumbering episodes.
    pub fn concat(&self, other: &LearningCurve) -> LearningCurve {
        let mut out = self.clone();
        for r in &other.records {
            out.push(r.context, r.ret, r.steps);
        }
        out
    }
}
