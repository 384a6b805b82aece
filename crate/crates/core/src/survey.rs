//! Ranking-survey arithmetic: definitions, per-participant sessions,
//! ranking validation, the last-write-wins fold and the mean-rank report.
//!
//! A session shuffles all tasks together; the first half of the shuffled
//! order is asked under the first question and the second half under the
//! second, so across participants every source image collects answers on
//! both questions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::derive_seed;

pub const TASK_COUNT: usize = 20;
pub const TASKS_PER_QUESTION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    CartoonGan,
    Ganilla,
    Ours,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::CartoonGan, ModelId::Ganilla, ModelId::Ours];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::CartoonGan => "cartoongan",
            ModelId::Ganilla => "ganilla",
            ModelId::Ours => "ours",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionId {
    Aesthetic,
    Cartoon,
}

impl QuestionId {
    pub const ALL: [QuestionId; 2] = [QuestionId::Aesthetic, QuestionId::Cartoon];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionId::Aesthetic => "aesthetic",
            QuestionId::Cartoon => "cartoon",
        }
    }

    pub fn default_prompt(self) -> &'static str {
        match self {
            QuestionId::Aesthetic => "rank the following images according to aesthetic/visual appeal",
            QuestionId::Cartoon => {
                "rank the following images according to how much the image resembles a cartoon \
                 (i.e. illustrated photo or anime)"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskImage {
    pub model: ModelId,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyTask {
    pub id: String,
    pub source: String,
    pub images: [TaskImage; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDefinition {
    /// Asked in this order: the first over the first half of each
    /// session's tasks, the second over the rest.
    pub questions: [Question; 2],
    pub tasks: Vec<SurveyTask>,
    /// Salt for the opaque image ids handed to clients.
    #[serde(default)]
    pub id_salt: u64,
}

impl SurveyDefinition {
    pub fn default_questions() -> [Question; 2] {
        QuestionId::ALL.map(|id| Question {
            id,
            prompt: id.default_prompt().to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.questions[0].id == self.questions[1].id {
            return bad("the two questions must differ".into());
        }
        if self.tasks.len() != TASK_COUNT {
            return bad(format!("survey needs {TASK_COUNT} tasks, got {}", self.tasks.len()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.id.is_empty() || self.tasks[..i].iter().any(|o| o.id == t.id) {
                return bad(format!("task id `{}` empty or repeated", t.id));
            }
            let lower = t.id.to_lowercase();
            if ModelId::ALL.iter().any(|m| lower.contains(m.as_str())) {
                return bad(format!("task id `{}` reveals a model name", t.id));
            }
            let mut models: Vec<ModelId> = t.images.iter().map(|im| im.model).collect();
            models.sort();
            if models != ModelId::ALL {
                return bad(format!("task `{}` must show one image from each model", t.id));
            }
        }
        Ok(())
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == task_id)
    }

    /// Client-facing id of image `k` of task `task`: 16 hex digits that
    /// carry no model information.
    pub fn image_id(&self, task: usize, k: usize) -> String {
        format!("{:016x}", derive_seed(self.id_salt, (task * 3 + k) as u64))
    }

    /// `(task index, image index)` of a client-facing image id.
    pub fn resolve_image(&self, image_id: &str) -> Option<(usize, usize)> {
        (0..self.tasks.len())
            .flat_map(|t| (0..3).map(move |k| (t, k)))
            .find(|&(t, k)| self.image_id(t, k) == image_id)
    }

    pub fn prompt(&self, q: QuestionId) -> &str {
        &self.questions.iter().find(|x| x.id == q).expect("both questions present").prompt
    }
}

/// One participant's shuffled view of the survey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    /// Task indices in display order.
    pub task_order: Vec<usize>,
    /// Per task index: display slot `s` shows definition image `perm[s]`.
    pub image_perms: Vec<[usize; 3]>,
    pub created_at: u64,
}

/// Seeded session: a 128-bit participant token, a uniform shuffle of the
/// task order and of every task's three images.
pub fn new_session(def: &SurveyDefinition, seed: u64, created_at: u64) -> Result<Session> {
    def.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let token: u128 = rng.random();
    let mut task_order: Vec<usize> = (0..def.tasks.len()).collect();
    task_order.shuffle(&mut rng);
    let image_perms = (0..def.tasks.len())
        .map(|_| {
            let mut p = [0, 1, 2];
            p.shuffle(&mut rng);
            p
        })
        .collect();
    Ok(Session {
        participant_id: format!("{token:032x}"),
        task_order,
        image_perms,
        created_at,
    })
}

impl Session {
    pub fn validate(&self, def: &SurveyDefinition) -> Result<()> {
        let n = def.tasks.len();
        let mut seen = alloc::vec![false; n];
        for &t in &self.task_order {
            if t >= n || core::mem::replace(&mut seen[t], true) {
                return Err(Error::InvalidArgument("task order is not a permutation".into()));
            }
        }
        if self.task_order.len() != n || self.image_perms.len() != n {
            return Err(Error::InvalidArgument("session does not cover every task".into()));
        }
        for p in &self.image_perms {
            let mut s = *p;
            s.sort();
            if s != [0, 1, 2] {
                return Err(Error::InvalidArgument("image order is not a permutation".into()));
            }
        }
        Ok(())
    }

    /// Question asked for the task at display position `pos`.
    pub fn question_at(&self, def: &SurveyDefinition, pos: usize) -> QuestionId {
        let half = self.task_order.len() / 2;
        def.questions[usize::from(pos >= half)].id
    }

    pub fn position_of(&self, task: usize) -> Option<usize> {
        self.task_order.iter().position(|&t| t == task)
    }

    /// Client-facing image ids of `task` in display order.
    pub fn display_images(&self, def: &SurveyDefinition, task: usize) -> [String; 3] {
        self.image_perms[task].map(|k| def.image_id(task, k))
    }

    /// Models of `task` in display order.
    pub fn display_models(&self, def: &SurveyDefinition, task: usize) -> [ModelId; 3] {
        self.image_perms[task].map(|k| def.tasks[task].images[k].model)
    }
}

/// Why a submission was refused.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("ranks must be a permutation of 1, 2, 3")]
    NotBijective,
    #[error("submitted images do not match this session's task")]
    ImageMismatch,
}

/// Ranks `1..=3` keyed by model; a bijection by construction once built
/// through [`validate_ranks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rankings {
    pub cartoongan: u8,
    pub ganilla: u8,
    pub ours: u8,
}

impl Rankings {
    pub fn get(&self, m: ModelId) -> u8 {
        match m {
            ModelId::CartoonGan => self.cartoongan,
            ModelId::Ganilla => self.ganilla,
            ModelId::Ours => self.ours,
        }
    }

    pub fn from_array(r: [u8; 3]) -> Self {
        Self {
            cartoongan: r[0],
            ganilla: r[1],
            ours: r[2],
        }
    }

    pub fn is_bijective(&self) -> bool {
        validate_ranks(&[self.cartoongan, self.ganilla, self.ours]).is_ok()
    }
}

pub fn validate_ranks(ranks: &[u8]) -> core::result::Result<(), SubmitError> {
    let mut s = ranks.to_vec();
    s.sort();
    if s == [1, 2, 3] {
        Ok(())
    } else {
        Err(SubmitError::NotBijective)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub participant_id: String,
    pub task_id: String,
    pub question: QuestionId,
    pub rankings: Rankings,
    /// Models in the order the participant saw them.
    pub display_order: [ModelId; 3],
    pub submitted_at: u64,
}

/// Turns a client submission (`image id -> rank`) into a record. Image ids
/// must be exactly the three shown for `task_id` in this session.
pub fn resolve_submission(
    def: &SurveyDefinition,
    session: &Session,
    task_id: &str,
    ranks: &[(String, u8)],
    submitted_at: u64,
) -> core::result::Result<RankingRecord, SubmitError> {
    let task = def
        .task_index(task_id)
        .ok_or_else(|| SubmitError::UnknownTask(task_id.to_string()))?;
    let pos = session
        .position_of(task)
        .ok_or_else(|| SubmitError::UnknownTask(task_id.to_string()))?;
    let values: Vec<u8> = ranks.iter().map(|(_, r)| *r).collect();
    validate_ranks(&values)?;
    let shown = session.display_images(def, task);
    let mut by_model = [0u8; 3];
    let mut used = [false; 3];
    for (image, rank) in ranks {
        let slot = shown.iter().position(|s| s == image).ok_or(SubmitError::ImageMismatch)?;
        if core::mem::replace(&mut used[slot], true) {
            return Err(SubmitError::ImageMismatch);
        }
        let model = def.tasks[task].images[session.image_perms[task][slot]].model;
        by_model[model.index()] = *rank;
    }
    Ok(RankingRecord {
        participant_id: session.participant_id.clone(),
        task_id: task_id.to_string(),
        question: session.question_at(def, pos),
        rankings: Rankings::from_array(by_model),
        display_order: session.display_models(def, task),
        submitted_at,
    })
}

/// Last write wins per (participant, task), by position in `records`.
/// The result keeps the order of first submission.
pub fn effective_records(records: &[RankingRecord]) -> Vec<RankingRecord> {
    let mut slot: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut out: Vec<RankingRecord> = Vec::new();
    for r in records {
        match slot.get(&(r.participant_id.as_str(), r.task_id.as_str())) {
            Some(&i) => out[i] = r.clone(),
            None => {
                slot.insert((&r.participant_id, &r.task_id), out.len());
                out.push(r.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankTally {
    pub rank_sum: u64,
    pub count: u64,
}

impl RankTally {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.rank_sum as f64 / self.count as f64)
    }

    /// Mean to two decimals, halves rounded up, computed on the exact
    /// fraction.
    pub fn mean_2dp(&self) -> Option<String> {
        if self.count == 0 {
            return None;
        }
        let hundredths = (self.rank_sum * 200 + self.count) / (2 * self.count);
        Some(format!("{}.{:02}", hundredths / 100, hundredths % 100))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeanRankReport {
    /// `tallies[question][model]`, both in declaration order.
    pub tallies: [[RankTally; 3]; 2],
}

impl MeanRankReport {
    pub fn tally(&self, q: QuestionId, m: ModelId) -> RankTally {
        self.tallies[q as usize][m.index()]
    }

    pub fn mean(&self, q: QuestionId, m: ModelId) -> Option<f64> {
        self.tally(q, m).mean()
    }

    pub fn is_empty(&self) -> bool {
        self.tallies.iter().flatten().all(|t| t.count == 0)
    }

    /// Fixed-width table, one row per question, means to two decimals
    /// (`-` where a cell has no responses).
    pub fn render(&self) -> String {
        let mut s = format!("{:<10}", "question");
        for m in ModelId::ALL {
            s.push_str(&format!(" {:>10}", m.as_str()));
        }
        s.push('\n');
        for q in QuestionId::ALL {
            s.push_str(&format!("{:<10}", q.as_str()));
            for m in ModelId::ALL {
                let cell = self.tally(q, m).mean_2dp().unwrap_or_else(|| "-".into());
                s.push_str(&format!(" {cell:>10}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Reads a table in the [`MeanRankReport::render`] layout back into
/// `(question, model) -> displayed mean`.
pub fn parse_rendered(text: &str) -> Result<BTreeMap<(QuestionId, ModelId), f64>> {
    let bad = |m: &str| Error::InvalidArgument(format!("mean-rank table: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
    let models: Vec<ModelId> = header
        .iter()
        .skip(1)
        .map(|h| ModelId::ALL.into_iter().find(|m| m.as_str() == *h).ok_or_else(|| bad("unknown model")))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split_whitespace().collect();
        let q = QuestionId::ALL
            .into_iter()
            .find(|q| Some(&q.as_str()) == cells.first())
            .ok_or_else(|| bad("unknown question"))?;
        if cells.len() != models.len() + 1 {
            return Err(bad("row width"));
        }
        for (m, c) in models.iter().zip(&cells[1..]) {
            if *c != "-" {
                out.insert((q, *m), c.parse().map_err(|_| bad("bad number"))?);
            }
        }
    }
    Ok(out)
}

/// Per (question, model) mean over every record given; pass the output of
/// [`effective_records`] to apply last-write-wins first.
pub fn mean_rank_report(records: &[RankingRecord]) -> MeanRankReport {
    let mut r = MeanRankReport::default();
    for rec in records {
        for m in ModelId::ALL {
            let t = &mut r.tallies[rec.question as usize][m.index()];
            t.rank_sum += rec.rankings.get(m) as u64;
            t.count += 1;
        }
    }
    r
}
