//! Machine-teaching quiz: a pre-test, a learning stage with counterfactual
//! feedback on wrong answers, and a post-test without visual aids.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scout_core::attribution::ScoreKind;
use scout_core::dataset::Split;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{mix_seed, Contrast, Engine, ExplainRequest, ExplanationRecord};

pub const PRE_ITEMS: usize = 20;
pub const LEARN_ITEMS: usize = 10;
pub const POST_ITEMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Learn,
    Post,
    Done,
}

impl Phase {
    fn len(self) -> usize {
        match self {
            Phase::Pre => PRE_ITEMS,
            Phase::Learn => LEARN_ITEMS,
            Phase::Post => POST_ITEMS,
            Phase::Done => 0,
        }
    }

    fn next(self) -> Phase {
        match self {
            Phase::Pre => Phase::Learn,
            Phase::Learn => Phase::Post,
            Phase::Post | Phase::Done => Phase::Done,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuizOptions {
    /// Seeds item selection; the engine seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub contrast: Contrast,
    #[serde(default)]
    pub score_kind: Option<ScoreKind>,
    #[serde(default)]
    pub area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub phase: Phase,
    pub image_id: u32,
    pub label: usize,
    /// `None` is "don't know".
    pub choice: Option<usize>,
    pub correct: bool,
}

#[derive(Debug, Clone)]
struct Session {
    phase: Phase,
    index: usize,
    items: [Vec<u32>; 3],
    answers: Vec<Answer>,
    options: QuizOptions,
}

impl Session {
    fn current_item(&self) -> Option<u32> {
        let k = match self.phase {
            Phase::Pre => 0,
            Phase::Learn => 1,
            Phase::Post => 2,
            Phase::Done => return None,
        };
        Some(self.items[k][self.index])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizItem {
    pub image_id: u32,
    pub choices: Vec<String>,
    pub allow_dont_know: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizState {
    pub token: String,
    pub phase: Phase,
    pub index: usize,
    pub phase_len: usize,
    pub item: Option<QuizItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub token: String,
    pub phase: Phase,
    pub index: usize,
    pub choice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub correct: bool,
    /// Shown during the learning stage only.
    pub true_class: Option<usize>,
    /// Highlights for a wrong learning answer: the true class against the
    /// chosen one.
    pub explanation: Option<ExplanationRecord>,
    pub state: QuizState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub items: usize,
    pub correct: usize,
    pub dont_know: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizSummary {
    pub token: String,
    pub pre: PhaseSummary,
    pub learn: PhaseSummary,
    pub post: PhaseSummary,
    pub answers: Vec<Answer>,
}

/// Quiz sessions keyed by token; each session is independent.
#[derive(Default)]
pub struct QuizStore {
    sessions: Mutex<HashMap<String, Session>>,
}

fn state_of(token: &str, s: &Session, engine: &Engine) -> QuizState {
    QuizState {
        token: token.to_string(),
        phase: s.phase,
        index: s.index,
        phase_len: s.phase.len(),
        item: s.current_item().map(|image_id| QuizItem {
            image_id,
            choices: engine.classes().to_vec(),
            allow_dont_know: s.phase == Phase::Pre,
        }),
    }
}

impl QuizStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Session>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn start(&self, engine: &Engine, options: QuizOptions) -> Result<QuizState> {
        if let Some(a) = options.area {
            if !(a > 0.0 && a <= 1.0) {
                return Err(scout_core::explainer::ExplainError::InvalidArea(a).into());
            }
        }
        let mut pool = engine.data.ids(Split::Test);
        if pool.is_empty() {
            return Err(Error::NotFound("no test images".into()));
        }
        let seed = options.seed.unwrap_or(engine.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x717a]));
        pool.shuffle(&mut rng);
        // cycles through the pool when it is smaller than the quiz
        let mut next = pool.iter().copied().cycle();
        let mut take = |n: usize| (&mut next).take(n).collect::<Vec<u32>>();
        let items = [take(PRE_ITEMS), take(LEARN_ITEMS), take(POST_ITEMS)];
        let session = Session {
            phase: Phase::Pre,
            index: 0,
            items,
            answers: Vec::new(),
            options,
        };
        let token = uuid::Uuid::new_v4().to_string();
        let state = state_of(&token, &session, engine);
        self.lock().insert(token, session);
        Ok(state)
    }

    pub fn state(&self, engine: &Engine, token: &str) -> Result<QuizState> {
        let sessions = self.lock();
        let s = sessions.get(token).ok_or_else(|| unknown(token))?;
        Ok(state_of(token, s, engine))
    }

    pub fn answer(&self, engine: &Engine, request: &AnswerRequest) -> Result<AnswerResponse> {
        // validate against a snapshot, explain outside the lock, then commit
        let (image_id, options) = {
            let sessions = self.lock();
            let s = sessions.get(&request.token).ok_or_else(|| unknown(&request.token))?;
            check_position(s, request)?;
            (s.current_item().expect("active phase"), s.options.clone())
        };
        if request.choice.is_none() && request.phase != Phase::Pre {
            return Err(Error::Usage("\"don't know\" is only allowed in the pre-test".into()));
        }
        if let Some(c) = request.choice {
            if c >= engine.classes().len() {
                return Err(Error::Usage(format!("class {c} out of range")));
            }
        }
        let label = engine.scene(image_id)?.annotation.label;
        let correct = request.choice == Some(label);
        let explanation = match (request.phase, request.choice) {
            (Phase::Learn, Some(chosen)) if !correct => {
                let req = ExplainRequest {
                    image_id,
                    counter_class: chosen,
                    score_kind: options.score_kind.unwrap_or(ScoreKind::Easiness),
                    area: options.area.unwrap_or(0.1),
                };
                Some(engine.explain_pair(&req, label, options.contrast)?.record)
            }
            _ => None,
        };

        let mut sessions = self.lock();
        let s = sessions.get_mut(&request.token).ok_or_else(|| unknown(&request.token))?;
        check_position(s, request)?;
        s.answers.push(Answer {
            phase: s.phase,
            image_id,
            label,
            choice: request.choice,
            correct,
        });
        s.index += 1;
        if s.index == s.phase.len() {
            s.phase = s.phase.next();
            s.index = 0;
        }
        Ok(AnswerResponse {
            correct,
            true_class: (request.phase == Phase::Learn).then_some(label),
            explanation,
            state: state_of(&request.token, s, engine),
        })
    }

    pub fn summary(&self, token: &str) -> Result<QuizSummary> {
        let sessions = self.lock();
        let s = sessions.get(token).ok_or_else(|| unknown(token))?;
        if s.phase != Phase::Done {
            return Err(Error::Conflict(format!("quiz is still in the {:?} phase", s.phase)));
        }
        let phase = |p: Phase| {
            let answers: Vec<&Answer> = s.answers.iter().filter(|a| a.phase == p).collect();
            let correct = answers.iter().filter(|a| a.correct).count();
            PhaseSummary {
                items: p.len(),
                correct,
                dont_know: answers.iter().filter(|a| a.choice.is_none()).count(),
                accuracy: correct as f64 / p.len() as f64,
            }
        };
        Ok(QuizSummary {
            token: token.to_string(),
            pre: phase(Phase::Pre),
            learn: phase(Phase::Learn),
            post: phase(Phase::Post),
            answers: s.answers.clone(),
        })
    }
}

fn unknown(token: &str) -> Error {
    Error::NotFound(format!("unknown quiz session {token}"))
}

fn check_position(s: &Session, request: &AnswerRequest) -> Result<()> {
    if s.phase == Phase::Done {
        return Err(Error::Conflict("quiz is finished".into()));
    }
    if (s.phase, s.index) != (request.phase, request.index) {
        return Err(Error::Conflict(format!(
            "expected an answer for {:?} item {}, got {:?} item {}",
            s.phase, s.index, request.phase, request.index
        )));
    }
    Ok(())
}
