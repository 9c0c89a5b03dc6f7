//! Survey scoring: mean squared error by question group, Group-3 accuracy
//! and expert questionnaire tallies.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranking::{Approach, Family};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no responses fall in group {0}")]
    EmptyGroup(Group),
    #[error("choice {0} is not 1, 2 or 3")]
    InvalidChoice(u8),
    #[error("response refers to unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("invalid expert response for `{question}`: {reason}")]
    InvalidExpertResponse { question: String, reason: &'static str },
}

/// Tie pattern of a question's three options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TieShape {
    Untied,
    #[serde(rename = "TOP2_TIED")]
    Top2Tied,
    AllTied,
}

impl TieShape {
    /// Shape of the first three tie groups. A tie between only the second
    /// and third options counts as untied.
    pub fn from_tie_groups(groups: &[u32]) -> Option<TieShape> {
        match groups {
            [a, b, c, ..] if a == b && b == c => Some(TieShape::AllTied),
            [a, b, _, ..] if a == b => Some(TieShape::Top2Tied),
            [_, _, _, ..] => Some(TieShape::Untied),
            _ => None,
        }
    }

    /// Value of choices 1, 2 and 3.
    pub fn values(self) -> [f64; 3] {
        match self {
            TieShape::Untied => [1.0, 0.5, 0.0],
            TieShape::Top2Tied => [1.0, 1.0, 0.5],
            TieShape::AllTied => [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// All questions.
    #[serde(rename = "group1")]
    G1,
    /// Questions that are not fully tied.
    #[serde(rename = "group2")]
    G2,
    /// Fully untied questions only.
    #[serde(rename = "group3")]
    G3,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::G1, Group::G2, Group::G3];

    pub fn contains(self, shape: TieShape) -> bool {
        match self {
            Group::G1 => true,
            Group::G2 => shape != TieShape::AllTied,
            Group::G3 => shape == TieShape::Untied,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Group::G1 => 1,
            Group::G2 => 2,
            Group::G3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Group> {
        match n {
            1 => Some(Group::G1),
            2 => Some(Group::G2),
            3 => Some(Group::G3),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    pub family: Family,
    pub approach: Approach,
    pub source: String,
    /// Top three alternatives in rank order.
    pub options: Vec<String>,
    pub tie_shape: TieShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub respondent: String,
    pub question: String,
    pub choice: u8,
    /// Unix seconds.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertResponse {
    pub question: String,
    pub would_select: bool,
    #[serde(default)]
    pub selected: Option<u8>,
    /// Option numbers from best to worst.
    pub ranking: [u8; 3],
}

impl ExpertResponse {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason| EvalError::InvalidExpertResponse {
            question: self.question.clone(),
            reason,
        };
        match (self.would_select, self.selected) {
            (true, None) => return Err(bad("selected is required when would_select is true")),
            (false, Some(_)) => return Err(bad("selected must be absent when would_select is false")),
            (_, Some(c)) if !(1..=3).contains(&c) => return Err(bad("selected must be 1, 2 or 3")),
            _ => {}
        }
        let mut r = self.ranking;
        r.sort_unstable();
        if r != [1, 2, 3] {
            return Err(bad("ranking must be a permutation of 1, 2, 3"));
        }
        Ok(())
    }
}

pub fn response_score(choice: u8, shape: TieShape) -> Result<f64, EvalError> {
    match choice {
        1..=3 => Ok(shape.values()[choice as usize - 1]),
        c => Err(EvalError::InvalidChoice(c)),
    }
}

fn index_questions(questions: &[SurveyQuestion]) -> HashMap<&str, &SurveyQuestion> {
    questions.iter().map(|q| (q.id.as_str(), q)).collect()
}

fn group_members<'a>(
    responses: &'a [SurveyResponse],
    questions: &[SurveyQuestion],
    pred: impl Fn(TieShape) -> bool,
) -> Result<Vec<(&'a SurveyResponse, TieShape)>, EvalError> {
    let index = index_questions(questions);
    let mut out = Vec::new();
    for r in responses {
        let q = index
            .get(r.question.as_str())
            .ok_or_else(|| EvalError::UnknownQuestion(r.question.clone()))?;
        if pred(q.tie_shape) {
            out.push((r, q.tie_shape));
        }
    }
    Ok(out)
}

/// `(1/n) Σ (Ŷ_i − Y_i)²` with `Y_i = 1`, over responses to questions in
/// `group`.
pub fn mse_by_group(responses: &[SurveyResponse], questions: &[SurveyQuestion], group: Group) -> Result<f64, EvalError> {
    const Y: f64 = 1.0;
    let members = group_members(responses, questions, |s| group.contains(s))?;
    if members.is_empty() {
        return Err(EvalError::EmptyGroup(group));
    }
    let mut sum = 0.0;
    for (r, shape) in &members {
        let y_hat = response_score(r.choice, *shape)?;
        sum += (y_hat - Y) * (y_hat - Y);
    }
    Ok(sum / members.len() as f64)
}

/// Share of Group-3 responses choosing option 1 or 2.
pub fn accuracy_group3(responses: &[SurveyResponse], questions: &[SurveyQuestion]) -> Result<f64, EvalError> {
    let members = group_members(responses, questions, |s| Group::G3.contains(s))?;
    if members.is_empty() {
        return Err(EvalError::EmptyGroup(Group::G3));
    }
    let mut hits = 0usize;
    for (r, _) in &members {
        match r.choice {
            1 | 2 => hits += 1,
            3 => {}
            c => return Err(EvalError::InvalidChoice(c)),
        }
    }
    Ok(hits as f64 / members.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertTally {
    pub questions: usize,
    pub acceptable: usize,
    pub acceptable_fraction: f64,
    /// How often each option was selected.
    pub selected: [usize; 3],
    /// How often each option was ranked first.
    pub ranked_first: [usize; 3],
}

/// Per-approach tally. Every approach has an entry, zeroed when it has no
/// responses.
pub fn expert_tally(
    responses: &[ExpertResponse],
    questions: &[SurveyQuestion],
) -> Result<BTreeMap<Approach, ExpertTally>, EvalError> {
    let index = index_questions(questions);
    let mut out: BTreeMap<Approach, ExpertTally> = [Approach::ProCom, Approach::PkBd, Approach::HthBd]
        .into_iter()
        .map(|a| (a, ExpertTally::default()))
        .collect();
    for r in responses {
        r.validate()?;
        let q = index
            .get(r.question.as_str())
            .ok_or_else(|| EvalError::UnknownQuestion(r.question.clone()))?;
        let t = out.entry(q.approach).or_default();
        t.questions += 1;
        if r.would_select {
            t.acceptable += 1;
        }
        if let Some(c) = r.selected {
            t.selected[c as usize - 1] += 1;
        }
        t.ranked_first[r.ranking[0] as usize - 1] += 1;
    }
    for t in out.values_mut() {
        if t.questions > 0 {
            t.acceptable_fraction = t.acceptable as f64 / t.questions as f64;
        }
    }
    Ok(out)
}
