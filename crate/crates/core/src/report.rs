//! Metrics report over a survey's stored responses.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::{accuracy_group3, mse_by_group, EvalError, Group, SurveyQuestion, SurveyResponse};
use crate::survey::SurveyBundle;

/// A metric value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Value(f64),
    Error(String),
}

impl MetricValue {
    fn from_result(r: Result<f64, EvalError>) -> MetricValue {
        match r {
            Ok(v) => MetricValue::Value(v),
            Err(EvalError::EmptyGroup(g)) => MetricValue::Error(format!("EmptyGroup({g})")),
            Err(e) => MetricValue::Error(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Error(_) => None,
        }
    }

    fn text(&self) -> String {
        match self {
            MetricValue::Value(v) => format!("{v:.6}"),
            MetricValue::Error(e) => e.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachMetrics {
    pub responses: usize,
    pub mse: BTreeMap<Group, MetricValue>,
    pub acc: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub survey: String,
    pub responses: usize,
    /// Responses whose question is not in the survey.
    pub ignored: usize,
    /// Keyed by approach name, plus `all` for the pooled questions.
    pub metrics: BTreeMap<String, ApproachMetrics>,
    /// Choice counts for options 1, 2 and 3.
    pub histograms: BTreeMap<String, [usize; 3]>,
}

fn metrics_for(responses: &[SurveyResponse], questions: &[SurveyQuestion]) -> ApproachMetrics {
    ApproachMetrics {
        responses: responses.len(),
        mse: Group::ALL
            .iter()
            .map(|&g| (g, MetricValue::from_result(mse_by_group(responses, questions, g))))
            .collect(),
        acc: MetricValue::from_result(accuracy_group3(responses, questions)),
    }
}

pub fn export_report(responses: &[SurveyResponse], survey: &SurveyBundle) -> Report {
    let known: Vec<SurveyResponse> = responses
        .iter()
        .filter(|r| survey.question(&r.question).is_some() && (1..=3).contains(&r.choice))
        .cloned()
        .collect();
    let mut metrics = BTreeMap::new();
    for block in &survey.blocks {
        let rs: Vec<SurveyResponse> = known
            .iter()
            .filter(|r| block.questions.iter().any(|q| q.id == r.question))
            .cloned()
            .collect();
        metrics.insert(block.approach.as_str().to_string(), metrics_for(&rs, &block.questions));
    }
    metrics.insert("all".to_string(), metrics_for(&known, &survey.all_questions()));

    let mut histograms: BTreeMap<String, [usize; 3]> = survey.questions().map(|q| (q.id.clone(), [0; 3])).collect();
    for r in &known {
        if let Some(h) = histograms.get_mut(&r.question) {
            h[r.choice as usize - 1] += 1;
        }
    }
    Report {
        survey: survey.id.clone(),
        responses: known.len(),
        ignored: responses.len() - known.len(),
        metrics,
        histograms,
    }
}

impl Report {
    /// `(metric key, error)` for every metric that could not be computed.
    pub fn errors(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, m) in &self.metrics {
            for (g, v) in &m.mse {
                if let MetricValue::Error(e) = v {
                    out.push((format!("{name}.mse.group{g}"), e.clone()));
                }
            }
            if let MetricValue::Error(e) = &m.acc {
                out.push((format!("{name}.acc"), e.clone()));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "survey {}  responses {}  ignored {}", self.survey, self.responses, self.ignored);
        let _ = writeln!(s, "{:<8} {:>9} {:>16} {:>16} {:>16} {:>16}", "approach", "responses", "mse_group1", "mse_group2", "mse_group3", "acc_group3");
        for (name, m) in &self.metrics {
            let g = |g: Group| m.mse.get(&g).map(MetricValue::text).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:<8} {:>9} {:>16} {:>16} {:>16} {:>16}",
                name,
                m.responses,
                g(Group::G1),
                g(Group::G2),
                g(Group::G3),
                m.acc.text()
            );
        }
        let _ = writeln!(s, "\nquestion      c1    c2    c3");
        for (q, h) in &self.histograms {
            let _ = writeln!(s, "{:<12} {:>4}  {:>4}  {:>4}", q, h[0], h[1], h[2]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::TieShape;
    use crate::ranking::{Approach, Family};
    use crate::survey::SurveyBlock;

    fn survey() -> SurveyBundle {
        let q = |id: &str, approach, shape| SurveyQuestion {
            id: id.into(),
            family: Family::Rscf,
            approach,
            source: "1".into(),
            options: vec!["2".into(), "3".into(), "4".into()],
            tie_shape: shape,
        };
        SurveyBundle {
            id: "s".into(),
            seed: 0,
            family: Family::Rscf,
            metric: None,
            provenance: "t".into(),
            blocks: vec![
                SurveyBlock { approach: Approach::ProCom, questions: vec![q("a", Approach::ProCom, TieShape::Untied)] },
                SurveyBlock { approach: Approach::HthBd, questions: vec![q("b", Approach::HthBd, TieShape::AllTied)] },
            ],
        }
    }

    fn resp(q: &str, choice: u8) -> SurveyResponse {
        SurveyResponse { respondent: "r".into(), question: q.into(), choice, timestamp: 1, idempotency_key: None }
    }

    #[test]
    fn matches_direct_evaluation() {
        let s = survey();
        let rs = vec![resp("a", 1), resp("a", 2), resp("b", 3), resp("x", 1)];
        let r = export_report(&rs, &s);
        assert_eq!(r.ignored, 1);
        let all = &r.metrics["all"];
        let known = &rs[..3];
        assert_eq!(all.mse[&Group::G1].value(), mse_by_group(known, &s.all_questions(), Group::G1).ok());
        assert_eq!(all.acc.value(), Some(1.0));
        assert_eq!(r.metrics["hth_bd"].acc, MetricValue::Error("EmptyGroup(3)".into()));
        assert_eq!(r.histograms["a"], [1, 1, 0]);
        assert_eq!(r.to_json(), export_report(&rs, &s).to_json());
        assert!(r.to_text().contains("pro_com"));
    }

    #[test]
    fn no_responses_lists_every_group() {
        let r = export_report(&[], &survey());
        assert_eq!(r.errors().len(), 3 * 4);
    }
}
