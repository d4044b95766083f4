//! Leave-one-labeler-out inter-rater reliability.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::{pearson, rmse, Stat};
use crate::corpus::{Corpus, Dimension};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerAgreement {
    pub labeler_id: String,
    pub n_sessions: usize,
    pub r: Option<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrSummary {
    pub r: Stat,
    pub rmse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrReport {
    pub dimension: Dimension,
    pub per_labeler: Vec<LabelerAgreement>,
    pub summary: IrrSummary,
    pub notes: Vec<String>,
}

/// Compare each labeler with the mean of the other labelers on the sessions
/// they share.
pub fn irr(corpus: &Corpus, dimension: Dimension) -> Result<IrrReport> {
    let labelers: BTreeSet<&str> = corpus
        .sessions
        .iter()
        .flat_map(|s| s.labels.iter())
        .filter(|l| l.dimension == dimension)
        .map(|l| l.labeler_id.as_str())
        .collect();
    if labelers.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "inter-rater reliability needs at least 2 labelers for {dimension}, found {}",
            labelers.len()
        )));
    }
    let mut per_labeler = Vec::new();
    let mut notes = Vec::new();
    for labeler in labelers {
        let mut own = Vec::new();
        let mut others = Vec::new();
        for s in &corpus.sessions {
            let Some(mine) = s.score_by(labeler, dimension) else {
                continue;
            };
            let rest: Vec<f64> = s
                .labels
                .iter()
                .filter(|l| l.dimension == dimension && l.labeler_id != labeler)
                .map(|l| l.score)
                .collect();
            if rest.is_empty() {
                continue;
            }
            own.push(mine);
            others.push(rest.iter().sum::<f64>() / rest.len() as f64);
        }
        if own.len() < 2 {
            notes.push(format!(
                "labeler {labeler} excluded: {} shared session(s)",
                own.len()
            ));
            continue;
        }
        let r = pearson(&own, &others)?;
        if r.is_none() {
            notes.push(format!("labeler {labeler}: correlation undefined (constant scores)"));
        }
        per_labeler.push(LabelerAgreement {
            labeler_id: labeler.to_string(),
            n_sessions: own.len(),
            r,
            rmse: rmse(&own, &others)?,
        });
    }
    if per_labeler.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no labeler shares at least 2 sessions with another for {dimension}"
        )));
    }
    let summary = IrrSummary {
        r: Stat::of(&per_labeler.iter().map(|l| l.r).collect::<Vec<_>>()),
        rmse: Stat::of(&per_labeler.iter().map(|l| Some(l.rmse)).collect::<Vec<_>>()),
    };
    Ok(IrrReport {
        dimension,
        per_labeler,
        summary,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_labels, Protocol, Session};

    fn corpus(labels: &str) -> Corpus {
        let table = parse_labels(labels.as_bytes()).unwrap();
        let sessions = table
            .keys()
            .map(|id| Session {
                session_id: id.clone(),
                teacher_id: "t".into(),
                utterances: vec![],
                labels: vec![],
            })
            .collect();
        let mut c = Corpus::new(Protocol::PreK, sessions).unwrap();
        c.attach_labels(&table);
        c
    }

    #[test]
    fn identical_labelers_agree_perfectly() {
        let mut rows = String::from("session_id,labeler_id,dimension,score\n");
        for (i, v) in [2, 3, 5, 4, 6].iter().enumerate() {
            rows += &format!("s{i},a,dim1,{v}\ns{i},b,dim1,{v}\n");
        }
        let rep = irr(&corpus(&rows), Dimension::Dim1).unwrap();
        assert_eq!(rep.per_labeler.len(), 2);
        assert!((rep.summary.r.mean.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rep.summary.rmse.mean, Some(0.0));
    }

    #[test]
    fn single_labeler_is_an_error() {
        let c = corpus("session_id,labeler_id,dimension,score\ns1,a,dim1,3\ns2,a,dim1,4\n");
        assert!(irr(&c, Dimension::Dim1).is_err());
    }

    #[test]
    fn sparse_labeler_is_excluded_with_note() {
        let c = corpus(
            "session_id,labeler_id,dimension,score\n\
             s1,a,dim1,3\ns1,b,dim1,4\ns2,a,dim1,5\ns2,b,dim1,5\ns3,a,dim1,2\ns3,b,dim1,1\n\
             s1,c,dim1,2\n",
        );
        let rep = irr(&c, Dimension::Dim1).unwrap();
        assert_eq!(rep.per_labeler.len(), 2);
        assert!(rep.notes.iter().any(|n| n.contains("labeler c")));
    }
}
