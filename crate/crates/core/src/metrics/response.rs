//! Response classification and agreement between response criteria.

use serde::{Deserialize, Serialize};

/// Responder iff `delta = post - pre` falls strictly below `threshold`
/// (0 by default: any improvement counts).
pub fn classify_response_with(delta: f64, threshold: f64) -> bool {
    delta < threshold
}

pub fn classify_response(delta: f64) -> bool {
    classify_response_with(delta, 0.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectResponse {
    pub subject_id: String,
    pub clinical_response: bool,
    pub vhi_response: bool,
    /// None when the subject lacks a SPARCC score at either timepoint.
    pub sparcc_response: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub subjects: Vec<SubjectResponse>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub subjects: usize,
    pub clinical_vs_vhi: usize,
    pub clinical_vs_sparcc: usize,
    pub vhi_vs_sparcc: usize,
    /// Subjects with a SPARCC response; the two SPARCC comparisons are
    /// out of this many rather than `subjects`.
    pub sparcc_scored: usize,
    pub clinical_responders: usize,
    pub vhi_responders: usize,
    pub sparcc_responders: usize,
}

/// Count subjects on whom each pair of criteria agrees. Subjects without
/// a SPARCC response only enter the clinical/V_HI comparison.
pub fn response_agreement(table: &ResponseTable) -> AgreementCounts {
    let mut c = AgreementCounts {
        subjects: table.subjects.len(),
        clinical_vs_vhi: 0,
        clinical_vs_sparcc: 0,
        vhi_vs_sparcc: 0,
        sparcc_scored: 0,
        clinical_responders: 0,
        vhi_responders: 0,
        sparcc_responders: 0,
    };
    for s in &table.subjects {
        c.clinical_vs_vhi += (s.clinical_response == s.vhi_response) as usize;
        c.clinical_responders += s.clinical_response as usize;
        c.vhi_responders += s.vhi_response as usize;
        if let Some(sparcc) = s.sparcc_response {
            c.sparcc_scored += 1;
            c.clinical_vs_sparcc += (s.clinical_response == sparcc) as usize;
            c.vhi_vs_sparcc += (s.vhi_response == sparcc) as usize;
            c.sparcc_responders += sparcc as usize;
        }
    }
    c
}
