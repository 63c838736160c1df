use super::{ExperimentPlan, Hypothesis, IdeaError, PlanStage};
use crate::text::{line_spans, HeadedSections};

fn two_headed<'a>(text: &'a str, headers: [&str; 2]) -> Result<(&'a str, &'a str), IdeaError> {
    let sections = HeadedSections::parse(text, &headers, true);
    let mut bodies = [""; 2];
    for (i, header) in headers.iter().enumerate() {
        match sections.body(i) {
            Some(body) if !body.is_empty() => bodies[i] = body,
            Some(_) => return Err(IdeaError::Parse(format!("\"{header}:\" section is empty"))),
            None => return Err(IdeaError::Parse(format!("missing \"{header}:\" header"))),
        }
    }
    Ok((bodies[0], bodies[1]))
}

/// Splits a response at its `Method:` and `Rationale:` headers.
pub fn parse_hypothesis(text: &str) -> Result<Hypothesis, IdeaError> {
    let (method, rationale) = two_headed(text, ["Method", "Rationale"])?;
    Ok(Hypothesis {
        method: method.to_string(),
        rationale: rationale.to_string(),
    })
}

/// Splits a response at `Experiment:` and `Rationale:` and breaks the
/// experiment block into its numbered stages.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, IdeaError> {
    let (experiment, rationale) = two_headed(text, ["Experiment", "Rationale"])?;
    let design = split_stages(experiment);
    if design.is_empty() {
        return Err(IdeaError::EmptyPlan);
    }
    Ok(ExperimentPlan {
        experiment: experiment.to_string(),
        design,
        rationale: rationale.to_string(),
        raw: text.to_string(),
    })
}

/// `(indent, number, byte offset of the stage text)` for a `N.` line.
fn stage_marker(line: &str) -> Option<(usize, u32, usize)> {
    let body = line.trim_start_matches([' ', '\t']);
    let indent = line.len() - body.len();
    let digits = body.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = body[digits..].strip_prefix('.')?;
    if !(rest.is_empty() || rest.starts_with([' ', '\t'])) {
        return None;
    }
    let number = body[..digits].parse().ok()?;
    Some((indent, number, indent + digits + 1))
}

/// Top-level numbered stages of a design block, ordered by number.
///
/// Top level means the smallest indentation among `N.` lines; deeper
/// numbered lines stay inside the enclosing stage text.
pub fn split_stages(block: &str) -> Vec<PlanStage> {
    let lines = line_spans(block);
    let markers: Vec<(usize, (usize, u32, usize))> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, &(s, e))| stage_marker(&block[s..e]).map(|m| (i, m)))
        .collect();
    let Some(top) = markers.iter().map(|(_, m)| m.0).min() else {
        return Vec::new();
    };
    let tops: Vec<(usize, u32, usize)> = markers
        .into_iter()
        .filter(|(_, m)| m.0 == top)
        .map(|(i, m)| (i, m.1, m.2))
        .collect();
    let mut stages: Vec<PlanStage> = tops
        .iter()
        .enumerate()
        .map(|(k, &(line_idx, number, offset))| {
            let start = lines[line_idx].0 + offset;
            let end = tops.get(k + 1).map(|n| lines[n.0].0).unwrap_or(block.len());
            PlanStage {
                number,
                text: block[start..end].trim().to_string(),
            }
        })
        .collect();
    stages.sort_by_key(|s| s.number);
    stages
}
