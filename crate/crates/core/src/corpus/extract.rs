use serde::{Deserialize, Serialize};

use super::{CorpusError, ResearchPaper};
use crate::llm::{Gateway, GENERATION_TEMPERATURE};
use crate::text::HeadedSections;

pub const EXTRACTION_TEMPLATE_ID: &str = "problem-extraction/v1";

const HEADERS: [&str; 3] = ["Research Tasks", "Research Gaps", "Keywords"];

/// Research tasks, gaps and keywords extracted from a paper.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProblemFrame {
    pub tasks: Vec<String>,
    pub gaps: Vec<String>,
    pub keywords: Vec<String>,
}

pub fn extraction_prompt(paper: &ResearchPaper) -> String {
    format!(
        "You are helping a machine learning researcher analyse a paper before proposing new work.\n\
         Read the paper contents below and identify:\n\
         - the research tasks the paper undertakes,\n\
         - the research gaps it addresses or leaves open,\n\
         - the keywords that best describe its subject.\n\n\
         Title:\n{}\n\nAbstract:\n{}\n\nIntroduction:\n{}\n\nRelated Work:\n{}\n\n\
         Answer using exactly these three headers, each on its own line:\n\
         Research Tasks:\n<one task per line, as a '-' bullet>\n\
         Research Gaps:\n<one gap per line, as a '-' bullet>\n\
         Keywords:\n<comma-separated keywords>\n",
        paper.title, paper.abstract_text, paper.introduction, paper.related_work
    )
}

/// Parses a headed-sections extraction response.
///
/// Returns `Parse` when a header is missing and `EmptyExtraction` when the
/// keyword list comes out empty.
pub fn parse_problem_frame(response: &str) -> Result<ProblemFrame, CorpusError> {
    let sections = HeadedSections::parse(response, &HEADERS, false);
    let missing: Vec<&str> = HEADERS
        .iter()
        .enumerate()
        .filter(|(i, _)| !sections.found(*i))
        .map(|(_, h)| *h)
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::Parse(format!("missing headers: {}", missing.join(", "))));
    }
    let frame = ProblemFrame {
        tasks: dedupe_ci(list_items(sections.body(0).unwrap_or(""))),
        gaps: dedupe_ci(list_items(sections.body(1).unwrap_or(""))),
        keywords: dedupe_ci(keyword_items(sections.body(2).unwrap_or(""))),
    };
    if frame.keywords.is_empty() {
        return Err(CorpusError::EmptyExtraction);
    }
    Ok(frame)
}

/// Asks the LLM for the problem frame, re-asking once on a malformed reply.
pub fn extract_problem(paper: &ResearchPaper, llm: &Gateway) -> Result<ProblemFrame, CorpusError> {
    let prompt = extraction_prompt(paper);
    let first = llm.ask(&prompt, EXTRACTION_TEMPLATE_ID, GENERATION_TEMPERATURE)?;
    match parse_problem_frame(&first) {
        Err(CorpusError::Parse(why)) => {
            let retry = format!(
                "{prompt}\nYour previous answer could not be used ({why}). \
                 Reply again using the three headers exactly as specified.\n"
            );
            let second = llm.ask(&retry, EXTRACTION_TEMPLATE_ID, GENERATION_TEMPERATURE)?;
            parse_problem_frame(&second)
        }
        other => other,
    }
}

fn strip_bullet(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for marker in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return Some(rest);
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(r);
        }
    }
    None
}

/// Bulleted lines become items; without bullets each paragraph is one item.
fn list_items(body: &str) -> Vec<String> {
    let has_bullets = body.lines().any(|l| strip_bullet(l).is_some());
    let mut items: Vec<String> = Vec::new();
    if has_bullets {
        for line in body.lines() {
            if let Some(rest) = strip_bullet(line) {
                items.push(rest.trim().to_string());
            } else if !line.trim().is_empty() {
                match items.last_mut() {
                    Some(last) => {
                        last.push(' ');
                        last.push_str(line.trim());
                    }
                    None => items.push(line.trim().to_string()),
                }
            }
        }
    } else {
        let mut current: Vec<&str> = Vec::new();
        for line in body.lines().chain(std::iter::once("")) {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    items.push(current.join(" "));
                    current.clear();
                }
            } else {
                current.push(line.trim());
            }
        }
    }
    items.retain(|s| !s.trim().is_empty());
    items
}

fn keyword_items(body: &str) -> Vec<String> {
    body.lines()
        .flat_map(|line| {
            let line = strip_bullet(line).unwrap_or(line);
            line.split([',', ';']).map(str::to_string).collect::<Vec<_>>()
        })
        .map(|k| k.trim().trim_matches('"').trim().to_string())
        .filter(|k| !k.is_empty())
        .collect()
}

fn dedupe_ci(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .filter(|item| seen.insert(crate::text::normalize_title(item)))
        .collect()
}
