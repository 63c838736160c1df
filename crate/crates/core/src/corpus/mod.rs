//! Paper ingestion and problem framing.
//!
//! A paper is sectioned mechanically into title, abstract, introduction and
//! related work. Research tasks, gaps and keywords are extracted by the LLM,
//! and the combination is rendered into the prompt context every later stage
//! builds on.

mod context;
mod extract;
mod literature;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use context::{PromptContext, DEFAULT_CONTEXT_BUDGET, TRUNCATION_MARKER};
pub use extract::{extract_problem, extraction_prompt, parse_problem_frame, ProblemFrame, EXTRACTION_TEMPLATE_ID};
pub use literature::{
    dedupe_and_rank, keyword_overlap, search_recent_works, HttpLiterature, LiteratureProvider, LiteratureQuery,
    LiteratureRecord, RelatedWork, StubLiterature, DEFAULT_RECENT_WORKS,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no title found in document")]
    MissingTitle,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("extraction returned no keywords")]
    EmptyExtraction,
    #[error("could not parse extraction response: {0}")]
    Parse(String),
    #[error(transparent)]
    Gateway(#[from] crate::llm::GatewayError),
    #[error("literature provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed literature response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchPaper {
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub introduction: String,
    pub related_work: String,
    #[serde(default)]
    pub extra_sections: BTreeMap<String, String>,
    pub source_id: String,
}

/// A parsed paper plus the warnings raised for absent sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPaper {
    pub paper: ResearchPaper,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Title,
    Abstract,
    Introduction,
    RelatedWork,
}

const KNOWN_SECTIONS: [(&str, Section); 4] = [
    ("Title", Section::Title),
    ("Abstract", Section::Abstract),
    ("Introduction", Section::Introduction),
    ("Related Work", Section::RelatedWork),
];

enum Target {
    Preamble,
    Known(Section),
    Extra(String),
}

fn classify_heading(line: &str) -> Option<(Target, usize)> {
    let stripped = line.trim_start();
    let markdown = stripped.starts_with('#');
    for (name, section) in KNOWN_SECTIONS {
        if let Some(offset) = crate::text::match_header(line, name, false) {
            return Some((Target::Known(section), offset));
        }
    }
    if markdown {
        let name = stripped.trim_start_matches('#').trim().trim_end_matches(':').trim();
        if !name.is_empty() {
            return Some((Target::Extra(name.to_string()), line.len()));
        }
    }
    None
}

fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("sha256:{}", &hex::encode(digest)[..16])
}

fn warn_missing(paper: &ResearchPaper) -> Vec<String> {
    let mut warnings = Vec::new();
    for (name, body) in [
        ("abstract", &paper.abstract_text),
        ("introduction", &paper.introduction),
        ("related work", &paper.related_work),
    ] {
        if body.trim().is_empty() {
            warnings.push(format!("missing section: {name}"));
        }
    }
    warnings
}

/// Sections a plain-text document into a [`ResearchPaper`].
///
/// Headings are lines naming one of the known sections (`Abstract`,
/// `Abstract:`, `## Related Work`); other markdown headings become extra
/// sections. Without an explicit `Title` heading the first non-empty line is
/// taken as the title.
pub fn parse_paper(document: &str, source_id: Option<&str>) -> Result<ParsedPaper, CorpusError> {
    let mut bodies: BTreeMap<&'static str, Vec<&str>> = BTreeMap::new();
    let mut extras: Vec<(String, Vec<&str>)> = Vec::new();
    let mut target = Target::Preamble;
    let mut preamble: Vec<&str> = Vec::new();
    let mut title_lines: Vec<&str> = Vec::new();

    for line in document.lines() {
        if let Some((next, offset)) = classify_heading(line) {
            if let Target::Extra(name) = &next {
                extras.push((name.clone(), Vec::new()));
            }
            target = next;
            let inline = line.get(offset..).unwrap_or("").trim();
            if !inline.is_empty() {
                push_line(&mut target, inline, &mut title_lines, &mut bodies, &mut extras, &mut preamble);
            }
            continue;
        }
        push_line(&mut target, line, &mut title_lines, &mut bodies, &mut extras, &mut preamble);
    }

    let explicit = title_lines.join(" ");
    let explicit = explicit.split_whitespace().collect::<Vec<_>>().join(" ");
    let title = if !explicit.is_empty() {
        Some(explicit)
    } else {
        preamble
            .iter()
            .map(|l| l.trim())
            .find(|l| !l.is_empty())
            .map(|first| first.trim_start_matches('#').trim().to_string())
    };
    let title = title.filter(|t| !t.is_empty()).ok_or(CorpusError::MissingTitle)?;

    let join = |key: &str| bodies.get(key).map(|ls| ls.join("\n").trim().to_string()).unwrap_or_default();
    let mut extra_sections = BTreeMap::new();
    for (name, lines) in extras {
        let body = lines.join("\n").trim().to_string();
        extra_sections
            .entry(name)
            .and_modify(|b: &mut String| {
                if !body.is_empty() {
                    if !b.is_empty() {
                        b.push_str("\n\n");
                    }
                    b.push_str(&body);
                }
            })
            .or_insert(body.clone());
    }
    let paper = ResearchPaper {
        title,
        abstract_text: join("abstract"),
        introduction: join("introduction"),
        related_work: join("related_work"),
        extra_sections,
        source_id: source_id.map(str::to_string).unwrap_or_else(|| content_id(document)),
    };
    let warnings = warn_missing(&paper);
    Ok(ParsedPaper { paper, warnings })
}

fn push_line<'a>(
    target: &mut Target,
    line: &'a str,
    title_lines: &mut Vec<&'a str>,
    bodies: &mut BTreeMap<&'static str, Vec<&'a str>>,
    extras: &mut Vec<(String, Vec<&'a str>)>,
    preamble: &mut Vec<&'a str>,
) {
    match target {
        Target::Preamble => preamble.push(line),
        Target::Known(Section::Title) => {
            if !line.trim().is_empty() {
                title_lines.push(line.trim());
            } else if !title_lines.is_empty() {
                // a blank line ends the title; further text is preamble
                *target = Target::Preamble;
            }
        }
        Target::Known(Section::Abstract) => bodies.entry("abstract").or_default().push(line),
        Target::Known(Section::Introduction) => bodies.entry("introduction").or_default().push(line),
        Target::Known(Section::RelatedWork) => bodies.entry("related_work").or_default().push(line),
        Target::Extra(_) => {
            if let Some((_, lines)) = extras.last_mut() {
                lines.push(line);
            }
        }
    }
}

/// Loads a paper from a fixture directory holding `title.txt`,
/// `abstract.txt`, `introduction.txt` and `related_work.txt`. Any other
/// `*.txt` file becomes an extra section named after its stem.
pub fn load_paper_dir(dir: &Path) -> Result<ParsedPaper, CorpusError> {
    let read = |name: &str| -> Result<Option<String>, CorpusError> {
        let path = dir.join(name);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s.trim().to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(CorpusError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    };
    if !dir.is_dir() {
        return Err(CorpusError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "paper directory not found"),
        });
    }
    let title = read("title.txt")?
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty())
        .ok_or(CorpusError::MissingTitle)?;
    let mut extra_sections = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in names {
        let Some(stem) = name.strip_suffix(".txt") else { continue };
        if matches!(stem, "title" | "abstract" | "introduction" | "related_work") {
            continue;
        }
        if let Some(body) = read(&name)? {
            extra_sections.insert(stem.to_string(), body);
        }
    }
    let source_id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .unwrap_or_else(|| content_id(&title));
    let paper = ResearchPaper {
        title,
        abstract_text: read("abstract.txt")?.unwrap_or_default(),
        introduction: read("introduction.txt")?.unwrap_or_default(),
        related_work: read("related_work.txt")?.unwrap_or_default(),
        extra_sections,
        source_id,
    };
    let warnings = warn_missing(&paper);
    Ok(ParsedPaper { paper, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn title_only_document_warns_three_times() {
        let parsed = parse_paper("A Lonely Title\n", None).unwrap();
        assert_eq!(parsed.paper.title, "A Lonely Title");
        assert!(parsed.paper.abstract_text.is_empty());
        assert!(parsed.paper.introduction.is_empty());
        assert!(parsed.paper.related_work.is_empty());
        assert_eq!(parsed.warnings.len(), 3);
    }

    #[test]
    fn empty_document_has_no_title() {
        assert!(matches!(parse_paper("", None), Err(CorpusError::MissingTitle)));
        assert!(matches!(parse_paper("\n  \n", None), Err(CorpusError::MissingTitle)));
    }

    #[test]
    fn sections_and_extras() {
        let doc = "Title\nMy Paper\n\nAbstract\nShort abstract.\n\nIntroduction:\nIntro line one.\nIntro line two.\n\n## Method\nSecret sauce.\n\nRelated Work\nOthers did things.\n";
        let parsed = parse_paper(doc, Some("p1")).unwrap();
        let p = parsed.paper;
        assert_eq!(p.title, "My Paper");
        assert_eq!(p.abstract_text, "Short abstract.");
        assert_eq!(p.introduction, "Intro line one.\nIntro line two.");
        assert_eq!(p.related_work, "Others did things.");
        assert_eq!(p.extra_sections.get("Method").map(String::as_str), Some("Secret sauce."));
        assert_eq!(p.source_id, "p1");
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn inline_headers() {
        let doc = "Title: Inline\nAbstract: One line abstract\n";
        let p = parse_paper(doc, None).unwrap().paper;
        assert_eq!(p.title, "Inline");
        assert_eq!(p.abstract_text, "One line abstract");
        assert!(p.source_id.starts_with("sha256:"));
    }

    #[test]
    fn directory_loader() {
        let dir = tempfile::tempdir().unwrap();
        let paper_dir = dir.path().join("demo-paper");
        std::fs::create_dir(&paper_dir).unwrap();
        std::fs::write(paper_dir.join("title.txt"), "Demo\n").unwrap();
        std::fs::write(paper_dir.join("abstract.txt"), "Abs").unwrap();
        std::fs::write(paper_dir.join("notes.txt"), "extra").unwrap();
        let parsed = load_paper_dir(&paper_dir).unwrap();
        assert_eq!(parsed.paper.title, "Demo");
        assert_eq!(parsed.paper.source_id, "demo-paper");
        assert_eq!(parsed.paper.extra_sections["notes"], "extra");
        assert_eq!(parsed.warnings, vec!["missing section: introduction", "missing section: related work"]);

        std::fs::remove_file(paper_dir.join("title.txt")).unwrap();
        assert!(matches!(load_paper_dir(&paper_dir), Err(CorpusError::MissingTitle)));
        assert!(matches!(load_paper_dir(&dir.path().join("nope")), Err(CorpusError::Io { .. })));
    }
}
