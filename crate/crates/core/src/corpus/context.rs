use serde::{Deserialize, Serialize};

use super::{ProblemFrame, ResearchPaper};

/// Default character budget for a rendered context.
pub const DEFAULT_CONTEXT_BUDGET: usize = 24_000;
pub const TRUNCATION_MARKER: &str = "\n[... truncated]";

fn default_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET
}

/// Paper contents plus the extracted problem frame, rendered in a fixed
/// order: paper sections, tasks, gaps, keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub paper: ResearchPaper,
    pub frame: ProblemFrame,
    #[serde(default = "default_budget")]
    pub char_budget: usize,
}

impl PromptContext {
    pub fn new(paper: ResearchPaper, frame: ProblemFrame) -> Self {
        Self {
            paper,
            frame,
            char_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn with_budget(mut self, char_budget: usize) -> Self {
        self.char_budget = char_budget;
        self
    }

    fn sections(&self) -> Vec<(&'static str, String)> {
        let bullets = |items: &[String]| items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n");
        vec![
            ("Title", self.paper.title.clone()),
            ("Abstract", self.paper.abstract_text.clone()),
            ("Introduction", self.paper.introduction.clone()),
            ("Related Work", self.paper.related_work.clone()),
            ("Research Tasks", bullets(&self.frame.tasks)),
            ("Research Gaps", bullets(&self.frame.gaps)),
            ("Keywords", self.frame.keywords.join(", ")),
        ]
    }

    /// Deterministic rendering clipped to `char_budget` characters.
    ///
    /// When the full text does not fit, every section head is kept and the
    /// section bodies are shortened from their tails, sharing the remaining
    /// space evenly; the result then ends with [`TRUNCATION_MARKER`] and is
    /// exactly `char_budget` characters long.
    pub fn render(&self) -> String {
        let sections = self.sections();
        let full = assemble(&sections, None);
        if full.chars().count() <= self.char_budget {
            return full;
        }
        let marker_len = TRUNCATION_MARKER.chars().count();
        let target = self.char_budget.saturating_sub(marker_len);
        let heads: usize = sections.iter().map(|(h, _)| h.chars().count() + 2).sum::<usize>()
            + 2 * sections.len().saturating_sub(1);
        let mut body = if heads <= target {
            let lens: Vec<usize> = sections.iter().map(|(_, b)| b.chars().count()).collect();
            let shares = water_fill(&lens, target - heads);
            assemble(&sections, Some(&shares))
        } else {
            full
        };
        body = body.chars().take(target).collect();
        body.push_str(TRUNCATION_MARKER);
        body.chars().take(self.char_budget).collect()
    }
}

fn assemble(sections: &[(&str, String)], limits: Option<&[usize]>) -> String {
    let mut out = String::new();
    for (i, (head, body)) in sections.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(head);
        out.push_str(":\n");
        match limits {
            Some(l) => out.extend(body.chars().take(l[i])),
            None => out.push_str(body),
        }
    }
    out
}

/// Splits `capacity` across items of the given lengths: short items keep
/// their full length, long items share what remains equally.
fn water_fill(lens: &[usize], capacity: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by_key(|&i| (lens[i], i));
    let mut shares = vec![0; lens.len()];
    let mut left = capacity;
    let mut remaining_items = lens.len();
    for &i in &order {
        let fair = left / remaining_items.max(1);
        let give = lens[i].min(fair);
        shares[i] = give;
        left -= give;
        remaining_items -= 1;
    }
    // hand out rounding leftovers to the longest bodies first
    for &i in order.iter().rev() {
        if left == 0 {
            break;
        }
        let extra = (lens[i] - shares[i]).min(left);
        shares[i] += extra;
        left -= extra;
    }
    shares
}
