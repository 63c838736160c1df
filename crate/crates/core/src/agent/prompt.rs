use crate::idea::ResearchIdea;
use crate::protocol::{format_instructions, StepSummary};
use crate::text::clip_chars;
use crate::toolkit::TaskMeta;
use crate::evaluation::Direction;

pub const DEFAULT_PROMPT_BUDGET: usize = 48_000;
const OBSERVATION_CHARS: usize = 12_000;

/// Inputs to one step prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub catalog: &'a str,
    pub problem: &'a str,
    pub idea: &'a ResearchIdea,
    /// Summaries of earlier steps, oldest first.
    pub summaries: &'a [StepSummary],
    /// The latest observation, with any injected human feedback in front.
    pub last_observation: Option<&'a str>,
    pub step_index: u64,
    pub step_budget: u64,
    pub char_budget: usize,
}

pub fn agent_instructions() -> &'static str {
    "You are a research assistant who turns a research idea into a working experiment. \
     The prototype code for the task is in your workspace; change it so the idea is implemented and the \
     task metric improves.\n\
     Work step by step. First lay out a high-level plan and keep it up to date in every response. \
     Check every claim against an observation before relying on it, and run scripts to confirm results. \
     Do not install packages. Use Request Help only when the workspace and tools cannot answer a question. \
     When the goal is met, submit it with Final Answer.\n"
}

/// The task statement shown to the agent.
pub fn research_problem(meta: &TaskMeta) -> String {
    let better = match meta.direction {
        Direction::HigherBetter => "higher is better",
        Direction::LowerBetter => "lower is better",
    };
    format!(
        "Task {}: improve the {} metric ({better}) of the prototype in the workspace. \
         The metric is measured by running `{}`, which prints a line `{}: <value>`.",
        meta.name,
        meta.metric,
        meta.eval_command(),
        meta.metric
    )
}

fn history_block(summaries: &[(usize, &StepSummary)], omitted: usize) -> String {
    let mut out = String::from("## History\n");
    if omitted > 0 {
        out.push_str(&format!("({omitted} earlier steps omitted)\n"));
    }
    for (i, s) in summaries {
        out.push_str(&format!("Step {}:\n{}\n\n", i + 1, s.render()));
    }
    out
}

/// Assembles the step prompt. When over budget, the oldest summaries are
/// dropped first; the most recent one is always kept.
pub fn build_step_prompt(inputs: &PromptInputs) -> String {
    let head = format!(
        "{}\n## Tools\n{}\n## Research Problem\n{}\n\n## Research Idea\n{}\n{}\n",
        agent_instructions(),
        inputs.catalog,
        inputs.problem,
        inputs.idea.hypothesis.render(),
        inputs.idea.plan.render(),
    );
    let observation = inputs
        .last_observation
        .map(|o| format!("## Last Observation\n{}\n\n", clip_chars(o, OBSERVATION_CHARS, "\n[... observation clipped]")))
        .unwrap_or_default();
    let tail = format!(
        "## Response Format\nThis is step {} of at most {}.\n{}",
        inputs.step_index + 1,
        inputs.step_budget,
        format_instructions()
    );
    let numbered: Vec<(usize, &StepSummary)> = inputs.summaries.iter().enumerate().collect();
    let fixed = head.chars().count() + observation.chars().count() + tail.chars().count();
    let mut keep = numbered.len();
    let mut history = if numbered.is_empty() { String::new() } else { history_block(&numbered, 0) };
    while keep > 1 && fixed + history.chars().count() > inputs.char_budget {
        keep -= 1;
        let start = numbered.len() - keep;
        history = history_block(&numbered[start..], start);
    }
    format!("{head}{history}{observation}{tail}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idea::tests::sample_idea;
    use crate::protocol::{registry, render_tool_catalog};

    fn summary(i: usize) -> StepSummary {
        StepSummary::new(&format!("reason-{i}"), &format!("act-{i}"), &"observed words ".repeat(20), "none")
    }

    fn inputs<'a>(idea: &'a ResearchIdea, catalog: &'a str, summaries: &'a [StepSummary], budget: usize) -> PromptInputs<'a> {
        PromptInputs {
            catalog,
            problem: "Task toy: improve mse.",
            idea,
            summaries,
            last_observation: None,
            step_index: summaries.len() as u64,
            step_budget: 50,
            char_budget: budget,
        }
    }

    #[test]
    fn first_turn_has_no_history() {
        let idea = sample_idea();
        let catalog = render_tool_catalog(&registry()).unwrap();
        let p = build_step_prompt(&inputs(&idea, &catalog, &[], DEFAULT_PROMPT_BUDGET));
        assert!(p.contains(&catalog));
        assert!(p.contains(idea.hypothesis.title()));
        assert!(!p.contains("## History"));
        assert!(p.contains("Research Plan and Status:"));
    }

    #[test]
    fn over_budget_drops_oldest_first() {
        let idea = sample_idea();
        let catalog = render_tool_catalog(&registry()).unwrap();
        let summaries: Vec<_> = (0..50).map(summary).collect();
        let full = build_step_prompt(&inputs(&idea, &catalog, &summaries, usize::MAX));
        let budget = full.chars().count() / 2 + catalog.len() / 2;
        let p = build_step_prompt(&inputs(&idea, &catalog, &summaries, budget));
        assert!(p.chars().count() <= budget);
        assert!(p.contains("reason-49"));
        assert!(!p.contains("reason-0\n"));
        let first_kept = (0..50).find(|i| p.contains(&format!("reason-{i}\n"))).unwrap();
        assert!((first_kept..50).all(|i| p.contains(&format!("reason-{i}\n"))));
        let tiny = build_step_prompt(&inputs(&idea, &catalog, &summaries, 10));
        assert!(tiny.contains("reason-49") && !tiny.contains("reason-48\n"));
    }

    #[test]
    fn identical_state_gives_identical_prompt() {
        let idea = sample_idea();
        let catalog = render_tool_catalog(&registry()).unwrap();
        let summaries: Vec<_> = (0..3).map(summary).collect();
        let a = build_step_prompt(&inputs(&idea, &catalog, &summaries, 5_000));
        let b = build_step_prompt(&inputs(&idea, &catalog, &summaries, 5_000));
        assert_eq!(a, b);
    }
}
