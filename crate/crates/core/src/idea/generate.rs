use super::{assemble_idea, parse_hypothesis, parse_plan, ExperimentPlan, Hypothesis, IdeaError, ResearchIdea};
use crate::corpus::{
    extract_problem, search_recent_works, LiteratureProvider, PromptContext, RelatedWork, ResearchPaper,
};
use crate::llm::{Gateway, GENERATION_TEMPERATURE};

pub const HYPOTHESIS_TEMPLATE_ID: &str = "hypothesis/v1";
pub const PLAN_TEMPLATE_ID: &str = "experiment-plan/v1";

/// Renders recent works as a `Recent Works:` block; empty input renders a
/// placeholder line so prompts keep a stable shape.
pub fn render_related(related: &[RelatedWork]) -> String {
    let mut out = String::from("Recent Works:\n");
    if related.is_empty() {
        out.push_str("(none retrieved)\n");
    }
    for work in related {
        out.push_str(&format!("Title: \"{}\" ({})\nAbstract: {}\n", work.title, work.year, work.abstract_text));
    }
    out
}

fn notes_block(notes: Option<&str>) -> String {
    match notes {
        Some(n) if !n.trim().is_empty() => format!("\n{}\n", n.trim()),
        _ => String::new(),
    }
}

pub fn hypothesis_prompt(context: &PromptContext, related: &[RelatedWork], notes: Option<&str>) -> String {
    format!(
        "You are assisting a machine learning researcher who wants a new, testable research direction.\n\
         Study the paper summary, its extracted research tasks, gaps and keywords, and the recent works listed \
         below. Then propose one concrete method that addresses at least one of the gaps. The method should be \
         specific enough that an engineer could start implementing it, and it should say how it differs from the \
         recent works.\n\n\
         {}\n\n{}{}\n\
         Reply in exactly this layout:\n\
         Method: <a one-line title, then the method described step by step>\n\
         Rationale: <why the method should work and which gap it closes>\n",
        context.render(),
        render_related(related),
        notes_block(notes),
    )
}

pub fn plan_prompt(
    context: &PromptContext,
    related: &[RelatedWork],
    hypothesis: &Hypothesis,
    notes: Option<&str>,
) -> String {
    format!(
        "You are assisting a machine learning researcher in turning a proposed method into an experiment.\n\
         Using the paper summary, the recent works and the proposed method below, lay out an experiment that \
         would confirm or refute the method. Number the top-level stages of the design as 1., 2., 3. and so on; \
         details of a stage may be indented beneath it.\n\n\
         {}\n\n{}\nProposed hypothesis:\n{}{}\n\
         Reply in exactly this layout:\n\
         Experiment: <a one-line title, then the numbered experiment design>\n\
         Rationale: <why this design is a fair test of the method>\n",
        context.render(),
        render_related(related),
        hypothesis.render(),
        notes_block(notes),
    )
}

fn ask_with_reask<T>(
    llm: &Gateway,
    prompt: &str,
    template: &str,
    parse: impl Fn(&str) -> Result<T, IdeaError>,
) -> Result<T, IdeaError> {
    let first = llm.ask(prompt, template, GENERATION_TEMPERATURE)?;
    match parse(&first) {
        Err(IdeaError::Parse(why)) => {
            let retry = format!(
                "{prompt}\nYour previous reply could not be used: {why}. \
                 Answer again and keep both headers exactly as shown.\n"
            );
            let second = llm.ask(&retry, template, GENERATION_TEMPERATURE)?;
            parse(&second)
        }
        other => other,
    }
}

pub fn generate_hypothesis(
    context: &PromptContext,
    related: &[RelatedWork],
    llm: &Gateway,
) -> Result<Hypothesis, IdeaError> {
    hypothesis_with_notes(context, related, None, llm)
}

fn hypothesis_with_notes(
    context: &PromptContext,
    related: &[RelatedWork],
    notes: Option<&str>,
    llm: &Gateway,
) -> Result<Hypothesis, IdeaError> {
    let prompt = hypothesis_prompt(context, related, notes);
    ask_with_reask(llm, &prompt, HYPOTHESIS_TEMPLATE_ID, parse_hypothesis)
}

pub fn generate_plan(
    context: &PromptContext,
    related: &[RelatedWork],
    hypothesis: &Hypothesis,
    llm: &Gateway,
) -> Result<ExperimentPlan, IdeaError> {
    plan_with_notes(context, related, hypothesis, None, llm)
}

fn plan_with_notes(
    context: &PromptContext,
    related: &[RelatedWork],
    hypothesis: &Hypothesis,
    notes: Option<&str>,
    llm: &Gateway,
) -> Result<ExperimentPlan, IdeaError> {
    let prompt = plan_prompt(context, related, hypothesis, notes);
    ask_with_reask(llm, &prompt, PLAN_TEMPLATE_ID, parse_plan)
}

/// Full Stage 1 pipeline: problem extraction, literature search, then
/// hypothesis and plan generation.
pub fn generate_idea(
    paper: ResearchPaper,
    llm: &Gateway,
    literature: &dyn LiteratureProvider,
    related_limit: usize,
    context_budget: usize,
) -> Result<ResearchIdea, IdeaError> {
    let frame = extract_problem(&paper, llm)?;
    let context = PromptContext::new(paper, frame).with_budget(context_budget);
    let related = search_recent_works(&context, related_limit, literature)?;
    let hypothesis = generate_hypothesis(&context, &related, llm)?;
    let plan = generate_plan(&context, &related, &hypothesis, llm)?;
    Ok(assemble_idea(context, related, hypothesis, plan))
}

/// Regenerates hypothesis and plan with the prior idea and researcher
/// feedback appended to the prompts.
pub fn refine_idea(prior: &ResearchIdea, feedback: &str, llm: &Gateway) -> Result<ResearchIdea, IdeaError> {
    let notes = format!(
        "Previous idea:\n{}\n{}\nResearcher feedback on the previous idea:\n{}\n",
        prior.hypothesis.render(),
        prior.plan.render(),
        feedback.trim()
    );
    let hypothesis = hypothesis_with_notes(&prior.context, &prior.related, Some(&notes), llm)?;
    let plan = plan_with_notes(&prior.context, &prior.related, &hypothesis, Some(&notes), llm)?;
    Ok(assemble_idea(prior.context.clone(), prior.related.clone(), hypothesis, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ProblemFrame;
    use crate::llm::{ScriptEntry, ScriptedProvider, ScriptedSession};
    use crate::llm::{GatewayError, ProviderError, RetryPolicy, DEFAULT_TOKEN_BUDGET};
    use std::sync::Arc;

    fn gateway(replies: &[(&str, &str)]) -> Gateway {
        let entries = replies
            .iter()
            .map(|(expect, reply)| ScriptEntry {
                expect_substring: (!expect.is_empty()).then(|| expect.to_string()),
                reply: reply.to_string(),
            })
            .collect();
        let provider = ScriptedProvider::new("t", ScriptedSession::new(entries));
        Gateway::with_limits(Arc::new(provider), RetryPolicy::immediate(0), DEFAULT_TOKEN_BUDGET)
    }

    fn context() -> PromptContext {
        let paper = ResearchPaper {
            title: "P".into(),
            abstract_text: "A".into(),
            introduction: "I".into(),
            related_work: "R".into(),
            extra_sections: Default::default(),
            source_id: "p".into(),
        };
        PromptContext::new(
            paper,
            ProblemFrame {
                tasks: vec!["t".into()],
                gaps: vec!["g".into()],
                keywords: vec!["k".into()],
            },
        )
    }

    #[test]
    fn reask_recovers_from_missing_header() {
        let llm = gateway(&[("Method:", "Method: only"), ("could not be used", "Method: m\nRationale: r")]);
        let h = generate_hypothesis(&context(), &[], &llm).unwrap();
        assert_eq!(h.method, "m");
        assert_eq!(llm.calls().len(), 2);
    }

    #[test]
    fn second_failure_is_parse_error() {
        let llm = gateway(&[("", "Method: x"), ("", "Method: y")]);
        assert!(matches!(generate_hypothesis(&context(), &[], &llm), Err(IdeaError::Parse(_))));
    }

    #[test]
    fn empty_plan_is_not_reasked() {
        let llm = gateway(&[("Experiment:", "Experiment: prose only\nRationale: r")]);
        let h = Hypothesis {
            method: "m".into(),
            rationale: "r".into(),
        };
        assert!(matches!(generate_plan(&context(), &[], &h, &llm), Err(IdeaError::EmptyPlan)));
    }

    #[test]
    fn plan_prompt_carries_related_verbatim() {
        let work = RelatedWork {
            title: "Some Work".into(),
            abstract_text: "Its abstract.".into(),
            year: 2023,
            source_id: "w".into(),
            relevance: 1.0,
        };
        let h = Hypothesis {
            method: "m".into(),
            rationale: "r".into(),
        };
        let prompt = plan_prompt(&context(), &[work], &h, None);
        assert!(prompt.contains("Title: \"Some Work\" (2023)\nAbstract: Its abstract."));
        assert!(prompt.contains("Method: m"));
    }

    #[test]
    fn refinement_includes_feedback() {
        let llm = gateway(&[
            ("use fewer stages", "Method: m2\nRationale: r2"),
            ("use fewer stages", "Experiment: e\n1. only\nRationale: r"),
        ]);
        let prior = super::super::tests::sample_idea();
        let refined = refine_idea(&prior, "use fewer stages", &llm).unwrap();
        assert_eq!(refined.hypothesis.method, "m2");
        assert_eq!(refined.plan.design.len(), 1);
        assert_eq!(refined.context, prior.context);
    }

    #[test]
    fn exhausted_session_surfaces_gateway_error() {
        let llm = gateway(&[]);
        let err = generate_hypothesis(&context(), &[], &llm).unwrap_err();
        assert!(matches!(
            err,
            IdeaError::Gateway(GatewayError::Provider(ProviderError::SessionExhausted { .. }))
        ));
    }
}
