//! Prompt templates bundled with the toolkit, one file per pipeline role.
//!
//! Role tags are stable identifiers: mock fixtures, ledgers, and routing
//! tables key on them, so they must not change across refactors.

pub const PARSER_SUMMARIZER: &str = include_str!("../assets/prompts/parser_summarizer.txt");
pub const PARSER_FILTER: &str = include_str!("../assets/prompts/parser_filter.txt");
pub const PLANNER_MATCHING: &str = include_str!("../assets/prompts/planner_matching.txt");
pub const PAINTER: &str = include_str!("../assets/prompts/painter.txt");
pub const COMMENTER: &str = include_str!("../assets/prompts/commenter.txt");
pub const JUDGE_ELEMENT_QUALITY: &str = include_str!("../assets/prompts/judge_element_quality.txt");
pub const JUDGE_LAYOUT_BALANCE: &str = include_str!("../assets/prompts/judge_layout_balance.txt");
pub const JUDGE_ENGAGEMENT: &str = include_str!("../assets/prompts/judge_engagement.txt");
pub const JUDGE_CLARITY: &str = include_str!("../assets/prompts/judge_clarity.txt");
pub const JUDGE_CONTENT_COMPLETENESS: &str =
    include_str!("../assets/prompts/judge_content_completeness.txt");
pub const JUDGE_LOGICAL_FLOW: &str = include_str!("../assets/prompts/judge_logical_flow.txt");
pub const QUIZ_VERBATIM: &str = include_str!("../assets/prompts/quiz_verbatim.txt");
pub const QUIZ_INTERPRETIVE: &str = include_str!("../assets/prompts/quiz_interpretive.txt");
pub const QUIZ_ANSWER_AGENT: &str = include_str!("../assets/prompts/quiz_answer_agent.txt");

/// Reference prompts for the three direct-generation baselines. Shipped for
/// comparison runs; the pipeline itself never sends them.
pub const BASELINE_DIRECT_IMAGE: &str = include_str!("../assets/prompts/baseline_direct_image.txt");
pub const BASELINE_AGENT_PPTX: &str = include_str!("../assets/prompts/baseline_agent_pptx.txt");
pub const BASELINE_HTML: &str = include_str!("../assets/prompts/baseline_html.txt");

/// Stable role tags for every gateway call the pipeline makes.
pub mod roles {
    pub const PARSER_SUMMARIZE: &str = "parser.summarize";
    pub const PARSER_FILTER: &str = "parser.filter";
    pub const PLANNER_MATCH: &str = "planner.match";
    pub const PAINTER_COMPOSE: &str = "painter.compose";
    pub const COMMENTER_CRITIQUE: &str = "commenter.critique";
    pub const JUDGE_ELEMENT_QUALITY: &str = "judge.element_quality";
    pub const JUDGE_LAYOUT_BALANCE: &str = "judge.layout_balance";
    pub const JUDGE_ENGAGEMENT: &str = "judge.engagement";
    pub const JUDGE_CLARITY: &str = "judge.clarity";
    pub const JUDGE_CONTENT_COMPLETENESS: &str = "judge.content_completeness";
    pub const JUDGE_LOGICAL_FLOW: &str = "judge.logical_flow";
    pub const QUIZ_GENERATE_VERBATIM: &str = "quiz.generate.verbatim";
    pub const QUIZ_GENERATE_INTERPRETIVE: &str = "quiz.generate.interpretive";
    pub const QUIZ_ANSWER: &str = "quiz.answer";
}

/// System prompt shipped for a role, if the role has a fixed one.
/// `quiz.answer` requests vary by reader but share one system prompt too.
pub fn system_prompt(role_tag: &str) -> Option<&'static str> {
    match role_tag {
        roles::PARSER_SUMMARIZE => Some(PARSER_SUMMARIZER),
        roles::PARSER_FILTER => Some(PARSER_FILTER),
        roles::PLANNER_MATCH => Some(PLANNER_MATCHING),
        roles::PAINTER_COMPOSE => Some(PAINTER),
        roles::COMMENTER_CRITIQUE => Some(COMMENTER),
        roles::JUDGE_ELEMENT_QUALITY => Some(JUDGE_ELEMENT_QUALITY),
        roles::JUDGE_LAYOUT_BALANCE => Some(JUDGE_LAYOUT_BALANCE),
        roles::JUDGE_ENGAGEMENT => Some(JUDGE_ENGAGEMENT),
        roles::JUDGE_CLARITY => Some(JUDGE_CLARITY),
        roles::JUDGE_CONTENT_COMPLETENESS => Some(JUDGE_CONTENT_COMPLETENESS),
        roles::JUDGE_LOGICAL_FLOW => Some(JUDGE_LOGICAL_FLOW),
        roles::QUIZ_GENERATE_VERBATIM => Some(QUIZ_VERBATIM),
        roles::QUIZ_GENERATE_INTERPRETIVE => Some(QUIZ_INTERPRETIVE),
        roles::QUIZ_ANSWER => Some(QUIZ_ANSWER_AGENT),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_role_has_a_system_prompt() {
        for role in [
            roles::PARSER_SUMMARIZE,
            roles::PARSER_FILTER,
            roles::PLANNER_MATCH,
            roles::PAINTER_COMPOSE,
            roles::COMMENTER_CRITIQUE,
            roles::JUDGE_ELEMENT_QUALITY,
            roles::JUDGE_LAYOUT_BALANCE,
            roles::JUDGE_ENGAGEMENT,
            roles::JUDGE_CLARITY,
            roles::JUDGE_CONTENT_COMPLETENESS,
            roles::JUDGE_LOGICAL_FLOW,
            roles::QUIZ_GENERATE_VERBATIM,
            roles::QUIZ_GENERATE_INTERPRETIVE,
            roles::QUIZ_ANSWER,
        ] {
            let p = system_prompt(role).unwrap_or_else(|| panic!("no prompt for {role}"));
            assert!(!p.trim().is_empty(), "empty prompt for {role}");
        }
    }

    #[test]
    fn quiz_prompts_demand_fifty_items() {
        assert!(QUIZ_VERBATIM.contains("exactly 50"));
        assert!(QUIZ_INTERPRETIVE.contains("exactly 50"));
    }
}
