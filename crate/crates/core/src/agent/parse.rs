use super::AgentStep;
use crate::tools::ToolCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Thought,
    Action,
    ActionInput,
    FinalAnswer,
}

fn marker(line: &str) -> Option<(Marker, &str)> {
    let t = line.trim_start();
    let lower = t.to_ascii_lowercase();
    for (prefix, m) in [
        ("final answer:", Marker::FinalAnswer),
        ("action input:", Marker::ActionInput),
        ("action:", Marker::Action),
        ("thought:", Marker::Thought),
    ] {
        if lower.starts_with(prefix) {
            return Some((m, t[prefix.len()..].trim()));
        }
    }
    None
}

fn clean_token(s: &str) -> String {
    s.trim()
        .trim_matches(|c| matches!(c, '`' | '"' | '\'' | '[' | ']' | '*'))
        .trim()
        .to_string()
}

/// Parses one model reply of the line-oriented ReAct protocol.
///
/// Whichever of `Action:` or `Final Answer:` appears first decides the step.
/// A reply carrying neither becomes a `Thought` and the caller re-prompts.
pub fn parse_action(output: &str) -> AgentStep {
    let lines: Vec<&str> = output.lines().collect();
    let first = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| match marker(l) {
            Some((m @ (Marker::Action | Marker::FinalAnswer), _)) => Some((i, m)),
            _ => None,
        });

    let Some((at, kind)) = first else {
        let text = lines
            .iter()
            .map(|l| match marker(l) {
                Some((Marker::Thought, rest)) => rest,
                _ => l.trim(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        return AgentStep::Thought { text: text.trim().to_string() };
    };

    let thought = {
        let text = lines[..at]
            .iter()
            .map(|l| match marker(l) {
                Some((Marker::Thought, rest)) => rest,
                _ => l.trim(),
            })
            .collect::<Vec<_>>()
            .join("\n");
        let text = text.trim();
        (!text.is_empty()).then(|| text.to_string())
    };

    match kind {
        Marker::FinalAnswer => {
            let (_, first_line) = marker(lines[at]).expect("marker line");
            let mut text = first_line.to_string();
            for l in &lines[at + 1..] {
                text.push('\n');
                text.push_str(l);
            }
            AgentStep::FinalAnswer { text: text.trim().to_string(), forced: false }
        }
        _ => {
            let (_, name) = marker(lines[at]).expect("marker line");
            let input = lines[at + 1..]
                .iter()
                .find_map(|l| match marker(l) {
                    Some((Marker::ActionInput, rest)) => Some(clean_token(rest)),
                    _ => None,
                })
                .unwrap_or_default();
            AgentStep::Action {
                thought,
                call: ToolCall::new(clean_token(name), input),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_action() {
        let step = parse_action("Thought: need history\nAction: user_memory\nAction Input: noir films");
        assert_eq!(
            step,
            AgentStep::Action {
                thought: Some("need history".into()),
                call: ToolCall::new("user_memory", "noir films"),
            }
        );
    }

    #[test]
    fn terminal_form() {
        assert_eq!(
            parse_action("Final Answer: classic"),
            AgentStep::FinalAnswer { text: "classic".into(), forced: false }
        );
    }

    #[test]
    fn unmarked_text_is_thought() {
        assert_eq!(
            parse_action("I think the answer is classic"),
            AgentStep::Thought { text: "I think the answer is classic".into() }
        );
    }

    #[test]
    fn first_marker_wins() {
        let step = parse_action("Thought: x\nAction: wikipedia\nAction Input: Alien\nObservation: ...\nFinal Answer: sci-fi");
        assert!(matches!(step, AgentStep::Action { .. }));
        let step = parse_action("Final Answer: a\nAction: wikipedia");
        assert!(matches!(step, AgentStep::FinalAnswer { .. }));
    }

    #[test]
    fn decorated_names_are_cleaned() {
        let step = parse_action("action: `wikipedia`\naction input: \"Blade Runner\"");
        assert_eq!(
            step,
            AgentStep::Action { thought: None, call: ToolCall::new("wikipedia", "Blade Runner") }
        );
    }

    #[test]
    fn missing_input_is_empty() {
        let step = parse_action("Action: wikipedia");
        assert_eq!(step, AgentStep::Action { thought: None, call: ToolCall::new("wikipedia", "") });
    }

    #[test]
    fn multiline_final_answer() {
        let step = parse_action("Thought: done\nFinal Answer:\n[2]\n");
        assert_eq!(step, AgentStep::FinalAnswer { text: "[2]".into(), forced: false });
    }
}
