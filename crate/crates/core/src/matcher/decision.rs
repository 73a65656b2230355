use crate::entity::Decision;

fn leading_answer(text: &str) -> Option<Decision> {
    let mut s = text
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    for prefix in ["final answer", "answer"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            if rest.starts_with(|c: char| !c.is_alphanumeric()) {
                s = rest.trim_start_matches(|c: char| !c.is_alphanumeric()).to_string();
            }
            break;
        }
    }
    let word_at = |w: &str| s.strip_prefix(w).is_some_and(|rest| !rest.starts_with(char::is_alphanumeric));
    if word_at("yes") {
        Some(Decision::Match)
    } else if word_at("no") {
        Some(Decision::NoMatch)
    } else {
        None
    }
}

/// Reads a yes/no answer from model output.
///
/// The final non-empty line is checked first, then the start of the whole
/// text. Leading punctuation and an `Answer:` prefix are ignored and the
/// comparison is case-insensitive. Returns `None` when neither position
/// starts with the word `yes` or `no`.
pub fn parse_decision(text: &str) -> Option<Decision> {
    let last = text.lines().rev().find(|l| !l.trim().is_empty())?;
    leading_answer(last).or_else(|| leading_answer(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_rule() {
        assert_eq!(parse_decision("Yes, these match."), Some(Decision::Match));
        assert_eq!(parse_decision("no"), Some(Decision::NoMatch));
    }

    #[test]
    fn final_line_rule() {
        assert_eq!(
            parse_decision("The titles differ in model number.\nNo."),
            Some(Decision::NoMatch)
        );
        assert_eq!(parse_decision("Both are the same camera\n\n**Yes**\n\n"), Some(Decision::Match));
    }

    #[test]
    fn final_line_wins_over_opening() {
        assert_eq!(parse_decision("Yes, at first glance.\nBut the color differs.\nNo"), Some(Decision::NoMatch));
    }

    #[test]
    fn whole_text_fallback() {
        assert_eq!(parse_decision("Yes. Same model and price.\nThey are identical."), Some(Decision::Match));
    }

    #[test]
    fn answer_prefix() {
        assert_eq!(parse_decision("Reasoning...\nFinal answer: yes"), Some(Decision::Match));
        assert_eq!(parse_decision("Answer - NO"), Some(Decision::NoMatch));
    }

    #[test]
    fn word_boundaries() {
        assert_eq!(parse_decision("It depends."), None);
        assert_eq!(parse_decision("Nothing conclusive"), None);
        assert_eq!(parse_decision("Yesterday's model"), None);
        assert_eq!(parse_decision(""), None);
        assert_eq!(parse_decision("  \n "), None);
    }
}
