use super::{tokenize, AffordanceTable, Instruction, Prompt, PromptSource};

/// Retrieval template prefix; the item follows after the article "a".
pub const PROMPT_PREFIX: &str = "a photo of a ";

/// Longest contiguous token match among `phrases`. Ties go to the earliest
/// position, then to the lexicographically smallest phrase.
fn best_match<'a>(tokens: &[String], phrases: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let mut best: Option<(usize, usize, &str)> = None;
    for phrase in phrases {
        let Ok(p) = tokenize(phrase) else { continue };
        let n = p.tokens.len();
        if n > tokens.len() {
            continue;
        }
        let Some(pos) = tokens.windows(n).position(|w| w == p.tokens.as_slice()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bn, bpos, bphrase)) => n > bn || (n == bn && (pos < bpos || (pos == bpos && phrase < bphrase))),
        };
        if better {
            best = Some((n, pos, phrase));
        }
    }
    best.map(|(_, _, p)| p)
}

fn template(item: &str, source: PromptSource) -> Prompt {
    Prompt {
        text: format!("{PROMPT_PREFIX}{item}"),
        source,
        matched_item: Some(item.to_string()),
    }
}

/// Rewrites an instruction into a retrieval prompt.
///
/// Direct item mentions win over affordance cues. When neither matches, the
/// normalized instruction text is passed through unchanged.
pub fn encode_instruction(instr: &Instruction, items: &[String], table: &AffordanceTable) -> Prompt {
    let Ok(tokens) = tokenize(instr.raw()) else {
        return Prompt {
            text: instr.raw().trim().to_string(),
            source: PromptSource::Passthrough,
            matched_item: None,
        };
    };
    if let Some(item) = best_match(&tokens.tokens, items.iter().map(String::as_str)) {
        return template(item, PromptSource::Template);
    }
    if let Some(cue) = best_match(&tokens.tokens, table.entries.keys().map(String::as_str)) {
        return template(&table.entries[cue], PromptSource::Affordance);
    }
    passthrough(&tokens.joined())
}

/// Degraded mode: the normalized instruction itself is the query.
pub fn passthrough(text: &str) -> Prompt {
    let normalized = tokenize(text).map(|t| t.joined()).unwrap_or_else(|_| text.trim().to_string());
    Prompt {
        text: normalized,
        source: PromptSource::Passthrough,
        matched_item: None,
    }
}
