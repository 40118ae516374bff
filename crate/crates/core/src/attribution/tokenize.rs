use std::collections::HashSet;

/// A word token with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace and punctuation: tokens are maximal runs of
/// alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token { text: &text[s..i], start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &text[s..], start: s, end: text.len() });
    }
    out
}

/// Lowercased token strings, in order.
pub fn token_keys(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| t.text.to_lowercase()).collect()
}

/// Wraps every occurrence of a selected token (matched case-insensitively) as
/// `**token**`, leaving all other bytes untouched. Occurrences already wrapped
/// are left alone, so applying it twice is the same as once.
pub fn highlight<S: AsRef<str>>(text: &str, selected: &[S]) -> String {
    let keys: HashSet<String> = selected.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut last = 0;
    for tok in tokenize(text) {
        if !keys.contains(&tok.text.to_lowercase()) {
            continue;
        }
        let wrapped = text[..tok.start].ends_with("**") && text[tok.end..].starts_with("**");
        out.push_str(&text[last..tok.start]);
        if wrapped {
            out.push_str(tok.text);
        } else {
            out.push_str("**");
            out.push_str(tok.text);
            out.push_str("**");
        }
        last = tok.end;
    }
    out.push_str(&text[last..]);
    out
}

/// Removes `**` markers.
pub fn strip_markup(text: &str) -> String {
    text.replace("**", "")
}
