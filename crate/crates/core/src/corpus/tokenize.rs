fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '«' | '»')
}

/// Lowercases, splits on Unicode whitespace and peels leading/trailing
/// punctuation off each chunk as one-character tokens. Inner punctuation
/// (`t-shirt`, `3.5`) stays inside the word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c)).unwrap_or(chars.len());
        let end = chars.iter().rposition(|&c| !is_punct(c)).map_or(start, |p| p + 1);
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
    }
    out
}

/// Normal form used for vocabulary lookups of pre-tokenized title tokens.
pub fn normalize_token(token: &str) -> String {
    token.to_lowercase()
}
