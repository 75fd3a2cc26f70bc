/// Deterministic tokenizer used by the in-process reference models.
///
/// Whitespace separates tokens. Every CJK ideograph and every punctuation
/// mark (ASCII or CJK/full-width) is a token of its own, so Chinese text is
/// scored character by character. Apostrophes and hyphens stay inside words.
pub fn reference_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_cjk(ch) || is_split_punct(ch) {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

fn is_split_punct(ch: char) -> bool {
    (ch.is_ascii_punctuation() && ch != '\'' && ch != '-')
        || matches!(ch as u32, 0x3000..=0x303F | 0xFF00..=0xFFEF | 0x2018..=0x201F | 0x2026)
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF | 0x20000..=0x2FFFF)
}
