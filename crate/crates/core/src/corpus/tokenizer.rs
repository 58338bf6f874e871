/// ASCII punctuation other than `_`, which stays inside tokens.
fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation() && c != '_'
}

/// Lowercases, splits on whitespace and turns punctuation characters into
/// standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if is_split_punct(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}
