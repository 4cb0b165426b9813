//! Tokenization shared by the sparse retrievers and the offline components.

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can", "common", "covering",
    "do", "does", "each", "feature", "for", "from", "has", "have", "how", "i", "if", "in", "into", "is", "it", "its",
    "like", "may", "more", "most", "my", "need", "no", "not", "of", "on", "one", "or", "other", "our", "out", "over",
    "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "up", "use", "used", "uses", "using", "via", "want", "was", "we", "were", "what", "when", "which", "while",
    "who", "will", "with", "would", "you", "your",
];

/// Tokens that carry meaning: not a stopword, not purely numeric, at least
/// two characters long.
pub fn is_content_token(token: &str) -> bool {
    token.chars().count() >= 2 && !token.chars().all(|c| c.is_numeric()) && STOPWORDS.binary_search(&token).is_err()
}

/// Replaces every run of whitespace (newlines included) with a single space.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rule() {
        assert_eq!(tokenize("A-b a"), ["a", "b", "a"]);
        assert_eq!(tokenize("  --JSON5::parse()  "), ["json5", "parse"]);
        assert!(tokenize("!!!").is_empty());
    }

    #[test]
    fn stopwords_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
        assert!(!is_content_token("the"));
        assert!(!is_content_token("42"));
        assert!(!is_content_token("x"));
        assert!(is_content_token("parse"));
    }

    #[test]
    fn flattening() {
        assert_eq!(single_line("a\nb\t c  "), "a b c");
    }
}
