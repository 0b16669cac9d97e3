//! Small text normalization helpers shared across modules.

/// Lowercases, collapses whitespace runs to single spaces and trims.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// [`normalize`] with punctuation removed. Used for duplicate detection.
pub fn normalize_loose(text: &str) -> String {
    let stripped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    normalize(&stripped)
}

/// Number of whitespace-delimited tokens.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses() {
        assert_eq!(normalize("  Brake \t Pads\n"), "brake pads");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn loose_strips_punctuation() {
        assert_eq!(normalize_loose("What's the TSB?"), "what s the tsb");
        assert_eq!(normalize_loose("a-b"), normalize_loose("A b"));
    }

    #[test]
    fn tokens() {
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("a b  c"), 3);
    }
}
