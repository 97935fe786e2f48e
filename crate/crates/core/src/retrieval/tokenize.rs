use crate::domain::fold_char;

/// Case-folds and splits on every non-alphanumeric character. No stemming,
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars().map(fold_char) {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize("The Girl in White"), ["the", "girl", "in", "white"]);
        assert_eq!(tokenize("AC/DC"), ["ac", "dc"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  Über--straße_2 "), ["über", "straße", "2"]);
    }
}
