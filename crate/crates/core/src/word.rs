//! Conversions between symbol-index words and their textual form.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("cannot split `{0}` into alphabet symbols")]
    Untokenizable(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
}

/// Splits `text` into symbol indices. Whitespace-separated input is read
/// token by token; otherwise the longest matching symbol is taken greedily.
pub fn parse_word(alphabet: &[String], text: &str) -> Result<Vec<usize>, WordError> {
    let text = text.trim();
    if text.split_whitespace().count() > 1 {
        return text
            .split_whitespace()
            .map(|tok| {
                alphabet
                    .iter()
                    .position(|a| a == tok)
                    .ok_or_else(|| WordError::UnknownSymbol(tok.to_string()))
            })
            .collect();
    }
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let best = alphabet
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_empty() && rest.starts_with(a.as_str()))
            .max_by_key(|(_, a)| a.len());
        match best {
            Some((i, a)) => {
                out.push(i);
                rest = &rest[a.len()..];
            }
            None => return Err(WordError::Untokenizable(text.to_string())),
        }
    }
    Ok(out)
}

/// Renders a word, separating symbols with spaces unless every symbol is one character.
pub fn render_word(alphabet: &[String], word: &[usize]) -> String {
    let compact = alphabet.iter().all(|a| a.chars().count() == 1);
    let parts: Vec<&str> = word.iter().map(|&i| alphabet[i].as_str()).collect();
    if compact {
        parts.concat()
    } else {
        parts.join(" ")
    }
}

/// All words of exactly length `n`, in lexicographic order of symbol indices.
pub fn words_of_length(k: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = if k == 0 && n > 0 { 0 } else { k.pow(n as u32) };
    (0..total).map(move |mut code| {
        let mut w = vec![0; n];
        for slot in w.iter_mut().rev() {
            *slot = code % k;
            code /= k;
        }
        w
    })
}

/// All non-empty words up to length `max_len`, shortest first.
pub fn words_up_to(k: usize, max_len: usize) -> impl Iterator<Item = Vec<usize>> {
    (1..=max_len).flat_map(move |n| words_of_length(k, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let ab: Vec<String> = vec!["a".into(), "b".into()];
        assert_eq!(parse_word(&ab, "abba").unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(render_word(&ab, &[0, 1]), "ab");
        let long: Vec<String> = vec!["x".into(), "x_".into(), "$".into()];
        assert_eq!(parse_word(&long, "x_x$").unwrap(), vec![1, 0, 2]);
        assert_eq!(parse_word(&long, "x_ x $").unwrap(), vec![1, 0, 2]);
        assert_eq!(render_word(&long, &[1, 0]), "x_ x");
        assert!(parse_word(&ab, "abc").is_err());
    }

    #[test]
    fn enumerates_in_order() {
        let w: Vec<_> = words_of_length(2, 2).collect();
        assert_eq!(w, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(words_up_to(3, 3).count(), 3 + 9 + 27);
    }
}
