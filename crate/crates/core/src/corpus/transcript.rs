//! Transcript ingestion. One utterance per line, inline literal "<uh>" and
//! "<um>" markers between words.

use super::fp::FpTag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    Word(String),
    Fp(FpTag),
}

/// Tokenizes one transcript line: words are case-folded and stripped of
/// punctuation (apostrophes kept), markers become FP tokens. Any other
/// angle-bracket marker is a parse error carrying line and column.
pub fn parse_marked_text(line: &str, line_number: usize) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut col = 1usize;
    for piece in line.split(' ') {
        let start_col = col;
        col += piece.chars().count() + 1;
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let lowered = piece.to_lowercase();
        if lowered == "<uh>" {
            out.push(Token::Fp(FpTag::Uh));
            continue;
        }
        if lowered == "<um>" {
            out.push(Token::Fp(FpTag::Um));
            continue;
        }
        if lowered.starts_with('<') {
            return Err(Error::Parse {
                line: line_number,
                column: start_col,
                message: format!("unknown marker {piece:?}; expected <uh> or <um>"),
            });
        }
        let word: String = lowered
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == '\'')
            .collect();
        if !word.is_empty() {
            out.push(Token::Word(word));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sentence_tokenizes() {
        let toks = parse_marked_text("it's called <um> right <uh> apple", 1).unwrap();
        assert_eq!(
            toks,
            vec![
                Token::Word("it's".into()),
                Token::Word("called".into()),
                Token::Fp(FpTag::Um),
                Token::Word("right".into()),
                Token::Fp(FpTag::Uh),
                Token::Word("apple".into()),
            ]
        );
    }

    #[test]
    fn single_word() {
        assert_eq!(
            parse_marked_text("hello", 1).unwrap(),
            vec![Token::Word("hello".into())]
        );
    }

    #[test]
    fn markers_only() {
        assert_eq!(
            parse_marked_text("<uh> <uh>", 1).unwrap(),
            vec![Token::Fp(FpTag::Uh), Token::Fp(FpTag::Uh)]
        );
    }

    #[test]
    fn unknown_marker_reports_position() {
        let err = parse_marked_text("well <hmm> yes", 3).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 6);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn punctuation_stripped_and_case_folded() {
        let toks = parse_marked_text("Hello, WORLD!", 1).unwrap();
        assert_eq!(
            toks,
            vec![Token::Word("hello".into()), Token::Word("world".into())]
        );
    }
}
