//! The closed 14-symbol vocabulary and fixed-length padding.
//!
//! Ids follow the listing order `P S 0 1 2 3 4 5 6 7 8 9 \n C`.

use std::fmt;

use crate::error::{Error, Result};

pub const VOCAB_SIZE: usize = 14;
pub const INPUT_LEN: usize = 5;
pub const TARGET_LEN: usize = 3;

/// Symbols in id order. Index = token id.
pub const SYMBOLS: [char; VOCAB_SIZE] = [
    'P', 'S', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '\n', 'C',
];

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Stop,
    Digit(u8),
    Start,
    Carry,
}

impl Token {
    pub const PAD: TokenId = 0;
    pub const STOP: TokenId = 1;
    pub const START: TokenId = 12;
    pub const CARRY: TokenId = 13;

    pub fn id(self) -> TokenId {
        match self {
            Token::Pad => Self::PAD,
            Token::Stop => Self::STOP,
            Token::Digit(d) => {
                debug_assert!(d < 10);
                2 + d as TokenId
            }
            Token::Start => Self::START,
            Token::Carry => Self::CARRY,
        }
    }

    pub fn from_id(id: TokenId) -> Result<Token> {
        Ok(match id {
            0 => Token::Pad,
            1 => Token::Stop,
            2..=11 => Token::Digit((id - 2) as u8),
            12 => Token::Start,
            13 => Token::Carry,
            _ => return Err(Error::OutOfRangeId(id)),
        })
    }

    pub fn symbol(self) -> char {
        SYMBOLS[self.id() as usize]
    }

    pub fn from_symbol(c: char) -> Result<Token> {
        Ok(match c {
            'P' => Token::Pad,
            'S' => Token::Stop,
            '0'..='9' => Token::Digit(c as u8 - b'0'),
            '\n' => Token::Start,
            'C' => Token::Carry,
            _ => return Err(Error::UnknownSymbol(c)),
        })
    }

    pub fn digit(self) -> Option<u8> {
        match self {
            Token::Digit(d) => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Start => f.write_str("\\n"),
            t => write!(f, "{}", t.symbol()),
        }
    }
}

/// What a token sequence is used for. Only `Input` and `Target` have a fixed length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqRole {
    Input,
    Target,
    OutputPrefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub role: SeqRole,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The sequence with trailing padding removed.
    pub fn unpadded(&self) -> &[TokenId] {
        let end = self
            .ids
            .iter()
            .rposition(|&id| id != Token::PAD)
            .map_or(0, |i| i + 1);
        &self.ids[..end]
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.ids
    }
}

pub fn encode(text: &str) -> Result<Vec<TokenId>> {
    text.chars()
        .map(|c| Token::from_symbol(c).map(Token::id))
        .collect()
}

pub fn decode(ids: &[TokenId]) -> Result<String> {
    ids.iter()
        .map(|&id| Token::from_id(id).map(Token::symbol))
        .collect()
}

fn pad_to(ids: &[TokenId], len: usize, role: SeqRole) -> Result<TokenSeq> {
    if ids.len() > len {
        return Err(Error::TooLong {
            len: ids.len(),
            max: len,
        });
    }
    let mut out = ids.to_vec();
    out.resize(len, Token::PAD);
    Ok(TokenSeq { ids: out, role })
}

pub fn pad_input(ids: &[TokenId]) -> Result<TokenSeq> {
    pad_to(ids, INPUT_LEN, SeqRole::Input)
}

pub fn pad_target(ids: &[TokenId]) -> Result<TokenSeq> {
    pad_to(ids, TARGET_LEN, SeqRole::Target)
}

/// Renders text for line-oriented dumps, with the start token written as `\n`.
pub fn escape(text: &str) -> String {
    text.replace('\n', "\\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pad_text(text: &str, f: fn(&[TokenId]) -> Result<TokenSeq>) -> String {
        decode(&f(&encode(text).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn encodes_worked_example_strings() {
        assert_eq!(encode("69PPP").unwrap(), vec![8, 11, 0, 0, 0]);
        assert_eq!(encode("15S").unwrap(), vec![3, 7, 1]);
        assert_eq!(encode("11C71").unwrap(), vec![3, 3, 13, 9, 3]);
    }

    #[test]
    fn decodes() {
        assert_eq!(decode(&[3, 7, 1]).unwrap(), "15S");
        assert_eq!(decode(&[0]).unwrap(), "P");
        assert_eq!(decode(&[12]).unwrap(), "\n");
    }

    #[test]
    fn rejects_unknown_symbols_and_ids() {
        assert!(matches!(encode("12x"), Err(Error::UnknownSymbol('x'))));
        assert!(matches!(decode(&[14]), Err(Error::OutOfRangeId(14))));
    }

    #[test]
    fn id_table_is_a_bijection() {
        for (id, &c) in SYMBOLS.iter().enumerate() {
            let t = Token::from_symbol(c).unwrap();
            assert_eq!(t.id() as usize, id);
            assert_eq!(Token::from_id(id as TokenId).unwrap(), t);
        }
        let mut sorted = SYMBOLS.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), VOCAB_SIZE);
    }

    #[test]
    fn padding() {
        assert_eq!(pad_text("3C14", pad_input), "3C14P");
        assert_eq!(pad_text("9S", pad_target), "9SP");
        assert_eq!(pad_text("18C98", pad_input), "18C98");
        assert!(matches!(
            pad_input(&encode("123456").unwrap()),
            Err(Error::TooLong { len: 6, max: 5 })
        ));
        assert!(matches!(
            pad_target(&encode("12SP").unwrap()),
            Err(Error::TooLong { .. })
        ));
    }

    #[test]
    fn unpadded_strips_suffix_only() {
        let seq = pad_input(&encode("3C14").unwrap()).unwrap();
        assert_eq!(seq.unpadded(), &encode("3C14").unwrap()[..]);
    }

    #[test]
    fn round_trip_exhaustive_up_to_len_5() {
        // 14^5 + ... + 14 strings; about 580k.
        let mut count = 0usize;
        for len in 1..=INPUT_LEN {
            let mut idx = vec![0usize; len];
            loop {
                let text: String = idx.iter().map(|&i| SYMBOLS[i]).collect();
                let ids = encode(&text).unwrap();
                assert_eq!(ids.len(), len);
                assert_eq!(decode(&ids).unwrap(), text);
                count += 1;
                let mut k = 0;
                while k < len {
                    idx[k] += 1;
                    if idx[k] < VOCAB_SIZE {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == len {
                    break;
                }
            }
        }
        assert_eq!(count, (1..=5).map(|l| 14usize.pow(l)).sum::<usize>());
    }

    #[test]
    fn padded_lengths_and_suffix_padding() {
        for text in ["1", "12", "3C1", "3C14", "18C98"] {
            let seq = pad_input(&encode(text).unwrap()).unwrap();
            assert_eq!(seq.len(), INPUT_LEN);
            let first_pad = seq.iter().position(|&i| i == Token::PAD).unwrap_or(INPUT_LEN);
            assert!(seq[first_pad..].iter().all(|&i| i == Token::PAD));
        }
    }
}
