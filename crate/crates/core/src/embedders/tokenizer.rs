use super::EmbedError;

/// One token per UTF-8 byte.
pub const BYTE_VOCAB_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn tokenize(text: &str) -> Result<TokenSequence, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    Ok(TokenSequence {
        ids: text.bytes().map(u32::from).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_tokens() {
        assert_eq!(tokenize("ab").unwrap().ids, vec![97, 98]);
        assert_eq!(tokenize("x0:0.32").unwrap().len(), 7);
        assert_eq!(tokenize("é").unwrap().ids, vec![0xc3, 0xa9]);
        assert_eq!(tokenize("{x0:1}").unwrap(), tokenize("{x0:1}").unwrap());
        assert!(matches!(tokenize(""), Err(EmbedError::EmptyInput)));
    }
}
