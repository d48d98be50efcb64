//! Length measurement. The default unit is whitespace-delimited tokens;
//! provider tokenizers can be registered under their own ids.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub const DEFAULT_TOKENIZER: &str = "whitespace";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown tokenizer {0}")]
pub struct UnknownTokenizer(pub String);

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

impl<F: Fn(&str) -> usize + Send + Sync> Tokenizer for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

#[derive(Clone)]
pub struct TokenizerRegistry {
    tokenizers: HashMap<String, Arc<dyn Tokenizer>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut tokenizers: HashMap<String, Arc<dyn Tokenizer>> = HashMap::new();
        tokenizers.insert(DEFAULT_TOKENIZER.to_string(), Arc::new(WhitespaceTokenizer));
        TokenizerRegistry { tokenizers }
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, id: impl Into<String>, tokenizer: Arc<dyn Tokenizer>) {
        self.tokenizers.insert(id.into(), tokenizer);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Tokenizer>, UnknownTokenizer> {
        self.tokenizers
            .get(id)
            .cloned()
            .ok_or_else(|| UnknownTokenizer(id.to_string()))
    }

    pub fn measure(&self, text: &str, id: &str) -> Result<usize, UnknownTokenizer> {
        Ok(self.get(id)?.count(text))
    }
}

/// Token count of `text` under one of the built-in tokenizers.
pub fn measure_length(text: &str, tokenizer_id: &str) -> Result<usize, UnknownTokenizer> {
    match tokenizer_id {
        DEFAULT_TOKENIZER => Ok(WhitespaceTokenizer.count(text)),
        other => Err(UnknownTokenizer(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_counts() {
        assert_eq!(measure_length("a b  c", "whitespace").unwrap(), 3);
        assert_eq!(measure_length("", "whitespace").unwrap(), 0);
        assert_eq!(measure_length(" \n\t ", "whitespace").unwrap(), 0);
        assert_eq!(
            measure_length("x", "gpt2").unwrap_err(),
            UnknownTokenizer("gpt2".into())
        );
    }

    #[test]
    fn registry_accepts_custom_tokenizers() {
        let mut reg = TokenizerRegistry::default();
        reg.register("chars", Arc::new(|t: &str| t.chars().count()));
        assert_eq!(reg.measure("abc d", "chars").unwrap(), 5);
        assert_eq!(reg.measure("abc d", "whitespace").unwrap(), 2);
        assert!(reg.measure("abc", "bpe").is_err());
    }
}
