use std::collections::HashMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token table. Indices follow first appearance in the source texts, after
/// the three special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in ["<pad>", "<unk>", "<sep>"] {
            v.push(special.to_string());
        }
        for text in texts {
            for t in tokenize(text) {
                if !v.index.contains_key(&t) {
                    v.push(t);
                }
            }
        }
        v
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_on_punctuation() {
        assert_eq!(
            tokenize("Square. You see: box, merchant (worn)."),
            vec!["square", "you", "see", "box", "merchant", "worn"]
        );
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn stable_ordering_and_unknowns() {
        let a = Vocab::build(["b a", "c a"]);
        let b = Vocab::build(["b a", "c a"]);
        assert_eq!(a, b);
        assert_eq!(a.id("b"), 3);
        assert_eq!(a.id("a"), 4);
        assert_eq!(a.id("c"), 5);
        assert_eq!(a.id("zebra"), UNK);
        assert_eq!(a.encode("a zebra"), vec![4, UNK]);
        assert_eq!(a.token(PAD), "<pad>");
        assert_eq!(a.token(SEP), "<sep>");
    }
}
