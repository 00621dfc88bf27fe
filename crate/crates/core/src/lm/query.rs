use std::collections::HashSet;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::corpus::load_text_lines;
use crate::error::Result;

/// NFKC, lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_query(s: &str) -> String {
    let folded: String = s.nfkc().collect::<String>().to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dictionary of normalized search queries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: HashSet<String>,
}

impl QuerySet {
    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Self {
        QuerySet {
            queries: lines
                .iter()
                .map(|l| normalize_query(l.as_ref()))
                .filter(|q| !q.is_empty())
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_lines(&load_text_lines(path)?))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.queries.contains(&normalize_query(text))
    }
}

/// 1 if the normalized utterance is in the query set, else 0.
pub fn query_presence(text: &str, qs: &QuerySet) -> u8 {
    qs.contains(text) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presence_examples() {
        let qs = QuerySet::from_lines(&["tokyo tower", "Weather  Osaka"]);
        assert_eq!(query_presence("Tokyo Tower", &qs), 1);
        assert_eq!(query_presence("  tokyo   tower ", &qs), 1);
        assert_eq!(query_presence("weather osaka", &qs), 1);
        assert_eq!(query_presence("i love you", &qs), 0);
        // full-width letters fold under NFKC
        assert_eq!(query_presence("ＴＯＫＹＯ tower", &qs), 1);
    }

    proptest! {
        #[test]
        fn idempotent_under_normalization(s in "[ a-zA-Z\\u{3000}\\u{FF21}-\\u{FF3A}]{0,12}", q in "[a-z ]{1,8}") {
            let qs = QuerySet::from_lines(&[q.as_str(), s.as_str()]);
            prop_assert_eq!(query_presence(&s, &qs), query_presence(&normalize_query(&s), &qs));
            prop_assert_eq!(normalize_query(&normalize_query(&s)), normalize_query(&s));
        }
    }
}
