//! Labeled utterance corpora: vote aggregation, JSONL/TSV interchange, and
//! the synthetic generator used in place of proprietary assistant logs.

mod synth;

pub use synth::{synth_corpus, synth_with_truth, MarkovSource, SynthSpec};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::ArtifactMeta;

/// Number of crowd workers per utterance.
pub const WORKERS: usize = 7;

/// Prefix of the provenance line at the top of plain-text corpora.
pub const TEXT_META_PREFIX: &str = "#chatgate-meta ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Chat,
    NonChat,
}

impl Label {
    pub fn is_chat(self) -> bool {
        self == Label::Chat
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Chat => Label::NonChat,
            Label::NonChat => Label::Chat,
        }
    }

    /// +1 for Chat, -1 for NonChat.
    pub fn sign(self) -> f64 {
        if self.is_chat() {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Chat => "Chat",
            Label::NonChat => "NonChat",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chat" => Ok(Label::Chat),
            "nonchat" | "non-chat" | "non_chat" => Ok(Label::NonChat),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub chat: u8,
    pub nonchat: u8,
}

impl Votes {
    pub fn new(chat: u8, nonchat: u8) -> Result<Self> {
        let total = chat as usize + nonchat as usize;
        if total != WORKERS {
            return Err(Error::InvalidVoteCount(total));
        }
        Ok(Votes { chat, nonchat })
    }

    pub fn label(self) -> Label {
        if self.chat as usize * 2 > WORKERS {
            Label::Chat
        } else {
            Label::NonChat
        }
    }

    pub fn majority_count(self) -> u8 {
        self.chat.max(self.nonchat)
    }
}

/// Strict-majority label of exactly seven worker votes, with the winning tally.
pub fn aggregate_votes(votes: &[Label]) -> Result<(Label, u8)> {
    if votes.len() != WORKERS {
        return Err(Error::InvalidVoteCount(votes.len()));
    }
    let chat = votes.iter().filter(|v| v.is_chat()).count() as u8;
    let v = Votes::new(chat, WORKERS as u8 - chat)?;
    Ok((v.label(), v.majority_count()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub votes: Option<Votes>,
    pub label: Label,
}

impl Utterance {
    pub fn with_votes(id: impl Into<String>, text: impl Into<String>, votes: Votes) -> Result<Self> {
        Self::build(id.into(), text.into(), Some(votes), None)
    }

    pub fn with_label(id: impl Into<String>, text: impl Into<String>, label: Label) -> Result<Self> {
        Self::build(id.into(), text.into(), None, Some(label))
    }

    fn build(id: String, text: String, votes: Option<Votes>, label: Option<Label>) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::EmptyUtterance(id));
        }
        let label = match (votes, label) {
            (Some(v), Some(l)) if v.label() != l => {
                return Err(Error::InvalidConfig(format!(
                    "utterance `{id}`: label {l} contradicts votes {}/{}",
                    v.chat, v.nonchat
                )))
            }
            (Some(v), _) => v.label(),
            (None, Some(l)) => l,
            (None, None) => {
                return Err(Error::InvalidConfig(format!(
                    "utterance `{id}` has neither label nor votes"
                )))
            }
        };
        Ok(Utterance {
            id,
            text,
            votes,
            label,
        })
    }

    pub fn majority_count(&self) -> Option<u8> {
        self.votes.map(Votes::majority_count)
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    n_chat: usize,
    n_nonchat: usize,
    pub meta: Option<ArtifactMeta>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(utterances.len());
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
        }
        let n_chat = utterances.iter().filter(|u| u.label.is_chat()).count();
        let n_nonchat = utterances.len() - n_chat;
        Ok(Corpus {
            utterances,
            n_chat,
            n_nonchat,
            meta: None,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn n_chat(&self) -> usize {
        self.n_chat
    }

    pub fn n_nonchat(&self) -> usize {
        self.n_nonchat
    }

    pub fn labels(&self) -> Vec<Label> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.text.as_str()).collect()
    }

    /// Sub-corpus of the given positions, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        let utterances: Vec<_> = indices.iter().map(|&i| self.utterances[i].clone()).collect();
        let n_chat = utterances.iter().filter(|u| u.label.is_chat()).count();
        Corpus {
            n_nonchat: utterances.len() - n_chat,
            n_chat,
            utterances,
            meta: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    votes_chat: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    votes_nonchat: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    // Accepted for compatibility with frequency-bucketed samples; unused.
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    freq_bucket: Option<serde_json::Value>,
}

fn record_to_utterance(line: usize, r: Record) -> Result<Utterance> {
    let votes = match (r.votes_chat, r.votes_nonchat) {
        (Some(c), Some(n)) => Some(Votes::new(c, n).map_err(|e| Error::parse(line, e.to_string()))?),
        (None, None) => None,
        _ => return Err(Error::parse(line, "votes_chat and votes_nonchat must appear together")),
    };
    if votes.is_none() && r.label.is_none() {
        return Err(Error::parse(line, "record has neither label nor votes"));
    }
    Utterance::build(r.id, r.text, votes, r.label).map_err(|e| match e {
        Error::EmptyUtterance(_) => e,
        other => Error::parse(line, other.to_string()),
    })
}

fn utterance_to_record(u: &Utterance) -> Record {
    Record {
        id: u.id.clone(),
        text: u.text.clone(),
        votes_chat: u.votes.map(|v| v.chat),
        votes_nonchat: u.votes.map(|v| v.nonchat),
        label: Some(u.label),
        freq_bucket: None,
    }
}

pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    read_corpus(BufReader::new(file), format)
}

pub fn read_corpus<R: Read>(reader: R, format: Format) -> Result<Corpus> {
    let reader = BufReader::new(reader);
    let mut utterances = Vec::new();
    let mut meta = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match format {
            Format::Jsonl => {
                if i == 0 {
                    if let Ok(m) = serde_json::from_str::<MetaLine>(&line) {
                        meta = Some(m.meta);
                        continue;
                    }
                }
                let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
                utterances.push(record_to_utterance(lineno, rec)?);
            }
            Format::Tsv => {
                if let Some(c) = line.strip_prefix('#') {
                    if i == 0 {
                        meta = ArtifactMeta::parse_comment(c.trim());
                    }
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if i == 0 && cols.first() == Some(&"id") && cols.get(1) == Some(&"text") {
                    continue;
                }
                utterances.push(record_to_utterance(lineno, tsv_record(lineno, &cols)?)?);
            }
        }
    }
    let mut corpus = Corpus::new(utterances)?;
    corpus.meta = meta;
    Ok(corpus)
}

fn tsv_record(line: usize, cols: &[&str]) -> Result<Record> {
    if cols.len() < 2 || cols.len() > 5 {
        return Err(Error::parse(line, format!("expected 4 or 5 tab-separated columns, got {}", cols.len())));
    }
    let num = |s: Option<&&str>| -> Result<Option<u8>> {
        match s.map(|s| s.trim()) {
            None | Some("") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(line, format!("invalid vote count `{v}`"))),
        }
    };
    let label = match cols.get(4).map(|s| s.trim()) {
        None | Some("") => None,
        Some(l) => Some(l.parse::<Label>().map_err(|e| Error::parse(line, e))?),
    };
    Ok(Record {
        id: cols[0].to_string(),
        text: cols[1].to_string(),
        votes_chat: num(cols.get(2))?,
        votes_nonchat: num(cols.get(3))?,
        label,
        freq_bucket: None,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    #[serde(rename = "_meta")]
    meta: ArtifactMeta,
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_corpus(corpus, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus<W: Write>(corpus: &Corpus, w: &mut W, format: Format) -> Result<()> {
    match format {
        Format::Jsonl => {
            if let Some(m) = &corpus.meta {
                serde_json::to_writer(&mut *w, &MetaLine { meta: m.clone() })?;
                writeln!(w)?;
            }
            for u in &corpus.utterances {
                serde_json::to_writer(&mut *w, &utterance_to_record(u))?;
                writeln!(w)?;
            }
        }
        Format::Tsv => {
            if let Some(m) = &corpus.meta {
                writeln!(w, "# {}", m.to_comment())?;
            }
            for u in &corpus.utterances {
                if u.text.contains(['\t', '\n', '\r']) || u.id.contains(['\t', '\n', '\r']) {
                    return Err(Error::Format(format!("utterance `{}` cannot be written as TSV", u.id)));
                }
                let (c, n) = u
                    .votes
                    .map(|v| (v.chat.to_string(), v.nonchat.to_string()))
                    .unwrap_or_default();
                writeln!(w, "{}\t{}\t{}\t{}\t{}", u.id, u.text, c, n, u.label)?;
            }
        }
    }
    Ok(())
}

/// Map from majority vote count to number of utterances.
pub fn vote_histogram(corpus: &Corpus) -> Result<BTreeMap<u8, usize>> {
    let mut hist = BTreeMap::new();
    for u in corpus.utterances() {
        let mc = u.majority_count().ok_or_else(|| Error::MissingVotes(u.id.clone()))?;
        *hist.entry(mc).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Read a plain-text corpus, one utterance per line, skipping blank lines and
/// a leading provenance line.
pub fn load_text_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(i, l)| !(*i == 0 && l.starts_with(TEXT_META_PREFIX)))
        .map(|(_, l)| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn save_text_lines<S: AsRef<str>>(lines: &[S], path: &Path, meta: Option<&ArtifactMeta>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    if let Some(m) = meta {
        writeln!(w, "{TEXT_META_PREFIX}{}", m.to_comment())?;
    }
    for l in lines {
        writeln!(w, "{}", l.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(chat: usize, nonchat: usize) -> Vec<Label> {
        let mut v = vec![Label::Chat; chat];
        v.extend(std::iter::repeat(Label::NonChat).take(nonchat));
        v
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_votes(&votes(5, 2)).unwrap(), (Label::Chat, 5));
        assert_eq!(aggregate_votes(&votes(7, 0)).unwrap(), (Label::Chat, 7));
        assert_eq!(aggregate_votes(&votes(3, 4)).unwrap(), (Label::NonChat, 4));
        assert!(matches!(aggregate_votes(&votes(3, 3)), Err(Error::InvalidVoteCount(6))));
        assert!(matches!(aggregate_votes(&votes(5, 3)), Err(Error::InvalidVoteCount(8))));
    }

    #[test]
    fn aggregate_flips_iff_four_flip() {
        for chat in 0..=7usize {
            let base = votes(7, 0);
            let mut v = base.clone();
            for x in v.iter_mut().take(chat) {
                *x = x.flip();
            }
            let (label, mc) = aggregate_votes(&v).unwrap();
            assert_eq!(label == Label::NonChat, chat >= 4);
            assert!((4..=7).contains(&mc));
        }
    }

    #[test]
    fn load_two_valid_lines() {
        let data = r#"{"id":"a","text":"hello there","votes_chat":5,"votes_nonchat":2}
{"id":"b","text":"weather tokyo","label":"NonChat"}
"#;
        let c = read_corpus(data.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.utterances()[0].label, Label::Chat);
        assert_eq!(c.utterances()[0].majority_count(), Some(5));
        assert_eq!(c.utterances()[1].votes, None);
        assert_eq!((c.n_chat(), c.n_nonchat()), (1, 1));
    }

    #[test]
    fn load_errors() {
        let missing = "{\"id\":\"a\",\"text\":\"hi\"}\n";
        assert!(matches!(read_corpus(missing.as_bytes(), Format::Jsonl), Err(Error::Parse { line: 1, .. })));

        let bad_json = "{\"id\":\"a\",\"text\":\"hi\",\"label\":\"Chat\"}\n{oops\n";
        assert!(matches!(read_corpus(bad_json.as_bytes(), Format::Jsonl), Err(Error::Parse { line: 2, .. })));

        let dup = "{\"id\":\"a\",\"text\":\"hi\",\"label\":\"Chat\"}\n{\"id\":\"a\",\"text\":\"yo\",\"label\":\"Chat\"}\n";
        assert!(matches!(read_corpus(dup.as_bytes(), Format::Jsonl), Err(Error::DuplicateId(id)) if id == "a"));

        let empty = "{\"id\":\"a\",\"text\":\"   \",\"label\":\"Chat\"}\n";
        assert!(matches!(read_corpus(empty.as_bytes(), Format::Jsonl), Err(Error::EmptyUtterance(_))));

        let contradict = "{\"id\":\"a\",\"text\":\"x\",\"votes_chat\":5,\"votes_nonchat\":2,\"label\":\"NonChat\"}\n";
        assert!(matches!(read_corpus(contradict.as_bytes(), Format::Jsonl), Err(Error::Parse { .. })));

        let bad_sum = "{\"id\":\"a\",\"text\":\"x\",\"votes_chat\":5,\"votes_nonchat\":3}\n";
        assert!(matches!(read_corpus(bad_sum.as_bytes(), Format::Jsonl), Err(Error::Parse { .. })));
    }

    #[test]
    fn tsv_reads_header_and_optional_label() {
        let data = "id\ttext\tvotes_chat\tvotes_nonchat\nu1\tlet's talk\t6\t1\nu2\tvolume up\t\t\tNonChat\n";
        let c = read_corpus(data.as_bytes(), Format::Tsv).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.utterances()[0].label, Label::Chat);
        assert_eq!(c.utterances()[1].label, Label::NonChat);
        assert!(read_corpus("u1\tx\tseven\t0\n".as_bytes(), Format::Tsv).is_err());
    }

    #[test]
    fn histogram() {
        let one = Corpus::new(vec![Utterance::with_votes("a", "hi", Votes::new(7, 0).unwrap()).unwrap()]).unwrap();
        assert_eq!(vote_histogram(&one).unwrap(), BTreeMap::from([(7, 1)]));
        assert!(vote_histogram(&Corpus::default()).unwrap().is_empty());
        let nov = Corpus::new(vec![Utterance::with_label("a", "hi", Label::Chat).unwrap()]).unwrap();
        assert!(matches!(vote_histogram(&nov), Err(Error::MissingVotes(_))));
    }

    #[test]
    fn meta_line_survives_round_trip() {
        let mut c = Corpus::new(vec![Utterance::with_label("a", "hi", Label::Chat).unwrap()]).unwrap();
        c.meta = Some(ArtifactMeta::new(&"cfg", 9));
        for fmt in [Format::Jsonl, Format::Tsv] {
            let mut buf = Vec::new();
            write_corpus(&c, &mut buf, fmt).unwrap();
            let back = read_corpus(buf.as_slice(), fmt).unwrap();
            assert_eq!(back, c);
        }
    }
}
