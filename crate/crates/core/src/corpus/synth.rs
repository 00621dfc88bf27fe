use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Label, Utterance, Votes, WORKERS};
use crate::error::{Error, Result};

const MAX_LEN: usize = 40;
const BOUNDARY: char = '\u{2}';

const CHAT_TEMPLATES: &[&str] = &[
    "i am so tired today",
    "i'm hungry",
    "let's talk about something",
    "do you like me",
    "you are so funny",
    "what is your favorite food",
    "i love you",
    "good morning",
    "good night",
    "how are you doing",
    "i feel lonely",
    "tell me a joke",
    "are you a robot",
    "thank you so much",
    "i'm bored",
    "what do you think about love",
    "can you sing a song for me",
    "i had a bad day",
    "you're cute",
    "do you have a boyfriend",
    "i want to go home",
    "that's funny",
    "i'm sleepy",
    "who are you",
    "do you dream",
    "i miss you",
    "what are you doing now",
    "halloween has already finished",
    "i'm so happy today",
    "you are smart",
    "nice to meet you",
    "let's be friends",
    "why are you so cold to me",
    "i don't want to work",
    "are you happy",
    "i like cats",
    "say something",
    "how old are you",
    "do you love me",
    "i'm sad",
    "hello",
    "hi",
    "yes",
    "no way",
    "haha",
    "lol",
    "wow",
    "me too",
];

const NONCHAT_TEMPLATES: &[&str] = &[
    "weather in tokyo",
    "set an alarm for 7 am",
    "volume up",
    "call mom",
    "tokyo tower",
    "pizza near me",
    "train to osaka",
    "stock price of sony",
    "timer 3 minutes",
    "open camera",
    "turn off wifi",
    "nearest station",
    "shibuya",
    "baseball scores",
    "news today",
    "convert 5 dollars to yen",
    "traffic on route 246",
    "mount fuji height",
    "restaurant in shinjuku",
    "play music",
    "call to office",
    "brightness down",
    "navigation to home",
    "kyoto hotels",
    "population of japan",
    "iphone 7 price",
    "map of osaka",
    "bus schedule",
    "mute",
    "send email to john",
    "flight jl 123 status",
    "hospital open now",
    "umbrella forecast tomorrow",
    "starbucks",
    "recipe curry",
    "movie times",
    "amazon",
    "yokohama weather",
    "wikipedia einstein",
    "battery saver on",
    "nhk",
    "sapporo",
    "gmail",
    "alarm 6:30",
    "osaka castle",
    "ginza",
    "sony",
    "zoo",
];

/// Character Markov chain used to generate stylistically coherent text.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    order: usize,
    // history (boundary-padded) -> cumulative (next, count) list; `None` ends the line
    table: BTreeMap<Vec<char>, Vec<(Option<char>, u32)>>,
}

impl MarkovSource {
    pub fn from_lines<S: AsRef<str>>(lines: &[S], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidSpec("Markov order must be at least 1".into()));
        }
        let mut counts: BTreeMap<Vec<char>, BTreeMap<Option<char>, u32>> = BTreeMap::new();
        for line in lines {
            let chars: Vec<char> = line.as_ref().chars().collect();
            if chars.is_empty() {
                continue;
            }
            let mut hist = vec![BOUNDARY; order];
            for next in chars.iter().copied().map(Some).chain([None]) {
                *counts.entry(hist.clone()).or_default().entry(next).or_insert(0) += 1;
                if let Some(ch) = next {
                    hist.remove(0);
                    hist.push(ch);
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidSpec("Markov source needs at least one nonempty line".into()));
        }
        let table = counts.into_iter().map(|(h, m)| (h, m.into_iter().collect())).collect();
        Ok(MarkovSource { order, table })
    }

    /// First-person conversational profile.
    pub fn chat_profile() -> Self {
        Self::from_lines(CHAT_TEMPLATES, 2).expect("builtin templates are nonempty")
    }

    /// Entity, keyword, and device-command profile.
    pub fn nonchat_profile() -> Self {
        Self::from_lines(NONCHAT_TEMPLATES, 2).expect("builtin templates are nonempty")
    }

    /// One line of 1..=40 characters with no leading/trailing whitespace.
    pub fn generate<R: Rng>(&self, rng: &mut R) -> String {
        loop {
            let mut hist = vec![BOUNDARY; self.order];
            let mut out = String::new();
            let mut len = 0;
            while len < MAX_LEN {
                let Some(nexts) = self.table.get(&hist) else { break };
                let total: u32 = nexts.iter().map(|(_, c)| c).sum();
                let mut pick = rng.gen_range(0..total);
                let mut chosen = None;
                for &(c, n) in nexts {
                    if pick < n {
                        chosen = c;
                        break;
                    }
                    pick -= n;
                }
                let Some(ch) = chosen else { break };
                out.push(ch);
                len += 1;
                hist.remove(0);
                hist.push(ch);
            }
            let trimmed = out.trim();
            if !trimmed.is_empty() {
                return trimmed.to_string();
            }
        }
    }

    pub fn generate_lines(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.generate(&mut rng)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_chat: usize,
    pub n_nonchat: usize,
    pub chat_source: MarkovSource,
    pub nonchat_source: MarkovSource,
    /// Per-worker probability of voting against the true label.
    pub vote_noise: f64,
    /// Fraction of utterances drawn from the mixed source instead of their class source.
    pub ambiguity: f64,
    /// Per-worker noise applied to ambiguous utterances.
    pub ambiguous_vote_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_chat: usize, n_nonchat: usize, vote_noise: f64, seed: u64) -> Self {
        SynthSpec {
            n_chat,
            n_nonchat,
            chat_source: MarkovSource::chat_profile(),
            nonchat_source: MarkovSource::nonchat_profile(),
            vote_noise,
            ambiguity: 0.0,
            ambiguous_vote_noise: 0.35,
            seed,
        }
    }

    pub fn with_ambiguity(mut self, fraction: f64, vote_noise: f64) -> Self {
        self.ambiguity = fraction;
        self.ambiguous_vote_noise = vote_noise;
        self
    }

    fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64, hi: f64| {
            if !(0.0..=hi).contains(&p) {
                Err(Error::InvalidSpec(format!("{name} must lie in [0, {hi}], got {p}")))
            } else {
                Ok(())
            }
        };
        prob("vote_noise", self.vote_noise, 0.5)?;
        prob("ambiguous_vote_noise", self.ambiguous_vote_noise, 0.5)?;
        prob("ambiguity", self.ambiguity, 1.0)
    }
}

/// Deterministic synthetic corpus: texts from the class sources, seven noisy
/// worker votes per utterance, labels re-aggregated from the votes.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    synth_with_truth(spec).map(|(c, _)| c)
}

/// Like [`synth_corpus`], also returning the generator's source label for each
/// utterance (in corpus order), before vote noise.
pub fn synth_with_truth(spec: &SynthSpec) -> Result<(Corpus, Vec<Label>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mixed = if spec.ambiguity > 0.0 {
        let chat = spec.chat_source.generate_lines(200, spec.seed ^ 0xa5a5);
        let non = spec.nonchat_source.generate_lines(200, spec.seed ^ 0x5a5a);
        let all: Vec<&String> = chat.iter().chain(non.iter()).collect();
        Some(MarkovSource::from_lines(&all, 2)?)
    } else {
        None
    };

    let truths = std::iter::repeat_n(Label::Chat, spec.n_chat)
        .chain(std::iter::repeat_n(Label::NonChat, spec.n_nonchat));
    let mut rows = Vec::with_capacity(spec.n_chat + spec.n_nonchat);
    for truth in truths {
        let ambiguous = mixed.is_some() && rng.gen::<f64>() < spec.ambiguity;
        let (text, noise) = match &mixed {
            Some(m) if ambiguous => (m.generate(&mut rng), spec.ambiguous_vote_noise),
            _ => {
                let src = if truth.is_chat() { &spec.chat_source } else { &spec.nonchat_source };
                (src.generate(&mut rng), spec.vote_noise)
            }
        };
        let agree = (0..WORKERS).filter(|_| rng.gen::<f64>() >= noise).count() as u8;
        let disagree = WORKERS as u8 - agree;
        let votes = if truth.is_chat() {
            Votes::new(agree, disagree)?
        } else {
            Votes::new(disagree, agree)?
        };
        rows.push((text, votes, truth));
    }
    rows.shuffle(&mut rng);
    let mut truths = Vec::with_capacity(rows.len());
    let mut utterances = Vec::with_capacity(rows.len());
    for (i, (text, votes, truth)) in rows.into_iter().enumerate() {
        utterances.push(Utterance::with_votes(format!("u{i:06}"), text, votes)?);
        truths.push(truth);
    }
    Ok((Corpus::new(utterances)?, truths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let spec = SynthSpec::new(30, 40, 0.2, 1);
        assert_eq!(synth_corpus(&spec).unwrap(), synth_corpus(&spec).unwrap());
        let other = SynthSpec::new(30, 40, 0.2, 2);
        assert_ne!(synth_corpus(&spec).unwrap(), synth_corpus(&other).unwrap());
    }

    #[test]
    fn zero_noise_is_unanimous() {
        let c = synth_corpus(&SynthSpec::new(50, 50, 0.0, 3)).unwrap();
        assert!(c.utterances().iter().all(|u| u.majority_count() == Some(7)));
        assert_eq!((c.n_chat(), c.n_nonchat()), (50, 50));
    }

    #[test]
    fn lengths_within_bounds() {
        let c = synth_corpus(&SynthSpec::new(200, 200, 0.1, 4)).unwrap();
        for u in c.utterances() {
            let n = u.char_len();
            assert!((1..=MAX_LEN).contains(&n), "{:?}", u.text);
            assert_eq!(u.text.trim(), u.text);
        }
    }

    #[test]
    fn rejects_excess_noise() {
        assert!(matches!(synth_corpus(&SynthSpec::new(1, 1, 0.51, 0)), Err(Error::InvalidSpec(_))));
        assert!(matches!(synth_corpus(&SynthSpec::new(1, 1, -0.1, 0)), Err(Error::InvalidSpec(_))));
    }
}
