//! Seeded synthetic corpora.
//!
//! * [`generate`]: a templated ten-intent game corpus (one intent is
//!   out-of-scope side talk) with `number` and `plant` entities.
//! * [`generate_shifted`]: a deployment-like counterpart of the same
//!   inventory with a larger out-of-scope share, perturbed vocabulary,
//!   shorter utterances and optionally vanished intents.
//! * [`shaped_corpus`]: corpora of pseudo-words that hit prescribed counts
//!   (samples per intent, total words, vocabulary, length range) exactly.
//! * [`centroid_provider`]: a sentence-table provider whose vectors are the
//!   intent's centroid plus Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EntitySpan, Utterance};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_OOS_LABEL;
use crate::featurizer::{normalize_key, DenseProvider};
use crate::hash::Fnv1a;

const NUMBERS: &[&str] = &[
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    "thirty", "forty",
];
const FLOWERS: &[&str] = &["flowers", "roses", "tulips", "daisies", "sunflowers", "lilies"];
const COLORS: &[&str] = &["red", "yellow", "pink", "purple", "blue", "white", "pretty", "colorful"];
const VALID: &[&str] = &["trees", "bushes", "butterflies", "birds", "grass", "bees", "rocks", "mushrooms", "a pond"];
const FRIENDS: &[&str] = &["oscar", "buddy", "teddy"];
const THINGS: &[&str] = &["shoes", "pencil", "backpack", "snack", "jacket", "drawing", "lunch box", "water bottle"];
const PEOPLE: &[&str] = &["mom", "my sister", "the teacher", "my dog", "grandma", "my friend"];
const PLACES: &[&str] = &["the bathroom", "recess", "the park", "home", "the library", "lunch"];
const PREFIXES: &[&str] = &["um", "uh", "okay", "so", "hey"];

/// One template slot: its marker in the pattern, the filler list and the
/// entity type the filler is annotated with, if any.
const SLOTS: &[(&str, &[&str], Option<&str>)] = &[
    ("{num}", NUMBERS, Some("number")),
    ("{num2}", NUMBERS, Some("number")),
    ("{flower}", FLOWERS, Some("plant")),
    ("{valid}", VALID, Some("plant")),
    ("{color}", COLORS, None),
    ("{friend}", FRIENDS, None),
    ("{thing}", THINGS, None),
    ("{person}", PEOPLE, None),
    ("{place}", PLACES, None),
];

fn templates(intent: &str) -> &'static [&'static str] {
    match intent {
        "affirm" => &[
            "yes", "yeah", "yes please", "sure", "okay let's do it", "of course", "sounds good",
            "yep we can", "yes {friend}", "yeah let's do that", "alright", "sure thing {friend}",
            "definitely", "yes we are ready", "uh huh", "yeah sure",
        ],
        "deny" => &[
            "no", "nope", "no thanks", "i don't want to", "not now", "no way", "no {friend}",
            "not yet", "we are not ready", "no we don't", "nah", "i don't think so", "never",
        ],
        "counting" => &[
            "{num}", "{num} {num2}", "{num} {num2} {num}", "we have {num}", "that's {num}",
            "i counted {num}", "{num} and {num2}", "now {num}", "count with me {num} {num2}",
            "{num} {flower}", "it is {num}",
        ],
        "answer-flowers" => &[
            "{flower}", "{color} {flower}", "we can add {flower}", "some {flower}", "maybe {flower}",
            "i think {flower}", "let's plant {flower}", "lots of {color} {flower}", "{flower} smell nice",
            "how about {flower}",
        ],
        "answer-valid" => &[
            "{valid}", "maybe {valid}", "we could add {valid}", "some {valid}", "i want {valid}",
            "what about {valid}", "{valid} would be nice", "let's put {valid} there",
        ],
        "intro-game" => &[
            "the big pot holds ten flowers",
            "the small pots are for ones",
            "put {num} flowers in the big pot",
            "each big pot is a group of ten",
            "use the small pots for the ones",
            "let's fill the big pots first",
            "we need {num} flowers for the meadow",
            "tap the pot to plant a flower",
            "count the tens and then the ones",
            "help {friend} fill the pots",
            "first take turns planting",
            "remember big pots are tens",
        ],
        "ask-number" => &[
            "how many flowers do we need", "what number is that", "how many do we have",
            "is it {num}", "how many is that", "what's the number", "how many more",
            "do we need {num}", "how many {flower} are there", "what number do we need {friend}",
        ],
        "help-affirm" => &[
            "can you help us", "{friend} help please", "we need help", "help me {friend}",
            "please help", "can you give us a hint", "i need a hint", "{friend} can you help",
            "help us please", "we need some help {friend}",
        ],
        "next-step" => &[
            "next", "let's go to the next one", "skip this", "next please", "what's next",
            "move on", "can we skip", "go to the next game", "let's do the next part", "next one {friend}",
        ],
        "out-of-scope" => &[
            "i need to go to {place}", "look at my {thing}", "stop it", "it's my turn",
            "where is {person}", "i like your {thing}", "can i have my {thing}", "{person} is picking me up",
            "i'm hungry", "when is {place}", "that's mine", "give it back", "i lost my {thing}",
            "we went to {place} yesterday", "my {thing} is {color}", "you're standing on my {thing}",
            "i'm tired", "can we go to {place}", "my tooth is wiggly", "i saw {person} at {place}",
        ],
        _ => &[],
    }
}

/// Side-talk patterns that only appear in shifted corpora.
const SHIFT_OOS: &[&str] = &[
    "guys sit down please", "who wants to go first", "raise your hand", "everyone look over here",
    "good job guys", "let's be quiet now", "is the camera on", "wait for your friend",
    "sit on your spot", "do you want a turn", "careful with the cable", "shh listen",
    "she took my spot", "can i go next", "he is being silly", "what time is it",
];

/// Replacement spellings applied by vocabulary perturbation.
const VARIANTS: &[(&str, &[&str])] = &[
    ("yes", &["yess", "yea", "ya"]),
    ("yeah", &["yah", "yea"]),
    ("no", &["noo", "naw"]),
    ("flowers", &["flower", "flowerz"]),
    ("okay", &["ok", "k"]),
    ("help", &["halp", "helps"]),
    ("please", &["pls", "plz"]),
    ("the", &["da", "teh"]),
    ("we", &["us", "wee"]),
    ("what", &["wut", "wat"]),
    ("next", &["nex"]),
    ("how", &["hw"]),
    ("many", &["much"]),
    ("number", &["numba"]),
];

pub const SYNTH_INTENTS: &[&str] = &[
    "affirm",
    "answer-flowers",
    "answer-valid",
    "ask-number",
    "counting",
    "deny",
    "help-affirm",
    "intro-game",
    "next-step",
    DEFAULT_OOS_LABEL,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub per_intent: usize,
    pub seed: u64,
    /// Chance of prepending a filler like "um" or addressing the agent.
    pub prefix_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_intent: 60,
            seed: 0,
            prefix_prob: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    /// Multiplier on the out-of-scope share of the clean corpus.
    pub oos_factor: f64,
    /// Per-word chance of a spelling variant or typo.
    pub perturb_prob: f64,
    /// Per-utterance chance of dropping words.
    pub shorten_prob: f64,
    /// Fraction of out-of-scope rows drawn from patterns unseen in training.
    pub novel_oos_share: f64,
    /// Intents that never occur in the shifted corpus.
    pub drop_intents: Vec<String>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            oos_factor: 2.0,
            perturb_prob: 0.25,
            shorten_prob: 0.5,
            novel_oos_share: 0.5,
            drop_intents: vec!["next-step".to_string()],
        }
    }
}

/// Fills one pattern, returning the text and its entity spans.
fn fill(pattern: &str, rng: &mut ChaCha8Rng) -> (String, Vec<EntitySpan>) {
    let mut text = String::new();
    let mut entities = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("closed slot");
        let marker = &rest[open..=close];
        let (_, fillers, entity) = SLOTS
            .iter()
            .find(|(m, _, _)| *m == marker)
            .unwrap_or_else(|| panic!("unknown slot {marker}"));
        let value = *fillers.choose(rng).expect("non-empty fillers");
        let start = text.chars().count();
        text.push_str(value);
        if let Some(entity) = entity {
            entities.push(EntitySpan {
                start,
                end: start + value.chars().count(),
                entity: entity.to_string(),
                value: value.to_string(),
            });
        }
        rest = &rest[close + 1..];
    }
    text.push_str(rest);
    (text, entities)
}

fn shift_spans(entities: &mut [EntitySpan], by: usize) {
    for e in entities {
        e.start += by;
        e.end += by;
    }
}

fn sample_intent(
    intent: &str,
    n: usize,
    prefix_prob: f64,
    seen: &mut BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, Vec<EntitySpan>)> {
    let pats = templates(intent);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 200 * n.max(1) {
        attempts += 1;
        let (mut text, mut ents) = fill(pats.choose(rng).expect("templates"), rng);
        if rng.random::<f64>() < prefix_prob {
            let prefix = if rng.random::<bool>() {
                *PREFIXES.choose(rng).unwrap()
            } else {
                *FRIENDS.choose(rng).unwrap()
            };
            shift_spans(&mut ents, prefix.chars().count() + 1);
            text = format!("{prefix} {text}");
        }
        if seen.insert(text.clone()) {
            out.push((text, ents));
        }
    }
    if out.len() < n {
        log::warn!("intent {intent}: only {} distinct utterances generated", out.len());
    }
    out
}

/// The clean templated corpus: `per_intent` distinct utterances for each of
/// [`SYNTH_INTENTS`].
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = BTreeSet::new();
    let mut utts = Vec::new();
    for intent in SYNTH_INTENTS {
        for (i, (text, entities)) in sample_intent(intent, cfg.per_intent, cfg.prefix_prob, &mut seen, &mut rng)
            .into_iter()
            .enumerate()
        {
            let mut u = Utterance::new(format!("{intent}-{i:04}"), text, *intent);
            u.entities = entities;
            utts.push(u);
        }
    }
    Dataset::new(format!("synth-{}", cfg.seed), utts)
}

fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 3 {
        return format!("{word}{}", chars[chars.len() - 1]);
    }
    let mut c = chars.clone();
    let i = rng.random_range(0..c.len() - 1);
    if rng.random::<bool>() {
        c.swap(i, i + 1);
    } else {
        c.remove(i + 1);
    }
    c.into_iter().collect()
}

fn perturb(text: &str, cfg: &ShiftConfig, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if words.len() > 1 && rng.random::<f64>() < cfg.shorten_prob {
        let keep = rng.random_range(1..words.len());
        let start = rng.random_range(0..=words.len() - keep);
        words = words[start..start + keep].to_vec();
    }
    for w in &mut words {
        if rng.random::<f64>() >= cfg.perturb_prob {
            continue;
        }
        *w = match VARIANTS.iter().find(|(k, _)| *k == w.as_str()) {
            Some((_, alts)) => alts.choose(rng).unwrap().to_string(),
            None => typo(w, rng),
        };
    }
    words.join(" ")
}

/// A deployment-like corpus over the same inventory (minus
/// `shift.drop_intents`). It keeps the clean corpus size, multiplies the
/// out-of-scope share by `shift.oos_factor`, and perturbs and shortens
/// utterances. Entity annotations are not kept.
pub fn generate_shifted(cfg: &SynthConfig, shift: &ShiftConfig) -> Result<Dataset> {
    if !(shift.oos_factor > 0.0) {
        return Err(Error::Config("oos_factor must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_4946_5421);
    let total = cfg.per_intent * SYNTH_INTENTS.len();
    let clean_share = 1.0 / SYNTH_INTENTS.len() as f64;
    let n_oos = ((clean_share * shift.oos_factor).min(1.0) * total as f64).round() as usize;
    let kept: Vec<&str> = SYNTH_INTENTS
        .iter()
        .copied()
        .filter(|i| *i != DEFAULT_OOS_LABEL && !shift.drop_intents.iter().any(|d| d == i))
        .collect();
    let per_other = if kept.is_empty() { 0 } else { (total - n_oos.min(total)) / kept.len() };

    let mut seen = BTreeSet::new();
    let mut rows: Vec<(String, &str)> = Vec::new();
    for intent in &kept {
        for (text, _) in sample_intent(intent, per_other, cfg.prefix_prob, &mut seen, &mut rng) {
            rows.push((perturb(&text, shift, &mut rng), intent));
        }
    }
    let n_novel = (n_oos as f64 * shift.novel_oos_share).round() as usize;
    for (text, _) in sample_intent(DEFAULT_OOS_LABEL, n_oos - n_novel, cfg.prefix_prob, &mut seen, &mut rng) {
        rows.push((perturb(&text, shift, &mut rng), DEFAULT_OOS_LABEL));
    }
    for _ in 0..n_novel {
        let (text, _) = fill(SHIFT_OOS.choose(&mut rng).unwrap(), &mut rng);
        rows.push((perturb(&text, shift, &mut rng), DEFAULT_OOS_LABEL));
    }
    let utts = rows
        .into_iter()
        .enumerate()
        .map(|(i, (text, intent))| Utterance::new(format!("shift-{i:05}"), text, intent))
        .collect();
    Dataset::new(format!("synth-{}-shifted", cfg.seed), utts)
}

/// Target counts for [`shaped_corpus`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusShape {
    pub name: String,
    pub class_counts: Vec<(String, usize)>,
    pub total_words: usize,
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl CorpusShape {
    pub fn n_samples(&self) -> usize {
        self.class_counts.iter().map(|(_, n)| n).sum()
    }

    fn new(name: &str, counts: &[(&str, usize)], words: usize, vocab: usize, min: usize, max: usize) -> Self {
        CorpusShape {
            name: name.to_string(),
            class_counts: counts.iter().map(|(l, n)| (l.to_string(), *n)).collect(),
            total_words: words,
            vocab_size: vocab,
            min_words: min,
            max_words: max,
        }
    }

    pub fn planting_poc() -> Self {
        Self::new(
            "planting-poc",
            &[
                ("intro-meadow", 23),
                ("answer-flowers", 110),
                ("answer-valid", 176),
                ("answer-invalid", 95),
                ("intro-game", 134),
                ("help-affirm", 41),
                ("everyone-understand", 22),
                ("oscar-understand", 25),
                ("ask-number", 34),
                ("counting", 418),
                ("affirm", 144),
                ("deny", 125),
                ("next-step", 25),
                (DEFAULT_OOS_LABEL, 555),
            ],
            10141,
            1314,
            1,
            74,
        )
    }

    pub fn planting_deployment() -> Self {
        Self::new(
            "planting-deployment",
            &[
                ("intro-meadow", 7),
                ("answer-flowers", 13),
                ("answer-valid", 17),
                ("intro-game", 78),
                ("help-affirm", 4),
                ("everyone-understand", 11),
                ("oscar-understand", 15),
                ("ask-number", 18),
                ("counting", 581),
                ("affirm", 370),
                ("deny", 54),
                (DEFAULT_OOS_LABEL, 1005),
            ],
            10433,
            772,
            1,
            45,
        )
    }

    pub fn watering_poc() -> Self {
        Self::new(
            "watering-poc",
            &[
                ("answer-water", 69),
                ("answer-valid", 201),
                ("answer-invalid", 91),
                ("intro-game", 102),
                ("everyone-understand", 44),
                ("oscar-understand", 25),
                ("ask-number", 73),
                ("counting", 476),
                ("affirm", 165),
                ("deny", 157),
                ("next-step", 34),
                (DEFAULT_OOS_LABEL, 601),
                ("goodbye", 77),
            ],
            10469,
            1267,
            1,
            65,
        )
    }

    pub fn watering_deployment() -> Self {
        Self::new(
            "watering-deployment",
            &[
                ("answer-water", 9),
                ("answer-valid", 6),
                ("intro-game", 30),
                ("everyone-understand", 11),
                ("oscar-understand", 15),
                ("ask-number", 21),
                ("counting", 581),
                ("affirm", 370),
                ("deny", 54),
                (DEFAULT_OOS_LABEL, 1005),
                ("goodbye", 20),
            ],
            9508,
            743,
            1,
            44,
        )
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "planting-poc" => Some(Self::planting_poc()),
            "planting-deployment" => Some(Self::planting_deployment()),
            "watering-poc" => Some(Self::watering_poc()),
            "watering-deployment" => Some(Self::watering_deployment()),
            _ => None,
        }
    }
}

/// Distinct lowercase pseudo-word for every index (consonant-vowel
/// syllables, at least two per word).
pub fn pseudo_word(mut i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let base = C.len() * V.len();
    let mut syllables = Vec::new();
    loop {
        let s = i % base;
        syllables.push([C[s / V.len()], V[s % V.len()]]);
        i /= base;
        if i == 0 && syllables.len() >= 2 {
            break;
        }
    }
    syllables.iter().rev().flat_map(|s| s.iter().map(|&b| b as char)).collect()
}

/// Corpus whose statistics match `shape` exactly: per-intent counts, total
/// whitespace words, vocabulary size and min/max words per utterance.
pub fn shaped_corpus(shape: &CorpusShape, seed: u64) -> Result<Dataset> {
    let n = shape.n_samples();
    let (w, v, lo, hi) = (shape.total_words, shape.vocab_size, shape.min_words, shape.max_words);
    if n == 0 || lo == 0 || lo > hi || v == 0 || v > w {
        return Err(Error::Config(format!("infeasible corpus shape {:?}", shape.name)));
    }
    let mut lengths = if n == 1 {
        if lo != hi || w != lo {
            return Err(Error::Config("single-sample shape needs min = max = total".into()));
        }
        vec![w]
    } else {
        let inner = n - 2;
        let rest = w.checked_sub(lo + hi).ok_or_else(|| Error::Config("total words too small".into()))?;
        if rest < inner * lo || rest > inner * hi || (inner == 0 && rest != 0) {
            return Err(Error::Config(format!("word total {w} unreachable for {n} samples in [{lo}, {hi}]")));
        }
        let mut l = vec![lo, hi];
        if inner > 0 {
            let (base, extra) = (rest / inner, rest % inner);
            l.extend((0..inner).map(|i| base + usize::from(i < extra)));
        }
        l
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths.shuffle(&mut rng);

    let mut utts = Vec::with_capacity(n);
    let mut slot = 0usize;
    let mut row = 0usize;
    for (label, count) in &shape.class_counts {
        for _ in 0..*count {
            let words: Vec<String> = (0..lengths[row])
                .map(|k| pseudo_word((slot + k) % v))
                .collect();
            slot += lengths[row];
            utts.push(Utterance::new(format!("{}-{row:05}", shape.name), words.join(" "), label.as_str()));
            row += 1;
        }
    }
    Dataset::new(shape.name.clone(), utts)
}

/// Sentence-table provider for every utterance of `datasets`: each vector is
/// the unit-norm centroid of the utterance's intent plus isotropic Gaussian
/// noise with per-coordinate scale `noise / sqrt(dim)`. The first occurrence
/// of a normalized text wins.
pub fn centroid_provider(datasets: &[&Dataset], dim: usize, noise: f64, seed: u64) -> Result<DenseProvider> {
    if dim == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    let centroid = |intent: &str| -> Vec<f64> {
        let s = Fnv1a::default().write(&seed.to_le_bytes()).write_str(intent).finish();
        let mut r = ChaCha8Rng::seed_from_u64(s);
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e_4f49_5345);
    let mut centroids: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut table: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let scale = noise / (dim as f64).sqrt();
    for ds in datasets {
        for u in ds.utterances() {
            let key = normalize_key(&u.text);
            if table.contains_key(&key) {
                continue;
            }
            let c = centroids.entry(u.intent.clone()).or_insert_with(|| centroid(&u.intent));
            let v = c
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x + scale * z) as f32
                })
                .collect();
            table.insert(key, v);
        }
    }
    DenseProvider::sentence_table(dim, table.into_iter().collect())
        .map(|p| p.with_source(format!("centroid:{dim}:{noise}:{seed}")))
}
