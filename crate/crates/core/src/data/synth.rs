//! Needle-in-a-haystack instances with known evidence spans.
//!
//! A needle is a short chain of fact sentences. The query restates the facts
//! with the answer withheld, the answer is a five-digit number that occurs
//! only in the last fact, and the haystack is made of sentences that share no
//! word with the query and contain no digits.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rewards::Gold;
use crate::rng::{stream, StreamRng};
use crate::text::{tokenize, Tokenizer, WordPunct};

use super::Instance;

const PERSON_FIRST: &[&str] = &[
    "Ada", "Bram", "Cora", "Dmitri", "Elin", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kaia",
    "Leon", "Mira", "Nils", "Orla", "Pavel", "Quinn", "Rosa", "Soren", "Tova",
];
const PERSON_LAST: &[&str] = &[
    "Morrow", "Vance", "Okafor", "Lindqvist", "Castell", "Ibarra", "Novak", "Hale", "Ferris",
    "Achebe", "Brandt", "Sato", "Quill", "Renner", "Duarte", "Kovac",
];
const PLACE_FIRST: &[&str] = &[
    "Kestrel", "Amber", "Hollow", "Granite", "Willow", "Cobalt", "Juniper", "Falcon", "Marrow",
    "Saffron", "Thistle", "Cinder",
];
const PLACE_LAST: &[&str] = &["Harbor", "Ridge", "Crossing", "Vale", "Landing", "Reach", "Point", "Fen"];
const OBJECT_FIRST: &[&str] = &["copper", "iron", "oak", "slate", "silver", "cedar", "bronze", "glass"];
const OBJECT_LAST: &[&str] = &["vault", "chest", "locker", "cabinet", "safe", "strongbox", "coffer", "trunk"];
const PROP_FIRST: &[&str] = &["rusty", "painted", "wooden", "dented", "faded", "heavy", "narrow", "crooked"];
const PROP_LAST: &[&str] = &["cart", "lamp", "bench", "kettle", "ladder", "barrel", "loom", "anvil"];

const HAYSTACK: &[&str] = &[
    "{person} walked along {place} shore before dawn",
    "{person} sold fresh bread to travelers near {place}",
    "Rain fell over {place} for most of an afternoon",
    "{person} repaired a {prop} in a small workshop",
    "Merchants from {place} traded wool and salt with {person}",
    "{person} painted a {prop} a deep shade of green",
    "A quiet wind moved through fields near {place}",
    "{person} told stories about distant mountains",
    "Children near {place} played by a river until dusk",
    "{person} carried a lantern past a {prop}",
    "Fishing boats returned to {place} with modest catches",
    "{person} and {other} argued about a harvest festival",
    "Snow covered rooftops across {place} during winter",
    "{person} studied old maps of a northern coast",
    "Bells rang across {place} to mark a new season",
    "{person} took careful notes on rainfall",
    "Travelers rested in an inn outside {place}",
    "{person} found a {prop} beside a dusty road",
    "Lanterns glowed along streets of {place}",
    "{person} baked honey cakes for a village market",
    "Goats wandered across hills above {place}",
    "{person} mended fishing nets by lamplight",
    "Most shops in {place} closed early on market days",
    "{person} borrowed a {prop} from {other}",
];

/// Fact and query templates. Slots: `{person}`, `{place}`, `{object}`, and
/// `{answer}` (facts only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleTemplate {
    pub facts: Vec<String>,
    pub query: String,
}

impl Default for NeedleTemplate {
    fn default() -> Self {
        Self {
            facts: vec![
                "{person} keeps the {object} at {place}".into(),
                "{place} guards the {object}".into(),
                "{person} wrote down the secret code".into(),
                "{person} said the secret code is {answer}".into(),
            ],
            query: "{person} keeps the {object} at {place} ; {place} guards the {object} ; \
                    {person} wrote down the secret code ; {person} said the secret code is what ?"
                .into(),
        }
    }
}

impl NeedleTemplate {
    /// A one-sentence needle.
    pub fn single() -> Self {
        Self {
            facts: vec!["{person} hid code {answer} inside the {object} at {place}".into()],
            query: "What code did {person} hide inside the {object} at {place} ?".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Template("needle needs at least one fact".into()));
        }
        if self.facts.iter().filter(|f| f.contains("{answer}")).count() != 1 {
            return Err(Error::Template("exactly one fact must hold {answer}".into()));
        }
        if self.query.contains("{answer}") {
            return Err(Error::Template("query must not reveal {answer}".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Context length in tokens, including the needle.
    pub target_tokens: usize,
    /// Exact number of haystack sentences; `None` fills up to `target_tokens`.
    #[serde(default)]
    pub distractors: Option<usize>,
    #[serde(default)]
    pub template: NeedleTemplate,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(target_tokens: usize, seed: u64) -> Self {
        Self {
            target_tokens,
            distractors: None,
            template: NeedleTemplate::default(),
            seed,
        }
    }
}

struct Entities {
    person: String,
    place: String,
    object: String,
    answer: String,
}

fn fill(template: &str, e: &Entities) -> String {
    template
        .replace("{person}", &e.person)
        .replace("{place}", &e.place)
        .replace("{object}", &e.object)
        .replace("{answer}", &e.answer)
}

fn pick<'a>(rng: &mut StreamRng, pool: &[&'a str], banned: &HashSet<String>) -> &'a str {
    let allowed: Vec<&str> = pool.iter().copied().filter(|w| !banned.contains(&w.to_lowercase())).collect();
    allowed.choose(rng).copied().unwrap_or(pool[0])
}

fn words(s: &str) -> Vec<String> {
    WordPunct.tokenize(s).into_iter().map(|t| t.text.to_lowercase()).collect()
}

struct Haystack<'a> {
    rng: &'a mut StreamRng,
    banned: HashSet<String>,
    query_words: HashSet<String>,
}

impl Haystack<'_> {
    fn sentence(&mut self) -> Result<String> {
        for _ in 0..1000 {
            let t = HAYSTACK.choose(self.rng).copied().unwrap_or(HAYSTACK[0]);
            let person = format!(
                "{} {}",
                pick(self.rng, PERSON_FIRST, &self.banned),
                pick(self.rng, PERSON_LAST, &self.banned)
            );
            let other = format!(
                "{} {}",
                pick(self.rng, PERSON_FIRST, &self.banned),
                pick(self.rng, PERSON_LAST, &self.banned)
            );
            let place = format!(
                "{} {}",
                pick(self.rng, PLACE_FIRST, &self.banned),
                pick(self.rng, PLACE_LAST, &self.banned)
            );
            let prop = format!("{} {}", pick(self.rng, PROP_FIRST, &self.banned), pick(self.rng, PROP_LAST, &self.banned));
            let s = t
                .replace("{person}", &person)
                .replace("{other}", &other)
                .replace("{place}", &place)
                .replace("{prop}", &prop);
            if words(&s).iter().all(|w| !self.query_words.contains(w)) {
                return Ok(s);
            }
        }
        Err(Error::Template("could not draw a haystack sentence free of query words".into()))
    }
}

/// Generate one instance. Sentences are joined by `". "`; the gold evidence
/// is one span per fact sentence, without the separator.
pub fn gen_needle(spec: &SynthSpec) -> Result<Instance> {
    gen_indexed(spec, 0)
}

/// Generate `n` instances with ids `synth-{seed}-{i}`.
pub fn gen_needles(spec: &SynthSpec, n: usize) -> Result<Vec<Instance>> {
    (0..n).map(|i| gen_indexed(spec, i as u64)).collect()
}

fn gen_indexed(spec: &SynthSpec, index: u64) -> Result<Instance> {
    spec.template.validate()?;
    let mut rng = stream(spec.seed, &[0x4e45_4544, index]);
    let none = HashSet::new();
    let ent = Entities {
        person: format!("{} {}", pick(&mut rng, PERSON_FIRST, &none), pick(&mut rng, PERSON_LAST, &none)),
        place: format!("{} {}", pick(&mut rng, PLACE_FIRST, &none), pick(&mut rng, PLACE_LAST, &none)),
        object: format!("{} {}", pick(&mut rng, OBJECT_FIRST, &none), pick(&mut rng, OBJECT_LAST, &none)),
        answer: rng.random_range(10_000u32..100_000).to_string(),
    };
    let facts: Vec<String> = spec.template.facts.iter().map(|f| fill(f, &ent)).collect();
    let query = fill(&spec.template.query, &ent);
    let fact_tokens: usize = facts.iter().map(|f| tokenize(f).len()).sum();
    let needle_tokens = fact_tokens + facts.len() - 1;

    let banned: HashSet<String> = [&ent.person, &ent.place, &ent.object]
        .iter()
        .flat_map(|s| words(s))
        .collect();
    let mut hay = Haystack {
        rng: &mut rng,
        banned,
        query_words: words(&query).into_iter().filter(|w| w != ".").collect(),
    };
    let mut filler = Vec::new();
    match spec.distractors {
        Some(n) => {
            for _ in 0..n {
                filler.push(hay.sentence()?);
            }
        }
        None => {
            if spec.target_tokens < needle_tokens {
                return Err(Error::Config(format!(
                    "target of {} tokens is shorter than the {needle_tokens}-token needle",
                    spec.target_tokens
                )));
            }
            // every extra sentence also costs one separator token
            let mut remaining = spec.target_tokens - needle_tokens;
            while remaining >= 2 {
                let s = hay.sentence()?;
                let toks = tokenize(&s);
                if toks.len() < remaining {
                    remaining -= toks.len() + 1;
                    filler.push(s);
                } else {
                    let cut = toks.tokens()[remaining - 2].end;
                    filler.push(s[..cut].to_string());
                    remaining = 0;
                }
            }
            if remaining == 1 {
                // a lone separator cannot be placed, so lengthen the last sentence
                if let Some(last) = filler.last_mut() {
                    last.push_str(" again");
                } else {
                    filler.push("Again".into());
                }
            }
        }
    }

    // fact i goes before filler sentence slots[i]; facts keep their order
    let mut slots: Vec<usize> = (0..facts.len()).map(|_| rng.random_range(0..=filler.len())).collect();
    slots.sort_unstable();
    let mut context = String::new();
    let mut spans = Vec::new();
    let push = |s: &str, context: &mut String| {
        if !context.is_empty() {
            context.push_str(". ");
        }
        let start = context.len();
        context.push_str(s);
        start..context.len()
    };
    let mut next_fact = 0;
    for slot in 0..=filler.len() {
        while next_fact < facts.len() && slots[next_fact] == slot {
            let r = push(&facts[next_fact], &mut context);
            spans.push([r.start, r.end]);
            next_fact += 1;
        }
        if slot < filler.len() {
            push(&filler[slot], &mut context);
        }
    }

    let inst = Instance {
        id: format!("synth-{}-{index}", spec.seed),
        query,
        context,
        gold: Gold::Text(ent.answer),
        evidence_spans: Some(spans),
        candidates: None,
        extra: Default::default(),
    };
    inst.validate()?;
    Ok(inst)
}
