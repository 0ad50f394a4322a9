//! Seeded template corpora with known cluster structure, for learning
//! checks and demos. Inputs and responses of a cluster share topic words;
//! the filler phrases are shared across all clusters.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ConversationPair, NliExample, NliLabel};
use crate::{Error, Result};

struct Topic {
    asks: [&'static str; 6],
    answers: [&'static str; 6],
}

const TOPICS: [Topic; 20] = [
    Topic {
        asks: ["guitar", "chords", "strings", "amp", "riff", "pick"],
        answers: ["fretboard", "tuning", "scales", "practice", "capo", "pedal"],
    },
    Topic {
        asks: ["bread", "dough", "yeast", "oven", "flour", "crust"],
        answers: ["knead", "proof", "sourdough", "starter", "bake", "loaf"],
    },
    Topic {
        asks: ["marathon", "running", "shoes", "pace", "miles", "sprint"],
        answers: ["stretch", "hydrate", "cadence", "training", "tempo", "recovery"],
    },
    Topic {
        asks: ["python", "script", "loop", "function", "variable", "syntax"],
        answers: ["debugger", "traceback", "indent", "module", "import", "interpreter"],
    },
    Topic {
        asks: ["cat", "kitten", "litter", "purring", "whiskers", "paws"],
        answers: ["vet", "catnip", "scratching", "treats", "grooming", "feline"],
    },
    Topic {
        asks: ["garden", "tomatoes", "soil", "seeds", "weeds", "compost"],
        answers: ["mulch", "watering", "sunlight", "fertilizer", "pruning", "harvest"],
    },
    Topic {
        asks: ["car", "engine", "brakes", "tires", "oil", "mechanic"],
        answers: ["alignment", "transmission", "coolant", "spark", "garage", "mileage"],
    },
    Topic {
        asks: ["coffee", "espresso", "beans", "grinder", "latte", "roast"],
        answers: ["barista", "crema", "brew", "pourover", "caffeine", "kettle"],
    },
    Topic {
        asks: ["chess", "opening", "bishop", "knight", "endgame", "gambit"],
        answers: ["tactics", "checkmate", "castling", "pawns", "puzzles", "rating"],
    },
    Topic {
        asks: ["camera", "lens", "photos", "shutter", "aperture", "tripod"],
        answers: ["exposure", "focus", "iso", "lighting", "composition", "editing"],
    },
    Topic {
        asks: ["rent", "landlord", "lease", "apartment", "deposit", "tenant"],
        answers: ["contract", "eviction", "roommate", "utilities", "inspection", "neighborhood"],
    },
    Topic {
        asks: ["telescope", "planets", "stars", "galaxy", "orbit", "comet"],
        answers: ["astronomy", "nebula", "eclipse", "constellation", "observatory", "meteor"],
    },
    Topic {
        asks: ["bike", "pedals", "chain", "gears", "saddle", "helmet"],
        answers: ["derailleur", "cycling", "spokes", "commute", "trail", "puncture"],
    },
    Topic {
        asks: ["piano", "keys", "sonata", "melody", "recital", "metronome"],
        answers: ["arpeggio", "sheet", "fingering", "sustain", "concerto", "lessons"],
    },
    Topic {
        asks: ["dog", "puppy", "leash", "barking", "fetch", "kennel"],
        answers: ["obedience", "walkies", "collar", "breed", "trainer", "chew"],
    },
    Topic {
        asks: ["budget", "savings", "taxes", "salary", "debt", "loan"],
        answers: ["interest", "pension", "invest", "spreadsheet", "frugal", "credit"],
    },
    Topic {
        asks: ["hiking", "mountain", "backpack", "tent", "summit", "campfire"],
        answers: ["altitude", "boots", "compass", "wilderness", "ridge", "blisters"],
    },
    Topic {
        asks: ["movie", "director", "actor", "sequel", "trailer", "cinema"],
        answers: ["screenplay", "plot", "casting", "premiere", "soundtrack", "critics"],
    },
    Topic {
        asks: ["keyboard", "monitor", "laptop", "mouse", "graphics", "processor"],
        answers: ["drivers", "benchmark", "overclock", "cooling", "motherboard", "firmware"],
    },
    Topic {
        asks: ["painting", "canvas", "brush", "watercolor", "easel", "palette"],
        answers: ["pigment", "sketch", "portrait", "gallery", "acrylic", "texture"],
    },
];

const ASK_OPENERS: [&str; 8] = [
    "does anyone know about",
    "what do you think of",
    "i keep thinking about",
    "any advice on",
    "can someone explain",
    "i need help with",
    "how do you deal with",
    "so i just got into",
];
const ASK_LINKS: [&str; 4] = ["and", "or", "with", "versus"];
const ASK_CLOSERS: [&str; 6] = ["lately", "today", "right now", "at all", "this week", "honestly"];

const ANSWER_OPENERS: [&str; 6] =
    ["you should try", "the trick is", "i would focus on", "it really depends on", "in my experience", "start with"];
const ANSWER_LINKS: [&str; 3] = ["then", "plus", "before"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub inputs_per_cluster: usize,
    pub responses_per_cluster: usize,
    pub held_out_per_cluster: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { clusters: 20, inputs_per_cluster: 50, responses_per_cluster: 20, held_out_per_cluster: 10, seed: 0 }
    }
}

/// A pair tagged with the cluster it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPair {
    pub cluster: usize,
    pub pair: ConversationPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<ClusterPair>,
    /// Ordered cluster-major: the first `held_out_per_cluster` belong to cluster 0.
    pub held_out: Vec<ClusterPair>,
    pub responses: Vec<Vec<String>>,
    pub config: SyntheticConfig,
}

fn distinct<R: Rng>(rng: &mut R, count: usize, mut make: impl FnMut(&mut R) -> String) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count + 1000 {
            return Err(Error::Config(format!("template grammar cannot produce {count} distinct sentences")));
        }
        let s = make(rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn two_of<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> (&'a str, &'a str) {
    let mut it = xs.choose_multiple(rng, 2);
    (it.next().expect("two words"), it.next().expect("two words"))
}

pub fn ask_sentence<R: Rng>(rng: &mut R, cluster: usize) -> String {
    let t = &TOPICS[cluster];
    let (a, b) = two_of(rng, &t.asks);
    format!("{} the {} {} {} {}", pick(rng, &ASK_OPENERS), a, pick(rng, &ASK_LINKS), b, pick(rng, &ASK_CLOSERS))
}

pub fn answer_sentence<R: Rng>(rng: &mut R, cluster: usize) -> String {
    let t = &TOPICS[cluster];
    let (a, b) = two_of(rng, &t.answers);
    format!("{} {} {} {}", pick(rng, &ANSWER_OPENERS), a, pick(rng, &ANSWER_LINKS), b)
}

impl SyntheticCorpus {
    pub fn generate(config: SyntheticConfig) -> Result<Self> {
        if config.clusters == 0 || config.clusters > TOPICS.len() {
            return Err(Error::Config(format!("clusters must be in 1..={}", TOPICS.len())));
        }
        if config.held_out_per_cluster > config.inputs_per_cluster || config.responses_per_cluster == 0 {
            return Err(Error::Config("held-out inputs exceed inputs per cluster".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        let mut responses = Vec::new();
        for c in 0..config.clusters {
            let inputs = distinct(&mut rng, config.inputs_per_cluster, |r| ask_sentence(r, c))?;
            let answers = distinct(&mut rng, config.responses_per_cluster, |r| answer_sentence(r, c))?;
            let split = config.inputs_per_cluster - config.held_out_per_cluster;
            for (i, input) in inputs.into_iter().enumerate() {
                let response = answers.choose(&mut rng).expect("responses non-empty").clone();
                let item =
                    ClusterPair { cluster: c, pair: ConversationPair { input_text: input, response_text: response } };
                if i < split {
                    train.push(item);
                } else {
                    held_out.push(item);
                }
            }
            responses.push(answers);
        }
        train.shuffle(&mut rng);
        Ok(Self { train, held_out, responses, config })
    }

    pub fn train_pairs(&self) -> Vec<ConversationPair> {
        self.train.iter().map(|p| p.pair.clone()).collect()
    }

    /// Held-out pairs grouped into rounds holding one pair per cluster, so
    /// that within a round every other response comes from another cluster.
    pub fn held_out_rounds(&self) -> Vec<Vec<ConversationPair>> {
        let per = self.config.held_out_per_cluster;
        (0..per).map(|r| (0..self.config.clusters).map(|c| self.held_out[c * per + r].pair.clone()).collect()).collect()
    }

    /// NLI examples over the same topics: same cluster entails, the next
    /// cluster is neutral, any other cluster contradicts. Labels are balanced.
    pub fn nli_examples(&self, count: usize, seed: u64) -> Vec<NliExample> {
        let k = self.config.clusters;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let label = NliLabel::from_index(i % 3).expect("three labels");
                let c = rng.gen_range(0..k);
                let other = match label {
                    NliLabel::Entailment => c,
                    NliLabel::Neutral => (c + 1) % k,
                    NliLabel::Contradiction if k > 2 => (c + rng.gen_range(2..k)) % k,
                    NliLabel::Contradiction => (c + 1) % k,
                };
                NliExample { premise: ask_sentence(&mut rng, c), hypothesis: ask_sentence(&mut rng, other), label }
            })
            .collect()
    }
}
