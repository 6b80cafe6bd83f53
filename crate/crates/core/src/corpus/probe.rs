use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Verb, WorldSpec};
use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub label: usize,
}

/// Training data where a surface cue and a linguistic feature agree, and test
/// data where they always disagree. The label follows the linguistic feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeSplit {
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    /// Token whose presence is the surface cue.
    pub cue_word: String,
}

/// Sentences of the form `DET NOUN which VERB VERB.`: the label is whether
/// the main (last) verb is a motion verb, the surface cue is whether the
/// determiner is the grammar's cue word.
pub fn generate_generalization_probe(world: &WorldSpec, n_train: usize, n_test: usize) -> Result<ProbeSplit> {
    world.validate()?;
    if n_train < 2 || n_test < 2 {
        return Err(Error::Config("probe splits need at least two examples each".into()));
    }
    let g = &world.grammar;
    let motion: Vec<&Verb> = g.intransitive.iter().filter(|v| v.motion).collect();
    let still: Vec<&Verb> = g.intransitive.iter().filter(|v| !v.motion).collect();
    if motion.is_empty() || still.is_empty() || g.cue_word == g.non_cue_word {
        return Err(Error::Config(
            "grammar cannot disentangle the probe cue from the main-verb feature".into(),
        ));
    }
    let mut rng = seeded(world.seed, stream::PROBE);
    let make = |n: usize, agree: bool, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut out: Vec<LabeledSentence> = (0..n)
            .map(|i| {
                let label = i % 2;
                let cue = if agree { label == 1 } else { label == 0 };
                let det = if cue { &g.cue_word } else { &g.non_cue_word };
                let class = rng.random_range(0..world.num_classes);
                let rc = g.intransitive.choose(rng).unwrap();
                let main = if label == 1 { motion.choose(rng) } else { still.choose(rng) }.unwrap();
                LabeledSentence {
                    text: format!(
                        "{det} {} {} {} {}.",
                        world.class_name(class),
                        g.relativizer,
                        rc.forms.singular,
                        main.forms.singular
                    ),
                    label,
                }
            })
            .collect();
        out.shuffle(rng);
        out
    };
    let train = make(n_train, true, &mut rng);
    let test = make(n_test, false, &mut rng);
    Ok(ProbeSplit { train, test, cue_word: g.cue_word.clone() })
}
