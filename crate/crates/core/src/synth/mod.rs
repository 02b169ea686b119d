//! Deterministic synthetic world: concepts signalled by context words and
//! by marker syllables ending entity names, a concept-consistent knowledge
//! graph, and datasets for every downstream task.

mod emit;
mod kg;
mod lexicon;

pub use emit::{write_world, WorldFiles};
pub use kg::{gen_kg, SynthKg};
pub use lexicon::{syllables, Lexicon, FUNCTION_WORDS};

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, CharMention};
use crate::error::{Error, Result};
use crate::evals::data::{CharSpan, Splits, TypingRecord};
use crate::seed;
use crate::taxonomy::{Concept, ConceptVocab, Taxonomy};
use crate::tokenizer::WordPiece;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub n_concepts: usize,
    pub entities_per_concept: usize,
    pub heldout_per_concept: usize,
    pub templates_per_concept: usize,
    pub docs: usize,
    pub kg_relations: usize,
    pub seed: u64,
    pub context_words_per_concept: usize,
    pub eval_docs_per_entity: usize,
    /// Gives every entity a second concept and lets its documents use the
    /// templates of either.
    pub multi_label: bool,
    /// Share of training documents rendered from concept-neutral templates,
    /// where only the entity name identifies the concept.
    pub neutral_fraction: f64,
    /// Probability that an entity name ends in one of its concept's marker
    /// syllables. At zero, names are arbitrary.
    pub name_signal: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_concepts: 20,
            entities_per_concept: 50,
            heldout_per_concept: 10,
            templates_per_concept: 5,
            docs: 20_000,
            kg_relations: 12,
            seed: 0,
            context_words_per_concept: 8,
            eval_docs_per_entity: 5,
            multi_label: false,
            neutral_fraction: 0.5,
            name_signal: 1.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_concepts", self.n_concepts),
            ("entities_per_concept", self.entities_per_concept),
            ("templates_per_concept", self.templates_per_concept),
            ("docs", self.docs),
            ("kg_relations", self.kg_relations),
            ("context_words_per_concept", self.context_words_per_concept),
            ("eval_docs_per_entity", self.eval_docs_per_entity),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.heldout_per_concept >= self.entities_per_concept {
            return Err(Error::Config(format!(
                "heldout_per_concept {} must be below entities_per_concept {}",
                self.heldout_per_concept, self.entities_per_concept
            )));
        }
        if self.context_words_per_concept < 3 {
            return Err(Error::Config("context_words_per_concept must be at least 3".into()));
        }
        if !(0.0..1.0).contains(&self.neutral_fraction) {
            return Err(Error::Config(format!(
                "neutral_fraction must lie in [0, 1), got {}",
                self.neutral_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.name_signal) {
            return Err(Error::Config(format!("name_signal must lie in [0, 1], got {}", self.name_signal)));
        }
        if self.multi_label && self.n_concepts < 2 {
            return Err(Error::Config("multi_label needs at least two concepts".into()));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Lexicon {
        Lexicon::generate(self.seed, self.n_concepts, self.context_words_per_concept, self.kg_relations)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SynthEntity {
    pub id: String,
    pub name: String,
    /// Concept indices; the first is the primary concept.
    pub concepts: Vec<usize>,
    pub heldout: bool,
}

#[derive(Clone, Debug)]
pub struct SynthTaxonomy {
    pub taxonomy: Taxonomy,
    pub vocab: ConceptVocab,
    pub heldout: BTreeSet<String>,
    pub entities: Vec<SynthEntity>,
    pub lexicon: Lexicon,
    pub tokenizer: WordPiece,
}

impl SynthTaxonomy {
    pub fn concept_id(&self, k: usize) -> &str {
        &self.vocab.concepts()[k].id
    }

    /// Entities of concept `k` (by primary or secondary membership).
    pub fn members(&self, k: usize) -> impl Iterator<Item = &SynthEntity> {
        self.entities.iter().filter(move |e| e.concepts.contains(&k))
    }

    pub fn primary_members(&self, k: usize) -> impl Iterator<Item = &SynthEntity> {
        self.entities.iter().filter(move |e| e.concepts[0] == k)
    }
}

pub fn concept_id(k: usize) -> String {
    format!("C{k:03}")
}

pub fn entity_id(n: usize) -> String {
    format!("E{n:05}")
}

pub fn gen_taxonomy(spec: &WorldSpec) -> Result<SynthTaxonomy> {
    spec.validate()?;
    let lexicon = spec.lexicon();
    let tokenizer = lexicon.tokenizer();
    let mut rng = seed::stream(spec.seed, "synth-taxonomy");
    let concepts: Vec<Concept> = (0..spec.n_concepts)
        .map(|k| Concept::new(&concept_id(k), &lexicon.concept_labels[k]))
        .collect();
    let vocab = ConceptVocab::new(concepts)?;
    let mut used = BTreeSet::new();
    let mut entities = Vec::new();
    let mut taxonomy = Taxonomy::default();
    let mut heldout = BTreeSet::new();
    let stems = if spec.name_signal > 0.0 { lexicon.name_stems() } else { syllables() };
    for k in 0..spec.n_concepts {
        for i in 0..spec.entities_per_concept {
            let id = entity_id(entities.len());
            let marked = spec.name_signal > 0.0 && rng.random::<f64>() < spec.name_signal;
            let ending = marked.then(|| lexicon.name_markers[k].as_slice()).filter(|m| !m.is_empty());
            let name = lexicon::entity_name(&mut rng, &tokenizer, &mut used, &stems, ending);
            let mut cs = vec![k];
            if spec.multi_label {
                let other = (k + rng.random_range(1..spec.n_concepts)) % spec.n_concepts;
                cs.push(other);
            }
            let is_heldout = i >= spec.entities_per_concept - spec.heldout_per_concept;
            for &c in &cs {
                taxonomy.insert(&id, &concept_id(c));
            }
            if is_heldout {
                heldout.insert(id.clone());
            }
            entities.push(SynthEntity {
                id,
                name,
                concepts: cs,
                heldout: is_heldout,
            });
        }
    }
    Ok(SynthTaxonomy {
        taxonomy,
        vocab,
        heldout,
        entities,
        lexicon,
        tokenizer,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Slot {
    Word(String),
    /// Replaced by a random shared filler word in each document.
    Wild,
    Entity,
}

pub type Template = Vec<Slot>;

/// Per concept: three of its context words, two function words and a
/// wildcard around one entity slot, in a shuffled order, ending in a period.
pub fn gen_templates(spec: &WorldSpec, lexicon: &Lexicon) -> Vec<Vec<Template>> {
    let mut rng = seed::stream(spec.seed, "synth-templates");
    (0..spec.n_concepts)
        .map(|k| {
            (0..spec.templates_per_concept)
                .map(|_| {
                    let mut slots: Vec<Slot> = lexicon.context[k]
                        .choose_multiple(&mut rng, 3)
                        .map(|w| Slot::Word(w.clone()))
                        .collect();
                    for _ in 0..2 {
                        slots.push(Slot::Word(FUNCTION_WORDS.choose(&mut rng).expect("non-empty").to_string()));
                    }
                    slots.push(Slot::Wild);
                    slots.shuffle(&mut rng);
                    let at = rng.random_range(0..=slots.len());
                    slots.insert(at, Slot::Entity);
                    slots.push(Slot::Word(".".into()));
                    slots
                })
                .collect()
        })
        .collect()
}

/// Templates of function words and wildcards only: nothing but the name
/// tells the concept.
pub fn gen_neutral_templates(spec: &WorldSpec) -> Vec<Template> {
    let mut rng = seed::stream(spec.seed, "synth-neutral-templates");
    (0..spec.templates_per_concept)
        .map(|_| {
            let mut slots = vec![Slot::Wild, Slot::Wild];
            for _ in 0..3 {
                slots.push(Slot::Word(FUNCTION_WORDS.choose(&mut rng).expect("non-empty").to_string()));
            }
            slots.shuffle(&mut rng);
            let at = rng.random_range(0..=slots.len());
            slots.insert(at, Slot::Entity);
            slots.push(Slot::Word(".".into()));
            slots
        })
        .collect()
}

/// Renders one template with `name` in its entity slot.
pub fn render(template: &Template, entity: &SynthEntity, lexicon: &Lexicon, rng: &mut seed::Rng, doc_id: &str) -> Result<AnnotatedDocument> {
    let mut text = String::new();
    let mut mention = None;
    for slot in template {
        let word = match slot {
            Slot::Word(w) => w.as_str(),
            Slot::Wild => lexicon.filler.choose(rng).expect("non-empty").as_str(),
            Slot::Entity => entity.name.as_str(),
        };
        if !text.is_empty() && word != "." {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(word);
        if *slot == Slot::Entity {
            mention = Some(CharMention {
                entity: entity.id.clone(),
                start,
                end: start + word.chars().count(),
            });
        }
    }
    let mention = mention.ok_or_else(|| Error::data(doc_id.to_string(), "template has no entity slot"))?;
    Ok(AnnotatedDocument {
        doc_id: doc_id.to_string(),
        text,
        mentions: vec![mention],
    })
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: Vec<AnnotatedDocument>,
    /// Documents about held-out entities only.
    pub eval: Vec<AnnotatedDocument>,
}

/// Training documents cycle through the concepts so each gets the same
/// share; evaluation documents cover every held-out entity equally and
/// always use concept templates.
pub fn gen_corpus(spec: &WorldSpec, tax: &SynthTaxonomy) -> Result<SynthCorpus> {
    let templates = gen_templates(spec, &tax.lexicon);
    let neutral = gen_neutral_templates(spec);
    let mut rng = seed::stream(spec.seed, "synth-corpus");
    let pools: Vec<Vec<&SynthEntity>> = (0..spec.n_concepts)
        .map(|k| tax.primary_members(k).filter(|e| !e.heldout).collect())
        .collect();
    let mut train = Vec::with_capacity(spec.docs);
    for i in 0..spec.docs {
        let k = i % spec.n_concepts;
        let entity = *pools[k].choose(&mut rng).expect("every concept has training entities");
        let c = *entity.concepts.choose(&mut rng).expect("non-empty");
        let pool = if rng.random::<f64>() < spec.neutral_fraction {
            &neutral
        } else {
            &templates[c]
        };
        let t = pool.choose(&mut rng).expect("non-empty");
        train.push(render(t, entity, &tax.lexicon, &mut rng, &format!("train-{i:06}"))?);
    }
    let mut eval = Vec::new();
    for entity in tax.entities.iter().filter(|e| e.heldout) {
        for j in 0..spec.eval_docs_per_entity {
            let c = *entity.concepts.choose(&mut rng).expect("non-empty");
            let t = templates[c].choose(&mut rng).expect("non-empty");
            eval.push(render(t, entity, &tax.lexicon, &mut rng, &format!("eval-{}-{j}", entity.id))?);
        }
    }
    Ok(SynthCorpus { train, eval })
}

/// Typing data labelled with concept ids: training entities' documents
/// for train, held-out entities' documents split between dev and test.
pub fn gen_typing(corpus: &SynthCorpus, tax: &SynthTaxonomy, train_size: usize) -> Splits<TypingRecord> {
    let record = |d: &AnnotatedDocument| {
        let m = &d.mentions[0];
        let labels = tax
            .taxonomy
            .concepts_of(&m.entity)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        TypingRecord {
            id: d.doc_id.clone(),
            text: d.text.clone(),
            span: CharSpan { start: m.start, end: m.end },
            labels,
        }
    };
    let mut splits = Splits {
        train: corpus.train.iter().take(train_size).map(record).collect(),
        ..Default::default()
    };
    for (i, d) in corpus.eval.iter().enumerate() {
        if i % 2 == 0 {
            splits.dev.push(record(d));
        } else {
            splits.test.push(record(d));
        }
    }
    splits
}

/// Everything the generator produces for one spec.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub taxonomy: SynthTaxonomy,
    pub corpus: SynthCorpus,
    pub kg: SynthKg,
}

impl World {
    pub fn generate(spec: &WorldSpec) -> Result<World> {
        let taxonomy = gen_taxonomy(spec)?;
        let corpus = gen_corpus(spec, &taxonomy)?;
        let kg = gen_kg(spec, &taxonomy)?;
        Ok(World {
            spec: spec.clone(),
            taxonomy,
            corpus,
            kg,
        })
    }
}
