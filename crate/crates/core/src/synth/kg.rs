use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::Serialize;

use super::{SynthEntity, SynthTaxonomy, WorldSpec};
use crate::error::Result;
use crate::evals::data::{CharSpan, KGTriple, NameTable, RelationRecord, Splits};
use crate::seed;

pub const NO_RELATION: &str = "no_relation";
const HUBS: usize = 3;
const SECOND_HUB: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SynthRelation {
    pub id: String,
    pub name: String,
    /// Word placed between head and tail in relation sentences.
    pub cue: String,
    pub head_concept: usize,
    pub tail_concept: usize,
    pub hubs: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SynthKg {
    pub relations: Vec<SynthRelation>,
    pub triples: Vec<KGTriple>,
    pub names: NameTable,
    pub splits: Splits<KGTriple>,
}

pub fn relation_id(r: usize) -> String {
    format!("R{r:02}")
}

/// Each relation links every entity of its head concept to one (sometimes
/// two) of a few hub entities of its tail concept.
pub fn gen_kg(spec: &WorldSpec, tax: &SynthTaxonomy) -> Result<SynthKg> {
    spec.validate()?;
    let mut rng = seed::stream(spec.seed, "synth-kg");
    let k = spec.n_concepts;
    let mut heads: Vec<usize> = (0..k).collect();
    heads.shuffle(&mut rng);
    let mut relations = Vec::new();
    let mut triples = BTreeSet::new();
    for r in 0..spec.kg_relations {
        let a = heads[r % k];
        let b = if k == 1 { a } else { (a + rng.random_range(1..k)) % k };
        let pool: Vec<&SynthEntity> = tax.primary_members(b).filter(|e| !e.heldout).collect();
        let hubs: Vec<String> = pool
            .choose_multiple(&mut rng, HUBS.min(pool.len()))
            .map(|e| e.id.clone())
            .collect();
        let id = relation_id(r);
        for e in tax.primary_members(a) {
            let first = rng.random_range(0..hubs.len());
            let mut chosen = vec![first];
            if hubs.len() > 1 && rng.random::<f64>() < SECOND_HUB {
                chosen.push((first + rng.random_range(1..hubs.len())) % hubs.len());
            }
            for h in chosen {
                if hubs[h] != e.id {
                    triples.insert(KGTriple::new(&e.id, &id, &hubs[h]));
                }
            }
        }
        relations.push(SynthRelation {
            id,
            name: tax.lexicon.relation_names[r].clone(),
            cue: tax.lexicon.relation_cues[r].clone(),
            head_concept: a,
            tail_concept: b,
            hubs,
        });
    }
    let triples: Vec<KGTriple> = triples.into_iter().collect();
    let mut names: NameTable = tax.entities.iter().map(|e| (e.id.clone(), e.name.clone())).collect();
    for r in &relations {
        names.insert(r.id.clone(), r.name.clone());
    }
    let mut shuffled = triples.clone();
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_dev = n / 10;
    let test = shuffled.split_off(n - n_dev);
    let dev = shuffled.split_off(n - 2 * n_dev);
    let splits = Splits {
        train: shuffled,
        dev,
        test,
    };
    Ok(SynthKg {
        relations,
        triples,
        names,
        splits,
    })
}

/// Relation sentences `head cue filler tail .` for KG triples, plus
/// `head filler filler tail .` pairs labelled no-relation.
pub fn gen_relation_sentences(spec: &WorldSpec, tax: &SynthTaxonomy, kg: &SynthKg) -> Splits<RelationRecord> {
    let mut rng = seed::stream(spec.seed, "synth-rc");
    let name = |id: &str| kg.names.get(id).cloned().unwrap_or_default();
    let cue = |rel: &str| kg.relations.iter().find(|r| r.id == rel).map(|r| r.cue.clone()).unwrap_or_default();
    let filler = &tax.lexicon.filler;
    let sentence = |h: &str, middle: [&str; 2], t: &str, id: String, relation: String| {
        let hs = CharSpan { start: 0, end: h.chars().count() };
        let mut text = format!("{h} {} {} ", middle[0], middle[1]);
        let start = text.chars().count();
        text.push_str(t);
        let ts = CharSpan { start, end: start + t.chars().count() };
        text.push_str(" .");
        RelationRecord {
            id,
            text,
            head: hs,
            tail: ts,
            relation,
        }
    };
    let known: BTreeSet<(&str, &str)> = kg.triples.iter().map(|t| (t.head.as_str(), t.tail.as_str())).collect();
    let build = |triples: &[KGTriple], tag: &str, rng: &mut seed::Rng| {
        let mut out = Vec::new();
        for (i, t) in triples.iter().enumerate() {
            let f = filler.choose(rng).expect("non-empty").as_str();
            out.push(sentence(
                &name(&t.head),
                [&cue(&t.relation), f],
                &name(&t.tail),
                format!("{tag}-{i}"),
                t.relation.clone(),
            ));
            let (a, b) = loop {
                let a = tax.entities.choose(rng).expect("non-empty");
                let b = tax.entities.choose(rng).expect("non-empty");
                if a.id != b.id && !known.contains(&(a.id.as_str(), b.id.as_str())) {
                    break (a, b);
                }
            };
            let f1 = filler.choose(rng).expect("non-empty").as_str();
            let f2 = filler.choose(rng).expect("non-empty").as_str();
            out.push(sentence(&a.name, [f1, f2], &b.name, format!("{tag}-{i}-neg"), NO_RELATION.to_string()));
        }
        out
    };
    Splits {
        train: build(&kg.splits.train, "train", &mut rng),
        dev: build(&kg.splits.dev, "dev", &mut rng),
        test: build(&kg.splits.test, "test", &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_taxonomy;

    #[test]
    fn signatures_hold_and_deterministic() {
        let spec = WorldSpec {
            n_concepts: 5,
            entities_per_concept: 12,
            heldout_per_concept: 2,
            docs: 10,
            kg_relations: 4,
            ..Default::default()
        };
        let tax = gen_taxonomy(&spec).unwrap();
        let kg = gen_kg(&spec, &tax).unwrap();
        let concept_of = |id: &str| tax.entities.iter().find(|e| e.id == id).unwrap().concepts[0];
        for t in &kg.triples {
            let r = kg.relations.iter().find(|r| r.id == t.relation).unwrap();
            assert_eq!(concept_of(&t.head), r.head_concept);
            assert_eq!(concept_of(&t.tail), r.tail_concept);
            assert!(r.hubs.contains(&t.tail));
        }
        let again = gen_kg(&spec, &tax).unwrap();
        assert_eq!(kg.triples, again.triples);
        assert_eq!(kg.splits, again.splits);
        assert_eq!(kg.splits.iter_all().count(), kg.triples.len());
        let rc = gen_relation_sentences(&spec, &tax, &kg);
        for r in rc.iter_all() {
            let head: String = r.text.chars().skip(r.head.start).take(r.head.end - r.head.start).collect();
            assert!(kg.names.values().any(|n| *n == head));
            assert!(!r.head.overlaps(&r.tail));
        }
    }
}
