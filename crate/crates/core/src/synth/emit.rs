use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::kg::{gen_relation_sentences, SynthRelation};
use super::{gen_typing, World, WorldSpec};
use crate::corpus::io::write_jsonl;
use crate::error::{Error, Result};
use crate::evals::data::{write_names, write_triples};
use crate::taxonomy::io::{write_counts, write_taxonomy, write_text, write_vocab};

/// Search frequency given to every synthetic concept.
const SYNTH_SFC: u64 = 2_000_000;
const TYPING_TRAIN: usize = 2_000;

/// Paths of the files written by [`write_world`], relative to its root.
#[derive(Clone, Debug, Serialize)]
pub struct WorldFiles {
    pub root: PathBuf,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct WorldManifest<'a> {
    spec: &'a WorldSpec,
    relations: &'a [SynthRelation],
    entities: usize,
    heldout: usize,
    train_docs: usize,
    eval_docs: usize,
    triples: usize,
}

/// Writes the world in the formats the taxonomy, corpus and evaluation
/// commands read. Selection thresholds suited to the world's scale go to
/// `selection.toml`.
pub fn write_world(world: &World, dir: &Path) -> Result<WorldFiles> {
    let tax = &world.taxonomy;
    for sub in ["", "kg", "typing", "rc"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut files = Vec::new();
    let mut put = |name: &str| {
        files.push(name.to_string());
        dir.join(name)
    };

    tax.tokenizer.save(put("vocab.txt"))?;

    let mut isa = String::new();
    let mut entities = String::new();
    let mut labels = String::new();
    for e in &tax.entities {
        for &c in &e.concepts {
            writeln!(isa, "{}\tP31\t{}", e.id, tax.concept_id(c)).unwrap();
        }
        writeln!(entities, "{}", e.id).unwrap();
    }
    for c in tax.vocab.concepts() {
        writeln!(labels, "{}\t{}", c.id, c.label).unwrap();
    }
    write_text(&put("isa.tsv"), &isa)?;
    write_taxonomy(&put("taxonomy.tsv"), &tax.taxonomy)?;
    write_text(&put("entities.txt"), &entities)?;
    write_text(&put("labels.tsv"), &labels)?;
    let heldout: String = tax.heldout.iter().map(|h| format!("{h}\n")).collect();
    write_text(&put("heldout.txt"), &heldout)?;
    write_vocab(&put("concepts.json"), &tax.vocab)?;

    let mut mentions: BTreeMap<&str, u64> = tax.entities.iter().map(|e| (e.id.as_str(), 0)).collect();
    for d in &world.corpus.train {
        for m in &d.mentions {
            *mentions.entry(m.entity.as_str()).or_insert(0) += 1;
        }
    }
    write_counts(&put("mention_counts.tsv"), mentions.iter().map(|(k, v)| (*k, *v)))?;
    write_counts(&put("sfc.tsv"), tax.vocab.concepts().iter().map(|c| (c.id.as_str(), SYNTH_SFC)))?;
    let per_concept = world.spec.docs / world.spec.n_concepts;
    write_text(
        &put("selection.toml"),
        &format!(
            "mfe_hi = {}\nmfe_lo = {}\nsfc_min = {}\n",
            per_concept / 2,
            per_concept / 10,
            SYNTH_SFC / 2
        ),
    )?;

    write_jsonl(&put("corpus.jsonl"), &world.corpus.train)?;
    write_jsonl(&put("eval.jsonl"), &world.corpus.eval)?;

    let kg = &world.kg;
    write_triples(&put("kg/all.tsv"), &kg.triples)?;
    write_triples(&put("kg/train.tsv"), &kg.splits.train)?;
    write_triples(&put("kg/dev.tsv"), &kg.splits.dev)?;
    write_triples(&put("kg/test.tsv"), &kg.splits.test)?;
    write_names(&put("kg/names.tsv"), &kg.names)?;

    let typing = gen_typing(&world.corpus, tax, TYPING_TRAIN);
    write_jsonl(&put("typing/train.jsonl"), &typing.train)?;
    write_jsonl(&put("typing/dev.jsonl"), &typing.dev)?;
    write_jsonl(&put("typing/test.jsonl"), &typing.test)?;
    let typing_labels: String = tax.vocab.ids().iter().map(|c| format!("{c}\n")).collect();
    write_text(&put("typing/labels.txt"), &typing_labels)?;

    let rc = gen_relation_sentences(&world.spec, tax, kg);
    write_jsonl(&put("rc/train.jsonl"), &rc.train)?;
    write_jsonl(&put("rc/dev.jsonl"), &rc.dev)?;
    write_jsonl(&put("rc/test.jsonl"), &rc.test)?;

    let manifest = WorldManifest {
        spec: &world.spec,
        relations: &kg.relations,
        entities: tax.entities.len(),
        heldout: tax.heldout.len(),
        train_docs: world.corpus.train.len(),
        eval_docs: world.corpus.eval.len(),
        triples: kg.triples.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("world.json", e))?;
    write_text(&put("world.json"), &json)?;
    Ok(WorldFiles {
        root: dir.to_path_buf(),
        files,
    })
}
