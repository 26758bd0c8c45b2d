//! Turns scenes plus instruction entries into training examples.

use sceneaug_instruct::VerbTable;

use crate::error::{bail, Error, Result};
use crate::model::Example;
use crate::scene::Scene;
use crate::synthetic::{gen_shape, generator_words, InstructionEntry};
use crate::text::Vocab;

/// Vocabulary over the entry texts plus every word the generator can emit.
pub fn build_vocab(entries: &[InstructionEntry], verbs: &VerbTable) -> Result<Vocab> {
    let extra = generator_words(verbs).join(" ");
    Vocab::build(entries.iter().map(|e| e.text.as_str()).chain(std::iter::once(extra.as_str())))
}

fn class_id(classes: &[String], name: &str) -> Result<usize> {
    classes
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown object class {name:?}")))
}

/// Example for one entry; the target cloud is regenerated from its shape
/// seed.
pub fn build_example(
    scene: &Scene,
    entry: &InstructionEntry,
    vocab: &Vocab,
    classes: &[String],
    max_tokens: usize,
    points: usize,
) -> Result<Example> {
    if entry.scene_id != scene.scene_id {
        bail!(Consistency, "entry {} refers to scene {} but got {}", entry.id, entry.scene_id, scene.scene_id);
    }
    let Some(seed) = entry.target_shape_seed else {
        bail!(InvalidArgument, "entry {} has no target_shape_seed", entry.id);
    };
    let context_labels = scene
        .objects
        .iter()
        .map(|o| class_id(classes, &o.class_label))
        .collect::<Result<Vec<_>>>()?;
    Ok(Example {
        context: scene.clone(),
        token_ids: vocab.encode(&entry.text, max_tokens)?.ids,
        context_labels,
        target_class: class_id(classes, &entry.target_class)?,
        target_location: entry.target_location,
        target_size: entry.target_size,
        target_cloud: gen_shape(&entry.target_class, seed, points)?,
    })
}

/// Examples for every entry, matching scenes by id.
pub fn build_examples(
    scenes: &[Scene],
    entries: &[InstructionEntry],
    vocab: &Vocab,
    classes: &[String],
    max_tokens: usize,
    points: usize,
) -> Result<Vec<Example>> {
    entries
        .iter()
        .map(|e| {
            let scene = scenes
                .iter()
                .find(|s| s.scene_id == e.scene_id)
                .ok_or_else(|| Error::Consistency(format!("entry {} refers to missing scene {}", e.id, e.scene_id)))?;
            build_example(scene, e, vocab, classes, max_tokens, points)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{class_names, gen_dataset};

    #[test]
    fn examples_match_entries() {
        let verbs = VerbTable::default();
        let data = gen_dataset(3, 4, (3, 5), 16, &verbs).unwrap();
        let (scenes, entries): (Vec<_>, Vec<_>) = data.into_iter().unzip();
        let vocab = build_vocab(&entries, &verbs).unwrap();
        let classes = class_names();
        let ex = build_examples(&scenes, &entries, &vocab, &classes, 24, 16).unwrap();
        assert_eq!(ex.len(), 4);
        for (e, x) in entries.iter().zip(&ex) {
            assert!(x.token_ids.iter().all(|&i| i != 0), "{}", e.text);
            assert_eq!(classes[x.target_class], e.target_class);
            assert_eq!(x.target_cloud.len(), 16);
        }
        let mut bad = entries[0].clone();
        bad.target_shape_seed = None;
        assert!(build_example(&scenes[0], &bad, &vocab, &classes, 24, 16).is_err());
    }
}
