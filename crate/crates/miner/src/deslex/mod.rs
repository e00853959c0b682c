//! Training-time augmentation: person and location surfaces are swapped for
//! synthetic ones, date/time mentions are varied, and the municipality name
//! becomes a fixed placeholder. Annotations and segments are realigned to
//! the edited text.

mod datetime;
mod pools;

pub use datetime::{days_in_month, parse_datetime, perturb_datetime, render, DatetimeVariants, DtFormat, DtValue};
pub use pools::{GeneratorKind, LocaleGenerator, SurfaceClass, SurfaceGenerator, WordListGenerator};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotatedDocument, EntityAnnotation, MetadataKind, MinuteDocument, SegmentAnnotation};
use crate::error::{MinerError, Result};
use crate::text::{find_word_occurrences, fold, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeslexPolicy {
    pub p_name_loc: f64,
    pub p_datetime: f64,
    pub municipality_placeholder: String,
    pub seed: u64,
    /// Repeated mentions of one surface in a document get the same replacement.
    pub consistent_names: bool,
    /// Distinct originals must get distinct replacements.
    pub collision_free: bool,
    pub generator: GeneratorKind,
    pub datetime_variants: DatetimeVariants,
}

impl Default for DeslexPolicy {
    fn default() -> Self {
        DeslexPolicy {
            p_name_loc: 0.60,
            p_datetime: 0.30,
            municipality_placeholder: "@MUNICIPIO".to_string(),
            seed: 0,
            consistent_names: true,
            collision_free: false,
            generator: GeneratorKind::Locale,
            datetime_variants: DatetimeVariants::default(),
        }
    }
}

impl DeslexPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_name_loc", self.p_name_loc), ("p_datetime", self.p_datetime)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MinerError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.municipality_placeholder.trim().is_empty() {
            return Err(MinerError::Config("municipality placeholder is empty".into()));
        }
        Ok(())
    }

    /// The record stored on augmented documents and tagger checkpoints.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "policy": serde_json::to_value(self).expect("policy serializes"),
        })
    }
}

fn class_of(kind: MetadataKind) -> Option<SurfaceClass> {
    match kind {
        MetadataKind::President | MetadataKind::Councilor => Some(SurfaceClass::Person),
        MetadataKind::Location => Some(SurfaceClass::Location),
        _ => None,
    }
}

fn is_datetime(kind: MetadataKind) -> bool {
    matches!(kind, MetadataKind::Date | MetadataKind::StartTime | MetadataKind::EndTime)
}

fn doc_rng(doc_id: &str, seed: u64) -> ChaCha8Rng {
    let digest = Sha256::digest(doc_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(head) ^ seed)
}

fn placeholder_municipality(s: &str, municipality: &str, placeholder: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for occ in find_word_occurrences(s, municipality) {
        out.push_str(&s[last..occ.start]);
        out.push_str(placeholder);
        last = occ.end;
    }
    out.push_str(&s[last..]);
    out
}

struct Edit {
    old: Span,
    new_start: usize,
    new_end: usize,
}

/// Offset mapping from old to new text after non-overlapping edits.
struct EditMap(Vec<Edit>);

impl EditMap {
    fn map_start(&self, s: usize) -> usize {
        let mut delta = 0isize;
        for e in &self.0 {
            if e.old.end <= s {
                delta = e.new_end as isize - e.old.end as isize;
            } else if e.old.start < s {
                return e.new_start;
            } else {
                break;
            }
        }
        (s as isize + delta) as usize
    }

    fn map_end(&self, end: usize) -> usize {
        let mut delta = 0isize;
        for e in &self.0 {
            if e.old.end <= end {
                delta = e.new_end as isize - e.old.end as isize;
            } else if e.old.start < end {
                return e.new_end;
            } else {
                break;
            }
        }
        (end as isize + delta) as usize
    }

    fn map(&self, span: Span) -> Span {
        Span::new(self.map_start(span.start), self.map_end(span.end))
    }
}

/// Surfaces for the selected name/location annotations, keyed by annotation index.
fn draw_surfaces(
    doc: &AnnotatedDocument,
    selected: &[usize],
    policy: &DeslexPolicy,
    generator: &dyn SurfaceGenerator,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<usize, String>> {
    let lang = doc.doc.language;
    let key_of = |i: usize| {
        let e = &doc.entities[i];
        let class = class_of(e.category.kind).expect("selected names only");
        let key = if policy.consistent_names { fold(&e.surface) } else { format!("#{i}") };
        (class, key)
    };
    let mut by_key: BTreeMap<(SurfaceClass, String), String> = BTreeMap::new();
    let mut queues: BTreeMap<SurfaceClass, Vec<String>> = BTreeMap::new();
    if policy.collision_free {
        for class in [SurfaceClass::Person, SurfaceClass::Location] {
            let needed: BTreeSet<_> = selected.iter().map(|i| key_of(*i)).filter(|(c, _)| *c == class).collect();
            if let Some(mut pool) = generator.pool(class, lang) {
                pool.sort();
                pool.dedup();
                if needed.len() > pool.len() {
                    return Err(MinerError::PoolExhausted {
                        needed: needed.len(),
                        available: pool.len(),
                    });
                }
                pool.shuffle(rng);
                queues.insert(class, pool);
            }
        }
    }
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out = BTreeMap::new();
    for &i in selected {
        let key = key_of(i);
        if let Some(s) = by_key.get(&key) {
            out.insert(i, s.clone());
            continue;
        }
        let surface = match queues.get_mut(&key.0) {
            Some(queue) => queue.pop().expect("pool size checked"),
            None if policy.collision_free => {
                let mut attempt = 0;
                loop {
                    let s = generator.generate(key.0, lang, rng);
                    if !used.contains(&s) {
                        break s;
                    }
                    attempt += 1;
                    if attempt > 1000 {
                        return Err(MinerError::PoolExhausted {
                            needed: used.len() + 1,
                            available: used.len(),
                        });
                    }
                }
            }
            None => generator.generate(key.0, lang, rng),
        };
        used.insert(surface.clone());
        by_key.insert(key, surface.clone());
        out.insert(i, surface);
    }
    Ok(out)
}

/// Apply the augmentation to one document. Deterministic in
/// `(doc_id, policy.seed)`.
pub fn deslexicalize(doc: &AnnotatedDocument, policy: &DeslexPolicy) -> Result<AnnotatedDocument> {
    policy.validate()?;
    let text = &doc.doc.text;
    let lang = doc.doc.language;
    let municipality = doc.doc.municipality.as_str();
    let placeholder = policy.municipality_placeholder.as_str();
    let mut rng = doc_rng(&doc.doc.doc_id, policy.seed);

    // one uniform per annotation, in order
    let draws: Vec<f64> = doc.entities.iter().map(|_| rng.gen::<f64>()).collect();
    let mut names = Vec::new();
    let mut dates = Vec::new();
    for (i, (e, u)) in doc.entities.iter().zip(&draws).enumerate() {
        if class_of(e.category.kind).is_some() && *u < policy.p_name_loc {
            names.push(i);
        } else if is_datetime(e.category.kind) && *u < policy.p_datetime {
            dates.push(i);
        }
    }
    let generator = policy.generator.build();
    let mut replacements = draw_surfaces(doc, &names, policy, generator.as_ref(), &mut rng)?;
    for &i in &dates {
        let s = perturb_datetime(&doc.entities[i].surface, lang, &policy.datetime_variants, &mut rng);
        replacements.insert(i, s);
    }

    let mut edits: Vec<(Span, String)> = replacements
        .iter()
        .map(|(i, s)| (doc.entities[*i].span, placeholder_municipality(s, municipality, placeholder)))
        .collect();
    let existing: Vec<Span> = text
        .match_indices(placeholder)
        .map(|(p, m)| Span::new(p, p + m.len()))
        .collect();
    for occ in find_word_occurrences(text, municipality) {
        if existing.iter().any(|p| p.overlaps(&occ)) || edits.iter().any(|(s, _)| s.overlaps(&occ)) {
            continue;
        }
        if let Some(e) = doc.entities.iter().find(|e| e.span.overlaps(&occ) && !e.span.contains(&occ)) {
            log::warn!(
                "{}: municipality mention {occ} straddles entity {}; left unchanged",
                doc.doc.doc_id,
                e.span
            );
            continue;
        }
        edits.push((occ, placeholder.to_string()));
    }
    edits.sort_by_key(|(s, _)| s.start);

    let mut new_text = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(edits.len());
    let mut last = 0;
    for (span, repl) in &edits {
        new_text.push_str(&text[last..span.start]);
        let new_start = new_text.len();
        new_text.push_str(repl);
        map.push(Edit {
            old: *span,
            new_start,
            new_end: new_text.len(),
        });
        last = span.end;
    }
    new_text.push_str(&text[last..]);
    let map = EditMap(map);

    let new_doc = MinuteDocument::new(doc.doc.doc_id.clone(), municipality, lang, new_text);
    let entities = doc
        .entities
        .iter()
        .map(|e| EntityAnnotation::new(e.category, map.map(e.span), &new_doc.text))
        .collect();
    let mut segments = Vec::with_capacity(doc.segments.len());
    for s in &doc.segments {
        let span = match s.span {
            Some(span) => Some(new_doc.snap_to_sentences(map.map(span)).ok_or_else(|| {
                MinerError::Alignment(format!("{}: {} segment lost after edits", doc.doc.doc_id, s.segment_type))
            })?),
            None => None,
        };
        segments.push(SegmentAnnotation {
            segment_type: s.segment_type,
            span,
        });
    }
    let out = AnnotatedDocument {
        doc: new_doc,
        entities,
        segments,
        deslex: Some(policy.provenance()),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MetadataCategory, Presence, SegmentType};
    use crate::text::Language;

    fn annotated(id: &str, muni: &str, text: &str, ents: &[(MetadataCategory, &str)]) -> AnnotatedDocument {
        let full = format!("{text}\nNada mais havendo a tratar.");
        let doc = MinuteDocument::new(id, muni, Language::Pt, &full);
        let mut from = 0;
        let entities = ents
            .iter()
            .map(|(c, s)| {
                let at = text[from..].find(s).unwrap() + from;
                from = at + s.len();
                EntityAnnotation::new(*c, Span::new(at, at + s.len()), &full)
            })
            .collect();
        let segments = vec![
            SegmentAnnotation {
                segment_type: SegmentType::Opening,
                span: Some(doc.sentences[0]),
            },
            SegmentAnnotation {
                segment_type: SegmentType::Closing,
                span: doc.sentences.last().copied(),
            },
        ];
        AnnotatedDocument {
            doc,
            entities,
            segments,
            deslex: None,
        }
    }

    fn sample(id: &str) -> AnnotatedDocument {
        annotated(
            id,
            "Covilhã",
            "Ata da reunião da Câmara Municipal da Covilhã, realizada a 12 de março de 2020, às 10:00, no Salão Nobre, presidida por João Silva, com a vereadora Maria Costa.\nDiscussão de assuntos.\nNada mais havendo, a reunião foi encerrada às 12h30 na COVILHÃ.",
            &[
                (MetadataCategory::plain(MetadataKind::Date), "12 de março de 2020"),
                (MetadataCategory::plain(MetadataKind::StartTime), "10:00"),
                (MetadataCategory::plain(MetadataKind::Location), "Salão Nobre"),
                (MetadataCategory::plain(MetadataKind::President), "João Silva"),
                (MetadataCategory::councilor(Presence::Present), "Maria Costa"),
                (MetadataCategory::plain(MetadataKind::EndTime), "12h30"),
            ],
        )
    }

    fn zero() -> DeslexPolicy {
        DeslexPolicy {
            p_name_loc: 0.0,
            p_datetime: 0.0,
            ..DeslexPolicy::default()
        }
    }

    #[test]
    fn municipality_always_placeholdered() {
        let d = sample("a");
        let out = deslexicalize(&d, &DeslexPolicy::default()).unwrap();
        assert!(!fold(&out.doc.text).contains("covilha"));
        assert_eq!(out.doc.text.matches("@MUNICIPIO").count(), 2);
    }

    #[test]
    fn zero_probabilities_only_placeholder() {
        let d = sample("a");
        let out = deslexicalize(&d, &zero()).unwrap();
        let expected = d.doc.text.replace("Covilhã", "@MUNICIPIO").replace("COVILHÃ", "@MUNICIPIO");
        assert_eq!(out.doc.text, expected);
        let before: Vec<_> = d.entities.iter().map(|e| e.surface.as_str()).collect();
        let after: Vec<_> = out.entities.iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn realigned_spans_slice_exactly() {
        for seed in 0..200 {
            let p = DeslexPolicy {
                seed,
                p_name_loc: 0.9,
                p_datetime: 0.9,
                ..DeslexPolicy::default()
            };
            let d = sample("b");
            let out = deslexicalize(&d, &p).unwrap();
            assert_eq!(out.entities.len(), d.entities.len());
            for (a, b) in d.entities.iter().zip(&out.entities) {
                assert_eq!(a.category, b.category);
                assert_eq!(b.span.slice(&out.doc.text), b.surface);
            }
            out.validate().unwrap();
        }
    }

    #[test]
    fn replacement_frequency_matches_probability() {
        let d = annotated("c", "Évora", "Esteve presente o vereador Rui Pereira às 10:00.", &[
            (MetadataCategory::councilor(Presence::Present), "Rui Pereira"),
        ]);
        let t = annotated("t", "Évora", "Começou às 10:00.", &[(MetadataCategory::plain(MetadataKind::StartTime), "10:00")]);
        let n = 10_000;
        let mut names = 0;
        let mut times = 0;
        for seed in 0..n {
            let p = DeslexPolicy {
                seed,
                ..DeslexPolicy::default()
            };
            names += (deslexicalize(&d, &p).unwrap().entities[0].surface != "Rui Pereira") as usize;
            times += (deslexicalize(&t, &p).unwrap().entities[0].surface != "10:00") as usize;
        }
        let f = names as f64 / n as f64;
        assert!((0.58..=0.62).contains(&f), "name rate {f}");
        let f = times as f64 / n as f64;
        assert!((0.28..=0.32).contains(&f), "time rate {f}");
    }

    #[test]
    fn deterministic_and_idempotent_placeholder() {
        let d = sample("d");
        let p = DeslexPolicy {
            seed: 9,
            ..DeslexPolicy::default()
        };
        let once = deslexicalize(&d, &p).unwrap();
        assert_eq!(once, deslexicalize(&d, &p).unwrap());
        let twice = deslexicalize(&once, &p).unwrap();
        assert_eq!(twice.doc.text.matches("@MUNICIPIO").count(), 2);
    }

    #[test]
    fn consistent_names_within_document() {
        let d = annotated(
            "e",
            "Beja",
            "Presidente João Silva abriu. Intervenção de João Silva.",
            &[
                (MetadataCategory::plain(MetadataKind::President), "João Silva"),
                (MetadataCategory::plain(MetadataKind::President), "João Silva"),
            ],
        );
        let p = DeslexPolicy {
            p_name_loc: 1.0,
            ..DeslexPolicy::default()
        };
        let out = deslexicalize(&d, &p).unwrap();
        assert_eq!(out.entities[0].surface, out.entities[1].surface);
        assert_ne!(out.entities[0].surface, "João Silva");
    }

    #[test]
    fn finite_pool_exhaustion() {
        let names: Vec<String> = (0..11).map(|i| format!("Pessoa{} Apelido{}", i, i)).collect();
        let text = names.join(", ") + ".";
        let ents: Vec<_> = names.iter().map(|n| (MetadataCategory::councilor(Presence::Present), n.as_str())).collect();
        let d = annotated("f", "Beja", &text, &ents);
        let p = DeslexPolicy {
            p_name_loc: 1.0,
            collision_free: true,
            generator: GeneratorKind::WordList,
            ..DeslexPolicy::default()
        };
        assert!(matches!(
            deslexicalize(&d, &p),
            Err(MinerError::PoolExhausted { needed: 11, available: 10 })
        ));
        let d10 = annotated("g", "Beja", &text, &ents[..10]);
        let out = deslexicalize(&d10, &p).unwrap();
        let distinct: BTreeSet<_> = out.entities.iter().map(|e| e.surface.clone()).collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn invalid_policy_rejected() {
        let p = DeslexPolicy {
            p_name_loc: 1.5,
            ..DeslexPolicy::default()
        };
        assert!(matches!(deslexicalize(&sample("h"), &p), Err(MinerError::Config(_))));
    }

    #[test]
    fn provenance_round_trips() {
        let p = DeslexPolicy {
            seed: 4,
            ..DeslexPolicy::default()
        };
        let v = p.provenance();
        assert_eq!(v["seed"], 4);
        let back: DeslexPolicy = serde_json::from_value(v["policy"].clone()).unwrap();
        assert_eq!(back, p);
    }
}
