//! Synthetic lifelong-editing benchmark and the line-delimited record format.
//!
//! Facts are `(subject, relation, object)` triples over closed vocabularies.
//! Every relation has seven templates: one renders the edit prompt
//! and the others render its rephrases. The pre-training corpus teaches the
//! original object; each edit flips it to a different object of the same
//! relation. Subjects are short words over a three-symbol alphabet private to
//! the subject, and every template ends with the subject. Irrelevant prompts
//! come from a separate lowercase trivia domain that shares no subjects or
//! templates with the facts. The centering corpus mixes both domains and is
//! disjoint from every edit, rephrase and held-out irrelevant prompt.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::TokenSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditSample {
    pub edit_id: u64,
    pub prompt: TokenSequence,
    pub target: TokenSequence,
    pub rephrases: Vec<TokenSequence>,
    pub irrelevant_prompt: TokenSequence,
    pub irrelevant_target: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BenchmarkSet {
    pub edits: Vec<EditSample>,
    /// Prompts reserved for estimating the activation centering vector.
    pub centering_corpus: Vec<TokenSequence>,
    pub pretrain_corpus: Vec<(TokenSequence, TokenSequence)>,
}

impl BenchmarkSet {
    /// Checks the disjointness and rephrase invariants.
    pub fn validate(&self) -> Result<()> {
        let mut edit_prompts: HashSet<&[u32]> = HashSet::new();
        for e in &self.edits {
            if e.rephrases.is_empty() {
                return Err(Error::Config(format!(
                    "edit {} has no rephrases",
                    e.edit_id
                )));
            }
            edit_prompts.insert(&e.prompt.ids);
            for r in &e.rephrases {
                edit_prompts.insert(&r.ids);
            }
        }
        if let Some(c) = self
            .centering_corpus
            .iter()
            .find(|c| edit_prompts.contains(c.ids.as_slice()))
        {
            return Err(Error::Config(format!(
                "centering prompt {:?} overlaps an edit prompt",
                c.to_text()
            )));
        }
        Ok(())
    }

    /// First `n` edits, with everything else kept.
    pub fn truncated(&self, n: usize) -> BenchmarkSet {
        BenchmarkSet {
            edits: self.edits.iter().take(n).cloned().collect(),
            centering_corpus: self.centering_corpus.clone(),
            pretrain_corpus: self.pretrain_corpus.clone(),
        }
    }

    /// Same benchmark with only the first `n` centering prompts.
    pub fn with_centering(&self, n: usize) -> BenchmarkSet {
        BenchmarkSet {
            centering_corpus: self.centering_corpus.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

struct Relation {
    templates: [&'static str; 7],
    objects: &'static [&'static str],
}

const RELATIONS: &[Relation] = &[
    Relation {
        templates: [
            "What network aired {}",
            "Which station aired {}",
            "The network that aired {}",
            "On which channel did viewers see {}",
            "Which TV network broadcast {}",
            "What channel first showed {}",
            "Name the broadcaster of {}",
        ],
        objects: &[
            "SVT1", "BBC2", "NHK", "CBS", "ZDF", "RAI3", "TVNZ", "ABC", "Arte", "TF1",
        ],
    },
    Relation {
        templates: [
            "What country is the home of {}",
            "Which nation has as a citizen {}",
            "The country of citizenship of {}",
            "Of which country is a national {}",
            "Name the home country of {}",
            "What is the nationality of {}",
            "Which country issued the passport of {}",
        ],
        objects: &[
            "Norway", "Peru", "Japan", "Chile", "Kenya", "Ghana", "Nepal", "Italy", "Egypt",
            "Spain",
        ],
    },
    Relation {
        templates: [
            "What language was spoken by {}",
            "Which language is spoken by {}",
            "The native language of {}",
            "In what language wrote {}",
            "What is the native tongue of {}",
            "Which tongue was used by {}",
            "Name the first language of {}",
        ],
        objects: &[
            "Dutch", "Tamil", "Greek", "Welsh", "Hindi", "Czech", "Malay", "Farsi", "Irish",
            "Latin",
        ],
    },
    Relation {
        templates: [
            "What sport is played by {}",
            "Which sport made famous {}",
            "The sport played by {}",
            "In which sport competes {}",
            "What game is played professionally by {}",
            "Which sport was taken up by {}",
            "Name the sport of {}",
        ],
        objects: &[
            "rugby", "tennis", "chess", "hockey", "golf", "boxing", "cricket", "polo", "judo",
            "squash",
        ],
    },
    Relation {
        templates: [
            "Which company employs {}",
            "Who is the employer of {}",
            "The company that employs {}",
            "For which firm works {}",
            "What company hired {}",
            "Which business pays the salary of {}",
            "Name the employer of {}",
        ],
        objects: &[
            "Nokia", "Sony", "Intel", "Bayer", "Fiat", "Lego", "Ikea", "Volvo", "Tata", "Pemex",
        ],
    },
    Relation {
        templates: [
            "What river flows through {}",
            "Which river runs through {}",
            "The river that crosses {}",
            "Which river passes by {}",
            "What is the main river of {}",
            "Which river lies beside {}",
            "Name the river of {}",
        ],
        objects: &[
            "Volga", "Rhine", "Nile", "Indus", "Tagus", "Amur", "Ganges", "Loire", "Ebro", "Oder",
        ],
    },
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr",
    "st", "th", "sh", "gl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "th", "m", "x"];

/// Pronounceable made-up word of `syllables` syllables.
fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    w
}

const SUBJECT_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

/// Three words over a private three-symbol alphabet, e.g. `"Qq7Q 7QqqQ q77Q"`.
/// Subjects then differ in which symbols they use, not only in their order.
fn subject_name(rng: &mut ChaCha8Rng) -> String {
    let sig: Vec<u8> = SUBJECT_ALPHABET.choose_multiple(rng, 3).copied().collect();
    let words: Vec<String> = (0..3)
        .map(|_| {
            let len = rng.gen_range(4..=6);
            (0..len)
                .map(|_| *sig.choose(rng).expect("non-empty") as char)
                .collect()
        })
        .collect();
    words.join(" ")
}

const IRR_TEMPLATES: &[(&str, &[&str])] = &[
    (
        "who sang the song {}",
        &[" the {} band", " {} and friends", " dj {}"],
    ),
    (
        "when does season {} come out",
        &[" in {} 2017", " on {} day", " after {} week"],
    ),
    (
        "where is the {} museum located",
        &[" in old {}", " near {} bay", " at {} square"],
    ),
    (
        "how many moons does planet {} have",
        &[" {} moons", " about {} of them", " none since {}"],
    ),
    (
        "who wrote the book {}",
        &[" written by {}", " the poet {}", " an author named {}"],
    ),
    (
        "what year was the {} bridge built",
        &[" in the {} era", " during {} times", " before {}"],
    ),
];

fn irrelevant_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let (tpl, answers) = IRR_TEMPLATES.choose(rng).expect("non-empty");
    let subject = format!("{} {}", word(rng, 2), word(rng, 1));
    let answer = answers
        .choose(rng)
        .expect("non-empty")
        .replace("{}", &word(rng, 1));
    (tpl.replace("{}", &subject), answer)
}

struct Fact {
    subject: String,
    relation: usize,
    original: usize,
}

fn draw_fact(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> Fact {
    let subject = loop {
        let s = subject_name(rng);
        if used.insert(s.clone()) {
            break s;
        }
    };
    let relation = rng.gen_range(0..RELATIONS.len());
    let original = rng.gen_range(0..RELATIONS[relation].objects.len());
    Fact {
        subject,
        relation,
        original,
    }
}

fn render(template: &str, subject: &str) -> String {
    template.replace("{}", subject)
}

/// Maximum rephrases per edit the template inventory supports.
pub const MAX_REPHRASES: usize = 6;

pub fn generate_benchmark(
    n_facts: usize,
    n_rephrases: usize,
    n_irrelevant: usize,
    seed: u64,
) -> Result<BenchmarkSet> {
    if n_facts == 0 {
        return Err(Error::Precondition("n_facts must be >= 1".into()));
    }
    if n_rephrases == 0 {
        return Err(Error::Precondition("n_rephrases must be >= 1".into()));
    }
    if n_rephrases > MAX_REPHRASES {
        return Err(Error::Config(format!(
            "{n_rephrases} rephrases requested but only {MAX_REPHRASES} alternative templates exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut pretrain = Vec::new();
    let teach = |pretrain: &mut Vec<(TokenSequence, TokenSequence)>, fact: &Fact| {
        let rel = &RELATIONS[fact.relation];
        let obj = format!(" {}", rel.objects[fact.original]);
        for tpl in rel.templates {
            pretrain.push((
                TokenSequence::prompt(&render(tpl, &fact.subject)),
                TokenSequence::target(&obj),
            ));
        }
    };

    let mut edits = Vec::with_capacity(n_facts);
    let mut irr_seen = HashSet::new();
    for t in 0..n_facts {
        let fact = draw_fact(&mut rng, &mut used);
        teach(&mut pretrain, &fact);
        let rel = &RELATIONS[fact.relation];
        let mut order: Vec<usize> = (0..rel.templates.len()).collect();
        order.shuffle(&mut rng);
        let new_obj = loop {
            let o = rng.gen_range(0..rel.objects.len());
            if o != fact.original {
                break o;
            }
        };
        let (irr_p, irr_t) = loop {
            let pair = irrelevant_pair(&mut rng);
            if irr_seen.insert(pair.0.clone()) {
                break pair;
            }
        };
        pretrain.push((TokenSequence::prompt(&irr_p), TokenSequence::target(&irr_t)));
        edits.push(EditSample {
            edit_id: t as u64,
            prompt: TokenSequence::prompt(&render(rel.templates[order[0]], &fact.subject)),
            target: TokenSequence::target(&format!(" {}", rel.objects[new_obj])),
            rephrases: order[1..=n_rephrases]
                .iter()
                .map(|&i| TokenSequence::prompt(&render(rel.templates[i], &fact.subject)))
                .collect(),
            irrelevant_prompt: TokenSequence::prompt(&irr_p),
            irrelevant_target: TokenSequence::target(&irr_t),
        });
    }

    // centering prompts alternate between the two domains a query can come
    // from: unedited fact questions and trivia; none is an edit or held-out prompt
    let mut centering = Vec::with_capacity(n_irrelevant);
    for i in 0..n_irrelevant {
        if i % 2 == 0 {
            let fact = draw_fact(&mut rng, &mut used);
            teach(&mut pretrain, &fact);
            let tpl = RELATIONS[fact.relation]
                .templates
                .choose(&mut rng)
                .expect("non-empty");
            centering.push(TokenSequence::prompt(&render(tpl, &fact.subject)));
        } else {
            let (p, t) = loop {
                let pair = irrelevant_pair(&mut rng);
                if irr_seen.insert(pair.0.clone()) {
                    break pair;
                }
            };
            pretrain.push((TokenSequence::prompt(&p), TokenSequence::target(&t)));
            centering.push(TokenSequence::prompt(&p));
        }
    }

    let set = BenchmarkSet {
        edits,
        centering_corpus: centering,
        pretrain_corpus: pretrain,
    };
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RecordKind {
    Edit,
    Centering,
    Pretrain,
}

/// One line of a record file. Edit records follow the usual QA-editing
/// field names; `rephrase` (single string) is accepted as an alias.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Record {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<RecordKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rephrases: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rephrase: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    irrelevant_prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    irrelevant_target: Option<String>,
}

/// Serializes `set` as one JSON record per line: edits first, then
/// centering prompts, then pre-training pairs.
pub fn write_records(set: &BenchmarkSet, mut out: impl Write) -> std::io::Result<()> {
    let line = |r: &Record| serde_json::to_string(r).expect("record serializes");
    for e in &set.edits {
        let r = Record {
            prompt: Some(e.prompt.to_text()),
            target: Some(e.target.to_text()),
            rephrases: Some(e.rephrases.iter().map(TokenSequence::to_text).collect()),
            irrelevant_prompt: Some(e.irrelevant_prompt.to_text()),
            irrelevant_target: Some(e.irrelevant_target.to_text()),
            ..Default::default()
        };
        writeln!(out, "{}", line(&r))?;
    }
    for c in &set.centering_corpus {
        let r = Record {
            kind: Some(RecordKind::Centering),
            prompt: Some(c.to_text()),
            ..Default::default()
        };
        writeln!(out, "{}", line(&r))?;
    }
    for (p, t) in &set.pretrain_corpus {
        let r = Record {
            kind: Some(RecordKind::Pretrain),
            prompt: Some(p.to_text()),
            target: Some(t.to_text()),
            ..Default::default()
        };
        writeln!(out, "{}", line(&r))?;
    }
    Ok(())
}

pub fn save_records(set: &BenchmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_records(set, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn required(field: Option<String>, name: &str, line: usize) -> Result<String> {
    field.ok_or_else(|| Error::Schema {
        line,
        msg: format!("missing field \"{name}\""),
    })
}

fn checked(
    text: &str,
    max_len: usize,
    line: usize,
    role: crate::backbone::Role,
) -> Result<TokenSequence> {
    let seq = TokenSequence::from_text(text, role);
    if seq.is_empty() {
        return Err(Error::Schema {
            line,
            msg: "empty text field".into(),
        });
    }
    if seq.len() > max_len {
        return Err(Error::Length {
            len: seq.len(),
            max: max_len,
        });
    }
    Ok(seq)
}

/// Parses records from `reader`. Lines are 1-based in error messages; blank
/// lines are skipped. A prompt and its target together must fit in
/// `max_seq_len` tokens.
pub fn read_records(reader: impl BufRead, max_seq_len: usize) -> Result<BenchmarkSet> {
    use crate::backbone::Role;
    let mut set = BenchmarkSet::default();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::Schema {
            line: n,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: n,
            msg: e.to_string(),
        })?;
        let fits = |p: &TokenSequence, t: &TokenSequence| -> Result<()> {
            if p.len() + t.len() > max_seq_len {
                return Err(Error::Length {
                    len: p.len() + t.len(),
                    max: max_seq_len,
                });
            }
            Ok(())
        };
        match rec.kind.clone().unwrap_or(RecordKind::Edit) {
            RecordKind::Edit => {
                let prompt = checked(
                    &required(rec.prompt, "prompt", n)?,
                    max_seq_len,
                    n,
                    Role::Prompt,
                )?;
                let target = checked(
                    &required(rec.target, "target", n)?,
                    max_seq_len,
                    n,
                    Role::Target,
                )?;
                fits(&prompt, &target)?;
                let texts = match (rec.rephrases, rec.rephrase) {
                    (Some(v), _) if !v.is_empty() => v,
                    (_, Some(s)) => vec![s],
                    _ => {
                        return Err(Error::Schema {
                            line: n,
                            msg: "missing field \"rephrases\"".into(),
                        })
                    }
                };
                let rephrases = texts
                    .iter()
                    .map(|r| {
                        let s = checked(r, max_seq_len, n, Role::Prompt)?;
                        fits(&s, &target)?;
                        Ok(s)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let irrelevant_prompt = checked(
                    &required(rec.irrelevant_prompt, "irrelevant_prompt", n)?,
                    max_seq_len,
                    n,
                    Role::Prompt,
                )?;
                let irrelevant_target = checked(
                    &required(rec.irrelevant_target, "irrelevant_target", n)?,
                    max_seq_len,
                    n,
                    Role::Target,
                )?;
                fits(&irrelevant_prompt, &irrelevant_target)?;
                set.edits.push(EditSample {
                    edit_id: set.edits.len() as u64,
                    prompt,
                    target,
                    rephrases,
                    irrelevant_prompt,
                    irrelevant_target,
                });
            }
            RecordKind::Centering => {
                let p = checked(
                    &required(rec.prompt, "prompt", n)?,
                    max_seq_len,
                    n,
                    Role::Prompt,
                )?;
                set.centering_corpus.push(p);
            }
            RecordKind::Pretrain => {
                let p = checked(
                    &required(rec.prompt, "prompt", n)?,
                    max_seq_len,
                    n,
                    Role::Prompt,
                )?;
                let t = checked(
                    &required(rec.target, "target", n)?,
                    max_seq_len,
                    n,
                    Role::Target,
                )?;
                fits(&p, &t)?;
                set.pretrain_corpus.push((p, t));
            }
        }
    }
    Ok(set)
}

pub fn load_records(path: impl AsRef<Path>, max_seq_len: usize) -> Result<BenchmarkSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), max_seq_len)
}

/// Short human summary used by the CLI.
pub fn describe(set: &BenchmarkSet) -> String {
    let mut s = String::new();
    let n_reph: usize = set.edits.iter().map(|e| e.rephrases.len()).sum();
    let _ = write!(
        s,
        "{} edits, {} rephrases, {} centering prompts, {} pre-training pairs",
        set.edits.len(),
        n_reph,
        set.centering_corpus.len(),
        set.pretrain_corpus.len()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_fact_schema() {
        let b = generate_benchmark(1, 1, 0, 3).unwrap();
        assert_eq!(b.edits.len(), 1);
        assert_eq!(b.edits[0].rephrases.len(), 1);
        assert_ne!(b.edits[0].prompt, b.edits[0].rephrases[0]);
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(matches!(
            generate_benchmark(0, 1, 0, 0),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            generate_benchmark(1, 0, 0, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn template_exhaustion_is_a_config_error() {
        assert!(generate_benchmark(3, MAX_REPHRASES, 0, 1).is_ok());
        assert!(matches!(
            generate_benchmark(3, MAX_REPHRASES + 1, 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_benchmark() {
        assert_eq!(
            generate_benchmark(50, 3, 20, 9).unwrap(),
            generate_benchmark(50, 3, 20, 9).unwrap()
        );
        assert_ne!(
            generate_benchmark(50, 3, 20, 9).unwrap(),
            generate_benchmark(50, 3, 20, 10).unwrap()
        );
    }

    #[test]
    fn thousand_facts_are_unique() {
        let b = generate_benchmark(1000, 3, 100, 1).unwrap();
        let prompts: HashSet<_> = b.edits.iter().map(|e| e.prompt.ids.clone()).collect();
        assert_eq!(prompts.len(), 1000);
        let irr: HashSet<_> = b
            .edits
            .iter()
            .map(|e| e.irrelevant_prompt.ids.clone())
            .collect();
        assert_eq!(irr.len(), 1000);
        b.validate().unwrap();
    }

    #[test]
    fn edits_flip_the_pretrained_object() {
        let b = generate_benchmark(200, 2, 0, 5).unwrap();
        for e in &b.edits {
            let taught: Vec<_> = b
                .pretrain_corpus
                .iter()
                .filter(|(p, _)| *p == e.prompt)
                .map(|(_, t)| t)
                .collect();
            assert_eq!(taught.len(), 1);
            assert_ne!(taught[0].ids, e.target.ids);
            for r in &e.rephrases {
                // rephrases are taught the same original object as the prompt
                assert!(b
                    .pretrain_corpus
                    .iter()
                    .any(|(p, t)| p == r && t == taught[0]));
            }
        }
    }

    #[test]
    fn empty_file_is_an_empty_benchmark() {
        let b = read_records(std::io::Cursor::new(""), 96).unwrap();
        assert_eq!(b, BenchmarkSet::default());
    }

    #[test]
    fn missing_target_names_the_line() {
        let text = concat!(
            r#"{"prompt":"a?","target":" b","rephrase":"c?","irrelevant_prompt":"d","irrelevant_target":" e"}"#,
            "\n",
            r#"{"prompt":"a?","rephrase":"c?","irrelevant_prompt":"d","irrelevant_target":" e"}"#,
            "\n"
        );
        match read_records(std::io::Cursor::new(text), 96) {
            Err(Error::Schema { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("target"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn overlong_record_is_a_length_error() {
        let text = r#"{"prompt":"abcdefgh","target":" b","rephrase":"c","irrelevant_prompt":"d","irrelevant_target":"e"}"#;
        assert!(matches!(
            read_records(std::io::Cursor::new(text), 8),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn qa_example_roundtrips() {
        let text = r#"{"prompt":"What network aired Faszination Wissen?","rephrase":"Which station aired Faszination Wissen?","target":"SVT1","irrelevant_prompt":"When does english dragon ball super come out","irrelevant_target":"starting on January 7, 2017"}"#;
        let b = read_records(std::io::Cursor::new(text), 96).unwrap();
        let e = &b.edits[0];
        assert_eq!(e.prompt.to_text(), "What network aired Faszination Wissen?");
        assert_eq!(
            e.rephrases[0].to_text(),
            "Which station aired Faszination Wissen?"
        );
        assert_eq!(e.target.to_text(), "SVT1");
        assert_eq!(e.irrelevant_target.to_text(), "starting on January 7, 2017");
        let mut buf = Vec::new();
        write_records(&b, &mut buf).unwrap();
        let again = read_records(std::io::Cursor::new(buf), 96).unwrap();
        assert_eq!(again, b);
    }

    #[test]
    fn generated_set_roundtrips_through_records() {
        let b = generate_benchmark(30, 3, 10, 2).unwrap();
        let mut buf = Vec::new();
        write_records(&b, &mut buf).unwrap();
        assert_eq!(read_records(std::io::Cursor::new(buf), 96).unwrap(), b);
    }
}
