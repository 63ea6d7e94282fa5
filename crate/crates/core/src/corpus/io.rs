//! Corpus files: UTF-8, one JSON object per line. Line 1 is the header
//! `{"version":1,"ontology":{..},"vocab_size":N,"noise":..}`; each following
//! line is one instance:
//!
//! ```text
//! {"id":0,"tokens":[..],
//!  "head":{"span":[s,e],"ds_type":t,"current_type":t},
//!  "tail":{"span":[s,e],"ds_type":t,"current_type":t},
//!  "ds_relation":r,"current_relation":r,"confidence":1.0,
//!  "gold":{"relation":r,"head_type":t,"tail_type":t} | null}
//! ```
//!
//! Keys are always written in this order so equal corpora give equal bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Corpus, Instance, Mention, NoiseSpec, Span, TypeId, TypeOntology};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    ontology: TypeOntology,
    vocab_size: usize,
    noise: Option<NoiseSpec>,
}

#[derive(Serialize)]
struct MentionRecord {
    span: [usize; 2],
    ds_type: TypeId,
    current_type: TypeId,
}

#[derive(Serialize)]
struct GoldRecord {
    relation: Option<TypeId>,
    head_type: Option<TypeId>,
    tail_type: Option<TypeId>,
}

#[derive(Serialize)]
struct InstanceRecord<'a> {
    id: u64,
    tokens: &'a [u32],
    head: MentionRecord,
    tail: MentionRecord,
    ds_relation: TypeId,
    current_relation: TypeId,
    confidence: f64,
    gold: Option<GoldRecord>,
}

impl<'a> From<&'a Instance> for InstanceRecord<'a> {
    fn from(i: &'a Instance) -> Self {
        let m = |m: &Mention| MentionRecord {
            span: [m.span.start, m.span.end],
            ds_type: m.ds_type,
            current_type: m.current_type,
        };
        let has_gold = i.gold_relation.is_some() || i.head.gold_type.is_some() || i.tail.gold_type.is_some();
        InstanceRecord {
            id: i.id,
            tokens: &i.tokens,
            head: m(&i.head),
            tail: m(&i.tail),
            ds_relation: i.ds_relation,
            current_relation: i.current_relation,
            confidence: i.confidence,
            gold: has_gold.then_some(GoldRecord {
                relation: i.gold_relation,
                head_type: i.head.gold_type,
                tail_type: i.tail.gold_type,
            }),
        }
    }
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    let header = Header {
        version: CORPUS_FORMAT_VERSION,
        ontology: corpus.ontology().clone(),
        vocab_size: corpus.vocab_size(),
        noise: corpus.noise().cloned(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for inst in corpus.instances() {
        serde_json::to_writer(&mut w, &InstanceRecord::from(inst))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_corpus(corpus, BufWriter::new(f))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(BufReader::new(File::open(path)?))
}

fn parse_err(line: usize, field: &str, message: impl ToString) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn take<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str, path: &str, line: usize) -> Result<T> {
    let field = if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    };
    let v = obj.get(key).ok_or_else(|| parse_err(line, &field, "missing field"))?;
    serde_json::from_value(v.clone()).map_err(|e| parse_err(line, &field, e))
}

fn object<'v>(v: &'v Value, field: &str, line: usize) -> Result<&'v Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| parse_err(line, field, "expected a JSON object"))
}

fn parse_mention(obj: &Map<String, Value>, key: &str, gold: Option<TypeId>, line: usize) -> Result<Mention> {
    let v = obj.get(key).ok_or_else(|| parse_err(line, key, "missing field"))?;
    let m = object(v, key, line)?;
    let span: [usize; 2] = take(m, "span", key, line)?;
    let ds_type: TypeId = take(m, "ds_type", key, line)?;
    let current_type: TypeId = take(m, "current_type", key, line)?;
    Ok(Mention {
        span: Span::new(span[0], span[1]),
        ds_type,
        gold_type: gold,
        current_type,
    })
}

fn parse_instance(text: &str, line: usize) -> Result<Instance> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err(line, "<record>", e))?;
    let obj = object(&v, "<record>", line)?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "id" | "tokens" | "head" | "tail" | "ds_relation" | "current_relation" | "confidence" | "gold"
        ) {
            return Err(parse_err(line, key, "unknown field"));
        }
    }
    let (gold_rel, gold_head, gold_tail) = match obj.get("gold") {
        None | Some(Value::Null) => (None, None, None),
        Some(g) => {
            let g = object(g, "gold", line)?;
            (
                take::<Option<TypeId>>(g, "relation", "gold", line)?,
                take::<Option<TypeId>>(g, "head_type", "gold", line)?,
                take::<Option<TypeId>>(g, "tail_type", "gold", line)?,
            )
        }
    };
    Ok(Instance {
        id: take(obj, "id", "", line)?,
        tokens: take(obj, "tokens", "", line)?,
        head: parse_mention(obj, "head", gold_head, line)?,
        tail: parse_mention(obj, "tail", gold_tail, line)?,
        ds_relation: take(obj, "ds_relation", "", line)?,
        gold_relation: gold_rel,
        current_relation: take(obj, "current_relation", "", line)?,
        confidence: take(obj, "confidence", "", line)?,
    })
}

pub fn read_corpus<R: Read>(r: R) -> Result<Corpus> {
    let mut lines = BufReader::new(r).lines();
    let header_line = lines.next().ok_or_else(|| parse_err(1, "<header>", "empty file"))??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, "<header>", e))?;
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(parse_err(
            1,
            "version",
            format!("unsupported version {}", header.version),
        ));
    }
    header.ontology.validate().map_err(|e| parse_err(1, "ontology", e))?;

    let mut instances = Vec::new();
    for (idx, text) in lines.enumerate() {
        let text = text?;
        let line = idx + 2;
        if text.trim().is_empty() {
            continue;
        }
        instances.push(parse_instance(&text, line)?);
    }
    // Corpus validation reports `line = position + 2`, matching file lines
    // as long as no blank lines were skipped.
    Corpus::with_noise(header.ontology, header.vocab_size, instances, header.noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, inject_noise, GeneratorConfig};

    fn sample() -> Corpus {
        let cfg = GeneratorConfig {
            num_instances: 200,
            ..GeneratorConfig::default()
        };
        let c = generate_corpus(&cfg, 4).unwrap();
        let spec = NoiseSpec {
            fp_rate: 0.2,
            fn_rate: 0.3,
            entity_noise_rate: 0.1,
            seed: 1,
        };
        inject_noise(&c, &spec).unwrap()
    }

    fn to_bytes(c: &Corpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_corpus(c, &mut buf).unwrap();
        buf
    }

    #[test]
    fn roundtrip_is_identity_and_bytes_are_stable() {
        let mut c = sample();
        let mut inst = c.instances().to_vec();
        inst[3].confidence = 0.5329999999999999;
        inst[3].current_relation = 0;
        c = c.with_instances(inst).unwrap();
        let bytes = to_bytes(&c);
        let back = read_corpus(&bytes[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let c = sample().with_instances(Vec::new()).unwrap();
        let bytes = to_bytes(&c);
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = read_corpus(&bytes[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.ontology(), c.ontology());
    }

    #[test]
    fn out_of_range_type_reports_line_and_field() {
        let c = sample();
        let text = String::from_utf8(to_bytes(&c)).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[5] = lines[5].replacen("\"ds_relation\":", "\"ds_relation\":99,\"x\":", 1);
        let broken = lines.join("\n");
        match read_corpus(broken.as_bytes()) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 6);
                assert_eq!(field, "x");
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut v: Value = serde_json::from_str(text.lines().nth(3).unwrap()).unwrap();
        v["head"]["ds_type"] = Value::from(400);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[3] = v.to_string();
        match read_corpus(lines.join("\n").as_bytes()) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field, "head.ds_type");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_field_is_named() {
        let c = sample();
        let text = String::from_utf8(to_bytes(&c)).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut v: Value = serde_json::from_str(&lines[2]).unwrap();
        v["confidence"] = Value::from("high");
        lines[2] = v.to_string();
        match read_corpus(lines.join("\n").as_bytes()) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!((line, field.as_str()), (3, "confidence"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
