//! Preference datasets as JSON lines: one object per line with string
//! fields `prompt`, `chosen` and `rejected`. Blank lines are skipped.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};
use sgdpo_core::data::PreferenceExample;

use crate::error::{io_err, LabError, Result};
use crate::fsutil::write_atomic;

const FIELDS: [&str; 3] = ["prompt", "chosen", "rejected"];

fn field(obj: &Map<String, Value>, name: &str) -> std::result::Result<String, String> {
    match obj.get(name) {
        None => Err(format!("missing field `{name}`")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(format!("field `{name}` must be a string, got {other}")),
    }
}

fn parse_line(text: &str) -> std::result::Result<PreferenceExample, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "expected a JSON object".to_string())?;
    let [prompt, chosen, rejected] = FIELDS.map(|f| field(obj, f));
    let ex = PreferenceExample {
        prompt: prompt?,
        chosen: chosen?,
        rejected: rejected?,
    };
    if ex.chosen.is_empty() {
        return Err("field `chosen` is empty".into());
    }
    if ex.rejected.is_empty() {
        return Err("field `rejected` is empty".into());
    }
    Ok(ex)
}

/// Parse JSONL from any reader; `origin` names it in errors.
pub fn read_jsonl<R: Read>(reader: R, origin: &Path) -> Result<Vec<PreferenceExample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line).map_err(|msg| LabError::Jsonl {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PreferenceExample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_jsonl(file, path)
}

pub fn write_jsonl<W: Write>(mut w: W, data: &[PreferenceExample]) -> std::io::Result<()> {
    for ex in data {
        let mut obj = Map::new();
        obj.insert("prompt".into(), Value::String(ex.prompt.clone()));
        obj.insert("chosen".into(), Value::String(ex.chosen.clone()));
        obj.insert("rejected".into(), Value::String(ex.rejected.clone()));
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, data: &[PreferenceExample]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, data).map_err(io_err(path.as_ref()))?;
    write_atomic(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<PreferenceExample>> {
        read_jsonl(s.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn empty_input() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn keeps_order() {
        let text = r#"{"prompt":"a","chosen":"b","rejected":"c"}
{"prompt":"d","chosen":"e","rejected":"f","extra":1}

{"prompt":"","chosen":"h","rejected":"i"}
"#;
        let v = parse(text).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1].prompt, "d");
        assert_eq!(v[2].chosen, "h");
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let text = "{\"prompt\":\"a\",\"chosen\":\"b\",\"rejected\":\"c\"}\n{\"prompt\":\"a\",\"rejected\":\"c\"}\n";
        let err = parse(text).unwrap_err();
        match &err {
            LabError::Jsonl { line: 2, msg, .. } => assert!(msg.contains("`chosen`"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("mem.jsonl, line 2"));
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(
            parse("{\"prompt\": \n"),
            Err(LabError::Jsonl { line: 1, .. })
        ));
        assert!(matches!(
            parse("[1,2]\n"),
            Err(LabError::Jsonl { line: 1, .. })
        ));
        assert!(matches!(
            parse("{\"prompt\":\"a\",\"chosen\":3,\"rejected\":\"c\"}"),
            Err(LabError::Jsonl { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let data = vec![PreferenceExample {
            prompt: "say \"hi\"\n".into(),
            chosen: "h\u{e9}".into(),
            rejected: "\t".into(),
        }];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &data).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), data);
    }
}
