//! Converter from OpenStreetMap XML extracts to the JSON-lines extract
//! format. Only `node`, `way`, `nd` and `tag` elements are read; ways
//! without a `highway` tag are skipped.
//!
//! A node shared by several ways (or visited twice by one) becomes an
//! intersection candidate; its arity is the number of street arms meeting
//! there, counting two for a way passing through and one for a way ending.

use std::collections::{BTreeMap, HashMap};

use super::{BuildError, ExtractRecord};

#[derive(Debug, Default)]
struct RawWay {
    id: u64,
    refs: Vec<u64>,
    highway: bool,
    name: Option<String>,
}

fn unescape(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", "\"").replace("&apos;", "'").replace("&amp;", "&")
}

/// Attributes of one start tag body, e.g. `node id="1" lat="52.5"`.
fn attributes(body: &str) -> HashMap<&str, String> {
    let mut out = HashMap::new();
    let mut rest = body;
    while let Some(eq) = rest.find('=') {
        let key = rest[..eq].trim();
        let key = key.rsplit(char::is_whitespace).next().unwrap_or(key);
        let after = rest[eq + 1..].trim_start();
        let Some(quote) = after.chars().next().filter(|c| *c == '"' || *c == '\'') else { break };
        let Some(end) = after[1..].find(quote) else { break };
        out.insert(key, unescape(&after[1..1 + end]));
        rest = &after[end + 2..];
    }
    out
}

fn bad(offset: usize, message: impl Into<String>) -> BuildError {
    BuildError::Parse { line: offset, message: message.into() }
}

/// Converts OSM XML into extract records. Error positions are line numbers.
pub fn convert_osm(xml: &str) -> Result<Vec<ExtractRecord>, BuildError> {
    let mut coords: HashMap<u64, [f64; 2]> = HashMap::new();
    let mut ways: Vec<RawWay> = Vec::new();
    let mut current: Option<RawWay> = None;
    let mut pos = 0;
    while let Some(start) = xml[pos..].find('<') {
        let start = pos + start;
        let line = xml[..start].matches('\n').count() + 1;
        let end = xml[start..].find('>').map(|e| start + e).ok_or_else(|| bad(line, "unterminated tag"))?;
        pos = end + 1;
        let tag = &xml[start + 1..end];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(closing) = tag.strip_prefix('/') {
            if closing.trim() == "way" {
                if let Some(w) = current.take() {
                    ways.push(w);
                }
            }
            continue;
        }
        let self_closing = tag.ends_with('/');
        let tag = tag.trim_end_matches('/');
        let name = tag.split_whitespace().next().unwrap_or("");
        let attrs = attributes(&tag[name.len()..]);
        let num = |k: &str| -> Result<u64, BuildError> {
            attrs.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line, format!("<{name}> needs integer {k}")))
        };
        let float = |k: &str| -> Result<f64, BuildError> {
            attrs.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(line, format!("<{name}> needs numeric {k}")))
        };
        match name {
            "node" => {
                coords.insert(num("id")?, [float("lat")?, float("lon")?]);
            }
            "way" => {
                let w = RawWay { id: num("id")?, ..RawWay::default() };
                if self_closing {
                    ways.push(w);
                } else {
                    current = Some(w);
                }
            }
            "nd" => {
                if let Some(w) = current.as_mut() {
                    w.refs.push(num("ref")?);
                }
            }
            "tag" => {
                if let (Some(w), Some(k)) = (current.as_mut(), attrs.get("k")) {
                    match k.as_str() {
                        "highway" => w.highway = true,
                        "name" => w.name = attrs.get("v").cloned(),
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }

    ways.retain(|w| w.highway && w.refs.len() >= 2);
    ways.sort_by_key(|w| w.id);
    let mut arity: BTreeMap<u64, u32> = BTreeMap::new();
    let mut usage: HashMap<u64, u32> = HashMap::new();
    for w in &ways {
        for (i, r) in w.refs.iter().enumerate() {
            let ends = i == 0 || i + 1 == w.refs.len();
            *arity.entry(*r).or_default() += if ends { 1 } else { 2 };
            *usage.entry(*r).or_default() += 1;
        }
    }
    // A closed way counts its start/end node once as a pass-through.
    arity.retain(|id, _| usage[id] > 1);

    let mut out = Vec::new();
    for (id, a) in &arity {
        let coord = *coords.get(id).ok_or_else(|| bad(0, format!("node {id} referenced but not defined")))?;
        out.push(ExtractRecord::Intersection { id: *id, coord, arity: *a });
    }
    for w in ways {
        let pts = w
            .refs
            .iter()
            .map(|r| coords.get(r).copied().ok_or_else(|| bad(0, format!("way {} references undefined node {r}", w.id))))
            .collect::<Result<Vec<_>, _>>()?;
        let end_ref = |r: u64| arity.contains_key(&r).then_some(r);
        out.push(ExtractRecord::Way {
            id: w.id,
            name: w.name,
            coords: pts,
            refs: [end_ref(w.refs[0]), end_ref(w.refs[w.refs.len() - 1])],
        });
    }
    Ok(out)
}
