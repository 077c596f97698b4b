//! Random workflow generation and single-fault mutation operators, shared by
//! the property tests, the acceptance suite and the Python bindings, plus a
//! tiny HTTP mock for exercising the network clients offline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diagnostic::ErrorCategory;
use crate::frontends::{emit, SyntaxStyle};
use crate::ir::{Edge, ParamMap, ParamValue, PortRef, Workflow};
use crate::registry::{FunctionSchema, ParamKind, ParamSpec, Registry};

/// Words that are identifiers in every style and occasionally used verbatim
/// as node ids, to exercise keyword handling in the parsers.
const TRICKY_IDS: &[&str] = &[
    "as", "with", "and", "to", "into", "set", "make", "feed", "connect", "load", "save", "sample", "blend",
    "image", "model", "_", "x",
];

const STRING_ALPHABET: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', '.', '/', '-', '_', '"', '\\', '\n', '\t', '#', '{', ';', 'é', '猫',
    '\u{1}',
];

fn random_string<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(0..12);
    (0..len).map(|_| *STRING_ALPHABET.choose(rng).unwrap()).collect()
}

fn random_real<R: Rng>(rng: &mut R, range: Option<[f64; 2]>) -> f64 {
    let [lo, hi] = range.unwrap_or([-1.0e6, 1.0e6]);
    match rng.gen_range(0..4) {
        0 => lo,
        1 => hi,
        // a few decimals, as a person would write them
        2 => {
            (rng.gen_range(lo..=hi) * 100.0)
                .round()
                .clamp(lo * 100.0, hi * 100.0)
                / 100.0
        }
        _ => rng.gen_range(lo..=hi),
    }
}

/// A value admissible under `spec`.
pub fn random_param<R: Rng>(rng: &mut R, spec: &ParamSpec) -> ParamValue {
    match spec.kind {
        ParamKind::Int => {
            let [lo, hi] = spec.range.unwrap_or([-1.0e9, 1.0e9]);
            ParamValue::Int(rng.gen_range(lo as i64..=hi as i64))
        }
        ParamKind::Real => ParamValue::Real(random_real(rng, spec.range)),
        ParamKind::String => ParamValue::Str(random_string(rng)),
        ParamKind::Bool => ParamValue::Bool(rng.gen()),
        ParamKind::Choice => {
            let choices = spec.choices.as_deref().unwrap_or_default();
            ParamValue::Str(choices.choose(rng).cloned().unwrap_or_default())
        }
    }
}

fn fresh_id<R: Rng>(rng: &mut R, index: usize, taken: &BTreeSet<String>) -> String {
    if rng.gen_bool(0.15) {
        let word = TRICKY_IDS.choose(rng).unwrap();
        if !taken.contains(*word) {
            return word.to_string();
        }
    }
    let len = rng.gen_range(1..=5);
    let stem: String = (0..len)
        .map(|_| *b"abcdefghijklmnopqrstuvwxyz_".choose(rng).unwrap() as char)
        .collect();
    format!("{stem}{index}")
}

/// Random workflow of 1..=`max_nodes` nodes that validates without errors
/// against `r`. Every required input is fed from an earlier node, optional
/// inputs are fed about half the time, and parameters are set at random.
pub fn random_workflow<R: Rng>(rng: &mut R, r: &Registry, max_nodes: usize) -> Workflow {
    let target = rng.gen_range(1..=max_nodes.max(1));
    let mut w = Workflow::new();
    let mut taken = BTreeSet::new();
    // (node id, port name, schema) of every output produced so far
    let mut outputs: Vec<(String, &str, &FunctionSchema)> = Vec::new();
    for index in 0..target {
        let feeders = |modality| -> Vec<usize> {
            outputs
                .iter()
                .enumerate()
                .filter(|(_, (_, port, s))| s.output(port).unwrap().modality.compatible_with(modality))
                .map(|(i, _)| i)
                .collect()
        };
        let placeable: Vec<&FunctionSchema> = r
            .schemas()
            .filter(|s| {
                s.inputs
                    .iter()
                    .filter(|p| p.required)
                    .all(|p| !feeders(p.modality).is_empty())
            })
            .collect();
        let schema = *placeable.choose(rng).expect("catalog has a source function");
        let id = fresh_id(rng, index, &taken);
        let mut params = ParamMap::new();
        for spec in &schema.params {
            if spec.required || rng.gen_bool(0.5) {
                params.insert(spec.name.clone(), random_param(rng, spec));
            }
        }
        let mut edges = Vec::new();
        for port in &schema.inputs {
            let pool = feeders(port.modality);
            if pool.is_empty() || (!port.required && rng.gen_bool(0.5)) {
                continue;
            }
            let (src, out, _) = &outputs[*pool.choose(rng).unwrap()];
            edges.push(Edge::new(
                PortRef::new(src.clone(), *out),
                PortRef::new(id.clone(), port.name.clone()),
            ));
        }
        // shuffled insertion order: parsers must not depend on it
        params.shuffle_order(rng);
        w.add_node(id.clone(), schema.type_name.clone(), params)
            .expect("generated ids are identifiers");
        for e in edges {
            w.add_edge(e).expect("fresh input");
        }
        for port in &schema.outputs {
            outputs.push((id.clone(), port.name.as_str(), schema));
        }
        taken.insert(id);
    }
    w
}

trait ShuffleOrder {
    fn shuffle_order<R: Rng>(&mut self, rng: &mut R);
}

impl ShuffleOrder for ParamMap {
    fn shuffle_order<R: Rng>(&mut self, rng: &mut R) {
        let mut entries: Vec<_> = self.drain(..).collect();
        entries.shuffle(rng);
        self.extend(entries);
    }
}

/// A faulty variant of a clean workflow, as declarative program text.
#[derive(Debug, Clone)]
pub struct Mutant {
    pub category: ErrorCategory,
    pub description: String,
    pub text: String,
}

/// Applies the single-fault operator for `category`. Returns `None` when the
/// workflow offers no site for it (e.g. no ranged parameter to break).
pub fn mutate<R: Rng>(rng: &mut R, w: &Workflow, r: &Registry, category: ErrorCategory) -> Option<Mutant> {
    let mut m = w.clone();
    let description = match category {
        ErrorCategory::InvalidFormat => {
            let text = emit(w, SyntaxStyle::Declarative).ok()?;
            let (text, description) = corrupt_text(rng, &text)?;
            return Some(Mutant {
                category,
                description,
                text,
            });
        }
        ErrorCategory::UnknownFunction => {
            let ids: Vec<String> = w.nodes().map(|n| n.id.clone()).collect();
            let id = ids.choose(rng)?;
            let old = w.node(id)?.type_name.clone();
            let new = misspell(rng, &old, r);
            m.set_type(id, &new).ok()?;
            format!("renamed type of `{id}` from {old} to {new}")
        }
        ErrorCategory::InvalidParameter => {
            let sites: Vec<(String, &ParamSpec)> = w
                .nodes()
                .filter_map(|n| r.get(&n.type_name).map(|s| (n, s)))
                .flat_map(|(n, s)| s.params.iter().map(move |p| (n.id.clone(), p)))
                .filter(|(_, p)| p.range.is_some() || p.kind == ParamKind::Choice)
                .collect();
            let (id, spec) = sites.choose(rng)?;
            let bad = invalid_value(rng, spec);
            m.set_param(id, &spec.name, bad.clone()).ok()?;
            format!("set {id}.{} to {bad}", spec.name)
        }
        ErrorCategory::ConnectionError => {
            let (edge, src) = cross_modality_site(rng, w, r)?;
            m.disconnect(&edge.dst).ok()?;
            m.add_edge(Edge::new(src.clone(), edge.dst.clone())).ok()?;
            format!("rewired {} to read from {src}", edge.dst)
        }
        ErrorCategory::TopologicalGap => {
            let required: Vec<&Edge> = w
                .edges()
                .iter()
                .filter(|e| {
                    w.node(&e.dst.node_id)
                        .and_then(|n| r.get(&n.type_name))
                        .and_then(|s| s.input(&e.dst.port_name))
                        .is_some_and(|p| p.required)
                })
                .collect();
            let e = *required.choose(rng)?;
            m.disconnect(&e.dst).ok()?;
            format!("deleted the flow into {}", e.dst)
        }
        ErrorCategory::CycleOrUnreachable => {
            let (edge, src) = back_edge_site(rng, w, r)?;
            m.disconnect(&edge.dst).ok()?;
            m.add_edge(Edge::new(src.clone(), edge.dst.clone())).ok()?;
            format!("added back edge {src} -> {}", edge.dst)
        }
    };
    Some(Mutant {
        category,
        description,
        text: emit(&m, SyntaxStyle::Declarative).ok()?,
    })
}

fn corrupt_text<R: Rng>(rng: &mut R, text: &str) -> Option<(String, String)> {
    let positions = |pat: char| -> Vec<usize> {
        text.char_indices()
            .filter(|(_, c)| *c == pat)
            .map(|(i, _)| i)
            .collect()
    };
    for _ in 0..8 {
        let mut out = text.to_string();
        let desc = match rng.gen_range(0..4) {
            0 => {
                let i = *positions(';').choose(rng)?;
                out.remove(i);
                "deleted a `;`"
            }
            1 => {
                let Some(&i) = positions(')').choose(rng) else {
                    continue;
                };
                out.remove(i);
                "deleted a `)`"
            }
            2 => {
                let Some(&i) = positions('\n').choose(rng) else {
                    continue;
                };
                out.insert_str(i, " @");
                "inserted a stray `@`"
            }
            _ => {
                let i = out.rfind('}')?;
                out.truncate(i);
                "removed the closing brace"
            }
        };
        return Some((out, desc.to_string()));
    }
    None
}

fn misspell<R: Rng>(rng: &mut R, name: &str, r: &Registry) -> String {
    loop {
        let mut chars: Vec<char> = name.chars().collect();
        match rng.gen_range(0..3) {
            0 if chars.len() > 1 => {
                chars.remove(rng.gen_range(0..chars.len()));
            }
            1 => {
                let i = rng.gen_range(0..chars.len());
                chars[i] = if chars[i].is_ascii_uppercase() {
                    chars[i].to_ascii_lowercase()
                } else {
                    chars[i].to_ascii_uppercase()
                };
            }
            _ => chars.push('X'),
        }
        let candidate: String = chars.into_iter().collect();
        if crate::ir::is_identifier(&candidate) && r.get(&candidate).is_none() {
            return candidate;
        }
    }
}

fn invalid_value<R: Rng>(rng: &mut R, spec: &ParamSpec) -> ParamValue {
    if let Some([lo, hi]) = spec.range {
        let below = rng.gen_bool(0.5);
        let offset = rng.gen_range(1..1000) as f64;
        let v = if below { lo - offset } else { hi + offset };
        return match spec.kind {
            ParamKind::Int => ParamValue::Int(v as i64),
            _ => ParamValue::Real(v + 0.5),
        };
    }
    ParamValue::Str(format!("not_{}", rng.gen_range(0..1000)))
}

fn descendants(w: &Workflow, start: &str) -> BTreeSet<String> {
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in w.edges() {
        succ.entry(e.src.node_id.as_str())
            .or_default()
            .push(e.dst.node_id.as_str());
    }
    let mut seen = BTreeSet::from([start.to_string()]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for s in succ.get(n).into_iter().flatten() {
            if seen.insert(s.to_string()) {
                stack.push(s);
            }
        }
    }
    seen
}

fn all_outputs<'a>(w: &'a Workflow, r: &'a Registry) -> Vec<(PortRef, crate::ir::Modality)> {
    w.nodes()
        .filter_map(|n| r.get(&n.type_name).map(|s| (n, s)))
        .flat_map(|(n, s)| {
            s.outputs
                .iter()
                .map(move |p| (PortRef::new(n.id.clone(), p.name.clone()), p.modality))
        })
        .collect()
}

fn dst_modality(w: &Workflow, r: &Registry, dst: &PortRef) -> Option<crate::ir::Modality> {
    let n = w.node(&dst.node_id)?;
    Some(r.get(&n.type_name)?.input(&dst.port_name)?.modality)
}

/// An edge and an incompatible, non-downstream source to redirect it to.
fn cross_modality_site<R: Rng>(rng: &mut R, w: &Workflow, r: &Registry) -> Option<(Edge, PortRef)> {
    let outs = all_outputs(w, r);
    let mut sites = Vec::new();
    for e in w.edges() {
        let Some(want) = dst_modality(w, r, &e.dst) else {
            continue;
        };
        let below = descendants(w, &e.dst.node_id);
        for (src, m) in &outs {
            if !m.compatible_with(want) && !below.contains(&src.node_id) {
                sites.push((e.clone(), src.clone()));
            }
        }
    }
    sites.choose(rng).cloned()
}

/// An edge and a compatible source downstream of its destination.
fn back_edge_site<R: Rng>(rng: &mut R, w: &Workflow, r: &Registry) -> Option<(Edge, PortRef)> {
    let outs = all_outputs(w, r);
    let mut sites = Vec::new();
    for e in w.edges() {
        let Some(want) = dst_modality(w, r, &e.dst) else {
            continue;
        };
        let below = descendants(w, &e.dst.node_id);
        for (src, m) in &outs {
            if m.compatible_with(want) && below.contains(&src.node_id) {
                sites.push((e.clone(), src.clone()));
            }
        }
    }
    sites.choose(rng).cloned()
}

/// Model answers that reproduce `w` through the two inference stages: the
/// node declarations, then the connections, each in a fenced block.
pub fn staged_responses(w: &Workflow, style: SyntaxStyle) -> (String, String) {
    let mut nodes = w.clone();
    for e in w.edges() {
        nodes.disconnect(&e.dst).expect("edge exists");
    }
    let full = emit(w, style).expect("printable workflow");
    let decls = emit(&nodes, style).expect("printable workflow");
    let declared: BTreeSet<&str> = decls.lines().collect();
    let links: Vec<&str> = full.lines().filter(|l| !declared.contains(l)).collect();
    (fenced(&decls), fenced(&links.join("\n")))
}

/// Wraps program text in a fenced code block, as a chat model would.
pub fn fenced(text: &str) -> String {
    format!("```\n{}\n```", text.trim_end())
}

/// Log of request lines (`"POST /prompt HTTP/1.1"`) seen by a [`wire_mock`].
pub type RequestLog = Arc<Mutex<Vec<String>>>;

/// Minimal HTTP/1.1 server on an ephemeral localhost port. Every request is
/// answered by `respond(request_line, body) -> (status, json_body)`; one
/// connection per request. Returns the base URL and the request log.
pub fn wire_mock(respond: impl Fn(&str, &str) -> (u16, String) + Send + 'static) -> (String, RequestLog) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
    let addr = listener.local_addr().expect("local addr");
    let log = RequestLog::default();
    let seen = log.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let Ok(clone) = stream.try_clone() else { continue };
            let mut reader = BufReader::new(clone);
            let mut line = String::new();
            if reader.read_line(&mut line).is_err() || line.is_empty() {
                continue;
            }
            let mut len = 0;
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).is_err() || h.trim().is_empty() {
                    break;
                }
                if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let line = line.trim().to_string();
            seen.lock().unwrap().push(line.clone());
            let (code, payload) = respond(&line, &String::from_utf8_lossy(&body));
            let _ = write!(
                stream,
                "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    (format!("http://{addr}"), log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::validator::{check, check_source};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_workflows_validate() {
        let r = Registry::test_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let w = random_workflow(&mut rng, &r, 20);
            assert!(w.node_count() <= 20);
            let errors: Vec<_> = check(&w, &r).into_iter().filter(|d| d.is_error()).collect();
            assert!(errors.is_empty(), "{errors:#?}\n{}", w.to_json());
        }
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let r = Registry::test_catalog();
        let a = random_workflow(&mut ChaCha8Rng::seed_from_u64(3), &r, 12);
        let b = random_workflow(&mut ChaCha8Rng::seed_from_u64(3), &r, 12);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn every_operator_hits_its_category() {
        let r = Registry::test_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = fixtures::blend_pipeline();
        for cat in ErrorCategory::ALL {
            for _ in 0..10 {
                let m = mutate(&mut rng, &w, &r, cat).expect("blend pipeline has every site");
                let (_, diags) = check_source(&m.text, SyntaxStyle::Declarative, &r);
                assert!(
                    diags.iter().any(|d| d.is_error() && d.category == cat),
                    "{cat:?}: {}\n{diags:#?}",
                    m.description
                );
            }
        }
    }

    #[test]
    fn generated_workflows_round_trip_in_every_style() {
        let r = Registry::test_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let w = random_workflow(&mut rng, &r, 20);
            for style in [
                SyntaxStyle::Declarative,
                SyntaxStyle::Dataflow,
                SyntaxStyle::PseudoNatural,
            ] {
                let text = emit(&w, style).unwrap();
                let back = crate::frontends::parse(&text, style);
                assert!(
                    back.diagnostics.is_empty(),
                    "{style:?}\n{text}\n{:#?}",
                    back.diagnostics
                );
                assert!(back.workflow.unwrap().canonical_eq(&w), "{style:?}\n{text}");
            }
        }
    }
}
