//! Newline-delimited dataset records.
//!
//! ```text
//! # feddrop dataset v1
//! # generator num_domains=3 num_clients=300 ... seed=20220415
//! [clients]
//! <domain>,<client id>,<label>,<f1>,<f2>,...
//! [eval domain=<d>]
//! <domain>,-,<label>,<f1>,<f2>,...
//! ```
//!
//! One example per line. Features use Rust's shortest round-trip float
//! formatting, so a written dataset reads back bit-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use feddrop_core::data::{ClientData, EvalSet, Example, FederatedDataset, GeneratorConfig};

use crate::error::{Error, Result};

pub const HEADER: &str = "# feddrop dataset v1";

fn push_record(out: &mut String, domain: usize, client: Option<usize>, e: &Example) {
    let _ = write!(out, "{domain},");
    match client {
        Some(id) => {
            let _ = write!(out, "{id}");
        }
        None => out.push('-'),
    }
    let _ = write!(out, ",{}", e.label);
    for v in &e.features {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

fn generator_line(c: &GeneratorConfig) -> String {
    format!(
        "# generator num_domains={} num_clients={} examples_per_client={} eval_examples_per_domain={} \
         input_dim={} num_classes={} modes_per_class={} class_separation={} class_skew={} domain_shift={} seed={}",
        c.num_domains,
        c.num_clients,
        c.examples_per_client,
        c.eval_examples_per_domain,
        c.input_dim,
        c.num_classes,
        c.modes_per_class,
        c.class_separation,
        c.class_skew,
        c.domain_shift,
        c.seed
    )
}

pub fn to_string(ds: &FederatedDataset) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&generator_line(&ds.config));
    out.push('\n');
    out.push_str("[clients]\n");
    for c in &ds.clients {
        for e in &c.examples {
            push_record(&mut out, c.domain, Some(c.id), e);
        }
    }
    for set in &ds.eval {
        let _ = writeln!(out, "[eval domain={}]", set.domain);
        for e in &set.examples {
            push_record(&mut out, set.domain, None, e);
        }
    }
    out
}

pub fn write(ds: &FederatedDataset, path: &Path) -> Result<()> {
    fs::write(path, to_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<FederatedDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|(line, msg)| Error::Dataset { path: path.to_path_buf(), line, msg })
}

fn parse_generator(line: &str) -> Result<GeneratorConfig, String> {
    let mut kv = BTreeMap::new();
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("expected key=value, got {tok:?}"))?;
        kv.insert(k, v);
    }
    fn get<T: std::str::FromStr>(kv: &mut BTreeMap<&str, &str>, key: &str) -> Result<T, String> {
        let v = kv.remove(key).ok_or_else(|| format!("generator line lacks {key}"))?;
        v.parse().map_err(|_| format!("bad value for {key}: {v:?}"))
    }
    let cfg = GeneratorConfig {
        num_domains: get(&mut kv, "num_domains")?,
        num_clients: get(&mut kv, "num_clients")?,
        examples_per_client: get(&mut kv, "examples_per_client")?,
        eval_examples_per_domain: get(&mut kv, "eval_examples_per_domain")?,
        input_dim: get(&mut kv, "input_dim")?,
        num_classes: get(&mut kv, "num_classes")?,
        modes_per_class: get(&mut kv, "modes_per_class")?,
        class_separation: get(&mut kv, "class_separation")?,
        class_skew: get(&mut kv, "class_skew")?,
        domain_shift: get(&mut kv, "domain_shift")?,
        seed: get(&mut kv, "seed")?,
    };
    if let Some(k) = kv.keys().next() {
        return Err(format!("unknown generator key {k:?}"));
    }
    Ok(cfg)
}

enum Section {
    None,
    Clients,
    Eval(usize),
}

/// Parses dataset text; errors carry a 1-based line number.
pub fn parse(text: &str) -> Result<FederatedDataset, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == HEADER => {}
        _ => return Err((1, format!("missing header {HEADER:?}"))),
    }
    let mut config = None;
    let mut section = Section::None;
    let mut clients: BTreeMap<usize, ClientData> = BTreeMap::new();
    let mut eval: Vec<EvalSet> = Vec::new();
    for (n, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# generator ") {
            config = Some(parse_generator(rest).map_err(|m| (n, m))?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if line == "[clients]" {
            section = Section::Clients;
            continue;
        }
        if let Some(d) = line.strip_prefix("[eval domain=").and_then(|r| r.strip_suffix(']')) {
            let d: usize = d.parse().map_err(|_| (n, format!("bad eval domain {d:?}")))?;
            eval.push(EvalSet { domain: d, examples: Vec::new() });
            section = Section::Eval(d);
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| fields.next().ok_or_else(|| (n, format!("missing {what}")));
        let domain: usize = next("domain")?.parse().map_err(|_| (n, "bad domain".to_string()))?;
        let client = next("client id")?;
        let label: usize = next("label")?.parse().map_err(|_| (n, "bad label".to_string()))?;
        let features = fields
            .map(|f| f.parse::<f64>().map_err(|_| (n, format!("bad feature {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err((n, "non-finite feature".into()));
        }
        let example = Example { features, label, domain };
        match section {
            Section::None => return Err((n, "record before any section".into())),
            Section::Clients => {
                let id: usize = client.parse().map_err(|_| (n, format!("bad client id {client:?}")))?;
                let entry = clients.entry(id).or_insert_with(|| ClientData { id, domain, examples: Vec::new() });
                if entry.domain != domain {
                    return Err((n, format!("client {id} appears in domains {} and {domain}", entry.domain)));
                }
                entry.examples.push(example);
            }
            Section::Eval(d) => {
                if client != "-" || domain != d {
                    return Err((n, "eval record must carry client id '-' and its section's domain".into()));
                }
                eval.last_mut().expect("eval section open").examples.push(example);
            }
        }
    }
    let config = config.ok_or((1, "missing generator line".to_string()))?;
    let ds = FederatedDataset { config, clients: clients.into_values().collect(), eval };
    ds.validate().map_err(|e| (0, e.to_string()))?;
    Ok(ds)
}
