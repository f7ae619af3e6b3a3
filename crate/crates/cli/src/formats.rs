//! Labels CSV, model JSON and small CSV tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bppm::events::{ClassAssignment, NodeMap};
use bppm::generator::BlockHawkesModel;
use bppm::hawkes::HawkesParams;

use crate::output::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk model: `params[q][l]` drives events from class `q` to class `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub num_classes: usize,
    pub class_probs: Vec<f64>,
    pub params: Vec<Vec<HawkesParams>>,
}

impl ModelFile {
    pub fn from_model(m: &BlockHawkesModel) -> Self {
        let k = m.num_classes;
        Self {
            schema_version: SCHEMA_VERSION,
            num_classes: k,
            class_probs: m.class_probs.clone(),
            params: (0..k).map(|q| (0..k).map(|l| *m.param(q, l)).collect()).collect(),
        }
    }

    pub fn to_model(&self) -> Result<BlockHawkesModel> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported model schema_version {}", self.schema_version);
        }
        let k = self.num_classes;
        if self.params.len() != k || self.params.iter().any(|row| row.len() != k) {
            bail!("model params must be a {k} x {k} array");
        }
        let model = BlockHawkesModel::new(self.class_probs.clone(), self.params.concat())?;
        Ok(model)
    }
}

pub fn read_model(path: &Path) -> Result<BlockHawkesModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let m: ModelFile =
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing model {}", path.display()))?;
    m.to_model().with_context(|| format!("invalid model {}", path.display()))
}

/// Labels keyed by node identifier, in file order.
pub type Labels = Vec<(String, usize)>;

#[derive(Deserialize)]
struct LabelRow {
    node: String,
    label: usize,
}

pub fn read_labels(path: &Path) -> Result<Labels> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["node", "label"] {
        bail!("{}: expected header `node,label`", path.display());
    }
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<LabelRow>().enumerate() {
        let row = row.with_context(|| format!("{}: line {}", path.display(), k + 2))?;
        if seen.insert(row.node.clone(), row.label).is_some() {
            bail!("{}: node `{}` is labeled twice", path.display(), row.node);
        }
        out.push((row.node, row.label));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, c: &ClassAssignment, map: &NodeMap) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["node", "label"])?;
        for (i, &l) in c.labels().iter().enumerate() {
            csv.write_record([map.id_of(i), l.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Maps labels onto the stream's node indices. Every node in `map` needs a
/// label; labels of nodes absent from the stream are ignored.
pub fn assignment_for(labels: &Labels, map: &NodeMap, num_nodes: usize) -> Result<ClassAssignment> {
    let by_id: BTreeMap<&str, usize> = labels.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    let mut out = Vec::with_capacity(num_nodes);
    for i in 0..num_nodes {
        let id = map.id_of(i);
        match by_id.get(id.as_str()) {
            Some(&l) => out.push(l),
            None => bail!("node `{id}` has no label"),
        }
    }
    let k = labels.iter().map(|(_, l)| l + 1).max().unwrap_or(1);
    Ok(ClassAssignment::new(out, k)?)
}

/// Writes a CSV table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, |w: &mut dyn Write| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header)?;
        for row in rows {
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Shortest round-tripping float, or an empty cell.
pub fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}
