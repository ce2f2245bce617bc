use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_graph, GeneratorKind, Graph, TargetLevel, TaskSpec};
use crate::autodiff::Tensor;
use crate::error::{AmpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 512 / 64 / 128
    Desk,
    /// 5120 / 640 / 1280
    Paper,
}

impl Preset {
    pub fn sizes(&self) -> [usize; 3] {
        match self {
            Preset::Desk => [512, 64, 128],
            Preset::Paper => [5120, 640, 1280],
        }
    }

    pub fn max_epochs(&self) -> usize {
        match self {
            Preset::Desk => 300,
            Preset::Paper => 1500,
        }
    }

    pub fn patience(&self) -> usize {
        match self {
            Preset::Desk => 100,
            Preset::Paper => 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: TaskSpec,
    /// Train / val / test counts.
    pub sizes: [usize; 3],
    /// Inclusive node-count range.
    pub n_range: [usize; 2],
    pub generators: Vec<GeneratorKind>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn preset(task: TaskSpec, preset: Preset, seed: u64) -> Self {
        Self {
            task,
            sizes: preset.sizes(),
            n_range: [25, 35],
            generators: GeneratorKind::ALL.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.contains(&0) {
            return Err(AmpError::contract("every split needs at least one graph"));
        }
        if self.generators.is_empty() {
            return Err(AmpError::contract("generator mix is empty"));
        }
        if self.n_range[0] == 0 || self.n_range[0] > self.n_range[1] {
            return Err(AmpError::contract(format!("bad node range {:?}", self.n_range)));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub seed: u64,
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Graph] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Graph> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Graph `i` (counted across train, val, test in that order) is drawn from
/// its own ChaCha stream `i` under the master seed, so any graph can be
/// regenerated independently.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut graphs = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let kind = spec.generators[rng.random_range(0..spec.generators.len())];
        let n = rng.random_range(spec.n_range[0]..=spec.n_range[1]);
        let mut g = generate_graph(kind, n, spec.task, &mut rng)?;
        g.seed = i as u64;
        graphs.push(g);
    }
    let test = graphs.split_off(spec.sizes[0] + spec.sizes[1]);
    let val = graphs.split_off(spec.sizes[0]);
    Ok(Dataset {
        task: spec.task,
        seed: spec.seed,
        train: graphs,
        val,
        test,
    })
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    level: TargetLevel,
    targets: Vec<Vec<f64>>,
    generator: String,
    seed: u64,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

impl GraphRecord {
    fn from_graph(g: &Graph) -> Self {
        let (level, targets) = match (g.node_targets(), g.graph_target()) {
            (Some(t), _) => (TargetLevel::Node, rows(t)),
            (None, Some(t)) => (TargetLevel::Graph, vec![t.to_vec()]),
            _ => (TargetLevel::Node, vec![]),
        };
        Self {
            n: g.n(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            features: rows(g.features()),
            level,
            targets,
            generator: g.generator.clone(),
            seed: g.seed,
        }
    }

    fn into_graph(self) -> Result<Graph> {
        let edges = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut g = Graph::new(self.n, edges, from_rows(&self.features)?)?;
        match (self.level, self.targets.is_empty()) {
            (_, true) => {}
            (TargetLevel::Node, false) => g.set_node_targets(from_rows(&self.targets)?)?,
            (TargetLevel::Graph, false) => g.set_graph_target(self.targets[0].clone()),
        }
        g.generator = self.generator;
        g.seed = self.seed;
        Ok(g)
    }
}

/// One JSON object per line.
pub fn write_jsonl(path: &Path, graphs: &[Graph]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for g in graphs {
        serde_json::to_writer(&mut w, &GraphRecord::from_graph(g))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Graph>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line)?;
        out.push(rec.into_graph()?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub counts: [usize; 3],
    pub files: [String; 3],
    pub generator_note: String,
}

impl Dataset {
    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `manifest.json`.
    pub fn write_dir(&self, dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
        std::fs::create_dir_all(dir)?;
        for s in Split::ALL {
            write_jsonl(&dir.join(format!("{}.jsonl", s.name())), self.split(s))?;
        }
        let manifest = Manifest {
            spec: spec.clone(),
            counts: [self.train.len(), self.val.len(), self.test.len()],
            files: Split::ALL.map(|s| format!("{}.jsonl", s.name())),
            generator_note: "generator mix and edge-probability ranges are a declared stand-in, \
                             sampled uniformly per graph"
                .into(),
        };
        let f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(f, &manifest)?;
        Ok(manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<(Dataset, Manifest)> {
        let manifest: Manifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
        let load = |i: usize| read_jsonl(&dir.join(&manifest.files[i]));
        let ds = Dataset {
            task: manifest.spec.task,
            seed: manifest.spec.seed,
            train: load(0)?,
            val: load(1)?,
            test: load(2)?,
        };
        Ok((ds, manifest))
    }
}
