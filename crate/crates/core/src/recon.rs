//! Attribute extraction, block reconstruction, identification and
//! freeze-point detection from observed event streams.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{expand_events, ArchTemplate, AttributeVector, Catalog, FunctionCode};
use crate::trace::Observation;
use crate::{Error, Result};

/// Queries averaged by one attack report.
pub const ATTACK_QUERIES: usize = 10;

/// Split a code stream at QUERY events. Events before the first QUERY are
/// dropped; QUERY events themselves are excluded.
pub fn split_codes(codes: impl IntoIterator<Item = FunctionCode>) -> Vec<Vec<FunctionCode>> {
    let mut out: Vec<Vec<FunctionCode>> = Vec::new();
    for code in codes {
        if code == FunctionCode::Query {
            out.push(Vec::new());
        } else if let Some(cur) = out.last_mut() {
            cur.push(code);
        }
    }
    out
}

pub fn split_queries(obs: &Observation) -> Result<Vec<Vec<FunctionCode>>> {
    let parts = split_codes(obs.codes());
    if parts.is_empty() {
        return Err(Error::EmptyObservation);
    }
    Ok(parts)
}

pub fn extract_attributes(seq: &[FunctionCode]) -> AttributeVector {
    let mut v = AttributeVector::zero();
    for &code in seq {
        v.add_code(code);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackMode {
    /// One query from each of ten independent observations.
    #[serde(rename = "S")]
    Short,
    /// Ten consecutive queries from one observation.
    #[serde(rename = "L")]
    Long,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::Short => "S",
            AttackMode::Long => "L",
        })
    }
}

impl FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "S" | "s" | "short" => Ok(AttackMode::Short),
            "L" | "l" | "long" => Ok(AttackMode::Long),
            _ => Err(format!("unknown attack mode `{s}` (expected S or L)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub arch: Option<String>,
    pub mode: AttackMode,
    pub per_query: Vec<AttributeVector>,
    pub mean: AttributeVector,
    pub truth: Option<AttributeVector>,
    pub error: Option<f64>,
    /// Sum of the ground-truth attribute counts.
    pub denominator: Option<f64>,
}

impl ExtractionReport {
    pub fn from_vectors(
        arch: Option<String>,
        mode: AttackMode,
        per_query: Vec<AttributeVector>,
        truth: Option<&AttributeVector>,
    ) -> Self {
        let mean = AttributeVector::mean(&per_query);
        ExtractionReport {
            arch,
            mode,
            error: truth.map(|g| mean.l1_error(g)),
            denominator: truth.map(AttributeVector::total),
            truth: truth.copied(),
            per_query,
            mean,
        }
    }
}

/// Short attack: the first query of each of the first ten observations.
pub fn attack_report_short(
    observations: &[Observation],
    truth: Option<&AttributeVector>,
) -> Result<ExtractionReport> {
    if observations.len() < ATTACK_QUERIES {
        return Err(Error::contract(format!(
            "short attack needs {ATTACK_QUERIES} observations, got {}",
            observations.len()
        )));
    }
    let per_query = observations[..ATTACK_QUERIES]
        .iter()
        .map(|o| split_queries(o).map(|q| extract_attributes(&q[0])))
        .collect::<Result<Vec<_>>>()?;
    let arch = observations[0].arch.clone();
    Ok(ExtractionReport::from_vectors(
        arch,
        AttackMode::Short,
        per_query,
        truth,
    ))
}

/// Long attack: the first ten consecutive queries of one observation.
pub fn attack_report_long(
    observation: &Observation,
    truth: Option<&AttributeVector>,
) -> Result<ExtractionReport> {
    let queries = split_queries(observation)?;
    if queries.len() < ATTACK_QUERIES {
        return Err(Error::contract(format!(
            "long attack needs {ATTACK_QUERIES} queries, observation has {}",
            queries.len()
        )));
    }
    let per_query = queries[..ATTACK_QUERIES]
        .iter()
        .map(|q| extract_attributes(q))
        .collect();
    Ok(ExtractionReport::from_vectors(
        observation.arch.clone(),
        AttackMode::Long,
        per_query,
        truth,
    ))
}

/// Reconstructed block kinds. `Merge(n)` is a merge-terminated block whose
/// conv count fits neither residual nor identity; `Open(n)` is a trailing
/// segment with no terminating pool or merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Stem,
    ConvNet(usize),
    Residual,
    Identity,
    Merge(usize),
    Open(usize),
    Classifier,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Stem => f.write_str("stem"),
            BlockKind::ConvNet(n) => write!(f, "convnet-{n}"),
            BlockKind::Residual => f.write_str("residual"),
            BlockKind::Identity => f.write_str("identity"),
            BlockKind::Merge(n) => write!(f, "merge-{n}"),
            BlockKind::Open(n) => write!(f, "open-{n}"),
            BlockKind::Classifier => f.write_str("classifier"),
        }
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let counted = |prefix: &str| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok() };
        match s {
            "stem" => Ok(BlockKind::Stem),
            "residual" => Ok(BlockKind::Residual),
            "identity" => Ok(BlockKind::Identity),
            "classifier" => Ok(BlockKind::Classifier),
            _ => counted("convnet-")
                .map(BlockKind::ConvNet)
                .or_else(|| counted("merge-").map(BlockKind::Merge))
                .or_else(|| counted("open-").map(BlockKind::Open))
                .ok_or_else(|| format!("unknown block kind `{s}`")),
        }
    }
}

impl Serialize for BlockKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One layer operation as seen in the stream, with any activation that
/// followed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Op {
    pub code: FunctionCode,
    pub activation: Option<FunctionCode>,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.code {
            FunctionCode::Conv => "C",
            FunctionCode::Fc => "F",
            FunctionCode::Mpool => "P_M",
            FunctionCode::Apool => "P_A",
            FunctionCode::Merge => "M",
            other => other.name(),
        };
        f.write_str(base)?;
        match self.activation {
            Some(FunctionCode::Relu) => f.write_str("_R"),
            Some(FunctionCode::Softm) => f.write_str("_So"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconBlock {
    pub kind: BlockKind,
    pub convs: usize,
    pub fcs: usize,
    pub softmax: bool,
    pub ops: Vec<Op>,
}

impl ReconBlock {
    /// `C_R C_R P_M` style rendering.
    pub fn sequence(&self) -> String {
        self.ops
            .iter()
            .map(Op::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn signature(&self) -> (BlockKind, usize, usize) {
        (self.kind, self.convs, self.fcs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockStructure {
    pub blocks: Vec<ReconBlock>,
}

impl BlockStructure {
    pub fn fc_tail(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Classifier)
            .map(|b| b.fcs)
            .sum()
    }

    pub fn kinds(&self) -> Vec<BlockKind> {
        self.blocks.iter().map(|b| b.kind).collect()
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }
}

struct Segment {
    ops: Vec<Op>,
    closed: bool,
}

impl Segment {
    fn count(&self, code: FunctionCode) -> usize {
        self.ops.iter().filter(|o| o.code == code).count()
    }

    fn terminator(&self) -> Option<FunctionCode> {
        if self.closed {
            self.ops.last().map(|o| o.code)
        } else {
            None
        }
    }
}

fn segment(seq: &[FunctionCode]) -> Vec<Segment> {
    let mut closed: Vec<Segment> = Vec::new();
    let mut cur: Vec<Op> = Vec::new();
    for &code in seq {
        match code {
            FunctionCode::Relu | FunctionCode::Softm => {
                // attach to the op just before, which may have closed a block
                let target = match cur.last_mut() {
                    Some(op) => Some(op),
                    None => closed.last_mut().and_then(|s| s.ops.last_mut()),
                };
                if let Some(op) = target {
                    if op.activation.is_none() {
                        op.activation = Some(code);
                    }
                }
            }
            FunctionCode::Conv | FunctionCode::Fc => cur.push(Op {
                code,
                activation: None,
            }),
            FunctionCode::Mpool | FunctionCode::Apool | FunctionCode::Merge => {
                cur.push(Op {
                    code,
                    activation: None,
                });
                closed.push(Segment {
                    ops: std::mem::take(&mut cur),
                    closed: true,
                });
            }
            FunctionCode::Query | FunctionCode::Grad | FunctionCode::Bias => {}
        }
    }
    if !cur.is_empty() {
        closed.push(Segment {
            ops: cur,
            closed: false,
        });
    }
    closed
}

/// Segment one query's events into blocks.
///
/// Every MPOOL, APOOL and MERGE closes a block. BIAS is absorbed and RELU /
/// SOFTM attach to the preceding op. Trailing conv-free segments form the
/// classifier when they contain a fully-connected layer. The first
/// pool-terminated block is the stem when the next block is merge-terminated;
/// otherwise pool-terminated blocks are `convnet-n`.
pub fn reconstruct(seq: &[FunctionCode]) -> BlockStructure {
    let segments = segment(seq);
    let mut head = segments.len();
    while head > 0 && segments[head - 1].count(FunctionCode::Conv) == 0 {
        head -= 1;
    }
    let tail_has_fc = segments[head..]
        .iter()
        .any(|s| s.count(FunctionCode::Fc) > 0);
    if !tail_has_fc {
        head = segments.len();
    }

    let mut blocks: Vec<ReconBlock> = segments[..head]
        .iter()
        .map(|s| {
            let convs = s.count(FunctionCode::Conv);
            let kind = match s.terminator() {
                Some(FunctionCode::Merge) => match convs {
                    4 => BlockKind::Residual,
                    3 => BlockKind::Identity,
                    n => BlockKind::Merge(n),
                },
                Some(_) => BlockKind::ConvNet(convs),
                None => BlockKind::Open(convs),
            };
            ReconBlock {
                kind,
                convs,
                fcs: s.count(FunctionCode::Fc),
                softmax: s
                    .ops
                    .iter()
                    .any(|o| o.activation == Some(FunctionCode::Softm)),
                ops: s.ops.clone(),
            }
        })
        .collect();

    if blocks.len() >= 2
        && matches!(blocks[0].kind, BlockKind::ConvNet(_))
        && matches!(
            blocks[1].kind,
            BlockKind::Residual | BlockKind::Identity | BlockKind::Merge(_)
        )
    {
        blocks[0].kind = BlockKind::Stem;
    }

    if head < segments.len() {
        let ops: Vec<Op> = segments[head..]
            .iter()
            .flat_map(|s| s.ops.iter().copied())
            .collect();
        blocks.push(ReconBlock {
            kind: BlockKind::Classifier,
            convs: 0,
            fcs: ops.iter().filter(|o| o.code == FunctionCode::Fc).count(),
            softmax: ops
                .iter()
                .any(|o| o.activation == Some(FunctionCode::Softm)),
            ops,
        });
    }
    BlockStructure { blocks }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub distance: usize,
}

/// Noiseless single-query structure of a template.
pub fn template_structure(template: &ArchTemplate) -> BlockStructure {
    reconstruct(&expand_events(template))
}

/// Rank catalog templates by block-signature edit distance; ties by name.
pub fn identify(structure: &BlockStructure, catalog: &Catalog) -> Result<Vec<Candidate>> {
    if catalog.is_empty() {
        return Err(Error::contract("cannot identify against an empty catalog"));
    }
    let sig: Vec<_> = structure.blocks.iter().map(ReconBlock::signature).collect();
    let mut out: Vec<Candidate> = catalog
        .templates()
        .iter()
        .map(|t| {
            let other: Vec<_> = template_structure(t)
                .blocks
                .iter()
                .map(ReconBlock::signature)
                .collect();
            Candidate {
                name: t.name.clone(),
                distance: edit_distance(&sig, &other),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.distance
            .cmp(&b.distance)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub arch: String,
    pub queries: usize,
    pub mean_grads: f64,
    pub updated_layers: usize,
    pub frozen_prefix: usize,
}

/// Infer how many bias-bearing layers were updated per query and hence the
/// frozen prefix length.
pub fn detect_freeze(obs: &Observation, template: &ArchTemplate) -> Result<FreezeReport> {
    let queries = split_queries(obs).map_err(|_| {
        Error::contract("freeze detection needs at least one query in the observation")
    })?;
    let grads: usize = queries
        .iter()
        .map(|q| q.iter().filter(|&&c| c == FunctionCode::Grad).count())
        .sum();
    let mean_grads = grads as f64 / queries.len() as f64;
    let updated_layers = mean_grads.round() as usize;
    Ok(FreezeReport {
        arch: template.name.clone(),
        queries: queries.len(),
        mean_grads,
        updated_layers,
        frozen_prefix: template.bias_layer_count().saturating_sub(updated_layers),
    })
}
