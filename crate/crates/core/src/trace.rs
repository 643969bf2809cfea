//! Victim trace emission, the Flush+Reload observation channel, decoy
//! processes and template obfuscation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::catalog::{
    expand_events, Activation, ArchTemplate, Block, BlockLabel, FunctionCode, LayerDesc, LayerKind,
};
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Inference,
    Training,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Inference => "inference",
            Mode::Training => "training",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "inference" => Ok(Mode::Inference),
            "training" => Ok(Mode::Training),
            _ => Err(format!(
                "unknown mode `{s}` (expected inference or training)"
            )),
        }
    }
}

/// One event: its position (sequence index for traces, time slot for
/// observations) and the function invoked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub code: FunctionCode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrace {
    pub arch: String,
    pub n_queries: usize,
    pub mode: Mode,
    pub frozen_prefix: Option<usize>,
    /// Additional provenance, e.g. decoy parameters.
    pub notes: Vec<(String, String)>,
    pub events: Vec<Event>,
}

impl GroundTruthTrace {
    pub fn codes(&self) -> impl Iterator<Item = FunctionCode> + '_ {
        self.events.iter().map(|e| e.code)
    }
}

fn indexed(codes: impl IntoIterator<Item = FunctionCode>) -> Vec<Event> {
    codes
        .into_iter()
        .enumerate()
        .map(|(i, code)| Event {
            seq: i as u64,
            code,
        })
        .collect()
}

/// Observation channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Probability that a victim event other than QUERY goes unobserved.
    pub p_miss: f64,
    /// Expected spurious hits per victim query, per function.
    pub spurious: BTreeMap<FunctionCode, f64>,
}

impl NoiseModel {
    pub fn new(p_miss: f64, spurious: BTreeMap<FunctionCode, f64>) -> Result<Self> {
        let model = NoiseModel { p_miss, spurious };
        model.validate()?;
        Ok(model)
    }

    pub fn noiseless() -> Self {
        NoiseModel {
            p_miss: 0.0,
            spurious: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_miss) {
            return Err(Error::contract(format!(
                "p_miss must lie in [0, 1], got {}",
                self.p_miss
            )));
        }
        for (&code, &rate) in &self.spurious {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::contract(format!(
                    "spurious rate for {code} must be finite and non-negative, got {rate}"
                )));
            }
            if code == FunctionCode::Query && rate > 0.0 {
                return Err(Error::contract(
                    "spurious QUERY events would break query segmentation",
                ));
            }
        }
        Ok(())
    }

    pub fn rate(&self, code: FunctionCode) -> f64 {
        self.spurious.get(&code).copied().unwrap_or(0.0)
    }

    /// `CODE:rate` pairs joined by `;`, in function-code order.
    pub fn rates_string(&self) -> String {
        self.spurious
            .iter()
            .map(|(c, r)| format!("{c}:{r}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_rates(s: &str) -> std::result::Result<BTreeMap<FunctionCode, f64>, String> {
        let mut out = BTreeMap::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (code, rate) = part
                .split_once(':')
                .ok_or_else(|| format!("expected CODE:rate, got `{part}`"))?;
            let code: FunctionCode = code.trim().parse()?;
            let rate: f64 = rate
                .trim()
                .parse()
                .map_err(|e| format!("bad rate `{rate}`: {e}"))?;
            out.insert(code, rate);
        }
        Ok(out)
    }
}

/// What the attacker sees: hit events only, with their time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub seed: u64,
    pub noise: NoiseModel,
    /// Victim architecture, when known.
    pub arch: Option<String>,
    pub mode: Mode,
    pub n_queries: usize,
    pub notes: Vec<(String, String)>,
    pub events: Vec<Event>,
}

impl Observation {
    pub fn codes(&self) -> impl Iterator<Item = FunctionCode> + '_ {
        self.events.iter().map(|e| e.code)
    }
}

/// Ground-truth trace of `n_queries` queries. In training mode each query is
/// followed by one GRAD per bias-bearing layer outside the frozen prefix, in
/// reverse layer order.
pub fn emit_trace(
    template: &ArchTemplate,
    n_queries: usize,
    mode: Mode,
    frozen_prefix: Option<usize>,
) -> Result<GroundTruthTrace> {
    if n_queries == 0 {
        return Err(Error::contract("n_queries must be at least 1"));
    }
    let bias_layers = template.bias_layer_count();
    match (mode, frozen_prefix) {
        (Mode::Inference, Some(_)) => {
            return Err(Error::contract(
                "frozen_prefix is only meaningful in training mode",
            ))
        }
        (Mode::Training, Some(k)) if k > bias_layers => {
            return Err(Error::contract(format!(
                "frozen_prefix {k} exceeds the {bias_layers} bias-bearing layers of {}",
                template.name
            )))
        }
        _ => {}
    }

    let forward = expand_events(template);
    let grads = match mode {
        Mode::Inference => 0,
        Mode::Training => bias_layers - frozen_prefix.unwrap_or(0),
    };
    let mut codes = Vec::with_capacity(n_queries * (forward.len() + grads));
    for _ in 0..n_queries {
        codes.extend_from_slice(&forward);
        // reverse layer order; only the count is observable
        codes.extend(std::iter::repeat_n(FunctionCode::Grad, grads));
    }
    Ok(GroundTruthTrace {
        arch: template.name.clone(),
        n_queries,
        mode,
        frozen_prefix,
        notes: Vec::new(),
        events: indexed(codes),
    })
}

/// Interleave `inserts` into `base`. Each insert carries a gap `g` in
/// `1..=base.len()` and lands immediately before `base[g]` (or at the end).
/// Returns `(code, from_base)` pairs.
fn interleave(
    base: &[FunctionCode],
    inserts: &[(usize, FunctionCode)],
) -> Vec<(FunctionCode, bool)> {
    let mut out = Vec::with_capacity(base.len() + inserts.len());
    let mut pending = inserts.iter().peekable();
    for (i, &code) in base.iter().enumerate() {
        while let Some(&&(gap, extra)) = pending.peek() {
            if gap > i {
                break;
            }
            out.push((extra, false));
            pending.next();
        }
        out.push((code, true));
    }
    out.extend(pending.map(|&(_, c)| (c, false)));
    out
}

/// Pass a trace through the Flush+Reload channel.
///
/// Spurious hits are drawn first (per code in code order, Poisson with mean
/// `rate * n_queries`, each at a uniform gap after the first event), then one
/// Bernoulli miss decision is drawn for every victim non-QUERY event in slot
/// order. Slots index the combined timeline, so misses leave gaps.
pub fn observe(trace: &GroundTruthTrace, noise: &NoiseModel, seed: u64) -> Observation {
    let mut rng = StreamRng::from_seed(seed);
    let victim: Vec<FunctionCode> = trace.codes().collect();
    let mut inserts = Vec::new();
    if !victim.is_empty() {
        for (&code, &rate) in &noise.spurious {
            let k = rng.poisson(rate * trace.n_queries as f64);
            for _ in 0..k {
                let gap = 1 + rng.below(victim.len() as u64) as usize;
                inserts.push((gap, code));
            }
        }
    }
    inserts.sort_by_key(|&(gap, _)| gap);

    let events = interleave(&victim, &inserts)
        .into_iter()
        .enumerate()
        .filter_map(|(slot, (code, from_victim))| {
            let missed = from_victim && code != FunctionCode::Query && rng.bernoulli(noise.p_miss);
            (!missed).then_some(Event {
                seq: slot as u64,
                code,
            })
        })
        .collect();

    Observation {
        seed,
        noise: noise.clone(),
        arch: Some(trace.arch.clone()),
        mode: trace.mode,
        n_queries: trace.n_queries,
        notes: trace.notes.clone(),
        events,
    }
}

/// A co-running TinyNet and how many of its forward passes run per victim
/// query.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoySpec {
    pub layers: Vec<LayerDesc>,
    pub rate: f64,
    name: String,
}

impl DecoySpec {
    pub fn new(layers: Vec<LayerDesc>, rate: f64) -> Result<Self> {
        let name = describe_tiny(&layers);
        let spec = DecoySpec { layers, rate, name };
        spec.validate()?;
        Ok(spec)
    }

    /// Parse the `C:n,R:m,M:k` notation: `n` biased convolutions, the first
    /// `m` activations ReLU (spilling onto merges when `m > n`), then `k`
    /// merges.
    pub fn parse(notation: &str, rate: f64) -> Result<Self> {
        let (mut convs, mut relus, mut merges) = (0usize, 0usize, 0usize);
        for part in notation
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
        {
            let (kind, n) = part
                .split_once(':')
                .ok_or_else(|| Error::contract(format!("bad TinyNet term `{part}`")))?;
            let n: usize = n
                .parse()
                .map_err(|_| Error::contract(format!("bad TinyNet count in `{part}`")))?;
            match kind {
                "C" => convs += n,
                "R" => relus += n,
                "M" => merges += n,
                _ => return Err(Error::contract(format!("unknown TinyNet layer `{kind}`"))),
            }
        }
        if relus > convs + merges {
            return Err(Error::contract(format!(
                "TinyNet `{notation}` has more ReLUs than layers to attach them to"
            )));
        }
        let mut layers = Vec::with_capacity(convs + merges);
        for i in 0..convs {
            let act = if i < relus {
                Activation::Relu
            } else {
                Activation::None
            };
            layers.push(LayerDesc::conv(act, true));
        }
        for i in 0..merges {
            let act = if convs + i < relus {
                Activation::Relu
            } else {
                Activation::None
            };
            layers.push(LayerDesc::merge(act));
        }
        Self::new(layers, rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract(
                "decoy TinyNet must have at least one layer",
            ));
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::contract(format!(
                "decoy rate must be positive and finite, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    /// `C:n,R:m,M:k` description of the TinyNet.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn iterations(&self, n_queries: usize) -> usize {
        ((self.rate * n_queries as f64).ceil() as usize).max(1)
    }
}

fn describe_tiny(layers: &[LayerDesc]) -> String {
    let convs = layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
    let relus = layers
        .iter()
        .filter(|l| l.activation == Activation::Relu)
        .count();
    let merges = layers.iter().filter(|l| l.kind == LayerKind::Merge).count();
    let mut parts = Vec::new();
    for (tag, n) in [("C", convs), ("R", relus), ("M", merges)] {
        if n > 0 {
            parts.push(format!("{tag}:{n}"));
        }
    }
    parts.join(",")
}

/// Interleave `decoy.iterations(n_queries)` TinyNet forward passes into the
/// victim trace at uniformly random positions after the first event. The
/// decoy's own event order is preserved.
pub fn merge_decoy(
    victim: &GroundTruthTrace,
    decoy: &DecoySpec,
    seed: u64,
) -> Result<GroundTruthTrace> {
    decoy.validate()?;
    if victim.events.is_empty() {
        return Err(Error::contract("cannot merge a decoy into an empty trace"));
    }
    let mut rng = StreamRng::from_seed(seed);
    let iterations = decoy.iterations(victim.n_queries);
    let pass: Vec<FunctionCode> = decoy.layers.iter().flat_map(LayerDesc::events).collect();
    let base: Vec<FunctionCode> = victim.codes().collect();

    let total = pass.len() * iterations;
    let mut gaps: Vec<usize> = (0..total)
        .map(|_| 1 + rng.below(base.len() as u64) as usize)
        .collect();
    gaps.sort_unstable();
    let inserts: Vec<(usize, FunctionCode)> =
        gaps.into_iter().zip(pass.iter().copied().cycle()).collect();

    let mut merged = victim.clone();
    merged.events = indexed(interleave(&base, &inserts).into_iter().map(|(c, _)| c));
    merged
        .notes
        .push(("decoy".into(), decoy.name().to_string()));
    merged
        .notes
        .push(("decoy_rate".into(), decoy.rate.to_string()));
    merged.notes.push(("decoy_seed".into(), seed.to_string()));
    Ok(merged)
}

/// Dimension-preserving layer kinds that can be inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertKind {
    /// 3x3 / stride 1 / padding 1 convolution with bias and ReLU.
    ConvRelu,
    /// A ResNet identity block.
    IdentityBlock,
}

impl FromStr for InsertKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "conv" | "conv-relu" => Ok(InsertKind::ConvRelu),
            "identity" | "identity-block" => Ok(InsertKind::IdentityBlock),
            _ => Err(format!(
                "unknown insert kind `{s}` (expected conv or identity)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObfuscationSpec {
    InsertPreserving { count: usize, kind: InsertKind },
    Unravel { k_blocks: usize },
}

impl fmt::Display for ObfuscationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObfuscationSpec::InsertPreserving { count, kind } => {
                let k = match kind {
                    InsertKind::ConvRelu => "conv",
                    InsertKind::IdentityBlock => "identity",
                };
                write!(f, "insert:{count}x{k}")
            }
            ObfuscationSpec::Unravel { k_blocks } => write!(f, "unravel:{k_blocks}"),
        }
    }
}

/// Parses the display form: `unravel:K` or `insert:NxKIND`.
impl FromStr for ObfuscationSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let bad = || format!("bad obfuscation `{s}` (expected unravel:K or insert:NxKIND)");
        let (head, rest) = s.split_once(':').ok_or_else(bad)?;
        match head {
            "unravel" => Ok(ObfuscationSpec::Unravel {
                k_blocks: rest.parse().map_err(|_| bad())?,
            }),
            "insert" => {
                let (n, kind) = rest.split_once('x').ok_or_else(bad)?;
                Ok(ObfuscationSpec::InsertPreserving {
                    count: n.parse().map_err(|_| bad())?,
                    kind: kind.parse()?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Apply an obfuscation. Insertions use `seed` to pick positions; unravelling
/// is deterministic.
pub fn obfuscate(
    template: &ArchTemplate,
    spec: &ObfuscationSpec,
    seed: u64,
) -> Result<ArchTemplate> {
    match *spec {
        ObfuscationSpec::Unravel { k_blocks } => unravel_blocks(template, k_blocks),
        ObfuscationSpec::InsertPreserving { count, kind } => {
            insert_preserving(template, count, kind, seed)
        }
    }
}

fn insert_preserving(
    template: &ArchTemplate,
    count: usize,
    kind: InsertKind,
    seed: u64,
) -> Result<ArchTemplate> {
    let limit = 10 * template.layer_count();
    if count > limit {
        return Err(Error::contract(format!(
            "cannot insert {count} layers into {} (limit {limit})",
            template.name
        )));
    }
    let mut out = template.clone();
    if count == 0 {
        return Ok(out);
    }
    let mut rng = StreamRng::from_seed(seed);
    match kind {
        InsertKind::ConvRelu => {
            let layer = LayerDesc::conv(Activation::Relu, true);
            for _ in 0..count {
                let hosts: Vec<usize> = out
                    .blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.label != BlockLabel::Classifier && !b.layers.is_empty())
                    .map(|(i, _)| i)
                    .collect();
                if hosts.is_empty() {
                    return Err(Error::contract(format!(
                        "{} has no feature-extractor block to insert into",
                        template.name
                    )));
                }
                let block = hosts[rng.below(hosts.len() as u64) as usize];
                let layers = &mut out.blocks[block].layers;
                // before the block's terminating layer
                let pos = rng.below(layers.len() as u64) as usize;
                layers.insert(pos, layer);
            }
        }
        InsertKind::IdentityBlock => {
            let identity = template
                .blocks
                .iter()
                .find(|b| b.label == BlockLabel::Identity)
                .cloned()
                .unwrap_or_else(|| {
                    Block::new(
                        BlockLabel::Identity,
                        vec![
                            LayerDesc::conv(Activation::Relu, true),
                            LayerDesc::conv(Activation::Relu, true),
                            LayerDesc::conv(Activation::None, true),
                            LayerDesc::merge(Activation::Relu),
                        ],
                    )
                });
            for _ in 0..count {
                let end = out
                    .blocks
                    .iter()
                    .position(|b| b.label == BlockLabel::Classifier)
                    .unwrap_or(out.blocks.len());
                // after the first block, up to the classifier
                let pos = if end <= 1 {
                    end
                } else {
                    1 + rng.below(end as u64) as usize
                }
                .min(end);
                out.blocks.insert(pos, identity.clone());
            }
        }
    }
    Ok(out)
}

/// Order in which the unravelled view evaluates the first `k` skip blocks:
/// `S(1) = [0]`, `S(k) = S(k-1) ++ S(k-1) ++ [k-1]`, giving `2^k - 1` block
/// computations, one per non-empty path.
pub fn unravel_order(k: usize) -> Vec<usize> {
    let mut order = Vec::new();
    for i in 0..k {
        if i == 0 {
            order.push(0);
        } else {
            let prev = order.clone();
            order.extend(prev);
            order.push(i);
        }
    }
    order
}

/// Replace the first `k_blocks` skip-connection blocks by their unravelled
/// ensemble of independent paths. For `k = 3` on ResNet50 this evaluates
/// residual, residual, identity, residual, residual, identity, identity.
pub fn unravel_blocks(template: &ArchTemplate, k_blocks: usize) -> Result<ArchTemplate> {
    if k_blocks == 0 {
        return Ok(template.clone());
    }
    let skip: Vec<usize> = template
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.label.is_skip_connection())
        .map(|(i, _)| i)
        .take(k_blocks)
        .collect();
    if skip.len() < k_blocks {
        return Err(Error::contract(format!(
            "{} has {} skip-connection blocks, cannot unravel {k_blocks}",
            template.name,
            template.skip_block_count()
        )));
    }
    let first = skip[0];
    if skip.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::contract(format!(
            "the first {k_blocks} skip-connection blocks of {} are not contiguous",
            template.name
        )));
    }
    let originals: Vec<Block> = skip.iter().map(|&i| template.blocks[i].clone()).collect();
    let mut blocks = template.blocks[..first].to_vec();
    blocks.extend(
        unravel_order(k_blocks)
            .into_iter()
            .map(|i| originals[i].clone()),
    );
    blocks.extend_from_slice(&template.blocks[first + k_blocks..]);
    Ok(ArchTemplate::new(
        template.name.clone(),
        template.family,
        blocks,
    ))
}
