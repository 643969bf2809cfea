//! Network templates and their monitored-function event expansions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the ten monitored framework functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionCode {
    #[serde(rename = "QUERY")]
    Query,
    #[serde(rename = "GRAD")]
    Grad,
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "SOFTM")]
    Softm,
    #[serde(rename = "RELU")]
    Relu,
    #[serde(rename = "MPOOL")]
    Mpool,
    #[serde(rename = "APOOL")]
    Apool,
    #[serde(rename = "MERGE")]
    Merge,
    #[serde(rename = "BIAS")]
    Bias,
}

impl FunctionCode {
    pub const ALL: [FunctionCode; 10] = [
        FunctionCode::Query,
        FunctionCode::Grad,
        FunctionCode::Conv,
        FunctionCode::Fc,
        FunctionCode::Softm,
        FunctionCode::Relu,
        FunctionCode::Mpool,
        FunctionCode::Apool,
        FunctionCode::Merge,
        FunctionCode::Bias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionCode::Query => "QUERY",
            FunctionCode::Grad => "GRAD",
            FunctionCode::Conv => "CONV",
            FunctionCode::Fc => "FC",
            FunctionCode::Softm => "SOFTM",
            FunctionCode::Relu => "RELU",
            FunctionCode::Mpool => "MPOOL",
            FunctionCode::Apool => "APOOL",
            FunctionCode::Merge => "MERGE",
            FunctionCode::Bias => "BIAS",
        }
    }

    pub fn is_control_flow(self) -> bool {
        matches!(self, FunctionCode::Query | FunctionCode::Grad)
    }

    /// The attribute this code counts towards, `None` for control-flow codes.
    pub fn attribute(self) -> Option<Attribute> {
        Some(match self {
            FunctionCode::Query | FunctionCode::Grad => return None,
            FunctionCode::Conv => Attribute::Convs,
            FunctionCode::Fc => Attribute::Fcs,
            FunctionCode::Softm => Attribute::Softms,
            FunctionCode::Relu => Attribute::Relus,
            FunctionCode::Mpool => Attribute::Mpools,
            FunctionCode::Apool => Attribute::Apools,
            FunctionCode::Merge => Attribute::Merges,
            FunctionCode::Bias => Attribute::Biases,
        })
    }
}

impl fmt::Display for FunctionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionCode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        FunctionCode::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown function code `{s}`"))
    }
}

/// The eight architecture attributes, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Convs,
    Fcs,
    Softms,
    Relus,
    Mpools,
    Apools,
    Merges,
    Biases,
}

impl Attribute {
    pub const ALL: [Attribute; 8] = [
        Attribute::Convs,
        Attribute::Fcs,
        Attribute::Softms,
        Attribute::Relus,
        Attribute::Mpools,
        Attribute::Apools,
        Attribute::Merges,
        Attribute::Biases,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Attribute> {
        Self::ALL.get(i).copied()
    }

    /// Lower-case column name (`convs`, `fcs`, ...).
    pub fn name(self) -> &'static str {
        ATTRIBUTE_NAMES[self.index()]
    }

    pub fn code(self) -> FunctionCode {
        match self {
            Attribute::Convs => FunctionCode::Conv,
            Attribute::Fcs => FunctionCode::Fc,
            Attribute::Softms => FunctionCode::Softm,
            Attribute::Relus => FunctionCode::Relu,
            Attribute::Mpools => FunctionCode::Mpool,
            Attribute::Apools => FunctionCode::Apool,
            Attribute::Merges => FunctionCode::Merge,
            Attribute::Biases => FunctionCode::Bias,
        }
    }
}

pub const ATTRIBUTE_NAMES: [&str; 8] = [
    "convs", "fcs", "softms", "relus", "mpools", "apools", "merges", "biases",
];

/// Per-query attribute counts. Ground-truth vectors hold integers, observed
/// vectors may hold averages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector(pub [f64; 8]);

impl AttributeVector {
    pub fn zero() -> Self {
        AttributeVector([0.0; 8])
    }

    pub fn from_counts(counts: [u32; 8]) -> Self {
        AttributeVector(counts.map(f64::from))
    }

    pub fn get(&self, a: Attribute) -> f64 {
        self.0[a.index()]
    }

    pub fn add_code(&mut self, code: FunctionCode) {
        if let Some(a) = code.attribute() {
            self.0[a.index()] += 1.0;
        }
    }

    /// Sum of absolute deviations over the eight fields.
    pub fn l1_error(&self, other: &AttributeVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Arithmetic mean of the given vectors; zero vector when empty.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a AttributeVector>) -> AttributeVector {
        let mut sum = [0.0; 8];
        let mut n = 0usize;
        for v in vectors {
            for (s, x) in sum.iter_mut().zip(v.0.iter()) {
                *s += x;
            }
            n += 1;
        }
        if n > 0 {
            for s in &mut sum {
                *s /= n as f64;
            }
        }
        AttributeVector(sum)
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Maxpool,
    Avgpool,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub activation: Activation,
    pub has_bias: bool,
}

impl LayerDesc {
    pub const fn new(kind: LayerKind, activation: Activation, has_bias: bool) -> Self {
        LayerDesc {
            kind,
            activation,
            has_bias,
        }
    }

    pub const fn conv(activation: Activation, has_bias: bool) -> Self {
        Self::new(LayerKind::Conv, activation, has_bias)
    }

    pub const fn fc(activation: Activation, has_bias: bool) -> Self {
        Self::new(LayerKind::Fc, activation, has_bias)
    }

    pub const fn maxpool() -> Self {
        Self::new(LayerKind::Maxpool, Activation::None, false)
    }

    pub const fn avgpool() -> Self {
        Self::new(LayerKind::Avgpool, Activation::None, false)
    }

    pub const fn merge(activation: Activation) -> Self {
        Self::new(LayerKind::Merge, activation, false)
    }

    /// Events one forward pass through this layer produces:
    /// op, then bias, then activation.
    pub fn events(&self) -> impl Iterator<Item = FunctionCode> {
        let op = match self.kind {
            LayerKind::Conv => FunctionCode::Conv,
            LayerKind::Fc => FunctionCode::Fc,
            LayerKind::Maxpool => FunctionCode::Mpool,
            LayerKind::Avgpool => FunctionCode::Apool,
            LayerKind::Merge => FunctionCode::Merge,
        };
        let bias = self.has_bias.then_some(FunctionCode::Bias);
        let act = match self.activation {
            Activation::None => None,
            Activation::Relu => Some(FunctionCode::Relu),
            Activation::Softmax => Some(FunctionCode::Softm),
        };
        std::iter::once(op).chain(bias).chain(act)
    }
}

const C_RB: LayerDesc = LayerDesc::conv(Activation::Relu, true);
const C_B: LayerDesc = LayerDesc::conv(Activation::None, true);
const C_R: LayerDesc = LayerDesc::conv(Activation::Relu, false);
const C: LayerDesc = LayerDesc::conv(Activation::None, false);
const F_RB: LayerDesc = LayerDesc::fc(Activation::Relu, true);
const F_SB: LayerDesc = LayerDesc::fc(Activation::Softmax, true);
const MP: LayerDesc = LayerDesc::maxpool();
const AP: LayerDesc = LayerDesc::avgpool();
const M: LayerDesc = LayerDesc::merge(Activation::None);
const M_R: LayerDesc = LayerDesc::merge(Activation::Relu);

/// Descriptive label of a template block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockLabel {
    Stem,
    ConvNet(usize),
    Residual,
    Identity,
    Dense,
    InceptionLike,
    Separable,
    Classifier,
}

impl BlockLabel {
    pub fn is_skip_connection(self) -> bool {
        matches!(self, BlockLabel::Residual | BlockLabel::Identity)
    }
}

impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockLabel::Stem => f.write_str("stem"),
            BlockLabel::ConvNet(n) => write!(f, "convnet-{n}"),
            BlockLabel::Residual => f.write_str("residual"),
            BlockLabel::Identity => f.write_str("identity"),
            BlockLabel::Dense => f.write_str("dense"),
            BlockLabel::InceptionLike => f.write_str("inception-like"),
            BlockLabel::Separable => f.write_str("separable"),
            BlockLabel::Classifier => f.write_str("classifier"),
        }
    }
}

impl FromStr for BlockLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "stem" => BlockLabel::Stem,
            "residual" => BlockLabel::Residual,
            "identity" => BlockLabel::Identity,
            "dense" => BlockLabel::Dense,
            "inception-like" => BlockLabel::InceptionLike,
            "separable" => BlockLabel::Separable,
            "classifier" => BlockLabel::Classifier,
            other => match other.strip_prefix("convnet-").map(str::parse) {
                Some(Ok(n)) => BlockLabel::ConvNet(n),
                _ => return Err(format!("unknown block label `{s}`")),
            },
        })
    }
}

impl Serialize for BlockLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub label: BlockLabel,
    pub layers: Vec<LayerDesc>,
}

impl Block {
    pub fn new(label: BlockLabel, layers: Vec<LayerDesc>) -> Self {
        Block { label, layers }
    }
}

/// Network family: VGG, ResNet, DenseNet, Inception, MobileNet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    V,
    R,
    D,
    I,
    M,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::V, Family::R, Family::D, Family::I, Family::M];

    pub fn letter(self) -> &'static str {
        match self {
            Family::V => "V",
            Family::R => "R",
            Family::D => "D",
            Family::I => "I",
            Family::M => "M",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.letter() == s)
            .ok_or_else(|| format!("unknown family `{s}` (expected one of V, R, D, I, M)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchTemplate {
    pub name: String,
    pub family: Family,
    pub blocks: Vec<Block>,
}

impl ArchTemplate {
    pub fn new(name: impl Into<String>, family: Family, blocks: Vec<Block>) -> Self {
        ArchTemplate {
            name: name.into(),
            family,
            blocks,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerDesc> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    pub fn layer_count(&self) -> usize {
        self.blocks.iter().map(|b| b.layers.len()).sum()
    }

    pub fn bias_layer_count(&self) -> usize {
        self.layers().filter(|l| l.has_bias).count()
    }

    pub fn skip_block_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.label.is_skip_connection())
            .count()
    }

    /// Check the layer invariants: pools and merges carry no bias, softmax
    /// only on the last layer and only if it is an fc.
    pub fn validate(&self) -> Result<()> {
        let n = self.layer_count();
        for (i, layer) in self.layers().enumerate() {
            let poolish = matches!(
                layer.kind,
                LayerKind::Maxpool | LayerKind::Avgpool | LayerKind::Merge
            );
            if poolish && layer.has_bias {
                return Err(Error::contract(format!(
                    "{}: layer {i} ({:?}) cannot carry a bias",
                    self.name, layer.kind
                )));
            }
            if layer.activation == Activation::Softmax
                && (i + 1 != n || layer.kind != LayerKind::Fc)
            {
                return Err(Error::contract(format!(
                    "{}: softmax only allowed on the final fc layer (layer {i})",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Count each layer function of a template.
pub fn attributes_of(template: &ArchTemplate) -> AttributeVector {
    let mut v = AttributeVector::zero();
    for layer in template.layers() {
        for code in layer.events() {
            v.add_code(code);
        }
    }
    v
}

/// The event sequence of one inference query: a QUERY followed by every
/// layer's op, bias and activation in order.
pub fn expand_events(template: &ArchTemplate) -> Vec<FunctionCode> {
    let mut out = Vec::with_capacity(1 + 3 * template.layer_count());
    out.push(FunctionCode::Query);
    out.extend(template.layers().flat_map(LayerDesc::events));
    out
}

/// The thirteen reference networks, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    templates: Vec<ArchTemplate>,
}

pub const CATALOG_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CatalogDoc {
    format: u32,
    templates: Vec<TemplateDoc>,
}

#[derive(Serialize, Deserialize)]
struct TemplateDoc {
    name: String,
    family: Family,
    attributes: [u32; 8],
    blocks: Vec<Block>,
}

impl Catalog {
    pub fn from_templates(templates: Vec<ArchTemplate>) -> Result<Self> {
        for (i, t) in templates.iter().enumerate() {
            t.validate()?;
            if templates[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::contract(format!("duplicate template `{}`", t.name)));
            }
        }
        Ok(Catalog { templates })
    }

    pub fn templates(&self) -> &[ArchTemplate] {
        &self.templates
    }

    pub fn names(&self) -> Vec<String> {
        self.templates.iter().map(|t| t.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&ArchTemplate> {
        self.templates
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownArch {
                name: name.to_string(),
                valid: self.names(),
            })
    }

    /// Serialize to the JSON interchange document.
    pub fn export(&self) -> String {
        let doc = CatalogDoc {
            format: CATALOG_FORMAT,
            templates: self
                .templates
                .iter()
                .map(|t| TemplateDoc {
                    name: t.name.clone(),
                    family: t.family,
                    attributes: attributes_of(t).0.map(|x| x as u32),
                    blocks: t.blocks.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("catalog serializes");
        s.push('\n');
        s
    }

    pub fn import(text: &str) -> Result<Self> {
        let doc: CatalogDoc =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if doc.format != CATALOG_FORMAT {
            return Err(Error::parse(
                1,
                format!("unsupported catalog format {}", doc.format),
            ));
        }
        let mut templates = Vec::with_capacity(doc.templates.len());
        for t in doc.templates {
            let template = ArchTemplate::new(t.name, t.family, t.blocks);
            let counted = attributes_of(&template);
            if counted != AttributeVector::from_counts(t.attributes) {
                return Err(Error::parse(
                    0,
                    format!(
                        "template `{}`: stored attributes {:?} disagree with layer counts {}",
                        template.name, t.attributes, counted
                    ),
                ));
            }
            templates.push(template);
        }
        Catalog::from_templates(templates)
    }
}

/// Build the catalog of all 13 networks.
pub fn build_catalog() -> Catalog {
    Catalog::from_templates(vec![
        vgg("VGG16", &[2, 2, 3, 3, 3]),
        vgg("VGG19", &[2, 2, 4, 4, 4]),
        resnet("ResNet50", &[3, 4, 6, 3], true, true),
        resnet("ResNet101", &[3, 4, 22, 3], false, true),
        resnet("ResNet152", &[3, 8, 36, 3], false, false),
        densenet("DenseNet121", &[6, 12, 24, 16]),
        densenet("DenseNet169", &[6, 12, 32, 32]),
        densenet("DenseNet201", &[6, 12, 48, 32]),
        inception_v3(),
        inception_resnet(),
        xception(),
        mobilenet_v1(),
        mobilenet_v2(),
    ])
    .expect("built-in catalog is well formed")
}

fn repeat(layer: LayerDesc, n: usize) -> Vec<LayerDesc> {
    vec![layer; n]
}

fn classifier(layers: Vec<LayerDesc>) -> Block {
    Block::new(BlockLabel::Classifier, layers)
}

fn vgg(name: &str, stages: &[usize]) -> ArchTemplate {
    let mut blocks: Vec<Block> = stages
        .iter()
        .map(|&n| {
            let mut layers = repeat(C_RB, n);
            layers.push(MP);
            Block::new(BlockLabel::ConvNet(n), layers)
        })
        .collect();
    blocks.push(classifier(vec![F_RB, F_RB, F_SB]));
    ArchTemplate::new(name, Family::V, blocks)
}

/// Bottleneck ResNet. Residual blocks are `C_R C_R C C(shortcut) M_R`,
/// identity blocks `C_R C_R C M_R`; shortcut convolutions never carry a bias.
fn resnet(name: &str, stages: &[usize], conv_bias: bool, last_merge_relu: bool) -> ArchTemplate {
    let main_r = LayerDesc::conv(Activation::Relu, conv_bias);
    let main = LayerDesc::conv(Activation::None, conv_bias);
    let mut blocks = vec![Block::new(BlockLabel::Stem, vec![main_r, MP])];
    for &n in stages {
        blocks.push(Block::new(
            BlockLabel::Residual,
            vec![main_r, main_r, main, C, M_R],
        ));
        for _ in 1..n {
            blocks.push(Block::new(
                BlockLabel::Identity,
                vec![main_r, main_r, main, M_R],
            ));
        }
    }
    if !last_merge_relu {
        let last = blocks.last_mut().and_then(|b| b.layers.last_mut());
        if let Some(layer) = last {
            layer.activation = Activation::None;
        }
    }
    blocks.push(classifier(vec![AP, F_SB]));
    ArchTemplate::new(name, Family::R, blocks)
}

/// DenseNet: each dense layer is `C_R C_R M` (concatenation), transitions are
/// `C_R P_A`, the final concatenation carries the closing ReLU.
fn densenet(name: &str, dense_layers: &[usize]) -> ArchTemplate {
    let mut blocks = vec![Block::new(BlockLabel::Stem, vec![C_R, MP])];
    for (i, &n) in dense_layers.iter().enumerate() {
        for _ in 0..n {
            blocks.push(Block::new(BlockLabel::Dense, vec![C_R, C_R, M]));
        }
        if i + 1 < dense_layers.len() {
            blocks.push(Block::new(BlockLabel::ConvNet(1), vec![C_R, AP]));
        }
    }
    if let Some(layer) = blocks.last_mut().and_then(|b| b.layers.last_mut()) {
        layer.activation = Activation::Relu;
    }
    blocks.push(classifier(vec![F_SB]));
    ArchTemplate::new(name, Family::D, blocks)
}

fn inception_v3() -> ArchTemplate {
    let stem = Block::new(BlockLabel::Stem, vec![C_R, C_R, C_R, MP, C_R, C_R, MP]);
    // 1x1 | 5x5 | double 3x3 | pool projection
    let block_a = [
        vec![C_R],
        vec![C_R, C_R],
        vec![C_R, C_R, C_R],
        vec![AP, C],
        vec![M],
    ]
    .concat();
    let reduction_a = vec![C_R, C_R, C_R, C, MP, M];
    let block_c = [
        vec![C_R],
        repeat(C_R, 3),
        repeat(C_R, 5),
        vec![AP, C],
        vec![M],
    ]
    .concat();
    let reduction_b = vec![C_R, C_R, C_R, C_R, C_R, C_R, MP, M];
    let block_e = [
        vec![C_R],
        vec![C_R, C, C, M],
        vec![C_R, C_R, C, C, M],
        vec![AP, C],
        vec![M],
    ]
    .concat();

    let mut blocks = vec![stem];
    for _ in 0..3 {
        blocks.push(Block::new(BlockLabel::InceptionLike, block_a.clone()));
    }
    blocks.push(Block::new(BlockLabel::InceptionLike, reduction_a));
    for _ in 0..4 {
        blocks.push(Block::new(BlockLabel::InceptionLike, block_c.clone()));
    }
    blocks.push(Block::new(BlockLabel::InceptionLike, reduction_b));
    for _ in 0..2 {
        blocks.push(Block::new(BlockLabel::InceptionLike, block_e.clone()));
    }
    blocks.push(classifier(vec![F_SB]));
    ArchTemplate::new("InceptionV3", Family::I, blocks)
}

fn inception_resnet() -> ArchTemplate {
    let stem = Block::new(BlockLabel::Stem, vec![C_R, C_R, C_R, MP, C_R, C_R, MP]);
    let mixed_5b = [vec![C_R], repeat(C_R, 2), repeat(C_R, 3), vec![AP, C_R, M]].concat();
    // branches, concatenation, biased linear up-projection, scaled residual add
    let block35 = [vec![C_R], repeat(C_R, 2), repeat(C_R, 3), vec![M, C_B, M]].concat();
    let mixed_6a = vec![C_R, C_R, C_R, C_R, MP, M];
    let block17 = [vec![C_R], repeat(C_R, 3), vec![M, C_B, M]].concat();
    let mixed_7a = [repeat(C_R, 2), repeat(C_R, 2), repeat(C_R, 3), vec![MP, M]].concat();
    let block8 = [vec![C_R], repeat(C_R, 3), vec![M, C_B, M]].concat();
    let block8_last = [vec![C_R], repeat(C_R, 3), vec![M, C, M]].concat();

    let mut blocks = vec![stem, Block::new(BlockLabel::InceptionLike, mixed_5b)];
    blocks.extend((0..10).map(|_| Block::new(BlockLabel::InceptionLike, block35.clone())));
    blocks.push(Block::new(BlockLabel::InceptionLike, mixed_6a));
    blocks.extend((0..20).map(|_| Block::new(BlockLabel::InceptionLike, block17.clone())));
    blocks.push(Block::new(BlockLabel::InceptionLike, mixed_7a));
    blocks.extend((0..9).map(|_| Block::new(BlockLabel::InceptionLike, block8.clone())));
    blocks.push(Block::new(BlockLabel::InceptionLike, block8_last));
    blocks.push(Block::new(BlockLabel::ConvNet(1), vec![C]));
    blocks.push(classifier(vec![F_SB]));
    ArchTemplate::new("InceptionResNet", Family::I, blocks)
}

fn xception() -> ArchTemplate {
    let mut blocks = vec![Block::new(BlockLabel::Stem, vec![C_R, C_R])];
    // strided conv shortcut, two separable convs, pool, add
    let entry = vec![C, C_R, C_R, MP, M];
    for _ in 0..3 {
        blocks.push(Block::new(BlockLabel::Separable, entry.clone()));
    }
    for _ in 0..8 {
        blocks.push(Block::new(BlockLabel::Separable, vec![C_R, C_R, C_R, M]));
    }
    blocks.push(Block::new(BlockLabel::Separable, entry));
    blocks.push(Block::new(BlockLabel::Separable, vec![C_R, C_R, C]));
    blocks.push(classifier(vec![F_SB]));
    ArchTemplate::new("Xception", Family::I, blocks)
}

/// The depthwise stage of each separable unit is an element-wise framework
/// op and is modelled as an activated merge.
fn mobilenet_v1() -> ArchTemplate {
    let mut blocks = vec![Block::new(BlockLabel::Stem, vec![C_R])];
    for _ in 0..13 {
        blocks.push(Block::new(BlockLabel::Separable, vec![M_R, C_R]));
    }
    // 1x1 convolutional classifier head, no softmax op in the monitored set
    blocks.push(classifier(vec![C_B]));
    ArchTemplate::new("MobileNetV1", Family::M, blocks)
}

fn mobilenet_v2() -> ArchTemplate {
    const ADDS: [usize; 10] = [2, 4, 5, 7, 8, 9, 11, 12, 14, 15];
    let mut blocks = vec![
        Block::new(BlockLabel::Stem, vec![C_R]),
        Block::new(BlockLabel::Separable, vec![M_R, C]),
    ];
    for i in 1..=16 {
        let mut layers = vec![C_R, M_R, C];
        if ADDS.contains(&i) {
            layers.push(M);
        }
        blocks.push(Block::new(BlockLabel::Separable, layers));
    }
    blocks.push(Block::new(BlockLabel::Separable, vec![C]));
    blocks.push(classifier(vec![F_SB]));
    ArchTemplate::new("MobileNetV2", Family::M, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(name: &str) -> [u32; 8] {
        attributes_of(build_catalog().get(name).unwrap())
            .0
            .map(|x| x as u32)
    }

    #[test]
    fn vgg_and_resnet_ground_truth() {
        assert_eq!(counts("VGG19"), [16, 3, 1, 18, 5, 0, 0, 19]);
        assert_eq!(counts("ResNet50"), [53, 1, 1, 49, 1, 1, 16, 50]);
        assert_eq!(counts("VGG16"), [13, 3, 1, 15, 5, 0, 0, 16]);
    }

    #[test]
    fn empty_template_has_zero_attributes() {
        let t = ArchTemplate::new("empty", Family::V, vec![]);
        assert_eq!(attributes_of(&t), AttributeVector::zero());
        assert_eq!(expand_events(&t), vec![FunctionCode::Query]);
    }

    #[test]
    fn smallest_classifier_expansion() {
        let t = ArchTemplate::new("tiny", Family::V, vec![classifier(vec![F_SB])]);
        assert_eq!(
            expand_events(&t),
            vec![
                FunctionCode::Query,
                FunctionCode::Fc,
                FunctionCode::Bias,
                FunctionCode::Softm
            ]
        );
    }

    #[test]
    fn vgg16_and_resnet50_openings() {
        use FunctionCode::*;
        let cat = build_catalog();
        let vgg = expand_events(cat.get("VGG16").unwrap());
        assert_eq!(
            &vgg[..8],
            &[Query, Conv, Bias, Relu, Conv, Bias, Relu, Mpool]
        );
        let res = expand_events(cat.get("ResNet50").unwrap());
        assert_eq!(&res[..5], &[Query, Conv, Bias, Relu, Mpool]);
    }

    #[test]
    fn expansion_counts_match_attributes() {
        for t in build_catalog().templates() {
            let mut v = AttributeVector::zero();
            for c in expand_events(t).into_iter().skip(1) {
                v.add_code(c);
            }
            assert_eq!(v, attributes_of(t), "{}", t.name);
        }
    }

    #[test]
    fn family_partition() {
        let cat = build_catalog();
        let members = |f: Family| -> Vec<String> {
            cat.templates()
                .iter()
                .filter(|t| t.family == f)
                .map(|t| t.name.clone())
                .collect()
        };
        assert_eq!(members(Family::V), ["VGG16", "VGG19"]);
        assert_eq!(members(Family::R), ["ResNet50", "ResNet101", "ResNet152"]);
        assert_eq!(
            members(Family::D),
            ["DenseNet121", "DenseNet169", "DenseNet201"]
        );
        assert_eq!(
            members(Family::I),
            ["InceptionV3", "InceptionResNet", "Xception"]
        );
        assert_eq!(members(Family::M), ["MobileNetV1", "MobileNetV2"]);
    }

    #[test]
    fn catalog_is_deterministic() {
        assert_eq!(build_catalog(), build_catalog());
        assert_eq!(build_catalog().len(), 13);
    }

    #[test]
    fn export_import_round_trip() {
        let cat = build_catalog();
        let text = cat.export();
        assert_eq!(Catalog::import(&text).unwrap(), cat);
        assert!(text.contains("\"format\": 1"));
        let vgg19 = text.find("\"VGG19\"").unwrap();
        let tail = &text[vgg19..];
        let attrs = tail.find("\"attributes\"").unwrap();
        let compact: String = tail[attrs..]
            .chars()
            .take_while(|&c| c != ']')
            .filter(|c| !c.is_whitespace())
            .collect();
        assert_eq!(compact, "\"attributes\":[16,3,1,18,5,0,0,19");
    }

    #[test]
    fn truncated_import_reports_line() {
        let text = build_catalog().export();
        let cut = &text[..text.len() / 2];
        match Catalog::import(cut) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_attributes_rejected() {
        let text = build_catalog().export().replacen(
            "16,\n        3,\n        1,\n        18",
            "17,\n        3,\n        1,\n        18",
            1,
        );
        assert!(Catalog::import(&text).is_err());
    }

    #[test]
    fn invalid_layers_rejected() {
        let bad_pool = ArchTemplate::new(
            "bad",
            Family::V,
            vec![Block::new(
                BlockLabel::Stem,
                vec![LayerDesc::new(LayerKind::Maxpool, Activation::None, true)],
            )],
        );
        assert!(bad_pool.validate().is_err());
        let early_softmax = ArchTemplate::new("bad", Family::V, vec![classifier(vec![F_SB, F_RB])]);
        assert!(early_softmax.validate().is_err());
    }

    #[test]
    fn unknown_arch_lists_names() {
        let err = build_catalog().get("LeNet").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("LeNet") && msg.contains("MobileNetV2"));
    }

    #[test]
    fn function_code_names_round_trip() {
        for c in FunctionCode::ALL {
            assert_eq!(c.name().parse::<FunctionCode>().unwrap(), c);
        }
        assert_eq!(
            FunctionCode::ALL
                .iter()
                .filter(|c| c.is_control_flow())
                .count(),
            2
        );
    }

    #[test]
    fn l1_error_basics() {
        let g = AttributeVector::from_counts([16, 3, 1, 18, 5, 0, 0, 19]);
        assert_eq!(g.l1_error(&g), 0.0);
        let v = AttributeVector([16.2, 3.0, 1.0, 18.0, 5.0, 0.0, 0.6, 18.7]);
        assert!((v.l1_error(&g) - 1.1).abs() < 1e-12);
        assert_eq!(g.total(), 62.0);
    }
}
