//! Choice-block vocabulary: which parts of the detector are elastic and what
//! each may realize. Width blocks pick a channel fraction of the configured
//! capacity; fusion blocks pick how an exchanger merges its auxiliary stream.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{hex_string, ModelConfig, Realization};
use crate::nas::NasError;
use crate::nn::fusion::FusionOption;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Width,
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "options", rename_all = "snake_case")]
pub enum BlockOptions {
    /// Channel fractions of the configured capacity, each in (0, 1].
    Width(Vec<f64>),
    /// Fusion option ids (1 = gated, 2 = sum, 3 = scaled).
    Fusion(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceBlockSpec {
    pub block_id: String,
    #[serde(flatten)]
    pub options: BlockOptions,
}

impl ChoiceBlockSpec {
    pub fn width(block_id: &str, options: &[f64]) -> Self {
        ChoiceBlockSpec {
            block_id: block_id.into(),
            options: BlockOptions::Width(options.to_vec()),
        }
    }

    pub fn fusion(block_id: &str, options: &[u8]) -> Self {
        ChoiceBlockSpec {
            block_id: block_id.into(),
            options: BlockOptions::Fusion(options.to_vec()),
        }
    }

    pub fn kind(&self) -> BlockKind {
        match self.options {
            BlockOptions::Width(_) => BlockKind::Width,
            BlockOptions::Fusion(_) => BlockKind::Fusion,
        }
    }

    pub fn num_options(&self) -> usize {
        match &self.options {
            BlockOptions::Width(v) => v.len(),
            BlockOptions::Fusion(v) => v.len(),
        }
    }

    fn validate(&self) -> Result<(), NasError> {
        let bad = |reason: String| {
            Err(NasError::BadSpace(format!("block {}: {reason}", self.block_id)))
        };
        if self.num_options() < 2 {
            return bad("a choice needs at least two options".into());
        }
        match &self.options {
            BlockOptions::Width(v) => {
                if v.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                    return bad(format!("fractions {v:?} outside (0, 1]"));
                }
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return bad("duplicate fraction".into());
                }
            }
            BlockOptions::Fusion(v) => {
                if v.iter().any(|&o| !(1..=3).contains(&o)) {
                    return bad(format!("fusion ids {v:?} outside 1..=3"));
                }
                let mut sorted = v.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return bad("duplicate fusion id".into());
                }
            }
        }
        Ok(())
    }
}

/// Canonical block ids, in realization order.
fn known_block(id: &str) -> bool {
    for (prefix, hi) in [("backbone_", 5usize), ("stem_", 3), ("neckhead_", 3)] {
        if let Some(rest) = id.strip_prefix(prefix) {
            return rest.parse::<usize>().is_ok_and(|i| (1..=hi).contains(&i));
        }
    }
    if let Some(rest) = id.strip_prefix("exchanger_") {
        return rest.parse::<usize>().is_ok_and(|i| i >= 1);
    }
    false
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub blocks: Vec<ChoiceBlockSpec>,
}

impl SearchSpace {
    /// The complete elastic space: shallow backbone stages keep at least half
    /// their channels, everything else may thin to a quarter, and every
    /// exchanger picks one of three fusions.
    pub fn full() -> SearchSpace {
        let halves = [0.5, 1.0];
        let quarters = [0.25, 0.5, 0.75, 1.0];
        let mut blocks = Vec::with_capacity(18);
        blocks.push(ChoiceBlockSpec::width("backbone_1", &halves));
        blocks.push(ChoiceBlockSpec::width("backbone_2", &halves));
        for i in 3..=5 {
            blocks.push(ChoiceBlockSpec::width(&format!("backbone_{i}"), &quarters));
        }
        for i in 1..=3 {
            blocks.push(ChoiceBlockSpec::width(&format!("stem_{i}"), &quarters));
        }
        for i in 1..=7 {
            blocks.push(ChoiceBlockSpec::fusion(&format!("exchanger_{i}"), &[1, 2, 3]));
        }
        for i in 1..=3 {
            blocks.push(ChoiceBlockSpec::width(&format!("neckhead_{i}"), &quarters));
        }
        SearchSpace { blocks }
    }

    /// Desk-scale space: six binary width choices and the first two
    /// exchangers' fusions — 576 architectures, small enough to enumerate.
    pub fn reduced() -> SearchSpace {
        let halves = [0.5, 1.0];
        let blocks = vec![
            ChoiceBlockSpec::width("backbone_3", &halves),
            ChoiceBlockSpec::width("backbone_4", &halves),
            ChoiceBlockSpec::width("backbone_5", &halves),
            ChoiceBlockSpec::width("stem_3", &halves),
            ChoiceBlockSpec::fusion("exchanger_1", &[1, 2, 3]),
            ChoiceBlockSpec::fusion("exchanger_2", &[1, 2, 3]),
            ChoiceBlockSpec::width("neckhead_2", &halves),
            ChoiceBlockSpec::width("neckhead_3", &halves),
        ];
        SearchSpace { blocks }
    }

    pub fn validate(&self) -> Result<(), NasError> {
        if self.blocks.is_empty() {
            return Err(NasError::BadSpace("no choice blocks".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.blocks {
            b.validate()?;
            if !known_block(&b.block_id) {
                return Err(NasError::BadSpace(format!("unknown block id {}", b.block_id)));
            }
            if !seen.insert(&b.block_id) {
                return Err(NasError::BadSpace(format!("block {} listed twice", b.block_id)));
            }
        }
        Ok(())
    }

    pub fn block(&self, id: &str) -> Option<&ChoiceBlockSpec> {
        self.blocks.iter().find(|b| b.block_id == id)
    }

    /// Exact number of distinct genes.
    pub fn cardinality(&self) -> u128 {
        self.blocks.iter().map(|b| b.num_options() as u128).product()
    }

    /// Hash over the sorted canonical encoding; gene files and search logs
    /// carry it so artifacts never cross spaces silently.
    pub fn hash(&self) -> String {
        let mut sorted = self.blocks.clone();
        sorted.sort_by(|a, b| a.block_id.cmp(&b.block_id));
        let json = serde_json::to_string(&sorted).expect("space serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())[..16].to_string()
    }

    /// The gene with every width at its largest fraction and every fusion at
    /// its first listed option.
    pub fn full_width_gene(&self) -> ArchitectureGene {
        let mut choices = BTreeMap::new();
        for b in &self.blocks {
            let idx = match &b.options {
                BlockOptions::Width(v) => {
                    let mut best = 0;
                    for (i, f) in v.iter().enumerate() {
                        if *f > v[best] {
                            best = i;
                        }
                    }
                    best
                }
                BlockOptions::Fusion(_) => 0,
            };
            choices.insert(b.block_id.clone(), idx);
        }
        ArchitectureGene { choices }
    }
}

/// One architecture: an option index for every choice block of its space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureGene {
    pub choices: BTreeMap<String, usize>,
}

impl ArchitectureGene {
    pub fn validate(&self, space: &SearchSpace) -> Result<(), NasError> {
        for b in &space.blocks {
            match self.choices.get(&b.block_id) {
                None => {
                    return Err(NasError::BadGene {
                        block: b.block_id.clone(),
                        reason: "no choice recorded".into(),
                    })
                }
                Some(&idx) if idx >= b.num_options() => {
                    return Err(NasError::BadGene {
                        block: b.block_id.clone(),
                        reason: format!("option {idx} of {}", b.num_options()),
                    })
                }
                Some(_) => {}
            }
        }
        if self.choices.len() != space.blocks.len() {
            let extra = self
                .choices
                .keys()
                .find(|k| space.block(k).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(NasError::BadGene {
                block: extra,
                reason: "not a block of this space".into(),
            });
        }
        Ok(())
    }

    /// Stable identity for deduplication within one space.
    pub fn gene_hash(&self) -> String {
        let json = serde_json::to_string(&self.choices).expect("gene serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())[..16].to_string()
    }
}

/// Serialized gene file: the gene plus the hash of the space it belongs to.
#[derive(Serialize, Deserialize)]
struct GeneFile {
    space_hash: String,
    choices: BTreeMap<String, usize>,
}

pub fn save_gene(path: &Path, space: &SearchSpace, gene: &ArchitectureGene) -> Result<(), NasError> {
    let file = GeneFile { space_hash: space.hash(), choices: gene.choices.clone() };
    let json = serde_json::to_string_pretty(&file).expect("gene serializes");
    std::fs::write(path, json).map_err(|source| NasError::Io { path: path.into(), source })
}

pub fn load_gene(path: &Path, space: &SearchSpace) -> Result<ArchitectureGene, NasError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| NasError::Io { path: path.into(), source })?;
    let file: GeneFile = serde_json::from_str(&text)
        .map_err(|e| NasError::BadFormat { path: path.into(), reason: e.to_string() })?;
    if file.space_hash != space.hash() {
        return Err(NasError::GeneFileMismatch { expected: space.hash(), found: file.space_hash });
    }
    let gene = ArchitectureGene { choices: file.choices };
    gene.validate(space)?;
    Ok(gene)
}

fn realized_width(fraction: f64, base: usize) -> usize {
    ((fraction * base as f64).round() as usize).max(1)
}

/// Map a gene onto concrete channel counts under `config`. Blocks the space
/// leaves out stay at full width / gated fusion.
pub fn realize(
    space: &SearchSpace,
    gene: &ArchitectureGene,
    config: &ModelConfig,
) -> Result<Realization, NasError> {
    space.validate()?;
    gene.validate(space)?;
    let mut r = Realization::full_width(config);
    for b in &space.blocks {
        let idx = gene.choices[&b.block_id];
        let id = b.block_id.as_str();
        match &b.options {
            BlockOptions::Width(fracs) => {
                let f = fracs[idx];
                if let Some(i) = id.strip_prefix("backbone_") {
                    let i: usize = i.parse().unwrap();
                    r.backbone[i - 1] = realized_width(f, config.backbone_widths[i - 1]);
                } else if let Some(i) = id.strip_prefix("stem_") {
                    let i: usize = i.parse().unwrap();
                    r.stem[i - 1] = realized_width(f, config.stem_width);
                } else if let Some(i) = id.strip_prefix("neckhead_") {
                    let i: usize = i.parse().unwrap();
                    r.neckhead[i - 1] = realized_width(f, config.neckhead_widths[i - 1]);
                } else {
                    return Err(NasError::SpaceConfigMismatch { block: b.block_id.clone() });
                }
            }
            BlockOptions::Fusion(opts) => {
                let Some(i) = id.strip_prefix("exchanger_") else {
                    return Err(NasError::SpaceConfigMismatch { block: b.block_id.clone() });
                };
                let i: usize = i.parse().unwrap();
                if i > config.num_exchangers() {
                    return Err(NasError::SpaceConfigMismatch { block: b.block_id.clone() });
                }
                r.fusion[i - 1] = FusionOption::from_index(opts[idx] as usize)
                    .expect("validated fusion id");
            }
        }
    }
    Ok(r)
}
