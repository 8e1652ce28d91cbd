//! Pipeline configuration: a single TOML file plus dotted-path `--set`
//! overrides. Every stage revalidates the resolved config before running.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use radnas_core::detector::{Routing, TrainHyper, Variant};
use radnas_core::nas::{realize, SearchSpace};
use radnas_core::rdmap::{Split, SynthConfig};
use radnas_core::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; stages derive their own streams from fixed offsets.
    pub seed: u64,
    /// Output root; the `RADNAS_OUT` environment variable overrides it.
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub supernet: TrainSection,
    pub search: SearchSection,
    pub retrain: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset root with train/val/test manifests. Unset means the
    /// pipeline reads the dataset `synth` or `preprocess` wrote under
    /// `out_dir/data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Raw ADC capture root for `preprocess`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adc_dir: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub snr_db: (f64, f64),
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone_widths: [usize; 5],
    pub stem_width: usize,
    pub neckhead_widths: [usize; 3],
    /// "heat-to-backbone" or "gray-to-backbone".
    pub routing: String,
    /// "detached", "stem-only", "mode1-only", or "full".
    pub variant: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub augment_flip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    /// "full" or "reduced".
    pub space: String,
    pub population: usize,
    pub iterations: usize,
    pub top_k: usize,
    pub mutation_prob: f64,
    /// Training batches used to recalibrate statistics per candidate.
    pub recalib_batches: usize,
    /// Parameter budget for candidates; 0 disables the constraint.
    pub max_params: usize,
    /// How many top-ranked genes `retrain-top` trains from scratch.
    pub retrain_candidates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// "train", "val", or "test".
    pub split: String,
}

impl PipelineConfig {
    /// Read `path`, apply `--set` overrides in order, and return the config
    /// next to its resolved TOML text (the form that gets hashed and stored).
    pub fn load(path: &Path, sets: &[String]) -> Result<(PipelineConfig, String)> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut table: toml::Table = text
            .parse()
            .with_context(|| format!("config {} is not valid TOML", path.display()))?;
        for set in sets {
            apply_override(&mut table, set)?;
        }
        let resolved = toml::to_string_pretty(&table).expect("tables serialize");
        let config: PipelineConfig = table
            .try_into()
            .with_context(|| format!("config {} has the wrong shape", path.display()))?;
        Ok((config, resolved))
    }

    /// Output root after the `RADNAS_OUT` override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os("RADNAS_OUT") {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let routing = match self.model.routing.as_str() {
            "heat-to-backbone" => Routing::HeatToBackbone,
            "gray-to-backbone" => Routing::GrayToBackbone,
            other => bail!("model.routing `{other}` is not one of heat-to-backbone, gray-to-backbone"),
        };
        let variant = match self.model.variant.as_str() {
            "detached" => Variant::Detached,
            "stem-only" => Variant::StemOnly,
            "mode1-only" => Variant::Mode1Only,
            "full" => Variant::Full,
            other => bail!("model.variant `{other}` is not one of detached, stem-only, mode1-only, full"),
        };
        Ok(ModelConfig {
            num_classes: self.dataset.num_classes,
            backbone_widths: self.model.backbone_widths,
            stem_width: self.model.stem_width,
            neckhead_widths: self.model.neckhead_widths,
            routing,
            variant,
            ..ModelConfig::default()
        })
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        match self.search.space.as_str() {
            "full" => Ok(SearchSpace::full()),
            "reduced" => Ok(SearchSpace::reduced()),
            other => bail!("search.space `{other}` is not one of full, reduced"),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.dataset;
        SynthConfig {
            height: d.height,
            width: d.width,
            train: d.train,
            val: d.val,
            test: d.test,
            num_classes: d.num_classes,
            min_objects: d.min_objects,
            max_objects: d.max_objects,
            snr_db: d.snr_db,
            noise_sigma: d.noise_sigma,
        }
    }

    pub fn eval_split(&self) -> Result<Split> {
        match self.eval.split.as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => bail!("eval.split `{other}` is not one of train, val, test"),
        }
    }

    pub fn supernet_hyper(&self) -> TrainHyper {
        hyper(&self.supernet, self.seed.wrapping_add(1))
    }

    /// Per-rank seed so retrained candidates do not share initializations.
    pub fn retrain_hyper(&self, rank: usize) -> TrainHyper {
        hyper(&self.retrain, self.seed.wrapping_add(100 + rank as u64))
    }

    /// Where stages read the dataset from.
    pub fn data_root(&self, out: &Path) -> PathBuf {
        self.dataset.dir.clone().unwrap_or_else(|| out.join("data"))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.height == 0 || d.height % 32 != 0 {
            bail!("dataset.height ({}) must be a positive multiple of 32", d.height);
        }
        if d.width == 0 || d.width % 32 != 0 {
            bail!("dataset.width ({}) must be a positive multiple of 32", d.width);
        }
        if d.train == 0 || d.val == 0 || d.test == 0 {
            bail!(
                "dataset splits must be non-empty (train={}, val={}, test={})",
                d.train, d.val, d.test
            );
        }
        if d.num_classes == 0 {
            bail!("dataset.num_classes must be at least 1");
        }
        if d.min_objects == 0 || d.min_objects > d.max_objects {
            bail!(
                "dataset.min_objects ({}) must be in 1..=dataset.max_objects ({})",
                d.min_objects, d.max_objects
            );
        }
        if !(d.snr_db.0.is_finite() && d.snr_db.1.is_finite()) || d.snr_db.0 > d.snr_db.1 {
            bail!("dataset.snr_db ({:?}) must be a non-decreasing finite range", d.snr_db);
        }
        if !(d.noise_sigma.is_finite() && d.noise_sigma > 0.0) {
            bail!("dataset.noise_sigma ({}) must be positive", d.noise_sigma);
        }

        for (name, t) in [("supernet", &self.supernet), ("retrain", &self.retrain)] {
            if t.epochs == 0 {
                bail!("{name}.epochs must be at least 1");
            }
            if t.batch_size == 0 {
                bail!("{name}.batch_size must be at least 1");
            }
            if !(t.lr.is_finite() && t.lr > 0.0) {
                bail!("{name}.lr ({}) must be positive", t.lr);
            }
            if !(0.0..1.0).contains(&t.momentum) {
                bail!("{name}.momentum ({}) must be in [0, 1)", t.momentum);
            }
        }

        let s = &self.search;
        if s.population == 0 {
            bail!("search.population must be at least 1");
        }
        if s.iterations == 0 {
            bail!("search.iterations must be at least 1");
        }
        if s.top_k == 0 || s.top_k > s.population {
            bail!(
                "search.top_k ({}) must be in 1..=search.population ({})",
                s.top_k, s.population
            );
        }
        if !(0.0..=1.0).contains(&s.mutation_prob) {
            bail!("search.mutation_prob ({}) must be in [0, 1]", s.mutation_prob);
        }
        if s.recalib_batches == 0 {
            bail!("search.recalib_batches must be at least 1");
        }
        if s.retrain_candidates == 0 || s.retrain_candidates > s.top_k {
            bail!(
                "search.retrain_candidates ({}) must be in 1..=search.top_k ({})",
                s.retrain_candidates, s.top_k
            );
        }

        let model = self.model_config()?;
        model.validate().map_err(|e| anyhow!("model section invalid: {e}"))?;
        let space = self.search_space()?;
        // Full-width realization catches width/space disagreements (for
        // example a stem cap the fractions cannot hit) before any stage runs.
        realize(&space, &space.full_width_gene(), &model)
            .map_err(|e| anyhow!("search space does not fit the model section: {e}"))?;
        self.eval_split()?;
        Ok(())
    }
}

fn hyper(t: &TrainSection, seed: u64) -> TrainHyper {
    TrainHyper {
        epochs: t.epochs,
        batch_size: t.batch_size,
        lr: t.lr,
        momentum: t.momentum,
        seed,
        augment_flip: t.augment_flip,
    }
}

/// Apply one `key.path=value` override in place. The key must already exist
/// so typos fail loudly instead of adding dead weight.
fn apply_override(table: &mut toml::Table, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| anyhow!("--set `{set}` must look like key.path=value"))?;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("--set key `{key}` has an empty path segment");
    }
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .get_mut(*segment)
            .ok_or_else(|| anyhow!("--set key `{key}`: section `{segment}` not in config"))?
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set key `{key}`: `{segment}` is not a section"))?;
    }
    let last = segments[segments.len() - 1];
    let slot = current
        .get_mut(last)
        .ok_or_else(|| anyhow!("--set key `{key}` not in config"))?;
    let mut value = parse_toml_value(raw);
    // TOML has no integer-to-float coercion; patch the common case so
    // `--set supernet.lr=1` works against a float field.
    if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &value) {
        value = toml::Value::Float(*i as f64);
    }
    *slot = value;
    Ok(())
}

/// Parse the right-hand side as a TOML literal; bare words fall back to
/// strings so `--set model.variant=full` needs no quoting.
fn parse_toml_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("probe key exists"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let path = dir.path().join("pipeline.cfg");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    fn desk_text() -> String {
        fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.cfg")).unwrap()
    }

    #[test]
    fn desk_profile_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let (config, resolved) = PipelineConfig::load(&path, &[]).unwrap();
        config.validate().unwrap();
        assert_eq!(config.dataset.height, 64);
        assert_eq!(config.supernet.epochs, 20);
        assert_eq!(config.search.space, "reduced");
        // The resolved text must parse back to the same config.
        let path2 = write_config(&dir, &resolved);
        let (config2, _) = PipelineConfig::load(&path2, &[]).unwrap();
        assert_eq!(
            serde_json::to_string(&config).unwrap(),
            serde_json::to_string(&config2).unwrap()
        );
    }

    #[test]
    fn mini_profile_parses_and_validates() {
        let text = fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/mini.cfg"
        ))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &text);
        let (config, _) = PipelineConfig::load(&path, &[]).unwrap();
        config.validate().unwrap();
    }

    #[test]
    fn set_overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let sets = vec![
            "seed=9".to_string(),
            "search.population=7".to_string(),
            "search.population=8".to_string(),
            "supernet.lr=0.5".to_string(),
            "model.variant=detached".to_string(),
        ];
        let (config, resolved) = PipelineConfig::load(&path, &sets).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.search.population, 8);
        assert_eq!(config.supernet.lr, 0.5);
        assert_eq!(config.model.variant, "detached");
        assert!(resolved.contains("population = 8"));
    }

    #[test]
    fn set_rejects_unknown_keys_and_bad_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let err = PipelineConfig::load(&path, &["search.popsize=8".into()]).unwrap_err();
        assert!(err.to_string().contains("popsize"), "{err}");
        let err = PipelineConfig::load(&path, &["nonsense".into()]).unwrap_err();
        assert!(err.to_string().contains("key.path=value"), "{err}");
    }

    #[test]
    fn validation_names_both_fields_on_topk_overflow() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let sets = vec!["search.population=50".to_string(), "search.top_k=60".to_string()];
        let (config, _) = PipelineConfig::load(&path, &sets).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("search.top_k (60)"), "{err}");
        assert!(err.contains("search.population (50)"), "{err}");
    }

    #[test]
    fn validation_rejects_indivisible_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let sets = vec!["dataset.height=60".to_string(), "dataset.width=60".to_string()];
        let (config, _) = PipelineConfig::load(&path, &sets).unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("60") && err.contains("32"), "{err}");
    }

    #[test]
    fn out_dir_env_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, &desk_text());
        let (config, _) = PipelineConfig::load(&path, &[]).unwrap();
        // Env access is process-global; keep this assertion self-contained.
        std::env::set_var("RADNAS_OUT", dir.path());
        assert_eq!(config.resolved_out_dir(), dir.path());
        std::env::remove_var("RADNAS_OUT");
        assert_eq!(config.resolved_out_dir(), config.out_dir);
    }
}
