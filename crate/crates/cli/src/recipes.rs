//! Named dataset recipes shared by `gen-data`, `train` and `diagnose`.

use anyhow::{bail, Context, Result};
use serde_json::json;

use sblab::checkpoint::Container;
use sblab::datasets::{digit_source, make_colored_mnist, texture_source, LabeledDataset, SourceConfig, Split};
use sblab::nets::{CnnSpec, ExtractorSpec};
use sblab::pipeline::{ConcatData, LabConfig};
use sblab::theory::{replicate, sample_toy, Axis, ReplicationMap, ToyDistribution};

pub const RECIPES: &str = "colored-train, colored-test, colored-decoupled, digits, textures, \
concat, concat-rand-simple, concat-rand-complex, concat-avg-simple, concat-avg-complex, toy-<d>";

pub struct Generated {
    pub dataset: LabeledDataset,
    /// Extractor a fresh model for this data should use.
    pub extractor: ExtractorSpec,
}

pub struct RecipeArgs {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

fn cnn_for(ds: &LabeledDataset) -> ExtractorSpec {
    let s = ds.inputs.shape();
    ExtractorSpec::Cnn(CnnSpec { in_channels: s[1], ..CnnSpec::colored_digits(s[2], s[3]) })
}

pub fn generate(recipe: &str, args: &RecipeArgs) -> Result<Generated> {
    let src = SourceConfig::new(args.per_class, args.size, args.seed);
    let done = |dataset: LabeledDataset| {
        let extractor = cnn_for(&dataset);
        Ok(Generated { dataset, extractor })
    };
    if let Some(split) = recipe.strip_prefix("colored-") {
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            "decoupled" => Split::Decoupled,
            other => bail!("unknown coloured split `{other}`"),
        };
        let digits = digit_source(src);
        return done(make_colored_mnist(&digits, split, args.seed.wrapping_add(1))?);
    }
    if let Some(d) = recipe.strip_prefix("toy-") {
        let d: usize = d.parse().with_context(|| format!("bad replication count in `{recipe}`"))?;
        let base = sample_toy(&ToyDistribution::default(), args.per_class, args.seed, true);
        let dataset = replicate(&base, ReplicationMap::new(d, Axis::Second))?;
        let dim = dataset.inputs.shape()[1];
        return Ok(Generated { dataset, extractor: ExtractorSpec::Mlp { widths: vec![dim, dim] } });
    }
    match recipe {
        "digits" => done(digit_source(src)),
        "textures" => done(texture_source(src)),
        r if r.starts_with("concat") => {
            let cfg = LabConfig {
                train_per_class: args.per_class,
                test_per_class: args.per_class,
                size: args.size,
                seed: args.seed,
                ..LabConfig::default()
            };
            let data = ConcatData::generate(&cfg)?;
            let dataset = match r {
                "concat" => data.train,
                "concat-rand-simple" => data.train_rand_simple,
                "concat-rand-complex" => data.train_rand_complex,
                "concat-avg-simple" => data.test_avg_simple,
                "concat-avg-complex" => data.test_avg_complex,
                other => bail!("unknown recipe `{other}`; known: {RECIPES}"),
            };
            Ok(Generated { dataset, extractor: cfg.extractor(data.layout) })
        }
        other => bail!("unknown recipe `{other}`; known: {RECIPES}"),
    }
}

pub fn to_container(recipe: &str, args: &RecipeArgs, g: &Generated) -> Result<Container> {
    Ok(g.dataset.to_container(json!({
        "recipe": recipe,
        "seed": args.seed,
        "per_class": args.per_class,
        "size": args.size,
        "extractor": g.extractor,
    }))?)
}

pub fn from_container(c: &Container) -> Result<Generated> {
    let dataset = LabeledDataset::from_container(c)?;
    let extractor = match c.meta.get("meta").and_then(|m| m.get("extractor")) {
        Some(v) => serde_json::from_value(v.clone())?,
        None if dataset.inputs.rank() == 4 => cnn_for(&dataset),
        None => ExtractorSpec::Mlp { widths: vec![dataset.inputs.shape()[1]; 2] },
    };
    Ok(Generated { dataset, extractor })
}

/// Head width for a dataset: one logit for binary tasks.
pub fn head_width(ds: &LabeledDataset) -> usize {
    if ds.classes == 2 { 1 } else { ds.classes }
}
