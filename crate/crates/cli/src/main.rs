//! `avseg` — file-based pipeline front-end.
//!
//! Exit codes: 0 success, 1 validation or check failure, 2 I/O error.

use avseg_core::loss::LossConfig;
use avseg_core::pipeline::{
    self, run_align, run_eval_batch, run_eval_frame, run_integrate, run_losscheck,
    tag_scores_to_json, to_canonical_string, write_json, PipelineConfig, PipelineError,
};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "avseg",
    version,
    about = "Audio-visual sounding-object segmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a tree file, reporting layer sizes
    TreeValidate {
        /// Tree file to check
        #[arg(long)]
        tree: PathBuf,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter instances, aggregate tag scores, and split sounding from
    /// silent objects; directories are processed in batch, paired by name
    Integrate {
        #[arg(long)]
        tree: PathBuf,
        /// Instance file (or directory of frames)
        #[arg(long)]
        instances: PathBuf,
        /// Tag-score file (or directory paired with --instances by name)
        #[arg(long)]
        tags: PathBuf,
        /// Per-tag confidence gate before aggregation
        #[arg(long, default_value_t = 0.1)]
        tau_tag: f64,
        /// IoU gate of the two-phase filter
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        /// Output file (or directory in batch mode)
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlay tag confidences from a noise spec onto a tag-score file
    InjectNoise {
        #[arg(long)]
        tags: PathBuf,
        /// JSON object of tag -> confidence to add or overwrite
        #[arg(long)]
        spec: PathBuf,
        /// Validate spec tags against this tree
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Permit spec tags the tree does not know
        #[arg(long)]
        allow_unknown: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jaccard and F-score of prediction files against ground truth
    Eval {
        /// Prediction instance file (or directory)
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth instance file (or directory paired by name)
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        beta2: f64,
        /// Add a per-label breakdown (single-frame mode)
        #[arg(long)]
        per_class: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss breakdown plus gradient checks on a frame file; exits 1 when
    /// any check exceeds the tolerance
    LossCheck {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 20.0)]
        lambda_focal: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_dice: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_cls: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_ins: f64,
        #[arg(long, default_value_t = 2.0)]
        focal_gamma: f64,
        #[arg(long, default_value_t = 0.25)]
        focal_alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        tau_sil: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Canonicalize caption nouns against the category vocabulary and
    /// derive silent labels
    Align {
        #[arg(long)]
        embeddings: PathBuf,
        /// JSON array of nouns
        #[arg(long)]
        nouns: PathBuf,
        /// JSON array of category labels; defaults to the tree's category
        /// layer when --tree is given
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        tree: Option<PathBuf>,
        /// JSON array of sounding labels to exclude
        #[arg(long)]
        sounding: Option<PathBuf>,
        /// Drop nouns whose best similarity falls below this floor
        #[arg(long)]
        min_similarity: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<(), PipelineError> {
    match out {
        Some(path) => {
            write_json(path, value)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{}", to_canonical_string(value));
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<i32, PipelineError> {
    match command {
        Command::TreeValidate { tree, out } => {
            let parsed = pipeline::load_tree(&tree)?;
            let (groups, categories, tags) = parsed.layer_sizes();
            let report = json!({
                "groups": groups,
                "categories": categories,
                "tags": tags,
            });
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Integrate {
            tree,
            instances,
            tags,
            tau_tag,
            iou_threshold,
            out,
        } => {
            let cfg = PipelineConfig {
                tau_tag,
                iou_threshold,
                ..PipelineConfig::default()
            };
            cfg.validate()?;
            let parsed_tree = pipeline::load_tree(&tree)?;
            if instances.is_dir() {
                let pairs = pipeline::paired_files(&instances, &tags)?;
                if pairs.is_empty() {
                    return Err(PipelineError::Validation(format!(
                        "no JSON frame files found under {}",
                        instances.display()
                    )));
                }
                std::fs::create_dir_all(&out).map_err(|source| PipelineError::Io {
                    path: out.clone(),
                    source,
                })?;
                for (name, instance_path, tags_path) in pairs {
                    let (value, output) =
                        run_integrate(&parsed_tree, &instance_path, &tags_path, &cfg)?;
                    warn_unknown(&name, &output.unknown_tags);
                    write_json(&out.join(&name), &value)?;
                    eprintln!(
                        "{name}: {} sounding, {} silent",
                        output.result.sounding.len(),
                        output.result.silent.len()
                    );
                }
            } else {
                let (value, output) = run_integrate(&parsed_tree, &instances, &tags, &cfg)?;
                warn_unknown(&instances.display().to_string(), &output.unknown_tags);
                write_json(&out, &value)?;
                eprintln!(
                    "{} sounding, {} silent -> {}",
                    output.result.sounding.len(),
                    output.result.silent.len(),
                    out.display()
                );
            }
            Ok(0)
        }
        Command::InjectNoise {
            tags,
            spec,
            tree,
            allow_unknown,
            out,
        } => {
            let base = pipeline::load_tag_scores(&tags)?;
            let spec_scores = pipeline::load_tag_scores(&spec)?;
            if let Some(tree_path) = tree {
                let parsed = pipeline::load_tree(&tree_path)?;
                let unknown = pipeline::unknown_spec_tags(&parsed, &spec_scores);
                if !unknown.is_empty() && !allow_unknown {
                    return Err(PipelineError::Validation(format!(
                        "spec names tags absent from the tree: {} (pass --allow-unknown to inject anyway)",
                        unknown.join(", ")
                    )));
                }
            }
            let merged = pipeline::inject_noise(&base, &spec_scores);
            write_json(&out, &tag_scores_to_json(&merged))?;
            Ok(0)
        }
        Command::Eval {
            pred,
            gt,
            beta2,
            per_class,
            out,
        } => {
            let value = if pred.is_dir() {
                run_eval_batch(&pred, &gt, beta2)?
            } else {
                run_eval_frame(&pred, &gt, beta2, per_class)?.0
            };
            emit(&value, out.as_deref())?;
            Ok(0)
        }
        Command::LossCheck {
            frame,
            step,
            tolerance,
            lambda_focal,
            lambda_dice,
            lambda_cls,
            lambda_ins,
            focal_gamma,
            focal_alpha,
            tau_sil,
            out,
        } => {
            let loss_cfg = LossConfig {
                lambda_focal,
                lambda_dice,
                lambda_cls,
                lambda_ins,
                focal_gamma,
                focal_alpha,
                silent_threshold: tau_sil,
            };
            let parsed = pipeline::load_loss_frame(&frame)?;
            let (report, passed) = run_losscheck(&parsed, &loss_cfg, step, tolerance)?;
            emit(&report, out.as_deref())?;
            if !passed {
                eprintln!("gradient check failed (tolerance {tolerance})");
                return Ok(1);
            }
            Ok(0)
        }
        Command::Align {
            embeddings,
            nouns,
            categories,
            tree,
            sounding,
            min_similarity,
            out,
        } => {
            let table = pipeline::load_embeddings(&embeddings)?;
            let noun_list = pipeline::load_word_list(&nouns)?;
            let category_list = match (categories, tree) {
                (Some(path), _) => pipeline::load_word_list(&path)?,
                (None, Some(tree_path)) => {
                    let parsed = pipeline::load_tree(&tree_path)?;
                    parsed.category_names().map(String::from).collect()
                }
                (None, None) => {
                    return Err(PipelineError::Validation(
                        "align needs --categories or --tree".to_string(),
                    ));
                }
            };
            let sounding_list = match sounding {
                Some(path) => pipeline::load_word_list(&path)?,
                None => Vec::new(),
            };
            let value = run_align(
                &table,
                &noun_list,
                &category_list,
                &sounding_list,
                min_similarity,
            )?;
            emit(&value, out.as_deref())?;
            Ok(0)
        }
    }
}

fn warn_unknown(context: &str, unknown: &[String]) {
    if !unknown.is_empty() {
        eprintln!(
            "{context}: {} tag(s) not in the tree, ignored: {}",
            unknown.len(),
            unknown.join(", ")
        );
    }
}
