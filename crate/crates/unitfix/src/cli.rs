//! `unitfix` command line. Exit status 0 on success, 1 on usage errors
//! (bad flags, malformed or invalid configuration), 2 on data or contract
//! errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::{load_config, PipelineConfig, VariantName};
use crate::error::Result;
use crate::parallel::Pool;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: ACFT v1, KMCB v1, ENCP v1, unit text v1, manifest v1)"
);

#[derive(Debug, Parser)]
#[command(name = "unitfix", version = VERSION, about = "Unsupervised accent correction of discrete speech units")]
pub struct Cli {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives the serial reference run.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Write per-iteration corrector traces (JSON Lines) here.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate standard, accented and held-out synthetic corpora.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Held-out accented utterances.
        #[arg(long, default_value_t = 0)]
        heldout: usize,
    },
    /// Fit a K-means codebook on a corpus's features.
    KmeansFit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign corpus frames to codebook units.
    KmeansAssign {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth standard clusters in codebook labels.
        #[arg(long)]
        standard_out: Option<PathBuf>,
    },
    /// Train the unit language model (neural or count, per config).
    MlmTrain {
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Per-frame confidences of unit sequences.
    Score {
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative mask-and-decode correction.
    Correct {
        #[arg(long)]
        scorer: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        phone_map: Option<PathBuf>,
        /// Iterations K.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        p_mask: Option<f64>,
        #[arg(long, value_enum)]
        variant: Option<VariantName>,
        #[arg(long)]
        k0: Option<usize>,
    },
    /// Learn the cluster-to-phone map from frame-aligned phones.
    PhonemapLearn {
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phone error rate of hypotheses against reference phone lines.
    EvalPer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Treat hypotheses as unit sequences mapped through this phone map.
        #[arg(long)]
        phone_map: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the standard-accent acoustic backbone.
    AdaptPretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Adapter-only continual pre-training on accented data.
    AdaptTrain {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Masked-frame accuracy of an acoustic encoder.
    AdaptEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Correct {
        k,
        p_mask,
        variant,
        k0,
        ..
    } = &cli.command
    {
        let c = &mut cfg.corrector;
        c.k = k.unwrap_or(c.k);
        c.p_mask = p_mask.unwrap_or(c.p_mask);
        c.variant = variant.unwrap_or(c.variant);
        c.k0 = k0.unwrap_or(c.k0);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}

/// Executes a parsed command line and returns its summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = configure(cli)?;
    let pool = Pool::new(cli.jobs)?;
    let ex = &pool;
    match &cli.command {
        Command::GenCorpus { out, heldout } => commands::gen_corpus(ex, &cfg, out, *heldout),
        Command::KmeansFit { corpus, out } => commands::kmeans_fit(ex, &cfg, corpus, out),
        Command::KmeansAssign {
            codebook,
            corpus,
            out,
            standard_out,
        } => commands::kmeans_assign(ex, codebook, corpus, out, opt(standard_out)),
        Command::MlmTrain { units, out, log } => {
            commands::mlm_train(ex, &cfg, units, out, opt(log))
        }
        Command::Score { scorer, units, out } => commands::score(ex, scorer, units, out),
        Command::Correct {
            scorer,
            units,
            out,
            phone_map,
            ..
        } => commands::correct(
            ex,
            &cfg,
            scorer,
            units,
            out,
            opt(phone_map),
            opt(&cli.trace),
        ),
        Command::PhonemapLearn { units, corpus, out } => {
            commands::phonemap_learn(&cfg, units, corpus, out)
        }
        Command::EvalPer {
            hyp,
            reference,
            phone_map,
            out,
        } => commands::eval_per(hyp, reference, opt(phone_map), opt(out)).map(|r| r.1),
        Command::AdaptPretrain {
            corpus,
            units,
            out,
            log,
        } => commands::adapt_pretrain(ex, &cfg, corpus, units, out, opt(log)),
        Command::AdaptTrain {
            base,
            corpus,
            units,
            out,
            log,
        } => commands::adapt_train(ex, &cfg, base, corpus, units, out, opt(log)),
        Command::AdaptEval {
            model,
            corpus,
            units,
            out,
        } => commands::adapt_eval(ex, &cfg, model, corpus, units, opt(out)).map(|r| r.1),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
