mod commands;
mod config;
mod error;
mod workspace;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use provenant::ledger::RightKind;
use serde_json::Value;

use crate::commands::{AttributeArgs, DepositTarget, IssueArgs};
use crate::config::Config;
use crate::error::CliError;
use crate::workspace::Workspace;

/// Content provenance, attribution and royalty settlement for image corpora.
#[derive(Debug, Parser)]
#[command(name = "provenant", version)]
struct Cli {
    /// Config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "PROVENANT_CONFIG")]
    config: Option<PathBuf>,
    /// Workspace seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    paths: PathFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct PathFlags {
    #[arg(long, global = true, env = "PROVENANT_CORPUS_DIR")]
    corpus_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_STORE_DIR")]
    store_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_INDEX_FILE")]
    index_file: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_ENCODER_FILE")]
    encoder_file: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_VERIFIER_FILE")]
    verifier_file: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_LEDGER_FILE")]
    ledger_file: Option<PathBuf>,
    #[arg(long, global = true, env = "PROVENANT_CATALOG_FILE")]
    catalog_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a config file holding every default.
    Init {
        #[arg(long)]
        force: bool,
    },
    /// Register images in the corpus directory with signed manifests.
    Ingest {
        /// Generate this many toy images into the corpus directory first.
        #[arg(long)]
        generate: Option<usize>,
        /// Credit every new image to this creator instead of dealing round-robin.
        #[arg(long)]
        creator: Option<String>,
    },
    /// Train the patch encoder on the corpus.
    TrainEncoder {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the pairwise verifier on the corpus.
    TrainVerifier {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Embed every corpus patch and build the IVF-PQ index.
    BuildIndex {
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Attribute a query image to corpus images.
    Attribute {
        #[arg(long)]
        query: PathBuf,
        /// Write the credit report here instead of printing it.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Search this small image directory instead of the indexed corpus.
        #[arg(long)]
        database: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        top_m: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Mint cataloged images as ownership-linked assets.
    MintOra {
        /// Image ids; all unminted images when omitted.
        #[arg(long = "image")]
        images: Vec<String>,
    },
    /// Issue a usage right on minted images to a holder.
    #[command(group(ArgGroup::new("which").required(true).args(["images", "all"])))]
    IssueRight {
        #[arg(long = "image")]
        images: Vec<String>,
        #[arg(long)]
        all: bool,
        /// Account label or 0x address; defaults to the configured payer.
        #[arg(long)]
        holder: Option<String>,
        #[arg(long, default_value = "train-model")]
        kind: RightKind,
        #[arg(long)]
        base_royalty: Option<u64>,
    },
    /// Deposit payer funds into rights contract escrow.
    #[command(group(ArgGroup::new("target").required(true).args(["image", "creator", "all"])))]
    Deposit {
        #[arg(long)]
        amount: u64,
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        creator: Option<String>,
        #[arg(long)]
        all: bool,
        /// Mint the needed currency to the payer first.
        #[arg(long)]
        faucet: bool,
    },
    /// Pay royalties for a credit report out of escrow.
    Settle {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify an asset's manifest and print its provenance graph.
    VerifyProvenance {
        #[arg(long)]
        asset: PathBuf,
    },
    /// Compose query images from corpus patches, with ground truth.
    ComposeQueries {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        unaugmented: bool,
    },
    /// Run the whole pipeline on the built-in toy corpus.
    DemoMnistScale {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        queries: Option<usize>,
        /// Use the configured encoder and verifier files instead of training.
        #[arg(long)]
        reuse_models: bool,
    },
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let (path, explicit) = match &cli.config {
        Some(p) => (p.clone(), true),
        None => (PathBuf::from("provenant.toml"), false),
    };
    let mut cfg = Config::load(&path, explicit)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let f = &cli.paths;
    let p = &mut cfg.paths;
    for (flag, slot) in [
        (&f.corpus_dir, &mut p.corpus_dir),
        (&f.store_dir, &mut p.store_dir),
        (&f.index_file, &mut p.index_file),
        (&f.encoder_file, &mut p.encoder_file),
        (&f.verifier_file, &mut p.verifier_file),
        (&f.ledger_file, &mut p.ledger_file),
        (&f.catalog_file, &mut p.catalog_file),
    ] {
        if let Some(v) = flag {
            *slot = v.clone();
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value, CliError> {
    if let Command::Init { force } = &cli.command {
        let path = cli.config.clone().unwrap_or_else(|| PathBuf::from("provenant.toml"));
        return commands::init(&path, *force);
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::Ingest { generate, creator } => commands::ingest(&Workspace::new(cfg), generate, creator.as_deref()),
        Command::TrainEncoder { epochs } => commands::train_encoder_cmd(&Workspace::new(cfg), epochs),
        Command::TrainVerifier { epochs } => commands::train_verifier_cmd(&Workspace::new(cfg), epochs),
        Command::BuildIndex { nlist, nprobe } => {
            let mut params = cfg.index;
            params.nlist = nlist.unwrap_or(params.nlist);
            params.nprobe = nprobe.unwrap_or(params.nprobe);
            commands::build_index_cmd(&Workspace::new(cfg), params)
        }
        Command::Attribute {
            query,
            report,
            database,
            top_k,
            top_m,
            lambda,
            nprobe,
        } => {
            let a = &mut cfg.attribution;
            a.top_k = top_k.unwrap_or(a.top_k);
            a.top_m = top_m.unwrap_or(a.top_m);
            a.lambda = lambda.unwrap_or(a.lambda);
            a.nprobe = nprobe.or(a.nprobe);
            cfg.validate()?;
            let args = AttributeArgs {
                query: &query,
                report: report.as_deref(),
                database: database.as_deref(),
            };
            commands::attribute(&Workspace::new(cfg), args)
        }
        Command::MintOra { images } => commands::mint_ora(&Workspace::new(cfg), &images),
        Command::IssueRight {
            images,
            all: _,
            holder,
            kind,
            base_royalty,
        } => {
            let args = IssueArgs {
                images,
                holder: holder.as_deref(),
                kind,
                base_royalty,
            };
            commands::issue_right(&Workspace::new(cfg), args)
        }
        Command::Deposit {
            amount,
            image,
            creator,
            all: _,
            faucet,
        } => {
            let target = match (image, creator) {
                (Some(i), _) => DepositTarget::Image(i),
                (_, Some(c)) => DepositTarget::Creator(c),
                _ => DepositTarget::All,
            };
            commands::deposit(&Workspace::new(cfg), target, amount, faucet)
        }
        Command::Settle { report, out } => commands::settle(&Workspace::new(cfg), &report, out.as_deref()),
        Command::VerifyProvenance { asset } => commands::verify_provenance(&Workspace::new(cfg), &asset),
        Command::ComposeQueries {
            count,
            out,
            unaugmented,
        } => commands::compose_queries(&Workspace::new(cfg), count, &out, unaugmented),
        Command::DemoMnistScale {
            out,
            queries,
            reuse_models,
        } => {
            let out = out.unwrap_or_else(|| {
                let ledger = &cfg.paths.ledger_file;
                ledger
                    .parent()
                    .map(|d| d.join("demo"))
                    .unwrap_or_else(|| PathBuf::from("demo"))
            });
            commands::demo(&Workspace::new(cfg), &out, queries, reuse_models)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.kind().to_string());
            let mut v = err.to_json();
            v["detail"] = Value::String(e.render().to_string());
            eprintln!("{}", serde_json::to_string_pretty(&v).expect("json"));
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(v) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json"));
            ExitCode::from(e.exit_code())
        }
    }
}
