use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sah::bench::{self, gen_synth, ExperimentConfig, Method, SynthConfig};
use sah::index::{SahConfig, SahIndex};
use sah::io as vio;
use sah::sa_alsh::{SaAlshConfig, SaAlshIndex};
use sah::vector::{brute_force_kmips, normalize_users};

#[derive(Parser)]
#[command(
    name = "sah",
    about = "Reverse top-k maximum inner product search with shifting-aware asymmetric hashing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct IndexParams {
    /// Largest k the index will answer.
    #[arg(long, default_value_t = 50)]
    k_max: usize,
    /// Norm band interval ratio, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    b: f64,
    /// Hash tables per band (K).
    #[arg(long = "tables", default_value_t = 128)]
    tables: usize,
    /// Hash bits per table (L), at most 32.
    #[arg(long = "bits", default_value_t = 8)]
    bits: usize,
    /// Cone-tree leaf size (N0).
    #[arg(long = "n0", default_value_t = 20)]
    n0: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Lower-bound prefix holds prefix_factor * k_max top-norm items.
    #[arg(long, default_value_t = 10)]
    prefix_factor: usize,
    /// Multi-probe Hamming radius.
    #[arg(long, default_value_t = 1)]
    probe_radius: usize,
    /// Verification candidates (k is added on top): per band for
    /// decisions, a total across bands for standalone kMIPS.
    #[arg(long, default_value_t = 500)]
    budget: usize,
}

impl IndexParams {
    fn to_config(&self) -> SahConfig {
        SahConfig {
            k_max: self.k_max,
            n0: self.n0,
            b: self.b,
            tables: self.tables,
            bits: self.bits,
            seed: self.seed,
            prefix_factor: self.prefix_factor,
            probe_radius: self.probe_radius,
            budget: self.budget,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic item/user/query instance as fbin files.
    Gen {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        m: usize,
        #[arg(long, default_value_t = 50)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 4.0)]
        norm_spread: f64,
        /// Directory receiving items.fbin, users.fbin, queries.fbin.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert between vector file formats (fbin, csv, fvecs input; fbin, csv output).
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Treat the first CSV column as an id when reading.
        #[arg(long, default_value_t = false)]
        csv_ids: bool,
    },
    /// Build a SAH index from item and user files.
    Build {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: IndexParams,
    },
    /// Compute exact reverse top-k ground truth as JSON.
    Truth {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run reverse top-k queries against a saved index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: usize,
        /// JSON output: query id -> sorted user ids.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build-and-evaluate experiment over methods and k values.
    Eval {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5, 10])]
        ks: Vec<usize>,
        /// Comma-separated methods: sah, exact, brute.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["sah".to_string(), "exact".to_string()])]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Summary table destination.
        #[arg(long)]
        csv: PathBuf,
        /// Optional per-query JSON report.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        params: IndexParams,
    },
    /// Parameter grid over b, K (tables), N0 and k; one CSV row per cell.
    Sweep {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long = "b-list", value_delimiter = ',', default_values_t = vec![0.5])]
        b_list: Vec<f64>,
        #[arg(long = "tables-list", value_delimiter = ',', default_values_t = vec![128])]
        tables_list: Vec<usize>,
        #[arg(long = "n0-list", value_delimiter = ',', default_values_t = vec![20])]
        n0_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10])]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        csv: PathBuf,
        #[command(flatten)]
        params: IndexParams,
    },
    /// Standalone SA-ALSH top-k inner product search for each user vector.
    Kmips {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        k: usize,
        /// JSON output: user id -> top-k item ids in score order.
        #[arg(long)]
        out: PathBuf,
        /// Also run brute force and print mean recall and timing.
        #[arg(long, default_value_t = false)]
        compare_brute: bool,
        #[command(flatten)]
        params: IndexParams,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen {
            n,
            m,
            d,
            clusters,
            queries,
            seed,
            norm_spread,
            out_dir,
        } => {
            let cfg = SynthConfig {
                n,
                m,
                d,
                clusters,
                queries,
                seed,
                norm_spread,
            };
            cfg.validate().context("invalid gen parameters")?;
            let (items, users, query_set) = gen_synth(&cfg)?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            vio::write_fbin(&out_dir.join("items.fbin"), &items)?;
            vio::write_fbin(&out_dir.join("users.fbin"), &users)?;
            vio::write_fbin(&out_dir.join("queries.fbin"), &query_set)?;
            println!(
                "wrote {} items, {} users, {} queries (d={d}) to {}",
                items.len(),
                users.len(),
                query_set.len(),
                out_dir.display()
            );
        }
        Command::Convert {
            input,
            output,
            csv_ids,
        } => {
            let set = match input.extension().and_then(|e| e.to_str()) {
                Some("csv") => vio::read_csv(&input, csv_ids)?,
                _ => vio::read_vectors(&input)?,
            };
            match output.extension().and_then(|e| e.to_str()) {
                Some("fbin") => vio::write_fbin(&output, &set)?,
                Some("csv") => vio::write_csv(&output, &set, csv_ids)?,
                other => bail!("--output: unsupported extension {other:?} (fbin or csv)"),
            }
            println!(
                "converted {} vectors (d={}) to {}",
                set.len(),
                set.dim(),
                output.display()
            );
        }
        Command::Build {
            items,
            users,
            out,
            params,
        } => {
            let cfg = params.to_config();
            cfg.validate().context("invalid index parameters")?;
            let items = vio::read_vectors(&items)?;
            let users = vio::read_vectors(&users)?;
            let start = Instant::now();
            let idx = SahIndex::build(&items, &users, cfg)?;
            let build_secs = start.elapsed().as_secs_f64();
            idx.save(&out)?;
            println!(
                "built index over {} items, {} users ({} dropped) in {:.3}s -> {}",
                idx.item_count(),
                idx.user_count(),
                idx.dropped_users(),
                build_secs,
                out.display()
            );
        }
        Command::Truth {
            items,
            users,
            queries,
            k,
            out,
        } => {
            if k == 0 {
                bail!("--k: must be at least 1");
            }
            let items = vio::read_vectors(&items)?;
            let users = vio::read_vectors(&users)?;
            let queries = vio::read_vectors(&queries)?;
            let results = bench::exact_truth(&items, &users, &queries, k)?;
            vio::write_truth(&out, &vio::truth_from_results(&results))?;
            println!("wrote truth for {} queries to {}", results.len(), out.display());
        }
        Command::Query {
            index,
            queries,
            k,
            out,
        } => {
            if k == 0 {
                bail!("--k: must be at least 1");
            }
            let idx = SahIndex::load(&index)?;
            let queries = vio::read_vectors(&queries)?;
            let start = Instant::now();
            let mut results = Vec::with_capacity(queries.len());
            for q in queries.vectors() {
                results.push(idx.query(q, k)?);
            }
            let total = start.elapsed().as_secs_f64();
            vio::write_truth(&out, &vio::truth_from_results(&results))?;
            println!(
                "answered {} queries in {:.3}s ({:.6}s/query) -> {}",
                results.len(),
                total,
                total / results.len().max(1) as f64,
                out.display()
            );
        }
        Command::Eval {
            items,
            users,
            queries,
            ks,
            methods,
            trials,
            csv,
            json,
            params,
        } => {
            let cfg = ExperimentConfig {
                sah: params.to_config(),
                ks,
                methods: methods
                    .iter()
                    .map(|s| Method::parse(s))
                    .collect::<Result<_, _>>()?,
                trials,
            };
            cfg.sah.validate().context("invalid index parameters")?;
            let items = vio::read_vectors(&items)?;
            let users = vio::read_vectors(&users)?;
            let queries = vio::read_vectors(&queries)?;
            let reports = bench::run_experiment(&items, &users, &queries, &cfg)?;
            write_csv_report(&csv, &reports)?;
            if let Some(json_path) = json {
                let mut w = BufWriter::new(File::create(&json_path)?);
                serde_json::to_writer_pretty(&mut w, &reports)?;
                w.flush()?;
            }
            for r in &reports {
                println!(
                    "{} k={}: mean F1 {:.4}, mean query {:.6}s, build {:.3}s",
                    r.method, r.k, r.mean_f1, r.mean_query_secs, r.build_secs
                );
            }
        }
        Command::Sweep {
            items,
            users,
            queries,
            b_list,
            tables_list,
            n0_list,
            ks,
            trials,
            csv,
            params,
        } => {
            let items = vio::read_vectors(&items)?;
            let users = vio::read_vectors(&users)?;
            let queries = vio::read_vectors(&queries)?;
            let mut w = BufWriter::new(
                File::create(&csv).with_context(|| format!("creating {}", csv.display()))?,
            );
            writeln!(
                w,
                "b,tables,n0,k,mean_f1,median_f1,mean_query_secs,p95_query_secs,build_secs"
            )?;
            for &b in &b_list {
                for &tables in &tables_list {
                    for &n0 in &n0_list {
                        let mut sah_cfg = params.to_config();
                        sah_cfg.b = b;
                        sah_cfg.tables = tables;
                        sah_cfg.n0 = n0;
                        sah_cfg.validate().with_context(|| {
                            format!("invalid sweep cell b={b} tables={tables} n0={n0}")
                        })?;
                        let cfg = ExperimentConfig {
                            sah: sah_cfg,
                            ks: ks.clone(),
                            methods: vec![Method::Sah],
                            trials,
                        };
                        let reports = bench::run_experiment(&items, &users, &queries, &cfg)?;
                        for r in &reports {
                            writeln!(
                                w,
                                "{b},{tables},{n0},{},{:.6},{:.6},{:.9},{:.9},{:.6}",
                                r.k,
                                r.mean_f1,
                                r.median_f1,
                                r.mean_query_secs,
                                r.p95_query_secs,
                                r.build_secs
                            )?;
                            println!(
                                "b={b} tables={tables} n0={n0} k={}: mean F1 {:.4}, mean query {:.6}s",
                                r.k, r.mean_f1, r.mean_query_secs
                            );
                        }
                    }
                }
            }
            w.flush()?;
        }
        Command::Kmips {
            items,
            users,
            k,
            out,
            compare_brute,
            params,
        } => {
            if k == 0 {
                bail!("--k: must be at least 1");
            }
            let sa_cfg: SaAlshConfig = params.to_config().sa_alsh();
            sa_cfg.validate().context("invalid index parameters")?;
            let items = vio::read_vectors(&items)?;
            let raw_users = vio::read_vectors(&users)?;
            let (unit_users, dropped) = normalize_users(&raw_users);
            if dropped > 0 {
                eprintln!("note: dropped {dropped} zero-norm users");
            }
            let start = Instant::now();
            let idx = SaAlshIndex::build(&items, sa_cfg)?;
            let build_secs = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let mut out_map: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for u in unit_users.vectors() {
                let top = idx.kmips(u, k)?;
                out_map.insert(u.id, top.into_iter().map(|(id, _)| id).collect());
            }
            let query_secs = start.elapsed().as_secs_f64() / unit_users.len().max(1) as f64;
            vio::write_truth(&out, &out_map)?;
            println!(
                "kmips over {} users in {:.6}s/query (build {:.3}s) -> {}",
                unit_users.len(),
                query_secs,
                build_secs,
                out.display()
            );
            if compare_brute {
                let start = Instant::now();
                let mut recall_sum = 0.0;
                for u in unit_users.vectors() {
                    let truth = brute_force_kmips(u, &items, k)?;
                    let got = &out_map[&u.id];
                    let hits = truth
                        .iter()
                        .filter(|(id, _)| got.contains(id))
                        .count();
                    recall_sum += hits as f64 / truth.len().max(1) as f64;
                }
                let brute_secs = start.elapsed().as_secs_f64() / unit_users.len().max(1) as f64;
                println!(
                    "mean recall {:.4} vs brute force ({:.6}s/query brute)",
                    recall_sum / unit_users.len().max(1) as f64,
                    brute_secs
                );
            }
        }
    }
    Ok(())
}

fn write_csv_report(path: &Path, reports: &[bench::EvalReport]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    bench::write_report_csv(&mut w, reports)?;
    w.flush()?;
    Ok(())
}
