//! `nilm` command-line tool: convert or generate datasets, compute
//! statistics, train and run the CO disaggregator, and evaluate estimates.
//!
//! Exit codes: 0 success, 1 I/O error, 2 validation error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nilm_core::datastore::{self, DatasetHandle, StreamKey};
use nilm_core::disagg::{self, TrainConfig};
use nilm_core::elec::{self, MeterGroup, SelectionQuery};
use nilm_core::error::Error;
use nilm_core::metrics::{self, MetricsConfig};
use nilm_core::pipeline::{
    self, ClipNode, DropoutNode, GoodSectionsNode, HistogramNode, HourlyNode, Node, NodeResult,
    TotalEnergyNode,
};
use nilm_core::stats::{
    DEFAULT_ENTROPY_BIN_W, DEFAULT_MAX_POWER_W, DEFAULT_ON_THRESHOLD_W, DEFAULT_SWITCH_BUCKET_S,
};
use nilm_core::timeframe::TimeFrame;

#[derive(Parser)]
#[command(name = "nilm", version, about = "Out-of-core NILM toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import an external dataset into the native format
    Convert {
        #[command(subcommand)]
        format: ConvertFormat,
    },
    /// Generate a deterministic synthetic dataset with ground truth
    Synth(SynthArgs),
    /// Compute NILM statistics for one building
    Stats(StatsArgs),
    /// Train the combinatorial-optimisation disaggregator
    Train(TrainArgs),
    /// Disaggregate mains into per-appliance estimate streams
    Disaggregate(DisaggArgs),
    /// Evaluate estimate streams against ground truth
    Metrics(MetricsArgs),
}

#[derive(Subcommand)]
enum ConvertFormat {
    /// REDD-style layout: channel_<M>.dat files plus labels.dat
    Redd {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        dest: PathBuf,
        /// JSON mapping config (labels, site channels, timezone)
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generation spec
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    dest: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    building: u32,
    /// selection query, e.g. "category=lighting" or "type=fridge"
    #[arg(long)]
    select: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    chunk_rows: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ON_THRESHOLD_W)]
    on_threshold_w: f64,
    #[arg(long, default_value_t = DEFAULT_SWITCH_BUCKET_S)]
    switch_bucket_s: f64,
    #[arg(long, default_value_t = DEFAULT_ENTROPY_BIN_W)]
    entropy_bin_w: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    building: u32,
    /// model file to write
    #[arg(long)]
    out: PathBuf,
    /// first fraction of the mains timeframe used for training
    #[arg(long, default_value_t = 0.5)]
    train_frac: f64,
    #[arg(long, default_value_t = 3)]
    k_max: usize,
    #[arg(long, default_value_t = 5.0)]
    min_state_w: f64,
    #[arg(long, default_value_t = 1_000_000)]
    combination_limit: u64,
    #[arg(long)]
    chunk_rows: Option<usize>,
}

#[derive(Args)]
struct DisaggArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    building: u32,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    run_id: String,
    /// disaggregate the whole stream instead of only the held-out test span
    #[arg(long)]
    all: bool,
    #[arg(long)]
    force: bool,
    #[arg(long)]
    chunk_rows: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// dataset mode: evaluate a run across buildings
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// comma-separated building list; default: all with the run present
    #[arg(long)]
    buildings: Option<String>,
    /// standalone mode: a single estimate stream ...
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// ... compared against a single truth stream
    #[arg(long)]
    truth: Option<PathBuf>,
    /// report JSON path; tables are printed to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// also write the per-appliance table as CSV next to the JSON
    #[arg(long)]
    csv: bool,
    #[arg(long, default_value_t = 10.0)]
    period_s: f64,
    #[arg(long, default_value_t = 30.0)]
    max_sample_period_s: f64,
    #[arg(long, default_value_t = DEFAULT_ON_THRESHOLD_W)]
    on_threshold_w: f64,
    /// per-building worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    chunk_rows: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            if validation_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn validation_error(e: &anyhow::Error) -> bool {
    match e.downcast_ref::<Error>() {
        Some(err) => err.is_validation(),
        None => true,
    }
}

fn report_error(e: &anyhow::Error) {
    // precondition violations carry a JSON report; emit it as-is
    if let Some(Error::Preconditions(json)) = e.downcast_ref::<Error>() {
        eprintln!("{{\"error\":\"preconditions\",\"violations\":{json}}}");
        return;
    }
    eprintln!("{{\"error\":{}}}", serde_json::json!(format!("{e:#}")));
}

fn chunk_rows_or_default(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("NILM_CHUNK_ROWS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(datastore::DEFAULT_CHUNK_ROWS)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Convert { format } => match format {
            ConvertFormat::Redd {
                source,
                dest,
                mapping,
                force,
            } => cmd_convert_redd(&source, &dest, mapping.as_deref(), force),
        },
        Command::Synth(args) => cmd_synth(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Train(args) => cmd_train(args),
        Command::Disaggregate(args) => cmd_disaggregate(args),
        Command::Metrics(args) => cmd_metrics(args),
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::Error::new(Error::io(path, e)))?;
    let value = serde_json::from_str(&text)
        .map_err(|e| anyhow::Error::new(Error::Invalid(format!("{}: {e}", path.display()))))?;
    Ok(value)
}

fn cmd_convert_redd(
    source: &Path,
    dest: &Path,
    mapping: Option<&Path>,
    force: bool,
) -> anyhow::Result<()> {
    let mapping = match mapping {
        Some(p) => read_json_file(p)?,
        None => nilm_core::convert::ReddMapping::default(),
    };
    let report = nilm_core::convert::convert_redd(source, dest, &mapping, force)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec: nilm_core::convert::SynthSpec = read_json_file(&args.spec)?;
    nilm_core::convert::generate_synthetic(&spec, &args.dest, args.force)?;
    log::info!(
        "generated {} buildings under {}",
        spec.n_buildings,
        args.dest.display()
    );
    Ok(())
}

fn building_group(
    handle: &DatasetHandle,
    building: u32,
    select: Option<&str>,
) -> anyhow::Result<MeterGroup> {
    let group = MeterGroup::of_building(handle, building)?;
    match select {
        Some(q) => {
            let query = SelectionQuery::parse(q)?;
            Ok(group.select(&query)?)
        }
        None => Ok(group),
    }
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let handle = datastore::open_dataset(&args.dataset)?;
    let chunk_rows = chunk_rows_or_default(args.chunk_rows);
    let building = handle.meta().building(args.building)?.clone();
    let full_group = MeterGroup::of_building(&handle, args.building)?;
    let group = building_group(&handle, args.building, args.select.as_deref())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut per_meter = BTreeMap::new();
    for meter in &group.meters {
        log::info!(
            "building {} meter {}: running statistics pipeline",
            args.building,
            meter.meta.instance
        );
        let chunks = handle.load(
            &meter.key(),
            datastore::LoadParams::with_chunk_rows(chunk_rows),
        )?;
        let mut nodes: Vec<Box<dyn Node>> = vec![
            Box::new(ClipNode::new(DEFAULT_MAX_POWER_W)),
            Box::new(GoodSectionsNode::new(meter.meta.max_sample_period_s)),
            Box::new(TotalEnergyNode::new(meter.meta.max_sample_period_s)),
            Box::new(DropoutNode::new(meter.meta.sample_period_s)),
            Box::new(HourlyNode::new(&building.timezone)),
            Box::new(HistogramNode::new("entropy_histogram", args.entropy_bin_w)),
        ];
        let results = pipeline::run(&pipeline::source_requirements(), chunks, &mut nodes, None)?;
        let mut meter_json = serde_json::Map::new();
        if let Some(NodeResult::Energy(e)) = results.get("total_energy") {
            meter_json.insert(
                "total_energy".into(),
                serde_json::json!({"kwh": e.kwh(), "uptime_s": e.uptime_s()}),
            );
        }
        if let Some(NodeResult::GoodSections(g)) = results.get("good_sections") {
            let sections: Vec<serde_json::Value> = g
                .sections()
                .iter()
                .map(|s| serde_json::json!({"start": s.start, "end": s.end}))
                .collect();
            meter_json.insert("good_sections".into(), serde_json::json!(sections));
        }
        if let Some(NodeResult::Dropout(d)) = results.get("dropout") {
            meter_json.insert(
                "dropout_rate".into(),
                match d.rate() {
                    Ok(r) => serde_json::json!(r),
                    Err(_) => serde_json::Value::Null,
                },
            );
        }
        if let Some(NodeResult::Hourly(h)) = results.get("hourly") {
            meter_json.insert(
                "hourly_median_w".into(),
                serde_json::json!(h.per_hour(nilm_core::stats::HourlyStatistic::Median)),
            );
            meter_json.insert(
                "hourly_mean_w".into(),
                serde_json::json!(h.per_hour(nilm_core::stats::HourlyStatistic::Mean)),
            );
        }
        if let Some(NodeResult::Histogram(h)) = results.get("entropy_histogram") {
            meter_json.insert(
                "entropy_bits".into(),
                match h.entropy_bits() {
                    Ok(b) => serde_json::json!(b),
                    Err(_) => serde_json::Value::Null,
                },
            );
        }
        per_meter.insert(
            meter.meta.instance.to_string(),
            serde_json::Value::Object(meter_json),
        );
    }

    let (submetered, clamped) = match full_group.proportion_of_energy_submetered() {
        Ok((p, warned)) => (Some(p), warned),
        Err(_) => (None, false),
    };
    let energy_per_category = full_group.submeters()?.energy_per_category()?;
    let submeters = group
        .submeters()
        .unwrap_or_else(|_| MeterGroup { meters: vec![] });
    let switch_group = if submeters.is_empty() {
        &group
    } else {
        &submeters
    };
    let switches =
        switch_group.switch_histogram(args.on_threshold_w, args.switch_bucket_s, chunk_rows)?;

    // pairwise correlation over the selected submeters
    let mut correlations = Vec::new();
    for (i, a) in switch_group.meters.iter().enumerate() {
        for b in switch_group.meters.iter().skip(i + 1) {
            let r = elec::correlation(
                a,
                b,
                a.meta.sample_period_s.max(b.meta.sample_period_s),
                chunk_rows,
            )
            .ok();
            correlations.push(serde_json::json!({
                "meter_a": a.meta.instance,
                "meter_b": b.meta.instance,
                "pearson_r": r,
            }));
        }
    }

    let stats_json = serde_json::json!({
        "dataset": handle.meta().name,
        "building": args.building,
        "select": args.select,
        "meters": per_meter,
        "proportion_of_energy_submetered": submetered,
        "proportion_clamped": clamped,
        "energy_per_category_kwh": energy_per_category,
        "simultaneous_switches": {
            "bucket_s": switches.bucket_s,
            "on_threshold_w": switches.on_threshold_w,
            "buckets_by_switch_count": switches.buckets_by_switch_count,
        },
        "correlations": correlations,
    });
    let out_json = args.out.join("stats.json");
    fs::write(&out_json, serde_json::to_string_pretty(&stats_json)?)
        .map_err(|e| Error::io(&out_json, e))?;

    write_stats_csvs(&args.out, &stats_json)?;
    log::info!("wrote {}", out_json.display());
    Ok(())
}

/// One plot-ready CSV per statistic.
fn write_stats_csvs(out: &Path, stats: &serde_json::Value) -> anyhow::Result<()> {
    let write = |name: &str, content: String| -> anyhow::Result<()> {
        let p = out.join(name);
        fs::write(&p, content).map_err(|e| anyhow::Error::new(Error::io(&p, e)))
    };

    let mut energy = String::from("meter,kwh\n");
    let mut hourly = String::from("meter,hour,median_w,mean_w\n");
    let mut dropout = String::from("meter,dropout_rate\n");
    let mut entropy = String::from("meter,entropy_bits\n");
    let mut sections = String::from("meter,start,end\n");
    if let Some(meters) = stats["meters"].as_object() {
        for (m, v) in meters {
            if let Some(kwh) = v["total_energy"]["kwh"].as_f64() {
                energy.push_str(&format!("{m},{kwh}\n"));
            }
            if let Some(r) = v["dropout_rate"].as_f64() {
                dropout.push_str(&format!("{m},{r}\n"));
            }
            if let Some(b) = v["entropy_bits"].as_f64() {
                entropy.push_str(&format!("{m},{b}\n"));
            }
            if let (Some(med), Some(mean)) = (
                v["hourly_median_w"].as_array(),
                v["hourly_mean_w"].as_array(),
            ) {
                for h in 0..24 {
                    hourly.push_str(&format!(
                        "{m},{h},{},{}\n",
                        med[h].as_f64().map_or(String::new(), |x| x.to_string()),
                        mean[h].as_f64().map_or(String::new(), |x| x.to_string()),
                    ));
                }
            }
            if let Some(secs) = v["good_sections"].as_array() {
                for s in secs {
                    sections.push_str(&format!(
                        "{m},{},{}\n",
                        s["start"].as_f64().unwrap_or_default(),
                        s["end"].as_f64().unwrap_or_default()
                    ));
                }
            }
        }
    }
    write("total_energy.csv", energy)?;
    write("hourly.csv", hourly)?;
    write("dropout.csv", dropout)?;
    write("entropy.csv", entropy)?;
    write("good_sections.csv", sections)?;

    let mut cat = String::from("category,kwh\n");
    if let Some(map) = stats["energy_per_category_kwh"].as_object() {
        for (k, v) in map {
            cat.push_str(&format!("{k},{}\n", v.as_f64().unwrap_or_default()));
        }
    }
    write("energy_per_category.csv", cat)?;

    let mut sw = String::from("switch_count,buckets\n");
    if let Some(arr) = stats["simultaneous_switches"]["buckets_by_switch_count"].as_array() {
        for (i, v) in arr.iter().enumerate() {
            sw.push_str(&format!("{i},{}\n", v.as_u64().unwrap_or_default()));
        }
    }
    write("simultaneous_switches.csv", sw)?;

    let mut corr = String::from("meter_a,meter_b,pearson_r\n");
    if let Some(arr) = stats["correlations"].as_array() {
        for c in arr {
            corr.push_str(&format!(
                "{},{},{}\n",
                c["meter_a"],
                c["meter_b"],
                c["pearson_r"]
                    .as_f64()
                    .map_or(String::new(), |x| x.to_string())
            ));
        }
    }
    write("correlation.csv", corr)?;
    Ok(())
}

fn mains_timeframe(handle: &DatasetHandle, building: u32) -> anyhow::Result<TimeFrame> {
    let bmeta = handle.meta().building(building)?;
    let mains = bmeta.mains_meters()?;
    let frame = handle
        .stream_timeframe(&StreamKey::raw(building, mains[0]))?
        .ok_or_else(|| Error::Invalid(format!("building {building}: mains stream is empty")))?;
    Ok(frame)
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(Error::Invalid("train_frac must be in (0,1)".into()).into());
    }
    let handle = datastore::open_dataset(&args.dataset)?;
    let frame = mains_timeframe(&handle, args.building)?;
    let (train_frame, _) = frame.split_at_fraction(args.train_frac);
    let group = MeterGroup::of_building(&handle, args.building)?;
    let submeters = group.submeters()?;
    let sample_period = group
        .mains()?
        .meters
        .first()
        .map(|m| m.meta.sample_period_s)
        .unwrap_or(10.0);
    let config = TrainConfig {
        k_max: args.k_max,
        min_state_w: args.min_state_w,
        combination_limit: args.combination_limit,
    };
    log::info!(
        "training on building {} over {} appliances, timeframe {}",
        args.building,
        submeters.len(),
        train_frame
    );
    let model = disagg::train(&submeters, train_frame, sample_period, &config)?;
    disagg::save_model(&model, &args.out)?;
    log::info!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_disaggregate(args: DisaggArgs) -> anyhow::Result<()> {
    let handle = datastore::open_dataset(&args.dataset)?;
    let chunk_rows = chunk_rows_or_default(args.chunk_rows);
    let model = disagg::load_model(&args.model)?;

    let run_dir = args
        .dataset
        .join(format!("building{}", args.building))
        .join("estimates")
        .join(&args.run_id);
    if run_dir.exists() {
        if !args.force {
            return Err(Error::Invalid(format!(
                "run {:?} already exists for building {}; pass --force to overwrite",
                args.run_id, args.building
            ))
            .into());
        }
        fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    }

    let mains = MeterGroup::of_building(&handle, args.building)?.mains()?;
    let sections = if args.all {
        None
    } else {
        let frame = mains_timeframe(&handle, args.building)?;
        let test = TimeFrame::new(model.train_timeframe.end.min(frame.end - 1e-9), frame.end);
        Some(vec![test])
    };
    let keys = disagg::disaggregate(&mains, &model, &handle, &args.run_id, chunk_rows, sections)?;
    log::info!(
        "wrote {} estimate streams under {}",
        keys.len(),
        run_dir.display()
    );
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> anyhow::Result<()> {
    let config = MetricsConfig {
        period_s: args.period_s,
        max_sample_period_s: args.max_sample_period_s,
        on_threshold_w: args.on_threshold_w,
        chunk_rows: chunk_rows_or_default(args.chunk_rows),
    };
    match (&args.dataset, &args.estimate, &args.truth) {
        (None, Some(est), Some(truth)) => {
            let acc = metrics::compare_streams(est, truth, &config)?;
            if acc.n == 0 {
                return Err(Error::Invalid("streams share no aligned samples".into()).into());
            }
            let (f1, precision, recall) = acc.f1()?;
            let report = serde_json::json!({
                "n_pairs": acc.n,
                "f1": f1,
                "precision": precision,
                "recall": recall,
                "error_total_energy_kwh": acc.error_total_energy_kwh()?,
                "mean_abs_error_w": acc.mean_abs_error_w()?,
                "rms_error_w": acc.rms_error_w()?,
                "estimate_kwh": acc.estimate_kwh(),
                "truth_kwh": acc.truth_kwh(),
            });
            let text = serde_json::to_string_pretty(&report)?;
            match &args.out {
                Some(p) => fs::write(p, &text).map_err(|e| Error::io(p, e))?,
                None => println!("{text}"),
            }
            Ok(())
        }
        (Some(dataset), None, None) => {
            let run_id = args
                .run_id
                .clone()
                .ok_or_else(|| Error::Invalid("--run-id is required in dataset mode".into()))?;
            let handle = datastore::open_dataset(dataset)?;
            let buildings: Vec<u32> = match &args.buildings {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Invalid(format!("bad building id {s:?}")))
                    })
                    .collect::<Result<_, _>>()?,
                None => handle.meta().buildings.iter().map(|b| b.instance).collect(),
            };
            let report = evaluate_parallel(&handle, &run_id, &buildings, &config, args.jobs)?;
            let any_ok = report.buildings.iter().any(|b| b.error.is_none());
            if !any_ok {
                return Err(Error::Invalid(format!(
                    "no building produced metrics for run {run_id:?}; run `nilm disaggregate` first"
                ))
                .into());
            }
            print_report_tables(&report);
            if let Some(p) = &args.out {
                fs::write(p, serde_json::to_string_pretty(&report)?)
                    .map_err(|e| Error::io(p, e))?;
                if args.csv {
                    let csv_path = p.with_extension("csv");
                    fs::write(&csv_path, report_csv(&report))
                        .map_err(|e| Error::io(&csv_path, e))?;
                }
            }
            Ok(())
        }
        _ => Err(Error::Invalid(
            "use either --dataset with --run-id, or --estimate with --truth".into(),
        )
        .into()),
    }
}

/// Per-building evaluation fanned out over `jobs` threads; output order is
/// the requested building order regardless of completion order.
fn evaluate_parallel(
    handle: &DatasetHandle,
    run_id: &str,
    buildings: &[u32],
    config: &MetricsConfig,
    jobs: usize,
) -> anyhow::Result<metrics::MetricReport> {
    if jobs <= 1 || buildings.len() <= 1 {
        return Ok(metrics::evaluate(handle, run_id, buildings, config)?);
    }
    let chunk_len = buildings.len().div_ceil(jobs);
    let partials: Vec<nilm_core::Result<metrics::MetricReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = buildings
            .chunks(chunk_len)
            .map(|chunk| s.spawn(move || metrics::evaluate(handle, run_id, chunk, config)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    // stitch the partial reports back together in request order, then rebuild
    // the aggregate rows over the combined building list
    let mut all: Vec<metrics::BuildingReport> = Vec::new();
    for p in partials {
        all.extend(p?.buildings);
    }
    Ok(metrics::MetricReport::from_buildings(run_id, all))
}

fn print_report_tables(report: &metrics::MetricReport) {
    println!("run: {}", report.run_id);
    println!("building,meter,label,f1,precision,recall,mae_w,rmse_w,energy_err_kwh");
    for b in &report.buildings {
        if let Some(e) = &b.error {
            println!("{},-,-,error: {e}", b.building);
            continue;
        }
        for (m, a) in &b.appliances {
            println!(
                "{},{},{},{:.4},{:.4},{:.4},{:.3},{:.3},{:.6}",
                b.building,
                m,
                a.label,
                a.f1,
                a.precision,
                a.recall,
                a.mean_abs_error_w,
                a.rms_error_w,
                a.error_total_energy_kwh
            );
        }
    }
    println!();
    println!("metric,mean,min,max");
    for (k, v) in &report.aggregate {
        println!("{k},{:.6},{:.6},{:.6}", v.mean, v.min, v.max);
    }
}

fn report_csv(report: &metrics::MetricReport) -> String {
    let mut out = String::from(
        "building,meter,label,n_pairs,f1,precision,recall,mean_abs_error_w,rms_error_w,error_total_energy_kwh,estimate_kwh,truth_kwh\n",
    );
    for b in &report.buildings {
        for (m, a) in &b.appliances {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                b.building,
                m,
                a.label,
                a.n_pairs,
                a.f1,
                a.precision,
                a.recall,
                a.mean_abs_error_w,
                a.rms_error_w,
                a.error_total_energy_kwh,
                a.estimate_kwh,
                a.truth_kwh
            ));
        }
    }
    out
}
