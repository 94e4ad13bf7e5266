use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ibrkit::clustering::{assign, build_features, ClusterModel};
use ibrkit::dataset::{
    generate, log_space, read_csv_path, sample_profile, write_csv_path, AdmittanceSample, GridSpec,
    Role, CSV_HEADER,
};
use ibrkit::fnn::{self, FnnModel, FnnSpec, Metrics, TrainConfig, OUTPUT_DIM};
use ibrkit::ibr::{Catalog, InverterKind, OperatingPoint};

use crate::store::{report_writer, Store};

/// Frequency bands of the evaluation report, Hz. Upper bounds are
/// exclusive except for the last.
pub const BANDS: [(&str, f64, f64); 3] = [
    ("low", 1.0, 10.0),
    ("mid", 10.0, 60.0),
    ("high", 60.0, 200.0),
];

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct GenerateArgs {
    pub role: Role,
    pub catalog: Option<PathBuf>,
    pub ibrs: Vec<String>,
    pub out: Option<PathBuf>,
}

pub fn generate_cmd(store: &Store, args: GenerateArgs) -> Result<()> {
    let (catalog, catalog_path) = match &args.catalog {
        Some(path) => {
            let c = Catalog::load(path)?;
            c.save(&store.catalog_path())?;
            (c, path.clone())
        }
        None => (store.catalog()?, store.catalog_path()),
    };
    let ibrs = if args.ibrs.is_empty() {
        match args.role {
            Role::Train => catalog.training_set(),
            Role::Test => catalog.ibrs.clone(),
        }
    } else {
        args.ibrs
            .iter()
            .map(|name| {
                catalog.get(name).cloned().with_context(|| {
                    format!(
                        "unknown IBR `{name}`: not in catalog {}",
                        catalog_path.display()
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let out = args
        .out
        .unwrap_or_else(|| store.dataset_path(&args.role.to_string()));
    let t0 = Instant::now();
    let samples = generate(&ibrs, &GridSpec::for_role(args.role))?;
    write_csv_path(&out, &samples)?;
    println!(
        "{} rows ({} IBRs, {} grid) -> {} in {:.1?}",
        samples.len(),
        ibrs.len(),
        args.role,
        out.display(),
        t0.elapsed()
    );
    Ok(())
}

pub fn cluster_cmd(
    store: &Store,
    train: Option<PathBuf>,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<()> {
    let path = train.unwrap_or_else(|| store.dataset_path("train"));
    let samples =
        read_csv_path(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let features = build_features(&samples, &GridSpec::training())?;
    let model = ClusterModel::fit(&features, k_min..=k_max, seed)?;
    model.save(&store.cluster_model_path())?;

    let report = model.selection.as_ref().expect("fit records the selection");
    let mut w = report_writer(&store.report_path("k_selection.csv"), seed)?;
    w.write_record([
        "k",
        "inertia",
        "inertia_drop",
        "silhouette",
        "silhouette_rank",
        "drop_rank",
        "average_rank",
        "selected",
    ])?;
    for s in &report.scores {
        w.write_record([
            s.k.to_string(),
            fmt_float(s.inertia),
            fmt_float(s.inertia_drop),
            fmt_float(s.silhouette),
            s.silhouette_rank.to_string(),
            s.drop_rank.to_string(),
            fmt_float(s.average_rank),
            (s.k == report.best_k).to_string(),
        ])?;
    }
    w.flush()?;

    let mut summary = format!("seed {seed}\nk* = {}\n", model.k);
    for c in 0..model.k {
        summary += &format!("cluster {c}: {}\n", model.members(c).join(", "));
    }
    fs::write(store.report_path("cluster.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Network preset for each cluster: FNN1 for clusters led by grid-forming
/// devices, then FNN2 and FNN3 for the rest in index order.
pub fn presets(model: &ClusterModel, catalog: &Catalog) -> Vec<&'static str> {
    let mut next = ["FNN2", "FNN3"].into_iter();
    (0..model.k)
        .map(|c| {
            let members = model.members(c);
            let gfmi = members
                .iter()
                .filter(|name| {
                    catalog
                        .get(name)
                        .map_or(name.starts_with("GFMI"), |p| p.kind == InverterKind::Gfmi)
                })
                .count();
            if !members.is_empty() && 2 * gfmi > members.len() {
                "FNN1"
            } else {
                next.next().unwrap_or("FNN3")
            }
        })
        .collect()
}

pub struct TrainArgs {
    pub cluster: Option<usize>,
    pub train: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

type OpKey = (String, [u64; 3]);

fn op_key(ibr: &str, v: f64, p: f64, q: f64) -> OpKey {
    (ibr.to_string(), [v, p, q].map(|x| (x + 0.0).to_bits()))
}

pub fn train_cmd(store: &Store, args: TrainArgs, seed: u64) -> Result<()> {
    let model = store.cluster_model()?;
    let catalog = store.catalog()?;
    let path = args.train.unwrap_or_else(|| store.dataset_path("train"));
    let samples =
        read_csv_path(&path).with_context(|| format!("cannot read {}", path.display()))?;

    let row_cluster: HashMap<OpKey, usize> = model
        .row_labels
        .iter()
        .zip(&model.labels)
        .map(|(r, &c)| (op_key(&r.ibr, r.v, r.p, r.q), c))
        .collect();
    let mut by_cluster: Vec<Vec<AdmittanceSample>> = vec![Vec::new(); model.k];
    for s in samples {
        if let Some(&c) = row_cluster.get(&op_key(&s.ibr, s.v, s.p, s.q)) {
            by_cluster[c].push(s);
        }
    }

    let cfg = TrainConfig {
        max_epochs: args.epochs.unwrap_or(TrainConfig::default().max_epochs),
        batch_size: args.batch_size.unwrap_or(TrainConfig::default().batch_size),
        learning_rate: args
            .learning_rate
            .unwrap_or(TrainConfig::default().learning_rate),
        seed,
        ..TrainConfig::default()
    };
    let presets = presets(&model, &catalog);
    let targets: Vec<usize> = match args.cluster {
        Some(c) if c >= model.k => bail!("cluster {c} does not exist (k = {})", model.k),
        Some(c) => vec![c],
        None => (0..model.k).collect(),
    };
    for c in targets {
        let rows = &by_cluster[c];
        if rows.is_empty() {
            eprintln!("warning: cluster {c} has no training rows, skipped");
            continue;
        }
        let t0 = Instant::now();
        let spec = FnnSpec::preset(presets[c]).expect("known preset");
        let net = fnn::train(&fnn::init(&spec, seed)?, rows, &cfg)
            .with_context(|| format!("training cluster {c}"))?;
        net.save(&store.fnn_path(c))?;
        let mut w = report_writer(&store.report_path(&format!("loss_{c}.csv")), seed)?;
        w.write_record(["epoch", "loss"])?;
        for (e, loss) in net.history.iter().enumerate() {
            w.write_record([e.to_string(), fmt_float(*loss)])?;
        }
        w.flush()?;
        println!(
            "cluster {c}: {} {:?}, {} rows, final loss {:.3e}, {:.1?}",
            presets[c],
            spec.hidden,
            rows.len(),
            net.history.last().copied().unwrap_or(f64::NAN),
            t0.elapsed()
        );
    }
    Ok(())
}

/// Reads `f_hz,g_dd,b_dd` rows and returns `(f, |Y_dd|)`.
pub fn read_measurement(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["f_hz", "g_dd", "b_dd"] {
        bail!(
            "{}: header must be `f_hz,g_dd,b_dd`, found `{}`",
            path.display(),
            header.join(",")
        );
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().with_context(|| {
                format!(
                    "{}: row {}: bad number `{}`",
                    path.display(),
                    i + 1,
                    &rec[j]
                )
            })
        };
        out.push((num(0)?, num(1)?.hypot(num(2)?)));
    }
    Ok(out)
}

pub fn assign_cmd(
    store: &Store,
    measurement: &Path,
    name: Option<String>,
    seed: u64,
) -> Result<()> {
    let model = store.cluster_model()?;
    let points = read_measurement(measurement)?;
    let result = assign(&points, &model)?;
    let name = match name {
        Some(n) => n,
        None => measurement
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .context("measurement path has no file name")?,
    };
    let mut w = report_writer(&store.report_path(&format!("assign_{name}.csv")), seed)?;
    w.write_record(["cluster", "distance", "selected"])?;
    for (c, d) in result.distances.iter().enumerate() {
        w.write_record([
            c.to_string(),
            fmt_float(*d),
            (c == result.cluster).to_string(),
        ])?;
        println!("d_{c} = {d:.4}");
    }
    w.flush()?;
    let mut a = store.assignments()?;
    a.clusters.insert(name.clone(), result.cluster);
    store.save_assignments(&a)?;
    println!(
        "{name} -> cluster {} ({})",
        result.cluster,
        model.members(result.cluster).join(", ")
    );
    Ok(())
}

/// Parses `x` or `start:stop:step` into grid values `start + k*step`.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad range `{text}`"))?;
    match parts[..] {
        [x] => Ok(vec![x]),
        [start, stop, step] if step > 0.0 && stop >= start => {
            let n = ((stop - start) / step).round();
            if ((start + n * step) - stop).abs() > 1e-9 * step.max(1.0) {
                bail!("range `{text}`: step does not divide the interval");
            }
            // rounding keeps decimal grids on the nearest f64
            Ok((0..=n as i64)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12 + 0.0)
                .collect())
        }
        _ => bail!("range `{text}`: expected `x` or `start:stop:step` with step > 0"),
    }
}

pub struct PredictArgs {
    pub cluster: usize,
    pub v: String,
    pub p: String,
    pub q: String,
    pub f_min: f64,
    pub f_max: f64,
    pub n_freq: usize,
    pub out: Option<PathBuf>,
    pub compare: Option<String>,
}

fn write_rows(
    path: &Path,
    seed: u64,
    label: &str,
    source: &str,
    rows: &[([f64; 4], [f64; OUTPUT_DIM])],
) -> Result<()> {
    let mut w = report_writer(path, seed)?;
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    header.push("source");
    w.write_record(&header)?;
    for (x, y) in rows {
        let mut rec = vec![label.to_string()];
        rec.extend(x.iter().chain(y).map(|v| fmt_float(*v)));
        rec.push(source.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn predict_cmd(store: &Store, args: PredictArgs, seed: u64) -> Result<()> {
    let model = store.cluster_model()?;
    let net = store.fnn(args.cluster, &model)?;
    let freqs = log_space(args.f_min, args.f_max, args.n_freq);
    if args.n_freq == 0 || !(args.f_min > 0.0 && args.f_max >= args.f_min) {
        bail!("frequency range must satisfy 0 < f_min <= f_max with n_freq >= 1");
    }
    let reference = match &args.compare {
        Some(name) => {
            let catalog = store.catalog()?;
            let p = catalog.get(name).cloned().with_context(|| {
                format!(
                    "unknown IBR `{name}`: not in catalog {}",
                    store.catalog_path().display()
                )
            })?;
            Some(p)
        }
        None => None,
    };

    let mut predicted = Vec::new();
    let mut errors = Vec::new();
    for &v in &parse_range(&args.v)? {
        for &p in &parse_range(&args.p)? {
            for &q in &parse_range(&args.q)? {
                let op = OperatingPoint::new(v, p, q)?;
                if !op.is_feasible() {
                    eprintln!("warning: skipping infeasible operating point {op}");
                    continue;
                }
                let truth = match &reference {
                    Some(params) => Some(sample_profile(params, &op, &freqs)?),
                    None => None,
                };
                for (i, &f) in freqs.iter().enumerate() {
                    let y = net.predict(v, p, q, f)?;
                    predicted.push(([v, p, q, f], y));
                    if let Some(t) = &truth {
                        errors.push(([v, p, q, f], std::array::from_fn(|c| y[c] - t[i].y[c])));
                    }
                }
            }
        }
    }
    let label = format!("cluster_{}", args.cluster);
    let out = args
        .out
        .unwrap_or_else(|| store.report_path(&format!("predict_{}.csv", args.cluster)));
    write_rows(&out, seed, &label, "predicted", &predicted)?;
    println!("{} rows -> {}", predicted.len(), out.display());
    if let Some(name) = &args.compare {
        let stem = out
            .file_stem()
            .map_or("predict".into(), |s| s.to_string_lossy());
        let err_path = out.with_file_name(format!("{stem}_error_{name}.csv"));
        write_rows(&err_path, seed, &label, "error", &errors)?;
        println!("{} rows -> {}", errors.len(), err_path.display());
    }
    Ok(())
}

fn band_of(f: f64) -> usize {
    BANDS
        .iter()
        .position(|&(_, _, hi)| f < hi)
        .unwrap_or(BANDS.len() - 1)
}

pub fn eval_cmd(store: &Store, test: Option<PathBuf>, seed: u64) -> Result<()> {
    let model = store.cluster_model()?;
    let assigned = store.assignments()?;
    let path = test.unwrap_or_else(|| store.dataset_path("test"));
    let samples =
        read_csv_path(&path).with_context(|| format!("cannot read {}", path.display()))?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, [Vec<AdmittanceSample>; 3]> = HashMap::new();
    for s in samples {
        let g = groups.entry(s.ibr.clone()).or_insert_with(|| {
            order.push(s.ibr.clone());
            Default::default()
        });
        g[band_of(s.f)].push(s);
    }
    let mut nets: BTreeMap<usize, FnnModel> = BTreeMap::new();
    let mut w = report_writer(&store.report_path("eval.csv"), seed)?;
    w.write_record([
        "ibr",
        "cluster",
        "band",
        "n",
        "mse",
        "rmse_std_max",
        "worst_abs_error",
        "worst_channel",
        "worst_f_hz",
    ])?;
    let mut summary = format!("seed {seed}\n");
    for ibr in &order {
        let cluster = match model.ibr_majority.get(ibr).or(assigned.clusters.get(ibr)) {
            Some(&c) => c,
            None => bail!(
                "IBR `{ibr}` was not in the training data; run `ibrkit assign --ibr {ibr}` with its measurement first"
            ),
        };
        if !nets.contains_key(&cluster) {
            nets.insert(cluster, store.fnn(cluster, &model)?);
        }
        let net = &nets[&cluster];
        for (b, rows) in groups[ibr].iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let m: Metrics = fnn::evaluate(net, rows)?;
            let rmse_max = m.rmse_standardized.iter().copied().fold(0.0, f64::max);
            w.write_record([
                ibr.clone(),
                cluster.to_string(),
                BANDS[b].0.to_string(),
                m.n.to_string(),
                fmt_float(m.mse),
                fmt_float(rmse_max),
                fmt_float(m.worst.abs_error),
                m.worst.channel.to_string(),
                fmt_float(m.worst.f),
            ])?;
            summary += &format!(
                "{ibr:>6} cluster {cluster} {:>4}: mse {:.3e}, max rmse {:.3}\n",
                BANDS[b].0, m.mse, rmse_max
            );
        }
    }
    w.flush()?;
    fs::write(store.report_path("eval.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
