//! `deltahands` command-line front end.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use deltahands::characterize::{
    force_fit, kinematics_mae, reference_sweep, read_force_log, read_pose_log, render_sweep, sweep_report,
    CharacterizeError,
};
use deltahands::config::{ConfigError, HandConfig, TopologySpec, SCHEMA_VERSION};
use deltahands::grasp::{sample_grasps, GraspError, ObjectModel, SamplingConfig};
use deltahands::hand::{build_synergy, hand_workspace, Hand, HandError, WorkspaceOptions};
use deltahands::teleop::{read_stream, write_commands, Calibration, Mapping, RateLimit, Teleop, TeleopError};
use deltahands::urdf::{generate_for, UrdfOptions};
use deltahands::Point3;
use serde::Serialize;
use serde_json::json;

#[derive(Debug)]
enum CliError {
    /// Bad input: exit code 1.
    Invalid(String),
    /// Filesystem or stream failure: exit code 2.
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<HandError> for CliError {
    fn from(e: HandError) -> Self {
        invalid(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        if e.is_io() { CliError::Io(e.to_string()) } else { invalid(e) }
    }
}

impl From<GraspError> for CliError {
    fn from(e: GraspError) -> Self {
        invalid(e)
    }
}

impl From<TeleopError> for CliError {
    fn from(e: TeleopError) -> Self {
        match e {
            TeleopError::Io(_) => CliError::Io(e.to_string()),
            _ => invalid(e),
        }
    }
}

impl From<CharacterizeError> for CliError {
    fn from(e: CharacterizeError) -> Self {
        invalid(e)
    }
}

#[derive(Parser)]
#[command(name = "deltahands", version, about = "Design, analyse and drive linear-Delta robot hands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct HandArg {
    /// Hand document (JSON). Defaults to the built-in 4-finger, 9-actuator hand.
    #[arg(long)]
    hand: Option<PathBuf>,
}

impl HandArg {
    fn config(&self) -> Result<HandConfig> {
        match &self.hand {
            Some(p) => Ok(HandConfig::load(p)?),
            None => Ok(HandConfig::default()),
        }
    }

    fn build(&self) -> Result<Hand> {
        Ok(self.config()?.build()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fingertip positions for a reduced actuation.
    Fk {
        #[command(flatten)]
        hand: HandArg,
        /// Comma-separated reduced actuation in mm, or "home".
        #[arg(long, default_value = "home")]
        actuation: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Reduced actuation for fingertip targets.
    Ik {
        #[command(flatten)]
        hand: HandArg,
        /// JSON file: a list of points or {"targets": [...]}.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Per-finger workspace lattice and hand bounding box.
    Workspace {
        #[command(flatten)]
        hand: HandArg,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        voxel: f64,
        /// Also write every lattice sample as CSV.
        #[arg(long)]
        csv: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Expansion and projection matrices for a coupling.
    Synergy {
        #[command(flatten)]
        hand: HandArg,
        /// Preset ("12", "9", "5", "center", ...) or a JSON topology file.
        #[arg(long)]
        topology: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Pre-grasp sampling study on one object.
    Grasp {
        #[command(flatten)]
        hand: HandArg,
        /// Object JSON, or a mesh (.off / .obj) replaced by its convex hull.
        #[arg(long)]
        object: PathBuf,
        #[arg(long, default_value_t = 20000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        heights: usize,
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
        #[arg(long)]
        threads: Option<usize>,
        /// Report directory (aggregate.json + samples.csv), or "-" for the aggregate on stdout.
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// URDF plus closure sidecar.
    Urdf {
        #[command(flatten)]
        hand: HandArg,
        /// URDF path; the sidecar goes next to it as <stem>.sidecar.json. "-" prints the URDF.
        #[arg(long, default_value = "-")]
        out: String,
        /// Explicit sidecar path.
        #[arg(long)]
        sidecar: Option<String>,
    },
    /// Characterisation pipelines over recorded logs.
    Characterize {
        #[command(subcommand)]
        which: Characterize,
    },
    /// Replay a recorded operator stream through a teleoperation mapping.
    TeleopReplay {
        #[command(flatten)]
        hand: HandArg,
        /// JSON-lines pose stream.
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_enum, default_value_t = MappingName::Polar)]
        mapping: MappingName,
        /// Calibration JSON.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Fingertip speed limit (mm/s).
        #[arg(long, default_value_t = 100.0)]
        max_speed: f64,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Run the HTTP + WebSocket service.
    Serve {
        #[command(flatten)]
        hand: HandArg,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum Characterize {
    /// Kinematic MAE of a pose log against the model.
    Mae {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        hand: HandArg,
        /// Finger whose geometry models the log.
        #[arg(long, default_value_t = 0)]
        finger: usize,
        /// Per-row errors as CSV.
        #[arg(long)]
        errors_csv: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Force-versus-advance fits; each file is tagged by its stem.
    Force {
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Workspace volume over base radius 15/20/25 by link length 35/45/55.
    Sweep {
        #[arg(long, default_value_t = 5)]
        grid: usize,
        /// Print a table instead of JSON.
        #[arg(long)]
        table: bool,
        #[arg(long, default_value = "-")]
        out: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MappingName {
    Direct,
    Principal,
    Polar,
}

fn open_out(out: &str) -> Result<Box<dyn Write>> {
    if out == "-" {
        Ok(Box::new(io::stdout().lock()))
    } else {
        let p = Path::new(out);
        let f = File::create(p).map_err(|e| io_err(p, e))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn write_bytes(out: &str, bytes: &[u8]) -> Result<()> {
    let mut w = open_out(out)?;
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| io_err(Path::new(out), e))
}

fn write_json<T: Serialize>(out: &str, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(invalid)?;
    s.push('\n');
    write_bytes(out, s.as_bytes())
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| io_err(p, e))
}

fn open_in(p: &Path) -> Result<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|e| io_err(p, e))
}

fn parse_actuation(s: &str, hand: &Hand) -> Result<Vec<f64>> {
    if s.trim() == "home" {
        return Ok(hand.home_reduced());
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad actuation value {t:?}"))))
        .collect()
}

fn parse_targets(text: &str) -> Result<Vec<Point3>> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(invalid)?;
    let list = v.get("targets").cloned().unwrap_or(v);
    serde_json::from_value(list).map_err(|e| invalid(format!("targets: {e}")))
}

fn cmd_fk(hand: &HandArg, actuation: &str, out: &str) -> Result<()> {
    let hand = hand.build()?;
    let a = hand.check_reduced(&parse_actuation(actuation, &hand)?)?;
    let fingertips = hand.fk(&a)?;
    let full = hand.expand(&a)?;
    write_json(out, &json!({
        "schema_version": SCHEMA_VERSION,
        "reduced_actuation": a,
        "full_actuation": full,
        "fingertips": fingertips,
    }))
}

fn cmd_ik(hand: &HandArg, targets: &Path, out: &str) -> Result<()> {
    let hand = hand.build()?;
    let targets = parse_targets(&read_text(targets)?)?;
    let ik = hand.ik(&targets)?;
    let full = hand.expand(&ik.a_reduced)?;
    write_json(out, &json!({
        "schema_version": SCHEMA_VERSION,
        "reduced_actuation": ik.a_reduced,
        "full_actuation": full,
        "residuals": ik.residual,
    }))
}

fn cmd_workspace(hand: &HandArg, grid: usize, voxel: f64, csv_out: Option<&str>, out: &str) -> Result<()> {
    let hand = hand.build()?;
    let ws = hand_workspace(&hand, &WorkspaceOptions { grid, voxel_size: voxel, ..Default::default() })?;
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(open_out(path)?);
        let to_io = |e: csv::Error| io_err(Path::new(path), e);
        w.write_record(["finger", "a1", "a2", "a3", "reachable", "x", "y", "z"]).map_err(to_io)?;
        for f in &ws.fingers {
            for s in &f.grid.samples {
                let a = s.actuation.to_array();
                let (ok, p) = match s.position {
                    Some(p) => ("true", [p.x, p.y, p.z].map(|v| v.to_string())),
                    None => ("false", [String::new(), String::new(), String::new()]),
                };
                let mut rec = vec![f.finger.to_string(), a[0].to_string(), a[1].to_string(), a[2].to_string(), ok.into()];
                rec.extend(p);
                w.write_record(&rec).map_err(to_io)?;
            }
        }
        w.flush().map_err(|e| io_err(Path::new(path), e))?;
    }
    let fingers: Vec<_> = ws
        .fingers
        .iter()
        .map(|f| json!({ "finger": f.finger, "actuators": f.actuators, "reachable": f.grid.reachable_count, "samples": f.grid.samples.len() }))
        .collect();
    let extents = ws.bbox.map(|b| b.max - b.min);
    write_json(out, &json!({
        "schema_version": SCHEMA_VERSION,
        "grid": grid,
        "bbox": ws.bbox,
        "extents": extents,
        "fingers": fingers,
        "voxel_size": ws.voxel_size,
        "overlaps": ws.overlaps,
    }))
}

fn cmd_synergy(hand: &HandArg, topology: Option<&str>, out: &str) -> Result<()> {
    let cfg = hand.config()?;
    let spec = match topology {
        None => cfg.topology.clone(),
        Some(t) if Path::new(t).extension().is_some_and(|e| e == "json") => {
            serde_json::from_str::<TopologySpec>(&read_text(Path::new(t))?).map_err(invalid)?
        }
        Some(t) => TopologySpec::Preset(t.to_string()),
    };
    let topo = spec.resolve(cfg.params.n_fingers)?;
    let maps = build_synergy(&cfg.params, &topo)?;
    let pc = &maps.projection * &maps.expansion;
    let id = pc
        .iter()
        .enumerate()
        .map(|(i, v)| (v - if i % pc.nrows() == i / pc.nrows() { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    write_json(out, &json!({
        "schema_version": SCHEMA_VERSION,
        "n_fingers": cfg.params.n_fingers,
        "n_links": topo.n_links(),
        "n_reduced": topo.n_reduced,
        "link_to_actuator": topo.link_to_actuator,
        "actuator_to_links": topo.actuator_to_links,
        "expansion": maps.expansion.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "projection": maps.projection.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "validation": { "valid": true, "max_abs_pc_minus_identity": id },
    }))
}

fn load_object(p: &Path) -> Result<ObjectModel> {
    match p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("off") | Some("obj") => ObjectModel::from_mesh_file(p).map_err(|e| {
            if matches!(e, deltahands::grasp::MeshFileError::Io(_)) { io_err(p, e) } else { invalid(e) }
        }),
        _ => serde_json::from_str(&read_text(p)?).map_err(|e| invalid(format!("object: {e}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_grasp(hand: &HandArg, object: &Path, samples: usize, seed: u64, heights: usize, mu: f64, threads: Option<usize>, out: &str) -> Result<()> {
    let hand = hand.build()?;
    let object = load_object(object)?.prepare()?;
    if samples == 0 || heights == 0 {
        return Err(invalid("samples and heights must be positive"));
    }
    let cfg = SamplingConfig { n_samples: samples, seed, n_heights: heights, mu, threads, ..SamplingConfig::default() };
    let study = sample_grasps(&hand, &object, &cfg)?;
    if out == "-" {
        return write_json(out, &study.aggregate);
    }
    let dir = Path::new(out);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(dir.join("aggregate.json").to_str().ok_or_else(|| invalid("non UTF-8 path"))?, &study.aggregate)?;
    let csv_path = dir.join("samples.csv");
    let f = File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    study.write_csv(BufWriter::new(f)).map_err(|e| io_err(&csv_path, e))
}

fn sidecar_path(out: &str) -> String {
    let p = Path::new(out);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("hand");
    p.with_file_name(format!("{stem}.sidecar.json")).to_string_lossy().into_owned()
}

fn cmd_urdf(hand: &HandArg, out: &str, sidecar: Option<&str>) -> Result<()> {
    let hand = hand.build()?;
    let gen = generate_for(&hand, &UrdfOptions::default());
    write_bytes(out, gen.urdf.as_bytes())?;
    let side = match (sidecar, out) {
        (Some(s), _) => Some(s.to_string()),
        (None, "-") => None,
        (None, o) => Some(sidecar_path(o)),
    };
    if let Some(s) = side {
        let mut text = gen.sidecar_json();
        text.push('\n');
        write_bytes(&s, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_characterize(which: &Characterize) -> Result<()> {
    match which {
        Characterize::Mae { input, hand, finger, errors_csv, out } => {
            let cfg = hand.config()?;
            let geom = cfg
                .params
                .fingers
                .get(*finger)
                .ok_or_else(|| invalid(format!("finger {finger} out of range")))?;
            let rows = read_pose_log(open_in(input)?)?;
            let report = kinematics_mae(&rows, geom)?;
            if let Some(path) = errors_csv {
                report.write_errors_csv(open_out(path)?)?;
            }
            let mut summary = report.clone();
            summary.errors.clear();
            write_json(out, &summary)
        }
        Characterize::Force { input, out } => {
            let mut groups = Vec::new();
            for p in input {
                let tag = p.file_stem().and_then(|s| s.to_str()).unwrap_or("log").to_string();
                groups.push((tag, read_force_log(open_in(p)?)?));
            }
            write_json(out, &force_fit(&groups)?)
        }
        Characterize::Sweep { grid, table, out } => {
            if *grid < 2 {
                return Err(invalid("grid must be at least 2"));
            }
            let rows = sweep_report(&reference_sweep(), *grid)?;
            if *table {
                write_bytes(out, render_sweep(&rows).as_bytes())
            } else {
                write_json(out, &rows)
            }
        }
    }
}

fn cmd_teleop(hand: &HandArg, stream: &Path, mapping: MappingName, calibration: Option<&Path>, max_speed: f64, out: &str) -> Result<()> {
    let hand = hand.build()?;
    let calib = match calibration {
        Some(p) => serde_json::from_str::<Calibration>(&read_text(p)?).map_err(|e| invalid(format!("calibration: {e}")))?,
        None => Calibration::default(),
    };
    if !(max_speed > 0.0) {
        return Err(invalid("max-speed must be positive"));
    }
    let mapping = match mapping {
        MappingName::Direct => Mapping::Direct,
        MappingName::Principal => Mapping::principal_xy(),
        MappingName::Polar => Mapping::Polar,
    };
    let samples = read_stream(open_in(stream)?)?;
    let teleop = Teleop::new(hand, calib)?;
    let cmds = teleop.replay(&samples, &mapping, RateLimit { max_speed })?;
    let w = open_out(out)?;
    write_commands(&cmds, w)?;
    Ok(())
}

fn cmd_serve(hand: &HandArg, host: &str, port: u16) -> Result<()> {
    let cfg = hand.config()?;
    cfg.build()?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(deltahands_service::serve(host, port, cfg)).map_err(|e| match e {
        deltahands_service::ServeError::Io(e) => CliError::Io(e.to_string()),
        deltahands_service::ServeError::Config(e) => invalid(e),
    })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fk { hand, actuation, out } => cmd_fk(hand, actuation, out),
        Command::Ik { hand, targets, out } => cmd_ik(hand, targets, out),
        Command::Workspace { hand, grid, voxel, csv, out } => cmd_workspace(hand, *grid, *voxel, csv.as_deref(), out),
        Command::Synergy { hand, topology, out } => cmd_synergy(hand, topology.as_deref(), out),
        Command::Grasp { hand, object, samples, seed, heights, mu, threads, out } => {
            cmd_grasp(hand, object, *samples, *seed, *heights, *mu, *threads, out)
        }
        Command::Urdf { hand, out, sidecar } => cmd_urdf(hand, out, sidecar.as_deref()),
        Command::Characterize { which } => cmd_characterize(which),
        Command::TeleopReplay { hand, stream, mapping, calibration, max_speed, out } => {
            cmd_teleop(hand, stream, *mapping, calibration.as_deref(), *max_speed, out)
        }
        Command::Serve { hand, host, port } => cmd_serve(hand, host, *port),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
