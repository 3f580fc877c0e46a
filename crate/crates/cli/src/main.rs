use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use asmfield::energy::sweep;
use asmfield::grid::GridLayout;
use asmfield::scenes::{self, PegHoleSpec};
use asmfield::trajectory::{self, Trajectory};
use asmfield::{
    build_affinity_grid, load_mesh, save_mesh, wrench, AffinityGrid, KernelParams, PosePair,
    RigidTransform, Scene, SessionSettings, Solid, SweepAxis, TriMesh, Vec3,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

mod serve;

/// Skeletal density fields and guidance wrenches for peg-in-hole assembly.
#[derive(Parser, Debug)]
#[command(name = "asmfield", version)]
struct Cli {
    /// Worker threads for field builds and lattice sums (0 = all cores).
    #[arg(long, global = true, env = "ASMFIELD_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the peg and block meshes of a scene as OBJ.
    Generate(GenerateArgs),
    /// Sample a part's field on a grid and save it.
    Precompute(PrecomputeArgs),
    /// Energy, force and torque at one pose, as JSON.
    Eval(EvalArgs),
    /// Score over a lattice of pose offsets, as CSV.
    Sweep(SweepArgs),
    /// Write a scripted proxy trajectory.
    Trajectory(TrajectoryArgs),
    /// Replay a trajectory through the coupling loop, as CSV.
    Trace(TraceArgs),
    /// Serve interactive sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct SceneArgs {
    /// Scene description file (key = value lines).
    #[arg(long, env = "ASMFIELD_SCENE", conflicts_with = "example")]
    scene: Option<PathBuf>,
    /// Built-in scene: 1 circular, 2 rectangular, 3 combined.
    #[arg(long, env = "ASMFIELD_EXAMPLE", value_parser = clap::value_parser!(u8).range(1..=3))]
    example: Option<u8>,
}

impl SceneArgs {
    fn spec(&self) -> Result<PegHoleSpec, CliError> {
        match (&self.scene, self.example) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
                Ok(scenes::parse_spec(&text, &path.display().to_string())?)
            }
            (None, Some(i)) => Ok(scenes::example(i as usize)),
            (None, None) => Ok(scenes::example(1)),
        }
    }
}

#[derive(Args, Debug)]
struct KernelArgs {
    #[arg(long, env = "ASMFIELD_SIGMA", default_value_t = 0.3)]
    sigma: f64,
    /// Weight of the exterior side of the kernel.
    #[arg(long, env = "ASMFIELD_LAMBDA1", default_value_t = 1.0)]
    lambda1: f64,
    /// Weight of the interior side of the kernel.
    #[arg(long, env = "ASMFIELD_LAMBDA2", default_value_t = 3.0)]
    lambda2: f64,
    /// Shell width in units of |xi|; defaults to 3.4 sigma.
    #[arg(long, env = "ASMFIELD_EPSILON")]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output file; standard output when omitted.
    #[arg(long, env = "ASMFIELD_OUT")]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, env = "ASMFIELD_FORCE")]
    force: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Directory that receives peg.obj and block.obj.
    #[arg(long, env = "ASMFIELD_OUT")]
    out: PathBuf,
    #[arg(long, env = "ASMFIELD_FORCE")]
    force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Peg,
    Block,
}

#[derive(Args, Debug)]
struct PrecomputeArgs {
    /// Mesh file (OBJ or STL).
    #[arg(long, env = "ASMFIELD_MESH", conflicts_with_all = ["scene", "example"])]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
    /// Which part of the scene to sample when no mesh is given.
    #[arg(long, value_enum, default_value_t = Part::Peg)]
    part: Part,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Node spacing; by default 32 nodes along the longest axis.
    #[arg(long, env = "ASMFIELD_SPACING")]
    spacing: Option<f64>,
    /// Field file to write.
    #[arg(long, env = "ASMFIELD_OUT")]
    out: PathBuf,
    #[arg(long, env = "ASMFIELD_FORCE")]
    force: bool,
}

#[derive(Args, Debug)]
struct FieldArgs {
    /// Field of the fixed part, then of the moving part.
    #[arg(
        long = "field",
        env = "ASMFIELD_FIELD",
        num_args = 1,
        value_delimiter = ',',
        required = true
    )]
    fields: Vec<PathBuf>,
    /// Meshes the fields were built from, same order; checked against the stored hash.
    #[arg(
        long = "mesh",
        env = "ASMFIELD_MESH",
        num_args = 1,
        value_delimiter = ','
    )]
    meshes: Vec<PathBuf>,
    /// Energy scale.
    #[arg(long, env = "ASMFIELD_GAMMA", default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    fields: FieldArgs,
    /// Moving part pose in the fixed part's frame: tx,ty,tz,rx,ry,rz (rotation vector).
    #[arg(
        long,
        env = "ASMFIELD_POSE",
        value_delimiter = ',',
        num_args = 1,
        allow_hyphen_values = true
    )]
    pose: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    fields: FieldArgs,
    /// One or two of x1 x2 x3 r1 r2 r3.
    #[arg(long, env = "ASMFIELD_AXIS", value_delimiter = ',', required = true)]
    axis: Vec<String>,
    /// Half-range per axis (length units or radians); one value applies to all axes.
    #[arg(long, env = "ASMFIELD_RANGE", value_delimiter = ',', required = true)]
    range: Vec<f64>,
    /// Samples per axis.
    #[arg(long, env = "ASMFIELD_STEPS", default_value_t = 21)]
    steps: usize,
    #[arg(
        long,
        env = "ASMFIELD_POSE",
        value_delimiter = ',',
        num_args = 1,
        allow_hyphen_values = true
    )]
    pose: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum TrajectoryKind {
    Snap,
    Collision,
}

#[derive(Args, Debug)]
struct TrajectoryArgs {
    #[arg(long, value_enum)]
    kind: TrajectoryKind,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, env = "ASMFIELD_SEED", default_value_t = 1)]
    seed: u64,
    /// Number of pushes in a collision trajectory.
    #[arg(long, default_value_t = 4)]
    pushes: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    Default,
    Snap,
    Collision,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    fields: FieldArgs,
    /// Trajectory CSV: time_s,tx,ty,tz,rx,ry,rz.
    #[arg(long, env = "ASMFIELD_TRAJECTORY")]
    trajectory: PathBuf,
    /// Coupling preset.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// JSON session settings laid over the preset.
    #[arg(long, env = "ASMFIELD_SESSION")]
    session: Option<PathBuf>,
    #[arg(long, env = "ASMFIELD_TICK_RATE")]
    tick_rate: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    fields: FieldArgs,
    #[arg(long, env = "ASMFIELD_PORT", default_value_t = 8765)]
    port: u16,
    #[arg(long, env = "ASMFIELD_TICK_RATE", default_value_t = 250.0)]
    tick_rate: f64,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Exit after this many sessions have ended.
    #[arg(long)]
    max_sessions: Option<usize>,
}

/// Error with its exit-code class.
#[derive(Debug)]
enum CliError {
    Validation(anyhow::Error),
    Io(anyhow::Error),
    Config(anyhow::Error),
}

impl CliError {
    fn io(context: String, e: std::io::Error) -> Self {
        CliError::Io(anyhow::Error::new(e).context(context))
    }

    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(anyhow::anyhow!(msg.into()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<asmfield::Error> for CliError {
    fn from(e: asmfield::Error) -> Self {
        use asmfield::Error as E;
        match e {
            E::Io(_) | E::PathIo { .. } | E::FieldFormat(_) => CliError::Io(e.into()),
            E::Parse { .. } | E::InvalidParameter(_) | E::Protocol(_) => CliError::Config(e.into()),
            _ => CliError::Validation(e.into()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (CliError::Validation(e) | CliError::Io(e) | CliError::Config(e)) = self;
        write!(f, "{e:#}")
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Precompute(a) => precompute(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Trace(a) => trace(a),
        Command::Serve(a) => serve(a),
    }
}

fn check_writable(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Io(anyhow::anyhow!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

/// Writes to `--out` or standard output.
fn emit(out: &OutArgs, text: &str) -> Result<(), CliError> {
    match &out.out {
        Some(p) => {
            check_writable(p, out.force)?;
            fs::write(p, text).map_err(|e| CliError::io(format!("writing {}", p.display()), e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("writing standard output".into(), e)),
    }
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let spec = a.scene.spec()?;
    let (peg, block) = scenes::generate_pair(&spec)?;
    fs::create_dir_all(&a.out)
        .map_err(|e| CliError::io(format!("creating {}", a.out.display()), e))?;
    for (name, mesh) in [("peg.obj", &peg), ("block.obj", &block)] {
        let path = a.out.join(name);
        check_writable(&path, a.force)?;
        save_mesh(mesh, &path)?;
        eprintln!("wrote {} ({} faces)", path.display(), mesh.face_count());
    }
    Ok(())
}

fn kernel_params(k: &KernelArgs) -> Result<KernelParams, CliError> {
    Ok(KernelParams::new(k.sigma, k.lambda1, k.lambda2, k.epsilon)?)
}

fn precompute(a: PrecomputeArgs) -> Result<(), CliError> {
    check_writable(&a.out, a.force)?;
    let params = kernel_params(&a.kernel)?;
    let mesh: TriMesh = match &a.mesh {
        Some(p) => load_mesh(p)?,
        None => {
            let (peg, block) = scenes::generate_pair(&a.scene.spec()?)?;
            if a.part == Part::Peg {
                peg
            } else {
                block
            }
        }
    };
    let spacing = a
        .spacing
        .unwrap_or_else(|| GridLayout::spacing_for(&mesh.bounds(), 32));
    let solid = Solid::new(mesh)?;
    let started = Instant::now();
    let grid = build_affinity_grid(&solid, &params, spacing)?;
    let elapsed = started.elapsed();
    grid.save(&a.out)?;
    let [nx, ny, nz] = grid.dims();
    println!(
        "{} nodes ({nx}x{ny}x{nz}, spacing {spacing:.6}, {} flagged) in {:.2} s -> {}",
        nx * ny * nz,
        grid.flagged_count(),
        elapsed.as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn load_fields(
    f: &FieldArgs,
) -> Result<(AffinityGrid, AffinityGrid, Option<(TriMesh, TriMesh)>), CliError> {
    if f.fields.len() != 2 {
        return Err(CliError::config(format!(
            "expected two --field values (fixed, moving), got {}",
            f.fields.len()
        )));
    }
    if !(f.gamma >= 0.0 && f.gamma.is_finite()) {
        return Err(CliError::config(format!(
            "--gamma must be non-negative, got {}",
            f.gamma
        )));
    }
    let meshes = match f.meshes.len() {
        0 => None,
        2 => Some((load_mesh(&f.meshes[0])?, load_mesh(&f.meshes[1])?)),
        n => {
            return Err(CliError::config(format!(
                "expected zero or two --mesh values, got {n}"
            )))
        }
    };
    let a = AffinityGrid::load(&f.fields[0], meshes.as_ref().map(|m| &m.0))?;
    let b = AffinityGrid::load(&f.fields[1], meshes.as_ref().map(|m| &m.1))?;
    let ratio = a.spacing() / b.spacing();
    if !(0.5..=2.0).contains(&ratio) {
        log::warn!("grid spacings differ by a factor of {ratio:.2}; scores may be poorly resolved");
    }
    Ok((a, b, meshes))
}

fn parse_pose(v: &Option<Vec<f64>>) -> Result<RigidTransform, CliError> {
    match v {
        None => Ok(RigidTransform::identity()),
        Some(p) if p.len() == 6 && p.iter().all(|x| x.is_finite()) => {
            Ok(RigidTransform::from_rotation_vector(
                &Vec3::new(p[3], p[4], p[5]),
                Vec3::new(p[0], p[1], p[2]),
            ))
        }
        Some(p) => Err(CliError::config(format!(
            "--pose needs six finite numbers, got {p:?}"
        ))),
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let (fa, fb, _) = load_fields(&a.fields)?;
    let pose = PosePair::from_relative(parse_pose(&a.pose)?);
    let w = wrench(&fa, &fb, &pose, a.fields.gamma)?;
    eprintln!(
        "energy {:.6e}  force [{:.4e}, {:.4e}, {:.4e}]  torque [{:.4e}, {:.4e}, {:.4e}]",
        w.energy, w.force[0], w.force[1], w.force[2], w.torque[0], w.torque[1], w.torque[2]
    );
    let json = serde_json::to_string(&w)
        .context("serializing wrench")
        .map_err(CliError::Io)?;
    emit(&a.out, &(json + "\n"))
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let (fa, fb, _) = load_fields(&a.fields)?;
    let axes: Vec<SweepAxis> = a.axis.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let ranges: Vec<f64> = match a.range.len() {
        1 => vec![a.range[0]; axes.len()],
        n if n == axes.len() => a.range.clone(),
        n => {
            return Err(CliError::config(format!(
                "{n} ranges for {} axes",
                axes.len()
            )))
        }
    };
    if ranges.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(CliError::config("ranges must be finite and non-negative"));
    }
    let spec: Vec<(SweepAxis, f64)> = axes.into_iter().zip(ranges).collect();
    let base = PosePair::from_relative(parse_pose(&a.pose)?);
    let started = Instant::now();
    let table = sweep(&fa, &fb, &base, &spec, a.steps, a.fields.gamma)?;
    info!(
        "{} rows in {:.2} s",
        table.rows.len(),
        started.elapsed().as_secs_f64()
    );
    emit(&a.out, &table.to_csv())
}

fn cmd_trajectory(a: TrajectoryArgs) -> Result<(), CliError> {
    let spec = a.scene.spec()?;
    let t = match a.kind {
        TrajectoryKind::Snap => trajectory::snap_trajectory(&spec, a.seed),
        TrajectoryKind::Collision => trajectory::collision_trajectory(&spec, a.pushes, a.seed),
    };
    emit(&a.out, &t.to_csv())
}

fn session_settings(
    preset: Preset,
    overlay: Option<&Path>,
    gamma: f64,
) -> Result<SessionSettings, CliError> {
    let base = match preset {
        Preset::Default => SessionSettings::default(),
        Preset::Snap => trajectory::snap_settings(),
        Preset::Collision => trajectory::collision_settings(),
    };
    let base = SessionSettings {
        gamma_sc: gamma,
        ..base
    };
    match overlay {
        None => Ok(base),
        Some(p) => {
            let text =
                fs::read(p).map_err(|e| CliError::io(format!("reading {}", p.display()), e))?;
            let mut frame = (text.len() as u32).to_le_bytes().to_vec();
            frame.extend_from_slice(&text);
            Ok(asmfield::session::merge_settings(&base, &frame)?)
        }
    }
}

fn trace(a: TraceArgs) -> Result<(), CliError> {
    if let Some(p) = &a.out.out {
        check_writable(p, a.out.force)?;
    }
    let (fa, fb, _) = load_fields(&a.fields)?;
    let mut settings = session_settings(a.preset, a.session.as_deref(), a.fields.gamma)?;
    if let Some(r) = a.tick_rate {
        settings.tick_rate = r;
    }
    settings.validate()?;
    let text = fs::read_to_string(&a.trajectory)
        .map_err(|e| CliError::io(format!("reading {}", a.trajectory.display()), e))?;
    let traj = Trajectory::parse_csv(&text, &a.trajectory.display().to_string())?;
    let rows = asmfield::run_trace(&Scene::new(&fa, &fb), &settings, &traj)?;
    let mut buf = Vec::new();
    trajectory::write_trace_csv(&rows, &mut buf)?;
    emit(&a.out, std::str::from_utf8(&buf).expect("csv is ascii"))
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let (fa, fb, meshes) = load_fields(&a.fields)?;
    let mut settings = session_settings(a.preset, None, a.fields.gamma)?;
    settings.tick_rate = a.tick_rate;
    settings.validate()?;
    let objs = meshes.map(|(fixed, moving)| serve::MeshAssets::new(&fixed, &moving));
    serve::serve(&fa, &fb, &settings, objs.as_ref(), a.port, a.max_sessions)
        .map_err(|e| CliError::io(format!("serving on port {}", a.port), e))
}
