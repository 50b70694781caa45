use std::collections::BTreeMap;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use tracemax::codec::{self, CodecError, CodecProfile, TraceOption};
use tracemax::generate;
use tracemax::id_assignment::{
    assign_ids, check_reconstructible, validate, AssignmentDocument, AssignmentError, Collision, Conflict,
    IdAssignment, TracemaxId,
};
use tracemax::reconstruction::{reconstruct_all, resolve, ReconstructedPath, ReconstructionError};
use tracemax::simulator::{self, overhead_report, packet_rng, RoutesTo, RoutingPolicy, Scenario, ScenarioError};
use tracemax::topology::{PortRef, RouterId, Topology};

use crate::{Cli, Command, HexInput, ProfileArgs, Shape};

/// Process exit statuses. Clap itself exits with 2 on bad usage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Ok = 0,
    /// Invalid assignment, mismatched or ambiguous reconstruction.
    Failed = 1,
    /// Unreadable or inconsistent input file or flag.
    Input = 3,
    Malformed = 4,
    SourceRoute = 5,
    /// The automatic assignment could not be completed.
    Assignment = 6,
}

pub struct CliError {
    pub code: Code,
    pub error: anyhow::Error,
}

type Outcome = Result<u8, CliError>;

fn fail(code: Code, error: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code,
        error: error.into(),
    }
}

fn input(error: impl Into<anyhow::Error>) -> CliError {
    fail(Code::Input, error)
}

fn codec_failure(e: CodecError) -> CliError {
    let code = if e.is_source_route() {
        Code::SourceRoute
    } else {
        Code::Malformed
    };
    fail(code, e)
}

fn emit<T: Serialize>(value: &T, json: bool) -> Result<(), CliError> {
    let text = if json {
        serde_json::to_string_pretty(value).map_err(input)? + "\n"
    } else {
        serde_yaml::to_string(value).map_err(input)?
    };
    print!("{text}");
    Ok(())
}

fn status(ok: bool) -> u8 {
    if ok {
        Code::Ok as u8
    } else {
        Code::Failed as u8
    }
}

fn load_topology(path: &Path) -> Result<Topology, CliError> {
    Topology::load(path).map_err(|e| input(anyhow!("{}: {e}", path.display())))
}

fn load_assignment(path: &Path) -> Result<IdAssignment, CliError> {
    IdAssignment::load(path).map_err(|e| input(anyhow!("{}: {e}", path.display())))
}

fn read_hex(src: &HexInput) -> Result<Vec<u8>, CliError> {
    let text = match (&src.hex, &src.file) {
        (Some(h), _) => h.clone(),
        (None, Some(f)) => fs::read_to_string(f)
            .with_context(|| f.display().to_string())
            .map_err(input)?,
        (None, None) => return Err(input(anyhow!("no option bytes given"))),
    };
    codec::from_hex(&text).map_err(|e| fail(Code::Malformed, e))
}

fn checked_profile(args: &ProfileArgs, default_bit_width: u8) -> Result<CodecProfile, CliError> {
    let p = args.profile(default_bit_width);
    p.check().map_err(input)?;
    Ok(p)
}

pub fn run(cli: &Cli) -> Outcome {
    let json = cli.json;
    match &cli.command {
        Command::Generate { shape, out } => cmd_generate(shape, out.as_deref(), json),
        Command::Assign {
            topology,
            seed,
            bit_width,
            out,
        } => cmd_assign(topology, *seed, *bit_width, out.as_deref(), json),
        Command::Validate {
            topology,
            assignment,
            max_len,
        } => cmd_validate(topology, assignment, *max_len, json),
        Command::Encode {
            ids,
            sender,
            receiver,
            profile,
        } => cmd_encode(ids, *sender, *receiver, profile, json),
        Command::Decode { input, profile } => cmd_decode(input, profile, json),
        Command::Route {
            topology,
            from,
            to,
            ecmp_seed,
            packet,
        } => cmd_route(topology, *from, *to, *ecmp_seed, *packet, json),
        Command::Simulate { scenario, seed, out } => cmd_simulate(scenario, *seed, out.as_deref(), json),
        Command::Reconstruct {
            topology,
            assignment,
            receiver,
            bridge_budget,
            all,
            input,
            profile,
        } => cmd_reconstruct(topology, assignment, *receiver, *bridge_budget, *all, input, profile, json),
        Command::Overhead { sizes, profile } => cmd_overhead(sizes, profile, json),
    }
}

fn cmd_generate(shape: &Shape, out: Option<&Path>, json: bool) -> Outcome {
    let t = match *shape {
        Shape::Chain { routers } => generate::chain(routers),
        Shape::Star { leaves } => generate::star(leaves),
        Shape::Random {
            routers,
            extra_links,
            parallel_links,
            seed,
        } => {
            for p in [extra_links, parallel_links] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(input(anyhow!("probability {p} outside [0, 1]")));
                }
            }
            generate::random_connected(routers, extra_links, parallel_links, seed)
        }
    };
    match out {
        Some(path) => t.save(path).map_err(input)?,
        None => emit(&t.to_document(), json)?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct AssignSummary {
    seed: u64,
    ports: usize,
    max_id: Option<u8>,
    min_bit_width: Option<u8>,
    bit_width: u8,
    valid: bool,
    conflicts: Vec<Conflict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    written: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assignment: Option<AssignmentDocument>,
}

fn assignment_failure(e: AssignmentError) -> CliError {
    match e {
        AssignmentError::Disconnected { .. }
        | AssignmentError::NoMarkingRouters
        | AssignmentError::IdSpaceExhausted(_) => fail(Code::Assignment, e),
        other => input(other),
    }
}

fn cmd_assign(topology: &Path, seed: u64, bit_width: Option<u8>, out: Option<&Path>, json: bool) -> Outcome {
    let t = load_topology(topology)?;
    let mut a = assign_ids(&t, seed).map_err(assignment_failure)?;
    if let Some(w) = bit_width {
        a = a.with_bit_width(w).map_err(input)?;
    }
    let report = validate(&t, &a).map_err(input)?;
    if let Some(path) = out {
        a.save(path).map_err(input)?;
    }
    let summary = AssignSummary {
        seed,
        ports: a.len(),
        max_id: a.max_id().map(TracemaxId::get),
        min_bit_width: a.min_bit_width().ok(),
        bit_width: a.bit_width(),
        valid: report.is_valid(),
        conflicts: report.conflicts.clone(),
        written: out.map(Path::to_path_buf),
        assignment: out.is_none().then(|| a.to_document()),
    };
    emit(&summary, json)?;
    Ok(status(report.is_valid()))
}

#[derive(Serialize)]
struct ValidateSummary {
    valid: bool,
    bit_width: u8,
    min_bit_width: Option<u8>,
    conflicts: Vec<Conflict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    collision: Option<Collision>,
}

fn cmd_validate(topology: &Path, assignment: &Path, max_len: Option<usize>, json: bool) -> Outcome {
    let t = load_topology(topology)?;
    let a = load_assignment(assignment)?;
    let report = validate(&t, &a).map_err(|e| fail(Code::Failed, e))?;
    let collision = match max_len {
        Some(l) => check_reconstructible(&t, &a, l).map_err(input)?,
        None => None,
    };
    let ok = report.is_valid() && collision.is_none();
    emit(
        &ValidateSummary {
            valid: report.is_valid(),
            bit_width: a.bit_width(),
            min_bit_width: a.min_bit_width().ok(),
            conflicts: report.conflicts,
            max_len,
            collision,
        },
        json,
    )?;
    Ok(status(ok))
}

#[derive(Serialize)]
struct Encoded {
    hex: String,
    octets: usize,
    hop_count: usize,
    capacity: usize,
}

fn cmd_encode(
    ids: &[u8],
    sender: Option<Ipv4Addr>,
    receiver: Option<Ipv4Addr>,
    args: &ProfileArgs,
    json: bool,
) -> Outcome {
    let p = checked_profile(args, 4)?;
    let mut o = TraceOption::empty(&p);
    o.ids = ids
        .iter()
        .map(|v| TracemaxId::new(*v).ok_or_else(|| input(anyhow!("ID 0 is reserved"))))
        .collect::<Result<_, _>>()?;
    for (slot, value, name) in [(&mut o.sender, sender, "sender"), (&mut o.receiver, receiver, "receiver")] {
        if let Some(v) = value {
            match slot {
                Some(s) => *s = v,
                None => return Err(input(anyhow!("--{name} given but the profile has no {name} slot"))),
            }
        }
    }
    let bytes = codec::encode(&o, &p).map_err(codec_failure)?;
    emit(
        &Encoded {
            hex: codec::to_hex(&bytes),
            octets: bytes.len(),
            hop_count: o.hop_count(),
            capacity: p.capacity(),
        },
        json,
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct Decoded {
    option_type: String,
    option_length: u8,
    hop_count: usize,
    capacity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sender: Option<Ipv4Addr>,
    ids: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    receiver: Option<Ipv4Addr>,
}

impl Decoded {
    fn new(o: &TraceOption, p: &CodecProfile) -> Self {
        Decoded {
            option_type: format!("0x{:02x}", o.option_type()),
            option_length: o.option_length,
            hop_count: o.hop_count(),
            capacity: o.capacity(p.bit_width),
            sender: o.sender,
            ids: o.ids.iter().map(|i| i.get()).collect(),
            receiver: o.receiver,
        }
    }
}

fn cmd_decode(src: &HexInput, args: &ProfileArgs, json: bool) -> Outcome {
    let p = checked_profile(args, 4)?;
    let bytes = read_hex(src)?;
    let o = codec::decode(&bytes, &p).map_err(codec_failure)?;
    emit(&Decoded::new(&o, &p), json)?;
    Ok(0)
}

#[derive(Serialize)]
struct RouteOut {
    from: RouterId,
    to: RouterId,
    path: Vec<RouterId>,
    egress_ports: Vec<PortRef>,
}

fn cmd_route(topology: &Path, from: u32, to: u32, ecmp_seed: Option<u64>, packet: u64, json: bool) -> Outcome {
    let t = load_topology(topology)?;
    let (from, to) = (RouterId(from), RouterId(to));
    let policy = match ecmp_seed {
        Some(seed) => RoutingPolicy::EcmpRandom { seed },
        None => RoutingPolicy::ShortestPath,
    };
    let routes = RoutesTo::new(&t, to).map_err(input)?;
    let path = routes
        .route(&t, from, policy, &mut packet_rng(ecmp_seed.unwrap_or(0), packet))
        .map_err(input)?;
    let egress_ports = path
        .windows(2)
        .map(|w| simulator::egress_port(&t, w[0], w[1]).expect("routed hops are linked"))
        .collect();
    emit(
        &RouteOut {
            from,
            to,
            path,
            egress_ports,
        },
        json,
    )?;
    Ok(0)
}

#[derive(Serialize)]
struct SimulateSummary {
    packets: u64,
    delivered: u64,
    lost: u64,
    dropped: u64,
    truncated: u64,
    matched: u64,
    mismatched: u64,
    max_traced_hops: usize,
    attribution: BTreeMap<RouterId, u64>,
    true_ingress: BTreeMap<RouterId, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_mismatch: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    written: Vec<PathBuf>,
}

fn scenario_failure(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Assignment(a) => assignment_failure(a),
        other => input(other),
    }
}

fn cmd_simulate(scenario: &Path, seed: Option<u64>, out: Option<&Path>, json: bool) -> Outcome {
    let mut s = Scenario::load(scenario)
        .map_err(scenario_failure)
        .map_err(|e| CliError {
            code: e.code,
            error: e.error.context(scenario.display().to_string()),
        })?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let (records, report) = simulator::run(&s).map_err(scenario_failure)?;

    let mut written = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .with_context(|| dir.display().to_string())
            .map_err(input)?;
        let ext = if json { "json" } else { "yaml" };
        for (name, text) in [
            ("transit", render(&records, json)?),
            ("report", render(&report, json)?),
        ] {
            let path = dir.join(format!("{name}.{ext}"));
            fs::write(&path, text)
                .with_context(|| path.display().to_string())
                .map_err(input)?;
            written.push(path);
        }
    }

    let first_mismatch = report.verdicts.iter().find(|v| !v.matched).map(|v| {
        let actual = &records[v.packet_id as usize].actual_path;
        match (&v.error, &v.path) {
            (Some(e), _) => format!("packet {}: {e}", v.packet_id),
            (None, Some(p)) => format!(
                "packet {}: reconstructed {:?}, actual {:?}",
                v.packet_id,
                ids(&p.routers),
                ids(actual)
            ),
            (None, None) => format!("packet {}: no result", v.packet_id),
        }
    });
    if let Some(m) = &first_mismatch {
        eprintln!("mismatch: {m}");
    }
    emit(
        &SimulateSummary {
            packets: report.packets,
            delivered: report.delivered,
            lost: report.lost,
            dropped: report.dropped,
            truncated: report.truncated,
            matched: report.matched,
            mismatched: report.mismatched,
            max_traced_hops: report.max_traced_hops,
            attribution: report.attribution.clone(),
            true_ingress: report.true_ingress.clone(),
            first_mismatch,
            written,
        },
        json,
    )?;
    Ok(status(report.all_matched()))
}

fn ids(routers: &[RouterId]) -> Vec<u32> {
    routers.iter().map(|r| r.0).collect()
}

fn render<T: Serialize>(value: &T, json: bool) -> Result<String, CliError> {
    if json {
        serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(input)
    } else {
        serde_yaml::to_string(value).map_err(input)
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum ReconstructOut {
    Path(ReconstructedPath),
    All { paths: Vec<ReconstructedPath> },
    Error { error: ReconstructionError },
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    topology: &Path,
    assignment: &Path,
    receiver: u32,
    bridge_budget: usize,
    all: bool,
    src: &HexInput,
    args: &ProfileArgs,
    json: bool,
) -> Outcome {
    let t = load_topology(topology)?;
    let a = load_assignment(assignment)?;
    let p = checked_profile(args, a.bit_width())?;
    if p.bit_width != a.bit_width() {
        return Err(input(anyhow!(
            "--bit-width {} differs from the assignment's {}",
            p.bit_width,
            a.bit_width()
        )));
    }
    let bytes = read_hex(src)?;
    let o = codec::decode(&bytes, &p).map_err(codec_failure)?;
    let receiver = RouterId(receiver);
    if !t.contains(receiver) {
        return Err(input(ReconstructionError::UnknownReceiver(receiver)));
    }
    if all {
        let paths = reconstruct_all(&o, receiver, &t, &a, bridge_budget);
        let unique = paths.len() == 1;
        emit(&ReconstructOut::All { paths }, json)?;
        return Ok(status(unique));
    }
    match resolve(&o, receiver, &t, &a, bridge_budget) {
        Ok(path) => {
            emit(&ReconstructOut::Path(path), json)?;
            Ok(0)
        }
        Err(error) => {
            eprintln!("error: {error}");
            emit(&ReconstructOut::Error { error }, json)?;
            Ok(Code::Failed as u8)
        }
    }
}

fn cmd_overhead(sizes: &[u64], args: &ProfileArgs, json: bool) -> Outcome {
    let p = checked_profile(args, 4)?;
    let rows = overhead_report(&p, sizes).map_err(input)?;
    emit(&rows, json)?;
    Ok(0)
}
