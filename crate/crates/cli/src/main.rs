mod commands;

use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracemax::codec::CodecProfile;

/// Port-ID traceback: assign IDs, encode and decode options, simulate and reconstruct.
#[derive(Debug, Parser)]
#[command(name = "tracemax", version)]
pub struct Cli {
    /// Print JSON instead of YAML.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a generated topology.
    Generate {
        #[command(subcommand)]
        shape: Shape,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign port IDs automatically and check the result.
    Assign {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Declare a wider bit width than the IDs need.
        #[arg(long)]
        bit_width: Option<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an assignment for routers hearing the same ID twice.
    Validate {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Also search all paths up to this many links for colliding trails.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Build option bytes from a list of IDs.
    Encode {
        /// Comma-separated IDs, first-marked first.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u8>,
        #[arg(long)]
        sender: Option<Ipv4Addr>,
        #[arg(long)]
        receiver: Option<Ipv4Addr>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Parse option bytes given as hex.
    Decode {
        #[command(flatten)]
        input: HexInput,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Show the route a packet takes.
    Route {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        from: u32,
        #[arg(long)]
        to: u32,
        /// Pick uniformly among equal-cost paths with this seed.
        #[arg(long)]
        ecmp_seed: Option<u64>,
        /// Packet number; selects the random stream under ECMP.
        #[arg(long, default_value_t = 0)]
        packet: u64,
    },
    /// Run a scenario and compare reconstructions with the real paths.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the transit log and the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the path of one captured option.
    Reconstruct {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        /// Router where the packet was captured.
        #[arg(long)]
        receiver: u32,
        /// Non-marking routers that may be bridged in a row; 0 disables the fallback search.
        #[arg(long, default_value_t = tracemax::reconstruction::DEFAULT_BRIDGE_BUDGET)]
        bridge_budget: usize,
        /// List every consistent path instead of walking back once.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        input: HexInput,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Header overhead of the option for given packet sizes.
    Overhead {
        #[arg(long, value_delimiter = ',', default_value = "1500")]
        sizes: Vec<u64>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum Shape {
    Chain {
        #[arg(long)]
        routers: u32,
    },
    Star {
        #[arg(long)]
        leaves: u16,
    },
    Random {
        #[arg(long)]
        routers: u32,
        #[arg(long, default_value_t = 0.1)]
        extra_links: f64,
        #[arg(long, default_value_t = 0.0)]
        parallel_links: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct HexInput {
    /// Option bytes as hex; spaces are ignored.
    pub hex: Option<String>,
    /// Read the hex from a file.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Bits per ID [default: 4, or the assignment's width where one is given].
    #[arg(long)]
    pub bit_width: Option<u8>,
    #[arg(long, default_value_t = 40)]
    pub option_length: u8,
    #[arg(long, overrides_with = "no_sender")]
    pub with_sender: bool,
    #[arg(long, overrides_with = "with_sender")]
    pub no_sender: bool,
    #[arg(long, overrides_with = "no_receiver")]
    pub with_receiver: bool,
    #[arg(long, overrides_with = "with_receiver")]
    pub no_receiver: bool,
}

impl ProfileArgs {
    pub fn profile(&self, default_bit_width: u8) -> CodecProfile {
        CodecProfile {
            bit_width: self.bit_width.unwrap_or(default_bit_width),
            include_sender: !self.no_sender,
            include_receiver: !self.no_receiver,
            option_length: self.option_length,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            // wrapped errors often repeat their source's text; print each part once
            let mut parts: Vec<String> = Vec::new();
            for cause in e.error.chain() {
                let text = cause.to_string();
                if !parts.iter().any(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(e.code as u8)
        }
    }
}
