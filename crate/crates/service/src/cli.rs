//! `ccs` command line: the service itself plus role-based clients.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use ccs_core::analytics::{monte_carlo_p_fail, p_fail, to_f64, FailureModel};
use ccs_core::crypto::{keygen, KeyPair};
use ccs_core::datamodel::{CertificateRecord, CsrRecord, EndorsementBody, RaEndorsementRecord, RaMemberRecord};
use ccs_core::ledger::{read_chain_file, verify_chain, ChainVerdict};
use ccs_core::policy::CertificationPolicy;
use ccs_core::workflow::{AuditOutcome, RegisterUser};
use ccs_core::{Canonical, Timestamp};
use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use serde::Serialize;

use crate::client::Client;
use crate::config::{load_key, load_policy, parse_public_key, write_key, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "ccs", version, about = "Certification control system")]
pub struct Cli {
    /// Base URL of a running service.
    #[arg(long, global = true, env = "CCS_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    #[command(subcommand)]
    Key(KeyCommand),
    #[command(subcommand)]
    Admin(AdminCommand),
    #[command(subcommand)]
    Requester(RequesterCommand),
    #[command(subcommand)]
    Ra(RaCommand),
    #[command(subcommand)]
    Ca(CaCommand),
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Check a persisted chain file; exits 0 if intact, 1 otherwise.
    VerifyChain { file: PathBuf },
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    #[command(subcommand)]
    Policy(PolicyCommand),
}

#[derive(Debug, Args, Default)]
pub struct ServeArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Policy document committed at bootstrap if none is installed.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub quorum: Option<usize>,
    #[arg(long)]
    pub listen: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub chain_file: Option<PathBuf>,
    #[arg(long)]
    pub admin_key: Option<PathBuf>,
    #[arg(long)]
    pub ca_public_key: Option<String>,
    /// Fixed RFC 3339 time for the bootstrap transaction.
    #[arg(long)]
    pub bootstrap_at: Option<String>,
}

impl ServeArgs {
    pub fn resolve(&self) -> anyhow::Result<ServeConfig> {
        let mut config = match &self.config {
            Some(path) => ServeConfig::from_file(path)?,
            None => ServeConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => { $(if let Some(v) = &self.$field { config.$field = v.clone().into(); })* };
        }
        overlay!(nodes, quorum, listen);
        overlay!(policy, chain_file, admin_key, ca_public_key, bootstrap_at);
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
pub enum KeyCommand {
    /// Write a new key file (hex seed). `--label` derives it deterministically.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Print the public key and key id of a key file.
    Show { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    RegisterUser {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        user_id: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        email: String,
    },
    RegisterRa {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        ra_id: String,
        #[arg(long)]
        display_name: String,
        /// Hex public key of the member.
        #[arg(long)]
        public_key: String,
        /// Domain the member may endorse; repeatable.
        #[arg(long = "domain", required = true)]
        domains: Vec<String>,
    },
    SetPolicy {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum RequesterCommand {
    /// Create and submit a CSR for the key in `--key`.
    SubmitCsr {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        user_id: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        email: String,
    },
    /// Show the user record with all CSRs and certificates.
    Show { user_id: String },
}

#[derive(Debug, Subcommand)]
pub enum RaCommand {
    /// CSRs awaiting this member's endorsement.
    ListPending {
        #[arg(long)]
        ra_id: String,
        /// Include CSRs the member is not permitted to endorse.
        #[arg(long)]
        all: bool,
    },
    Endorse {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        ra_id: String,
        #[arg(long)]
        csr_id: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        email: String,
        /// Last digits of the identity document serial number.
        #[arg(long)]
        serial_suffix: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum CaCommand {
    /// Authorized CSRs without a certificate.
    ListAuthorized,
    /// Sign and submit a certificate for an authorized CSR.
    Issue {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        csr_id: String,
        #[arg(long)]
        serial: String,
        /// Write the certificate JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Look up the validation history of a certificate; exits 1 if none.
    Cert {
        /// Certificate JSON file.
        #[arg(required_unless_present = "serial")]
        file: Option<PathBuf>,
        /// Fetch the certificate by serial instead.
        #[arg(long, conflicts_with = "file")]
        serial: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Probability that all v validators drawn from n members are among the
    /// m malicious ones.
    Pfail {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        v: u32,
        /// Also run a Monte Carlo estimate with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Convert a JSON policy into a canonical policy document.
    FromJson {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a canonical policy document as JSON.
    Show { file: PathBuf },
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn key(path: &Path) -> anyhow::Result<KeyPair> {
    Ok(load_key(path)?)
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let client = || Client::new(&cli.server);
    let now = Timestamp::now;
    match cli.command {
        Command::Serve(args) => {
            let config = args.resolve()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::run(config))?;
        }
        Command::Key(KeyCommand::Gen { out, label }) => {
            let pair = match label {
                Some(label) => KeyPair::from_label(&label),
                None => {
                    let mut seed = [0u8; 32];
                    rand::rngs::OsRng.fill_bytes(&mut seed);
                    keygen(&seed)?
                }
            };
            write_key(&out, &pair)?;
            println!("{}", hex::encode(&pair.public_key));
        }
        Command::Key(KeyCommand::Show { file }) => {
            let pair = key(&file)?;
            println!("public_key {}\nkey_id     {}", hex::encode(&pair.public_key), pair.key_id);
        }
        Command::Admin(AdminCommand::RegisterUser { key: k, user_id, name, email }) => {
            let receipt = client().register_user(&key(&k)?, &RegisterUser { user_id, name, email }, now())?;
            print_json(&receipt)?;
        }
        Command::Admin(AdminCommand::RegisterRa { key: k, ra_id, display_name, public_key, domains }) => {
            let member = RaMemberRecord {
                ra_member_id: ra_id,
                display_name,
                public_key: parse_public_key(&public_key).map_err(anyhow::Error::msg)?,
                permitted_domains: domains.into_iter().collect(),
            };
            print_json(&client().register_ra_member(&key(&k)?, &member, now())?)?;
        }
        Command::Admin(AdminCommand::SetPolicy { key: k, policy }) => {
            let policy = load_policy(&policy)?;
            print_json(&client().put_policy(&key(&k)?, &policy, now())?)?;
        }
        Command::Requester(RequesterCommand::SubmitCsr { key: k, user_id, name, email }) => {
            let requester = key(&k)?;
            let csr = CsrRecord::create(&requester, &name, &email, now());
            let receipt = client().submit_csr(&requester, &user_id, &csr, now())?;
            print_json(&serde_json::json!({ "csr_id": csr.csr_id, "tx_id": receipt.tx_id, "block_height": receipt.block_height }))?;
        }
        Command::Requester(RequesterCommand::Show { user_id }) => print_json(&client().user(&user_id)?)?,
        Command::Ra(RaCommand::ListPending { ra_id, all }) => {
            let mut pending = client().pending_for(&ra_id)?;
            if !all {
                pending.retain(|e| e.permitted == Some(true));
            }
            for e in &pending {
                let required = e.required_endorsements.map_or("?".to_owned(), |r| r.to_string());
                let flag = if e.permitted == Some(true) { "" } else { "  (not permitted)" };
                println!(
                    "{}  {} <{}>  {}/{} endorsements{flag}",
                    e.csr.csr_id,
                    e.csr.subject_name,
                    e.csr.subject_email,
                    e.csr.endorsements.len(),
                    required
                );
            }
        }
        Command::Ra(RaCommand::Endorse { key: k, ra_id, csr_id, name, email, serial_suffix }) => {
            let ra = key(&k)?;
            let record = RaEndorsementRecord::create(
                &ra,
                EndorsementBody {
                    csr_id: csr_id.clone(),
                    ra_member_id: ra_id,
                    verified_name: name,
                    verified_email: email,
                    id_document_serial_suffix: serial_suffix,
                    timestamp: now(),
                },
            );
            let receipt = client().endorse(&ra, &csr_id, &record, now())?;
            let entry = client().csr(&csr_id)?;
            print_json(&serde_json::json!({
                "tx_id": receipt.tx_id,
                "block_height": receipt.block_height,
                "authorized": entry.csr.authorized,
                "endorsements": entry.csr.endorsements.len(),
                "required_endorsements": entry.required_endorsements,
            }))?;
        }
        Command::Ca(CaCommand::ListAuthorized) => {
            for e in client().csrs_with_status("authorized")? {
                println!("{}  {} <{}>", e.csr.csr_id, e.csr.subject_name, e.csr.subject_email);
            }
        }
        Command::Ca(CaCommand::Issue { key: k, csr_id, serial, out }) => {
            let ca = key(&k)?;
            let entry = client().csr(&csr_id)?;
            let cert = CertificateRecord::issue_for(&ca, &entry.csr, &serial, now());
            client().issue(&ca, &cert, now())?;
            let json = serde_json::to_string_pretty(&cert)?;
            match out {
                Some(path) => std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
        }
        Command::Audit(AuditCommand::Cert { file, serial }) => {
            let cert: CertificateRecord = match (file, serial) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("{} is not a certificate", path.display()))?
                }
                (None, Some(serial)) => client().certificate(&serial)?,
                (None, None) => bail!("give a certificate file or --serial"),
            };
            let outcome = client().audit(&cert)?;
            print_json(&outcome)?;
            if outcome == AuditOutcome::NoHistory {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::VerifyChain { file } => {
            let chain = read_chain_file(&file).with_context(|| format!("reading {}", file.display()))?;
            let verdict = match chain.first_bad {
                Some(h) => ChainVerdict::FirstBadHeight(h),
                None => verify_chain(&chain.blocks),
            };
            return Ok(match verdict {
                ChainVerdict::Ok => {
                    println!("ok: {} blocks", chain.blocks.len());
                    ExitCode::SUCCESS
                }
                ChainVerdict::FirstBadHeight(h) => {
                    println!("invalid: first bad height {h}");
                    ExitCode::FAILURE
                }
            });
        }
        Command::Analyze(AnalyzeCommand::Pfail { n, m, v, trials, seed }) => {
            let model = FailureModel::new(n, m, v)?;
            let exact = p_fail(&model)?;
            println!("p_fail(n={n}, m={m}, v={v}) = {exact} ≈ {:.10}", to_f64(&exact));
            if let Some(trials) = trials {
                let mc = monte_carlo_p_fail(&model, trials, seed)?;
                println!("monte carlo: {:.6} ± {:.6} ({trials} trials, seed {seed})", mc.estimate, mc.std_error);
            }
        }
        Command::Policy(PolicyCommand::FromJson { input, out }) => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let policy: CertificationPolicy =
                serde_json::from_str(&text).with_context(|| format!("{} is not a policy", input.display()))?;
            policy.validate().with_context(|| format!("{} is not a valid policy", input.display()))?;
            std::fs::write(&out, policy.canonical_bytes()).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Policy(PolicyCommand::Show { file }) => print_json(&load_policy(&file)?)?,
    }
    Ok(ExitCode::SUCCESS)
}
