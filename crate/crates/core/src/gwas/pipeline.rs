//! End-to-end case/control matching and its plaintext oracle.

use std::time::Instant;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::data::GenotypeMatrix;
use super::secure::{filter_controls, SharedBasis};
use super::{genotype_histogram, inflation_factor_plain, normalize_row, CaseBasis, ContingencyCounts, Lambda};
use crate::dispense::{BlindMode, DispenseRoles, Dispenser};
use crate::error::{Error, Result};
use crate::fixpt::{FixedPoint, FixedPointParams};
use crate::modmath::{FieldElement, GroupParams};
use crate::net::{PartyId, Runtime, RuntimeConfig, SchedulePolicy};
use crate::spdz::Engine;

/// Which side of `τ` is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptRule {
    /// Keep `‖(I - UUᵀ)z‖ ≤ τ`.
    #[default]
    WithinTau,
    /// Keep `‖(I - UUᵀ)z‖ > τ`.
    BeyondTau,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub tau: f64,
    pub lambda_max: f64,
    pub fixed_point: FixedPointParams,
    /// MPC servers.
    pub parties: u16,
    pub accept_rule: AcceptRule,
    pub blind_mode: BlindMode,
    pub parallel_controls: usize,
    pub seed: u64,
    pub record_transcript: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.3,
            lambda_max: 0.05,
            fixed_point: FixedPointParams::default(),
            parties: 3,
            accept_rule: AcceptRule::WithinTau,
            blind_mode: BlindMode::Single,
            parallel_controls: 1,
            seed: 0,
            record_transcript: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda_max must be positive, got {}",
                self.lambda_max
            )));
        }
        if self.parties < 3 {
            return Err(Error::Validation(format!("need at least 3 MPC servers, got {}", self.parties)));
        }
        if self.parallel_controls == 0 {
            return Err(Error::Validation("parallel_controls must be at least 1".into()));
        }
        self.tau_sq_encoded().map(|_| ())
    }

    /// `τ²` in the fixed-point encoding.
    pub fn tau_sq_encoded(&self) -> Result<FieldElement> {
        self.fixed_point.encode(self.tau * self.tau)
    }

    /// `τ²` as the secure comparison sees it.
    pub fn tau_sq_effective(&self) -> Result<f64> {
        self.fixed_point.decode(&self.tau_sq_encoded()?)
    }

    /// Everything that influences the outcome.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "tau": self.tau,
            "lambda_max": self.lambda_max,
            "fixed_point": self.fixed_point.to_json_value(),
            "parties": self.parties,
            "accept_rule": self.accept_rule,
            "blind_mode": self.blind_mode,
            "seed": self.seed,
        })
    }
}

/// One control sample: its normalized genotype row and its own tallies.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    pub id: String,
    pub z: Vec<f64>,
    pub counts: [u64; 3],
}

impl Control {
    pub fn from_genotypes(id: impl Into<String>, row: &[u8]) -> Self {
        Control {
            id: id.into(),
            z: normalize_row(row),
            counts: genotype_histogram([row]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineInputs {
    pub basis: CaseBasis,
    /// Held by `O_case`.
    pub case_counts: [u64; 3],
    /// Held by `O_ctrl`.
    pub controls: Vec<Control>,
}

impl PipelineInputs {
    /// Case tallies pooled over the case matrix; one control per row of
    /// `ctrl`.
    pub fn from_matrices(case: &GenotypeMatrix, basis: CaseBasis, ctrl: &GenotypeMatrix) -> Result<Self> {
        for (name, m) in [("case", case), ("control", ctrl)] {
            if m.snps() != basis.dim() {
                return Err(Error::Shape(format!(
                    "{name} data has {} SNPs, basis has dimension {}",
                    m.snps(),
                    basis.dim()
                )));
            }
        }
        let controls = ctrl
            .rows()
            .enumerate()
            .map(|(i, row)| Control::from_genotypes(format!("ctrl{}", i + 1), row))
            .collect();
        Ok(PipelineInputs {
            basis,
            case_counts: case.histogram(),
            controls,
        })
    }

    pub fn validate(&self, config: &PipelineConfig) -> Result<()> {
        let tol = (2f64).powi(-(config.fixed_point.f() as i32) + 2);
        self.basis.check_orthonormal(tol)?;
        for c in &self.controls {
            if c.z.len() != self.basis.dim() {
                return Err(Error::Shape(format!(
                    "control {} has dimension {}, basis has {}",
                    c.id,
                    c.z.len(),
                    self.basis.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Per-control decisions in input order, and `λ` over the kept set.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub decisions: Vec<bool>,
    pub lambda: Option<Lambda>,
}

/// The same decisions computed in the clear.
pub fn filter_controls_plain(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<FilterOutcome> {
    let tau_sq = config.tau_sq_effective()?;
    let mut decisions = Vec::with_capacity(inputs.controls.len());
    let mut pooled = [0u64; 3];
    for c in &inputs.controls {
        let above = inputs.basis.residual_norm_sq_plain(&c.z)? > tau_sq;
        let keep = match config.accept_rule {
            AcceptRule::WithinTau => !above,
            AcceptRule::BeyondTau => above,
        };
        if keep {
            for (p, v) in pooled.iter_mut().zip(c.counts) {
                *p += v;
            }
        }
        decisions.push(keep);
    }
    let lambda = if decisions.iter().any(|d| *d) {
        Some(inflation_factor_plain(&ContingencyCounts::new(inputs.case_counts, pooled))?)
    } else {
        None
    };
    Ok(FilterOutcome { decisions, lambda })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaReport {
    pub num: i128,
    pub den: i128,
    pub value: f64,
}

impl TryFrom<&Lambda> for LambdaReport {
    type Error = Error;

    fn try_from(l: &Lambda) -> Result<Self> {
        let fit = |v: &num_bigint::BigInt| {
            v.to_i128()
                .ok_or_else(|| Error::Overflow(format!("λ term {v} does not fit the report")))
        };
        Ok(LambdaReport {
            num: fit(l.num())?,
            den: fit(l.den())?,
            value: l.value(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub mode: &'static str,
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub lambda: Option<LambdaReport>,
    pub lambda_ok: Option<bool>,
    pub config: serde_json::Value,
    pub triple_count: u64,
    pub runtime_ms: u64,
    pub transcript_digest: Option<String>,
}

impl Report {
    fn build(mode: &'static str, inputs: &PipelineInputs, outcome: &FilterOutcome, config: &PipelineConfig) -> Result<Self> {
        let (mut accepted, mut rejected) = (Vec::new(), Vec::new());
        for (c, keep) in inputs.controls.iter().zip(&outcome.decisions) {
            if *keep {
                accepted.push(c.id.clone());
            } else {
                rejected.push(c.id.clone());
            }
        }
        Ok(Report {
            mode,
            accepted,
            rejected,
            lambda: outcome.lambda.as_ref().map(LambdaReport::try_from).transpose()?,
            lambda_ok: outcome.lambda.as_ref().map(|l| l.within(config.lambda_max)),
            config: config.echo(),
            triple_count: 0,
            runtime_ms: 0,
            transcript_digest: None,
        })
    }

    /// The plaintext oracle's report.
    pub fn plaintext(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        inputs.validate(config)?;
        let start = Instant::now();
        let outcome = filter_controls_plain(inputs, config)?;
        let mut r = Self::build("plaintext-oracle", inputs, &outcome, config)?;
        r.runtime_ms = start.elapsed().as_millis() as u64;
        Ok(r)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// The secure pipeline: BTG-dispensed triples over a fixed-point field for
/// the residual filter, and over `lambda_group` for `λ`.
pub struct SecurePipeline {
    config: PipelineConfig,
    lambda_group: GroupParams,
    roles: DispenseRoles,
}

impl SecurePipeline {
    pub fn new(config: PipelineConfig, lambda_group: GroupParams) -> Result<Self> {
        config.validate()?;
        let roles = DispenseRoles::standard(config.parties, &config.seed.to_be_bytes())?;
        Ok(SecurePipeline {
            config,
            lambda_group,
            roles,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn parties(&self) -> Vec<PartyId> {
        self.roles.all_parties()
    }

    pub fn leader(&self) -> PartyId {
        self.roles.leader
    }

    /// A fresh runtime seeded from the config.
    pub fn runtime(&self) -> Result<Runtime> {
        Runtime::new(
            &self.parties(),
            &self.config.seed.to_be_bytes(),
            RuntimeConfig {
                policy: SchedulePolicy::RoundRobin,
                record: self.config.record_transcript,
            },
        )
    }

    pub fn run(&self, rt: &mut Runtime, inputs: &PipelineInputs) -> Result<Report> {
        inputs.validate(&self.config)?;
        let start = Instant::now();
        let params = self.config.fixed_point.clone();
        let fp_group = GroupParams::from_safe_prime(params.p().clone())?;
        let fp_dispenser = Dispenser::new(rt, fp_group, self.roles.clone(), self.config.blind_mode)?;
        let lambda_dispenser = Dispenser::new(rt, self.lambda_group.clone(), self.roles.clone(), self.config.blind_mode)?
            .with_id_base(1 << 62);
        let mut fp_engine = Engine::new(params.field().clone(), self.roles.mpc.clone(), self.roles.leader)?
            .with_supplier(Box::new(fp_dispenser));
        let mut lambda_engine = Engine::new(
            self.lambda_group.field().clone(),
            self.roles.mpc.clone(),
            self.roles.leader,
        )?
        .with_supplier(Box::new(lambda_dispenser));

        let fp = FixedPoint::new(params);
        let basis = SharedBasis::share(&fp, &fp_engine, rt, fp.case_owner(), &inputs.basis)?;
        let outcome = filter_controls(
            &fp,
            &mut fp_engine,
            &mut lambda_engine,
            rt,
            &basis,
            inputs.case_counts,
            &inputs.controls,
            &self.config,
        )?;
        let mut report = Report::build("secure", inputs, &outcome, &self.config)?;
        report.triple_count = (fp_engine.triples_used() + lambda_engine.triples_used()) as u64;
        report.runtime_ms = start.elapsed().as_millis() as u64;
        report.transcript_digest = Some(rt.transcript().digest_hex());
        Ok(report)
    }
}
