//! Alignment training objectives.
//!
//! All four variants share one shape: run the frozen LM over the sentence
//! with some aligned prefix installed and take the mean next-token NLL.
//! Gradients reach only the alignment MLPs; the LM never records gradient.
//!
//! * `A`    — prefix [F(a)]
//! * `AC`   — prefix [F(a); F_d(d)] (or [F_d(d)] for records without an attribute)
//! * `ACK`  — AC plus kl_scale · KL(p(·|a,d,x) ‖ p(·|x)); the unconditional
//!            distribution is a constant target (the frozen LM carries no
//!            gradient, so detachment is structural)
//! * `ACB`  — NLL with [F(a); F_d(d)] minus NLL with [F_d(d)], the second
//!            term's per-position value clamped at 4·ln(V) to keep the
//!            adversarial pressure bounded

use super::mlp::AlignmentMlp;
use super::prefix::{align, build_prefix, conditional_logits, AttributePrefix, RawKv};
use crate::error::{Error, Result};
use crate::lm::{Segment, TransformerLm};
use crate::tensor::{ops, Tape, Tensor};

/// Mean NLL of `targets` under the LM with `prefix` installed.
pub fn conditional_nll(
    tape: &Tape,
    lm: &TransformerLm,
    prefix: &AttributePrefix,
    inputs: &[u32],
    targets: &[u32],
) -> Result<Tensor> {
    let logits = conditional_logits(tape, lm, prefix, inputs)?;
    ops::cross_entropy(tape, &logits, targets)
}

/// Variant A: condition on the aligned attribute representation alone.
pub fn loss_a(
    tape: &Tape,
    lm: &TransformerLm,
    f: &AlignmentMlp,
    attr: &RawKv,
    inputs: &[u32],
    targets: &[u32],
) -> Result<Tensor> {
    let prefix = align(tape, f, attr, Segment::Attribute)?;
    conditional_nll(tape, lm, &prefix, inputs, targets)
}

/// Variant AC: attribute plus a separate corpus-domain representation. The
/// attribute is optional; domain-only records train `F_d` alone.
pub fn loss_ac(
    tape: &Tape,
    lm: &TransformerLm,
    f: &AlignmentMlp,
    f_d: &AlignmentMlp,
    attr: Option<&RawKv>,
    domain: &RawKv,
    inputs: &[u32],
    targets: &[u32],
) -> Result<Tensor> {
    let domain_part = align(tape, f_d, domain, Segment::Domain)?;
    let prefix = match attr {
        Some(a) => {
            let attr_part = align(tape, f, a, Segment::Attribute)?;
            build_prefix(tape, &[&attr_part, &domain_part])?
        }
        None => domain_part,
    };
    conditional_nll(tape, lm, &prefix, inputs, targets)
}

/// Variant ACK: AC plus a KL leash toward the unconditional distribution.
pub fn loss_ack(
    tape: &Tape,
    lm: &TransformerLm,
    f: &AlignmentMlp,
    f_d: &AlignmentMlp,
    attr: Option<&RawKv>,
    domain: &RawKv,
    inputs: &[u32],
    targets: &[u32],
    kl_scale: f64,
) -> Result<Tensor> {
    let domain_part = align(tape, f_d, domain, Segment::Domain)?;
    let prefix = match attr {
        Some(a) => {
            let attr_part = align(tape, f, a, Segment::Attribute)?;
            build_prefix(tape, &[&attr_part, &domain_part])?
        }
        None => domain_part,
    };
    let cond_logits = conditional_logits(tape, lm, &prefix, inputs)?;
    let base = ops::cross_entropy(tape, &cond_logits, targets)?;
    if kl_scale == 0.0 {
        return Ok(base);
    }
    let uncond_logits = conditional_logits(tape, lm, &AttributePrefix::empty(), inputs)?;
    let kl = ops::kl_divergence(tape, &cond_logits, &uncond_logits)?;
    ops::add(tape, &base, &ops::scale(tape, &kl, kl_scale as f32)?)
}

/// Per-position cap on the ACB second term: 4·ln(V).
pub fn acb_clamp(vocab_size: usize) -> f32 {
    4.0 * (vocab_size as f64).ln() as f32
}

/// Variant ACB: two forward passes. The loss is
/// mean NLL(x | a, d) − mean min(NLL(x | d), 4·ln V); minimizing it pushes
/// the joint stream toward the text and the domain-only stream away from it.
/// Both MLPs receive gradient through both passes.
pub fn loss_acb(
    tape: &Tape,
    lm: &TransformerLm,
    f: &AlignmentMlp,
    f_d: &AlignmentMlp,
    attr: &RawKv,
    domain: &RawKv,
    inputs: &[u32],
    targets: &[u32],
) -> Result<Tensor> {
    let (joint_nll, domain_nll) =
        acb_terms(tape, lm, f, f_d, attr, domain, inputs, targets)?;
    ops::sub(tape, &joint_nll, &domain_nll)
}

/// The two ACB terms separately (mean joint NLL, mean clamped domain NLL).
#[allow(clippy::too_many_arguments)]
pub fn acb_terms(
    tape: &Tape,
    lm: &TransformerLm,
    f: &AlignmentMlp,
    f_d: &AlignmentMlp,
    attr: &RawKv,
    domain: &RawKv,
    inputs: &[u32],
    targets: &[u32],
) -> Result<(Tensor, Tensor)> {
    let attr_part = align(tape, f, attr, Segment::Attribute)?;
    let domain_part = align(tape, f_d, domain, Segment::Domain)?;
    let joint = build_prefix(tape, &[&attr_part, &domain_part])?;
    let joint_logits = conditional_logits(tape, lm, &joint, inputs)?;
    let joint_nll = ops::cross_entropy(tape, &joint_logits, targets)?;

    let domain_only = align(tape, f_d, domain, Segment::Domain)?;
    let domain_logits = conditional_logits(tape, lm, &domain_only, inputs)?;
    let per_token = ops::token_nll(tape, &domain_logits, targets)?;
    let clamped = ops::clamp_max(tape, &per_token, acb_clamp(lm.config.vocab_size))?;
    let domain_nll = ops::mean(tape, &clamped)?;
    Ok((joint_nll, domain_nll))
}

/// Domain-only language-modeling loss (the alternating-schedule step that
/// trains `F_d` as a plain conditional LM instead of adversarially).
pub fn loss_domain_lm(
    tape: &Tape,
    lm: &TransformerLm,
    f_d: &AlignmentMlp,
    domain: &RawKv,
    inputs: &[u32],
    targets: &[u32],
) -> Result<Tensor> {
    let prefix = align(tape, f_d, domain, Segment::Domain)?;
    conditional_nll(tape, lm, &prefix, inputs, targets)
}

