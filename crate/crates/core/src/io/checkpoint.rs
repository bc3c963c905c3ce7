use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{f64s_from_le, header_field, header_usize, parse_header, push_f64s, split_framed};
use crate::error::{ensure, invalid, Result};
use crate::model::{Component, MinVae, ModelDims, Variant};
use crate::nn::AdamState;
use crate::train::TrainState;

const MAGIC: &[u8] = b"MINVAE1\n";
const OPTIM_MAGIC: &[u8] = b"MVOPT1\n";

/// Serialises a model: magic line, a header naming the dimensions and the
/// variant, then every parameter as little-endian `f64` in
/// [`MinVae::params_flat`] order.
pub fn encode_checkpoint(model: &MinVae) -> Vec<u8> {
    let d = &model.dims;
    let params = model.params_flat();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(
        format!(
            "F={} L={} M={} K={} H={} variant={} params={}\n",
            d.freq_bins,
            d.latent,
            d.visual,
            d.nmf_rank,
            d.hidden,
            model.variant,
            params.len()
        )
        .as_bytes(),
    );
    push_f64s(&mut out, params);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MinVae> {
    let (header, payload) = split_framed(bytes, MAGIC)?;
    let h = parse_header(header)?;
    let dims = ModelDims {
        freq_bins: header_usize(&h, "F")?,
        latent: header_usize(&h, "L")?,
        visual: header_usize(&h, "M")?,
        nmf_rank: header_usize(&h, "K")?,
        hidden: header_usize(&h, "H")?,
    };
    let variant: Variant = header_field(&h, "variant")?.parse()?;
    let mut model = MinVae::zeros(variant, dims)?;
    let expected = model.n_params();
    let declared = header_usize(&h, "params")?;
    ensure!(
        declared == expected,
        "checkpoint declares {declared} parameters, a {variant} with these dimensions has {expected}"
    );
    let params = f64s_from_le(payload, expected)?;
    model.set_params_flat(&params)?;
    ensure!(
        model.params_flat() == params,
        "checkpoint holds out-of-range prior parameters"
    );
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &MinVae) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<MinVae> {
    decode_checkpoint(&fs::read(path)?)
}

fn component_tag(c: Component) -> &'static str {
    match c {
        Component::AudioEncoder => "audio-encoder",
        Component::VisualEncoder => "visual-encoder",
        Component::PriorNet => "prior-net",
        Component::Decoder => "decoder",
        Component::AudioPrior => "audio-prior",
        Component::VisualPrior => "visual-prior",
    }
}

fn component_from_tag(tag: &str) -> Result<Component> {
    Component::ALL
        .into_iter()
        .find(|&c| component_tag(c) == tag)
        .ok_or_else(|| invalid!("unknown optimiser component {tag:?}"))
}

/// Serialises optimiser state. Hyperparameters are stored as raw bit
/// patterns so a resumed run is bit-identical.
pub fn encode_train_state(state: &TrainState) -> Vec<u8> {
    let mut out = OPTIM_MAGIC.to_vec();
    out.extend_from_slice(
        format!(
            "next_epoch={} components={}\n",
            state.next_epoch,
            state.optimizers.len()
        )
        .as_bytes(),
    );
    for (&c, a) in &state.optimizers {
        out.extend_from_slice(
            format!(
                "component={} len={} step={} lr={:016x} beta1={:016x} beta2={:016x} epsilon={:016x}\n",
                component_tag(c),
                a.len(),
                a.step_count,
                a.learning_rate.to_bits(),
                a.beta1.to_bits(),
                a.beta2.to_bits(),
                a.epsilon.to_bits()
            )
            .as_bytes(),
        );
        push_f64s(&mut out, a.first_moment.iter().copied());
        push_f64s(&mut out, a.second_moment.iter().copied());
    }
    out
}

fn bits(h: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let s = header_field(h, key)?;
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| invalid!("field {key:?}: {e}"))
}

pub fn decode_train_state(bytes: &[u8]) -> Result<TrainState> {
    let (header, mut rest) = split_framed(bytes, OPTIM_MAGIC)?;
    let h = parse_header(header)?;
    let next_epoch = header_usize(&h, "next_epoch")?;
    let count = header_usize(&h, "components")?;
    let mut optimizers = BTreeMap::new();
    for _ in 0..count {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| invalid!("truncated optimiser state"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| invalid!("optimiser header is not UTF-8"))?;
        let ch = parse_header(line)?;
        let c = component_from_tag(header_field(&ch, "component")?)?;
        let len = header_usize(&ch, "len")?;
        let body = &rest[nl + 1..];
        ensure!(body.len() >= 16 * len, "truncated optimiser moments");
        let first_moment = f64s_from_le(&body[..8 * len], len)?;
        let second_moment = f64s_from_le(&body[8 * len..16 * len], len)?;
        rest = &body[16 * len..];
        let adam = AdamState {
            step_count: header_field(&ch, "step")?
                .parse()
                .map_err(|e| invalid!("field \"step\": {e}"))?,
            learning_rate: bits(&ch, "lr")?,
            beta1: bits(&ch, "beta1")?,
            beta2: bits(&ch, "beta2")?,
            epsilon: bits(&ch, "epsilon")?,
            first_moment,
            second_moment,
        };
        ensure!(
            optimizers.insert(c, adam).is_none(),
            "duplicate optimiser component"
        );
    }
    ensure!(rest.is_empty(), "trailing bytes after optimiser state");
    Ok(TrainState {
        next_epoch,
        optimizers,
    })
}

pub fn write_train_state(path: &Path, state: &TrainState) -> Result<()> {
    fs::write(path, encode_train_state(state))?;
    Ok(())
}

pub fn read_train_state(path: &Path) -> Result<TrainState> {
    decode_train_state(&fs::read(path)?)
}
