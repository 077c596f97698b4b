use std::fmt::Write;

use sha2::{Digest, Sha256};

use super::{Artifact, Backend, PortArtifacts};
use crate::ir::{format_real, ParamMap, ParamValue};
use crate::registry::FunctionSchema;

/// Deterministic stand-in for a generative backend: every output token is a
/// fingerprint of the function type, its parameters, its input tokens and the
/// output port name.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedBackend;

impl Backend for SimulatedBackend {
    fn run_node(
        &self,
        _node_id: &str,
        schema: &FunctionSchema,
        params: &ParamMap,
        inputs: &PortArtifacts,
    ) -> Result<PortArtifacts, String> {
        let inputs: Vec<(&str, &str)> = inputs
            .iter()
            .map(|(port, a)| (port.as_str(), a.token.as_str()))
            .collect();
        Ok(schema
            .outputs
            .iter()
            .map(|port| {
                let token = fingerprint(&schema.type_name, params, &inputs, &port.name);
                (
                    port.name.clone(),
                    Artifact {
                        modality: port.modality,
                        token,
                    },
                )
            })
            .collect())
    }
}

fn encode_value(v: &ParamValue) -> String {
    match v {
        ParamValue::Bool(b) => format!("b:{b}"),
        ParamValue::Int(i) => format!("i:{i}"),
        ParamValue::Real(r) => format!("r:{}", format_real(*r)),
        ParamValue::Str(s) => format!("s:{s}"),
    }
}

/// 128-bit hex fingerprint. Parameters and inputs are sorted by name, so map
/// insertion order does not matter.
pub fn fingerprint(type_name: &str, params: &ParamMap, inputs: &[(&str, &str)], output_port: &str) -> String {
    let mut params: Vec<(&str, String)> = params
        .iter()
        .map(|(k, v)| (k.as_str(), encode_value(v)))
        .collect();
    params.sort();
    let mut inputs = inputs.to_vec();
    inputs.sort();
    // JSON gives every field an unambiguous, escaped encoding.
    let record = serde_json::json!(["aflow-sim/1", type_name, params, inputs, output_port]);
    let digest = Sha256::digest(record.to_string().as_bytes());
    let mut hex = String::with_capacity(32);
    for b in &digest[..16] {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params;
    use crate::registry::Registry;

    #[test]
    fn deterministic_and_order_free() {
        let a = fingerprint(
            "T",
            &params! {"x" => 1_i64, "y" => "s"},
            &[("p", "t1"), ("q", "t2")],
            "OUT",
        );
        let b = fingerprint(
            "T",
            &params! {"y" => "s", "x" => 1_i64},
            &[("q", "t2"), ("p", "t1")],
            "OUT",
        );
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn sensitive_to_every_field() {
        let base = fingerprint("T", &params! {"x" => 1_i64}, &[("p", "t")], "OUT");
        let variants = [
            fingerprint("U", &params! {"x" => 1_i64}, &[("p", "t")], "OUT"),
            fingerprint("T", &params! {"x" => 2_i64}, &[("p", "t")], "OUT"),
            fingerprint("T", &params! {"x" => 1.0}, &[("p", "t")], "OUT"),
            fingerprint("T", &params! {"x" => "1"}, &[("p", "t")], "OUT"),
            fingerprint("T", &params! {"x" => 1_i64}, &[("q", "t")], "OUT"),
            fingerprint("T", &params! {"x" => 1_i64}, &[("p", "u")], "OUT"),
            fingerprint("T", &params! {"x" => 1_i64}, &[("p", "t")], "OUT2"),
        ];
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(base.clone());
        for v in variants {
            assert!(seen.insert(v), "collision");
        }
    }

    #[test]
    fn no_collisions_across_parameter_sweep() {
        let r = Registry::test_catalog();
        let ks = r.lookup("KSampler").unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200_i64 {
            let p = ks.resolve_params(&params! {"seed" => seed}).unwrap();
            let out = SimulatedBackend
                .run_node("s", ks, &p, &PortArtifacts::new())
                .unwrap();
            assert!(seen.insert(out["LATENT"].token.clone()));
        }
    }
}
