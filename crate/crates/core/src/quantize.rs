//! 32 -> 16 bit weight truncation and the nonzero-parameter storage budget.

use std::fmt;

use thiserror::Error;

use crate::nn::{count_parameters, DType, ModelParams};

pub const DEFAULT_LIMIT_KB: f64 = 128.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizeError {
    #[error("model is already quantized (tensor {0} is t16)")]
    AlreadyQuantized(String),
    #[error("model mixes dtypes: {0}")]
    MixedDTypes(String),
    #[error("invalid budget limit {0}")]
    Limit(f64),
}

/// Upper 16 bits of a 32-bit float pattern: sign, full exponent, top 7 mantissa bits.
pub fn truncate_to_16(word: u32) -> u16 {
    (word >> 16) as u16
}

/// Place a 16-bit word in the upper half of a float, low mantissa bits zero.
pub fn widen_to_32(word: u16) -> f32 {
    f32::from_bits((word as u32) << 16)
}

/// `widen(truncate(x))`
pub fn quantize_value(x: f32) -> f32 {
    widen_to_32(truncate_to_16(x.to_bits()))
}

/// Truncate every tensor and tag it t16. Names and shapes are kept.
pub fn quantize_model(model: &ModelParams) -> Result<ModelParams, QuantizeError> {
    if let Some((name, _)) = model.iter().find(|(_, t)| t.dtype != DType::F32) {
        return Err(QuantizeError::AlreadyQuantized(name.to_string()));
    }
    let mut out = model.clone();
    for (_, t) in out.iter_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v = quantize_value(*v as f32) as f64);
        t.dtype = DType::T16;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub nonzero_count: usize,
    pub bits_per_param: u32,
    pub size_kb: f64,
    pub limit_kb: f64,
    pub pass: bool,
    /// `(name, total entries, nonzero entries)` per tensor.
    pub tensors: Vec<(String, usize, usize)>,
}

impl BudgetReport {
    /// `nonzero=<n> bits=<b> size_kb=<s> limit_kb=<l> pass=<0|1>`
    pub fn summary_line(&self) -> String {
        format!(
            "nonzero={} bits={} size_kb={:.1} limit_kb={} pass={}",
            self.nonzero_count,
            self.bits_per_param,
            self.size_kb,
            self.limit_kb,
            u8::from(self.pass)
        )
    }

    pub fn table(&self) -> String {
        let width = self.tensors.iter().map(|t| t.0.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "tensor", "entries", "nonzero");
        for (name, total, nz) in &self.tensors {
            s.push_str(&format!("{name:<width$}  {total:>8}  {nz:>8}\n"));
        }
        s.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}\n",
            "total",
            self.tensors.iter().map(|t| t.1).sum::<usize>(),
            self.nonzero_count
        ));
        s.push_str(&format!(
            "{} bits/param -> {:.2} KB of {} KB: {}\n",
            self.bits_per_param,
            self.size_kb,
            self.limit_kb,
            if self.pass { "within budget" } else { "OVER BUDGET" }
        ));
        s
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n{}", self.summary_line(), self.table())
    }
}

/// `size_kb = nonzero * bits / 8 / 1024`
pub fn budget_size_kb(nonzero: usize, bits: u32) -> f64 {
    (nonzero as f64) * f64::from(bits) / 8.0 / 1024.0
}

pub fn audit_budget(model: &ModelParams, limit_kb: f64) -> Result<BudgetReport, QuantizeError> {
    if !(limit_kb.is_finite() && limit_kb >= 0.0) {
        return Err(QuantizeError::Limit(limit_kb));
    }
    let mut dtypes = model.iter().map(|(n, t)| (n, t.dtype));
    let bits = match dtypes.next() {
        None => DType::F32.bits(),
        Some((first_name, first)) => {
            if let Some((name, other)) = dtypes.find(|(_, d)| *d != first) {
                return Err(QuantizeError::MixedDTypes(format!(
                    "{first_name} is {first:?}, {name} is {other:?}"
                )));
            }
            first.bits()
        }
    };
    let nonzero_count = count_parameters(model, false);
    let size_kb = budget_size_kb(nonzero_count, bits);
    Ok(BudgetReport {
        nonzero_count,
        bits_per_param: bits,
        size_kb,
        limit_kb,
        pass: size_kb <= limit_kb,
        tensors: model
            .iter()
            .map(|(n, t)| (n.to_string(), t.len(), t.nonzero()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(nonzero: usize, dtype: DType) -> ModelParams {
        let mut p = ModelParams::new();
        let mut data = vec![0.5; nonzero];
        data.extend_from_slice(&[0.0; 100]);
        p.insert("w", vec![data.len()], data, dtype).unwrap();
        p
    }

    #[test]
    fn fixed_bit_patterns() {
        assert_eq!(truncate_to_16(0x3F80_0000), 0x3F80);
        assert_eq!(widen_to_32(0x3F80), 1.0);
        assert_eq!(truncate_to_16(0), 0);
        assert_eq!(widen_to_32(0), 0.0);
        let pi = std::f32::consts::PI;
        assert_eq!(pi.to_bits(), 0x4049_0FDB);
        assert_eq!(truncate_to_16(pi.to_bits()), 0x4049);
        assert_eq!(quantize_value(pi), 3.140625);
    }

    #[test]
    fn truncate_inverts_widen_for_every_word() {
        for w in 0..=u16::MAX {
            assert_eq!(truncate_to_16(widen_to_32(w).to_bits()), w);
        }
    }

    #[test]
    fn budget_examples() {
        let r = audit_budget(&synthetic(56486, DType::T16), 128.0).unwrap();
        assert_eq!(r.nonzero_count, 56486);
        assert!((r.size_kb - 110.32421875).abs() < 1e-12);
        assert!(r.summary_line().contains("size_kb=110.3"));
        assert!(r.pass);
        let r = audit_budget(&synthetic(32768, DType::F32), 128.0).unwrap();
        assert_eq!(r.size_kb, 128.0);
        assert!(r.pass);
        assert_eq!(r.summary_line(), "nonzero=32768 bits=32 size_kb=128.0 limit_kb=128 pass=1");
        let r = audit_budget(&synthetic(32769, DType::F32), 128.0).unwrap();
        assert!(!r.pass);
        let r = audit_budget(&ModelParams::new(), 128.0).unwrap();
        assert_eq!((r.nonzero_count, r.size_kb, r.pass), (0, 0.0, true));
        assert!(!audit_budget(&synthetic(10, DType::T16), 0.001).unwrap().pass);
    }

    #[test]
    fn mixed_and_requantized_models_fail() {
        let mut p = synthetic(4, DType::F32);
        p.insert("b", vec![1], vec![1.0], DType::T16).unwrap();
        assert!(matches!(audit_budget(&p, 128.0), Err(QuantizeError::MixedDTypes(_))));
        let q = quantize_model(&synthetic(4, DType::F32)).unwrap();
        assert!(matches!(quantize_model(&q), Err(QuantizeError::AlreadyQuantized(_))));
    }

    #[test]
    fn representable_values_survive_quantization() {
        let mut p = ModelParams::new();
        p.insert("w", vec![5], vec![0.0, 1.0, -1.0, 0.5, -0.5], DType::F32).unwrap();
        let q = quantize_model(&p).unwrap();
        assert_eq!(q.data("w").unwrap(), p.data("w").unwrap());
        assert_eq!(q.get("w").unwrap().dtype, DType::T16);
    }

    proptest! {
        #[test]
        fn truncation_keeps_sign_and_exponent(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(x.is_finite());
            let y = quantize_value(x);
            prop_assert_eq!(y.to_bits() >> 23, x.to_bits() >> 23);
            prop_assert!(y.abs() <= x.abs());
            prop_assert_eq!(truncate_to_16(y.to_bits()), truncate_to_16(x.to_bits()));
            if x.is_normal() {
                prop_assert!(((x - y) / x).abs() <= 2f32.powi(-7));
            }
        }

        #[test]
        fn nonzero_count_never_grows(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..64)) {
            let mut p = ModelParams::new();
            p.insert("w", vec![values.len()], values.iter().map(|&v| v as f64).collect(), DType::F32).unwrap();
            let q = quantize_model(&p).unwrap();
            prop_assert!(count_parameters(&q, false) <= count_parameters(&p, false));
            for (a, b) in p.data("w").unwrap().iter().zip(q.data("w").unwrap()) {
                if *a != 0.0 && *b == 0.0 {
                    prop_assert_eq!((*a as f32).to_bits() & 0x7FFF_0000, 0);
                }
            }
        }
    }
}
