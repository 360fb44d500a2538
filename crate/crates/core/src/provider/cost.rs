use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use super::{PriceTable, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub reasoning_tokens: u64,
    /// Unrounded total.
    pub exact_usd: Decimal,
    /// Total rounded half-up to cents.
    pub total_usd: Decimal,
    /// Share of the total attributable to reasoning tokens, rounded to cents.
    pub reasoning_usd: Decimal,
}

fn per_token(tokens: u64, per_million: Decimal) -> Decimal {
    Decimal::from(tokens) * per_million / Decimal::from(1_000_000u32)
}

fn cents(d: Decimal) -> Decimal {
    d.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
}

/// Sums usage over calls and prices it. Reasoning tokens are a subset of
/// output tokens and are not billed twice.
pub fn accumulate_cost<'a>(usages: impl IntoIterator<Item = &'a Usage>, prices: &PriceTable) -> CostReport {
    let mut calls = 0;
    let mut total = Usage::default();
    for u in usages {
        calls += 1;
        total.input_tokens += u.input_tokens;
        total.output_tokens += u.output_tokens;
        total.reasoning_tokens += u.reasoning_tokens;
    }
    let exact = per_token(total.input_tokens, prices.input_per_1m)
        + per_token(total.output_tokens, prices.output_per_1m);
    CostReport {
        calls,
        input_tokens: total.input_tokens,
        output_tokens: total.output_tokens,
        reasoning_tokens: total.reasoning_tokens,
        exact_usd: exact,
        total_usd: cents(exact),
        reasoning_usd: cents(per_token(total.reasoning_tokens, prices.output_per_1m)),
    }
}
