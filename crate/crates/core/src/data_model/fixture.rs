//! Deterministic stand-in for the raw transaction export.

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike, Datelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{CellValue, Row, SequenceDataset, TableMetadata};

pub const USE_CHIP_VALUES: [&str; 3] = ["Swipe Transaction", "Chip Transaction", "Online Transaction"];

const ERRORS: [&str; 7] = [
    "Insufficient Balance",
    "Bad PIN",
    "Technical Glitch",
    "Bad Card Number",
    "Bad CVV",
    "Bad Expiration",
    "Bad Zipcode",
];

const PLACES: [(&str, &str, u32); 24] = [
    ("La Verne", "CA", 91750),
    ("Monterey Park", "CA", 91754),
    ("Mira Loma", "CA", 91752),
    ("Houston", "TX", 77002),
    ("Austin", "TX", 78701),
    ("Seattle", "WA", 98101),
    ("Tacoma", "WA", 98402),
    ("Portland", "OR", 97201),
    ("Denver", "CO", 80202),
    ("Phoenix", "AZ", 85001),
    ("Chicago", "IL", 60601),
    ("Naperville", "IL", 60540),
    ("Detroit", "MI", 48201),
    ("Columbus", "OH", 43004),
    ("Atlanta", "GA", 30301),
    ("Miami", "FL", 33101),
    ("Orlando", "FL", 32801),
    ("Boston", "MA", 2108),
    ("Newark", "NJ", 7101),
    ("Brooklyn", "NY", 11201),
    ("Albany", "NY", 12201),
    ("Raleigh", "NC", 27601),
    ("Nashville", "TN", 37201),
    ("Madison", "WI", 53703),
];

const FOREIGN: [(&str, &str); 4] = [
    ("Rome", "Italy"),
    ("Cancun", "Mexico"),
    ("Toronto", "Canada"),
    ("Tokyo", "Japan"),
];

const MCC_CODES: [u32; 24] = [
    5300, 5411, 5499, 5812, 5814, 5541, 4829, 5912, 5311, 4121, 5651, 5732, 7538, 5942, 4784,
    5815, 5310, 5921, 7832, 5193, 8021, 4900, 5211, 3390,
];

/// Shape of the `Amount` column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmountModel {
    /// Right-skewed purchase amounts with occasional negative refunds.
    LogNormal {
        median: f64,
        sigma: f64,
        refund_rate: f64,
    },
    /// Two alternating spending regimes. Each amount is
    /// `center + scale * g^3` with `g ~ N(±offset, spread)`, so the column is
    /// bimodal in dollars and each regime is Gaussian after a cube root.
    CubeRegimes {
        center: f64,
        scale: f64,
        offset: f64,
        spread: f64,
    },
}

impl Default for AmountModel {
    fn default() -> Self {
        AmountModel::LogNormal {
            median: 35.0,
            sigma: 0.9,
            refund_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub seed: u64,
    pub users: usize,
    pub rows_per_user: usize,
    pub fraud_rate: f64,
    /// Probabilities of swipe, chip and online transactions.
    pub use_chip_probs: [f64; 3],
    pub error_rate: f64,
    pub merchants_per_user: usize,
    pub amount: AmountModel,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: 1,
            users: 3,
            rows_per_user: 200,
            fraud_rate: 0.004206,
            use_chip_probs: [0.6, 0.3, 0.1],
            error_rate: 0.016,
            merchants_per_user: 40,
            amount: AmountModel::default(),
        }
    }
}

/// Same as [`generate_fixture_with`] using default shapes.
pub fn generate_fixture_dataset(seed: u64, users: usize, rows_per_user: usize) -> SequenceDataset {
    generate_fixture_with(&FixtureConfig {
        seed,
        users,
        rows_per_user,
        ..FixtureConfig::default()
    })
}

struct Merchant {
    name: String,
    city: String,
    state: Option<String>,
    zip: Option<String>,
    mcc: u32,
}

fn merchant_pool(rng: &mut ChaCha8Rng, count: usize, online: bool) -> Vec<Merchant> {
    (0..count.max(1))
        .map(|_| {
            let name = rng.random::<i64>().to_string();
            let mcc = MCC_CODES[rng.random_range(0..MCC_CODES.len())];
            if online {
                return Merchant {
                    name,
                    city: "ONLINE".into(),
                    state: None,
                    zip: None,
                    mcc,
                };
            }
            if rng.random::<f64>() < 0.05 {
                let (city, country) = FOREIGN[rng.random_range(0..FOREIGN.len())];
                return Merchant {
                    name,
                    city: city.into(),
                    state: Some(country.into()),
                    zip: None,
                    mcc,
                };
            }
            let (city, state, zip) = PLACES[rng.random_range(0..PLACES.len())];
            Merchant {
                name,
                city: city.into(),
                state: Some(state.into()),
                zip: Some(format!("{}.0", zip + rng.random_range(0..3))),
                mcc,
            }
        })
        .collect()
}

/// Picks an index with weight 1/(rank+1), so a few merchants dominate.
fn pick_popular(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for k in 0..n {
        u -= 1.0 / (k + 1) as f64;
        if u <= 0.0 {
            return k;
        }
    }
    n - 1
}

fn pick_weighted(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

pub fn generate_fixture_with(config: &FixtureConfig) -> SequenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let metadata = TableMetadata::transactions();
    let epoch = NaiveDate::from_ymd_opt(2010, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch");
    let gap = Exp::new(1.0_f64 / 720.0).expect("valid rate");

    let mut rows: Vec<Row> = Vec::with_capacity(config.users * config.rows_per_user);
    for u in 0..config.users {
        let user = ((u * 613 + 214) % 2000).to_string();
        let physical = merchant_pool(&mut rng, config.merchants_per_user, false);
        let online = merchant_pool(&mut rng, (config.merchants_per_user / 5).max(1), true);
        let mut now: NaiveDateTime =
            epoch + Duration::minutes(rng.random_range(0..5 * 365 * 24 * 60));
        let mut regime_high = rng.random::<bool>();

        for step in 0..config.rows_per_user {
            if step > 0 {
                now += Duration::minutes(gap.sample(&mut rng).round() as i64);
            }
            let fraud = rng.random::<f64>() < config.fraud_rate;
            let mut chip = pick_weighted(&mut rng, &config.use_chip_probs);
            if fraud && rng.random::<f64>() < 0.5 {
                chip = 2;
            }
            let merchant = if chip == 2 {
                &online[pick_popular(&mut rng, online.len())]
            } else {
                &physical[pick_popular(&mut rng, physical.len())]
            };
            let amount = match config.amount {
                AmountModel::LogNormal {
                    median,
                    sigma,
                    refund_rate,
                } => {
                    let x = LogNormal::new(median.ln(), sigma)
                        .expect("valid lognormal")
                        .sample(&mut rng);
                    if rng.random::<f64>() < refund_rate {
                        -x
                    } else {
                        x
                    }
                }
                AmountModel::CubeRegimes {
                    center,
                    scale,
                    offset,
                    spread,
                } => {
                    let mean = if regime_high { offset } else { -offset };
                    regime_high = !regime_high;
                    let g = Normal::new(mean, spread)
                        .expect("valid normal")
                        .sample(&mut rng);
                    center + scale * g * g * g
                }
            };
            let error = (rng.random::<f64>() < config.error_rate)
                .then(|| ERRORS[rng.random_range(0..ERRORS.len())]);

            let opt = |v: Option<&str>| v.map_or(CellValue::Missing, CellValue::category);
            rows.push(vec![
                CellValue::category(user.clone()),
                CellValue::category("0"),
                CellValue::category(now.year().to_string()),
                CellValue::category(now.month().to_string()),
                CellValue::category(now.day().to_string()),
                CellValue::category(format!("{:02}:{:02}", now.hour(), now.minute())),
                CellValue::category(format!("${amount:.2}")),
                CellValue::category(USE_CHIP_VALUES[chip]),
                CellValue::category(merchant.name.clone()),
                CellValue::category(merchant.city.clone()),
                opt(merchant.state.as_deref()),
                opt(merchant.zip.as_deref()),
                CellValue::category(merchant.mcc.to_string()),
                opt(error),
                CellValue::category(if fraud { "Yes" } else { "No" }),
            ]);
        }
    }
    SequenceDataset::from_rows(metadata, rows).expect("fixture rows match metadata")
}
