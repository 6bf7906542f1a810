//! Daily store × item sales: CSV ingestion and export, and a seeded
//! synthetic generator.
//!
//! CSV schema: header `date,store,item,sales`, ISO dates, positive integer
//! store and item ids, non-negative integer sales.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::TimeSeriesPanel;

pub const CSV_HEADER: [&str; 4] = ["date", "store", "item", "sales"];

/// Sales for every (date, store, item) on a contiguous daily calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesDataset {
    dates: Vec<NaiveDate>,
    stores: Vec<u32>,
    items: Vec<u32>,
    /// One `days × stores` block per item, in `items` order.
    sales: Vec<Array2<f64>>,
}

impl SalesDataset {
    pub fn new(dates: Vec<NaiveDate>, stores: Vec<u32>, items: Vec<u32>, sales: Vec<Array2<f64>>) -> Result<Self> {
        if dates.is_empty() || stores.is_empty() || items.is_empty() {
            return Err(Error::Data("dataset needs at least one date, store and item".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] - w[0] != Duration::days(1)) {
            return Err(Error::Data(format!(
                "dates are not contiguous between {} and {}",
                w[0], w[1]
            )));
        }
        if sales.len() != items.len() {
            return Err(Error::Shape(format!(
                "{} sales blocks for {} items",
                sales.len(),
                items.len()
            )));
        }
        for (block, item) in sales.iter().zip(&items) {
            if block.dim() != (dates.len(), stores.len()) {
                return Err(Error::Shape(format!(
                    "item {item}: sales block {:?}, expected ({}, {})",
                    block.dim(),
                    dates.len(),
                    stores.len()
                )));
            }
            if let Some(v) = block.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Data(format!(
                    "item {item}: sales must be finite and >= 0, found {v}"
                )));
            }
        }
        Ok(Self {
            dates,
            stores,
            items,
            sales,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stores(&self) -> &[u32] {
        &self.stores
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn record_count(&self) -> usize {
        self.dates.len() * self.stores.len() * self.items.len()
    }

    /// `days × stores` sales of the item at position `index`.
    pub fn item_sales(&self, index: usize) -> &Array2<f64> {
        &self.sales[index]
    }

    /// Panel of one item across stores (series ids `store<id>`).
    pub fn panel(&self, index: usize) -> Result<TimeSeriesPanel> {
        let ids = self.stores.iter().map(|s| format!("store{s}")).collect();
        TimeSeriesPanel::new(self.sales[index].clone(), ids, self.dates.clone())
    }

    pub fn panels(&self) -> Result<Vec<TimeSeriesPanel>> {
        (0..self.items.len()).map(|i| self.panel(i)).collect()
    }

    /// Keeps the first `n` items.
    pub fn with_items(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.items.len() {
            return Err(Error::Parameter(format!(
                "cannot keep {n} of {} items",
                self.items.len()
            )));
        }
        Self::new(
            self.dates.clone(),
            self.stores.clone(),
            self.items[..n].to_vec(),
            self.sales[..n].to_vec(),
        )
    }

    /// Writes the schema CSV, ordered by item, then store, then date.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(CSV_HEADER).map_err(csv_err)?;
        for (k, item) in self.items.iter().enumerate() {
            for (j, store) in self.stores.iter().enumerate() {
                for (t, date) in self.dates.iter().enumerate() {
                    let v = self.sales[k][[t, j]];
                    out.write_record([
                        date.format("%Y-%m-%d").to_string(),
                        store.to_string(),
                        item.to_string(),
                        format!("{v}"),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads and validates a sales CSV.
pub fn ingest_csv(path: &Path) -> Result<SalesDataset> {
    let file =
        File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file)
}

/// [`ingest_csv`] over any reader.
pub fn parse_csv<R: Read>(reader: R) -> Result<SalesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_error(1, &e.to_string()))?,
        None => return Err(parse_error(1, "empty file, expected header `date,store,item,sales`")),
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(parse_error(
            1,
            &format!(
                "header must be `date,store,item,sales`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut cells: HashMap<(u32, u32, NaiveDate), (f64, u64)> = HashMap::new();
    let mut dates = BTreeSet::new();
    let mut stores = BTreeSet::new();
    let mut items = BTreeSet::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, &e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(parse_error(line, &format!("expected 4 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| parse_error(line, &format!("bad date `{}`", &record[0])))?;
        let store = positive_id(&record[1], "store", line)?;
        let item = positive_id(&record[2], "item", line)?;
        let sales: u64 = record[3].parse().map_err(|_| {
            parse_error(
                line,
                &format!("sales must be a non-negative integer, found `{}`", &record[3]),
            )
        })?;
        if let Some((_, first)) = cells.insert((item, store, date), (sales as f64, line)) {
            return Err(parse_error(
                line,
                &format!("duplicate row for date {date}, store {store}, item {item} (first seen on line {first})"),
            ));
        }
        dates.insert(date);
        stores.insert(store);
        items.insert(item);
    }
    if cells.is_empty() {
        return Err(Error::Data("no sales rows".into()));
    }

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    if let Some(w) = dates.windows(2).find(|w| w[1] - w[0] != Duration::days(1)) {
        return Err(Error::Data(format!(
            "gap in dates: nothing between {} and {}",
            w[0], w[1]
        )));
    }
    let stores: Vec<u32> = stores.into_iter().collect();
    let items: Vec<u32> = items.into_iter().collect();
    let mut sales = Vec::with_capacity(items.len());
    for &item in &items {
        let mut block = Array2::zeros((dates.len(), stores.len()));
        for (j, &store) in stores.iter().enumerate() {
            for (t, &date) in dates.iter().enumerate() {
                match cells.get(&(item, store, date)) {
                    Some((v, _)) => block[[t, j]] = *v,
                    None => {
                        return Err(Error::Data(format!(
                            "missing sales for date {date}, store {store}, item {item}"
                        )))
                    }
                }
            }
        }
        sales.push(block);
    }
    SalesDataset::new(dates, stores, items, sales)
}

fn parse_error(line: u64, message: &str) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.to_string(),
    }
}

fn positive_id(field: &str, what: &str, line: u64) -> Result<u32> {
    match field.parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(parse_error(
            line,
            &format!("{what} must be a positive integer, found `{field}`"),
        )),
    }
}

/// Knobs of the synthetic generator. Levels are relative to each
/// (store, item) base level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stores: usize,
    pub n_items: usize,
    pub n_days: usize,
    /// Stores are split round-robin into this many groups, each with its own
    /// latent demand factor on top of a factor shared by all stores.
    pub n_clusters: usize,
    /// Scale of the latent factors; 0 makes stores independent apart from
    /// seasonality and trend.
    pub factor_loading: f64,
    /// Share of factor variance that is common to every store (the rest is
    /// per group).
    pub global_share: f64,
    /// AR(1) coefficient of the latent factors.
    pub persistence: f64,
    /// Upper bound of the per-item weekly amplitude.
    pub seasonality: f64,
    /// Upper bound of the per-item growth over one year.
    pub trend: f64,
    /// Idiosyncratic noise scale.
    pub noise: f64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stores: 10,
            n_items: 5,
            n_days: 730,
            n_clusters: 3,
            factor_loading: 0.3,
            global_share: 0.5,
            persistence: 0.9,
            seasonality: 0.2,
            trend: 0.1,
            noise: 0.1,
            start: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stores == 0 || self.n_items == 0 || self.n_days == 0 || self.n_clusters == 0 {
            return Err(Error::Parameter(
                "store, item, day and cluster counts must be at least 1".into(),
            ));
        }
        let non_negative = [
            ("factor loading", self.factor_loading),
            ("seasonality", self.seasonality),
            ("trend", self.trend),
            ("noise", self.noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.global_share) {
            return Err(Error::Parameter(format!(
                "global share must lie in [0, 1], got {}",
                self.global_share
            )));
        }
        if !(self.persistence.abs() < 1.0) {
            return Err(Error::Parameter(format!(
                "persistence must lie in (-1, 1), got {}",
                self.persistence
            )));
        }
        Ok(())
    }
}

/// Default generator with the given counts.
pub fn synthesize_dataset(n_stores: usize, n_items: usize, n_days: usize, seed: u64) -> Result<SalesDataset> {
    synthesize_with(
        &SynthConfig {
            n_stores,
            n_items,
            n_days,
            ..SynthConfig::default()
        },
        seed,
    )
}

/// Per item and store, sales are
///
/// ```text
/// level · (1 + weekly(day) + growth · t/365 + loading · factor(t) + noise · ε)
/// ```
///
/// rounded and floored at zero, where `factor` mixes a factor common to all
/// stores with the store group's own factor (both unit-variance AR(1)) and
/// `ε` is standard normal.
pub fn synthesize_with(config: &SynthConfig, seed: u64) -> Result<SalesDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (t_len, n_stores) = (config.n_days, config.n_stores);
    let store_scale: Vec<f64> = (0..n_stores).map(|_| rng.random_range(0.7..1.3)).collect();
    let innovation = (1.0 - config.persistence * config.persistence).sqrt();

    let ar_path = |rng: &mut ChaCha8Rng| {
        let mut x = std_normal.sample(rng);
        (0..t_len)
            .map(|_| {
                let v = x;
                x = config.persistence * x + innovation * std_normal.sample(rng);
                v
            })
            .collect::<Vec<f64>>()
    };

    let mut sales = Vec::with_capacity(config.n_items);
    for _ in 0..config.n_items {
        let base = rng.random_range(20.0..60.0);
        let amplitude = rng.random_range(0.0..=config.seasonality);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let growth = rng.random_range(0.0..=config.trend);
        let common = ar_path(&mut rng);
        let groups: Vec<Vec<f64>> = (0..config.n_clusters).map(|_| ar_path(&mut rng)).collect();
        let (wg, wc) = (config.global_share.sqrt(), (1.0 - config.global_share).sqrt());
        let mut block = Array2::zeros((t_len, n_stores));
        for s in 0..n_stores {
            let level = base * store_scale[s];
            let group = &groups[s % config.n_clusters];
            for t in 0..t_len {
                let weekly = amplitude * (std::f64::consts::TAU * (t % 7) as f64 / 7.0 + phase).sin();
                let factor = wg * common[t] + wc * group[t];
                let relative = 1.0
                    + weekly
                    + growth * t as f64 / 365.0
                    + config.factor_loading * factor
                    + config.noise * std_normal.sample(&mut rng);
                block[[t, s]] = (level * relative).round().max(0.0);
            }
        }
        sales.push(block);
    }
    let dates = (0..t_len).map(|t| config.start + Duration::days(t as i64)).collect();
    let stores = (1..=n_stores as u32).collect();
    let items = (1..=config.n_items as u32).collect();
    SalesDataset::new(dates, stores, items, sales)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "date,store,item,sales\n\
        2018-01-01,1,1,13\n2018-01-01,2,1,11\n\
        2018-01-02,1,1,14\n2018-01-02,2,1,9\n\
        2018-01-03,1,1,10\n2018-01-03,2,1,0\n";

    #[test]
    fn parses_well_formed_file() {
        let d = parse_csv(SMALL.as_bytes()).unwrap();
        assert_eq!(d.n_days(), 3);
        assert_eq!(d.stores(), &[1, 2]);
        let p = d.panel(0).unwrap();
        assert_eq!(p.values().dim(), (3, 2));
        assert_eq!(p.values()[[1, 1]], 9.0);
    }

    #[test]
    fn duplicate_rows_are_parse_errors() {
        let text = format!("{SMALL}2018-01-02,2,1,9\n");
        match parse_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 8);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = SMALL.replace("2018-01-02,2,1,9", "2018-01-02,2,1,-4");
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Parse { line: 5, .. })));
        let text = SMALL.replace("2018-01-03,1,1,10", "2018-13-03,1,1,10");
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Parse { line: 6, .. })));
        assert!(matches!(
            parse_csv("day,store,item,sales\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn date_gap_is_named() {
        let text = SMALL
            .replace("2018-01-02", "2018-01-05")
            .replace("2018-01-03", "2018-01-06");
        match parse_csv(text.as_bytes()) {
            Err(Error::Data(msg)) => assert!(msg.contains("2018-01-01") && msg.contains("2018-01-05")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_a_data_error() {
        let text = SMALL.replace("2018-01-03,2,1,0\n", "");
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn csv_round_trip() {
        let d = synthesize_dataset(3, 2, 20, 5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice()).unwrap(), d);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 2 * 20);
    }

    #[test]
    fn synthesis_is_seeded() {
        let a = synthesize_dataset(4, 2, 50, 1).unwrap();
        assert_eq!(a, synthesize_dataset(4, 2, 50, 1).unwrap());
        assert_ne!(a, synthesize_dataset(4, 2, 50, 2).unwrap());
        assert!(a.item_sales(0).iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn bad_synth_config() {
        let c = SynthConfig {
            n_stores: 0,
            ..Default::default()
        };
        assert!(synthesize_with(&c, 0).is_err());
        let c = SynthConfig {
            persistence: 1.0,
            ..Default::default()
        };
        assert!(synthesize_with(&c, 0).is_err());
    }
}
