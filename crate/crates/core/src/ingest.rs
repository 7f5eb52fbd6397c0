//! Readers for Human Mortality Database 1x1 tables and period-effect CSVs.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataGap, Error, Result};
use crate::mortality::MortalityDataset;
use crate::panel::KappaPanel;
use crate::par::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HmdKind {
    Deaths,
    Exposures,
}

impl HmdKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            HmdKind::Deaths => "Deaths_1x1",
            HmdKind::Exposures => "Exposures_1x1",
        }
    }

    fn label(self) -> &'static str {
        match self {
            HmdKind::Deaths => "deaths",
            HmdKind::Exposures => "exposures",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            _ => Err(Error::Spec(format!("unknown sex {s:?}, expected female or male"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HmdAge {
    Exact(u32),
    /// Open interval such as `110+`.
    OpenFrom(u32),
}

impl HmdAge {
    pub fn lower(self) -> u32 {
        match self {
            HmdAge::Exact(a) | HmdAge::OpenFrom(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmdRow {
    pub year: i32,
    pub age: HmdAge,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub total: Option<f64>,
}

impl HmdRow {
    pub fn value(&self, sex: Sex) -> Option<f64> {
        match sex {
            Sex::Female => self.female,
            Sex::Male => self.male,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmdTable {
    pub country: String,
    pub kind: HmdKind,
    pub rows: Vec<HmdRow>,
}

fn parse_value(tok: &str, line: usize, what: &str) -> Result<Option<f64>> {
    if tok == "." {
        return Ok(None);
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            message: format!("{what}: cannot read {tok:?} as a number"),
        }),
    }
}

/// Parse one data line. `None` for year markers that the table should skip.
///
/// Years flagged with a trailing `-` describe a territory before a border
/// change and are dropped; the `+` variant of the same year is kept.
pub fn parse_hmd_line(text: &str, line: usize) -> Result<Option<HmdRow>> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let year_tok = toks.first().copied().unwrap_or("");
    let (year_digits, skip) = match year_tok.strip_suffix('-') {
        Some(y) => (y, true),
        None => (year_tok.strip_suffix('+').unwrap_or(year_tok), false),
    };
    let year = year_digits.parse::<i32>().map_err(|_| Error::Parse {
        line,
        message: format!("year: cannot read {year_tok:?}"),
    })?;
    let age = match toks.get(1) {
        None => None,
        Some(tok) => {
            let (digits, open) = match tok.strip_suffix('+') {
                Some(d) => (d, true),
                None => (*tok, false),
            };
            let a = digits.parse::<u32>().map_err(|_| Error::Parse {
                line,
                message: format!("age: cannot read {tok:?}"),
            })?;
            Some(if open { HmdAge::OpenFrom(a) } else { HmdAge::Exact(a) })
        }
    };
    let mut values = Vec::with_capacity(3);
    for (tok, what) in toks.iter().skip(2).zip(["female", "male", "total", "extra"]) {
        values.push(parse_value(tok, line, what)?);
    }
    if toks.len() != 5 {
        return Err(Error::Format {
            line,
            expected: 5,
            found: toks.len(),
        });
    }
    if skip {
        return Ok(None);
    }
    Ok(Some(HmdRow {
        year,
        age: age.expect("five columns"),
        female: values[0],
        male: values[1],
        total: values[2],
    }))
}

/// Parse an HMD `Deaths_1x1` or `Exposures_1x1` text table. Everything up to
/// and including the `Year Age Female Male Total` header is skipped.
pub fn parse_hmd<R: Read>(mut input: R, kind: HmdKind, country: &str) -> Result<HmdTable> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut rows = Vec::new();
    let mut in_body = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if !in_body {
            if trimmed
                .split_whitespace()
                .next()
                .is_some_and(|t| t.eq_ignore_ascii_case("year"))
            {
                in_body = true;
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if let Some(row) = parse_hmd_line(trimmed, line)? {
            rows.push(row);
        }
    }
    if !in_body {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "no \"Year Age Female Male Total\" header found".into(),
        });
    }
    Ok(HmdTable {
        country: country.to_string(),
        kind,
        rows,
    })
}

fn default_ages() -> (u32, u32) {
    (0, 95)
}

fn default_years() -> (i32, i32) {
    (1951, 2011)
}

/// Which slice of the HMD tables to assemble. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub countries: Vec<String>,
    pub sex: Sex,
    #[serde(default = "default_ages")]
    pub ages: (u32, u32),
    #[serde(default = "default_years")]
    pub years: (i32, i32),
}

impl DatasetSpec {
    pub fn new(countries: Vec<String>, sex: Sex) -> Self {
        DatasetSpec {
            countries,
            sex,
            ages: default_ages(),
            years: default_years(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.countries.is_empty() {
            return Err(Error::Spec("no countries requested".into()));
        }
        for (i, c) in self.countries.iter().enumerate() {
            if self.countries[..i].contains(c) {
                return Err(Error::Spec(format!("country {c} listed twice")));
            }
        }
        if self.ages.0 > self.ages.1 {
            return Err(Error::Spec(format!("empty age range {}-{}", self.ages.0, self.ages.1)));
        }
        if self.years.0 > self.years.1 {
            return Err(Error::Spec(format!("empty year range {}-{}", self.years.0, self.years.1)));
        }
        Ok(())
    }

    pub fn age_list(&self) -> Vec<u32> {
        (self.ages.0..=self.ages.1).collect()
    }

    pub fn year_list(&self) -> Vec<i32> {
        (self.years.0..=self.years.1).collect()
    }
}

fn index_table(table: &HmdTable, sex: Sex) -> Result<HashMap<(i32, u32), Option<f64>>> {
    let mut map = HashMap::with_capacity(table.rows.len());
    for row in &table.rows {
        if map.insert((row.year, row.age.lower()), row.value(sex)).is_some() {
            return Err(Error::Data(format!(
                "{} {} table has two rows for year {} age {}",
                table.country,
                table.kind.label(),
                row.year,
                row.age.lower()
            )));
        }
    }
    Ok(map)
}

fn find<'a>(tables: &'a [HmdTable], country: &str, kind: HmdKind) -> Result<&'a HmdTable> {
    let mut it = tables.iter().filter(|t| t.country == country);
    match (it.next(), it.next()) {
        (Some(t), None) => Ok(t),
        (None, _) => Err(Error::Spec(format!("no {} table for {country}", kind.label()))),
        (Some(_), Some(_)) => Err(Error::Spec(format!("two {} tables for {country}", kind.label()))),
    }
}

/// Build the age x year x country array for one sex. Every requested cell
/// must be present in both tables; all gaps are reported together.
pub fn assemble_dataset(
    deaths: &[HmdTable],
    exposures: &[HmdTable],
    spec: &DatasetSpec,
) -> Result<MortalityDataset> {
    spec.validate()?;
    let ages = spec.age_list();
    let years = spec.year_list();
    let mut d_maps = Vec::new();
    let mut e_maps = Vec::new();
    for country in &spec.countries {
        d_maps.push(index_table(find(deaths, country, HmdKind::Deaths)?, spec.sex)?);
        e_maps.push(index_table(find(exposures, country, HmdKind::Exposures)?, spec.sex)?);
    }
    let (nt, nc) = (years.len(), spec.countries.len());
    let n = ages.len() * nt * nc;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut gaps = Vec::new();
    for (c, country) in spec.countries.iter().enumerate() {
        for (t, &year) in years.iter().enumerate() {
            for (x, &age) in ages.iter().enumerate() {
                let i = (x * nt + t) * nc + c;
                for (map, out, what) in [(&d_maps[c], &mut d, "deaths"), (&e_maps[c], &mut e, "exposures")] {
                    match map.get(&(year, age)).copied().flatten() {
                        Some(v) => out[i] = v,
                        None => gaps.push(DataGap {
                            country: country.clone(),
                            year,
                            age,
                            what,
                        }),
                    }
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::MissingData(gaps));
    }
    MortalityDataset::new(ages, years, spec.countries.clone(), d, e)
}

/// Read `{COUNTRY}.Deaths_1x1.txt` and `{COUNTRY}.Exposures_1x1.txt` for every
/// requested country from `dir` and assemble them.
pub fn read_hmd_directory(dir: &Path, spec: &DatasetSpec) -> Result<MortalityDataset> {
    spec.validate()?;
    let jobs: Vec<(String, HmdKind)> = spec
        .countries
        .iter()
        .flat_map(|c| [(c.clone(), HmdKind::Deaths), (c.clone(), HmdKind::Exposures)])
        .collect();
    let tables: Vec<HmdTable> = jobs
        .into_par_iter()
        .map(|(country, kind)| {
            let path = dir.join(format!("{country}.{}.txt", kind.file_stem()));
            let file = std::fs::File::open(&path).map_err(|e| {
                Error::Spec(format!("cannot open {}: {e}", path.display()))
            })?;
            parse_hmd(std::io::BufReader::new(file), kind, &country).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let (deaths, exposures): (Vec<_>, Vec<_>) =
        tables.into_iter().partition(|t| t.kind == HmdKind::Deaths);
    assemble_dataset(&deaths, &exposures, spec)
}

/// Read a `year,population,kappa` CSV into a dense panel. Populations keep
/// their order of first appearance; years are sorted.
pub fn load_kappa_csv<R: Read>(input: R) -> Result<KappaPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (iy, ip, ik) = (col("year")?, col("population")?, col("kappa")?);
    let mut pops: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(i32, usize), f64> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let year = field(iy).parse::<i32>().map_err(|_| Error::Parse {
            line,
            message: format!("year: cannot read {:?}", field(iy)),
        })?;
        let kappa = field(ik).parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("kappa: cannot read {:?}", field(ik)),
        })?;
        let pop = field(ip).to_string();
        let c = match pops.iter().position(|p| *p == pop) {
            Some(c) => c,
            None => {
                pops.push(pop.clone());
                pops.len() - 1
            }
        };
        if cells.insert((year, c), kappa).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate entry for year {year}, population {pop}"),
            });
        }
    }
    let mut years: Vec<i32> = cells.keys().map(|k| k.0).collect();
    years.dedup();
    let mut values = Vec::with_capacity(years.len() * pops.len());
    for &year in &years {
        for (c, pop) in pops.iter().enumerate() {
            match cells.get(&(year, c)) {
                Some(&v) => values.push(v),
                None => {
                    return Err(Error::Gap {
                        year,
                        population: pop.clone(),
                    })
                }
            }
        }
    }
    KappaPanel::new(values, years, pops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_lines() {
        let r = parse_hmd_line("1950  42  123.45  130.00  253.45", 7).unwrap().unwrap();
        assert_eq!(r.year, 1950);
        assert_eq!(r.age, HmdAge::Exact(42));
        assert_eq!((r.female, r.male, r.total), (Some(123.45), Some(130.0), Some(253.45)));

        let r = parse_hmd_line("1950  110+  0.5  .  0.5", 7).unwrap().unwrap();
        assert_eq!(r.age, HmdAge::OpenFrom(110));
        assert_eq!(r.male, None);
        assert_eq!(r.female, Some(0.5));

        match parse_hmd_line("1950 42 abc", 9) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_hmd_line("1950 42 1.0 2.0", 3),
            Err(Error::Format { line: 3, expected: 5, found: 4 })
        ));
        assert!(matches!(
            parse_hmd_line("1950 42 1 2 3 4", 3),
            Err(Error::Format { found: 6, .. })
        ));
    }

    #[test]
    fn territory_markers() {
        assert!(parse_hmd_line("1959-  3  1.0 1.0 2.0", 1).unwrap().is_none());
        assert_eq!(parse_hmd_line("1959+  3  1.0 1.0 2.0", 1).unwrap().unwrap().year, 1959);
    }

    #[test]
    fn header_is_skipped() {
        let text = "Sweden, Deaths (period 1x1)\tLast modified: 2020\n\n   Year      Age         Female          Male         Total\n   1751        0       1.0       2.0       3.0\n\n   1751      110+      .       .       .\n";
        let t = parse_hmd(text.as_bytes(), HmdKind::Deaths, "SWE").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1].total, None);
        assert!(parse_hmd("no header here\n1751 0 1 2 3\n".as_bytes(), HmdKind::Deaths, "SWE").is_err());
        match parse_hmd("x\n\nYear Age Female Male Total\n1751 0 1 2 3\n1752 0 1 x 3\n".as_bytes(), HmdKind::Deaths, "SWE") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kappa_csv() {
        let p = load_kappa_csv("year,population,kappa\n2000,A,1\n2000,B,2\n2001,A,3\n2001,B,4\n2002,A,5\n2002,B,6\n".as_bytes()).unwrap();
        assert_eq!((p.n_times(), p.n_populations()), (3, 2));
        assert_eq!(p.get(2, 1), 6.0);

        let gap = load_kappa_csv("year,population,kappa\n2000,A,1\n2000,B,2\n2001,A,3\n2002,A,5\n2002,B,6\n".as_bytes());
        assert!(matches!(gap, Err(Error::Gap { year: 2001, .. })));

        match load_kappa_csv("year,population,kappa\n2000,A,1\n2000,A,2\n".as_bytes()) {
            Err(Error::Parse { message, line }) => {
                assert!(message.contains("duplicate"));
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_defaults_and_validation() {
        let s: DatasetSpec = serde_json::from_str(r#"{"countries":["SWE"],"sex":"female"}"#).unwrap();
        assert_eq!(s.ages, (0, 95));
        assert_eq!(s.years, (1951, 2011));
        assert_eq!(s.age_list().len(), 96);
        assert_eq!(s.year_list().len(), 61);
        let mut bad = s.clone();
        bad.ages = (10, 5);
        assert!(matches!(bad.validate(), Err(Error::Spec(_))));
        let mut dup = s;
        dup.countries.push("SWE".into());
        assert!(dup.validate().is_err());
    }
}
