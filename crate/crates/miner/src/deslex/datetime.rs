//! Recognition, perturbation and re-rendering of date/time mentions.

use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::text::{fold, Language};

const PT_MONTHS: [&str; 12] = [
    "janeiro", "fevereiro", "março", "abril", "maio", "junho", "julho", "agosto", "setembro", "outubro",
    "novembro", "dezembro",
];
const EN_MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

/// Which kinds of variation may be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatetimeVariants {
    /// Re-render the same value in another recognised format.
    pub format: bool,
    /// Change the value (day, month, year, hour or minute) within valid ranges.
    pub content: bool,
}

impl Default for DatetimeVariants {
    fn default() -> Self {
        DatetimeVariants {
            format: true,
            content: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtValue {
    Time { hour: u32, minute: u32 },
    Date { day: u32, month: u32, year: Option<i32> },
}

/// Surface formats the parser recognises and the renderer can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtFormat {
    /// `10:00`
    Colon,
    /// `10h00`, `10h`
    HourH,
    /// `10 horas`, `10 horas e 30 minutos`
    PtWords,
    /// `10:30 am`, `10:30 a.m.`
    EnMeridiem,
    /// `12 de março de 2020` (month capitalised when `true`)
    PtLong(bool),
    /// `12/03/2020`
    Slash,
    /// `12-03-2020`
    Dash,
    /// `12 March 2020`
    EnLong,
    /// `March 12, 2020`
    EnUs,
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static pattern"))
}

fn month_index(name: &str) -> Option<u32> {
    let f = fold(name);
    PT_MONTHS
        .iter()
        .chain(EN_MONTHS.iter())
        .position(|m| fold(m) == f)
        .map(|i| (i % 12) as u32 + 1)
}

pub fn days_in_month(month: u32, year: Option<i32>) -> u32 {
    match month {
        4 | 6 | 9 | 11 => 30,
        2 => match year {
            Some(y) if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 => 29,
            Some(_) => 28,
            None => 28,
        },
        _ => 31,
    }
}

fn valid(v: &DtValue) -> bool {
    match *v {
        DtValue::Time { hour, minute } => hour < 24 && minute < 60,
        DtValue::Date { day, month, year } => (1..=12).contains(&month) && day >= 1 && day <= days_in_month(month, year),
    }
}

/// Parse a whole surface (surrounding whitespace ignored).
pub fn parse_datetime(surface: &str) -> Option<(DtValue, DtFormat)> {
    static COLON: OnceLock<Regex> = OnceLock::new();
    static HOURH: OnceLock<Regex> = OnceLock::new();
    static PTWORDS: OnceLock<Regex> = OnceLock::new();
    static MERID: OnceLock<Regex> = OnceLock::new();
    static PTLONG: OnceLock<Regex> = OnceLock::new();
    static NUMERIC: OnceLock<Regex> = OnceLock::new();
    static ENLONG: OnceLock<Regex> = OnceLock::new();
    static ENUS: OnceLock<Regex> = OnceLock::new();

    let s = surface.trim();
    let num = |x: &str| x.parse::<u32>().ok();
    let (value, format) = if let Some(c) = re(&COLON, r"^(\d{1,2}):(\d{2})$").captures(s) {
        (DtValue::Time { hour: num(&c[1])?, minute: num(&c[2])? }, DtFormat::Colon)
    } else if let Some(c) = re(&HOURH, r"^(\d{1,2})h(\d{2})?$").captures(s) {
        let minute = c.get(2).map_or(Some(0), |m| num(m.as_str()))?;
        (DtValue::Time { hour: num(&c[1])?, minute }, DtFormat::HourH)
    } else if let Some(c) = re(&PTWORDS, r"^(\d{1,2}) horas(?: e (\d{1,2}) minutos)?$").captures(s) {
        let minute = c.get(2).map_or(Some(0), |m| num(m.as_str()))?;
        (DtValue::Time { hour: num(&c[1])?, minute }, DtFormat::PtWords)
    } else if let Some(c) = re(&MERID, r"^(\d{1,2}):(\d{2}) ?([ap])\.?m\.?$").captures(s) {
        let h12 = num(&c[1])?;
        if !(1..=12).contains(&h12) {
            return None;
        }
        let hour = (h12 % 12) + if &c[3] == "p" { 12 } else { 0 };
        (DtValue::Time { hour, minute: num(&c[2])? }, DtFormat::EnMeridiem)
    } else if let Some(c) = re(&PTLONG, r"^(\d{1,2}) de (\p{L}+)(?: de (\d{4}))?$").captures(s) {
        let month = month_index(&c[2]).filter(|m| fold(&c[2]) == fold(PT_MONTHS[*m as usize - 1]))?;
        let cap = c[2].chars().next().is_some_and(char::is_uppercase);
        let year = c.get(3).and_then(|y| y.as_str().parse().ok());
        (DtValue::Date { day: num(&c[1])?, month, year }, DtFormat::PtLong(cap))
    } else if let Some(c) = re(&NUMERIC, r"^(\d{1,2})([/-])(\d{1,2})[/-](\d{4})$").captures(s) {
        let f = if &c[2] == "/" { DtFormat::Slash } else { DtFormat::Dash };
        (DtValue::Date { day: num(&c[1])?, month: num(&c[3])?, year: c[4].parse().ok() }, f)
    } else if let Some(c) = re(&ENLONG, r"^(\d{1,2}) (\p{L}+) (\d{4})$").captures(s) {
        let month = month_index(&c[2]).filter(|m| c[2] == *EN_MONTHS[*m as usize - 1])?;
        (DtValue::Date { day: num(&c[1])?, month, year: c[3].parse().ok() }, DtFormat::EnLong)
    } else if let Some(c) = re(&ENUS, r"^(\p{L}+) (\d{1,2}), (\d{4})$").captures(s) {
        let month = month_index(&c[1]).filter(|m| c[1] == *EN_MONTHS[*m as usize - 1])?;
        (DtValue::Date { day: num(&c[2])?, month, year: c[3].parse().ok() }, DtFormat::EnUs)
    } else {
        return None;
    };
    valid(&value).then_some((value, format))
}

/// Render `value` in `format`. Formats that cannot express the value (a date
/// without a year in a numeric form) return `None`.
pub fn render(value: &DtValue, format: DtFormat) -> Option<String> {
    match (*value, format) {
        (DtValue::Time { hour, minute }, DtFormat::Colon) => Some(format!("{hour:02}:{minute:02}")),
        (DtValue::Time { hour, minute }, DtFormat::HourH) => Some(format!("{hour}h{minute:02}")),
        (DtValue::Time { hour, minute }, DtFormat::PtWords) => Some(if minute == 0 {
            format!("{hour} horas")
        } else {
            format!("{hour} horas e {minute} minutos")
        }),
        (DtValue::Time { hour, minute }, DtFormat::EnMeridiem) => {
            let h12 = if hour % 12 == 0 { 12 } else { hour % 12 };
            Some(format!("{h12}:{minute:02} {}", if hour < 12 { "am" } else { "pm" }))
        }
        (DtValue::Date { day, month, year }, DtFormat::PtLong(cap)) => {
            let mut m = PT_MONTHS[month as usize - 1].to_string();
            if cap {
                m = m[..1].to_uppercase() + &m[1..];
            }
            Some(match year {
                Some(y) => format!("{day} de {m} de {y}"),
                None => format!("{day} de {m}"),
            })
        }
        (DtValue::Date { day, month, year: Some(y) }, DtFormat::Slash) => Some(format!("{day:02}/{month:02}/{y}")),
        (DtValue::Date { day, month, year: Some(y) }, DtFormat::Dash) => Some(format!("{day:02}-{month:02}-{y}")),
        (DtValue::Date { day, month, year: Some(y) }, DtFormat::EnLong) => {
            Some(format!("{day} {} {y}", EN_MONTHS[month as usize - 1]))
        }
        (DtValue::Date { day, month, year: Some(y) }, DtFormat::EnUs) => {
            Some(format!("{} {day}, {y}", EN_MONTHS[month as usize - 1]))
        }
        _ => None,
    }
}

fn formats_for(value: &DtValue, language: Language) -> Vec<DtFormat> {
    let all: &[DtFormat] = match (value, language) {
        (DtValue::Time { .. }, Language::Pt) => &[DtFormat::Colon, DtFormat::HourH, DtFormat::PtWords],
        (DtValue::Time { .. }, Language::En) => &[DtFormat::Colon, DtFormat::EnMeridiem],
        (DtValue::Date { .. }, Language::Pt) => &[DtFormat::PtLong(false), DtFormat::Slash, DtFormat::Dash],
        (DtValue::Date { .. }, Language::En) => &[DtFormat::EnLong, DtFormat::EnUs, DtFormat::Slash],
    };
    all.iter().copied().filter(|f| render(value, *f).is_some()).collect()
}

fn vary_content(value: &DtValue, rng: &mut impl Rng) -> DtValue {
    match *value {
        DtValue::Time { hour, minute } => {
            if rng.gen_bool(0.5) {
                let mut h = rng.gen_range(0..23);
                if h >= hour {
                    h += 1;
                }
                DtValue::Time { hour: h, minute }
            } else {
                let mut m = rng.gen_range(0..59);
                if m >= minute {
                    m += 1;
                }
                DtValue::Time { hour, minute: m }
            }
        }
        DtValue::Date { day, month, year } => match rng.gen_range(0..3) {
            0 => {
                let n = days_in_month(month, year);
                let mut d = rng.gen_range(1..n);
                if d >= day {
                    d += 1;
                }
                DtValue::Date { day: d, month, year }
            }
            1 => {
                let mut m = rng.gen_range(1..12);
                if m >= month {
                    m += 1;
                }
                DtValue::Date { day: day.min(days_in_month(m, year)), month: m, year }
            }
            _ => {
                let y = year.map(|y| y + if rng.gen_bool(0.5) { 1 } else { -1 });
                DtValue::Date { day: day.min(days_in_month(month, y)), month, year: y }
            }
        },
    }
}

/// Vary a date/time mention in format or content. Mentions that do not
/// parse (spelled-out dates and times) are returned unchanged.
pub fn perturb_datetime(surface: &str, language: Language, rules: &DatetimeVariants, rng: &mut impl Rng) -> String {
    let Some((value, format)) = parse_datetime(surface) else {
        log::debug!("unparseable date/time `{surface}` left unchanged");
        return surface.to_string();
    };
    let do_format = match (rules.format, rules.content) {
        (false, false) => return surface.to_string(),
        (true, false) => true,
        (false, true) => false,
        (true, true) => rng.gen_bool(0.5),
    };
    if do_format {
        let options: Vec<DtFormat> = formats_for(&value, language)
            .into_iter()
            .filter(|f| render(&value, *f).as_deref() != Some(surface.trim()))
            .collect();
        if options.is_empty() {
            return surface.to_string();
        }
        render(&value, options[rng.gen_range(0..options.len())]).expect("filtered renderable")
    } else {
        let new = vary_content(&value, rng);
        render(&new, format).unwrap_or_else(|| surface.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_known_forms() {
        assert_eq!(parse_datetime("10:00"), Some((DtValue::Time { hour: 10, minute: 0 }, DtFormat::Colon)));
        assert_eq!(parse_datetime("9h30").unwrap().0, DtValue::Time { hour: 9, minute: 30 });
        assert_eq!(parse_datetime("12 horas e 15 minutos").unwrap().0, DtValue::Time { hour: 12, minute: 15 });
        assert_eq!(parse_datetime("3:05 p.m.").unwrap().0, DtValue::Time { hour: 15, minute: 5 });
        assert_eq!(
            parse_datetime("12 de março de 2020").unwrap().0,
            DtValue::Date { day: 12, month: 3, year: Some(2020) }
        );
        assert_eq!(parse_datetime("29/02/2021"), None);
        assert_eq!(parse_datetime("March 4, 2019").unwrap().1, DtFormat::EnUs);
        assert_eq!(parse_datetime("às dez horas"), None);
        assert_eq!(parse_datetime("25:00"), None);
    }

    #[test]
    fn colon_time_format_variant() {
        let rules = DatetimeVariants { format: true, content: false };
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            seen.insert(perturb_datetime("10:00", Language::Pt, &rules, &mut rng));
        }
        assert!(seen.contains("10h00"));
        assert!(seen.iter().all(|s| s == "10h00" || s == "10 horas"), "{seen:?}");
    }

    #[test]
    fn day_shift_stays_in_march_2020() {
        let rules = DatetimeVariants { format: false, content: true };
        for seed in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = perturb_datetime("12 de março de 2020", Language::Pt, &rules, &mut rng);
            let (v, f) = parse_datetime(&out).unwrap_or_else(|| panic!("`{out}` does not re-parse"));
            assert_eq!(f, DtFormat::PtLong(false));
            assert_ne!(out, "12 de março de 2020");
            if let DtValue::Date { day, month, year } = v {
                assert!(day >= 1 && day <= days_in_month(month, year));
            }
        }
    }

    #[test]
    fn unparseable_is_verbatim() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = "às dez horas";
        assert_eq!(perturb_datetime(s, Language::Pt, &DatetimeVariants::default(), &mut rng), s);
    }

    #[test]
    fn every_output_reparses() {
        let inputs = ["10:00", "9h", "23h45", "14 horas", "1 de Janeiro de 2021", "31/12/1999", "5 May 2018", "11:59 p.m.", "28 de fevereiro"];
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for s in inputs {
                let lang = if s.contains("May") || s.contains("m.") { Language::En } else { Language::Pt };
                let out = perturb_datetime(s, lang, &DatetimeVariants::default(), &mut rng);
                assert!(parse_datetime(&out).is_some(), "{s} -> {out}");
            }
        }
    }
}
