//! Text file formats for rides and profiles.
//!
//! A ride file is UTF-8 text made of a versioned header line, an incident
//! CSV block, a separator line and a sample CSV block:
//!
//! ```text
//! simra-spec v1#Berlin
//! key,lat,lon,ts,bike,childCheckBox,trailerCheckBox,pLoc,incident,scary,desc,i1,...,i10
//! 0,52.512345,13.321000,1570000002000,0,0,0,0,7,1,parked car,0,0,0,0,0,0,1,0,0,0
//! =========================
//! lat,lon,X,Y,Z,timeStamp,acc,a,b,c
//! 52.512345,13.321000,0.120,9.810,-0.300,1570000000000,4.00,12.000,-3.500,0.250
//! ,,0.100,9.790,-0.310,1570000000120,,,,
//! ```
//!
//! Serialization is canonical: coordinates carry 6 decimals, accelerations
//! and orientation angles 3, accuracy radii 2. Incident keys are the row
//! position, offset by [`AUTO_DETECTED_KEY_OFFSET`] for auto-detected
//! candidates. When a ride has no incidents but a non-default cyclist
//! context, the block holds a single context row whose key is empty.
//! Ride identifiers are not part of the file; [`parse_ride`] derives one
//! from the content.

use std::fmt::Write as _;

use crate::error::{ParseError, ValidationError};
use crate::geo::GeoPoint;
use crate::ride::{
    validate_region, validate_sample, BikeType, CyclistContext, Gender, Incident, IncidentType, Participant,
    Participants, PhoneLocation, Profile, Ride, RideId, RideSample, HOURS_PER_DAY,
};

pub const FORMAT_MAGIC: &str = "simra-spec";
pub const FORMAT_VERSION: &str = "v1";
pub const INCIDENT_HEADER: &str =
    "key,lat,lon,ts,bike,childCheckBox,trailerCheckBox,pLoc,incident,scary,desc,i1,i2,i3,i4,i5,i6,i7,i8,i9,i10";
pub const SEPARATOR: &str = "=========================";
pub const SAMPLE_HEADER: &str = "lat,lon,X,Y,Z,timeStamp,acc,a,b,c";
pub const PROFILE_FIXED_COLUMNS: [&str; 7] =
    ["birth", "gender", "region", "experience", "rideDuration", "waitDuration", "numIncidents"];
/// Incident keys at or above this value mark auto-detected candidates.
pub const AUTO_DETECTED_KEY_OFFSET: u64 = 1000;

const INCIDENT_FIELDS: usize = 21;
const SAMPLE_FIELDS: usize = 10;

struct Record {
    line: usize,
    fields: Vec<String>,
    quoted: bool,
}

impl Record {
    fn is_single(&self, text: &str) -> bool {
        !self.quoted && self.fields.len() == 1 && self.fields[0] == text
    }

    fn joined(&self) -> String {
        self.fields.join(",")
    }
}

/// Quote-aware CSV record splitter that tracks the starting line of each
/// record. Quoted fields may span lines.
struct Records<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl<'a> Records<'a> {
    fn new(text: &'a str) -> Self {
        Records { chars: text.chars().peekable(), line: 1 }
    }

    fn next_record(&mut self) -> Result<Option<Record>, ParseError> {
        if self.chars.peek().is_none() {
            return Ok(None);
        }
        let start = self.line;
        let mut fields = Vec::new();
        let mut field = String::new();
        let mut quoted_any = false;
        let mut at_field_start = true;
        loop {
            match self.chars.next() {
                None | Some('\n') => {
                    if field.ends_with('\r') && !quoted_any {
                        field.pop();
                    }
                    fields.push(field);
                    self.line += 1;
                    return Ok(Some(Record { line: start, fields, quoted: quoted_any }));
                }
                Some(',') => {
                    fields.push(std::mem::take(&mut field));
                    at_field_start = true;
                }
                Some('"') if at_field_start => {
                    quoted_any = true;
                    at_field_start = false;
                    loop {
                        match self.chars.next() {
                            None => return Err(ParseError::format(start, "unterminated quoted field")),
                            Some('"') if self.chars.peek() == Some(&'"') => {
                                self.chars.next();
                                field.push('"');
                            }
                            Some('"') => break,
                            Some(c) => {
                                if c == '\n' {
                                    self.line += 1;
                                }
                                field.push(c);
                            }
                        }
                    }
                    match self.chars.peek() {
                        None | Some(',') | Some('\n') => {}
                        Some('\r') => {}
                        Some(_) => return Err(ParseError::format(self.line, "unexpected text after closing quote")),
                    }
                }
                Some('"') => return Err(ParseError::format(self.line, "stray quote in unquoted field")),
                Some(c) => {
                    at_field_start = false;
                    field.push(c);
                }
            }
        }
    }
}

fn utf8(bytes: &[u8]) -> Result<&str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count();
        ParseError::format(line, "input is not valid UTF-8")
    })
}

fn parse_num<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T, ParseError> {
    raw.parse::<T>().map_err(|_| ParseError::format(line, format!("{name}: cannot parse {raw:?}")))
}

fn parse_f64(line: usize, name: &str, raw: &str) -> Result<f64, ParseError> {
    let v: f64 = parse_num(line, name, raw)?;
    if !v.is_finite() {
        return Err(ParseError::format(line, format!("{name}: non-finite value {raw:?}")));
    }
    Ok(v)
}

fn parse_opt_f64(line: usize, name: &str, raw: &str) -> Result<Option<f64>, ParseError> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse_f64(line, name, raw).map(Some)
    }
}

fn parse_flag(line: usize, name: &str, raw: &str) -> Result<bool, ParseError> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(ParseError::format(line, format!("{name}: expected 0 or 1, got {raw:?}"))),
    }
}

fn parse_code(line: usize, name: &str, raw: &str) -> Result<u8, ParseError> {
    parse_num(line, name, raw)
}

fn invalid(line: usize) -> impl Fn(ValidationError) -> ParseError {
    move |source| ParseError::Invalid { line, source }
}

fn expect_record(records: &mut Records<'_>, what: &str, last_line: usize) -> Result<Record, ParseError> {
    records.next_record()?.ok_or_else(|| ParseError::format(last_line, format!("unexpected end of input, expected {what}")))
}

fn parse_header_line(rec: &Record) -> Result<String, ParseError> {
    if rec.fields.len() != 1 || rec.quoted {
        return Err(ParseError::format(rec.line, "malformed header line"));
    }
    let text = &rec.fields[0];
    let rest = text
        .strip_prefix(FORMAT_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| ParseError::format(rec.line, format!("expected `{FORMAT_MAGIC} <version>#<region>`")))?;
    let (version, region) =
        rest.split_once('#').ok_or_else(|| ParseError::format(rec.line, "header is missing `#<region>`"))?;
    if version != FORMAT_VERSION {
        return Err(ParseError::format(rec.line, format!("unsupported format version {version:?}")));
    }
    validate_region(region).map_err(invalid(rec.line))?;
    Ok(region.to_string())
}

fn parse_context(rec: &Record) -> Result<CyclistContext, ParseError> {
    let f = &rec.fields;
    let line = rec.line;
    Ok(CyclistContext {
        bike_type: BikeType::from_code(parse_code(line, "bike", &f[4])?).map_err(invalid(line))?,
        child_transport: parse_flag(line, "childCheckBox", &f[5])?,
        trailer: parse_flag(line, "trailerCheckBox", &f[6])?,
        phone_location: PhoneLocation::from_code(parse_code(line, "pLoc", &f[7])?).map_err(invalid(line))?,
    })
}

fn parse_incident(rec: &Record) -> Result<Incident, ParseError> {
    let f = &rec.fields;
    let line = rec.line;
    let key: u64 = parse_num(line, "key", &f[0])?;
    let lat = parse_f64(line, "lat", &f[1])?;
    let lon = parse_f64(line, "lon", &f[2])?;
    let location = GeoPoint::new(lat, lon).map_err(invalid(line))?;
    let timestamp = parse_num(line, "ts", &f[3])?;
    let code = &f[8];
    let incident_type = code
        .parse::<u8>()
        .ok()
        .and_then(IncidentType::from_code)
        .ok_or_else(|| ParseError::Invalid { line, source: ValidationError::UnknownIncidentType(code.clone()) })?;
    let scary = parse_flag(line, "scary", &f[9])?;
    let mut participants = Participants::empty();
    for (i, p) in Participant::ALL.iter().enumerate() {
        if parse_flag(line, "participant flag", &f[11 + i])? {
            participants.insert(*p);
        }
    }
    Ok(Incident {
        location,
        timestamp,
        incident_type,
        scary,
        participants,
        description: f[10].clone(),
        auto_detected: key >= AUTO_DETECTED_KEY_OFFSET,
    })
}

fn parse_sample(rec: &Record, index: usize) -> Result<RideSample, ParseError> {
    let f = &rec.fields;
    let line = rec.line;
    let location = match (f[0].is_empty(), f[1].is_empty()) {
        (true, true) => None,
        (false, false) => Some(
            GeoPoint::new(parse_f64(line, "lat", &f[0])?, parse_f64(line, "lon", &f[1])?).map_err(invalid(line))?,
        ),
        _ => return Err(ParseError::format(line, "lat and lon must both be present or both empty")),
    };
    let accel = [parse_f64(line, "X", &f[2])?, parse_f64(line, "Y", &f[3])?, parse_f64(line, "Z", &f[4])?];
    let timestamp = parse_num(line, "timeStamp", &f[5])?;
    let accuracy = parse_opt_f64(line, "acc", &f[6])?;
    let orientation = match (parse_opt_f64(line, "a", &f[7])?, parse_opt_f64(line, "b", &f[8])?, parse_opt_f64(line, "c", &f[9])?) {
        (None, None, None) => None,
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => return Err(ParseError::format(line, "orientation a,b,c must all be present or all empty")),
    };
    let sample = RideSample { timestamp, location, accuracy, accel, orientation };
    validate_sample(index, &sample).map_err(invalid(line))?;
    Ok(sample)
}

/// Parses a ride file. The ride id is derived from the content.
pub fn parse_ride(bytes: &[u8]) -> Result<Ride, ParseError> {
    let text = utf8(bytes)?;
    let mut records = Records::new(text);
    let header = records.next_record()?.ok_or_else(|| ParseError::format(1, "empty input"))?;
    let region = parse_header_line(&header)?;

    let inc_header = expect_record(&mut records, "incident header", header.line)?;
    if inc_header.quoted || inc_header.joined() != INCIDENT_HEADER {
        return Err(ParseError::format(inc_header.line, "malformed incident header"));
    }

    let mut incidents = Vec::new();
    let mut context: Option<CyclistContext> = None;
    let mut last_line = inc_header.line;
    loop {
        let rec = expect_record(&mut records, "separator line", last_line)?;
        last_line = rec.line;
        if rec.is_single(SEPARATOR) {
            break;
        }
        if rec.fields.len() != INCIDENT_FIELDS {
            return Err(ParseError::format(
                rec.line,
                format!("incident row has {} fields, expected {INCIDENT_FIELDS}", rec.fields.len()),
            ));
        }
        let row_context = parse_context(&rec)?;
        match context {
            Some(c) if c != row_context => {
                return Err(ParseError::format(rec.line, "cyclist context differs from earlier incident rows"))
            }
            _ => context = Some(row_context),
        }
        if rec.fields[0].is_empty() {
            if rec.fields.iter().enumerate().any(|(i, v)| !(4..=7).contains(&i) && !v.is_empty()) {
                return Err(ParseError::format(rec.line, "context-only row must leave incident fields empty"));
            }
            continue;
        }
        incidents.push(parse_incident(&rec)?);
    }

    let sample_header = expect_record(&mut records, "sample header", last_line)?;
    if sample_header.quoted || sample_header.joined() != SAMPLE_HEADER {
        return Err(ParseError::format(sample_header.line, "malformed sample header"));
    }
    let mut samples: Vec<RideSample> = Vec::new();
    while let Some(rec) = records.next_record()? {
        if rec.fields.len() == 1 && rec.fields[0].is_empty() && records.chars.peek().is_none() {
            break;
        }
        if rec.fields.len() != SAMPLE_FIELDS {
            return Err(ParseError::format(
                rec.line,
                format!("sample row has {} fields, expected {SAMPLE_FIELDS}", rec.fields.len()),
            ));
        }
        let sample = parse_sample(&rec, samples.len())?;
        if let Some(prev) = samples.last() {
            if sample.timestamp <= prev.timestamp {
                return Err(ParseError::Invalid {
                    line: rec.line,
                    source: ValidationError::NonMonotoneTimestamp {
                        index: samples.len(),
                        prev: prev.timestamp,
                        ts: sample.timestamp,
                    },
                });
            }
        }
        samples.push(sample);
    }

    let ride = Ride {
        ride_id: RideId::from_content(bytes),
        region,
        samples,
        incidents,
        context: context.unwrap_or_default(),
    };
    ride.validate()?;
    Ok(ride)
}

fn push_escaped(out: &mut String, field: &str) {
    if field.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}

fn push_context(out: &mut String, ctx: &CyclistContext) {
    let _ = write!(
        out,
        "{},{},{},{}",
        ctx.bike_type.code(),
        u8::from(ctx.child_transport),
        u8::from(ctx.trailer),
        ctx.phone_location.code()
    );
}

/// Writes a ride in canonical form.
pub fn serialize_ride(ride: &Ride) -> Result<Vec<u8>, ValidationError> {
    ride.validate()?;
    let mut out = String::with_capacity(64 * (ride.samples.len() + ride.incidents.len() + 4));
    let _ = writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}#{}", ride.region);
    out.push_str(INCIDENT_HEADER);
    out.push('\n');
    for (i, inc) in ride.incidents.iter().enumerate() {
        let key = if inc.auto_detected { AUTO_DETECTED_KEY_OFFSET + i as u64 } else { i as u64 };
        let _ = write!(out, "{key},{:.6},{:.6},{},", inc.location.lat, inc.location.lon, inc.timestamp);
        push_context(&mut out, &ride.context);
        let _ = write!(out, ",{},{},", inc.incident_type.code(), u8::from(inc.scary));
        push_escaped(&mut out, &inc.description);
        for p in Participant::ALL {
            let _ = write!(out, ",{}", u8::from(inc.participants.contains(p)));
        }
        out.push('\n');
    }
    if ride.incidents.is_empty() && ride.context != CyclistContext::default() {
        out.push_str(",,,,");
        push_context(&mut out, &ride.context);
        out.push_str(&",".repeat(INCIDENT_FIELDS - 8));
        out.push('\n');
    }
    out.push_str(SEPARATOR);
    out.push('\n');
    out.push_str(SAMPLE_HEADER);
    out.push('\n');
    for s in &ride.samples {
        if let Some(p) = s.location {
            let _ = write!(out, "{:.6},{:.6},", p.lat, p.lon);
        } else {
            out.push_str(",,");
        }
        let _ = write!(out, "{:.3},{:.3},{:.3},{},", s.accel[0], s.accel[1], s.accel[2], s.timestamp);
        if let Some(acc) = s.accuracy {
            let _ = write!(out, "{acc:.2}");
        }
        match s.orientation {
            Some([a, b, c]) => {
                let _ = write!(out, ",{a:.3},{b:.3},{c:.3}");
            }
            None => out.push_str(",,,"),
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

fn profile_header() -> String {
    let mut cols: Vec<String> = PROFILE_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((0..HOURS_PER_DAY).map(|h| format!("h{h}")));
    cols.join(",")
}

/// Parses a single-row profile file.
pub fn parse_profile(bytes: &[u8]) -> Result<Profile, ParseError> {
    let text = utf8(bytes)?;
    let mut records = Records::new(text);
    let header = records.next_record()?.ok_or_else(|| ParseError::format(1, "empty input"))?;
    let fixed = PROFILE_FIXED_COLUMNS.len();
    if header.quoted
        || header.fields.len() < fixed
        || header.fields[..fixed].iter().zip(PROFILE_FIXED_COLUMNS).any(|(a, b)| a != b)
    {
        return Err(ParseError::format(header.line, "malformed profile header"));
    }
    let hist_cols = &header.fields[fixed..];
    if hist_cols.iter().enumerate().any(|(h, c)| *c != format!("h{h}")) {
        return Err(ParseError::format(header.line, "histogram columns must be h0, h1, ..."));
    }
    if hist_cols.len() != HOURS_PER_DAY {
        return Err(ParseError::Invalid { line: header.line, source: ValidationError::HistogramLength(hist_cols.len()) });
    }
    let row = expect_record(&mut records, "profile row", header.line)?;
    if row.fields.len() != header.fields.len() {
        return Err(ParseError::format(
            row.line,
            format!("profile row has {} fields, expected {}", row.fields.len(), header.fields.len()),
        ));
    }
    while let Some(extra) = records.next_record()? {
        if !(extra.fields.len() == 1 && extra.fields[0].is_empty()) {
            return Err(ParseError::format(extra.line, "profile file must contain a single row"));
        }
    }
    let f = &row.fields;
    let line = row.line;
    let region = f[2].clone();
    validate_region(&region).map_err(invalid(line))?;
    let mut histogram = [0u64; HOURS_PER_DAY];
    for (h, slot) in histogram.iter_mut().enumerate() {
        *slot = parse_num(line, "histogram bin", &f[fixed + h])?;
    }
    let profile = Profile {
        age_group: parse_num(line, "birth", &f[0])?,
        gender: Gender::from_code(parse_code(line, "gender", &f[1])?).map_err(invalid(line))?,
        region,
        experience_years: parse_num(line, "experience", &f[3])?,
        ride_duration_total: parse_num(line, "rideDuration", &f[4])?,
        wait_duration_total: parse_num(line, "waitDuration", &f[5])?,
        incident_count_total: parse_num(line, "numIncidents", &f[6])?,
        ride_time_histogram: histogram,
    };
    profile.validate().map_err(invalid(line))?;
    Ok(profile)
}

pub fn serialize_profile(profile: &Profile) -> Result<Vec<u8>, ValidationError> {
    profile.validate()?;
    let mut out = profile_header();
    let _ = write!(
        out,
        "\n{},{},{},{},{},{},{}",
        profile.age_group,
        profile.gender.code(),
        profile.region,
        profile.experience_years,
        profile.ride_duration_total,
        profile.wait_duration_total,
        profile.incident_count_total
    );
    for v in profile.ride_time_histogram {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
    Ok(out.into_bytes())
}
