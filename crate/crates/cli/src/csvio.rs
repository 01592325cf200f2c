//! Track CSV files with header `flight_id,timestamp,lon,lat,alt`.
//!
//! Timestamps are integer Unix seconds, positions decimal degrees, altitude
//! feet. Rows of different flights may interleave; each flight's samples
//! keep file order and must have increasing timestamps.

use std::collections::HashMap;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use mabert_core::geo::{RawSample, RawTrack, Trajectory};
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 5] = ["flight_id", "timestamp", "lon", "lat", "alt"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    flight_id: String,
    timestamp: i64,
    lon: f64,
    lat: f64,
    alt: f64,
}

/// Tracks in order of first appearance; every track is validated.
pub fn read_tracks<R: Read>(input: R) -> Result<Vec<RawTrack>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        bail!("expected header {}, found {}", HEADER.join(","), header.join(","));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut tracks: Vec<RawTrack> = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("row {}", line + 2))?;
        let i = *index.entry(row.flight_id.clone()).or_insert_with(|| {
            tracks.push(RawTrack {
                flight_id: row.flight_id.clone(),
                samples: Vec::new(),
            });
            tracks.len() - 1
        });
        tracks[i].samples.push(RawSample {
            t: row.timestamp,
            lon: row.lon,
            lat: row.lat,
            alt: row.alt,
        });
    }
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

pub fn write_tracks<W: Write>(out: W, tracks: &[RawTrack]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in tracks {
        for s in &t.samples {
            w.serialize(Row {
                flight_id: t.flight_id.clone(),
                timestamp: s.t,
                lon: s.lon,
                lat: s.lat,
                alt: s.alt,
            })?;
        }
    }
    if tracks.is_empty() {
        w.write_record(HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Evenly sampled trajectories in the same schema.
pub fn write_trajectories<W: Write>(out: W, trajs: &[Trajectory]) -> Result<()> {
    let tracks: Vec<RawTrack> = trajs
        .iter()
        .map(|tr| RawTrack {
            flight_id: tr.flight_id.clone(),
            samples: tr
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| RawSample {
                    t: tr.time_at(i),
                    lon: p[0],
                    lat: p[1],
                    alt: p[2],
                })
                .collect(),
        })
        .collect();
    write_tracks(out, &tracks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tracks = vec![
            RawTrack {
                flight_id: "X1".into(),
                samples: vec![
                    RawSample { t: 10, lon: 1.5, lat: 2.25, alt: 3000.0 },
                    RawSample { t: 14, lon: 1.6, lat: 2.3, alt: 2900.5 },
                ],
            },
            RawTrack {
                flight_id: "X2".into(),
                samples: vec![
                    RawSample { t: 11, lon: -0.1, lat: 0.2, alt: 100.0 },
                    RawSample { t: 20, lon: -0.2, lat: 0.1, alt: 90.0 },
                ],
            },
        ];
        let mut buf = Vec::new();
        write_tracks(&mut buf, &tracks).unwrap();
        assert!(buf.starts_with(b"flight_id,timestamp,lon,lat,alt\n"));
        assert_eq!(read_tracks(&buf[..]).unwrap(), tracks);
    }

    #[test]
    fn interleaved_rows_group_by_flight() {
        let text = "flight_id,timestamp,lon,lat,alt\nA,1,0,0,0\nB,1,1,1,1\nA,2,0,0,0\nB,3,1,1,1\n";
        let tracks = read_tracks(text.as_bytes()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].samples.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_tracks("id,t,x,y,z\n".as_bytes()).is_err());
        assert!(read_tracks("flight_id,timestamp,lon,lat,alt\nA,x,0,0,0\n".as_bytes()).is_err());
        let backwards = "flight_id,timestamp,lon,lat,alt\nA,2,0,0,0\nA,1,0,0,0\n";
        assert!(read_tracks(backwards.as_bytes()).is_err());
    }
}
