use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = ["t", "qd1", "qd2", "q1", "q2", "tau1", "tau2", "lambda"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: Option<u64>,
    pub world_hash: String,
    pub params_hash: String,
}

/// Time-aligned record of one playback.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub q_desired: Vec<[f64; 2]>,
    pub q_actual: Vec<[f64; 2]>,
    pub torque: Vec<[f64; 2]>,
    pub door_angle: Vec<f64>,
    pub failed: bool,
    pub meta: TrajectoryMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dt: f64,
    failed: bool,
    seed: Option<u64>,
    world_hash: String,
    params_hash: String,
}

impl Trajectory {
    pub fn with_capacity(dt: f64, n: usize) -> Self {
        Trajectory {
            dt,
            q_desired: Vec::with_capacity(n),
            q_actual: Vec::with_capacity(n),
            torque: Vec::with_capacity(n),
            door_angle: Vec::with_capacity(n),
            failed: false,
            meta: TrajectoryMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.torque.len()
    }

    pub fn is_empty(&self) -> bool {
        self.torque.is_empty()
    }

    pub fn final_door_angle(&self) -> f64 {
        self.door_angle.last().copied().unwrap_or(0.0)
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let sidecar = Sidecar {
            dt: self.dt,
            failed: self.failed,
            seed: self.meta.seed,
            world_hash: self.meta.world_hash.clone(),
            params_hash: self.meta.params_hash.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        let side = csv_path.with_extension("json");
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let side = csv_path.with_extension("json");
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", side.display())))?;
        let body = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut traj = Self::from_csv(&body, sidecar.dt)?;
        traj.failed = sidecar.failed;
        traj.meta = TrajectoryMeta {
            seed: sidecar.seed,
            world_hash: sidecar.world_hash,
            params_hash: sidecar.params_hash,
        };
        Ok(traj)
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let qd = self.q_desired[i];
            let q = self.q_actual[i];
            let tau = self.torque[i];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                i as f64 * self.dt,
                qd[0],
                qd[1],
                q[0],
                q[1],
                tau[0],
                tau[1],
                self.door_angle[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str, dt: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
        }
        let mut traj = Trajectory::with_capacity(dt, 0);
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let v: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            traj.q_desired.push([v[1], v[2]]);
            traj.q_actual.push([v[3], v[4]]);
            traj.torque.push([v[5], v[6]]);
            traj.door_angle.push(v[7]);
        }
        Ok(traj)
    }
}
