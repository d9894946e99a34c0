#![allow(dead_code)]

use hybrid_aoi::SystemConfig;

pub fn config(snr_db: f64, d: (f64, f64), w: (f64, f64), m: u32) -> SystemConfig {
    SystemConfig {
        rho: 10f64.powf(snr_db / 10.0),
        d1: d.0,
        d2: d.1,
        w1: w.0,
        w2: w.1,
        m_trunc: m,
        ..SystemConfig::default()
    }
}

pub const DISTANCES: [(f64, f64); 2] = [(2.0, 4.0), (3.0, 6.0)];
pub const WEIGHTS: [(f64, f64); 2] = [(0.5, 0.5), (0.3, 0.7)];

/// Full-size configs used by the structural and dominance tests.
pub fn matrix(m: u32) -> Vec<SystemConfig> {
    let mut out = Vec::new();
    for snr in [8.0, 12.0, 15.0, 18.0, 22.0, 30.0] {
        for d in DISTANCES {
            for w in WEIGHTS {
                out.push(config(snr, d, w, m));
            }
        }
    }
    out
}

/// Instances small enough for exhaustive policy enumeration. Every `m = 2`
/// combination is included; `m = 3` (6^9 policies each) is sampled.
pub fn oracle_matrix() -> Vec<SystemConfig> {
    let mut out = Vec::new();
    for m in [2] {
        for snr in [5.0, 12.0, 18.0, 30.0] {
            for d in DISTANCES {
                for w in WEIGHTS {
                    out.push(config(snr, d, w, m));
                }
            }
        }
    }
    out.push(config(5.0, (2.0, 4.0), (0.5, 0.5), 3));
    out.push(config(18.0, (2.0, 4.0), (0.5, 0.5), 3));
    out.push(config(30.0, (2.0, 4.0), (0.5, 0.5), 3));
    out.push(config(18.0, (3.0, 6.0), (0.5, 0.5), 3));
    out.push(config(12.0, (2.0, 4.0), (0.3, 0.7), 3));
    out
}
