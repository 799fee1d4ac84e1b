//! Training samples drawn from tabulated BRDFs.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mulaw::MuLaw;
use crate::brdf::{node_angles, MerlBrdf, SpectralBrdfTable};
use crate::coords::RusinAngles;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Spectral,
    /// Grayscale RGB supervision; carries no wavelength.
    RgbGray,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub angles: RusinAngles,
    pub lambda: Option<f64>,
    /// μ-law compressed reflectance.
    pub target: f64,
}

impl Sample {
    pub fn domain(&self) -> Domain {
        match self.lambda {
            Some(_) => Domain::Spectral,
            None => Domain::RgbGray,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.samples.iter().filter(|s| s.domain() == domain).count()
    }

    pub fn concat(mut self, other: SampleBatch) -> SampleBatch {
        self.samples.extend(other.samples);
        self
    }
}

/// Distinct grid nodes drawn uniformly without replacement.
pub fn sample_spectral(table: &SpectralBrdfTable, count: usize, seed: u64, mu: MuLaw) -> Result<SampleBatch> {
    if count > table.len() {
        return Err(Error::Config(format!("{count} samples requested from a table of {} bins", table.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = table.dims();
    let samples = index::sample(&mut rng, table.len(), count)
        .into_iter()
        .map(|flat| {
            let [l, i, j, k] = table.unravel(flat);
            Sample {
                angles: node_angles(dims, i, j, k),
                lambda: Some(table.axis().node(l)),
                target: mu.compress(table.data()[flat] as f64),
            }
        })
        .collect();
    Ok(SampleBatch { samples })
}

/// Draws over the valid bins of an RGB table; targets are the μ-law of the
/// channel mean.
pub fn sample_rgb(table: &MerlBrdf, count: usize, seed: u64, mu: MuLaw) -> Result<SampleBatch> {
    let valid: Vec<usize> = (0..table.bins()).filter(|&b| table.is_valid(b)).collect();
    if count > valid.len() {
        return Err(Error::Config(format!("{count} samples requested from {} valid bins", valid.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = table.dims();
    let samples = index::sample(&mut rng, valid.len(), count)
        .into_iter()
        .map(|v| {
            let bin = valid[v];
            let (i, rest) = (bin / (dims[1] * dims[2]), bin % (dims[1] * dims[2]));
            let gray = (0..3).map(|c| table.reflectance(c, bin)).sum::<f64>() / 3.0;
            Sample { angles: node_angles(dims, i, rest / dims[2], rest % dims[2]), lambda: None, target: mu.compress(gray) }
        })
        .collect();
    Ok(SampleBatch { samples })
}
