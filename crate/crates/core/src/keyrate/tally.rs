use serde::{Deserialize, Serialize};

use super::{Basis, Intensity, KeyRateError, ProtocolParameters};

/// Fraction of all pulses that end up sifted into one given basis: the
/// sender picks it with probability 1/2 and the receiver's passive basis
/// choice agrees with probability 1/2.
pub const SIFTED_FRACTION_PER_BASIS: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyCell {
    /// Pulses whose preparation and measurement bases agreed.
    pub sent: u64,
    pub detections: u64,
    pub errors: u64,
}

impl TallyCell {
    pub fn new(sent: u64, detections: u64, errors: u64) -> Self {
        Self {
            sent,
            detections,
            errors,
        }
    }

    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.detections as f64 / self.sent as f64
        }
    }

    pub fn qber(&self) -> Option<f64> {
        (self.detections > 0).then(|| self.errors as f64 / self.detections as f64)
    }

    /// Erroneous detections per sifted pulse, i.e. `E * Q`.
    pub fn error_gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.errors as f64 / self.sent as f64
        }
    }

    fn add(&mut self, other: &TallyCell) {
        self.sent += other.sent;
        self.detections += other.detections;
        self.errors += other.errors;
    }
}

/// Sifted counts per (basis, intensity) for one accumulation window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionTally {
    /// Total pulses emitted in the window, sifted or not.
    pub n_sent: u64,
    cells: [[TallyCell; 3]; 2],
}

impl TransmissionTally {
    pub fn new(n_sent: u64) -> Self {
        Self {
            n_sent,
            cells: Default::default(),
        }
    }

    pub fn cell(&self, b: Basis, i: Intensity) -> &TallyCell {
        &self.cells[b.index()][i.index()]
    }

    pub fn cell_mut(&mut self, b: Basis, i: Intensity) -> &mut TallyCell {
        &mut self.cells[b.index()][i.index()]
    }

    pub fn with_cell(mut self, b: Basis, i: Intensity, cell: TallyCell) -> Self {
        *self.cell_mut(b, i) = cell;
        self
    }

    /// All sifted pulses in basis `b`, across intensities.
    pub fn sifted_pulses(&self, b: Basis) -> u64 {
        self.cells[b.index()].iter().map(|c| c.sent).sum()
    }

    pub fn sifted_detections(&self, b: Basis) -> u64 {
        self.cells[b.index()].iter().map(|c| c.detections).sum()
    }

    pub fn sifted_errors(&self, b: Basis) -> u64 {
        self.cells[b.index()].iter().map(|c| c.errors).sum()
    }

    pub fn total_sifted_detections(&self) -> u64 {
        self.sifted_detections(Basis::Z) + self.sifted_detections(Basis::X)
    }

    pub fn merge(&mut self, other: &TransmissionTally) {
        self.n_sent += other.n_sent;
        for b in 0..2 {
            for i in 0..3 {
                self.cells[b][i].add(&other.cells[b][i]);
            }
        }
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        let mut sifted = 0u64;
        for b in Basis::ALL {
            for i in Intensity::ALL {
                let c = self.cell(b, i);
                if c.errors > c.detections || c.detections > c.sent {
                    return Err(KeyRateError::InvalidTally(format!(
                        "{b:?}/{i:?}: need errors <= detections <= sent, got {}/{}/{}",
                        c.errors, c.detections, c.sent
                    )));
                }
                sifted += c.sent;
            }
        }
        if sifted > self.n_sent {
            return Err(KeyRateError::InvalidTally(format!(
                "sifted pulses {sifted} exceed pulses sent {}",
                self.n_sent
            )));
        }
        Ok(())
    }

    /// Expected (rounded) counts for `n_sent` pulses given per-intensity gains
    /// and QBERs, identical in both bases.
    pub fn from_observables(
        n_sent: u64,
        params: &ProtocolParameters,
        obs: &IntensityObservables,
    ) -> Self {
        Self::from_basis_observables(n_sent, params, obs, obs)
    }

    pub fn from_basis_observables(
        n_sent: u64,
        params: &ProtocolParameters,
        z: &IntensityObservables,
        x: &IntensityObservables,
    ) -> Self {
        let mut t = Self::new(n_sent);
        for (b, obs) in [(Basis::Z, z), (Basis::X, x)] {
            for i in Intensity::ALL {
                let sent =
                    (n_sent as f64 * params.probability(i) * SIFTED_FRACTION_PER_BASIS).round();
                let det = (sent * obs.gain[i.index()]).round().min(sent);
                let err = (det * obs.qber[i.index()]).round().min(det);
                *t.cell_mut(b, i) = TallyCell::new(sent as u64, det as u64, err as u64);
            }
        }
        t
    }
}

/// Per-intensity gain and QBER, indexed by [`Intensity::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityObservables {
    pub gain: [f64; 3],
    pub qber: [f64; 3],
}

impl IntensityObservables {
    pub fn gain(&self, i: Intensity) -> f64 {
        self.gain[i.index()]
    }

    pub fn qber(&self, i: Intensity) -> f64 {
        self.qber[i.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_inverted_counts() {
        let t = TransmissionTally::new(100).with_cell(
            Basis::Z,
            Intensity::Signal,
            TallyCell::new(10, 5, 6),
        );
        assert!(t.validate().is_err());
        let t = TransmissionTally::new(100).with_cell(
            Basis::Z,
            Intensity::Signal,
            TallyCell::new(10, 11, 0),
        );
        assert!(t.validate().is_err());
        let t = TransmissionTally::new(5).with_cell(
            Basis::Z,
            Intensity::Signal,
            TallyCell::new(10, 1, 0),
        );
        assert!(t.validate().is_err());
    }

    #[test]
    fn qber_undefined_without_detections() {
        let c = TallyCell::new(10, 0, 0);
        assert_eq!(c.qber(), None);
        assert_eq!(c.gain(), 0.0);
    }

    #[test]
    fn expected_counts_follow_ratios() {
        let p = ProtocolParameters::default();
        let obs = IntensityObservables {
            gain: [0.067, 0.022, 1e-6],
            qber: [0.01, 0.024, 0.5],
        };
        let t = TransmissionTally::from_observables(63_000_000, &p, &obs);
        t.validate().unwrap();
        assert_eq!(t.cell(Basis::Z, Intensity::Signal).sent, 11_812_500);
        assert_eq!(t.cell(Basis::X, Intensity::Decoy).sent, 1_968_750);
        assert_eq!(t.cell(Basis::Z, Intensity::Signal).detections, 791_438);
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = TransmissionTally::new(10).with_cell(
            Basis::X,
            Intensity::Decoy,
            TallyCell::new(4, 2, 1),
        );
        let b = TransmissionTally::new(6).with_cell(
            Basis::X,
            Intensity::Decoy,
            TallyCell::new(3, 1, 0),
        );
        a.merge(&b);
        assert_eq!(a.n_sent, 16);
        assert_eq!(*a.cell(Basis::X, Intensity::Decoy), TallyCell::new(7, 3, 1));
    }
}
