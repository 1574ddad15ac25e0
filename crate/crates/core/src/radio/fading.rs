//! Per-subband Rayleigh block fading from a sum of sinusoids.
//!
//! Each subband carries `M` unit phasors turning at Doppler shifts
//! `fd * cos(a_m)`, with arrival angles spread over a quarter circle and a
//! random common offset. The power gain `|sum z_m|^2 / M` has unit mean and a
//! Jakes-like autocorrelation. Phasors advance by complex rotation, so one step
//! costs a multiply per sinusoid; they are renormalized now and then to stop
//! rounding drift.

use std::f64::consts::PI;

use rand::{Rng, RngExt};

pub const SINUSOIDS: usize = 8;

const RENORMALIZE_EVERY: u32 = 1024;

#[derive(Debug, Clone, Copy)]
struct Phasor {
    re: f64,
    im: f64,
}

impl Phasor {
    fn from_angle(a: f64) -> Self {
        let (im, re) = a.sin_cos();
        Phasor { re, im }
    }

    fn mul(self, o: Phasor) -> Phasor {
        Phasor {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FadingProcess {
    subbands: usize,
    state: Vec<Phasor>,
    step: Vec<Phasor>,
    gains: Vec<f64>,
    since_renorm: u32,
}

impl FadingProcess {
    /// A fresh process for `subbands` subbands at Doppler `doppler_hz`, stepped every `dt_s`.
    pub fn new<R: Rng + ?Sized>(subbands: usize, doppler_hz: f64, dt_s: f64, rng: &mut R) -> Self {
        let mut state = Vec::with_capacity(subbands * SINUSOIDS);
        let mut step = Vec::with_capacity(subbands * SINUSOIDS);
        for _ in 0..subbands {
            let theta = rng.random::<f64>() * 2.0 * PI - PI;
            for m in 0..SINUSOIDS {
                let alpha = (2.0 * PI * (m + 1) as f64 - PI + theta) / (4.0 * SINUSOIDS as f64);
                let f = doppler_hz * alpha.cos();
                step.push(Phasor::from_angle(2.0 * PI * f * dt_s));
                state.push(Phasor::from_angle(rng.random::<f64>() * 2.0 * PI));
            }
        }
        let mut p = FadingProcess {
            subbands,
            state,
            step,
            gains: vec![0.0; subbands],
            since_renorm: 0,
        };
        p.refresh_gains();
        p
    }

    /// Moves every subband one step forward in time.
    pub fn advance(&mut self) {
        for (z, r) in self.state.iter_mut().zip(&self.step) {
            *z = z.mul(*r);
        }
        self.since_renorm += 1;
        if self.since_renorm >= RENORMALIZE_EVERY {
            for z in &mut self.state {
                let n = z.re.hypot(z.im);
                z.re /= n;
                z.im /= n;
            }
            self.since_renorm = 0;
        }
        self.refresh_gains();
    }

    fn refresh_gains(&mut self) {
        for (sb, g) in self.gains.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for z in &self.state[sb * SINUSOIDS..(sb + 1) * SINUSOIDS] {
                re += z.re;
                im += z.im;
            }
            *g = (re * re + im * im) / SINUSOIDS as f64;
        }
    }

    /// Current power gain of a subband.
    pub fn gain(&self, subband: usize) -> f64 {
        self.gains[subband]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn subbands(&self) -> usize {
        self.subbands
    }
}

/// Maximum Doppler shift for a UE speed and carrier.
pub fn doppler_hz(speed_kmh: f64, carrier_hz: f64) -> f64 {
    let v = speed_kmh / 3.6;
    v * carrier_hz / 299_792_458.0
}
