use gaborsplat::raster::Raster;
use gaborsplat::synth::{Patch, Preset, SynthRecipe, Texture, Trajectory};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn row_spectrum(img: &Raster, y: usize, channel: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..img.width).map(|x| Complex::new(img.get(x, y, channel), 0.0)).collect();
    let mean = buf.iter().map(|c| c.re).sum::<f64>() / buf.len() as f64;
    buf.iter_mut().for_each(|c| c.re -= mean);
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().take(img.width / 2 + 1).map(|c| c.norm()).collect()
}

fn peak(power: &[f64]) -> usize {
    (1..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap()
}

#[test]
fn full_frame_sinusoid_peaks_at_requested_bin() {
    let w = 64;
    for bin in [3usize, 8, 13, 20] {
        let recipe = SynthRecipe {
            width: w,
            height: 16,
            frames: 1,
            background: Texture::Sinusoid {
                base: [0.5; 3],
                amplitude: [0.3; 3],
                frequency: bin as f64 / w as f64,
                angle: 0.0,
                phase: 0.7,
            },
            background_depth: 5.0,
            patches: Vec::new(),
            supersample: 4,
            tracks_per_patch: 0,
            seed: 0,
        };
        let frame = &recipe.generate().unwrap()[0];
        let power = row_spectrum(&frame.rgb, 8, 0);
        assert_eq!(peak(&power), bin);
        let rest = power
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != bin)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(rest < 1e-9 * power[bin], "leakage {rest} vs peak {}", power[bin]);
    }
}

#[test]
fn high_frequency_preset_peaks_at_its_frequency() {
    let recipe = Preset::HighFrequency.recipe(64, 64, 2, 0);
    let freq = match &recipe.patches[0].texture {
        Texture::Sinusoid { frequency, .. } => *frequency,
        _ => unreachable!(),
    };
    let frame = &recipe.generate().unwrap()[0];
    for c in 0..3 {
        let power = row_spectrum(&frame.rgb, 32, c);
        assert_eq!(peak(&power), (freq * 64.0).round() as usize);
    }
}

#[test]
fn nearer_patch_occludes() {
    let patch = |cx: f64, depth: f64, v: f64| Patch {
        center: [cx, 8.0],
        radii: [5.0, 5.0],
        depth,
        texture: Texture::Solid { color: [v; 3] },
        trajectory: Trajectory::Static,
    };
    let recipe = SynthRecipe {
        width: 24,
        height: 16,
        frames: 1,
        background: Texture::Solid { color: [0.0; 3] },
        background_depth: 9.0,
        patches: vec![patch(10.0, 3.0, 0.2), patch(14.0, 1.0, 0.9)],
        supersample: 2,
        tracks_per_patch: 4,
        seed: 0,
    };
    let f = &recipe.generate().unwrap()[0];
    assert_eq!(f.depth.get(12, 8, 0), 1.0);
    assert!((f.rgb.get(12, 8, 0) - 0.9).abs() < 1e-12);
    assert_eq!(f.depth.get(6, 8, 0), 3.0);
}
