use cocoa_core::baselines::{rld_nonblind, RldConfig};
use cocoa_core::forward::{make_phantom, simulate_stack, Illumination, PhantomSpec};
use cocoa_core::metrics::pcc;
use cocoa_core::optics::{psf_3d, OpticalConfig, WavefrontAberration};

#[test]
fn noiseless_richardson_lucy_converges_towards_the_truth() {
    let optics = OpticalConfig { nx: 32, ny: 32, nz: 16, ..Default::default() };
    let s = make_phantom(&PhantomSpec { volume_fraction: 5e-3, seed: 9, ..Default::default() }, &optics).unwrap();
    let psf = psf_3d(&optics, &WavefrontAberration::from_pairs([(5, 0.1)])).unwrap();
    let g = simulate_stack(&s, &psf, &Illumination { photons_per_unit: 1000.0, background_photons: 0.0 }, None).unwrap().clean;
    let before = pcc(&g.values, &s.values).unwrap();
    let mut last = before;
    for iterations in [50, 500] {
        let r = rld_nonblind(&g, &psf, &RldConfig { iterations, ..Default::default() }).unwrap();
        let now = pcc(&r.values, &s.values).unwrap();
        assert!(now > last, "{iterations}: {now} after {last}");
        last = now;
    }
    assert!(last > 0.9, "{before} → {last}");
}
