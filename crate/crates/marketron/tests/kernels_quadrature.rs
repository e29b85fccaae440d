mod common;

use common::kernel_checks::*;
use marketron::kernels::AuxKind;
use marketron::OptionKind;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn draw(seed: u64) -> KernelDraw {
    KernelDraw::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn linear_kernel_matches_quadrature(seed in any::<u64>()) {
        let e = check_linear(&draw(seed));
        prop_assert!(e < 1e-6, "relative error {e:e}");
    }

    #[test]
    fn source_kernel_matches_quadrature(seed in any::<u64>()) {
        let e = check_source(&draw(seed));
        prop_assert!(e < 1e-6, "relative error {e:e}");
    }

    #[test]
    fn quadratic_kernel_matches_quadrature(seed in any::<u64>()) {
        let e = check_quadratic(&draw(seed));
        prop_assert!(e < 1e-6, "relative error {e:e}");
    }

    #[test]
    fn aux_integrals_match_quadrature(seed in any::<u64>()) {
        let d = draw(seed);
        for kind in [AuxKind::If1, AuxKind::If2, AuxKind::Iv1, AuxKind::Iv2] {
            let e = check_aux(&d, kind);
            prop_assert!(e < 1e-7, "{kind:?}: relative error {e:e}");
        }
    }

    #[test]
    fn erf_gauss_matches_quadrature(alpha in 0.2f64..4.0, beta in -2.0f64..2.0, b in -2.0f64..2.0) {
        let e = check_erf_gauss(alpha, beta, b);
        prop_assert!(e < 1e-9, "relative error {e:e}");
    }

    #[test]
    fn terminal_convolution_matches_quadrature(tau in 0.01f64..1.0, x in -0.4f64..0.4, strike in 800.0f64..1200.0, put in any::<bool>()) {
        let kind = if put { OptionKind::Put } else { OptionKind::Call };
        let e = check_terminal(tau, x, strike, kind, 0.37);
        prop_assert!(e < 1e-8, "relative error {e:e}");
    }
}

#[test]
fn erf_gauss_reference_points() {
    assert!(check_erf_gauss(1.0, 0.0, 1.0) < 1e-10);
    assert!(check_erf_gauss(2.0, 0.5, -0.3) < 1e-10);
}

#[test]
fn terminal_convolution_reference_point() {
    assert!(check_terminal(0.25, 0.0, 1000.0, OptionKind::Call, 0.37) < 1e-8);
}
