//! Closed form against frozen high-accuracy ODE solutions and against an
//! independent spectral solution of the Riccati equation.

use lindyn::exact::{
    build_context, build_f, limit_qqt, qqt_at, qqt_exact, qqt_exact_stable, singular_value_at,
    task_aligned_init, transition_gamma, transition_limit, Regime, TransitionParams,
};
use lindyn::init::{lambda_balanced_init, NetworkParams};
use lindyn::linalg::{self, Mat};
use lindyn::simulator::Qqt;
use lindyn::tasks::TaskSvd;
use lindyn::Error;
use nalgebra::SymmetricEigen;

struct Fixture {
    dims: (usize, usize, usize),
    lambda: f64,
    sigma_yx: &'static [f64],
    w1: &'static [f64],
    w2: &'static [f64],
    snapshots: &'static [(f64, &'static [f64])],
}

// Σʸˣ, a lambda-balanced start and QQᵀ(t) from an 8th-order Runge-Kutta
// integration of the Riccati equation (rtol 1e-13, atol 1e-14).
const FIXTURES: &[Fixture] = &[
    Fixture {
        dims: (3, 2, 2),
        lambda: 2.0,
        sigma_yx: &[0.0015991993647273466, 0.38836919876101084, -0.35637921197088285, -1.1577693903844566, -0.5910720207232393, -1.289140521495401],
        w1: &[0.26452619278897294, -0.18911199750640775, -0.15865464413391892, 0.3887347192485937, -0.209332692078599, -0.2557653466849837],
        w2: &[0.004256262781730531, 1.4985699442094884, -1.459757046430908, -0.12099129224459858],
        snapshots: &[
            (0.5, &[0.3758901924425988, 0.13652121588178545, 0.2809958701357375, 0.18403423834295293, -0.9781625336294771, 0.13652121588178545, 0.05344809608078455, 0.08042061361345591, 0.1546961111699309, -0.33305783552549867, 0.2809958701357375, 0.08042061361345591, 0.33118946853976755, -0.3543080381895716, -0.8555450714911152, 0.18403423834295293, 0.1546961111699309, -0.3543080381895716, 2.0875022579321865, 0.025932848121892234, -0.9781625336294771, -0.33305783552549867, -0.8555450714911152, 0.025932848121892234, 2.673025499130966]),
            (3.0, &[0.4350080471133314, 0.2272934464887169, 0.4793722474848886, 0.0024601058377664545, -1.1578869140096173, 0.2272934464887169, 0.18876359880472196, 0.1852939173748879, 0.38723183114196913, -0.590937009694301, 0.4793722474848886, 0.1852939173748879, 0.5889512001204381, -0.3566506937700795, -1.2890685732234526, 0.0024601058377664545, 0.38723183114196913, -0.3566506937700795, 2.1278806563406722, 0.07098933433628224, -1.1578869140096173, -0.590937009694301, -1.2890685732234526, 0.07098933433628224, 3.0848421896978198]),
        ],
    },
    Fixture {
        dims: (3, 2, 2),
        lambda: -2.0,
        sigma_yx: &[-2.394255549129252, -0.3056184703970857, -1.6476804258768143, 0.352643666468212, 0.2037764126114927, -0.2430102280189407],
        w1: &[0.5092229100171556, -1.5981588067838735, -0.5172917493888249, 2.118888370960641, 0.5870245579760771, 0.08205110042931205],
        w2: &[-0.6369855416279414, 1.272089899859031, -0.8217418801119386, -1.1058053309771787],
        snapshots: &[
            (0.5, &[2.674763616792309, -0.10262528555991081, 0.1817279746495645, -1.324456056497169, -0.30693050116544623, -0.10262528555991081, 2.0266536924625966, 0.11949338848547926, 0.13600183126485338, 0.24562557942462906, 0.1817279746495645, 0.11949338848547926, 0.020253913252210994, -0.08465977545043758, -0.00623246181398601, -1.324456056497169, 0.13600183126485338, -0.08465977545043758, 0.6594151212334591, 0.16183039485991618, -0.30693050116544623, 0.24562557942462906, -0.00623246181398601, 0.16183039485991618, 0.06225610127365391]),
            (3.0, &[2.8083407894158268, 0.1778135432922688, 1.8817155939801757, -2.413531244347557, 0.13204005464209104, 0.1778135432922688, 2.0398651785220268, 0.1375208283499534, -0.30639551860412745, 0.19486151515926467, 1.8817155939801757, 0.1375208283499534, 1.2610012098519023, -1.618566628430395, 0.09016238536419355, -2.413531244347557, -0.30639551860412745, -1.618566628430395, 2.0858529276826836, -0.1275967109425462, 0.13204005464209104, 0.19486151515926467, 0.09016238536419355, -0.1275967109425462, 0.02335425010662398]),
        ],
    },
    Fixture {
        dims: (2, 2, 3),
        lambda: 1.5,
        sigma_yx: &[0.14360338622432478, 0.08291630653158055, -1.5925725743430015, 0.09898229949011053, 1.766470448263999, -2.0112880815670273],
        w1: &[-0.20473392662671128, -0.19369029795355316, -0.7714782583941419, 1.4239571674285068],
        w2: &[-0.5615242090603421, -1.6972844724522755, -1.0460751296606479, 0.674106367502929, -0.4121277689963937, 0.8874901366833785],
        snapshots: &[
            (0.5, &[0.4795341636172839, -0.2633281560999643, 0.6314332465990653, -0.7563651708862024, 0.2186315637245969, -0.2633281560999643, 0.2120413887360464, -0.56879705446993, 0.2160949673102947, -0.24927540465439837, 0.6314332465990653, -0.56879705446993, 1.5626098228510037, -0.33988520450532983, 0.7133592066054115, -0.7563651708862024, 0.2160949673102947, -0.33988520450532983, 1.7816973978269615, 0.03693011917117498, 0.2186315637245969, -0.24927540465439837, 0.7133592066054115, 0.03693011917117498, 0.34726833167534366]),
            (3.0, &[1.5808018239961645, -0.8786483424313868, -0.007068130906535071, -1.5673998934374829, 1.7847598348178115, -0.8786483424313868, 1.1910269031152394, -0.1310536834505363, 0.13454884114502805, -1.985404213170483, -0.007068130906535071, -0.1310536834505363, 0.025962235796516898, 0.14852162833089977, 0.182854227038239, -1.5673998934374829, 0.13454884114502805, 0.14852162833089977, 2.3264046682418775, -0.728172688628508, 1.7847598348178115, -1.985404213170483, 0.182854227038239, -0.728172688628508, 3.4194618230728966]),
        ],
    },
    Fixture {
        dims: (2, 2, 3),
        lambda: -1.5,
        sigma_yx: &[0.26408019350649176, -0.6022998494999398, 0.16544893459358007, -1.543352886205182, -0.7530920754534752, -0.2550547646458457],
        w1: &[1.8761899429672853, 0.4419610961576424, 0.4258512015074375, 1.6447473522959664],
        w2: &[1.4852697316950167, 1.0139416041780744, -0.09660650077213591, -0.2495384438155707, -0.007701995041964257, 0.5442389981293289],
        snapshots: &[
            (0.5, &[1.9290592160059903, -0.051276247071165515, 0.7447317555311868, 0.0553159524176579, -0.5221347010819464, -0.051276247071165515, 2.103682621455133, -0.011790283650916479, -1.1223530204026477, 0.11300699070351598, 0.7447317555311868, -0.011790283650916479, 0.2875412988545547, 0.017087054520193955, -0.20119762479748374, 0.0553159524176579, -1.1223530204026477, 0.017087054520193955, 0.5992012856206307, -0.06782389288647987, -0.5221347010819464, 0.11300699070351598, -0.20119762479748374, -0.06782389288647987, 0.14599925298594382]),
            (3.0, &[1.8543516979286991, -0.07587891578201421, 0.26896692745399764, 0.16346119877572493, -0.7508578500681818, -0.07587891578201421, 2.584669444808253, -0.6010520601281033, -1.543792907759327, -0.254380542772126, 0.26896692745399764, -0.6010520601281033, 0.17387445396795925, 0.3750321901241828, -0.04374513372189583, 0.16346119877572493, -1.543792907759327, 0.3750321901241828, 0.9296251488638987, 0.10356795463742953, -0.7508578500681818, -0.254380542772126, -0.04374513372189583, 0.10356795463742953, 0.33552153990509387]),
        ],
    },
    Fixture {
        dims: (3, 3, 3),
        lambda: 0.0,
        sigma_yx: &[-0.5564324253447274, -0.39478450487414823, 0.45836578747084494, -0.15700157861239167, -0.25646949635543936, -1.4482872860963731, -0.014977908450112626, -0.576655589866745, 1.5159661090472896],
        w1: &[0.541572122770209, 0.894591665133924, 0.9790656096334825, -0.488650766376186, 1.5640618380383244, -0.2403730611457009, -0.20570359266487864, -0.162135163722325, -0.09014586186118842],
        w2: &[-1.3125225727520582, -0.3231656714519044, 0.1726577427468079, -0.2132314456514234, -1.6050892631051408, 0.013540893574679006, -0.5328986076709336, -0.24919995881228638, 0.21618048901780237],
        snapshots: &[
            (0.5, &[0.4619571337286982, 0.10392631307439225, 0.17518526713686164, -0.5035379575779233, 0.03407705444683716, 0.013536225927644942, 0.10392631307439225, 1.022184954808469, 0.33744679291040164, -0.49367826090905714, -0.9122162219924408, -0.30606606716719026, 0.17518526713686164, 0.33744679291040164, 0.23885578060697704, -0.33422310819282897, -0.2992548129514275, -0.018808792412774077, -0.5035379575779233, -0.49367826090905714, -0.33422310819282897, 0.7043461523992494, 0.32663158231360284, 0.07862628759962469, 0.03407705444683716, -0.9122162219924408, -0.2992548129514275, 0.32663158231360284, 0.8667265172005277, 0.2548530521639622, 0.013536225927644942, -0.30606606716719026, -0.01880879241277407, 0.07862628759962467, 0.2548530521639622, 0.15192519954436678]),
            (3.0, &[0.5321019091074494, 0.2185219186233507, -0.00034404106933442997, -0.5558779926386903, -0.14766046792018564, -0.008968415269812522, 0.2185219186233507, 0.6710873876385163, -0.23960843018117214, -0.39426072767264736, -0.261962379873292, -0.5757225900782076, -0.00034404106933442997, -0.23960843018117214, 2.1321936960440873, 0.456635860245427, -1.4501877712893165, 1.513968756206393, -0.5558779926386903, -0.39426072767264736, 0.456635860245427, 0.7020974183575284, -0.08073043531540741, 0.41653329386322224, -0.14766046792018564, -0.261962379873292, -1.4501877712893165, -0.08073043531540741, 1.2666703735592348, -0.7632176857315711, -0.008968415269812522, -0.5757225900782076, 1.513968756206393, 0.41653329386322224, -0.7632176857315711, 1.36661520087329]),
        ],
    },
    Fixture {
        dims: (2, 3, 3),
        lambda: 1.0,
        sigma_yx: &[0.33779083087667233, -1.1153434203295072, 1.2636867202921556, 0.2505696863865941, 0.11609843149976537, -0.7683368587131562],
        w1: &[-0.2656477499961011, -0.46605797473522126, -1.3677931056878423, 1.3829728384712963, -1.1044700675335912, -1.4167303826642195],
        w2: &[-1.0810768438820972, 0.4575760087874472, -1.3484343679311963, -0.10145489969647102, -2.138687313197849, -0.07104584092918267, -0.3297855725191598, 0.010612467444727349, 1.5503729716136772],
        snapshots: &[
            (0.5, &[1.09841921579278, -0.09229584342584912, 0.45961620515545826, 1.438894851692003, -0.17831730668122278, -0.09229584342584912, 0.5221877916247525, -0.05533021090128854, -0.2566277140246488, -0.8570106114958598, 0.45961620515545826, -0.05533021090128854, 1.101481826719278, 0.3196327611185015, -0.01905251757859862, 1.438894851692003, -0.2566277140246488, 0.3196327611185015, 2.0112789071712727, -0.012130152110885988, -0.17831730668122278, -0.8570106114958598, -0.01905251757859862, -0.012130152110885988, 1.5078462735269897]),
            (3.0, &[0.90421476987881, -0.05245327478521143, 0.3398795560442293, 1.2634007823021969, 0.1134496216074236, -0.05245327478521143, 0.9626984635146895, -1.109152604729996, 0.2489165322132416, -0.7746348821319102, 0.3398795560442293, -1.109152604729996, 1.6773815991607726, 0.06640453236919322, 0.45288036084004446, 1.2634007823021969, 0.2489165322132416, 0.06640453236919322, 1.8792791804559434, -0.0363367193411825, 0.1134496216074236, -0.7746348821319102, 0.45288036084004446, -0.0363367193411825, 1.3102524537767821]),
        ],
    },

];

fn fixture_parts(f: &Fixture) -> (TaskSvd, NetworkParams) {
    let (ni, nh, no) = f.dims;
    let svd = TaskSvd::from_matrix(&Mat::from_row_slice(no, ni, f.sigma_yx)).unwrap();
    let p = NetworkParams::new(
        Mat::from_row_slice(nh, ni, f.w1),
        Mat::from_row_slice(no, nh, f.w2),
    )
    .unwrap();
    (svd, p)
}

#[test]
fn closed_form_matches_frozen_ode_solutions() {
    for f in FIXTURES {
        let (svd, p) = fixture_parts(f);
        let ctx = build_context(&svd, &p, f.lambda, 1.0).unwrap();
        let n = f.dims.0 + f.dims.2;
        for &(t, m) in f.snapshots {
            let want = Mat::from_row_slice(n, n, m);
            let plain = qqt_exact(&ctx, t).unwrap();
            let err = linalg::max_abs_diff(&plain.m, &want);
            assert!(err < 1e-8, "{:?} λ={} t={t}: plain err {err:e}", f.dims, f.lambda);
            let auto = qqt_at(&ctx, t).unwrap();
            let err = linalg::max_abs_diff(&auto.m, &want);
            assert!(err < 1e-8, "{:?} λ={} t={t}: auto err {err:e}", f.dims, f.lambda);
        }
    }
}

#[test]
fn time_constant_rescales_time() {
    let f = &FIXTURES[0];
    let (svd, p) = fixture_parts(f);
    let ctx = build_context(&svd, &p, f.lambda, 2.5).unwrap();
    let (t, m) = f.snapshots[0];
    let got = qqt_at(&ctx, 2.5 * t).unwrap();
    assert!(linalg::max_abs_diff(&got.m, &Mat::from_row_slice(5, 5, m)) < 1e-8);
}

/// `M(t) = e^{Ft}Q0 [I + Q0ᵀ P diag((e^{2λt} − 1)/(2λ)) Pᵀ Q0]⁻¹ Q0ᵀ e^{Ft}`
/// with `F = P diag(λ) Pᵀ` from a numerical symmetric eigensolver.
fn spectral_oracle(svd: &TaskSvd, p: &NetworkParams, lambda: f64, t: f64) -> Mat {
    let (ni, no, nh) = (p.n_in(), p.n_out(), p.n_h());
    let eig = SymmetricEigen::new(build_f(svd, lambda));
    let vecs = eig.eigenvectors;
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut q0 = Mat::zeros(ni + no, nh);
    q0.rows_mut(0, ni).copy_from(&p.w1.transpose());
    q0.rows_mut(ni, no).copy_from(&p.w2);
    let expf = linalg::scale_cols(&vecs, &vals.iter().map(|l| (l * t).exp()).collect::<Vec<_>>())
        * vecs.transpose();
    let integ: Vec<f64> = vals
        .iter()
        .map(|l| if l.abs() < 1e-14 { t } else { (2.0 * l * t).exp_m1() / (2.0 * l) })
        .collect();
    let a = Mat::identity(nh, nh)
        + q0.transpose() * linalg::scale_cols(&vecs, &integ) * vecs.transpose() * &q0;
    let z = &expf * &q0;
    &z * a.lu().solve(&z.transpose()).unwrap()
}

#[test]
fn closed_form_matches_spectral_oracle() {
    let cases = [
        ((3, 2, 2), 2.0),
        ((3, 2, 2), -2.0),
        ((3, 2, 2), 0.0),
        ((2, 2, 3), 3.0),
        ((2, 2, 3), -3.0),
        ((4, 4, 4), 1.0),
        ((2, 4, 5), 0.5),
        ((5, 4, 2), -0.5),
        ((3, 3, 3), -7.0),
    ];
    for (k, &((ni, nh, no), lambda)) in cases.iter().enumerate() {
        let seed = 40 + k as u64;
        let sigma = linalg::randn(no, ni, &mut linalg::rng(seed));
        let svd = TaskSvd::from_matrix(&sigma).unwrap();
        let p = lambda_balanced_init(lambda, ni, nh, no, 0.8, seed).unwrap();
        let ctx = build_context(&svd, &p, lambda, 1.0).unwrap();
        // The oracle multiplies growing exponentials, so keep t moderate.
        for t in [0.0, 0.1, 0.7, 2.0] {
            let want = spectral_oracle(&svd, &p, lambda, t);
            let got = qqt_at(&ctx, t).unwrap();
            let err = linalg::max_abs_diff(&got.m, &want) / (1.0 + linalg::max_abs(&want));
            assert!(err < 1e-9, "dims {:?} λ={lambda} t={t}: {err:e}", (ni, nh, no));
        }
    }
}

#[test]
fn stable_and_plain_forms_agree() {
    for (dims, lambda) in [((3, 2, 2), 2.0), ((2, 2, 3), -1.0), ((3, 3, 3), 0.0)] {
        let (ni, nh, no) = dims;
        let sigma = linalg::randn(no, ni, &mut linalg::rng(3));
        let svd = TaskSvd::from_matrix(&sigma).unwrap();
        // Square zero-balanced starts need det W2W1(0) of the same sign as det Σʸˣ.
        let p = (5..)
            .map(|seed| lambda_balanced_init(lambda, ni, nh, no, 1.0, seed).unwrap())
            .find(|p| ni != no || sigma.determinant() * p.product().determinant() > 0.0)
            .unwrap();
        let ctx = build_context(&svd, &p, lambda, 1.0).unwrap();
        for t in [0.0, 0.3, 1.0, 3.0] {
            let a = qqt_exact(&ctx, t).unwrap();
            let b = qqt_exact_stable(&ctx, t).unwrap_or_else(|e| panic!("{dims:?} {e} {}", ctx.b));
            assert!(linalg::max_abs_diff(&a.m, &b.m) < 1e-9, "t={t}");
        }
    }
}

#[test]
fn stable_form_reaches_the_limit() {
    for (dims, lambda) in [((3, 2, 2), 2.0), ((3, 2, 2), -2.0), ((2, 2, 3), 4.0), ((4, 4, 4), 0.0)] {
        let (ni, nh, no) = dims;
        let sigma = linalg::randn(no, ni, &mut linalg::rng(8)) * 2.0;
        let svd = TaskSvd::from_matrix(&sigma).unwrap();
        let p = lambda_balanced_init(lambda, ni, nh, no, 1.0, 9).unwrap();
        let ctx = build_context(&svd, &p, lambda, 1.0).unwrap();
        let far = qqt_at(&ctx, 400.0).unwrap();
        assert!(far.m.iter().all(|v| v.is_finite()));
        let lim = limit_qqt(&svd, lambda);
        assert!(linalg::max_abs_diff(&far.m, &lim.m) < 1e-8, "{dims:?} λ={lambda}");
    }
}

#[test]
fn plain_form_refuses_ill_conditioned_times() {
    let sigma = linalg::randn(3, 3, &mut linalg::rng(1)) * 3.0;
    let svd = TaskSvd::from_matrix(&sigma).unwrap();
    let p = lambda_balanced_init(0.5, 3, 3, 3, 1.0, 2).unwrap();
    let ctx = build_context(&svd, &p, 0.5, 1.0).unwrap();
    assert!(matches!(qqt_exact(&ctx, 60.0), Err(Error::IllConditioned(_))));
    qqt_at(&ctx, 60.0).unwrap();
}

// For a square zero-balanced network B = R S^{1/2} (U0ᵀŨ + V0ᵀṼ), which is
// singular exactly when the orthogonal V0ᵀṼ ŨᵀU0 has eigenvalue −1, e.g. when
// det Σʸˣ and det W2W1(0) differ in sign. The stable form must refuse and
// the automatic path must fall back to the plain form.
#[test]
fn opposite_determinant_makes_b_singular() {
    let sigma = linalg::randn(3, 3, &mut linalg::rng(3));
    let svd = TaskSvd::from_matrix(&sigma).unwrap();
    let mut seen = 0;
    for seed in 0..12 {
        let p = lambda_balanced_init(0.0, 3, 3, 3, 1.0, seed).unwrap();
        let ctx = build_context(&svd, &p, 0.0, 1.0).unwrap();
        let opposite = sigma.determinant() * p.product().determinant() < 0.0;
        let stable = qqt_exact_stable(&ctx, 1.0);
        assert_eq!(opposite, matches!(stable, Err(Error::SingularB(_))), "seed {seed}");
        if opposite {
            seen += 1;
            let auto = qqt_at(&ctx, 1.0).unwrap();
            assert!(linalg::max_abs_diff(&auto.m, &qqt_exact(&ctx, 1.0).unwrap().m) < 1e-12);
        }
    }
    assert!(seen > 0);
}

#[test]
fn perp_term_split_form_equals_d_form() {
    for (ni, nh, no, lambda) in [(4, 2, 2, -1.0), (2, 2, 4, 1.0), (2, 3, 4, 1.0)] {
        let sigma = linalg::randn(no, ni, &mut linalg::rng(5));
        let svd = TaskSvd::from_matrix(&sigma).unwrap();
        let p = lambda_balanced_init(lambda, ni, nh, no, 1.0, 6).unwrap();
        let ctx = build_context(&svd, &p, lambda, 1.0).unwrap();
        let split = p.w2.transpose() * &svd.u_perp * svd.u_perp.transpose() * &p.w2
            + &p.w1 * &svd.v_perp * svd.v_perp.transpose() * p.w1.transpose();
        let d_form = &ctx.d * ctx.d.transpose();
        assert!(linalg::max_abs_diff(&split, &d_form) < 1e-12);
    }
}

#[test]
fn task_aligned_modes_follow_the_transition() {
    let sigma = Mat::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 0.5]);
    let svd = TaskSvd::from_matrix(&sigma).unwrap();
    let s0 = [0.02, 0.01, 0.005];
    for lambda in [-2.0, 0.0, 2.0, 16.0] {
        let p = task_aligned_init(&svd, &s0, lambda, &Mat::identity(3, 3)).unwrap();
        let ctx = build_context(&svd, &p, lambda, 1.0).unwrap();
        assert!(linalg::max_abs(&(&ctx.b - linalg::diag(ctx.b.diagonal().as_slice()))) < 1e-9);
        assert!(linalg::max_abs(&(&ctx.c - linalg::diag(ctx.c.diagonal().as_slice()))) < 1e-9);
        for t in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let got = linalg::singular_values(&qqt_at(&ctx, t).unwrap().w2w1());
            for i in 0..3 {
                let tp = TransitionParams { s0: s0[i], s_target: svd.s[i], lambda, tau: 1.0 };
                let want = singular_value_at(&tp, t);
                assert!((got[i] - want).abs() < 1e-9, "λ={lambda} t={t} mode {i}: {} vs {want}", got[i]);
            }
        }
    }
}

#[test]
fn transition_limits() {
    let tp = TransitionParams { s0: 0.01, s_target: 2.0, lambda: 0.0, tau: 1.0 };
    for t in [0.0, 0.5, 1.0, 3.0, 50.0] {
        let g = transition_gamma(&tp, t);
        let lim = transition_limit(&tp, t, Regime::Sigmoidal).unwrap();
        assert!((g - lim).abs() < 1e-12, "t={t}");
    }
    let far = TransitionParams { lambda: 1e4, ..tp };
    for t in [1e-4, 3e-4, 1e-3] {
        let g = transition_gamma(&far, t);
        let lim = transition_limit(&far, t, Regime::Exponential).unwrap();
        assert!((g - lim).abs() < 1e-3, "t={t}: {g} vs {lim}");
    }
    assert!((transition_gamma(&tp, 1e6) - 1.0).abs() < 1e-15);
    assert!(transition_gamma(&tp, 0.0).abs() < 1e-15);
    let zero = TransitionParams { s0: 0.0, ..tp };
    assert!(transition_limit(&zero, 1.0, Regime::Sigmoidal).is_err());
}

#[test]
fn riccati_residual_is_small() {
    for (k, &((ni, nh, no), lambda)) in
        [((3, 2, 2), 1.0), ((2, 2, 3), -2.0), ((3, 3, 3), 0.0), ((4, 3, 3), 2.5), ((2, 3, 3), 0.7)]
            .iter()
            .enumerate()
    {
        let seed = 90 + k as u64;
        let sigma = linalg::randn(no, ni, &mut linalg::rng(seed));
        let svd = TaskSvd::from_matrix(&sigma).unwrap();
        let p = lambda_balanced_init(lambda, ni, nh, no, 0.7, seed).unwrap();
        let tau = 1.7;
        let ctx = build_context(&svd, &p, lambda, tau).unwrap();
        let f = build_f(&svd, lambda);
        let dt = 1e-5 * tau;
        for j in 1..=10 {
            let t = 0.4 * j as f64;
            let m = qqt_at(&ctx, t).unwrap().m;
            let dm = (qqt_at(&ctx, t + dt).unwrap().m - qqt_at(&ctx, t - dt).unwrap().m) / (2.0 * dt);
            let resid = dm * tau - (&f * &m + &m * &f - &m * &m);
            assert!(linalg::max_abs(&resid) < 1e-5, "case {k} t={t}: {:e}", linalg::max_abs(&resid));
        }
    }
}

#[test]
fn qqt_blocks_are_consistent() {
    let p = lambda_balanced_init(1.0, 3, 2, 2, 1.0, 0).unwrap();
    let q = Qqt::from_params(&p);
    assert!(linalg::max_abs_diff(&q.w2w1(), &p.product()) < 1e-14);
    assert!(linalg::max_abs_diff(&q.w1w2t(), &p.product().transpose()) < 1e-14);
    let r = Qqt::from_blocks(&q.w1tw1(), &q.w2w1(), &q.w2w2t());
    assert_eq!(q, r);
}
