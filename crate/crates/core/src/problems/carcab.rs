//! Car cab design: seven design variables of a car side-impact model and nine
//! minimized responses (weight, pubic force, mean V-pillar velocity, abdomen
//! load, three viscous criteria, two rib deflections).

pub const BOUNDS: [(f64, f64); 7] = [
    (0.5, 1.5),
    (0.45, 1.35),
    (0.5, 1.5),
    (0.5, 1.5),
    (0.875, 2.625),
    (0.4, 1.2),
    (0.4, 1.2),
];

pub const OBJECTIVE_NAMES: [&str; 9] = [
    "weight",
    "pubic_force",
    "v_pillar_velocity",
    "abdomen_load",
    "viscous_upper",
    "viscous_middle",
    "viscous_lower",
    "rib_deflection_upper",
    "rib_deflection_middle",
];

pub fn car_cab(x: &[f64]) -> Vec<f64> {
    let (x1, x2, x3, x4, x5, x6, x7) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
    let weight = 1.98 + 4.9 * x1 + 6.67 * x2 + 6.98 * x3 + 4.01 * x4 + 1.78 * x5
        + 0.00001 * x6
        + 2.73 * x7;
    let pubic_force = 4.72 - 0.5 * x4 - 0.19 * x2 * x3;
    let v_mbp = 10.58 - 0.674 * x1 * x2 - 0.67275 * x2;
    let v_fd = 16.45 - 0.489 * x3 * x7 - 0.843 * x5 * x6;
    let abdomen = 1.16 - 0.3717 * x2 * x4 - 0.0092928 * x3;
    let vc_upper = 0.261 - 0.0159 * x1 * x2 - 0.06486 * x1 - 0.019 * x2 * x7
        + 0.0144 * x3 * x5
        + 0.0154464 * x6;
    let vc_middle = 0.214 + 0.00817 * x5 - 0.045195 * x1 - 0.0135168 * x1
        + 0.03099 * x2 * x6
        - 0.018 * x2 * x7
        + 0.007176 * x3
        + 0.023232 * x3
        - 0.00364 * x5 * x6
        - 0.018 * x2 * x2;
    let vc_lower = 0.74 - 0.61 * x2 - 0.031296 * x3 - 0.031872 * x7 + 0.227 * x2 * x2;
    let rib_upper = 28.98 + 3.818 * x3 - 4.2 * x1 * x2 + 1.27296 * x6 - 2.68065 * x7;
    let rib_middle = 33.86 + 2.95 * x3 - 5.057 * x1 * x2 - 3.795 * x2 - 3.4431 * x7 + 1.45728;
    vec![
        weight,
        pubic_force,
        0.5 * (v_mbp + v_fd),
        abdomen,
        vc_upper,
        vc_middle,
        vc_lower,
        rib_upper,
        rib_middle,
    ]
}
