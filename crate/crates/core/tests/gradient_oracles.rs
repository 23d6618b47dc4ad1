mod oracles;

use oracles::Check;

fn assert_check(c: Check) {
    assert!(
        c.worst.error < c.tolerance,
        "{}: relative error {:e} at seed {} exceeds {:e}",
        c.name,
        c.worst.error,
        c.worst.seed,
        c.tolerance
    );
}

#[test]
fn every_objective_matches_finite_differences() {
    for check in oracles::all() {
        assert_check(check);
    }
}

#[test]
fn critic_penalty_term_is_exercised() {
    // the penalized critic cases must differ from the unpenalized ones
    let plain = oracles::critic(true, 0.0, 400);
    let penalized = oracles::critic(true, 10.0, 400);
    assert_ne!(plain.error.to_bits(), penalized.error.to_bits());
}
