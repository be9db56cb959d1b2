//! Fixtures shared by the benchmarks in `benches/`.

use nashgame::harness::reference_logits;
use nashgame::{generate_preference_matrix, GameSpec};

/// Seeded `n`-arm game with a standard-normal reference policy.
pub fn seeded_game(seed: u64, n: usize, beta: f64) -> GameSpec {
    GameSpec::new(
        generate_preference_matrix(seed, n).expect("valid size"),
        reference_logits(seed, n),
        beta,
    )
    .expect("valid game")
}
