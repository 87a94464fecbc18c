//! One module per subcommand.

mod augment;
mod fuse;
mod gre_demo;
mod lr;
mod sample;
mod stats;
mod swa;

pub use augment::{augment, AugmentArgs, AugmentReport};
pub use fuse::{fuse, FuseReport};
pub use gre_demo::{gre_demo, GreDemoArgs, GreDemoReport, TensorStats};
pub use lr::{lr_schedule, LrReport};
pub use sample::{sample_anchors, sample_balance, AnchorReport, BalanceReport, TargetFile};
pub use stats::{stats, StatsReport};
pub use swa::{swa, SwaReport};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    DuckFill = 1,
    Photometric = 2,
    MixPartner = 3,
    MixLambda = 4,
    Batch = 5,
    Upstream = 6,
}

/// Seed for item `index` of `stream`, derived from the run seed.
///
/// Seeds depend only on `(seed, stream, index)`, so every item draws the
/// same randomness no matter which other items are processed.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}
