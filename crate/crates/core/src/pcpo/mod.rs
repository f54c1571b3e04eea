//! Personalized and collaborative policy optimization: epochs of local
//! optimization, cost-based neighbourhood pruning, and neighbourhood-averaged
//! global updates.

mod run;
pub mod schedule;
pub mod server;
pub mod trace;

pub use run::{run_pcpo, run_with_rule, PcpoConfig};
pub use schedule::{make_schedule, EpochSchedule, Mode, PracticalSchedule, ProblemConstants, ScheduleConfig, TheoryConstants};
pub use server::{aggregate_gradients, reinitialize, update_neighborhood, Neighborhoods};
pub use trace::{check_invariants, comm_report, CommReport, EpochRecord, NeighborhoodRule, PcpoTrace};
