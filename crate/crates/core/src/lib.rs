pub mod clock;
pub mod daemon;
pub mod event_heap;
pub mod flightops;
pub mod interaction_container;
pub mod interaction_core;
pub mod profile_store;
pub mod runtime;
pub mod scenario;
pub mod service_bus;
pub mod task_engine;

/// The guide's code blocks, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/event-heap.md")]
    mod event_heap {}
    #[doc = include_str!("../../../book/src/service-bus.md")]
    mod service_bus {}
    #[doc = include_str!("../../../book/src/task-models.md")]
    mod task_models {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/interaction-kernel.md")]
    mod interaction_kernel {}
    #[doc = include_str!("../../../book/src/containers.md")]
    mod containers {}
    #[doc = include_str!("../../../book/src/flight-operations.md")]
    mod flight_operations {}
    #[doc = include_str!("../../../book/src/running-hicd.md")]
    mod running_hicd {}
}
