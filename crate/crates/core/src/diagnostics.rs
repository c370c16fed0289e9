//! Per-timestep diagnostics. (module under construction)
