//! Solution engines. (module under construction)
