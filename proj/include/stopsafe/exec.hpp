#pragma once

namespace stopsafe {

// Selects between the OpenMP kernel and its serial reference. Both produce
// identical results; parallel loops only write to per-index slots.
enum class Exec { Serial, Parallel };

/// Caps OpenMP parallelism (<= 0 leaves the runtime default).
void set_thread_count(int n);
int thread_count();

}  // namespace stopsafe
