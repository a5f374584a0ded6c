#pragma once

// Umbrella header for the full randomized-smoothing pipeline.

#include "checkpoint.hpp"  // IWYU pragma: export
#include "config.hpp"      // IWYU pragma: export
#include "data.hpp"        // IWYU pragma: export
#include "eval.hpp"        // IWYU pragma: export
#include "gradcheck.hpp"   // IWYU pragma: export
#include "losses.hpp"      // IWYU pragma: export
#include "nn.hpp"          // IWYU pragma: export
#include "rng.hpp"         // IWYU pragma: export
#include "smoothing.hpp"   // IWYU pragma: export
#include "statcore.hpp"    // IWYU pragma: export
#include "train.hpp"       // IWYU pragma: export
