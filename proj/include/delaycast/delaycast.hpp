#pragma once

// Umbrella header pulling in the whole library.

#include "delaycast/csv.hpp"
#include "delaycast/date.hpp"
#include "delaycast/inference.hpp"
#include "delaycast/manifest.hpp"
#include "delaycast/model.hpp"
#include "delaycast/nowcast.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/selection.hpp"
#include "delaycast/simulator.hpp"
#include "delaycast/spatial.hpp"
#include "delaycast/triangle.hpp"
#include "delaycast/version.hpp"
