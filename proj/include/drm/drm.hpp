#pragma once

// Umbrella header.

#include "drm/errors.hpp"
#include "drm/units.hpp"
#include "drm/rng.hpp"
#include "drm/state.hpp"
#include "drm/noise.hpp"
#include "drm/numerics.hpp"
#include "drm/grid.hpp"
#include "drm/qmsl.hpp"
#include "drm/csl.hpp"
#include "drm/colored_noise.hpp"
#include "drm/analysis.hpp"
#include "drm/io.hpp"
