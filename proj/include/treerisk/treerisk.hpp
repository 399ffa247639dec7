#pragma once

/// Convenience umbrella: the whole library in one include.

#include "treerisk/calibration.hpp"
#include "treerisk/consistency.hpp"
#include "treerisk/errors.hpp"
#include "treerisk/ext_real.hpp"
#include "treerisk/json_io.hpp"
#include "treerisk/optional_measure.hpp"
#include "treerisk/polytope.hpp"
#include "treerisk/risk.hpp"
#include "treerisk/rng.hpp"
#include "treerisk/tree.hpp"
#include "treerisk/zoo.hpp"
