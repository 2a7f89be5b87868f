#pragma once

// Umbrella header for the geesub library.

#include "geesub/alias.hpp"
#include "geesub/benchmark.hpp"
#include "geesub/correlation.hpp"
#include "geesub/errors.hpp"
#include "geesub/family.hpp"
#include "geesub/gee.hpp"
#include "geesub/panel.hpp"
#include "geesub/rng.hpp"
#include "geesub/simulate.hpp"
#include "geesub/subsample.hpp"
