#pragma once

#include "stfm/errors.hpp"
#include "stfm/random.hpp"
#include "stfm/kernel.hpp"
#include "stfm/domain.hpp"
#include "stfm/store.hpp"
#include "stfm/sampler.hpp"
#include "stfm/selection.hpp"
#include "stfm/forecast.hpp"
#include "stfm/diagnostics.hpp"
#include "stfm/simulate.hpp"
#include "stfm/io.hpp"
