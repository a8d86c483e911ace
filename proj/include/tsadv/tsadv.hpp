#pragma once

// Umbrella header.

#include "tsadv/attacks.hpp"
#include "tsadv/data.hpp"
#include "tsadv/error.hpp"
#include "tsadv/experiment.hpp"
#include "tsadv/loss.hpp"
#include "tsadv/metrics.hpp"
#include "tsadv/model.hpp"
#include "tsadv/ndarray.hpp"
#include "tsadv/regularizers.hpp"
#include "tsadv/rng.hpp"
#include "tsadv/tape.hpp"
#include "tsadv/version.hpp"
