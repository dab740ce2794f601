#pragma once

#include "dyncov/data.hpp"
#include "dyncov/estimation.hpp"
#include "dyncov/io.hpp"
#include "dyncov/kernels.hpp"
#include "dyncov/metrics.hpp"
#include "dyncov/projections.hpp"
#include "dyncov/simulation.hpp"
#include "dyncov/tuning.hpp"
#include "dyncov/types.hpp"
